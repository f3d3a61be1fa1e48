#pragma once

// Federated training: SCAFFOLD local training with drift correction and
// multiview pseudo-labeling, FedAvg and a centralized baseline.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedser/augment.hpp"
#include "fedser/client.hpp"
#include "fedser/data.hpp"
#include "fedser/nn.hpp"
#include "fedser/pseudolabel.hpp"
#include "fedser/rng.hpp"

namespace fedser {

enum class Algorithm { scaffold, fedavg, centralized };
enum class TrainMode { semi, supervised_only, fully_supervised };

std::string to_string(Algorithm a);
std::string to_string(TrainMode m);
Algorithm parse_algorithm(const std::string& s);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  std::vector<std::size_t> hidden{256, 128};
  double dropout = 0.2;
  double lr = 1e-4;
  int local_epochs = 1;
  std::size_t batch_size = 16;
  int rounds = 500;
  double participation = 0.1;
  std::uint64_t seed = 0;
  double label_rate = 0.2;
  Algorithm algorithm = Algorithm::scaffold;
  TrainMode mode = TrainMode::semi;
  PlConfig pl;
  AugmentConfig sfa;

  void validate() const;
};

struct ClientState {
  int client_id = 0;
  ClientPools pools;
  ControlVariate c_k;
  Rng rng;
};

// Everything a client sends back to the server. Deliberately holds no
// feature records.
struct ClientUpdate {
  int client_id = 0;
  ModelParams theta;
  ControlVariate c_k_new;
  ControlVariate delta_c;
  std::vector<double> epoch_losses;
  std::vector<PseudoLabelReport> pl_reports;  // one per local epoch in semi mode
};

// Called after every local epoch; used by tests to audit pool invariants.
class TrainingObserver {
 public:
  virtual ~TrainingObserver() = default;
  virtual void on_local_epoch(const ClientState& client, int round, int epoch, const PseudoLabelReport* report) = 0;
};

// Runs E local epochs on one client starting from theta_in. Updates the
// client's pools, rng and (SCAFFOLD) c_k in place. Empty when D^l is empty.
std::optional<ClientUpdate> client_local_training(const ModelParams& theta_in, const ControlVariate& c,
                                                  ClientState& client, const TrainConfig& cfg, int round,
                                                  std::size_t class_count, TrainingObserver* observer = nullptr);

struct ServerState {
  ModelParams theta;
  ControlVariate c;
  int round = 0;
  Rng rng;
};

// Mean of returned models and (SCAFFOLD) c + mean of delta_c, reduced in
// client id order.
ServerState aggregate(const ServerState& state, std::vector<ClientUpdate> updates, Algorithm algorithm);

struct RoundResult {
  ServerState next;
  std::vector<int> sampled;
  std::vector<ClientUpdate> updates;  // sorted by client id
};

RoundResult server_round(const ServerState& state, std::vector<ClientState>& clients, const TrainConfig& cfg,
                         std::size_t class_count, TrainingObserver* observer = nullptr);

struct ClientAdmissions {
  int client_id = 0;
  std::vector<std::size_t> counts;  // per class, summed over local epochs
};

struct RoundReport {
  int round = 0;
  double tau = 0.0;
  std::vector<int> participants;
  std::vector<ClientAdmissions> admissions;
  std::optional<double> val_uar;
  double test_uar = 0.0;
  std::vector<std::optional<double>> per_class_recall;
  std::optional<double> pl_accuracy;
  double train_loss = 0.0;
  std::int64_t wall_ms = 0;
};

struct RunHistory {
  std::vector<RoundReport> rounds;
  ModelParams initial_model;
  ModelParams final_model;
  ModelParams best_model;
  int best_round = -1;  // -1: the initial model
  std::optional<double> best_val_uar;
  double initial_test_uar = 0.0;
  double final_test_uar = 0.0;
  double best_test_uar = 0.0;
  std::vector<double> epoch_losses;  // every local epoch, in execution order
};

// Per-round callback, e.g. for streaming the JSON-lines log.
using RoundCallback = std::function<void(const RoundReport&)>;

struct RunOptions {
  TrainingObserver* observer = nullptr;
  RoundCallback on_round;
  // Reported after each round for inspection by tests.
  std::function<void(const ServerState&, const std::vector<ClientState>&)> on_server_state;
};

// Builds client states from the dataset (masking labels per cfg.mode) and
// runs cfg.rounds rounds of cfg.algorithm.
RunHistory run_training(const TrainConfig& cfg, const PartitionedDataset& data, const RunOptions& options = {});

// Pools every client's labeled training data and runs plain mini-batch SGD
// for max(1, round(rounds * local_epochs * participation)) epochs.
RunHistory centralized_train(const TrainConfig& cfg, const PartitionedDataset& data,
                             const RunOptions& options = {});

// Client states as run_training builds them, together with the sealed
// labels of each client.
struct PreparedClients {
  std::vector<ClientState> clients;
  std::vector<SealedLabels> sealed;
};
PreparedClients prepare_clients(const TrainConfig& cfg, const PartitionedDataset& data,
                                const ModelParams& model_shape);

}  // namespace fedser
