#include "fedser/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "fedser/errors.hpp"
#include "fedser/metrics.hpp"

namespace fedser {

namespace {

constexpr std::uint64_t kServerStream = 0xFFFF'FFFF'0000'0001ULL;
constexpr std::uint64_t kMaskSalt = 0x6d61'736b;

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::scaffold:
      return "scaffold";
    case Algorithm::fedavg:
      return "fedavg";
    case Algorithm::centralized:
      return "centralized";
  }
  return "?";
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::semi:
      return "semi";
    case TrainMode::supervised_only:
      return "supervised_only";
    case TrainMode::fully_supervised:
      return "fully_supervised";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "scaffold") return Algorithm::scaffold;
  if (s == "fedavg") return Algorithm::fedavg;
  if (s == "centralized") return Algorithm::centralized;
  throw ConfigError("unknown algorithm '" + s + "'");
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "semi") return TrainMode::semi;
  if (s == "supervised_only") return TrainMode::supervised_only;
  if (s == "fully_supervised") return TrainMode::fully_supervised;
  throw ConfigError("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (local_epochs < 1) throw ConfigError("train.local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (rounds < 0) throw ConfigError("train.rounds must be >= 0");
  if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("train.participation must be in (0, 1]");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
  if (!(label_rate > 0.0 && label_rate <= 1.0)) throw ConfigError("label_rate must be in (0, 1]");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("hidden layer sizes must be positive");
  }
  pl.validate();
  for (const auto* s : {&sfa.weak, &sfa.strong}) {
    if (!(s->sigma1 >= 0.0 && s->sigma2 >= 0.0)) throw ConfigError("SFA sigmas must be non-negative");
  }
}

namespace {

void add_into(ModelParams& acc, const ModelParams& g) {
  auto a = acc.values();
  auto b = g.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// theta - lr * (c - c_k), evaluated in that order so equal variates leave
// theta bit-identical.
void apply_drift_correction(ModelParams& theta, const ControlVariate& c, const ControlVariate& c_k, double lr) {
  auto t = theta.values();
  auto cv = c.values();
  auto ck = c_k.values();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * (cv[i] - ck[i]);
}

struct Batch {
  Matrix x;
  std::vector<int> y;
};

}  // namespace

std::optional<ClientUpdate> client_local_training(const ModelParams& theta_in, const ControlVariate& c,
                                                  ClientState& client, const TrainConfig& cfg, int round,
                                                  std::size_t class_count, TrainingObserver* observer) {
  auto& pools = client.pools;
  if (pools.labeled().empty()) {
    spdlog::warn("client {} has no labeled samples; skipped", client.client_id);
    return std::nullopt;
  }
  const bool scaffold = cfg.algorithm == Algorithm::scaffold;
  if (scaffold && (!c.same_shape(theta_in) || !client.c_k.same_shape(theta_in))) {
    throw ShapeError("control variates do not match the model shape");
  }
  TrainingScope guard;

  const std::size_t dim = theta_in.input_dim();
  const std::size_t n_l = pools.labeled().size();
  const std::size_t bs = cfg.batch_size;
  const std::size_t iters = (n_l + bs - 1) / bs;
  const bool semi = cfg.mode == TrainMode::semi;

  ClientUpdate update;
  update.client_id = client.client_id;
  ModelParams theta = theta_in;

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::vector<std::size_t> order(n_l);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), client.rng.engine());

    double loss_sum = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      const std::size_t begin = it * bs;
      const std::size_t end = std::min(n_l, begin + bs);
      Batch lab{Matrix(end - begin, dim), {}};
      for (std::size_t j = begin; j < end; ++j) {
        const auto& ref = pools.labeled()[order[j]];
        const auto view = weak_view(pools.sample(ref.sample_id).features, cfg.sfa, client.rng);
        std::copy(view.begin(), view.end(), lab.x.row(j - begin).begin());
        lab.y.push_back(ref.label);
      }
      auto fwd = forward(theta, lab.x, Mode::train, cfg.dropout, client.rng);
      auto loss = softmax_ce_loss(fwd.logits, lab.y);
      Gradients grads = backward(theta, fwd.cache, loss.dlogits);
      double step_loss = loss.loss;

      const auto& pseudo = pools.pseudo();
      if (semi && !pseudo.empty()) {
        std::vector<std::size_t> pick;
        if (pseudo.size() >= bs) {
          std::vector<std::size_t> all(pseudo.size());
          std::iota(all.begin(), all.end(), 0);
          for (std::size_t j = 0; j < bs; ++j) {
            const std::size_t k = j + client.rng.index(all.size() - j);
            std::swap(all[j], all[k]);
          }
          pick.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(bs));
        } else {
          for (std::size_t j = 0; j < bs; ++j) pick.push_back(client.rng.index(pseudo.size()));
        }
        Batch pl{Matrix(pick.size(), dim), {}};
        for (std::size_t j = 0; j < pick.size(); ++j) {
          const auto& ref = pseudo[pick[j]];
          const auto view = strong_view(pools.sample(ref.sample_id).features, cfg.sfa, client.rng);
          std::copy(view.begin(), view.end(), pl.x.row(j).begin());
          pl.y.push_back(ref.label);
        }
        auto pfwd = forward(theta, pl.x, Mode::train, cfg.dropout, client.rng);
        auto ploss = softmax_ce_loss(pfwd.logits, pl.y);
        add_into(grads, backward(theta, pfwd.cache, ploss.dlogits));
        step_loss += ploss.loss;
      }

      theta = sgd_step(theta, grads, cfg.lr);
      if (scaffold) apply_drift_correction(theta, c, client.c_k, cfg.lr);
      loss_sum += step_loss;
    }
    if (!theta.all_finite()) throw NumericError("local model diverged on client " + std::to_string(client.client_id));
    update.epoch_losses.push_back(loss_sum / static_cast<double>(iters));

    const PseudoLabelReport* report = nullptr;
    if (semi) {
      const double tau = tau_schedule(round, cfg.pl);
      const auto proposals = propose_all(theta, pools, cfg.pl, cfg.sfa, client.rng);
      update.pl_reports.push_back(select_and_move(pools, proposals, tau, cfg.pl, class_count));
      report = &update.pl_reports.back();
    }
    if (observer) observer->on_local_epoch(client, round, epoch, report);
  }

  if (scaffold) {
    ControlVariate c_new = client.c_k;
    ControlVariate delta(theta.layer_sizes());
    const double inv = 1.0 / (static_cast<double>(cfg.local_epochs) * static_cast<double>(iters) * cfg.lr);
    auto cn = c_new.values();
    auto d = delta.values();
    auto cv = c.values();
    auto ck = client.c_k.values();
    auto old = theta_in.values();
    auto now = theta.values();
    for (std::size_t i = 0; i < cn.size(); ++i) {
      cn[i] = ck[i] - cv[i] + (old[i] - now[i]) * inv;
      d[i] = cn[i] - ck[i];
    }
    client.c_k = c_new;
    update.c_k_new = std::move(c_new);
    update.delta_c = std::move(delta);
  } else {
    update.c_k_new = client.c_k;
    update.delta_c = ControlVariate(theta.layer_sizes());
  }
  update.theta = std::move(theta);
  return update;
}

ServerState aggregate(const ServerState& state, std::vector<ClientUpdate> updates, Algorithm algorithm) {
  if (updates.empty()) throw Error("aggregation with no client updates");
  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  const double w = 1.0 / static_cast<double>(updates.size());

  ServerState next;
  next.round = state.round + 1;
  next.rng = state.rng;

  std::vector<ParamTerm> thetas;
  for (const auto& u : updates) thetas.emplace_back(w, std::cref(u.theta));
  next.theta = param_combine(thetas);

  if (algorithm == Algorithm::scaffold) {
    std::vector<ParamTerm> cs{{1.0, std::cref(state.c)}};
    for (const auto& u : updates) cs.emplace_back(w, std::cref(u.delta_c));
    next.c = param_combine(cs);
  } else {
    next.c = state.c;
  }
  return next;
}

RoundResult server_round(const ServerState& state, std::vector<ClientState>& clients, const TrainConfig& cfg,
                         std::size_t class_count, TrainingObserver* observer) {
  if (clients.empty()) throw Error("server round with no clients");
  const std::size_t k = clients.size();
  const auto target = static_cast<std::size_t>(std::llround(cfg.participation * static_cast<double>(k)));
  const std::size_t s = std::clamp<std::size_t>(target, 1, k);

  ServerState sampler = state;
  RoundResult result;
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), sampler.rng.engine());
    idx.resize(s);
    std::sort(idx.begin(), idx.end());

    result.sampled.clear();
    for (std::size_t i : idx) {
      result.sampled.push_back(clients[i].client_id);
      auto update = client_local_training(state.theta, state.c, clients[i], cfg, state.round, class_count, observer);
      if (update) result.updates.push_back(std::move(*update));
    }
    if (!result.updates.empty()) break;
    if (attempt == 0) {
      spdlog::warn("round {}: every sampled client was skipped; resampling once", state.round);
    } else {
      throw Error("round " + std::to_string(state.round) + ": no sampled client could train after resampling");
    }
  }
  result.next = aggregate(sampler, result.updates, cfg.algorithm);
  std::sort(result.updates.begin(), result.updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  return result;
}

PreparedClients prepare_clients(const TrainConfig& cfg, const PartitionedDataset& data,
                                const ModelParams& model_shape) {
  PreparedClients out;
  for (const auto& cd : data.clients) {
    std::vector<LocalSample> samples;
    std::vector<PooledLabel> labeled;
    std::vector<std::size_t> unlabeled;
    SealedLabels sealed;

    std::set<std::string> keep;
    if (cfg.mode == TrainMode::fully_supervised) {
      for (const auto& r : cd.train) keep.insert(r.utterance_id);
    } else if (!cd.train.empty()) {
      const std::uint64_t mask_seed = cfg.seed * 1000003ULL + kMaskSalt + static_cast<std::uint64_t>(cd.client_id);
      auto mask = mask_labels(cd.train, cfg.label_rate, mask_seed);
      for (const auto& r : mask.labeled) keep.insert(r.utterance_id);
      sealed = std::move(mask.sealed);
    }
    for (const auto& r : cd.train) {
      if (!r.label) throw LabelError("training record " + r.utterance_id + " has no label");
      const std::size_t id = samples.size();
      samples.push_back({r.utterance_id, r.features});
      if (keep.count(r.utterance_id)) {
        labeled.push_back({id, *r.label});
      } else {
        unlabeled.push_back(id);
      }
    }

    ClientState state;
    state.client_id = cd.client_id;
    state.pools = ClientPools(std::move(samples), std::move(labeled), std::move(unlabeled));
    state.c_k = ControlVariate(model_shape.layer_sizes());
    state.rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(cd.client_id));
    out.clients.push_back(std::move(state));
    out.sealed.push_back(std::move(sealed));
  }
  return out;
}

namespace {

std::vector<std::size_t> model_sizes(const TrainConfig& cfg, const PartitionedDataset& data) {
  if (data.class_count == 0 || data.feature_dim == 0) throw ConfigError("dataset has no classes or features");
  std::vector<std::size_t> sizes{data.feature_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(data.class_count);
  return sizes;
}

std::vector<FeatureRecord> pooled_validation(const PartitionedDataset& data) {
  std::vector<FeatureRecord> out;
  for (const auto& c : data.clients) out.insert(out.end(), c.validation.begin(), c.validation.end());
  return out;
}

// Evaluation bookkeeping shared by the federated and centralized drivers.
class Tracker {
 public:
  Tracker(const PartitionedDataset& data, const ModelParams& initial, RunHistory& history)
      : data_(data), validation_(pooled_validation(data)), history_(history) {
    if (data.test_records.empty()) throw ConfigError("dataset has no test records");
    history_.initial_model = initial;
    history_.final_model = initial;
    history_.best_model = initial;
    history_.initial_test_uar = evaluate(initial, data.test_records, data.class_count).uar;
    history_.final_test_uar = history_.initial_test_uar;
    history_.best_test_uar = history_.initial_test_uar;
    if (!validation_.empty()) history_.best_val_uar = evaluate(initial, validation_, data.class_count).uar;
  }

  void record(RoundReport report, const ModelParams& model) {
    const auto test = evaluate(model, data_.test_records, data_.class_count);
    report.test_uar = test.uar;
    report.per_class_recall = test.recall;
    if (!validation_.empty()) report.val_uar = evaluate(model, validation_, data_.class_count).uar;

    history_.final_model = model;
    history_.final_test_uar = test.uar;
    if (report.val_uar && (!history_.best_val_uar || *report.val_uar > *history_.best_val_uar)) {
      history_.best_val_uar = report.val_uar;
      history_.best_model = model;
      history_.best_round = report.round;
      history_.best_test_uar = test.uar;
    }
    history_.rounds.push_back(std::move(report));
  }

 private:
  const PartitionedDataset& data_;
  std::vector<FeatureRecord> validation_;
  RunHistory& history_;
};

}  // namespace

RunHistory run_training(const TrainConfig& cfg, const PartitionedDataset& data, const RunOptions& options) {
  cfg.validate();
  if (cfg.algorithm == Algorithm::centralized) return centralized_train(cfg, data, options);
  if (data.clients.empty()) throw ConfigError("dataset has no training clients");

  const auto sizes = model_sizes(cfg, data);
  ServerState state;
  state.theta = init_model(sizes, cfg.seed);
  state.c = ControlVariate(sizes);
  state.rng = Rng::derive(cfg.seed, kServerStream);

  auto prepared = prepare_clients(cfg, data, state.theta);
  RunHistory history;
  Tracker tracker(data, state.theta, history);

  for (int t = 0; t < cfg.rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    auto result = server_round(state, prepared.clients, cfg, data.class_count, options.observer);
    state = std::move(result.next);

    RoundReport report;
    report.round = t;
    report.tau = cfg.mode == TrainMode::semi ? tau_schedule(t, cfg.pl) : 0.0;
    report.participants = result.sampled;
    double loss = 0.0;
    std::size_t n_loss = 0;
    for (const auto& u : result.updates) {
      history.epoch_losses.insert(history.epoch_losses.end(), u.epoch_losses.begin(), u.epoch_losses.end());
      for (double l : u.epoch_losses) {
        loss += l;
        ++n_loss;
      }
      if (cfg.mode == TrainMode::semi) {
        ClientAdmissions adm{u.client_id, std::vector<std::size_t>(data.class_count, 0)};
        for (const auto& r : u.pl_reports) {
          for (std::size_t c = 0; c < data.class_count; ++c) adm.counts[c] += r.per_class[c];
        }
        report.admissions.push_back(std::move(adm));
      }
    }
    report.train_loss = n_loss ? loss / static_cast<double>(n_loss) : 0.0;

    if (cfg.mode == TrainMode::semi) {
      std::vector<PseudoLabelAudit> audit;
      for (std::size_t i = 0; i < prepared.clients.size(); ++i) {
        audit.push_back({&prepared.clients[i].pools, &prepared.sealed[i]});
      }
      report.pl_accuracy = pseudo_label_accuracy(audit);
    }
    if (options.on_server_state) options.on_server_state(state, prepared.clients);

    tracker.record(std::move(report), state.theta);
    history.rounds.back().wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::steady_clock::now() - start)
                                        .count();
    if (options.on_round) options.on_round(history.rounds.back());
  }
  return history;
}

RunHistory centralized_train(const TrainConfig& cfg, const PartitionedDataset& data, const RunOptions& options) {
  cfg.validate();
  const auto sizes = model_sizes(cfg, data);
  ModelParams theta = init_model(sizes, cfg.seed);

  auto prepared = prepare_clients(cfg, data, theta);
  std::vector<LocalSample> samples;
  std::vector<PooledLabel> labeled;
  for (const auto& client : prepared.clients) {
    for (const auto& l : client.pools.labeled()) {
      labeled.push_back({samples.size(), l.label});
      samples.push_back(client.pools.sample(l.sample_id));
    }
  }
  if (labeled.empty()) throw ConfigError("centralized training set is empty");

  ClientState pooled;
  pooled.client_id = 0;
  pooled.pools = ClientPools(std::move(samples), std::move(labeled), {});
  pooled.c_k = ControlVariate(sizes);
  pooled.rng = Rng::derive(cfg.seed, 0);

  TrainConfig local = cfg;
  local.algorithm = Algorithm::fedavg;
  local.mode = TrainMode::supervised_only;
  local.local_epochs = 1;

  const long long budget =
      cfg.rounds == 0
          ? 0
          : std::max(1LL, std::llround(static_cast<double>(cfg.rounds) * cfg.local_epochs * cfg.participation));

  RunHistory history;
  Tracker tracker(data, theta, history);
  const ControlVariate zero(sizes);
  for (int epoch = 0; epoch < budget; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    auto update = client_local_training(theta, zero, pooled, local, epoch, data.class_count, options.observer);
    theta = std::move(update->theta);
    history.epoch_losses.insert(history.epoch_losses.end(), update->epoch_losses.begin(), update->epoch_losses.end());

    RoundReport report;
    report.round = epoch;
    report.participants = {0};
    report.train_loss = update->epoch_losses.back();
    tracker.record(std::move(report), theta);
    history.rounds.back().wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::steady_clock::now() - start)
                                        .count();
    if (options.on_round) options.on_round(history.rounds.back());
  }
  return history;
}

}  // namespace fedser
