#pragma once

// Minimal feed-forward network: affine -> ReLU -> dropout for hidden layers,
// affine logits at the output. All arithmetic is double precision.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "fedser/rng.hpp"

namespace fedser {

// Dense row-major matrix. Rows are batch entries wherever a batch is involved.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

// Parameters of an MLP stored as one flat buffer. Layer l holds a weight
// matrix of shape (sizes[l+1] x sizes[l]) followed by a bias of sizes[l+1].
class ModelParams {
 public:
  ModelParams() = default;
  // Zero-filled parameters for the given layer sizes (input, hidden..., classes).
  explicit ModelParams(std::vector<std::size_t> layer_sizes);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t num_layers() const { return sizes_.empty() ? 0 : sizes_.size() - 1; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  bool same_shape(const ModelParams& other) const { return sizes_ == other.sizes_; }
  bool all_finite() const;

  bool operator==(const ModelParams&) const = default;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;  // start of each layer's weights in values_
  std::vector<double> values_;
};

// Gradients and SCAFFOLD control variates live in parameter space and share
// the container.
using Gradients = ModelParams;
using ControlVariate = ModelParams;

enum class Mode { train, eval };

struct ForwardCache {
  std::vector<Matrix> inputs;  // input seen by each affine layer
  std::vector<Matrix> pre;     // hidden pre-activations
  std::vector<Matrix> masks;   // inverted-dropout multipliers per hidden layer; empty when inactive
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;
};

using ParamTerm = std::pair<double, std::reference_wrapper<const ModelParams>>;

// Glorot-uniform weights, zero biases. Throws ConfigError on bad sizes.
ModelParams init_model(std::span<const std::size_t> layer_sizes, std::uint64_t seed);

// Dropout only runs in train mode with a positive rate; only then is rng consumed.
ForwardResult forward(const ModelParams& model, const Matrix& batch, Mode mode, double dropout_rate,
                      Rng& rng);

// Eval-mode logits without keeping a cache.
Matrix predict_logits(const ModelParams& model, const Matrix& batch);

// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
LossResult softmax_ce_loss(const Matrix& logits, std::span<const int> labels);

Gradients backward(const ModelParams& model, const ForwardCache& cache, const Matrix& dlogits);

ModelParams sgd_step(const ModelParams& model, const Gradients& grads, double lr);

// sum_i coeff_i * params_i, elementwise.
ModelParams param_combine(std::span<const ParamTerm> terms);
ModelParams param_combine(std::initializer_list<ParamTerm> terms);

// Max-stabilized softmax of one logit row at the given temperature.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

std::size_t argmax(std::span<const double> values);

}  // namespace fedser
