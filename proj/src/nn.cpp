#include "fedser/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedser/errors.hpp"

namespace fedser {

ModelParams::ModelParams(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ConfigError("layer_sizes needs at least input and output sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] == 0 || sizes_[l + 1] == 0) throw ConfigError("layer sizes must be positive");
    offsets_.push_back(total);
    total += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  values_.assign(total, 0.0);
}

std::span<double> ModelParams::weights(std::size_t layer) {
  return {values_.data() + offsets_[layer], sizes_[layer + 1] * sizes_[layer]};
}

std::span<const double> ModelParams::weights(std::size_t layer) const {
  return {values_.data() + offsets_[layer], sizes_[layer + 1] * sizes_[layer]};
}

std::span<double> ModelParams::bias(std::size_t layer) {
  return {values_.data() + offsets_[layer] + sizes_[layer + 1] * sizes_[layer], sizes_[layer + 1]};
}

std::span<const double> ModelParams::bias(std::size_t layer) const {
  return {values_.data() + offsets_[layer] + sizes_[layer + 1] * sizes_[layer], sizes_[layer + 1]};
}

bool ModelParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ModelParams init_model(std::span<const std::size_t> layer_sizes, std::uint64_t seed) {
  ModelParams model(std::vector<std::size_t>(layer_sizes.begin(), layer_sizes.end()));
  Rng rng(seed);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const double fan_in = static_cast<double>(layer_sizes[l]);
    const double fan_out = static_cast<double>(layer_sizes[l + 1]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : model.weights(l)) w = rng.uniform(-bound, bound);
  }
  return model;
}

namespace {

// out = in * W^T + b, W is (out_dim x in_dim) row-major.
Matrix affine(const Matrix& in, std::span<const double> w, std::span<const double> b, std::size_t out_dim) {
  Matrix out(in.rows, out_dim);
  const std::size_t in_dim = in.cols;
  for (std::size_t r = 0; r < in.rows; ++r) {
    const double* x = in.data.data() + r * in_dim;
    double* y = out.data.data() + r * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wrow = w.data() + o * in_dim;
      double acc = b[o];
      for (std::size_t i = 0; i < in_dim; ++i) acc += wrow[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

}  // namespace

ForwardResult forward(const ModelParams& model, const Matrix& batch, Mode mode, double dropout_rate,
                      Rng& rng) {
  if (model.num_layers() == 0) throw ShapeError("forward on an empty model");
  if (batch.cols != model.input_dim()) {
    throw ShapeError("batch has " + std::to_string(batch.cols) + " features, model expects " +
                     std::to_string(model.input_dim()));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");

  const bool drop = mode == Mode::train && dropout_rate > 0.0;
  const double keep = 1.0 - dropout_rate;
  const std::size_t layers = model.num_layers();

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.inputs.reserve(layers);
  cache.inputs.push_back(batch);

  for (std::size_t l = 0; l + 1 < layers; ++l) {
    Matrix z = affine(cache.inputs.back(), model.weights(l), model.bias(l), model.layer_sizes()[l + 1]);
    Matrix a(z.rows, z.cols);
    for (std::size_t i = 0; i < z.data.size(); ++i) a.data[i] = z.data[i] > 0.0 ? z.data[i] : 0.0;
    if (drop) {
      Matrix mask(z.rows, z.cols);
      for (std::size_t i = 0; i < mask.data.size(); ++i) {
        mask.data[i] = rng.uniform(0.0, 1.0) < keep ? 1.0 / keep : 0.0;
        a.data[i] *= mask.data[i];
      }
      cache.masks.push_back(std::move(mask));
    }
    cache.pre.push_back(std::move(z));
    cache.inputs.push_back(std::move(a));
  }
  result.logits = affine(cache.inputs.back(), model.weights(layers - 1), model.bias(layers - 1),
                         model.output_dim());
  return result;
}

Matrix predict_logits(const ModelParams& model, const Matrix& batch) {
  Rng unused;
  return forward(model, batch, Mode::eval, 0.0, unused).logits;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  std::vector<double> out(logits.size());
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp((logits[j] - top) / temperature);
    total += out[j];
  }
  for (double& v : out) v /= total;
  return out;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

LossResult softmax_ce_loss(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows) throw ShapeError("label count does not match batch size");
  if (logits.rows == 0) throw ShapeError("empty batch");
  const auto classes = static_cast<int>(logits.cols);
  const double scale = 1.0 / static_cast<double>(logits.rows);

  LossResult result;
  result.dlogits = Matrix(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= classes) throw LabelError("label " + std::to_string(y) + " outside [0, C)");
    auto z = logits.row(r);
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - top);
    const double log_norm = top + std::log(total);
    result.loss += (log_norm - z[static_cast<std::size_t>(y)]) * scale;
    auto d = result.dlogits.row(r);
    for (std::size_t j = 0; j < z.size(); ++j) d[j] = std::exp(z[j] - log_norm) * scale;
    d[static_cast<std::size_t>(y)] -= scale;
  }
  return result;
}

Gradients backward(const ModelParams& model, const ForwardCache& cache, const Matrix& dlogits) {
  const std::size_t layers = model.num_layers();
  if (cache.inputs.size() != layers || cache.pre.size() + 1 != layers) {
    throw ShapeError("forward cache does not match model depth");
  }
  if (dlogits.cols != model.output_dim() || dlogits.rows != cache.inputs.front().rows) {
    throw ShapeError("dlogits shape does not match model output and batch");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    if (cache.inputs[l].cols != model.layer_sizes()[l]) throw ShapeError("cache layer width mismatch");
  }

  Gradients grads(model.layer_sizes());
  Matrix delta = dlogits;
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& in = cache.inputs[l];
    const std::size_t in_dim = in.cols;
    const std::size_t out_dim = delta.cols;
    auto gw = grads.weights(l);
    auto gb = grads.bias(l);
    for (std::size_t r = 0; r < delta.rows; ++r) {
      const double* x = in.data.data() + r * in_dim;
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double d = delta(r, o);
        if (d == 0.0) continue;
        gb[o] += d;
        double* g = gw.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) g[i] += d * x[i];
      }
    }
    if (l == 0) break;

    // Propagate to the previous hidden activation, then through dropout and ReLU.
    auto w = model.weights(l);
    Matrix prev(delta.rows, in_dim);
    for (std::size_t r = 0; r < delta.rows; ++r) {
      double* p = prev.data.data() + r * in_dim;
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double d = delta(r, o);
        if (d == 0.0) continue;
        const double* wrow = w.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) p[i] += d * wrow[i];
      }
    }
    const Matrix& pre = cache.pre[l - 1];
    const bool masked = !cache.masks.empty();
    for (std::size_t i = 0; i < prev.data.size(); ++i) {
      if (pre.data[i] <= 0.0) {
        prev.data[i] = 0.0;
      } else if (masked) {
        prev.data[i] *= cache.masks[l - 1].data[i];
      }
    }
    delta = std::move(prev);
  }
  return grads;
}

ModelParams sgd_step(const ModelParams& model, const Gradients& grads, double lr) {
  if (!model.same_shape(grads)) throw ShapeError("gradient shape does not match model");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!grads.all_finite()) throw NumericError("non-finite gradient entry");
  ModelParams out = model;
  auto theta = out.values();
  auto g = grads.values();
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
  return out;
}

ModelParams param_combine(std::span<const ParamTerm> terms) {
  if (terms.empty()) throw ShapeError("param_combine needs at least one term");
  const ModelParams& first = terms.front().second.get();
  ModelParams out(first.layer_sizes());
  auto acc = out.values();
  for (const auto& [coeff, ref] : terms) {
    const ModelParams& p = ref.get();
    if (!p.same_shape(first)) throw ShapeError("param_combine terms differ in shape");
    auto v = p.values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += coeff * v[i];
  }
  return out;
}

ModelParams param_combine(std::initializer_list<ParamTerm> terms) {
  return param_combine(std::span<const ParamTerm>(terms.begin(), terms.size()));
}

}  // namespace fedser
