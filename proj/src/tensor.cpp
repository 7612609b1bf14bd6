#include "dfedcad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dfedcad/errors.hpp"

namespace dfedcad {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
}

std::size_t ModelParams::input_dim() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  return layers.front().in_dim();
}

std::size_t ModelParams::num_classes() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  return layers.back().out_dim();
}

std::size_t ModelParams::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size();
  return n;
}

PruneMask PruneMask::all_true(const ModelParams& model) {
  PruneMask m;
  for (const auto& l : model.layers) m.layers.emplace_back(l.weight.size(), 1);
  return m;
}

PruneMask PruneMask::all_false(const ModelParams& model) {
  PruneMask m;
  for (const auto& l : model.layers) m.layers.emplace_back(l.weight.size(), 0);
  return m;
}

std::size_t PruneMask::kept(std::size_t layer) const {
  return static_cast<std::size_t>(std::count(layers.at(layer).begin(), layers.at(layer).end(), 1));
}

Dataset gather(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out;
  out.num_classes = data.num_classes;
  out.features = Matrix(rows.size(), data.features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = data.features.row(rows[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(data.labels[rows[i]]);
  }
  return out;
}

ModelParams init_model(std::span<const std::size_t> widths, Rng& rng) {
  if (widths.size() < 2) throw ConfigError("model needs at least input and output widths");
  ModelParams model;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    if (in == 0 || out == 0) throw ConfigError("layer widths must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0)};
    for (double& w : layer.weight.data()) w = dist(rng);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

void validate_model(const ModelParams& model) {
  if (model.layers.empty()) throw ShapeError("model has no layers");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    if (layer.weight.rows() == 0 || layer.weight.cols() == 0)
      throw ShapeError("layer " + std::to_string(l) + " is empty");
    if (layer.bias.size() != layer.out_dim())
      throw ShapeError("layer " + std::to_string(l) + " bias length mismatch");
    if (l + 1 < model.layers.size() && layer.out_dim() != model.layers[l + 1].in_dim())
      throw ShapeError("layer " + std::to_string(l) + " output does not feed layer " +
                       std::to_string(l + 1));
  }
}

void validate_mask(const ModelParams& model, const PruneMask& mask) {
  if (mask.layers.size() != model.layers.size()) throw ShapeError("mask layer count mismatch");
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    if (mask.layers[l].size() != model.layers[l].weight.size())
      throw ShapeError("mask length mismatch in layer " + std::to_string(l));
}

namespace {

// out = in * (W .* mask)^T + b
void affine(const Matrix& in, const DenseLayer& layer, std::span<const std::uint8_t> keep,
            Matrix& out) {
  const std::size_t rows = in.rows(), fan_in = layer.in_dim(), fan_out = layer.out_dim();
  out = Matrix(rows, fan_out);
  const auto& w = layer.weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto x = in.row(r);
    auto y = out.row(r);
    for (std::size_t o = 0; o < fan_out; ++o) {
      double acc = layer.bias[o];
      const std::size_t base = o * fan_in;
      for (std::size_t i = 0; i < fan_in; ++i)
        if (keep[base + i]) acc += w[base + i] * x[i];
      y[o] = acc;
    }
  }
}

void check_finite(const Matrix& m, std::size_t layer) {
  for (double v : m.data())
    if (!std::isfinite(v))
      throw NumericError("non-finite activation in layer " + std::to_string(layer));
}

// Row-wise softmax in place; returns nothing, values are probabilities.
void softmax_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

void check_batch(const ModelParams& model, const Dataset& batch) {
  if (batch.size() == 0) throw ShapeError("empty batch");
  if (batch.features.rows() != batch.size()) throw ShapeError("feature/label count mismatch");
  if (batch.features.cols() != model.input_dim())
    throw ShapeError("feature dim " + std::to_string(batch.features.cols()) +
                     " != model input dim " + std::to_string(model.input_dim()));
  const auto classes = static_cast<int>(model.num_classes());
  for (int y : batch.labels)
    if (y < 0 || y >= classes) throw ShapeError("label out of range");
}

// Logits (pre-softmax) of the final layer.
Matrix logits(const ModelParams& model, const PruneMask& mask, const Matrix& features) {
  Matrix a = features, z;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    affine(a, model.layers[l], mask.layers[l], z);
    if (l + 1 < model.layers.size())
      for (double& v : z.data()) v = std::tanh(v);
    check_finite(z, l);
    a = std::move(z);
  }
  return a;
}

}  // namespace

ForwardResult forward_loss(const ModelParams& model, const PruneMask& mask, const Dataset& batch) {
  validate_model(model);
  validate_mask(model, mask);
  check_batch(model, batch);

  ForwardResult res;
  auto& acts = res.cache.activations;
  res.cache.batch_size = batch.size();
  acts.reserve(model.layers.size() + 1);
  acts.push_back(batch.features);
  double loss = 0.0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    Matrix z;
    affine(acts.back(), model.layers[l], mask.layers[l], z);
    check_finite(z, l);
    if (l + 1 < model.layers.size()) {
      for (double& v : z.data()) v = std::tanh(v);
    } else {
      // Cross-entropy via log-sum-exp on the logits before normalizing.
      for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        loss += mx + std::log(sum) - row[static_cast<std::size_t>(batch.labels[r])];
      }
      softmax_rows(z);
    }
    acts.push_back(std::move(z));
  }
  res.loss = std::max(0.0, loss / static_cast<double>(batch.size()));
  if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");
  return res;
}

Gradient zeros_like(const ModelParams& model) {
  Gradient g;
  for (const auto& l : model.layers)
    g.layers.push_back({Matrix(l.out_dim(), l.in_dim()), std::vector<double>(l.out_dim(), 0.0)});
  return g;
}

Gradient backward(const ModelParams& model, const PruneMask& mask, const ForwardCache& cache,
                  const Dataset& batch) {
  const std::size_t L = model.layers.size();
  if (cache.batch_size != batch.size() || cache.activations.size() != L + 1 ||
      cache.activations.front().rows() != batch.size() ||
      cache.activations.front().cols() != model.input_dim() ||
      cache.activations.back().cols() != model.num_classes())
    throw std::logic_error("forward cache does not match this model and batch");

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Gradient grad = zeros_like(model);

  // dL/dz for the softmax + cross-entropy head.
  Matrix delta = cache.activations.back();
  for (std::size_t r = 0; r < delta.rows(); ++r) {
    delta(r, static_cast<std::size_t>(batch.labels[r])) -= 1.0;
    for (double& v : delta.row(r)) v *= inv_b;
  }

  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = model.layers[l];
    const auto& keep = mask.layers[l];
    const Matrix& input = cache.activations[l];
    auto& g = grad.layers[l];
    const std::size_t fan_in = layer.in_dim(), fan_out = layer.out_dim();

    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto d = delta.row(r);
      auto x = input.row(r);
      for (std::size_t o = 0; o < fan_out; ++o) {
        g.bias[o] += d[o];
        double* gw = g.weight.data().data() + o * fan_in;
        for (std::size_t i = 0; i < fan_in; ++i) gw[i] += d[o] * x[i];
      }
    }
    for (std::size_t k = 0; k < keep.size(); ++k)
      if (!keep[k]) g.weight.data()[k] = 0.0;

    if (l == 0) break;
    Matrix prev(delta.rows(), fan_in);
    const auto& w = layer.weight.data();
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto d = delta.row(r);
      auto p = prev.row(r);
      for (std::size_t o = 0; o < fan_out; ++o) {
        const std::size_t base = o * fan_in;
        for (std::size_t i = 0; i < fan_in; ++i)
          if (keep[base + i]) p[i] += d[o] * w[base + i];
      }
      auto a = input.row(r);  // tanh output of layer l-1
      for (std::size_t i = 0; i < fan_in; ++i) p[i] *= 1.0 - a[i] * a[i];
    }
    delta = std::move(prev);
  }
  return grad;
}

void apply_mask(ModelParams& model, const PruneMask& mask) {
  validate_mask(model, mask);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& w = model.layers[l].weight.data();
    for (std::size_t k = 0; k < w.size(); ++k)
      if (!mask.layers[l][k]) w[k] = 0.0;
  }
}

void apply_update_inplace(ModelParams& model, const Gradient& grad, const PruneMask& mask,
                          double lr, double momentum, const ModelParams& reference) {
  if (grad.layers.size() != model.layers.size() || reference.layers.size() != model.layers.size())
    throw ShapeError("update operands have different layer counts");
  if (!(lr >= 0.0) || !(momentum >= 0.0) || !std::isfinite(lr) || !std::isfinite(momentum))
    throw ConfigError("step size and momentum must be finite and non-negative");
  validate_mask(model, mask);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    const auto& g = grad.layers[l];
    const auto& ref = reference.layers[l];
    if (g.weight.rows() != layer.weight.rows() || g.weight.cols() != layer.weight.cols() ||
        ref.weight.rows() != layer.weight.rows() || ref.weight.cols() != layer.weight.cols() ||
        g.bias.size() != layer.bias.size() || ref.bias.size() != layer.bias.size())
      throw ShapeError("update operand shape mismatch in layer " + std::to_string(l));

    auto& w = layer.weight.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (!mask.layers[l][k]) {
        w[k] = 0.0;
        continue;
      }
      w[k] -= lr * (g.weight.data()[k] + momentum * (w[k] - ref.weight.data()[k]));
    }
    for (std::size_t k = 0; k < layer.bias.size(); ++k)
      layer.bias[k] -= lr * (g.bias[k] + momentum * (layer.bias[k] - ref.bias[k]));
  }
}

ModelParams apply_update(const ModelParams& model, const Gradient& grad, const PruneMask& mask,
                         double lr, double momentum, const ModelParams& reference) {
  ModelParams out = model;
  apply_update_inplace(out, grad, mask, lr, momentum, reference);
  return out;
}

std::vector<int> predict(const ModelParams& model, const PruneMask& mask, const Matrix& features) {
  validate_model(model);
  validate_mask(model, mask);
  if (features.cols() != model.input_dim()) throw ShapeError("feature dim mismatch");
  const Matrix z = logits(model, mask, features);
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    // max_element returns the first maximum, i.e. the lowest class on ties.
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double evaluate(const ModelParams& model, const PruneMask& mask, const Dataset& data) {
  if (data.size() == 0) throw ShapeError("cannot evaluate on an empty dataset");
  const auto pred = predict(model, mask, data.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace dfedcad
