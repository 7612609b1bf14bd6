#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfedcad/rng.hpp"

namespace dfedcad {

/// Dense row-major matrix of doubles.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Activation { kTanh };

/// One dense layer: weight is (out x in), bias has `out` entries.
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }

  bool operator==(const DenseLayer&) const = default;
};

/// Parameters of a feed-forward classifier. Hidden layers use
/// `hidden_activation`; the last layer produces class logits.
struct ModelParams {
  std::vector<DenseLayer> layers;
  Activation hidden_activation = Activation::kTanh;

  std::size_t input_dim() const;
  std::size_t num_classes() const;
  std::size_t weight_count() const;

  bool operator==(const ModelParams&) const = default;
};

/// Same layout as ModelParams, holding d(loss)/d(parameter).
struct Gradient {
  std::vector<DenseLayer> layers;
};

/// Per-layer keep flags for weights; biases are never masked.
struct PruneMask {
  std::vector<std::vector<std::uint8_t>> layers;

  static PruneMask all_true(const ModelParams& model);
  static PruneMask all_false(const ModelParams& model);

  std::size_t kept(std::size_t layer) const;
  bool operator==(const PruneMask&) const = default;
};

/// Labelled samples: one feature row per label.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Gathers the given rows into a standalone batch.
Dataset gather(const Dataset& data, std::span<const std::size_t> rows);

/// Activations retained by forward_loss for the backward pass.
struct ForwardCache {
  /// activations[0] is the input batch, activations[l+1] the output of
  /// layer l (softmax probabilities for the last layer).
  std::vector<Matrix> activations;
  std::size_t batch_size = 0;
};

struct ForwardResult {
  double loss = 0.0;
  ForwardCache cache;
};

/// Builds a model with the given layer widths, e.g. {16, 32, 32, 4}.
/// Weights are Glorot-uniform, biases zero.
ModelParams init_model(std::span<const std::size_t> widths, Rng& rng);

/// Structural check shared by every entry point.
void validate_model(const ModelParams& model);
void validate_mask(const ModelParams& model, const PruneMask& mask);

/// Mean cross-entropy of the masked model on `batch`.
ForwardResult forward_loss(const ModelParams& model, const PruneMask& mask, const Dataset& batch);

/// Exact gradient of the loss computed by forward_loss. Weight gradients at
/// masked positions are zero.
Gradient backward(const ModelParams& model, const PruneMask& mask, const ForwardCache& cache,
                  const Dataset& batch);

/// theta <- theta - lr * (grad + momentum * (theta - reference)), then zeroes
/// masked weights.
void apply_update_inplace(ModelParams& model, const Gradient& grad, const PruneMask& mask,
                          double lr, double momentum, const ModelParams& reference);

ModelParams apply_update(const ModelParams& model, const Gradient& grad, const PruneMask& mask,
                         double lr, double momentum, const ModelParams& reference);

/// Zeroes every masked weight.
void apply_mask(ModelParams& model, const PruneMask& mask);

/// Index of the largest logit for each sample; ties go to the lowest class.
std::vector<int> predict(const ModelParams& model, const PruneMask& mask, const Matrix& features);

/// Top-1 accuracy in [0, 1].
double evaluate(const ModelParams& model, const PruneMask& mask, const Dataset& data);

Gradient zeros_like(const ModelParams& model);

}  // namespace dfedcad
