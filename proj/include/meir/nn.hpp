#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meir/random.hpp"
#include "meir/tensor.hpp"

namespace meir::nn {

enum class Activation { relu, sigmoid, identity };

double sigmoid(double z);
double activate(Activation a, double z);

/// y = act(W x + b). Biases are stored as an (out x 1) matrix so every
/// parameter is a Matrix and optimizers can treat them uniformly.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
  Activation act = Activation::identity;

  std::size_t in() const { return weight.cols; }
  std::size_t out() const { return weight.rows; }
  bool empty() const { return weight.rows == 0; }
};

struct DenseCache {
  Vector input;
  Vector pre;
  Vector out;
};

DenseLayer zeros_like(const DenseLayer& layer);

Vector dense_forward(const DenseLayer& layer, std::span<const double> x, DenseCache* cache = nullptr);

/// Accumulates dL/dW and dL/db into `grads` and returns dL/dx.
Vector dense_backward(const DenseLayer& layer, const DenseCache& cache,
                      std::span<const double> grad_out, DenseLayer& grads);

// ---------------------------------------------------------------------------
// Initialization

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::identity;
  double bias_init = 0.0;
};

/// He-normal (std sqrt(2/in)) for relu layers, Glorot-normal otherwise.
DenseLayer init_layer(const LayerSpec& spec, Rng& rng);
std::vector<DenseLayer> init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Losses. Probabilities are clipped to [kProbClip, 1 - kProbClip]; gradients
// are those of the clipped loss (zero where the clip is active).

inline constexpr double kProbClip = 1e-7;

enum class LossKind { binary_xent, categorical_xent_3 };

double binary_xent(double p, double label);
double categorical_xent(std::span<const double> probs, std::size_t label);
double loss_forward(LossKind kind, std::span<const double> prediction, std::size_t label);

/// d binary_xent(sigmoid(z), label) / dz, given p = sigmoid(z).
double binary_xent_grad_logit(double p, double label);
Vector softmax(std::span<const double> logits);
/// d categorical_xent(softmax(z), label) / dz, given probs = softmax(z).
Vector categorical_xent_grad_logits(std::span<const double> probs, std::size_t label);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t t = 0;
};

AdamState adam_init(const std::vector<Matrix*>& params, AdamConfig cfg = {});
void adam_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
               AdamState& state);

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Max over every parameter entry of |analytic - central difference| /
/// max(|analytic|, |cd|, 1e-8). `loss` is re-evaluated with each entry
/// perturbed by +-eps; parameters are restored afterwards.
double grad_check(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& analytic,
                  const std::function<double()>& loss, double eps);

// ---------------------------------------------------------------------------
// A plain multilayer perceptron with a sigmoid/BCE output, used for optimizer
// and gradient-checker sanity runs.

struct Mlp {
  std::vector<DenseLayer> layers;

  std::vector<Matrix*> params();
  /// Sigmoid probability of the last layer's (identity) output.
  double predict(std::span<const double> x) const;
  /// Mean BCE over the batch; accumulates mean gradients when `grads` is set.
  double loss(const std::vector<Vector>& xs, const std::vector<double>& ys, Mlp* grads) const;
  Mlp zeros() const;
};

// ---------------------------------------------------------------------------
// Tensor checkpoints: a text dump with a shape header per tensor. Values are
// written in shortest round-trip form, so reading back is exact.

using NamedTensors = std::vector<std::pair<std::string, Matrix>>;

std::string serialize_tensors(const NamedTensors& tensors);
NamedTensors parse_tensors(std::string_view text);

}  // namespace meir::nn
