#include "meir/nn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "meir/error.hpp"

namespace meir::nn {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::sigmoid: return sigmoid(z);
    case Activation::identity: return z;
  }
  return z;
}

DenseLayer zeros_like(const DenseLayer& layer) {
  return {Matrix(layer.weight.rows, layer.weight.cols), Matrix(layer.bias.rows, 1), layer.act};
}

Vector dense_forward(const DenseLayer& layer, std::span<const double> x, DenseCache* cache) {
  if (x.size() != layer.in()) {
    fail(ErrorCode::invalid_argument, "dense layer expects input dim " + std::to_string(layer.in()) +
                                          ", got " + std::to_string(x.size()));
  }
  const std::size_t out_dim = layer.out();
  Vector pre(out_dim);
  for (std::size_t o = 0; o < out_dim; ++o) pre[o] = dot(layer.weight.row(o), x) + layer.bias.data[o];
  Vector y(out_dim);
  for (std::size_t o = 0; o < out_dim; ++o) y[o] = activate(layer.act, pre[o]);
  if (cache) {
    cache->input.assign(x.begin(), x.end());
    cache->pre = std::move(pre);
    cache->out = y;
  }
  return y;
}

Vector dense_backward(const DenseLayer& layer, const DenseCache& cache,
                      std::span<const double> grad_out, DenseLayer& grads) {
  const std::size_t out_dim = layer.out();
  const std::size_t in_dim = layer.in();
  Vector grad_in(in_dim, 0.0);
  for (std::size_t o = 0; o < out_dim; ++o) {
    double g = grad_out[o];
    switch (layer.act) {
      case Activation::relu: g = cache.pre[o] > 0.0 ? g : 0.0; break;
      case Activation::sigmoid: g *= cache.out[o] * (1.0 - cache.out[o]); break;
      case Activation::identity: break;
    }
    if (g == 0.0) continue;
    grads.bias.data[o] += g;
    auto w_row = layer.weight.row(o);
    auto gw_row = grads.weight.row(o);
    for (std::size_t i = 0; i < in_dim; ++i) {
      gw_row[i] += g * cache.input[i];
      grad_in[i] += g * w_row[i];
    }
  }
  return grad_in;
}

DenseLayer init_layer(const LayerSpec& spec, Rng& rng) {
  DenseLayer layer{Matrix(spec.out, spec.in), Matrix(spec.out, 1, spec.bias_init), spec.act};
  const double fan_in = static_cast<double>(spec.in);
  const double fan_out = static_cast<double>(spec.out);
  const double stddev = spec.act == Activation::relu ? std::sqrt(2.0 / fan_in)
                                                     : std::sqrt(2.0 / (fan_in + fan_out));
  for (auto& w : layer.weight.data) w = rng.normal() * stddev;
  return layer;
}

std::vector<DenseLayer> init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DenseLayer> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(init_layer(s, rng));
  return out;
}

double binary_xent(double p, double label) {
  const double q = std::clamp(p, kProbClip, 1.0 - kProbClip);
  return -(label * std::log(q) + (1.0 - label) * std::log(1.0 - q));
}

double categorical_xent(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    fail(ErrorCode::invalid_argument, "label " + std::to_string(label) + " outside " +
                                          std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::clamp(probs[label], kProbClip, 1.0 - kProbClip));
}

double loss_forward(LossKind kind, std::span<const double> prediction, std::size_t label) {
  switch (kind) {
    case LossKind::binary_xent:
      if (label > 1) fail(ErrorCode::invalid_argument, "binary label must be 0 or 1");
      return binary_xent(prediction[0], static_cast<double>(label));
    case LossKind::categorical_xent_3:
      if (prediction.size() != 3) fail(ErrorCode::invalid_argument, "expected 3 class probabilities");
      return categorical_xent(prediction, label);
  }
  return 0.0;
}

double binary_xent_grad_logit(double p, double label) {
  if (p < kProbClip || p > 1.0 - kProbClip) return 0.0;
  return p - label;
}

Vector softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& x : p) x /= sum;
  return p;
}

Vector categorical_xent_grad_logits(std::span<const double> probs, std::size_t label) {
  Vector g(probs.size(), 0.0);
  const double py = probs[label];
  if (py < kProbClip || py > 1.0 - kProbClip) return g;
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] - (i == label ? 1.0 : 0.0);
  return g;
}

AdamState adam_init(const std::vector<Matrix*>& params, AdamConfig cfg) {
  AdamState s;
  s.cfg = cfg;
  for (const Matrix* p : params) {
    s.m.emplace_back(p->rows, p->cols);
    s.v.emplace_back(p->rows, p->cols);
  }
  return s;
}

void adam_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    fail(ErrorCode::invalid_argument, "adam: parameter/gradient/state count mismatch");
  }
  ++state.t;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = params[k]->data;
    const auto& g = grads[k]->data;
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    if (g.size() != theta.size() || m.size() != theta.size()) {
      fail(ErrorCode::invalid_argument, "adam: shape mismatch in tensor " + std::to_string(k));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

double grad_check(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& analytic,
                  const std::function<double()>& loss, double eps) {
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = params[k]->data;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + eps;
      const double up = loss();
      theta[i] = saved - eps;
      const double down = loss();
      theta[i] = saved;
      const double cd = (up - down) / (2.0 * eps);
      const double a = analytic[k]->data[i];
      const double denom = std::max({std::abs(a), std::abs(cd), 1e-8});
      worst = std::max(worst, std::abs(a - cd) / denom);
    }
  }
  return worst;
}

std::vector<Matrix*> Mlp::params() {
  std::vector<Matrix*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

double Mlp::predict(std::span<const double> x) const {
  Vector h(x.begin(), x.end());
  for (const auto& l : layers) h = dense_forward(l, h);
  return sigmoid(h[0]);
}

Mlp Mlp::zeros() const {
  Mlp z;
  for (const auto& l : layers) z.layers.push_back(zeros_like(l));
  return z;
}

double Mlp::loss(const std::vector<Vector>& xs, const std::vector<double>& ys, Mlp* grads) const {
  const double inv = 1.0 / static_cast<double>(xs.size());
  double total = 0.0;
  std::vector<DenseCache> caches(layers.size());
  for (std::size_t s = 0; s < xs.size(); ++s) {
    Vector h = xs[s];
    for (std::size_t l = 0; l < layers.size(); ++l) h = dense_forward(layers[l], h, &caches[l]);
    const double p = sigmoid(h[0]);
    total += binary_xent(p, ys[s]);
    if (grads) {
      Vector g{binary_xent_grad_logit(p, ys[s]) * inv};
      for (std::size_t l = layers.size(); l-- > 0;) {
        g = dense_backward(layers[l], caches[l], g, grads->layers[l]);
      }
    }
  }
  return total * inv;
}

std::string serialize_tensors(const NamedTensors& tensors) {
  std::string out = "tensors " + std::to_string(tensors.size()) + "\n";
  char num[32];
  for (const auto& [name, m] : tensors) {
    out += "tensor " + name + " " + std::to_string(m.rows) + " " + std::to_string(m.cols) + "\n";
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      const auto res = std::to_chars(num, num + sizeof num, m.data[i]);
      if (i > 0) out += ' ';
      out.append(num, res.ptr);
    }
    out += '\n';
  }
  return out;
}

NamedTensors parse_tensors(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string word;
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "tensors") {
    fail(ErrorCode::format, "tensor dump: expected 'tensors <n>' header");
  }
  NamedTensors out;
  for (std::size_t t = 0; t < count; ++t) {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    if (!(in >> word >> name >> rows >> cols) || word != "tensor") {
      fail(ErrorCode::format, "tensor dump: bad header for tensor " + std::to_string(t));
    }
    Matrix m(rows, cols);
    for (auto& x : m.data) {
      std::string tok;
      if (!(in >> tok)) fail(ErrorCode::format, "tensor dump: truncated tensor " + name);
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        fail(ErrorCode::format, "tensor dump: bad value '" + tok + "' in " + name);
      }
    }
    out.emplace_back(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace meir::nn
