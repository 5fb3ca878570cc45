#include "meir/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "meir/analysis.hpp"
#include "meir/error.hpp"

namespace meir {

using nn::Activation;
using nn::DenseCache;
using nn::DenseLayer;

// ---------------------------------------------------------------------------
// Configuration

namespace {

GateMode parse_gate(const std::string& s) {
  if (s == "fixed") return GateMode::fixed;
  if (s == "learnable") return GateMode::learnable;
  fail(ErrorCode::invalid_argument, "unknown gate mode '" + s + "'");
}

TextPooling parse_pooling(const std::string& s) {
  if (s == "average") return TextPooling::average;
  if (s == "attention") return TextPooling::attention;
  fail(ErrorCode::invalid_argument, "unknown text pooling '" + s + "'");
}

}  // namespace

ModelConfig ModelConfig::from(const Config& cfg, const EmbeddingConfig& embed) {
  ModelConfig m;
  m.image_dim = cfg.get_size("image_dim", embed.image_dim);
  m.text_dim = cfg.get_size("text_dim", embed.text_dim);
  m.balanced_dim = cfg.get_size("balanced_dim", m.balanced_dim);
  m.hidden_dim = cfg.get_size("hidden_dim", m.hidden_dim);
  m.attention_dim = cfg.get_size("attention_dim", m.attention_dim);
  m.gate = parse_gate(cfg.get_string("gate", "learnable"));
  m.pooling = parse_pooling(cfg.get_string("pooling", "attention"));
  m.related_branch = cfg.get_bool("related_branch", m.related_branch);
  m.lambda_rel = cfg.get_double("lambda_rel", m.lambda_rel);
  m.lambda_man = cfg.get_double("lambda_man", m.lambda_man);
  m.rho_miss = cfg.get_double("rho_miss", m.rho_miss);
  m.rho_unrel = cfg.get_double("rho_unrel", m.rho_unrel);
  m.epochs = cfg.get_size("epochs", m.epochs);
  m.batch_size = cfg.get_size("batch_size", m.batch_size);
  m.patience = cfg.get_size("patience", m.patience);
  m.lr = cfg.get_double("lr", m.lr);
  m.seed = static_cast<std::uint64_t>(cfg.get_int("model_seed", 0));
  m.validate();
  return m;
}

std::map<std::string, std::string> ModelConfig::snapshot() const {
  return {
      {"image_dim", std::to_string(image_dim)},
      {"text_dim", std::to_string(text_dim)},
      {"balanced_dim", std::to_string(balanced_dim)},
      {"hidden_dim", std::to_string(hidden_dim)},
      {"attention_dim", std::to_string(attention_dim)},
      {"gate", gate == GateMode::fixed ? "fixed" : "learnable"},
      {"pooling", pooling == TextPooling::average ? "average" : "attention"},
      {"related_branch", related_branch ? "true" : "false"},
      {"lambda_rel", format_double(lambda_rel)},
      {"lambda_man", format_double(lambda_man)},
      {"rho_miss", format_double(rho_miss)},
      {"rho_unrel", format_double(rho_unrel)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"patience", std::to_string(patience)},
      {"lr", format_double(lr)},
      {"model_seed", std::to_string(seed)},
  };
}

void ModelConfig::validate() const {
  if (image_dim == 0 || text_dim == 0 || balanced_dim == 0 || hidden_dim == 0 || attention_dim == 0) {
    fail(ErrorCode::invalid_argument, "model dims must be > 0");
  }
  const auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!rate_ok(rho_miss) || !rate_ok(rho_unrel)) {
    fail(ErrorCode::invalid_argument, "rho_miss and rho_unrel must lie in [0, 1]");
  }
  if (batch_size == 0) fail(ErrorCode::invalid_argument, "batch_size must be > 0");
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<std::pair<std::string, const Matrix*>> ModelParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  const auto layer = [&](const char* name, const DenseLayer& l) {
    if (l.empty()) return;
    out.emplace_back(std::string(name) + ".w", &l.weight);
    out.emplace_back(std::string(name) + ".b", &l.bias);
  };
  layer("bal_image", bal_image);
  layer("bal_text", bal_text);
  layer("bal_gps", bal_gps);
  if (att_w.rows > 0) {
    out.emplace_back("att.w", &att_w);
    out.emplace_back("att.c", &att_c);
    out.emplace_back("att.u", &att_u);
  }
  layer("rel_tower", rel_tower);
  layer("rel_combine", rel_combine);
  layer("rel_head", rel_head);
  layer("man_tower", man_tower);
  layer("man_combine", man_combine);
  layer("man_head", man_head);
  layer("gate", gate);
  layer("single", single);
  layer("integrity", integrity);
  return out;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (const auto& [name, m] : std::as_const(*this).tensors()) {
    out.emplace_back(name, const_cast<Matrix*>(m));
  }
  return out;
}

std::vector<Matrix*> ModelParams::tensor_ptrs() {
  std::vector<Matrix*> out;
  for (auto& [_, m] : tensors()) out.push_back(m);
  return out;
}

std::vector<const Matrix*> ModelParams::const_tensor_ptrs() const {
  std::vector<const Matrix*> out;
  for (const auto& [_, m] : tensors()) out.push_back(m);
  return out;
}

ModelParams ModelParams::zeros() const {
  ModelParams z = *this;
  for (Matrix* m : z.tensor_ptrs()) std::fill(m->data.begin(), m->data.end(), 0.0);
  return z;
}

void ModelParams::scale(double s) {
  for (Matrix* m : tensor_ptrs()) {
    for (auto& x : m->data) x *= s;
  }
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : tensors()) n += m->size();
  return n;
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t B = cfg.balanced_dim;
  const std::size_t H = cfg.hidden_dim;
  const std::size_t A = cfg.attention_dim;
  const auto dense = [&](std::size_t in, std::size_t out, Activation act, double bias = 0.0) {
    return nn::init_layer({in, out, act, bias}, rng);
  };

  ModelParams p;
  p.bal_image = dense(cfg.image_dim, B, Activation::relu);
  p.bal_text = dense(cfg.text_dim, B, Activation::relu);
  p.bal_gps = dense(2, B, Activation::relu);
  if (cfg.pooling == TextPooling::attention) {
    p.att_w = Matrix(A, cfg.text_dim);
    const double sw = std::sqrt(2.0 / static_cast<double>(A + cfg.text_dim));
    for (auto& x : p.att_w.data) x = rng.normal() * sw;
    p.att_c = Matrix(A, 1);
    p.att_u = Matrix(A, 1);  // zero: training starts from uniform weights
  }
  if (cfg.related_branch) {
    p.rel_tower = dense(3 * B, H, Activation::relu);
    p.rel_combine = dense(3 * H, H, Activation::relu);
    p.rel_head = dense(H, 1, Activation::identity);
    p.man_tower = dense(3 * B, H, Activation::relu);
    p.man_combine = dense(3 * H, H, Activation::relu);
    p.man_head = dense(H, 3, Activation::identity);
    if (cfg.gate == GateMode::learnable) p.gate = dense(H, H, Activation::sigmoid, 1.0);
  }
  p.single = dense(3 * B, H, Activation::relu);
  p.integrity = dense(cfg.related_branch ? 2 * H : H, 1, Activation::identity);
  return p;
}

// ---------------------------------------------------------------------------
// Forward pieces with traces for the backward pass

namespace {

struct AttentionTrace {
  Matrix e;  // tanh activations, tokens x attention_dim
  Vector alpha;
  bool present = false;
};

struct BalanceTrace {
  DenseCache img, txt, gps;
  AttentionTrace att;
  Vector out;
};

struct SiameseTrace {
  DenseCache tq, tr, combine;
};

struct Trace {
  BalanceTrace q, r;
  SiameseTrace rel, man;
  DenseCache rel_head, man_head, gate, single, integrity;
  double rel_prob = 0.0;
  Vector man_probs;
  Vector gated;
  double integrity_prob = 0.0;
};

// pooled = h_0 + sum_i alpha_i (h_i - h_0); equal to sum_i alpha_i h_i since
// the weights sum to 1, and exact for a single token or identical tokens.
AttentionResult attention_impl(const Matrix& tokens, const ModelParams& p, AttentionTrace* trace) {
  const std::size_t n = tokens.rows;
  const std::size_t d = tokens.cols;
  AttentionResult res{Vector(d, 0.0), {}, false};
  if (n == 0) {
    if (trace) *trace = {};
    return res;
  }
  const std::size_t A = p.att_w.rows;
  Matrix e(n, A);
  Vector scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = tokens.row(i);
    double s = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      const double v = std::tanh(dot(p.att_w.row(a), h) + p.att_c.data[a]);
      e(i, a) = v;
      s += p.att_u.data[a] * v;
    }
    scores[i] = s;
  }
  res.weights = nn::softmax(scores);
  const auto h0 = tokens.row(0);
  std::copy(h0.begin(), h0.end(), res.pooled.begin());
  for (std::size_t i = 1; i < n; ++i) {
    const auto h = tokens.row(i);
    for (std::size_t c = 0; c < d; ++c) res.pooled[c] += res.weights[i] * (h[c] - h0[c]);
  }
  res.present = true;
  if (trace) *trace = {std::move(e), res.weights, true};
  return res;
}

void attention_backward(const Matrix& tokens, const ModelParams& p, const AttentionTrace& t,
                        std::span<const double> d_out, ModelParams& g) {
  if (!t.present) return;
  const std::size_t n = tokens.rows;
  const std::size_t A = p.att_w.rows;
  const auto h0 = tokens.row(0);
  Vector d_alpha(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const auto h = tokens.row(i);
    double s = 0.0;
    for (std::size_t c = 0; c < h.size(); ++c) s += d_out[c] * (h[c] - h0[c]);
    d_alpha[i] = s;
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += t.alpha[i] * d_alpha[i];
  for (std::size_t i = 0; i < n; ++i) {
    const double ds = t.alpha[i] * (d_alpha[i] - mean);
    if (ds == 0.0) continue;
    const auto h = tokens.row(i);
    for (std::size_t a = 0; a < A; ++a) {
      const double e = t.e(i, a);
      g.att_u.data[a] += ds * e;
      const double dpre = ds * p.att_u.data[a] * (1.0 - e * e);
      g.att_c.data[a] += dpre;
      auto gw = g.att_w.row(a);
      for (std::size_t c = 0; c < h.size(); ++c) gw[c] += dpre * h[c];
    }
  }
}

Vector balance_impl(const FeatureBundle& b, const ModelParams& p, const ModelConfig& cfg,
                    BalanceTrace* trace) {
  Vector text;
  if (cfg.pooling == TextPooling::attention) {
    text = attention_impl(b.text_tokens, p, trace ? &trace->att : nullptr).pooled;
    if (text.size() != cfg.text_dim) text.assign(cfg.text_dim, 0.0);
  } else {
    text = b.text_pooled;
  }
  const Vector img = nn::dense_forward(p.bal_image, b.image, trace ? &trace->img : nullptr);
  const Vector txt = nn::dense_forward(p.bal_text, text, trace ? &trace->txt : nullptr);
  const Vector gps = nn::dense_forward(p.bal_gps, b.gps, trace ? &trace->gps : nullptr);
  Vector out;
  out.reserve(img.size() + txt.size() + gps.size());
  out.insert(out.end(), img.begin(), img.end());
  out.insert(out.end(), txt.begin(), txt.end());
  out.insert(out.end(), gps.begin(), gps.end());
  if (trace) trace->out = out;
  return out;
}

void balance_backward(const FeatureBundle& b, const ModelParams& p, const ModelConfig& cfg,
                      const BalanceTrace& t, std::span<const double> d_out, ModelParams& g) {
  const std::size_t B = cfg.balanced_dim;
  nn::dense_backward(p.bal_image, t.img, d_out.subspan(0, B), g.bal_image);
  const Vector d_text = nn::dense_backward(p.bal_text, t.txt, d_out.subspan(B, B), g.bal_text);
  nn::dense_backward(p.bal_gps, t.gps, d_out.subspan(2 * B, B), g.bal_gps);
  if (cfg.pooling == TextPooling::attention) attention_backward(b.text_tokens, p, t.att, d_text, g);
}

Vector siamese_impl(const DenseLayer& tower, const DenseLayer& combine, std::span<const double> q,
                    std::span<const double> r, SiameseTrace* trace) {
  const Vector fq = nn::dense_forward(tower, q, trace ? &trace->tq : nullptr);
  const Vector fr = nn::dense_forward(tower, r, trace ? &trace->tr : nullptr);
  Vector comb;
  comb.reserve(3 * fq.size());
  comb.insert(comb.end(), fq.begin(), fq.end());
  comb.insert(comb.end(), fr.begin(), fr.end());
  for (std::size_t i = 0; i < fq.size(); ++i) comb.push_back(std::abs(fq[i] - fr[i]));
  return nn::dense_forward(combine, comb, trace ? &trace->combine : nullptr);
}

void siamese_backward(const DenseLayer& tower, const DenseLayer& combine, DenseLayer& g_tower,
                      DenseLayer& g_combine, const SiameseTrace& t, std::span<const double> d_feat,
                      Vector& d_q, Vector& d_r) {
  const Vector d_comb = nn::dense_backward(combine, t.combine, d_feat, g_combine);
  const std::size_t H = t.tq.out.size();
  Vector d_fq(H), d_fr(H);
  for (std::size_t i = 0; i < H; ++i) {
    const double diff = t.tq.out[i] - t.tr.out[i];
    const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    d_fq[i] = d_comb[i] + sgn * d_comb[2 * H + i];
    d_fr[i] = d_comb[H + i] - sgn * d_comb[2 * H + i];
  }
  const Vector dq = nn::dense_backward(tower, t.tq, d_fq, g_tower);
  const Vector dr = nn::dense_backward(tower, t.tr, d_fr, g_tower);
  for (std::size_t i = 0; i < dq.size(); ++i) {
    d_q[i] += dq[i];
    d_r[i] += dr[i];
  }
}

ModelOutput forward_impl(const ModelParams& p, const ModelConfig& cfg, const FeatureBundle& query,
                         const FeatureBundle* retrieved, Trace* t) {
  if (cfg.related_branch && !retrieved) {
    fail(ErrorCode::invalid_argument, "related branch needs a retrieved package");
  }
  ModelOutput out;
  const Vector qb = balance_impl(query, p, cfg, t ? &t->q : nullptr);
  const Vector single = nn::dense_forward(p.single, qb, t ? &t->single : nullptr);

  Vector head_in;
  if (cfg.related_branch) {
    const Vector rb = balance_impl(*retrieved, p, cfg, t ? &t->r : nullptr);
    const Vector rel_feat = siamese_impl(p.rel_tower, p.rel_combine, qb, rb, t ? &t->rel : nullptr);
    const double rel_prob = nn::sigmoid(nn::dense_forward(p.rel_head, rel_feat, t ? &t->rel_head : nullptr)[0]);
    const Vector man_raw = siamese_impl(p.man_tower, p.man_combine, qb, rb, t ? &t->man : nullptr);
    const Vector man_probs = nn::softmax(nn::dense_forward(p.man_head, man_raw, t ? &t->man_head : nullptr));
    Vector gated;
    if (cfg.gate == GateMode::fixed) {
      gated = man_raw;
      for (auto& x : gated) x *= rel_prob;
    } else {
      const Vector s = nn::dense_forward(p.gate, rel_feat, t ? &t->gate : nullptr);
      gated.resize(man_raw.size());
      for (std::size_t i = 0; i < man_raw.size(); ++i) gated[i] = man_raw[i] * s[i];
    }
    out.relationship_prob = rel_prob;
    std::copy(man_probs.begin(), man_probs.end(), out.manipulation_probs.begin());
    head_in = gated;
    head_in.insert(head_in.end(), single.begin(), single.end());
    if (t) {
      t->rel_prob = rel_prob;
      t->man_probs = man_probs;
      t->gated = std::move(gated);
    }
  } else {
    head_in = single;
  }
  out.integrity_prob = nn::sigmoid(nn::dense_forward(p.integrity, head_in, t ? &t->integrity : nullptr)[0]);
  if (t) t->integrity_prob = out.integrity_prob;
  return out;
}

}  // namespace

AttentionResult attention_pool(const Matrix& tokens, const ModelParams& params) {
  return attention_impl(tokens, params, nullptr);
}

Vector balance(const FeatureBundle& bundle, const ModelParams& params, const ModelConfig& cfg) {
  return balance_impl(bundle, params, cfg, nullptr);
}

Vector siamese_features(const DenseLayer& tower, std::span<const double> q_bal,
                        std::span<const double> r_bal) {
  const Vector fq = nn::dense_forward(tower, q_bal);
  const Vector fr = nn::dense_forward(tower, r_bal);
  Vector comb = fq;
  comb.insert(comb.end(), fr.begin(), fr.end());
  for (std::size_t i = 0; i < fq.size(); ++i) comb.push_back(std::abs(fq[i] - fr[i]));
  return comb;
}

RelatedOutput related_forward(std::span<const double> q_bal, std::span<const double> r_bal,
                              const ModelParams& p) {
  RelatedOutput out;
  out.rel_feat = siamese_impl(p.rel_tower, p.rel_combine, q_bal, r_bal, nullptr);
  out.relationship_prob = nn::sigmoid(nn::dense_forward(p.rel_head, out.rel_feat)[0]);
  out.manip_feat_raw = siamese_impl(p.man_tower, p.man_combine, q_bal, r_bal, nullptr);
  const Vector probs = nn::softmax(nn::dense_forward(p.man_head, out.manip_feat_raw));
  std::copy(probs.begin(), probs.end(), out.manipulation_probs.begin());
  return out;
}

Vector apply_gate(GateMode mode, const DenseLayer& gate, double rel_prob,
                  std::span<const double> rel_feat, std::span<const double> manip_feat_raw) {
  Vector out(manip_feat_raw.begin(), manip_feat_raw.end());
  if (mode == GateMode::fixed) {
    for (auto& x : out) x *= rel_prob;
  } else {
    const Vector s = nn::dense_forward(gate, rel_feat);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s[i];
  }
  return out;
}

Vector single_forward(std::span<const double> q_bal, const ModelParams& params) {
  return nn::dense_forward(params.single, q_bal);
}

double integrity_forward(std::span<const double> gated_feat, std::span<const double> single_feat,
                         const ModelParams& params, bool related_branch) {
  Vector in;
  if (related_branch) in.assign(gated_feat.begin(), gated_feat.end());
  in.insert(in.end(), single_feat.begin(), single_feat.end());
  return nn::sigmoid(nn::dense_forward(params.integrity, in)[0]);
}

ModelOutput forward(const ModelParams& params, const ModelConfig& cfg, const FeatureBundle& query,
                    const FeatureBundle* retrieved) {
  return forward_impl(params, cfg, query, retrieved, nullptr);
}

double multitask_loss(const ModelOutput& out, const Labels& labels, double lambda_rel,
                      double lambda_man, bool related_branch) {
  double loss = nn::binary_xent(out.integrity_prob, labels.integrity);
  if (related_branch) {
    loss += lambda_rel * nn::binary_xent(out.relationship_prob, labels.relationship);
    loss += lambda_man * nn::categorical_xent(out.manipulation_probs, labels.manipulation);
  }
  return loss;
}

double sample_loss(const ModelParams& p, const ModelConfig& cfg, const FeatureBundle& query,
                   const FeatureBundle* retrieved, const Labels& labels, ModelParams* g,
                   double weight) {
  Trace t;
  const ModelOutput out = forward_impl(p, cfg, query, retrieved, g ? &t : nullptr);
  const double loss = multitask_loss(out, labels, cfg.lambda_rel, cfg.lambda_man, cfg.related_branch);
  if (!g) return loss;

  const std::size_t H = cfg.hidden_dim;
  const double dz = weight * nn::binary_xent_grad_logit(t.integrity_prob, labels.integrity);
  const Vector d_head_in = nn::dense_backward(p.integrity, t.integrity, std::array{dz}, g->integrity);
  std::span<const double> d_single(d_head_in);
  Vector d_qb(3 * cfg.balanced_dim, 0.0);

  if (cfg.related_branch) {
    const std::span<const double> d_gated(d_head_in.data(), H);
    d_single = std::span<const double>(d_head_in.data() + H, H);

    const Vector& man_raw = t.man.combine.out;
    double d_rel_logit = weight * cfg.lambda_rel * nn::binary_xent_grad_logit(t.rel_prob, labels.relationship);
    Vector d_man_raw(H, 0.0);
    Vector d_rel_feat(H, 0.0);
    if (cfg.gate == GateMode::fixed) {
      double d_rel_prob = 0.0;
      for (std::size_t i = 0; i < H; ++i) {
        d_man_raw[i] += t.rel_prob * d_gated[i];
        d_rel_prob += man_raw[i] * d_gated[i];
      }
      d_rel_logit += d_rel_prob * t.rel_prob * (1.0 - t.rel_prob);
    } else {
      const Vector& s = t.gate.out;
      Vector d_s(H);
      for (std::size_t i = 0; i < H; ++i) {
        d_man_raw[i] += s[i] * d_gated[i];
        d_s[i] = man_raw[i] * d_gated[i];
      }
      const Vector d = nn::dense_backward(p.gate, t.gate, d_s, g->gate);
      for (std::size_t i = 0; i < H; ++i) d_rel_feat[i] += d[i];
    }

    Vector d_man_logits = nn::categorical_xent_grad_logits(t.man_probs, labels.manipulation);
    for (auto& x : d_man_logits) x *= weight * cfg.lambda_man;
    {
      const Vector d = nn::dense_backward(p.man_head, t.man_head, d_man_logits, g->man_head);
      for (std::size_t i = 0; i < H; ++i) d_man_raw[i] += d[i];
    }
    {
      const Vector d = nn::dense_backward(p.rel_head, t.rel_head, std::array{d_rel_logit}, g->rel_head);
      for (std::size_t i = 0; i < H; ++i) d_rel_feat[i] += d[i];
    }

    Vector d_rb(3 * cfg.balanced_dim, 0.0);
    siamese_backward(p.rel_tower, p.rel_combine, g->rel_tower, g->rel_combine, t.rel, d_rel_feat, d_qb, d_rb);
    siamese_backward(p.man_tower, p.man_combine, g->man_tower, g->man_combine, t.man, d_man_raw, d_qb, d_rb);
    balance_backward(*retrieved, p, cfg, t.r, d_rb, *g);
  }

  const Vector d = nn::dense_backward(p.single, t.single, d_single, g->single);
  for (std::size_t i = 0; i < d_qb.size(); ++i) d_qb[i] += d[i];
  balance_backward(query, p, cfg, t.q, d_qb, *g);
  return loss;
}

// ---------------------------------------------------------------------------
// Training

namespace {

Labels labels_for(const Example& q, bool related) {
  Labels l;
  l.integrity = q.tampered() ? 1 : 0;
  l.relationship = related ? 1 : 0;
  l.manipulation = related ? (q.tampered() ? kManManipulated : kManClean) : kManUnknown;
  return l;
}

}  // namespace

std::vector<TrainingPair> build_training_pairs(const std::vector<Example>& queries,
                                               const ReferenceSet& refs, const ModelConfig& cfg,
                                               std::uint64_t seed) {
  if (!refs.index || refs.index->empty()) fail(ErrorCode::empty_index, "reference index is empty");
  const ReferenceIndex& index = *refs.index;
  std::vector<TrainingPair> pairs;
  pairs.reserve(queries.size());
  for (const auto& q : queries) {
    const auto top = retrieve_top_k(q.bundle, index, kAllModalities, 1);
    const std::size_t row = index.row_of(top.top_id());
    const bool related = refs.rows[row]->cluster == q.cluster;
    pairs.push_back({&q, row, labels_for(q, related), false});
  }

  Rng rng(mix_seed(seed, 0x11E));
  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto n_inject = static_cast<std::size_t>(
      std::llround(cfg.rho_unrel * static_cast<double>(queries.size())));
  for (std::size_t k = 0; k < n_inject && k < order.size(); ++k) {
    const Example& q = queries[order[k]];
    std::size_t row = 0;
    bool found = false;
    for (std::size_t attempt = 0; attempt < 256 && !found; ++attempt) {
      row = rng.below(index.size());
      found = refs.rows[row]->cluster != q.cluster;
    }
    if (!found) continue;
    pairs.push_back({&q, row, labels_for(q, false), true});
  }
  return pairs;
}

std::string TrainResult::log_text() const {
  std::ostringstream out;
  for (const auto& e : log) {
    out << "epoch\t" << e.epoch << "\ttrain_loss\t" << format_double(e.train_loss) << "\tval_auc\t"
        << format_double(e.val_auc) << "\tpairs\t" << e.pairs << "\tdropped\t" << e.dropped_modalities
        << "\n";
  }
  out << "best_epoch\t" << best_epoch << "\n";
  out << "best_val_auc\t" << format_double(best_val_auc) << "\n";
  return out.str();
}

namespace {

double validation_auc(const std::vector<Example>& val, const std::vector<std::size_t>& val_rows,
                      const ReferenceSet& refs, const ModelParams& params, const ModelConfig& cfg) {
  if (val.empty()) return std::nan("");
  std::vector<double> scores;
  std::vector<int> labels;
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const FeatureBundle* r = cfg.related_branch ? &refs.index->bundle(val_rows[i]) : nullptr;
    scores.push_back(forward(params, cfg, val[i].bundle, r).integrity_prob);
    labels.push_back(val[i].tampered() ? 1 : 0);
    (val[i].tampered() ? pos : neg) = true;
  }
  if (!pos || !neg) return std::nan("");
  return roc_auc(scores, labels);
}

}  // namespace

TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const ReferenceSet& refs, const ModelConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) fail(ErrorCode::invalid_argument, "training split is empty");
  const bool related = cfg.related_branch;
  if (related && (!refs.index || refs.index->empty())) {
    fail(ErrorCode::empty_index, "reference index is empty; the related branch needs retrievals");
  }

  std::vector<TrainingPair> pairs;
  if (related) {
    pairs = build_training_pairs(train_set, refs, cfg, mix_seed(cfg.seed, 1));
  } else {
    for (const auto& q : train_set) pairs.push_back({&q, 0, labels_for(q, false), false});
  }
  std::vector<std::size_t> val_rows;
  if (related) {
    for (const auto& v : val_set) {
      val_rows.push_back(refs.index->row_of(retrieve_top_k(v.bundle, *refs.index, kAllModalities, 1).top_id()));
    }
  }

  TrainResult result;
  ModelParams params = init_model(cfg, mix_seed(cfg.seed, 2));
  nn::AdamState adam = nn::adam_init(params.tensor_ptrs(), {cfg.lr, 0.9, 0.999, 1e-8});
  Rng rng(mix_seed(cfg.seed, 3));

  result.params = params;
  double best = -1.0;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLog entry;
    entry.epoch = epoch;
    entry.pairs = pairs.size();
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      ModelParams grads = params.zeros();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const TrainingPair& pair = pairs[order[k]];
        const FeatureBundle* r = nullptr;
        FeatureBundle degraded;
        if (related) {
          r = &refs.index->bundle(pair.retrieved_row);
          if (cfg.rho_miss > 0.0 && rng.bernoulli(cfg.rho_miss)) {
            degraded = *r;
            drop_modality(degraded, kAllModalities[rng.below(3)]);
            r = &degraded;
            ++entry.dropped_modalities;
          }
        }
        batch_loss += sample_loss(params, cfg, pair.query->bundle, r, pair.labels, &grads, w);
      }
      if (!std::isfinite(batch_loss)) {
        fail(ErrorCode::diverged, "non-finite training loss at epoch " + std::to_string(epoch) +
                                      ", batch starting at pair " + std::to_string(start));
      }
      epoch_loss += batch_loss;
      nn::adam_step(params.tensor_ptrs(), grads.const_tensor_ptrs(), adam);
    }
    entry.train_loss = epoch_loss / static_cast<double>(pairs.size());
    entry.val_auc = validation_auc(val_set, val_rows, refs, params, cfg);
    result.log.push_back(entry);

    if (std::isnan(entry.val_auc) || entry.val_auc > best) {
      if (!std::isnan(entry.val_auc)) best = entry.val_auc;
      result.params = params;
      result.best_epoch = epoch;
      result.best_val_auc = entry.val_auc;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

ModelOutput predict(const Example& query, const ReferenceSet& refs, const ModelParams& params,
                    const ModelConfig& cfg) {
  if (!cfg.related_branch) return forward(params, cfg, query.bundle, nullptr);
  if (!refs.index || refs.index->empty()) fail(ErrorCode::empty_index, "reference index is empty");
  const auto top = retrieve_top_k(query.bundle, *refs.index, kAllModalities, 1);
  ModelOutput out = forward(params, cfg, query.bundle, &refs.index->bundle(top.top_id()));
  out.retrieved_id = top.top_id();
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = "meir-checkpoint 1\n";
  const auto section = [&](const char* name, const std::map<std::string, std::string>& kv) {
    out += std::string(name) + " " + std::to_string(kv.size()) + "\n";
    for (const auto& [k, v] : kv) out += k + "\t" + v + "\n";
  };
  section("config", ckpt.config.snapshot());
  section("extra", ckpt.extra);
  nn::NamedTensors tensors;
  for (const auto& [name, m] : ckpt.params.tensors()) tensors.emplace_back(name, *m);
  out += nn::serialize_tensors(tensors);
  return out;
}

Checkpoint parse_checkpoint(std::string_view text) {
  std::size_t pos = 0;
  const auto next_line = [&]() -> std::string_view {
    if (pos >= text.size()) fail(ErrorCode::format, "checkpoint: unexpected end of file");
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != "meir-checkpoint 1") fail(ErrorCode::format, "checkpoint: bad magic line");
  const auto section = [&](std::string_view name) {
    const auto header = next_line();
    if (header.substr(0, name.size()) != name) {
      fail(ErrorCode::format, "checkpoint: expected section '" + std::string(name) + "'");
    }
    const std::size_t count = std::stoul(std::string(header.substr(name.size())));
    std::map<std::string, std::string> kv;
    for (std::size_t i = 0; i < count; ++i) {
      const auto line = next_line();
      const auto tab = line.find('\t');
      if (tab == std::string_view::npos) fail(ErrorCode::format, "checkpoint: bad key/value line");
      kv.emplace(std::string(line.substr(0, tab)), std::string(line.substr(tab + 1)));
    }
    return kv;
  };

  Checkpoint ckpt;
  ckpt.config = ModelConfig::from(Config(section("config")));
  ckpt.extra = section("extra");
  ckpt.params = init_model(ckpt.config, 0);
  const nn::NamedTensors tensors = nn::parse_tensors(text.substr(pos));
  auto slots = ckpt.params.tensors();
  if (tensors.size() != slots.size()) {
    fail(ErrorCode::format, "checkpoint: expected " + std::to_string(slots.size()) + " tensors, found " +
                                std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& [name, m] = tensors[i];
    if (name != slots[i].first || m.rows != slots[i].second->rows || m.cols != slots[i].second->cols) {
      fail(ErrorCode::format, "checkpoint: tensor '" + name + "' does not match configuration slot '" +
                                  slots[i].first + "'");
    }
    *slots[i].second = m;
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace meir
