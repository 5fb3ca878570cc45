#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "meir/config.hpp"
#include "meir/dataset.hpp"
#include "meir/nn.hpp"

namespace meir {

enum class GateMode { fixed, learnable };
enum class TextPooling { average, attention };

struct ModelConfig {
  std::size_t image_dim = 64;
  std::size_t text_dim = 32;
  std::size_t balanced_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t attention_dim = 32;
  GateMode gate = GateMode::learnable;
  TextPooling pooling = TextPooling::attention;
  bool related_branch = true;  // false = single package assessment
  double lambda_rel = 1.0;
  double lambda_man = 1.0;
  double rho_miss = 0.0;
  double rho_unrel = 0.3;
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  std::size_t patience = 15;
  double lr = 0.001;
  std::uint64_t seed = 0;

  /// Reads model keys from `cfg`; dims default to `embed` when unset there.
  static ModelConfig from(const Config& cfg, const EmbeddingConfig& embed = {});
  std::map<std::string, std::string> snapshot() const;
  void validate() const;
};

/// Manipulation classes of the auxiliary head.
enum ManipulationClass : std::size_t { kManClean = 0, kManManipulated = 1, kManUnknown = 2 };

/// Every trainable tensor. Layers that the configuration disables stay empty
/// and are absent from tensors().
struct ModelParams {
  nn::DenseLayer bal_image;
  nn::DenseLayer bal_text;
  nn::DenseLayer bal_gps;
  Matrix att_w;  // attention_dim x text_dim
  Matrix att_c;  // attention_dim x 1
  Matrix att_u;  // attention_dim x 1
  nn::DenseLayer rel_tower;
  nn::DenseLayer rel_combine;
  nn::DenseLayer rel_head;
  nn::DenseLayer man_tower;
  nn::DenseLayer man_combine;
  nn::DenseLayer man_head;
  nn::DenseLayer gate;
  nn::DenseLayer single;
  nn::DenseLayer integrity;

  /// Name/tensor pairs in a fixed order; this order is the checkpoint layout.
  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  std::vector<Matrix*> tensor_ptrs();
  std::vector<const Matrix*> const_tensor_ptrs() const;
  ModelParams zeros() const;
  void scale(double s);
  std::size_t parameter_count() const;
};

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

struct ModelOutput {
  double integrity_prob = 0.0;
  double relationship_prob = 0.0;
  std::array<double, 3> manipulation_probs{0.0, 0.0, 1.0};
  std::string retrieved_id;
};

struct Labels {
  int integrity = 0;     // 1 = manipulated
  int relationship = 0;  // 1 = same cluster
  std::size_t manipulation = kManUnknown;
};

// Building blocks, exposed for testing.

struct AttentionResult {
  Vector pooled;
  Vector weights;
  bool present = false;
};

/// alpha_i = softmax_i(u . tanh(W h_i + c)); output sum_i alpha_i h_i.
AttentionResult attention_pool(const Matrix& tokens, const ModelParams& params);

/// Per-modality dense+relu to balanced_dim, concatenated image, text, gps.
Vector balance(const FeatureBundle& bundle, const ModelParams& params, const ModelConfig& cfg);

struct RelatedOutput {
  double relationship_prob = 0.0;
  Vector rel_feat;
  Vector manip_feat_raw;
  std::array<double, 3> manipulation_probs{};
};

RelatedOutput related_forward(std::span<const double> q_bal, std::span<const double> r_bal,
                              const ModelParams& params);

/// Siamese combination [f_q, f_r, |f_q - f_r|] of one shared tower.
Vector siamese_features(const nn::DenseLayer& tower, std::span<const double> q_bal,
                        std::span<const double> r_bal);

Vector apply_gate(GateMode mode, const nn::DenseLayer& gate, double rel_prob,
                  std::span<const double> rel_feat, std::span<const double> manip_feat_raw);

Vector single_forward(std::span<const double> q_bal, const ModelParams& params);

/// Sigmoid of one affine layer over [gated, single] (or [single] without the
/// related branch).
double integrity_forward(std::span<const double> gated_feat, std::span<const double> single_feat,
                         const ModelParams& params, bool related_branch);

/// Full forward pass. `retrieved` may be null only when the related branch is off.
ModelOutput forward(const ModelParams& params, const ModelConfig& cfg, const FeatureBundle& query,
                    const FeatureBundle* retrieved);

/// L = BCE(integrity) + lambda_rel BCE(relationship) + lambda_man CE3(manipulation).
/// Auxiliary terms are dropped without the related branch.
double multitask_loss(const ModelOutput& out, const Labels& labels, double lambda_rel,
                      double lambda_man, bool related_branch = true);

/// Loss of one sample; when `grads` is set, adds `weight` * dL/dparams into it.
double sample_loss(const ModelParams& params, const ModelConfig& cfg, const FeatureBundle& query,
                   const FeatureBundle* retrieved, const Labels& labels, ModelParams* grads,
                   double weight = 1.0);

// ---------------------------------------------------------------------------
// Training

struct TrainingPair {
  const Example* query = nullptr;
  std::size_t retrieved_row = 0;  // row in the reference index
  Labels labels;
  bool injected = false;
};

/// Pairs each query with its top-1 retrieval (relationship = same cluster;
/// manipulation label = the query's label if related, else unknown) and adds
/// round(rho_unrel * n) duplicates paired with a random unrelated reference.
std::vector<TrainingPair> build_training_pairs(const std::vector<Example>& queries,
                                               const ReferenceSet& refs, const ModelConfig& cfg,
                                               std::uint64_t seed);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  std::size_t pairs = 0;
  std::size_t dropped_modalities = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;

  std::string log_text() const;
};

/// Shuffled minibatch Adam on the multitask loss with early stopping on
/// validation AUC; returns the parameters from the best epoch.
TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const ReferenceSet& refs, const ModelConfig& cfg);

ModelOutput predict(const Example& query, const ReferenceSet& refs, const ModelParams& params,
                    const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints: config snapshot plus the tensor dump.

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::map<std::string, std::string> extra;  // provenance, e.g. data dir and seed
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace meir
