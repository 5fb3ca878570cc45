#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "meir/dataset.hpp"
#include "meir/retrieval.hpp"

namespace meir {

// ---------------------------------------------------------------------------
// Metrics. Label 1 = tampered (positive class), 0 = clean.

/// Rank-based (Mann-Whitney) AUC; tied scores share their average rank.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct F1Scores {
  double tampered = 0.0;
  double clean = 0.0;
};

/// F1 with tampered as positive, then with clean as positive. A prediction
/// is tampered when its score is >= threshold. Zero denominators give 0.
F1Scores f1_scores(std::span<const int> labels, std::span<const double> predictions,
                   double threshold = 0.5);

/// |A n B| / |A u B|; two empty sets give 1.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

// ---------------------------------------------------------------------------
// Random projection and forests

/// d x L matrix of iid normals with variance 1/L.
Matrix gaussian_projection(std::size_t d, std::size_t L, std::uint64_t seed);
Matrix random_projection(const Matrix& x, std::size_t L, std::uint64_t seed);
Matrix matmul(const Matrix& a, const Matrix& b);

struct ForestOptions {
  std::size_t trees = 50;
  std::size_t max_depth = 8;
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double positive_rate = 0.0;
};

/// Bagged CART trees with Gini splits and sqrt(d) features tried per node.
class RandomForest {
 public:
  static RandomForest train(const Matrix& x, std::span<const int> y, const ForestOptions& opts);

  double predict_proba(std::span<const double> row) const;
  /// Mean decrease in Gini impurity, normalized per tree, averaged, and
  /// normalized to sum 1.
  const Vector& importances() const { return importances_; }
  std::size_t tree_count() const { return trees_.size(); }

 private:
  std::vector<std::vector<TreeNode>> trees_;
  Vector importances_;
};

// ---------------------------------------------------------------------------
// Modality importance

struct PairedSample {
  const FeatureBundle* query = nullptr;
  const FeatureBundle* retrieved = nullptr;
  int label = 0;
};

struct ImportanceReport {
  std::size_t L = 0;
  std::size_t trials = 0;
  std::array<double, 3> query{};      // mean block importance per modality
  std::array<double, 3> retrieved{};
  /// Per trial: query image, text, gps then retrieved image, text, gps.
  std::vector<std::array<double, 6>> per_trial;

  double modality(Modality m) const {
    const auto i = static_cast<std::size_t>(m);
    return query[i] + retrieved[i];
  }
  /// Trials in which `m` has the largest combined block importance.
  std::size_t wins(Modality m) const;
};

/// Per trial: project each modality (shared projection for query and
/// retrieved sides) to L dims, concatenate the six blocks, fit a forest on
/// tampered-vs-clean, and sum importances within each block. Trial t uses
/// seed + t.
ImportanceReport modality_importance(const std::vector<PairedSample>& samples, std::size_t L,
                                     std::size_t trials, std::uint64_t seed,
                                     ForestOptions forest = {});

// ---------------------------------------------------------------------------
// Baseline and evaluation

/// Mean pairwise Jaccard among the top-k id sets retrieved by image, text
/// and gps alone. High means the modalities agree.
double srs_score(const FeatureBundle& q, const ReferenceIndex& index, std::size_t k);

struct RetrievalAccuracy {
  double manipulated = 0.0;
  double unmanipulated = 0.0;
  double overall = 0.0;
};

/// Share of queries whose top-1 retrieval shares their ground-truth cluster.
RetrievalAccuracy retrieval_accuracy(const std::vector<Example>& queries, const ReferenceSet& refs,
                                     std::span<const Modality> modalities);

struct EvalReport {
  double auc = 0.0;
  double f1_tampered = 0.0;
  double f1_clean = 0.0;
  RetrievalAccuracy retrieval;
  std::size_t n_queries = 0;
  std::size_t n_tampered = 0;
  std::size_t n_clean = 0;
  std::size_t n_reference = 0;
  std::optional<Modality> missing;

  /// `metric<TAB>value` lines.
  std::string to_text() const;
};

/// Tamper score in [0, 1] for a query given its (possibly degraded)
/// top-1 retrieval.
using Scorer = std::function<double(const Example& query, const FeatureBundle& retrieved,
                                    const std::string& retrieved_id)>;

/// Retrieves each query's top-1 with every modality, zeroes `missing` in the
/// retrieved bundle when set, and scores. Retrieval accuracy is computed on
/// the unmodified retrievals.
EvalReport evaluate_run(const Scorer& scorer, const std::vector<Example>& queries,
                        const ReferenceSet& refs, std::optional<Modality> missing);

}  // namespace meir
