#include "meir/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "meir/config.hpp"
#include "meir/error.hpp"
#include "meir/random.hpp"

namespace meir {

// ---------------------------------------------------------------------------
// Metrics

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorCode::invalid_argument, "roc_auc: scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l != 0 ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorCode::invalid_argument, "roc_auc: need both classes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Ranks are doubled so tie averages stay integral.
  double pos_rank_sum2 = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank2 = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) pos_rank_sum2 += avg_rank2;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u2 = pos_rank_sum2 - np * (np + 1.0);
  return u2 / (2.0 * np * static_cast<double>(n_neg));
}

F1Scores f1_scores(std::span<const int> labels, std::span<const double> predictions, double threshold) {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool truth = labels[i] != 0;
    const bool pred = predictions[i] >= threshold;
    if (truth && pred) ++tp;
    else if (!truth && pred) ++fp;
    else if (truth && !pred) ++fn;
    else ++tn;
  }
  const auto f1 = [](std::size_t t, std::size_t f_pos, std::size_t f_neg) {
    const std::size_t denom = 2 * t + f_pos + f_neg;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(t) / static_cast<double>(denom);
  };
  return {f1(tp, fp, fn), f1(tn, fn, fp)};
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Projection

Matrix gaussian_projection(std::size_t d, std::size_t L, std::uint64_t seed) {
  if (L == 0) fail(ErrorCode::invalid_argument, "projection dimension must be >= 1");
  Rng rng(mix_seed(seed, 0x9A0));
  Matrix r(d, L);
  const double scale = 1.0 / std::sqrt(static_cast<double>(L));
  for (auto& x : r.data) x = rng.normal() * scale;
  return r;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) fail(ErrorCode::invalid_argument, "matmul: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

Matrix random_projection(const Matrix& x, std::size_t L, std::uint64_t seed) {
  return matmul(x, gaussian_projection(x.cols, L, seed));
}

// ---------------------------------------------------------------------------
// Random forest

namespace {

double gini(double pos, double total) {
  if (total <= 0.0) return 0.0;
  const double p = pos / total;
  return 2.0 * p * (1.0 - p);
}

struct NodeSplit {
  int feature = -1;
  double threshold = 0.0;
  double decrease = 0.0;  // weighted impurity decrease at this node
};

class TreeBuilder {
 public:
  // `xt` is the transposed design matrix (features x samples).
  TreeBuilder(const Matrix& xt, std::span<const int> y, std::size_t max_depth, Rng& rng, Vector& importance)
      : xt_(xt), y_(y), max_depth_(max_depth), rng_(rng), importance_(importance),
        try_features_(std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(xt.rows))))) {}

  std::vector<TreeNode> build(std::vector<std::size_t> samples) {
    total_ = static_cast<double>(samples.size());
    grow(samples, 0);
    return std::move(nodes_);
  }

 private:
  int grow(std::vector<std::size_t>& samples, std::size_t depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double pos = 0.0;
    for (auto s : samples) pos += y_[s] != 0 ? 1.0 : 0.0;
    const double n = static_cast<double>(samples.size());
    nodes_[id].positive_rate = pos / n;
    if (depth >= max_depth_ || pos == 0.0 || pos == n || samples.size() < 2) return id;

    const NodeSplit best = find_split(samples, pos);
    if (best.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto s : samples) {
      (xt_(static_cast<std::size_t>(best.feature), s) <= best.threshold ? left : right).push_back(s);
    }
    importance_[static_cast<std::size_t>(best.feature)] += best.decrease;
    nodes_[id].feature = best.feature;
    nodes_[id].threshold = best.threshold;
    samples.clear();
    samples.shrink_to_fit();
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  // Tries sqrt(d) random features; if none admits a split, keeps drawing
  // from the rest until one does or all are exhausted.
  NodeSplit find_split(const std::vector<std::size_t>& samples, double pos) {
    std::vector<std::size_t> features(xt_.rows);
    std::iota(features.begin(), features.end(), 0);
    rng_.shuffle(features);

    const double n = static_cast<double>(samples.size());
    const double parent = gini(pos, n);
    NodeSplit best;
    std::vector<std::pair<double, int>> column(samples.size());
    for (std::size_t tried = 0; tried < features.size(); ++tried) {
      if (tried >= try_features_ && best.feature >= 0) break;
      const std::size_t f = features[tried];
      const auto values = xt_.row(f);
      for (std::size_t i = 0; i < samples.size(); ++i) column[i] = {values[samples[i]], y_[samples[i]]};
      std::sort(column.begin(), column.end());
      double left_pos = 0.0;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        left_pos += column[i].second != 0 ? 1.0 : 0.0;
        if (column[i].first == column[i + 1].first) continue;
        const double nl = static_cast<double>(i + 1);
        const double nr = n - nl;
        const double child = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / n;
        const double decrease = (n / total_) * (parent - child);
        if (decrease > 1e-12 && decrease > best.decrease) {
          best.feature = static_cast<int>(f);
          best.decrease = decrease;
          best.threshold = 0.5 * (column[i].first + column[i + 1].first);
        }
      }
    }
    return best;
  }

  const Matrix& xt_;
  std::span<const int> y_;
  std::size_t max_depth_;
  Rng& rng_;
  Vector& importance_;
  std::size_t try_features_;
  double total_ = 0.0;
  std::vector<TreeNode> nodes_;
};

}  // namespace

RandomForest RandomForest::train(const Matrix& x, std::span<const int> y, const ForestOptions& opts) {
  if (x.rows != y.size() || x.rows == 0) fail(ErrorCode::invalid_argument, "forest: bad training shape");
  const bool has_pos = std::any_of(y.begin(), y.end(), [](int v) { return v != 0; });
  const bool has_neg = std::any_of(y.begin(), y.end(), [](int v) { return v == 0; });
  if (!has_pos || !has_neg) fail(ErrorCode::invalid_argument, "forest: labels contain a single class");

  Matrix xt(x.cols, x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) xt(c, r) = x(r, c);
  }

  RandomForest forest;
  forest.importances_.assign(x.cols, 0.0);
  std::size_t contributing = 0;
  for (std::size_t t = 0; t < opts.trees; ++t) {
    Rng rng(mix_seed(opts.seed, t));
    std::vector<std::size_t> bag(x.rows);
    for (auto& s : bag) s = rng.below(x.rows);
    Vector tree_imp(x.cols, 0.0);
    TreeBuilder builder(xt, y, opts.max_depth, rng, tree_imp);
    forest.trees_.push_back(builder.build(std::move(bag)));
    const double sum = std::accumulate(tree_imp.begin(), tree_imp.end(), 0.0);
    if (sum > 0.0) {
      for (std::size_t f = 0; f < x.cols; ++f) forest.importances_[f] += tree_imp[f] / sum;
      ++contributing;
    }
  }
  const double total = std::accumulate(forest.importances_.begin(), forest.importances_.end(), 0.0);
  if (total > 0.0) {
    for (auto& v : forest.importances_) v /= total;
  }
  return forest;
}

double RandomForest::predict_proba(std::span<const double> row) const {
  double sum = 0.0;
  for (const auto& tree : trees_) {
    int node = 0;
    while (tree[static_cast<std::size_t>(node)].feature >= 0) {
      const auto& nd = tree[static_cast<std::size_t>(node)];
      node = row[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    sum += tree[static_cast<std::size_t>(node)].positive_rate;
  }
  return trees_.empty() ? 0.0 : sum / static_cast<double>(trees_.size());
}

// ---------------------------------------------------------------------------
// Modality importance

std::size_t ImportanceReport::wins(Modality m) const {
  std::size_t count = 0;
  const auto target = static_cast<std::size_t>(m);
  for (const auto& t : per_trial) {
    std::array<double, 3> combined{t[0] + t[3], t[1] + t[4], t[2] + t[5]};
    const auto best = static_cast<std::size_t>(
        std::max_element(combined.begin(), combined.end()) - combined.begin());
    count += best == target ? 1 : 0;
  }
  return count;
}

ImportanceReport modality_importance(const std::vector<PairedSample>& samples, std::size_t L,
                                     std::size_t trials, std::uint64_t seed, ForestOptions forest) {
  if (samples.empty()) fail(ErrorCode::invalid_argument, "importance: no samples");
  const std::size_t n = samples.size();

  // Raw per-modality matrices, one per side.
  std::array<Matrix, 3> raw_q;
  std::array<Matrix, 3> raw_r;
  for (const Modality m : kAllModalities) {
    const auto k = static_cast<std::size_t>(m);
    const std::size_t dim = samples.front().query->slot(m).size();
    raw_q[k] = Matrix(n, dim);
    raw_r[k] = Matrix(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& q = samples[i].query->slot(m);
      const auto& r = samples[i].retrieved->slot(m);
      std::copy(q.begin(), q.end(), raw_q[k].row(i).begin());
      std::copy(r.begin(), r.end(), raw_r[k].row(i).begin());
    }
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = samples[i].label;

  ImportanceReport report;
  report.L = L;
  report.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = seed + t;
    Matrix x(n, 6 * L);
    for (const Modality m : kAllModalities) {
      const auto k = static_cast<std::size_t>(m);
      const Matrix proj = gaussian_projection(raw_q[k].cols, L, mix_seed(trial_seed, k));
      const Matrix pq = matmul(raw_q[k], proj);
      const Matrix pr = matmul(raw_r[k], proj);
      for (std::size_t i = 0; i < n; ++i) {
        std::copy(pq.row(i).begin(), pq.row(i).end(), x.row(i).begin() + static_cast<std::ptrdiff_t>(k * L));
        std::copy(pr.row(i).begin(), pr.row(i).end(),
                  x.row(i).begin() + static_cast<std::ptrdiff_t>((3 + k) * L));
      }
    }
    ForestOptions opts = forest;
    opts.seed = mix_seed(trial_seed, 0xF0);
    const RandomForest rf = RandomForest::train(x, labels, opts);
    std::array<double, 6> blocks{};
    for (std::size_t b = 0; b < 6; ++b) {
      for (std::size_t j = 0; j < L; ++j) blocks[b] += rf.importances()[b * L + j];
    }
    report.per_trial.push_back(blocks);
  }
  for (const auto& b : report.per_trial) {
    for (std::size_t k = 0; k < 3; ++k) {
      report.query[k] += b[k] / static_cast<double>(trials);
      report.retrieved[k] += b[3 + k] / static_cast<double>(trials);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Baseline and evaluation

double srs_score(const FeatureBundle& q, const ReferenceIndex& index, std::size_t k) {
  if (k == 0) fail(ErrorCode::invalid_argument, "srs: k must be >= 1");
  std::array<std::set<std::string>, 3> sets;
  for (const Modality m : kAllModalities) {
    for (const auto& hit : retrieve_per_modality(q, index, m, k).hits) {
      sets[static_cast<std::size_t>(m)].insert(hit.id);
    }
  }
  return (jaccard(sets[0], sets[1]) + jaccard(sets[0], sets[2]) + jaccard(sets[1], sets[2])) / 3.0;
}

RetrievalAccuracy retrieval_accuracy(const std::vector<Example>& queries, const ReferenceSet& refs,
                                     std::span<const Modality> modalities) {
  std::size_t hit_m = 0, n_m = 0, hit_u = 0, n_u = 0;
  for (const auto& q : queries) {
    const auto top = retrieve_top_k(q.bundle, *refs.index, modalities, 1);
    const bool hit = refs.cluster_of.at(top.top_id()) == q.cluster;
    if (q.tampered()) {
      ++n_m;
      hit_m += hit ? 1 : 0;
    } else {
      ++n_u;
      hit_u += hit ? 1 : 0;
    }
  }
  const auto rate = [](std::size_t h, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(h) / static_cast<double>(n);
  };
  return {rate(hit_m, n_m), rate(hit_u, n_u), rate(hit_m + hit_u, n_m + n_u)};
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "auc\t" << format_double(auc) << "\n";
  out << "f1_tampered\t" << format_double(f1_tampered) << "\n";
  out << "f1_clean\t" << format_double(f1_clean) << "\n";
  out << "retrieval_top1_manipulated\t" << format_double(retrieval.manipulated) << "\n";
  out << "retrieval_top1_unmanipulated\t" << format_double(retrieval.unmanipulated) << "\n";
  out << "retrieval_top1_overall\t" << format_double(retrieval.overall) << "\n";
  out << "n_queries\t" << n_queries << "\n";
  out << "n_tampered\t" << n_tampered << "\n";
  out << "n_clean\t" << n_clean << "\n";
  out << "n_reference\t" << n_reference << "\n";
  out << "missing\t" << (missing ? std::string(to_string(*missing)) : std::string("none")) << "\n";
  return out.str();
}

EvalReport evaluate_run(const Scorer& scorer, const std::vector<Example>& queries,
                        const ReferenceSet& refs, std::optional<Modality> missing) {
  EvalReport report;
  report.missing = missing;
  report.n_reference = refs.index->size();
  std::vector<double> scores;
  std::vector<int> labels;
  std::size_t hit_m = 0, hit_u = 0;
  for (const auto& q : queries) {
    const auto top = retrieve_top_k(q.bundle, *refs.index, kAllModalities, 1);
    const std::string& rid = top.top_id();
    const bool hit = refs.cluster_of.at(rid) == q.cluster;
    FeatureBundle retrieved = refs.index->bundle(rid);
    if (missing) drop_modality(retrieved, *missing);
    scores.push_back(scorer(q, retrieved, rid));
    labels.push_back(q.tampered() ? 1 : 0);
    if (q.tampered()) {
      ++report.n_tampered;
      hit_m += hit ? 1 : 0;
    } else {
      ++report.n_clean;
      hit_u += hit ? 1 : 0;
    }
  }
  report.n_queries = queries.size();
  report.auc = roc_auc(scores, labels);
  const F1Scores f1 = f1_scores(labels, scores);
  report.f1_tampered = f1.tampered;
  report.f1_clean = f1.clean;
  const auto rate = [](std::size_t h, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(h) / static_cast<double>(n);
  };
  report.retrieval = {rate(hit_m, report.n_tampered), rate(hit_u, report.n_clean),
                      rate(hit_m + hit_u, report.n_queries)};
  return report;
}

}  // namespace meir
