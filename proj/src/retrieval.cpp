#include "meir/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "meir/error.hpp"

namespace meir {

GpsSimilarity parse_gps_similarity(std::string_view s) {
  if (s == "cosine") return GpsSimilarity::cosine;
  if (s == "neg_euclidean") return GpsSimilarity::neg_euclidean;
  fail(ErrorCode::invalid_argument, "unknown gps similarity '" + std::string(s) + "'");
}

std::string_view to_string(GpsSimilarity s) {
  return s == GpsSimilarity::cosine ? "cosine" : "neg_euclidean";
}

namespace {

double cosine_with_norms(std::span<const double> u, double nu, std::span<const double> v,
                         double nv) {
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot(u, v) / (nu * nv);
}

double neg_distance(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    s += d * d;
  }
  return -std::sqrt(s);
}

void check_dims(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    fail(ErrorCode::invalid_argument, "dimension mismatch: " + std::to_string(u.size()) +
                                          " vs " + std::to_string(v.size()));
  }
}

}  // namespace

double cosine(std::span<const double> u, std::span<const double> v) {
  check_dims(u, v);
  return cosine_with_norms(u, l2_norm(u), v, l2_norm(v));
}

double score_pair(const FeatureBundle& q, const FeatureBundle& r,
                  std::span<const Modality> modalities, GpsSimilarity gps_sim) {
  if (modalities.empty()) fail(ErrorCode::invalid_argument, "empty modality set");
  double s = 0.0;
  for (const Modality m : modalities) {
    const auto& u = q.slot(m);
    const auto& v = r.slot(m);
    check_dims(u, v);
    if (m == Modality::gps && gps_sim == GpsSimilarity::neg_euclidean) {
      s += neg_distance(u, v);
    } else {
      s += cosine(u, v);
    }
  }
  return s;
}

ReferenceIndex::ReferenceIndex(std::vector<std::string> ids, std::vector<FeatureBundle> bundles,
                               GpsSimilarity gps_sim)
    : ids_(std::move(ids)), bundles_(std::move(bundles)), gps_sim_(gps_sim) {
  if (ids_.size() != bundles_.size()) {
    fail(ErrorCode::invalid_argument, "reference ids and bundles differ in count");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!rows_.emplace(ids_[i], i).second) {
      fail(ErrorCode::validation, "duplicate reference id '" + ids_[i] + "'");
    }
  }
  for (const Modality m : kAllModalities) {
    const std::size_t k = idx(m);
    const std::size_t dim = bundles_.empty() ? 0 : bundles_.front().slot(m).size();
    matrices_[k] = Matrix(bundles_.size(), dim);
    norms_[k].resize(bundles_.size());
    for (std::size_t row = 0; row < bundles_.size(); ++row) {
      const auto& v = bundles_[row].slot(m);
      if (v.size() != dim) {
        fail(ErrorCode::validation, "reference '" + ids_[row] + "' has " + std::string(to_string(m)) +
                                        " dim " + std::to_string(v.size()) + ", expected " +
                                        std::to_string(dim));
      }
      std::copy(v.begin(), v.end(), matrices_[k].row(row).begin());
      norms_[k][row] = l2_norm(v);
      mask_[k] = mask_[k] || bundles_[row].has(m);
    }
  }
}

std::size_t ReferenceIndex::row_of(const std::string& id) const {
  const auto it = rows_.find(id);
  if (it == rows_.end()) fail(ErrorCode::not_found, "reference id '" + id + "' not in index");
  return it->second;
}

const FeatureBundle& ReferenceIndex::bundle(const std::string& id) const {
  return bundles_[row_of(id)];
}

RetrievalResult retrieve_top_k(const FeatureBundle& q, const ReferenceIndex& index,
                               std::span<const Modality> modalities, std::size_t k) {
  if (index.empty()) fail(ErrorCode::empty_index, "reference index is empty");
  if (k == 0) fail(ErrorCode::invalid_argument, "k must be >= 1");
  if (modalities.empty()) fail(ErrorCode::invalid_argument, "empty modality set");

  const std::size_t n = index.size();
  Vector scores(n, 0.0);
  for (const Modality m : modalities) {
    const auto& qv = q.slot(m);
    const Matrix& feats = index.features(m);
    if (qv.size() != feats.cols) {
      fail(ErrorCode::invalid_argument, std::string(to_string(m)) + " query dim " +
                                            std::to_string(qv.size()) + " != index dim " +
                                            std::to_string(feats.cols));
    }
    const bool euclid = m == Modality::gps && index.gps_similarity() == GpsSimilarity::neg_euclidean;
    const double qn = l2_norm(qv);
    for (std::size_t row = 0; row < n; ++row) {
      scores[row] += euclid ? neg_distance(qv, feats.row(row))
                            : cosine_with_norms(qv, qn, feats.row(row), index.norm(m, row));
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto& ids = index.ids();
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  const std::size_t take = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    better);

  RetrievalResult out;
  out.modalities.assign(modalities.begin(), modalities.end());
  out.hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.hits.push_back({ids[order[i]], scores[order[i]]});
  return out;
}

RetrievalResult retrieve_per_modality(const FeatureBundle& q, const ReferenceIndex& index,
                                      Modality m, std::size_t k) {
  const std::array<Modality, 1> single{m};
  return retrieve_top_k(q, index, single, k);
}

}  // namespace meir
