#pragma once

#include <array>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "meir/core.hpp"

namespace meir {

/// How the gps slot is compared. `cosine` follows the similarity sum used
/// for every modality; `neg_euclidean` scores -||u - v|| on the normalized pair.
enum class GpsSimilarity { cosine, neg_euclidean };

GpsSimilarity parse_gps_similarity(std::string_view s);
std::string_view to_string(GpsSimilarity s);

/// u.v / (|u||v|), or 0 when either norm is 0.
double cosine(std::span<const double> u, std::span<const double> v);

/// Sum over `modalities` of the per-modality similarity between two bundles.
double score_pair(const FeatureBundle& q, const FeatureBundle& r,
                  std::span<const Modality> modalities,
                  GpsSimilarity gps_sim = GpsSimilarity::cosine);

struct RetrievalHit {
  std::string id;
  double score = 0.0;
};

struct RetrievalResult {
  std::vector<RetrievalHit> hits;  // score non-increasing, ties by ascending id
  std::vector<Modality> modalities;

  const std::string& top_id() const { return hits.front().id; }
};

/// Immutable feature store over the reference dataset. Rows follow insertion
/// order; per-row L2 norms are cached for each modality.
class ReferenceIndex {
 public:
  ReferenceIndex(std::vector<std::string> ids, std::vector<FeatureBundle> bundles,
                 GpsSimilarity gps_sim = GpsSimilarity::cosine);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const FeatureBundle& bundle(std::size_t row) const { return bundles_[row]; }
  const FeatureBundle& bundle(const std::string& id) const;
  std::size_t row_of(const std::string& id) const;
  GpsSimilarity gps_similarity() const { return gps_sim_; }

  const Matrix& features(Modality m) const { return matrices_[idx(m)]; }
  double norm(Modality m, std::size_t row) const { return norms_[idx(m)][row]; }
  /// True when at least one row carries the modality.
  bool carries(Modality m) const { return mask_[idx(m)]; }

 private:
  static std::size_t idx(Modality m) { return static_cast<std::size_t>(m); }

  std::vector<std::string> ids_;
  std::vector<FeatureBundle> bundles_;
  std::unordered_map<std::string, std::size_t> rows_;
  std::array<Matrix, 3> matrices_;
  std::array<Vector, 3> norms_;
  std::array<bool, 3> mask_{};
  GpsSimilarity gps_sim_;
};

/// The k highest-scoring references under the modality similarity sum; with
/// k = 1 this is the argmax retrieval of the related package.
RetrievalResult retrieve_top_k(const FeatureBundle& q, const ReferenceIndex& index,
                               std::span<const Modality> modalities, std::size_t k);

RetrievalResult retrieve_per_modality(const FeatureBundle& q, const ReferenceIndex& index,
                                      Modality m, std::size_t k);

}  // namespace meir
