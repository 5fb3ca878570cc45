#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "meir/config.hpp"
#include "meir/core.hpp"

namespace meir {

// ---------------------------------------------------------------------------
// Location bucketing and relatedness clustering

/// Coordinates truncated toward zero at two decimals, stored in hundredths
/// of a degree so keys compare exactly.
struct BucketKey {
  std::int64_t lat_centi = 0;
  std::int64_t lon_centi = 0;

  double lat() const { return static_cast<double>(lat_centi) / 100.0; }
  double lon() const { return static_cast<double>(lon_centi) / 100.0; }
  friend auto operator<=>(const BucketKey&, const BucketKey&) = default;
};

BucketKey bucket_key(const GeoPoint& p);

struct GeoBucket {
  BucketKey key;
  std::vector<std::string> members;  // input order
};

/// Partition by truncated coordinates; buckets are ordered by key. With
/// `neighbor_merge`, buckets whose keys differ by at most one hundredth on
/// both axes are joined transitively under the smallest key.
std::vector<GeoBucket> bucket_by_gps(const std::vector<Package>& packages,
                                     bool neighbor_merge = false);

struct Cluster {
  std::int64_t id = 0;
  std::vector<std::string> members;
  std::vector<std::pair<std::string, std::string>> edges;
};

using FeatureMap = std::unordered_map<std::string, Vector>;

/// Keeps edge (a, b) iff both image and text cosine clear their thresholds;
/// clusters are the connected components, ordered by first member. Ids are
/// numbered from `first_id`.
std::vector<Cluster> refine_clusters(const GeoBucket& bucket, const FeatureMap& image,
                                     const FeatureMap& text, double tau_img, double tau_txt,
                                     std::int64_t first_id = 0);

// ---------------------------------------------------------------------------
// Entity tagging

/// Surface phrase -> kind lexicon matched verbatim on whitespace tokens.
class Gazetteer {
 public:
  void add(const std::string& surface, EntityKind kind);
  std::size_t size() const { return entries_.size(); }
  std::size_t max_phrase_tokens() const { return max_len_; }
  std::optional<EntityKind> lookup(const std::string& surface) const;
  const std::map<std::string, EntityKind>& entries() const { return entries_; }

  /// `<surface>\t<kind>` per line.
  std::string serialize() const;
  static Gazetteer parse(std::string_view text);

 private:
  std::map<std::string, EntityKind> entries_;
  std::size_t max_len_ = 0;
};

std::vector<std::string> split_tokens(std::string_view text);

/// Longest match, scanning left to right; spans never overlap.
std::vector<EntitySpan> tag_entities(const std::vector<std::string>& tokens,
                                     const Gazetteer& gazetteer);

// ---------------------------------------------------------------------------
// Manipulation

struct ManipulationPlan {
  std::string target_id;
  std::string source_id;
  EntityKind kind = EntityKind::location;
  std::string replacement;
  std::optional<GeoPoint> gps;
  std::optional<LocationNames> loc_names;
};

/// Which modalities a manipulation touches. `entity` is the regular swap;
/// the others confine the change to one modality (planted-signal corpora).
enum class ManipulationScope { entity, image_only, text_only, gps_only };

ManipulationScope parse_manipulation_scope(std::string_view s);
std::string_view to_string(ManipulationScope s);

ManipulationPlan plan_manipulation(const Package& target, const Package& source, EntityKind kind);

/// Replace every target span of `kind` with the source's first surface of that
/// kind; location swaps also carry over gps and location names.
Package manipulate_package(const Package& target, const Package& source, EntityKind kind,
                           ManipulationScope scope = ManipulationScope::entity);

// ---------------------------------------------------------------------------
// Split allocation

/// Query-pool proportions train : val : test (40,940 : 7,000 : 10,000).
inline constexpr double kTrainShare = 40940.0 / 57940.0;
inline constexpr double kValShare = 7000.0 / 57940.0;

struct Allocation {
  std::map<std::string, Split> split;
  std::map<std::string, EntityKind> manipulate;  // planned kind per target
  DatasetManifest manifest;
};

/// Per cluster: ceil(n/2) to reference, floor(q/2) of the q remaining are
/// manipulated; clusters with n < 4 go entirely to reference. Kinds cycle
/// location, person, location, organization corpus-wide. The query pool is
/// split train/val/test per integrity class.
Allocation allocate_splits(const std::vector<Cluster>& clusters, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic corpora

struct Lexicons {
  std::vector<std::string> person;
  std::vector<std::string> organization;
  std::vector<std::string> location;
  std::vector<std::string> topic;
  std::vector<std::string> filler;
};

/// Deterministic pseudo-word lexicons large enough for `clusters` clusters.
Lexicons default_lexicons(std::size_t clusters, std::uint64_t seed);

struct SynthConfig {
  std::size_t clusters = 600;
  std::size_t cluster_size = 16;
  std::size_t image_dim = 64;
  std::size_t text_dim = 32;
  std::uint64_t embed_seed = 17;
  std::size_t topic_words = 6;
  double topic_keep = 0.95;
  double image_noise = 1.0;
  double filler_prob = 0.3;
  double second_entity_prob = 0.2;
  double gps_jitter = 0.003;
  double tau_img = 0.2;
  double tau_txt = 0.2;
  bool neighbor_merge = false;
  double nonlocation_gps_jitter = 0.0;
  // Degrees; cluster cells are drawn inside this box.
  double region_lat_min = 20.0;
  double region_lat_max = 70.0;
  double region_lon_min = -30.0;
  double region_lon_max = 60.0;
  ManipulationScope scope = ManipulationScope::entity;

  static SynthConfig from(const Config& cfg);
  std::map<std::string, std::string> snapshot() const;
};

struct SyntheticCorpus {
  std::vector<Package> packages;  // clean, unassigned
  FeatureMap image_features;
  std::vector<std::int64_t> truth_cluster;  // parallel to packages
  Gazetteer gazetteer;
};

SyntheticCorpus generate_synthetic_corpus(const SynthConfig& cfg, const Lexicons& lexicons,
                                          std::uint64_t seed);

/// Output of the full construction pipeline.
struct BuiltDataset {
  std::vector<Package> packages;  // every package with split and labels
  FeatureMap image_features;
  std::vector<ManipulationPlan> plans;
  std::vector<Cluster> clusters;
  std::unordered_map<std::string, Package> originals;  // clean version of each target
  Gazetteer gazetteer;
  DatasetManifest manifest;
};

/// bucket -> refine -> allocate -> manipulate over a clean corpus.
BuiltDataset build_dataset(const SyntheticCorpus& corpus, const SynthConfig& cfg,
                           std::uint64_t seed);

/// Writes reference/train/val/test jsonl files, images.feat, gazetteer.tsv
/// and manifest.json into `dir`.
void write_dataset(const std::filesystem::path& dir, const BuiltDataset& data,
                   std::size_t image_dim);

}  // namespace meir
