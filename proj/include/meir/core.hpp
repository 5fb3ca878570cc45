#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "meir/tensor.hpp"

namespace meir {

enum class Split { reference, train, val, test, unassigned };
enum class IntegrityLabel { clean, manipulated, unknown };
enum class ManipulationType { none, location, person, organization };
enum class EntityKind { person, organization, location };

/// Retrieval and feature modalities. The numeric order is the
/// concatenation order of every per-modality block in the model.
enum class Modality { image = 0, text = 1, gps = 2 };
inline constexpr std::array<Modality, 3> kAllModalities{Modality::image, Modality::text,
                                                        Modality::gps};

std::string_view to_string(Split s);
std::string_view to_string(IntegrityLabel l);
std::string_view to_string(ManipulationType t);
std::string_view to_string(EntityKind k);
std::string_view to_string(Modality m);

Split parse_split(std::string_view s);
IntegrityLabel parse_integrity(std::string_view s);
ManipulationType parse_manipulation(std::string_view s);
EntityKind parse_entity_kind(std::string_view s);
Modality parse_modality(std::string_view s);
/// Comma-separated modality list, e.g. "image,text,gps".
std::vector<Modality> parse_modalities(std::string_view csv);

ManipulationType manipulation_for(EntityKind k);

struct EntitySpan {
  std::size_t start = 0;  // inclusive token index
  std::size_t end = 0;    // exclusive token index
  EntityKind kind = EntityKind::location;
  std::string surface;

  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

struct LocationNames {
  std::string country;
  std::string county;
  std::string region;
  std::string locality;

  friend bool operator==(const LocationNames&, const LocationNames&) = default;
};

/// One multimodal record. Images are never stored; `image_ref` names the
/// precomputed-feature file (relative to the corpus file) holding its vector.
struct Package {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<EntitySpan> entities;
  GeoPoint gps;
  LocationNames loc_names;
  std::optional<std::int64_t> cluster_id;
  Split split = Split::unassigned;
  IntegrityLabel integrity = IntegrityLabel::clean;
  ManipulationType manipulation = ManipulationType::none;
  std::optional<std::string> timestamp;  // carried through, never featurized
  std::optional<std::string> image_ref;

  friend bool operator==(const Package&, const Package&) = default;
};

/// Per-modality numeric features of one package. A missing modality is an
/// all-zero vector (zero token rows for text) with its presence flag cleared.
struct FeatureBundle {
  Vector image;
  Matrix text_tokens;
  Vector text_pooled;
  Vector gps;
  std::array<bool, 3> present{true, true, true};

  bool has(Modality m) const { return present[static_cast<std::size_t>(m)]; }
  /// The vector retrieval scores for modality m (pooled text for text).
  const Vector& slot(Modality m) const;
};

/// Zero a modality in place and clear its flag.
void drop_modality(FeatureBundle& bundle, Modality m);

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> split_counts;
  std::map<std::string, std::size_t> manipulation_counts;
  std::map<std::string, std::string> config;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Maps (lat, lon) in degrees onto (lat/90, lon/180).
Vector normalize_gps(double lat, double lon);
GeoPoint denormalize_gps(std::span<const double> v);

/// Human-readable list of violated invariants; empty iff the package is valid.
std::vector<std::string> validate_package(const Package& p);
std::vector<std::string> validate_manifest(const DatasetManifest& m);

std::string joined(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end);
std::string to_lower(std::string_view s);

// Line-delimited corpus files and manifest documents.
std::string package_to_json(const Package& p);
Package package_from_json(std::string_view line);
std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(std::string_view doc);

std::vector<Package> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<Package>& packages);
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

/// Write via a sibling temp file and rename so readers never see partial output.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace meir
