#include "meir/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "meir/error.hpp"

namespace meir {

using nlohmann::json;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table,
             std::string_view what) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  fail(ErrorCode::format, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

constexpr std::array<std::pair<std::string_view, Split>, 5> kSplits{{
    {"reference", Split::reference},
    {"train", Split::train},
    {"val", Split::val},
    {"test", Split::test},
    {"unassigned", Split::unassigned},
}};
constexpr std::array<std::pair<std::string_view, IntegrityLabel>, 3> kIntegrity{{
    {"clean", IntegrityLabel::clean},
    {"manipulated", IntegrityLabel::manipulated},
    {"unknown", IntegrityLabel::unknown},
}};
constexpr std::array<std::pair<std::string_view, ManipulationType>, 4> kManipulations{{
    {"none", ManipulationType::none},
    {"location", ManipulationType::location},
    {"person", ManipulationType::person},
    {"organization", ManipulationType::organization},
}};
constexpr std::array<std::pair<std::string_view, EntityKind>, 3> kKinds{{
    {"person", EntityKind::person},
    {"organization", EntityKind::organization},
    {"location", EntityKind::location},
}};
constexpr std::array<std::pair<std::string_view, Modality>, 3> kModalities{{
    {"image", Modality::image},
    {"text", Modality::text},
    {"gps", Modality::gps},
}};

template <typename E, std::size_t N>
std::string_view name_of(E value, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, v] : table) {
    if (v == value) return name;
  }
  return "?";
}

}  // namespace

std::string_view to_string(Split s) { return name_of(s, kSplits); }
std::string_view to_string(IntegrityLabel l) { return name_of(l, kIntegrity); }
std::string_view to_string(ManipulationType t) { return name_of(t, kManipulations); }
std::string_view to_string(EntityKind k) { return name_of(k, kKinds); }
std::string_view to_string(Modality m) { return name_of(m, kModalities); }

Split parse_split(std::string_view s) { return parse_enum(s, kSplits, "split"); }
IntegrityLabel parse_integrity(std::string_view s) {
  return parse_enum(s, kIntegrity, "integrity label");
}
ManipulationType parse_manipulation(std::string_view s) {
  return parse_enum(s, kManipulations, "manipulation type");
}
EntityKind parse_entity_kind(std::string_view s) { return parse_enum(s, kKinds, "entity kind"); }
Modality parse_modality(std::string_view s) { return parse_enum(s, kModalities, "modality"); }

std::vector<Modality> parse_modalities(std::string_view csv) {
  std::vector<Modality> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const std::size_t comma = std::min(csv.find(',', pos), csv.size());
    const auto item = csv.substr(pos, comma - pos);
    if (!item.empty()) {
      const Modality m = parse_modality(item);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    pos = comma + 1;
  }
  if (out.empty()) fail(ErrorCode::invalid_argument, "empty modality list");
  return out;
}

ManipulationType manipulation_for(EntityKind k) {
  switch (k) {
    case EntityKind::location: return ManipulationType::location;
    case EntityKind::person: return ManipulationType::person;
    case EntityKind::organization: return ManipulationType::organization;
  }
  return ManipulationType::none;
}

const Vector& FeatureBundle::slot(Modality m) const {
  switch (m) {
    case Modality::image: return image;
    case Modality::text: return text_pooled;
    case Modality::gps: return gps;
  }
  return image;
}

void drop_modality(FeatureBundle& bundle, Modality m) {
  switch (m) {
    case Modality::image:
      std::fill(bundle.image.begin(), bundle.image.end(), 0.0);
      break;
    case Modality::text:
      bundle.text_tokens = Matrix(0, bundle.text_tokens.cols);
      std::fill(bundle.text_pooled.begin(), bundle.text_pooled.end(), 0.0);
      break;
    case Modality::gps:
      std::fill(bundle.gps.begin(), bundle.gps.end(), 0.0);
      break;
  }
  bundle.present[static_cast<std::size_t>(m)] = false;
}

Vector normalize_gps(double lat, double lon) {
  if (!(lat >= -90.0 && lat <= 90.0) || !(lon >= -180.0 && lon <= 180.0)) {
    std::ostringstream msg;
    msg << "gps out of range: (" << lat << ", " << lon << ")";
    fail(ErrorCode::validation, msg.str());
  }
  return {lat / 90.0, lon / 180.0};
}

GeoPoint denormalize_gps(std::span<const double> v) { return {v[0] * 90.0, v[1] * 180.0}; }

std::string joined(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end && i < tokens.size(); ++i) {
    if (i > begin) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> validate_package(const Package& p) {
  std::vector<std::string> issues;
  if (p.id.empty()) issues.emplace_back("id: empty");
  if (!(p.gps.lat >= -90.0 && p.gps.lat <= 90.0)) issues.emplace_back("gps: latitude out of range");
  if (!(p.gps.lon >= -180.0 && p.gps.lon <= 180.0)) {
    issues.emplace_back("gps: longitude out of range");
  }

  const std::size_t n = p.tokens.size();
  for (std::size_t i = 0; i < p.entities.size(); ++i) {
    const auto& e = p.entities[i];
    const std::string tag = "entity[" + std::to_string(i) + "]";
    if (!(e.start < e.end && e.end <= n)) {
      issues.push_back(tag + ": span bounds [" + std::to_string(e.start) + "," +
                       std::to_string(e.end) + ") outside token count " + std::to_string(n));
      continue;
    }
    if (joined(p.tokens, e.start, e.end) != e.surface) {
      issues.push_back(tag + ": surface does not match its tokens");
    }
  }
  for (std::size_t i = 0; i < p.entities.size(); ++i) {
    for (std::size_t j = i + 1; j < p.entities.size(); ++j) {
      const auto& a = p.entities[i];
      const auto& b = p.entities[j];
      if (a.start < b.end && b.start < a.end) {
        issues.push_back("entity[" + std::to_string(i) + "] overlaps entity[" +
                         std::to_string(j) + "]");
      }
    }
  }

  if (p.split == Split::reference && p.integrity != IntegrityLabel::clean) {
    issues.emplace_back("reference purity: reference split package is not clean");
  }
  const bool typed = p.manipulation != ManipulationType::none;
  const bool manipulated = p.integrity == IntegrityLabel::manipulated;
  if (typed != manipulated) {
    issues.emplace_back("manipulation type inconsistent with integrity label");
  }
  return issues;
}

std::vector<std::string> validate_manifest(const DatasetManifest& m) {
  std::vector<std::string> issues;
  std::size_t by_split = 0;
  for (const auto& [_, c] : m.split_counts) by_split += c;
  std::size_t by_type = 0;
  for (const auto& [_, c] : m.manipulation_counts) by_type += c;
  if (by_split != by_type) {
    issues.push_back("split counts sum to " + std::to_string(by_split) +
                     " but manipulation counts sum to " + std::to_string(by_type));
  }
  return issues;
}

std::string package_to_json(const Package& p) {
  json j;
  j["id"] = p.id;
  j["tokens"] = p.tokens;
  json ents = json::array();
  for (const auto& e : p.entities) {
    ents.push_back({{"start", e.start}, {"end", e.end}, {"kind", to_string(e.kind)},
                    {"surface", e.surface}});
  }
  j["entities"] = std::move(ents);
  j["gps"] = {{"lat", p.gps.lat}, {"lon", p.gps.lon}};
  j["loc_names"] = {{"country", p.loc_names.country},
                    {"county", p.loc_names.county},
                    {"region", p.loc_names.region},
                    {"locality", p.loc_names.locality}};
  j["cluster_id"] = p.cluster_id ? json(*p.cluster_id) : json(nullptr);
  j["split"] = to_string(p.split);
  j["integrity_label"] = to_string(p.integrity);
  j["manipulation_type"] = to_string(p.manipulation);
  if (p.timestamp) j["timestamp"] = *p.timestamp;
  if (p.image_ref) j["features"] = {{"image", *p.image_ref}};
  return j.dump();
}

Package package_from_json(std::string_view line) {
  try {
    const json j = json::parse(line);
    Package p;
    p.id = j.at("id").get<std::string>();
    p.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& e : j.at("entities")) {
      p.entities.push_back({e.at("start").get<std::size_t>(), e.at("end").get<std::size_t>(),
                            parse_entity_kind(e.at("kind").get<std::string>()),
                            e.at("surface").get<std::string>()});
    }
    p.gps = {j.at("gps").at("lat").get<double>(), j.at("gps").at("lon").get<double>()};
    if (j.contains("loc_names")) {
      const auto& l = j["loc_names"];
      p.loc_names = {l.value("country", ""), l.value("county", ""), l.value("region", ""),
                     l.value("locality", "")};
    }
    if (j.contains("cluster_id") && !j["cluster_id"].is_null()) {
      p.cluster_id = j["cluster_id"].get<std::int64_t>();
    }
    p.split = parse_split(j.value("split", "unassigned"));
    p.integrity = parse_integrity(j.value("integrity_label", "clean"));
    p.manipulation = parse_manipulation(j.value("manipulation_type", "none"));
    if (j.contains("timestamp")) p.timestamp = j["timestamp"].get<std::string>();
    if (j.contains("features") && j["features"].contains("image")) {
      p.image_ref = j["features"]["image"].get<std::string>();
    }
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::format, std::string("malformed package record: ") + e.what());
  }
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["seed"] = m.seed;
  j["split_counts"] = m.split_counts;
  j["manipulation_counts"] = m.manipulation_counts;
  j["config"] = m.config;
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view doc) {
  try {
    const json j = json::parse(doc);
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split_counts = j.at("split_counts").get<std::map<std::string, std::size_t>>();
    m.manipulation_counts = j.at("manipulation_counts").get<std::map<std::string, std::size_t>>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::format, std::string("malformed manifest: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) fail(ErrorCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::vector<Package> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open corpus " + path.string());
  std::vector<Package> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(package_from_json(line));
    } catch (const Error& e) {
      fail(e.code(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Package>& packages) {
  std::string buf;
  for (const auto& p : packages) {
    buf += package_to_json(p);
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  return manifest_from_json(read_file(path));
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  write_file_atomic(path, manifest_to_json(m));
}

}  // namespace meir
