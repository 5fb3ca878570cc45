#include "meir/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "meir/embed.hpp"
#include "meir/error.hpp"
#include "meir/random.hpp"
#include "meir/retrieval.hpp"

namespace meir {

// ---------------------------------------------------------------------------
// Bucketing and refinement

namespace {

std::int64_t truncate_centi(double deg) {
  // The nudge absorbs representation error, e.g. 51.02 * 100 = 5101.999...
  const double scaled = deg * 100.0 + std::copysign(1e-7, deg);
  const auto k = static_cast<std::int64_t>(std::trunc(scaled));
  return k;  // trunc(-0.4) is -0.0, which converts to plain 0
}

}  // namespace

BucketKey bucket_key(const GeoPoint& p) { return {truncate_centi(p.lat), truncate_centi(p.lon)}; }

namespace {

struct DisjointSets {
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }

  std::vector<std::size_t> parent;
};

const Vector& feature_of(const FeatureMap& m, const std::string& id, const char* what) {
  const auto it = m.find(id);
  if (it == m.end()) fail(ErrorCode::not_found, std::string("no ") + what + " features for '" + id + "'");
  return it->second;
}

}  // namespace

std::vector<GeoBucket> bucket_by_gps(const std::vector<Package>& packages, bool neighbor_merge) {
  std::map<BucketKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < packages.size(); ++i) groups[bucket_key(packages[i].gps)].push_back(i);
  std::vector<GeoBucket> out;
  if (!neighbor_merge) {
    out.reserve(groups.size());
    for (const auto& [key, rows] : groups) {
      GeoBucket b{key, {}};
      for (auto r : rows) b.members.push_back(packages[r].id);
      out.push_back(std::move(b));
    }
    return out;
  }

  std::vector<BucketKey> keys;
  std::map<BucketKey, std::size_t> slot;
  for (const auto& [key, rows] : groups) {
    slot.emplace(key, keys.size());
    keys.push_back(key);
  }
  DisjointSets sets(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (std::int64_t dl = -1; dl <= 1; ++dl) {
      for (std::int64_t dn = -1; dn <= 1; ++dn) {
        const auto it = slot.find({keys[i].lat_centi + dl, keys[i].lon_centi + dn});
        if (it != slot.end()) sets.unite(i, it->second);
      }
    }
  }
  // Keys are sorted, so each root is the smallest key of its component.
  std::map<std::size_t, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto& rows = rows_of[sets.find(i)];
    const auto& g = groups[keys[i]];
    rows.insert(rows.end(), g.begin(), g.end());
  }
  for (auto& [root, rows] : rows_of) {
    std::sort(rows.begin(), rows.end());
    GeoBucket b{keys[root], {}};
    for (auto r : rows) b.members.push_back(packages[r].id);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<Cluster> refine_clusters(const GeoBucket& bucket, const FeatureMap& image,
                                     const FeatureMap& text, double tau_img, double tau_txt,
                                     std::int64_t first_id) {
  const auto& ids = bucket.members;
  const std::size_t n = ids.size();
  std::vector<const Vector*> img(n);
  std::vector<const Vector*> txt(n);
  for (std::size_t i = 0; i < n; ++i) {
    img[i] = &feature_of(image, ids[i], "image");
    txt[i] = &feature_of(text, ids[i], "text");
  }

  DisjointSets sets(n);
  std::vector<std::pair<std::size_t, std::size_t>> kept;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (cosine(*img[i], *img[j]) >= tau_img && cosine(*txt[i], *txt[j]) >= tau_txt) {
        kept.emplace_back(i, j);
        sets.unite(i, j);
      }
    }
  }

  // Roots are the smallest member index, so ascending root order is the
  // order of first appearance.
  std::map<std::size_t, std::size_t> slot_of_root;
  std::vector<Cluster> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = sets.find(i);
    auto [it, inserted] = slot_of_root.emplace(root, out.size());
    if (inserted) out.push_back({first_id + static_cast<std::int64_t>(out.size()), {}, {}});
    out[it->second].members.push_back(ids[i]);
  }
  for (const auto& [i, j] : kept) {
    out[slot_of_root.at(sets.find(i))].edges.emplace_back(ids[i], ids[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gazetteer

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

void Gazetteer::add(const std::string& surface, EntityKind kind) {
  const auto tokens = split_tokens(surface);
  if (tokens.empty()) fail(ErrorCode::invalid_argument, "empty gazetteer surface");
  entries_[joined(tokens, 0, tokens.size())] = kind;
  max_len_ = std::max(max_len_, tokens.size());
}

std::optional<EntityKind> Gazetteer::lookup(const std::string& surface) const {
  const auto it = entries_.find(surface);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string Gazetteer::serialize() const {
  std::string out;
  for (const auto& [surface, kind] : entries_) {
    out += surface;
    out += '\t';
    out += to_string(kind);
    out += '\n';
  }
  return out;
}

Gazetteer Gazetteer::parse(std::string_view text) {
  Gazetteer g;
  std::size_t pos = 0;
  std::size_t lineno = 0;
  while (pos < text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string_view::npos) {
      fail(ErrorCode::format, "gazetteer line " + std::to_string(lineno) + ": missing tab");
    }
    g.add(std::string(line.substr(0, tab)), parse_entity_kind(line.substr(tab + 1)));
  }
  return g;
}

std::vector<EntitySpan> tag_entities(const std::vector<std::string>& tokens,
                                     const Gazetteer& gazetteer) {
  std::vector<EntitySpan> spans;
  std::size_t i = 0;
  while (i < tokens.size()) {
    const std::size_t longest = std::min(gazetteer.max_phrase_tokens(), tokens.size() - i);
    bool matched = false;
    for (std::size_t len = longest; len >= 1; --len) {
      std::string surface = joined(tokens, i, i + len);
      if (const auto kind = gazetteer.lookup(surface)) {
        spans.push_back({i, i + len, *kind, std::move(surface)});
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return spans;
}

// ---------------------------------------------------------------------------
// Manipulation

ManipulationScope parse_manipulation_scope(std::string_view s) {
  if (s == "entity") return ManipulationScope::entity;
  if (s == "image_only") return ManipulationScope::image_only;
  if (s == "text_only") return ManipulationScope::text_only;
  if (s == "gps_only") return ManipulationScope::gps_only;
  fail(ErrorCode::invalid_argument, "unknown manipulation scope '" + std::string(s) + "'");
}

std::string_view to_string(ManipulationScope s) {
  switch (s) {
    case ManipulationScope::entity: return "entity";
    case ManipulationScope::image_only: return "image_only";
    case ManipulationScope::text_only: return "text_only";
    case ManipulationScope::gps_only: return "gps_only";
  }
  return "?";
}

namespace {

const EntitySpan* first_span(const Package& p, EntityKind kind) {
  for (const auto& e : p.entities) {
    if (e.kind == kind) return &e;
  }
  return nullptr;
}

}  // namespace

ManipulationPlan plan_manipulation(const Package& target, const Package& source, EntityKind kind) {
  const std::string kind_name(to_string(kind));
  if (!first_span(target, kind)) {
    fail(ErrorCode::validation, "plan error: target '" + target.id + "' has no " + kind_name + " entity");
  }
  const EntitySpan* src = first_span(source, kind);
  if (!src) {
    fail(ErrorCode::validation, "plan error: source '" + source.id + "' has no " + kind_name + " entity");
  }
  if (!target.cluster_id || !source.cluster_id || *target.cluster_id == *source.cluster_id) {
    fail(ErrorCode::validation, "plan error: '" + target.id + "' and '" + source.id +
                                    "' are not from different clusters");
  }
  ManipulationPlan plan{target.id, source.id, kind, src->surface, std::nullopt, std::nullopt};
  if (kind == EntityKind::location) {
    plan.gps = source.gps;
    plan.loc_names = source.loc_names;
  }
  return plan;
}

Package manipulate_package(const Package& target, const Package& source, EntityKind kind,
                           ManipulationScope scope) {
  const ManipulationPlan plan = plan_manipulation(target, source, kind);
  Package out = target;
  out.integrity = IntegrityLabel::manipulated;
  out.manipulation = manipulation_for(kind);

  const bool swap_text = scope == ManipulationScope::entity || scope == ManipulationScope::text_only;
  const bool swap_gps = kind == EntityKind::location &&
                        (scope == ManipulationScope::entity || scope == ManipulationScope::gps_only);
  if (scope == ManipulationScope::gps_only && kind != EntityKind::location) {
    out.gps = source.gps;
    out.loc_names = source.loc_names;
  }

  if (swap_text) {
    const auto replacement = split_tokens(plan.replacement);
    auto spans = target.entities;
    std::sort(spans.begin(), spans.end(),
              [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
    std::vector<std::string> tokens;
    std::vector<EntitySpan> entities;
    std::size_t cursor = 0;
    for (const auto& span : spans) {
      tokens.insert(tokens.end(), target.tokens.begin() + static_cast<std::ptrdiff_t>(cursor),
                    target.tokens.begin() + static_cast<std::ptrdiff_t>(span.start));
      const std::size_t start = tokens.size();
      if (span.kind == kind) {
        tokens.insert(tokens.end(), replacement.begin(), replacement.end());
        entities.push_back({start, tokens.size(), kind, plan.replacement});
      } else {
        tokens.insert(tokens.end(), target.tokens.begin() + static_cast<std::ptrdiff_t>(span.start),
                      target.tokens.begin() + static_cast<std::ptrdiff_t>(span.end));
        entities.push_back({start, tokens.size(), span.kind, span.surface});
      }
      cursor = span.end;
    }
    tokens.insert(tokens.end(), target.tokens.begin() + static_cast<std::ptrdiff_t>(cursor),
                  target.tokens.end());
    out.tokens = std::move(tokens);
    out.entities = std::move(entities);
  }
  if (swap_gps) {
    out.gps = *plan.gps;
    out.loc_names = *plan.loc_names;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split allocation

namespace {

constexpr std::array<EntityKind, 4> kKindCycle{EntityKind::location, EntityKind::person,
                                               EntityKind::location, EntityKind::organization};

void partition_pool(std::vector<std::string>& pool, Rng& rng, std::map<std::string, Split>& out) {
  rng.shuffle(pool);
  const auto n = static_cast<double>(pool.size());
  const auto n_train = static_cast<std::size_t>(std::llround(kTrainShare * n));
  const auto n_val = std::min(pool.size() - n_train,
                              static_cast<std::size_t>(std::llround(kValShare * n)));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    out[pool[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  }
}

}  // namespace

Allocation allocate_splits(const std::vector<Cluster>& clusters, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xA110C));
  Allocation out;
  std::vector<std::string> clean_pool;
  std::vector<std::string> manip_pool;
  std::size_t kind_counter = 0;

  std::vector<const Cluster*> ordered;
  for (const auto& c : clusters) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(),
            [](const Cluster* a, const Cluster* b) { return a->id < b->id; });

  for (const Cluster* c : ordered) {
    auto members = c->members;
    std::sort(members.begin(), members.end());
    rng.shuffle(members);
    const std::size_t n = members.size();
    if (n < 4) {
      for (const auto& id : members) out.split[id] = Split::reference;
      continue;
    }
    const std::size_t n_ref = (n + 1) / 2;
    const std::size_t n_man = (n - n_ref) / 2;
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_ref) {
        out.split[members[i]] = Split::reference;
      } else if (i < n_ref + n_man) {
        out.manipulate[members[i]] = kKindCycle[kind_counter++ % kKindCycle.size()];
        manip_pool.push_back(members[i]);
      } else {
        clean_pool.push_back(members[i]);
      }
    }
  }
  partition_pool(clean_pool, rng, out.split);
  partition_pool(manip_pool, rng, out.split);

  auto& m = out.manifest;
  m.seed = seed;
  for (const Split s : {Split::reference, Split::train, Split::val, Split::test}) {
    m.split_counts[std::string(to_string(s))] = 0;
  }
  for (const auto& [_, s] : out.split) ++m.split_counts[std::string(to_string(s))];
  for (const auto t : {ManipulationType::none, ManipulationType::location, ManipulationType::person,
                       ManipulationType::organization}) {
    m.manipulation_counts[std::string(to_string(t))] = 0;
  }
  m.manipulation_counts["none"] = out.split.size() - out.manipulate.size();
  for (const auto& [_, k] : out.manipulate) {
    ++m.manipulation_counts[std::string(to_string(manipulation_for(k)))];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

namespace {

std::string pseudo_word(Rng& rng, std::size_t syllables, bool capital) {
  static constexpr std::string_view kOnsets = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) {
    w += kOnsets[rng.below(kOnsets.size())];
    w += kVowels[rng.below(kVowels.size())];
  }
  if (rng.bernoulli(0.5)) w += kOnsets[rng.below(kOnsets.size())];
  if (capital) w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

template <typename Make>
std::vector<std::string> unique_items(std::size_t count, std::set<std::string>& used, Make make) {
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string item = make();
    if (used.insert(to_lower(item)).second) out.push_back(std::move(item));
  }
  return out;
}

constexpr std::array<std::string_view, 8> kPlaceSuffixes{"Bridge", "Abbey", "Castle", "Harbour",
                                                         "Falls", "Park", "Tower", "Chapel"};
constexpr std::array<std::string_view, 6> kOrgSuffixes{"Society", "Guild", "Trust",
                                                       "Museum", "Club", "Company"};

}  // namespace

Lexicons default_lexicons(std::size_t clusters, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1E8));
  std::set<std::string> used;
  // Suffix words are reserved so no generated word collides with them.
  for (auto s : kPlaceSuffixes) used.insert(to_lower(s));
  for (auto s : kOrgSuffixes) used.insert(to_lower(s));
  std::set<std::string> phrases;

  Lexicons lex;
  const std::size_t per_kind = 2 * clusters;
  lex.topic = unique_items(clusters * 8, used, [&] { return pseudo_word(rng, 3, false); });
  lex.filler = unique_items(40, used, [&] { return pseudo_word(rng, 2, false); });
  const auto names = unique_items(per_kind * 3, used, [&] { return pseudo_word(rng, 2, true); });
  std::size_t next = 0;
  for (std::size_t i = 0; i < per_kind; ++i) {
    lex.person.push_back(names[next] + " " + names[next + 1]);
    next += 2;
  }
  for (std::size_t i = 0; i < per_kind; ++i) {
    lex.location.push_back(names[next++] + " " + std::string(kPlaceSuffixes[i % kPlaceSuffixes.size()]));
  }
  // Reuse a name stem for organizations but never the same full phrase.
  for (std::size_t i = 0; i < per_kind; ++i) {
    lex.organization.push_back(names[(i * 7) % (2 * per_kind)] + " " +
                               std::string(kOrgSuffixes[i % kOrgSuffixes.size()]));
  }
  return lex;
}

SynthConfig SynthConfig::from(const Config& cfg) {
  SynthConfig s;
  s.clusters = cfg.get_size("clusters", s.clusters);
  s.cluster_size = cfg.get_size("cluster_size", s.cluster_size);
  s.image_dim = cfg.get_size("image_dim", s.image_dim);
  s.text_dim = cfg.get_size("text_dim", s.text_dim);
  s.embed_seed = static_cast<std::uint64_t>(cfg.get_int("embed_seed", static_cast<std::int64_t>(s.embed_seed)));
  s.topic_words = cfg.get_size("topic_words", s.topic_words);
  s.topic_keep = cfg.get_double("topic_keep", s.topic_keep);
  s.image_noise = cfg.get_double("image_noise", s.image_noise);
  s.filler_prob = cfg.get_double("filler_prob", s.filler_prob);
  s.second_entity_prob = cfg.get_double("second_entity_prob", s.second_entity_prob);
  s.gps_jitter = cfg.get_double("gps_jitter", s.gps_jitter);
  s.tau_img = cfg.get_double("tau_img", s.tau_img);
  s.tau_txt = cfg.get_double("tau_txt", s.tau_txt);
  s.neighbor_merge = cfg.get_bool("neighbor_merge", s.neighbor_merge);
  s.nonlocation_gps_jitter = cfg.get_double("nonlocation_gps_jitter", s.nonlocation_gps_jitter);
  s.region_lat_min = cfg.get_double("region_lat_min", s.region_lat_min);
  s.region_lat_max = cfg.get_double("region_lat_max", s.region_lat_max);
  s.region_lon_min = cfg.get_double("region_lon_min", s.region_lon_min);
  s.region_lon_max = cfg.get_double("region_lon_max", s.region_lon_max);
  s.scope = parse_manipulation_scope(cfg.get_string("manipulation_scope", "entity"));
  if (s.clusters == 0 || s.cluster_size == 0 || s.image_dim == 0 || s.text_dim == 0) {
    fail(ErrorCode::invalid_argument, "synth sizes and dims must be > 0");
  }
  if (s.gps_jitter >= 0.004) fail(ErrorCode::invalid_argument, "gps_jitter must be < 0.004 degrees");
  if (!(s.region_lat_min >= -89.0 && s.region_lat_min < s.region_lat_max && s.region_lat_max <= 89.0 &&
        s.region_lon_min >= -179.0 && s.region_lon_min < s.region_lon_max && s.region_lon_max <= 179.0)) {
    fail(ErrorCode::invalid_argument, "region bounds must be ordered and inside [-89, 89] x [-179, 179]");
  }
  if (s.nonlocation_gps_jitter > 1e-5) {
    fail(ErrorCode::invalid_argument, "nonlocation_gps_jitter must be <= 1e-5 degrees");
  }
  return s;
}

std::map<std::string, std::string> SynthConfig::snapshot() const {
  return {
      {"clusters", std::to_string(clusters)},
      {"cluster_size", std::to_string(cluster_size)},
      {"image_dim", std::to_string(image_dim)},
      {"text_dim", std::to_string(text_dim)},
      {"embed_seed", std::to_string(embed_seed)},
      {"topic_words", std::to_string(topic_words)},
      {"topic_keep", format_double(topic_keep)},
      {"image_noise", format_double(image_noise)},
      {"filler_prob", format_double(filler_prob)},
      {"second_entity_prob", format_double(second_entity_prob)},
      {"gps_jitter", format_double(gps_jitter)},
      {"tau_img", format_double(tau_img)},
      {"tau_txt", format_double(tau_txt)},
      {"neighbor_merge", neighbor_merge ? "true" : "false"},
      {"nonlocation_gps_jitter", format_double(nonlocation_gps_jitter)},
      {"manipulation_scope", std::string(to_string(scope))},
      {"region_lat_min", format_double(region_lat_min)},
      {"region_lat_max", format_double(region_lat_max)},
      {"region_lon_min", format_double(region_lon_min)},
      {"region_lon_max", format_double(region_lon_max)},
  };
}

namespace {

/// Cell index in hundredths for a center, never 0 (the 0 key spans two cells).
std::int64_t draw_cell(Rng& rng, std::int64_t lo, std::int64_t hi) {
  for (;;) {
    const auto k = lo + static_cast<std::int64_t>(rng.below(static_cast<std::size_t>(hi - lo + 1)));
    if (k != 0) return k;
  }
}

double cell_center(std::int64_t k) {
  const double mag = (static_cast<double>(std::llabs(k)) + 0.5) / 100.0;
  return k < 0 ? -mag : mag;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SynthConfig& cfg, const Lexicons& lex,
                                          std::uint64_t seed) {
  const std::size_t c_count = cfg.clusters;
  if (lex.person.size() < 2 * c_count || lex.organization.size() < 2 * c_count ||
      lex.location.size() < 2 * c_count) {
    fail(ErrorCode::invalid_argument, "insufficient lexicon: need >= " +
                                          std::to_string(2 * c_count) + " entities per kind");
  }
  if (lex.topic.size() < c_count * cfg.topic_words) {
    fail(ErrorCode::invalid_argument, "insufficient lexicon: need >= " +
                                          std::to_string(c_count * cfg.topic_words) + " topic words");
  }

  Rng rng(mix_seed(seed, 0x5EED));
  SyntheticCorpus out;
  for (std::size_t i = 0; i < 2 * c_count; ++i) {
    out.gazetteer.add(lex.person[i], EntityKind::person);
    out.gazetteer.add(lex.organization[i], EntityKind::organization);
    out.gazetteer.add(lex.location[i], EntityKind::location);
  }

  std::vector<std::pair<std::int64_t, std::int64_t>> cells;
  const double img_scale = 1.0 / std::sqrt(static_cast<double>(cfg.image_dim));
  const HashTokenEmbedder image_embedder(cfg.image_dim, mix_seed(seed, 0x1A6E));
  const std::size_t width = std::to_string(c_count * cfg.cluster_size).size();

  const auto centi = [](double deg) { return static_cast<std::int64_t>(std::floor(deg * 100.0)); };
  const std::int64_t lat_lo = centi(cfg.region_lat_min), lat_hi = centi(cfg.region_lat_max) - 1;
  const std::int64_t lon_lo = centi(cfg.region_lon_min), lon_hi = centi(cfg.region_lon_max) - 1;
  if ((lat_hi - lat_lo + 1) * (lon_hi - lon_lo + 1) < 16 * static_cast<std::int64_t>(c_count)) {
    fail(ErrorCode::invalid_argument, "region too small for " + std::to_string(c_count) + " clusters");
  }

  for (std::size_t c = 0; c < c_count; ++c) {
    std::int64_t lat_k = 0;
    std::int64_t lon_k = 0;
    for (bool ok = false; !ok;) {
      lat_k = draw_cell(rng, lat_lo, lat_hi);
      lon_k = draw_cell(rng, lon_lo, lon_hi);
      ok = std::all_of(cells.begin(), cells.end(), [&](const auto& cell) {
        return std::llabs(cell.first - lat_k) >= 3 || std::llabs(cell.second - lon_k) >= 3;
      });
    }
    cells.emplace_back(lat_k, lon_k);
    const GeoPoint center{cell_center(lat_k), cell_center(lon_k)};

    const std::vector<std::string> topics(lex.topic.begin() + static_cast<std::ptrdiff_t>(c * cfg.topic_words),
                                          lex.topic.begin() + static_cast<std::ptrdiff_t>((c + 1) * cfg.topic_words));
    const Vector image_topic = image_embedder.embed(topics.front());
    const std::string& loc_main = lex.location[2 * c];
    const std::string& loc_second = lex.location[2 * c + 1];
    const LocationNames names{"Country" + std::to_string(c % 12), "County" + std::to_string(c),
                              loc_second, loc_main};

    for (std::size_t i = 0; i < cfg.cluster_size; ++i) {
      const std::size_t global = c * cfg.cluster_size + i;
      std::string id = std::to_string(global);
      id = "p" + std::string(width - id.size(), '0') + id;

      // Units are shuffled as a whole so multi-token entities stay contiguous.
      std::vector<std::vector<std::string>> units;
      for (const auto& t : topics) {
        if (rng.bernoulli(cfg.topic_keep)) units.push_back({t});
      }
      if (units.empty()) units.push_back({topics.front()});
      units.push_back(split_tokens(loc_main));
      units.push_back(split_tokens(lex.person[2 * c]));
      units.push_back(split_tokens(lex.organization[2 * c]));
      if (rng.bernoulli(cfg.second_entity_prob)) units.push_back(split_tokens(loc_second));
      if (rng.bernoulli(cfg.second_entity_prob)) units.push_back(split_tokens(lex.person[2 * c + 1]));
      if (rng.bernoulli(cfg.second_entity_prob)) units.push_back(split_tokens(lex.organization[2 * c + 1]));
      if (rng.bernoulli(cfg.filler_prob)) units.push_back({lex.filler[rng.below(lex.filler.size())]});
      rng.shuffle(units);

      Package p;
      p.id = id;
      for (auto& u : units) p.tokens.insert(p.tokens.end(), u.begin(), u.end());
      p.gps = {center.lat + (2.0 * rng.uniform() - 1.0) * cfg.gps_jitter,
               center.lon + (2.0 * rng.uniform() - 1.0) * cfg.gps_jitter};
      p.loc_names = names;

      Vector image = image_topic;
      for (auto& x : image) x += cfg.image_noise * rng.normal() * img_scale;

      out.image_features.emplace(p.id, std::move(image));
      out.truth_cluster.push_back(static_cast<std::int64_t>(c));
      out.packages.push_back(std::move(p));
    }
  }
  return out;
}

BuiltDataset build_dataset(const SyntheticCorpus& corpus, const SynthConfig& cfg,
                           std::uint64_t seed) {
  BuiltDataset out;
  out.gazetteer = corpus.gazetteer;
  out.image_features = corpus.image_features;

  std::vector<Package> clean = corpus.packages;
  for (auto& p : clean) p.entities = tag_entities(p.tokens, corpus.gazetteer);

  const HashTokenEmbedder embedder(cfg.text_dim, cfg.embed_seed);
  FeatureMap text;
  for (const auto& p : clean) {
    text.emplace(p.id, pool_average(embed_tokens(p.tokens, embedder), cfg.text_dim).vec);
  }

  std::int64_t next_id = 0;
  for (const auto& bucket : bucket_by_gps(clean, cfg.neighbor_merge)) {
    auto refined = refine_clusters(bucket, corpus.image_features, text, cfg.tau_img, cfg.tau_txt, next_id);
    next_id += static_cast<std::int64_t>(refined.size());
    for (auto& c : refined) out.clusters.push_back(std::move(c));
  }

  std::unordered_map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < clean.size(); ++i) row.emplace(clean[i].id, i);
  std::map<std::int64_t, std::vector<std::size_t>> members_of;
  for (const auto& c : out.clusters) {
    for (const auto& id : c.members) {
      clean[row.at(id)].cluster_id = c.id;
      members_of[c.id].push_back(row.at(id));
    }
  }

  const Allocation alloc = allocate_splits(out.clusters, seed);
  std::vector<std::int64_t> cluster_ids;
  for (const auto& [cid, _] : members_of) cluster_ids.push_back(cid);

  Rng rng(mix_seed(seed, 0x3A7));
  std::vector<Package> final_packages = clean;
  for (auto& p : final_packages) {
    p.split = alloc.split.at(p.id);
    p.image_ref = "images.feat";
  }
  for (const auto& [target_id, planned] : alloc.manipulate) {
    const Package& target = clean[row.at(target_id)];
    EntityKind kind = planned;
    if (!first_span(target, kind)) {
      for (const EntityKind alt : {EntityKind::location, EntityKind::person, EntityKind::organization}) {
        if (first_span(target, alt)) {
          kind = alt;
          break;
        }
      }
      if (!first_span(target, kind)) continue;  // nothing to swap; stays clean
    }

    const Package* source = nullptr;
    for (std::size_t attempt = 0; attempt < 64 && !source; ++attempt) {
      const std::int64_t cid = cluster_ids[rng.below(cluster_ids.size())];
      if (cid == *target.cluster_id) continue;
      const auto& rows = members_of.at(cid);
      const Package& cand = clean[rows[rng.below(rows.size())]];
      if (first_span(cand, kind)) source = &cand;
    }
    if (!source) continue;

    Package manipulated = manipulate_package(target, *source, kind, cfg.scope);
    manipulated.split = alloc.split.at(target_id);
    manipulated.image_ref = "images.feat";
    if (kind != EntityKind::location && cfg.nonlocation_gps_jitter > 0.0) {
      manipulated.gps.lat += (2.0 * rng.uniform() - 1.0) * cfg.nonlocation_gps_jitter;
      manipulated.gps.lon += (2.0 * rng.uniform() - 1.0) * cfg.nonlocation_gps_jitter;
    }
    if (cfg.scope == ManipulationScope::image_only) {
      out.image_features[target_id] = corpus.image_features.at(source->id);
    }
    out.plans.push_back(plan_manipulation(target, *source, kind));
    out.originals.emplace(target_id, target);
    final_packages[row.at(target_id)] = std::move(manipulated);
  }
  out.packages = std::move(final_packages);

  auto& m = out.manifest;
  m.seed = seed;
  for (const Split s : {Split::reference, Split::train, Split::val, Split::test}) {
    m.split_counts[std::string(to_string(s))] = 0;
  }
  for (const auto t : {ManipulationType::none, ManipulationType::location, ManipulationType::person,
                       ManipulationType::organization}) {
    m.manipulation_counts[std::string(to_string(t))] = 0;
  }
  for (const auto& p : out.packages) {
    ++m.split_counts[std::string(to_string(p.split))];
    ++m.manipulation_counts[std::string(to_string(p.manipulation))];
  }
  m.config = cfg.snapshot();
  return out;
}

void write_dataset(const std::filesystem::path& dir, const BuiltDataset& data, std::size_t image_dim) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());

  std::map<Split, std::vector<Package>> by_split;
  for (const auto& p : data.packages) by_split[p.split].push_back(p);
  for (const Split s : {Split::reference, Split::train, Split::val, Split::test}) {
    auto& v = by_split[s];
    std::sort(v.begin(), v.end(), [](const Package& a, const Package& b) { return a.id < b.id; });
    write_corpus(dir / (std::string(to_string(s)) + ".jsonl"), v);
  }

  std::vector<std::pair<std::string, Vector>> rows(data.image_features.begin(), data.image_features.end());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  write_feature_table(dir / "images.feat", image_dim, rows);
  write_file_atomic(dir / "gazetteer.tsv", data.gazetteer.serialize());
  write_manifest(dir / "manifest.json", data.manifest);
}

}  // namespace meir
