#include <map>
#include <set>

#include "doctest.h"
#include "meir/error.hpp"
#include "meir/synth.hpp"

using namespace meir;

namespace {

Package located(const std::string& id, double lat, double lon) {
  Package p;
  p.id = id;
  p.gps = {lat, lon};
  return p;
}

Package tagged(const std::string& id, const std::string& text, const Gazetteer& g, std::int64_t cluster) {
  Package p;
  p.id = id;
  p.tokens = split_tokens(text);
  p.entities = tag_entities(p.tokens, g);
  p.cluster_id = cluster;
  return p;
}

std::string text_of(const Package& p) { return joined(p.tokens, 0, p.tokens.size()); }

SynthConfig small_config() {
  SynthConfig c;
  c.clusters = 10;
  c.cluster_size = 8;
  return c;
}

}  // namespace

TEST_CASE("bucket keys truncate at two decimals") {
  auto k = bucket_key({43.737553, -122.883646});
  CHECK(k.lat_centi == 4373);
  CHECK(k.lon_centi == -12288);
  CHECK(k.lat() == doctest::Approx(43.73));

  auto z = bucket_key({0.004, -0.004});
  CHECK(z.lat_centi == 0);
  CHECK(z.lon_centi == 0);

  CHECK(bucket_key({51.0249, -0.4502}) == bucket_key({51.0201, -0.4599}));
  CHECK(bucket_key({51.0249, -0.4502}).lat_centi == 5102);
  CHECK(bucket_key({51.0249, -0.4502}).lon_centi == -45);
}

TEST_CASE("bucketing groups by key in input order") {
  std::vector<Package> ps{located("a", 10.011, 20.019), located("b", 30, 40), located("c", 10.015, 20.011)};
  auto buckets = bucket_by_gps(ps);
  REQUIRE(buckets.size() == 2);
  CHECK(buckets[0].members == std::vector<std::string>{"a", "c"});
  CHECK(buckets[1].members == std::vector<std::string>{"b"});
}

TEST_CASE("neighbor merge joins adjacent cells transitively") {
  std::vector<Package> ps{located("a", 10.005, 20.005), located("b", 10.015, 20.015),
                          located("c", 10.025, 20.015), located("d", 10.055, 20.005)};
  CHECK(bucket_by_gps(ps).size() == 4);
  auto merged = bucket_by_gps(ps, true);
  REQUIRE(merged.size() == 2);
  CHECK(merged[0].members == std::vector<std::string>{"a", "b", "c"});
  CHECK(merged[0].key == bucket_key({10.005, 20.005}));
  CHECK(merged[1].members == std::vector<std::string>{"d"});
}

TEST_CASE("refinement keeps edges above both thresholds") {
  GeoBucket bucket{{0, 0}, {"a", "b", "c", "d"}};
  FeatureMap text{{"a", {1, 0}}, {"b", {1, 0}}, {"c", {1, 0}}, {"d", {1, 0}}};

  SUBCASE("identical features form one cluster") {
    GeoBucket two{{0, 0}, {"a", "b"}};
    FeatureMap image{{"a", {1, 2}}, {"b", {1, 2}}};
    auto cs = refine_clusters(two, image, text, 0.5, 0.5);
    REQUIRE(cs.size() == 1);
    CHECK(cs[0].members.size() == 2);
  }
  SUBCASE("orthogonal images split") {
    GeoBucket two{{0, 0}, {"a", "b"}};
    FeatureMap image{{"a", {1, 0}}, {"b", {0, 1}}};
    CHECK(refine_clusters(two, image, text, 0.5, 0.5).size() == 2);
  }
  SUBCASE("a path a-b-c with d isolated") {
    // cos(a,b) = cos(b,c) = 0.707, cos(a,c) = 0, d orthogonal to all.
    FeatureMap image{{"a", {1, 0, 0}}, {"b", {1, 1, 0}}, {"c", {0, 1, 0}}, {"d", {0, 0, 1}}};
    auto cs = refine_clusters(bucket, image, text, 0.5, 0.5, 7);
    REQUIRE(cs.size() == 2);
    CHECK(cs[0].members == std::vector<std::string>{"a", "b", "c"});
    CHECK(cs[0].edges.size() == 2);
    CHECK(cs[0].id == 7);
    CHECK(cs[1].members == std::vector<std::string>{"d"});
    CHECK(cs[1].id == 8);
  }
}

TEST_CASE("gazetteer tagging") {
  Gazetteer g;
  g.add("Cuilapan De Guerrero", EntityKind::location);
  auto toks = split_tokens("Ex Convento at Cuilapan De Guerrero completed in 1555");
  auto spans = tag_entities(toks, g);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0].start == 3);
  CHECK(spans[0].end == 6);
  CHECK(spans[0].kind == EntityKind::location);

  CHECK(tag_entities(toks, Gazetteer{}).empty());

  Gazetteer ny;
  ny.add("New York", EntityKind::location);
  ny.add("New York City", EntityKind::location);
  auto longest = tag_entities(split_tokens("I love New York City"), ny);
  REQUIRE(longest.size() == 1);
  CHECK(longest[0].surface == "New York City");

  CHECK(Gazetteer::parse(g.serialize()).entries() == g.entries());
}

TEST_CASE("entity swaps") {
  Gazetteer g;
  g.add("Cuilapan De Guerrero", EntityKind::location);
  g.add("Dorena Bridge", EntityKind::location);
  g.add("Dilip", EntityKind::person);
  g.add("Neil Gaiman", EntityKind::person);

  SUBCASE("location swap carries gps and location names") {
    auto target = tagged("t", "Ex Convento at Cuilapan De Guerrero completed in 1555", g, 1);
    target.gps = {16.992657, -96.779133};
    auto source = tagged("s", "Dorena Bridge in the fog", g, 2);
    source.gps = {43.737553, -122.883646};
    source.loc_names = {"USA", "Lane", "Oregon", "Row River"};
    auto out = manipulate_package(target, source, EntityKind::location);
    CHECK(text_of(out) == "Ex Convento at Dorena Bridge completed in 1555");
    CHECK(out.gps == source.gps);
    CHECK(out.loc_names == source.loc_names);
    CHECK(out.integrity == IntegrityLabel::manipulated);
    CHECK(out.manipulation == ManipulationType::location);
    CHECK(validate_package(out).empty());
  }
  SUBCASE("person swap keeps gps") {
    auto target = tagged("t", "a city modelled in Lego by Dilip", g, 1);
    target.gps = {1, 2};
    auto source = tagged("s", "Neil Gaiman signing books", g, 2);
    source.gps = {3, 4};
    auto out = manipulate_package(target, source, EntityKind::person);
    CHECK(text_of(out) == "a city modelled in Lego by Neil Gaiman");
    CHECK(out.gps == target.gps);
  }
  SUBCASE("every occurrence is replaced") {
    auto target = tagged("t", "Dilip met Dilip", g, 1);
    auto source = tagged("s", "Neil Gaiman", g, 2);
    auto out = manipulate_package(target, source, EntityKind::person);
    CHECK(text_of(out) == "Neil Gaiman met Neil Gaiman");
    CHECK(out.entities.size() == 2);
  }
  SUBCASE("same-cluster pairs are rejected") {
    auto target = tagged("t", "Dilip", g, 1);
    auto source = tagged("s", "Neil Gaiman", g, 1);
    CHECK_THROWS_AS(plan_manipulation(target, source, EntityKind::person), Error);
  }
  SUBCASE("missing entity kind is rejected") {
    auto target = tagged("t", "Dilip", g, 1);
    auto source = tagged("s", "Dorena Bridge", g, 2);
    CHECK_THROWS_AS(plan_manipulation(target, source, EntityKind::person), Error);
  }
}

TEST_CASE("allocation of a cluster of 8 and a cluster of 2") {
  Cluster big{0, {"a", "b", "c", "d", "e", "f", "g", "h"}, {}};
  Cluster small{1, {"x", "y"}, {}};
  auto alloc = allocate_splits({big, small}, 3);
  std::size_t ref = 0;
  for (const auto& id : big.members) ref += alloc.split.at(id) == Split::reference;
  CHECK(ref == 4);
  std::size_t man = 0;
  for (const auto& id : big.members) man += alloc.manipulate.count(id);
  CHECK(man == 2);
  CHECK(alloc.split.at("x") == Split::reference);
  CHECK(alloc.split.at("y") == Split::reference);
  CHECK(alloc.manipulate.count("x") == 0);
  for (const auto& [id, _] : alloc.manipulate) CHECK(alloc.split.at(id) != Split::reference);
}

TEST_CASE("generator shape and determinism") {
  const auto cfg = small_config();
  const auto lex = default_lexicons(cfg.clusters, 5);
  auto a = generate_synthetic_corpus(cfg, lex, 5);
  auto b = generate_synthetic_corpus(cfg, lex, 5);
  CHECK(a.packages.size() == 80);
  CHECK(std::set<std::int64_t>(a.truth_cluster.begin(), a.truth_cluster.end()).size() == 10);
  CHECK(a.packages == b.packages);
  CHECK(a.image_features == b.image_features);
  CHECK(bucket_by_gps(a.packages).size() == 10);
  for (const auto& p : a.packages) CHECK(validate_package(p).empty());
}

TEST_CASE("built dataset invariants") {
  const auto cfg = small_config();
  const auto corpus = generate_synthetic_corpus(cfg, default_lexicons(cfg.clusters, 5), 5);
  const auto built = build_dataset(corpus, cfg, 5);
  std::map<std::string, std::int64_t> cluster;
  for (const auto& p : built.packages) cluster[p.id] = p.cluster_id.value_or(-1);
  for (const auto& p : built.packages) {
    CHECK(validate_package(p).empty());
    if (p.split == Split::reference) CHECK(p.integrity == IntegrityLabel::clean);
  }
  REQUIRE_FALSE(built.plans.empty());
  for (const auto& plan : built.plans) {
    CHECK(cluster.at(plan.target_id) != cluster.at(plan.source_id));
  }
  CHECK(validate_manifest(built.manifest).empty());
  CHECK(built.manifest.config.at("clusters") == "10");
}

TEST_CASE("synth config validation") {
  Config c;
  c.set("gps_jitter", "0.01");
  CHECK_THROWS_AS(SynthConfig::from(c), Error);
  Config r;
  r.set("region_lat_min", "50");
  r.set("region_lat_max", "40");
  CHECK_THROWS_AS(SynthConfig::from(r), Error);
  Config ok;
  ok.set("neighbor_merge", "true");
  CHECK(SynthConfig::from(ok).neighbor_merge);
  CHECK(SynthConfig::from(ok).snapshot().at("neighbor_merge") == "true");
}
