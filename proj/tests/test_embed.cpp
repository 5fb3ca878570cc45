#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "meir/embed.hpp"
#include "meir/error.hpp"
#include "meir/random.hpp"

using namespace meir;

TEST_CASE("hash token embeddings are deterministic and seed dependent") {
  HashTokenEmbedder a(32, 1), b(32, 2);
  CHECK(a.embed("london") == a.embed("london"));
  CHECK(a.embed("london") != b.embed("london"));
  CHECK(a.embed("London") == a.embed("london"));
}

TEST_CASE("hash token embeddings have unit expected squared norm") {
  HashTokenEmbedder e(32, 5);
  Rng rng(3);
  double sum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto v = e.embed("tok" + std::to_string(rng.next_u64()));
    sum += dot(v, v);
  }
  CHECK(std::abs(sum / 1000.0 - 1.0) < 0.1);
}

TEST_CASE("distinct tokens are nearly orthogonal on average") {
  HashTokenEmbedder e(32, 9);
  double sum = 0.0;
  const int pairs = 10000;
  for (int i = 0; i < pairs; ++i) {
    sum += dot(e.embed("a" + std::to_string(i)), e.embed("b" + std::to_string(i)));
  }
  CHECK(std::abs(sum / pairs) < 0.05);
}

TEST_CASE("average pooling") {
  Matrix one(1, 3);
  one.data = {1, -2, 3};
  auto p = pool_average(one, 3);
  CHECK(p.present);
  CHECK(p.vec == Vector{1, -2, 3});

  Matrix opposite(2, 3);
  opposite.data = {1, -2, 3, -1, 2, -3};
  CHECK(pool_average(opposite, 3).vec == Vector{0, 0, 0});

  auto none = pool_average(Matrix(0, 3), 3);
  CHECK_FALSE(none.present);
  CHECK(none.vec == Vector{0, 0, 0});
}

TEST_CASE("precomputed feature files") {
  const auto dir = std::filesystem::temp_directory_path() / "meir_embed_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "f.feat";
  write_feature_table(path, 3, {{"p1", {1, 2, 3}}, {"p2", {4, 5, 6}}});

  auto got = load_precomputed(path, {"p1"});
  REQUIRE(got.size() == 1);
  CHECK(got["p1"] == Vector{1, 2, 3});

  try {
    load_precomputed(path, {"p3"});
    FAIL("expected not_found");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::not_found);
    CHECK(std::string(e.what()).find("p3") != std::string::npos);
  }

  {
    std::ofstream f(path);
    f << "dim=3\np1 1 2 3\np2 4 5\n";
  }
  try {
    read_feature_table(path);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::format);
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("bundles from packages") {
  HashTokenEmbedder text(8, 1);
  MapImageFeatures image(4, {{"p", {1, 0, 0, 0}}});
  Package p;
  p.id = "p";
  p.tokens = {"a", "b"};
  p.gps = {45, 90};
  auto b = make_bundle(p, text, image);
  CHECK(b.image == Vector{1, 0, 0, 0});
  CHECK(b.text_tokens.rows == 2);
  CHECK(b.gps == Vector{0.5, 0.5});

  Package empty = p;
  empty.tokens.clear();
  CHECK_FALSE(make_bundle(empty, text, image).has(Modality::text));
}
