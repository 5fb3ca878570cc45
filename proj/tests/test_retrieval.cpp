#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "meir/random.hpp"
#include "meir/retrieval.hpp"

using namespace meir;

namespace {

FeatureBundle bundle(Vector image, Vector text, Vector gps) {
  FeatureBundle b;
  b.image = std::move(image);
  b.text_pooled = std::move(text);
  b.text_tokens = Matrix(1, b.text_pooled.size());
  b.text_tokens.data = b.text_pooled;
  b.gps = std::move(gps);
  return b;
}

// Exhaustive ranking by direct cosine sums, ties by id.
std::vector<std::string> brute_force(const FeatureBundle& q, const std::vector<std::string>& ids,
                                     const std::vector<FeatureBundle>& refs,
                                     const std::vector<Modality>& mods) {
  const auto cos = [](const Vector& a, const Vector& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    return aa == 0 || bb == 0 ? 0.0 : ab / std::sqrt(aa * bb);
  };
  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double s = 0;
    for (auto m : mods) s += cos(q.slot(m), refs[i].slot(m));
    scored.emplace_back(s, ids[i]);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (auto& [_, id] : scored) out.push_back(id);
  return out;
}

std::vector<std::string> ranked_ids(const RetrievalResult& r) {
  std::vector<std::string> out;
  for (const auto& h : r.hits) out.push_back(h.id);
  return out;
}

}  // namespace

TEST_CASE("cosine") {
  const Vector v{0.3, -2, 5};
  CHECK(cosine(v, v) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine(Vector{1, 0}, Vector{0, 1}) == 0.0);
  CHECK(std::abs(cosine(Vector{1, 0}, Vector{1, 1}) - 0.70711) < 1e-5);
  CHECK(cosine(Vector{0, 0}, Vector{1, 1}) == 0.0);
}

TEST_CASE("similarity sum over modalities") {
  const auto a = bundle({1, 2}, {3, 4}, {0.1, 0.2});
  CHECK(score_pair(a, a, kAllModalities) == doctest::Approx(3.0));

  const auto b = bundle({1, 2}, {3, 4}, {-0.2, 0.1});
  CHECK(score_pair(a, b, kAllModalities) == doctest::Approx(2.0));

  const auto q = bundle({1, 0}, {1, 0}, {0.5, 0.5});
  const auto r = bundle({1, 1}, {0, 1}, {0.25, 0.25});
  CHECK(std::abs(score_pair(q, r, kAllModalities) - 1.70711) < 1e-5);
}

TEST_CASE("top-k retrieval") {
  std::vector<std::string> ids{"p3", "p7", "p9"};
  std::vector<FeatureBundle> refs{bundle({1, 0}, {0, 1}, {0.1, 0.1}), bundle({0.2, 1}, {1, 1}, {-0.3, 0.2}),
                                  bundle({1, 1}, {1, 0}, {0.1, -0.4})};
  ReferenceIndex index(ids, refs);

  SUBCASE("self retrieval") {
    CHECK(retrieve_top_k(refs[1], index, kAllModalities, 1).top_id() == "p7");
  }
  SUBCASE("ranking matches exhaustive scoring") {
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
      auto q = bundle({rng.normal(), rng.normal()}, {rng.normal(), rng.normal()}, {rng.normal(), rng.normal()});
      CHECK(ranked_ids(retrieve_top_k(q, index, kAllModalities, 3)) == brute_force(q, ids, refs, {kAllModalities.begin(), kAllModalities.end()}));
      CHECK(ranked_ids(retrieve_per_modality(q, index, Modality::text, 3)) == brute_force(q, ids, refs, {Modality::text}));
    }
  }
  SUBCASE("gps-only query at a reference's coordinates") {
    auto q = bundle({0, 0}, {0, 0}, refs[2].gps);
    CHECK(retrieve_per_modality(q, index, Modality::gps, 1).top_id() == "p9");
  }
  SUBCASE("zero query scores zero and orders by id") {
    auto q = bundle({0, 0}, {1, 1}, {0, 0});
    auto r = retrieve_per_modality(q, index, Modality::image, 3);
    CHECK(ranked_ids(r) == std::vector<std::string>{"p3", "p7", "p9"});
    for (const auto& h : r.hits) CHECK(h.score == 0.0);
  }
  SUBCASE("k larger than the index") {
    CHECK(retrieve_top_k(refs[0], index, kAllModalities, 10).hits.size() == 3);
  }
}

TEST_CASE("identical references tie-break by ascending id") {
  const auto b = bundle({1, 2}, {1, 0}, {0.3, 0.3});
  ReferenceIndex index({"zeta", "alpha", "mid"}, {b, b, b});
  auto r = retrieve_top_k(b, index, kAllModalities, 3);
  CHECK(ranked_ids(r) == std::vector<std::string>{"alpha", "mid", "zeta"});
}

TEST_CASE("negative euclidean gps similarity") {
  const auto a = bundle({1}, {1}, {0.0, 0.0});
  const auto b = bundle({1}, {1}, {0.3, 0.4});
  const std::vector<Modality> gps{Modality::gps};
  CHECK(score_pair(a, b, gps, GpsSimilarity::neg_euclidean) == doctest::Approx(-0.5));
  CHECK(parse_gps_similarity(to_string(GpsSimilarity::neg_euclidean)) == GpsSimilarity::neg_euclidean);
}
