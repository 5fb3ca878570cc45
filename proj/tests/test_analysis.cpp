#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "meir/analysis.hpp"
#include "meir/dataset.hpp"
#include "meir/error.hpp"
#include "meir/random.hpp"

using namespace meir;

namespace {

// Concordant pairs count 1, ties 1/2, over all positive-negative pairs.
double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / pairs;
}

FeatureBundle bundle(Vector image, Vector text, Vector gps) {
  FeatureBundle b;
  b.image = std::move(image);
  b.text_pooled = std::move(text);
  b.text_tokens = Matrix(1, b.text_pooled.size());
  b.text_tokens.data = b.text_pooled;
  b.gps = std::move(gps);
  return b;
}

}  // namespace

TEST_CASE("roc auc matches brute-force pair counting") {
  Rng rng(1);
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(inst % 2 ? 5 : 1000));  // many ties on odd instances
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(roc_auc(s, y) == brute_auc(s, y));
  }
}

TEST_CASE("roc auc edge cases") {
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y) == 0.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), Error);
}

TEST_CASE("f1 scores") {
  const std::vector<int> y{1, 0, 1, 0};
  auto perfect = f1_scores(y, std::vector<double>{1, 0, 1, 0});
  CHECK(perfect.tampered == 1.0);
  CHECK(perfect.clean == 1.0);

  CHECK(f1_scores(y, std::vector<double>{0, 0, 0, 0}).tampered == 0.0);

  // TP=3, FP=1, FN=1, TN=2 for the tampered class.
  const std::vector<int> labels{1, 1, 1, 1, 0, 0, 0};
  const std::vector<double> preds{0.9, 0.8, 0.7, 0.1, 0.6, 0.2, 0.3};
  const auto f = f1_scores(labels, preds);
  CHECK(std::abs(f.tampered - 0.75) < 1e-12);
  // Clean as positive: TP=2, FP=1, FN=1.
  CHECK(std::abs(f.clean - 2.0 / 3.0) < 1e-12);
}

TEST_CASE("jaccard") {
  using S = std::set<std::string>;
  CHECK(jaccard(S{"a", "b"}, S{"a", "b"}) == 1.0);
  CHECK(jaccard(S{"a"}, S{"b"}) == 0.0);
  CHECK(jaccard(S{"a", "b", "c"}, S{"b", "c", "d"}) == 0.5);
  CHECK(jaccard(S{}, S{}) == 1.0);
}

TEST_CASE("srs score") {
  SUBCASE("agreeing modalities") {
    ReferenceIndex idx({"a", "b", "c"}, {bundle({1, 0}, {1, 0}, {1, 0}), bundle({1, 0.1}, {1, 0.1}, {1, 0.1}),
                                         bundle({0, 1}, {0, 1}, {0, 1})});
    CHECK(srs_score(bundle({1, 0}, {1, 0}, {1, 0}), idx, 2) == 1.0);
  }
  SUBCASE("sets {a,b}, {a,b}, {c,d}") {
    ReferenceIndex idx({"a", "b", "c", "d"}, {bundle({1, 0}, {1, 0}, {0, 1}), bundle({1, 0}, {1, 0}, {0, 1}),
                                              bundle({0, 1}, {0, 1}, {1, 0}), bundle({0, 1}, {0, 1}, {1, 0})});
    const double s = srs_score(bundle({1, 0}, {1, 0}, {1, 0}), idx, 2);
    CHECK(std::abs(s - 1.0 / 3.0) < 1e-12);
  }
  SUBCASE("pairwise disjoint sets") {
    ReferenceIndex idx({"a", "b", "c"}, {bundle({1, 0, 0}, {0, 1, 0}, {0, 0, 1}), bundle({0, 1, 0}, {0, 0, 1}, {1, 0, 0}),
                                         bundle({0, 0, 1}, {1, 0, 0}, {0, 1, 0})});
    CHECK(srs_score(bundle({1, 0, 0}, {1, 0, 0}, {1, 0, 0}), idx, 1) == 0.0);
  }
  SUBCASE("k = 0 is rejected") {
    ReferenceIndex idx({"a"}, {bundle({1}, {1}, {1})});
    CHECK_THROWS_AS(srs_score(bundle({1}, {1}, {1}), idx, 0), Error);
  }
}

TEST_CASE("gaussian random projection") {
  const std::size_t d = 512, L = 64, n = 50;
  CHECK(gaussian_projection(d, L, 3) == gaussian_projection(d, L, 3));
  Rng rng(6);
  Matrix x(n, d);
  for (auto& v : x.data) v = rng.normal();
  const auto y = random_projection(x, L, 3);
  CHECK(y.rows == n);
  CHECK(y.cols == L);
  const auto dist = [](std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  std::size_t ok = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double ratio = dist(y.row(i), y.row(j)) / dist(x.row(i), x.row(j));
      ok += ratio >= 0.5 && ratio <= 1.5;
      ++total;
    }
  }
  CHECK(static_cast<double>(ok) >= 0.9 * static_cast<double>(total));
}

TEST_CASE("forest importances") {
  Rng rng(2);
  SUBCASE("a single separating feature takes all the importance") {
    Matrix x(200, 4);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
      y[i] = static_cast<int>(i % 2);
      x(i, 0) = y[i] + 0.1 * rng.uniform();
      for (std::size_t f = 1; f < 4; ++f) x(i, f) = 0.5;  // constant, never split
    }
    auto forest = RandomForest::train(x, y, {20, 8, 1});
    CHECK(forest.importances()[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t f = 1; f < 4; ++f) CHECK(forest.importances()[f] == 0.0);
  }
  SUBCASE("xor features beat a noise feature") {
    Matrix x(400, 3);
    std::vector<int> y(400);
    for (std::size_t i = 0; i < 400; ++i) {
      x(i, 0) = rng.uniform();
      x(i, 1) = rng.uniform();
      x(i, 2) = rng.uniform();
      y[i] = (x(i, 0) > 0.5) != (x(i, 1) > 0.5);
    }
    auto forest = RandomForest::train(x, y, {50, 8, 3});
    const auto& imp = forest.importances();
    double sum = 0;
    for (double v : imp) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK(imp[2] < std::min(imp[0], imp[1]));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 400; ++i) correct += (forest.predict_proba(x.row(i)) >= 0.5) == (y[i] == 1);
    CHECK(correct > 360);
  }
  SUBCASE("single-class labels are rejected") {
    Matrix x(4, 2, 1.0);
    std::vector<int> y(4, 1);
    CHECK_THROWS_AS(RandomForest::train(x, y, {}), Error);
  }
  SUBCASE("training is deterministic") {
    Matrix x(100, 5);
    std::vector<int> y(100);
    for (auto& v : x.data) v = rng.normal();
    for (std::size_t i = 0; i < 100; ++i) y[i] = x(i, 1) + x(i, 3) > 0;
    CHECK(RandomForest::train(x, y, {10, 6, 4}).importances() ==
          RandomForest::train(x, y, {10, 6, 4}).importances());
  }
}

TEST_CASE("modality importance") {
  Rng rng(9);
  const std::size_t n = 300;
  std::vector<FeatureBundle> qs(n), rs(n);
  std::vector<int> labels(n);
  const auto noise = [&](std::size_t d) {
    Vector v(d);
    for (auto& x : v) x = rng.uniform();
    return v;
  };
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = rng.bernoulli(0.5);
    qs[i] = bundle(noise(16), noise(8), noise(2));
    rs[i] = bundle(noise(16), noise(8), noise(2));
  }
  std::vector<PairedSample> samples;
  for (std::size_t i = 0; i < n; ++i) samples.push_back({&qs[i], &rs[i], labels[i]});

  SUBCASE("null model spreads importance evenly") {
    const auto rep = modality_importance(samples, 8, 30, 1, {20, 6, 0});
    for (const auto& t : rep.per_trial) {
      double sum = 0;
      for (double v : t) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    const double hi = std::max({rep.modality(Modality::image), rep.modality(Modality::text), rep.modality(Modality::gps)});
    const double lo = std::min({rep.modality(Modality::image), rep.modality(Modality::text), rep.modality(Modality::gps)});
    CHECK(hi <= 2.0 * lo);
  }
  SUBCASE("a planted gps signal wins") {
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i]) qs[i].gps = {rs[i].gps[0] + 0.5, rs[i].gps[1] - 0.5};
      else qs[i].gps = rs[i].gps;
    }
    const auto rep = modality_importance(samples, 8, 10, 1, {20, 6, 0});
    CHECK(rep.wins(Modality::gps) == 10);
  }
}

TEST_CASE("evaluate_run") {
  std::vector<Example> refs_ex, queries;
  for (int c = 0; c < 3; ++c) {
    Example r;
    r.id = "r" + std::to_string(c);
    r.cluster = c;
    Vector v(3, 0.0);
    v[c] = 1.0;
    r.bundle = bundle(v, v, {0.1 * c, 0.2});
    refs_ex.push_back(r);
    for (int k = 0; k < 2; ++k) {
      Example q = r;
      q.id = "q" + std::to_string(c) + std::to_string(k);
      q.integrity = k ? IntegrityLabel::manipulated : IntegrityLabel::clean;
      q.manipulation = k ? ManipulationType::person : ManipulationType::none;
      queries.push_back(q);
    }
  }
  const auto refs = build_reference_set(refs_ex);
  const Scorer truth = [](const Example& q, const FeatureBundle&, const std::string&) {
    return q.tampered() ? 1.0 : 0.0;
  };
  const auto rep = evaluate_run(truth, queries, refs, std::nullopt);
  CHECK(rep.auc == 1.0);
  CHECK(rep.n_queries == 6);
  CHECK(rep.n_tampered == 3);
  CHECK(rep.n_reference == 3);
  CHECK(rep.retrieval.overall == 1.0);
  const auto text = rep.to_text();
  for (const char* key : {"auc\t", "f1_tampered\t", "f1_clean\t"}) CHECK(text.find(key) != std::string::npos);

  const Scorer no_image = [](const Example&, const FeatureBundle& r, const std::string&) {
    CHECK_FALSE(r.has(Modality::image));
    for (double x : r.image) CHECK(x == 0.0);
    return 0.5;
  };
  const auto missing = evaluate_run(no_image, queries, refs, Modality::image);
  CHECK(missing.retrieval.overall == 1.0);
  CHECK(missing.auc == 0.5);
}
