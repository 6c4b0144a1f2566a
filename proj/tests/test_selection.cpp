#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ssat/data.hpp"
#include "ssat/selection.hpp"

using namespace ssat;

namespace {

// Small pool with a trained-ish intermediate model for scoring tests.
struct Fixture {
  Dataset pool;
  MlpParams model;

  Fixture()
      : pool(make_pool()),
        model(make_mlp({2, 16, 16, 3}, Activation::kRelu, 5)) {}

  static Dataset make_pool() {
    Dataset full = gen_synthetic(SyntheticKind::kGaussians, 200, 3, 0.4, 17);
    std::vector<std::size_t> idx(full.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return full.subset(idx, Split::kUnlabeled);
  }
};

}  // namespace

TEST_CASE("pcs ranks a uniform-logit point first with score 1/C") {
  // Zero-weight classifier: every point has uniform logits.
  MlpParams zero = make_mlp({2, 8, 8, 4}, Activation::kRelu, 1);
  for (Tensor& w : zero.weights) std::fill(w.data.begin(), w.data.end(), 0.0);
  for (Tensor& b : zero.biases) std::fill(b.data.begin(), b.data.end(), 0.0);
  const Fixture f;
  const ScoredPool pool =
      compute_scores(f.pool, zero, SelectionMethod::kPcs, 4, 0);
  for (const ScoredPoint& p : pool.points) {
    CHECK(p.score == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p.pseudo_label == 0);  // tie rule
  }
}

TEST_CASE("lcs-km scoring matches brute-force rescoring with a stable sort") {
  const Fixture f;
  const std::uint64_t seed = 3;
  ScoredPool pool =
      compute_scores(f.pool, f.model, SelectionMethod::kLcsKm, 3, seed);
  REQUIRE(pool.kmeans.has_value());

  // Recompute every score independently from the same fitted model.
  const ClassifierOutput fwd = classifier_forward(f.model, f.pool.features());
  std::vector<double> expect(f.pool.size());
  for (std::size_t i = 0; i < f.pool.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < pool.kmeans->k(); ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < fwd.latent.cols; ++c) {
        const double diff =
            fwd.latent.at(i, c) - pool.kmeans->centroids.at(j, c);
        acc += diff * diff;
      }
      d.push_back(std::sqrt(acc));
    }
    std::sort(d.begin(), d.end());
    expect[i] = d[1] - d[0];
  }
  for (std::size_t i = 0; i < f.pool.size(); ++i) {
    CHECK(pool.points[i].score ==
          doctest::Approx(expect[i]).epsilon(1e-9));
  }

  // Selection keeps exactly the lowest-score points as boundary picks.
  const Selection sel = select_subset(pool, 0.2, 1.0, 9);
  std::vector<std::size_t> order(f.pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return expect[a] < expect[b];
                   });
  std::set<std::size_t> expected_set(order.begin(), order.begin() + 40);
  for (std::size_t idx : sel.indices) CHECK(expected_set.count(idx) == 1);
}

TEST_CASE("selection arithmetic follows the floor rules") {
  SUBCASE("1000 points, alpha 0.1, beta 0.6 -> 60 boundary + 40 random") {
    ScoredPool pool;
    pool.points.resize(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
      pool.points[i].index = i;
      pool.points[i].score = static_cast<double>(i);
    }
    const Selection sel = select_subset(pool, 0.1, 0.6, 1);
    CHECK(sel.indices.size() == 100);
    CHECK(sel.boundary_count == 60);
  }
  SUBCASE("997 points, alpha 0.1, beta 0.6 -> n 99, boundary 59, fill 40") {
    ScoredPool pool;
    pool.points.resize(997);
    for (std::size_t i = 0; i < 997; ++i) {
      pool.points[i].index = i;
      pool.points[i].score = static_cast<double>(i);
    }
    const Selection sel = select_subset(pool, 0.1, 0.6, 1);
    CHECK(sel.indices.size() == 99);
    CHECK(sel.boundary_count == 59);
  }
}

TEST_CASE("beta = 1 keeps exactly the n lowest-score points") {
  ScoredPool pool;
  pool.points.resize(50);
  for (std::size_t i = 0; i < 50; ++i) {
    pool.points[i].index = i;
    pool.points[i].score = static_cast<double>(49 - i);  // descending
  }
  const Selection sel = select_subset(pool, 0.2, 1.0, 2);
  CHECK(sel.indices.size() == 10);
  CHECK(sel.boundary_count == 10);
  for (std::size_t idx : sel.indices) CHECK(idx >= 40);  // lowest scores
}

TEST_CASE("selected indices are unique and reasons partition the selection") {
  const Fixture f;
  ScoredPool pool =
      compute_scores(f.pool, f.model, SelectionMethod::kPcs, 3, 0);
  const Selection sel = select_subset(pool, 0.3, 0.5, 7);
  std::set<std::size_t> unique(sel.indices.begin(), sel.indices.end());
  CHECK(unique.size() == sel.indices.size());
  std::size_t boundary = 0, fill = 0, none = 0;
  for (const ScoredPoint& p : pool.points) {
    if (p.reason == SelectReason::kBoundary) {
      ++boundary;
      CHECK(p.selected);
    } else if (p.reason == SelectReason::kRandomFill) {
      ++fill;
      CHECK(p.selected);
    } else {
      ++none;
      CHECK(!p.selected);
    }
  }
  CHECK(boundary == sel.boundary_count);
  CHECK(boundary + fill == sel.indices.size());
  CHECK(none == f.pool.size() - sel.indices.size());
}

TEST_CASE("an empty selection is an error") {
  ScoredPool pool;
  pool.points.resize(5);
  CHECK_THROWS_AS(select_subset(pool, 0.1, 0.5, 0), Error);
}

TEST_CASE("identical inputs and seed reproduce an identical manifest") {
  const Fixture f;
  ScoredPool a =
      compute_scores(f.pool, f.model, SelectionMethod::kLcsGmm, 3, 11);
  ScoredPool b =
      compute_scores(f.pool, f.model, SelectionMethod::kLcsGmm, 3, 11);
  const Selection sa = select_subset(a, 0.25, 0.4, 13);
  const Selection sb = select_subset(b, 0.25, 0.4, 13);
  CHECK(sa.indices == sb.indices);
  CHECK(sa.pseudo_labels == sb.pseudo_labels);
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i].score == b.points[i].score);
    CHECK(a.points[i].reason == b.points[i].reason);
  }
}

TEST_CASE("random-mode inclusion frequencies look uniform across seeds") {
  ScoredPool base;
  const std::size_t n = 60;
  base.points.resize(n);
  const std::size_t total = 12;  // alpha 0.2
  std::vector<std::size_t> hits(n, 0);
  const int seeds = 400;
  for (int s = 0; s < seeds; ++s) {
    ScoredPool pool = base;
    for (std::size_t i = 0; i < n; ++i) pool.points[i].index = i;
    Rng score_rng(1000 + s);
    for (std::size_t i = 0; i < n; ++i) {
      pool.points[i].score = score_rng.uniform01();
    }
    const Selection sel = select_subset(pool, 0.2, 0.0, 4000 + s);
    for (std::size_t idx : sel.indices) hits[idx]++;
  }
  const double p = static_cast<double>(total) / n;
  const double sigma = std::sqrt(p * (1 - p) / seeds);
  for (std::size_t i = 0; i < n; ++i) {
    const double freq = static_cast<double>(hits[i]) / seeds;
    CHECK(std::abs(freq - p) <= 4.0 * sigma);  // slack for the unit test
  }
}

TEST_CASE("clustering failures propagate out of compute_scores") {
  // Pool smaller than k.
  Dataset tiny = gen_synthetic(SyntheticKind::kGaussians, 4, 2, 0.2, 3);
  std::vector<std::size_t> idx{0, 1};
  const Dataset pool = tiny.subset(idx, Split::kUnlabeled);
  const MlpParams model = make_mlp({2, 8, 8, 2}, Activation::kRelu, 2);
  CHECK_THROWS_AS(compute_scores(pool, model, SelectionMethod::kLcsKm, 3, 0),
                  Error);
}

TEST_CASE("selection config validation") {
  SelectionConfig cfg;
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.alpha = 0.5;
  cfg.beta = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.beta = 0.5;
  cfg.method = SelectionMethod::kLcsKm;
  cfg.k = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.k = 4;
  CHECK_NOTHROW(cfg.validate());
}
