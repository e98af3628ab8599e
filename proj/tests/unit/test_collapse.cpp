#include <cmath>

#include "arblab/collapse.hpp"
#include "doctest.h"

using namespace arblab;

TEST_CASE("etf_frame has unit norms and equal negative dots") {
  Rng rng(31);
  for (std::size_t c : {2u, 3u, 7u, 16u}) {
    for (std::size_t d : {c, c + 3, std::size_t{64}}) {
      const EtfFrame f = etf_frame(c, d, rng);
      REQUIRE(f.vectors.rows() == c);
      REQUIRE(f.vectors.cols() == d);
      const Matrix g = matmul_transposed(f.vectors, f.vectors);
      for (std::size_t i = 0; i < c; ++i) {
        CHECK(std::abs(g(i, i) - 1.0) <= 1e-10);
        for (std::size_t j = 0; j < c; ++j) {
          if (i != j) CHECK(std::abs(g(i, j) + 1.0 / static_cast<double>(c - 1)) <= 1e-10);
        }
      }
      // The frame vectors sum to zero.
      for (std::size_t k = 0; k < d; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < c; ++i) s += f.vectors(i, k);
        CHECK(std::abs(s) <= 1e-10);
      }
    }
  }
  CHECK_THROWS_AS(etf_frame(5, 4, rng), InvalidSpec);
  CHECK_THROWS_AS(etf_frame(1, 4, rng), InvalidSpec);
}

TEST_CASE("balance metrics vanish on an ETF") {
  Rng rng(32);
  const EtfFrame f = etf_frame(10, 16, rng);
  const auto m = balance_metrics(f.vectors);
  CHECK(m.b_d2 <= 1e-10);
  CHECK(m.b_a2 <= 1e-10);
  CHECK(m.b_l2 <= 1e-10);
  CHECK(m.mean_cosine == doctest::Approx(-1.0 / 9.0));
  CHECK(m.min_pairwise_angle_deg == doctest::Approx(std::acos(-1.0 / 9.0) * 180.0 / M_PI));
  // Each similarity row is uniform: 1/(c−1) off the diagonal.
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK_FALSE(m.similarity_degenerate[i]);
    for (std::size_t j = 0; j < 10; ++j) {
      CHECK(m.similarity(i, j) == doctest::Approx(i == j ? 0.0 : 1.0 / 9.0));
    }
  }
  // Scaling changes neither angles nor balance.
  const auto scaled = balance_metrics(3.0 * f.vectors);
  CHECK(scaled.b_a2 <= 1e-10);
  CHECK(scaled.b_d2 <= 1e-10);
}

TEST_CASE("balance metrics on a hand-worked example") {
  const Matrix w{{1, 0}, {0, 2}, {-1, 0}};
  const auto m = balance_metrics(w);
  // Off-diagonal dots {0, −1, 0, 0, −1, 0}: mean −1/3, squared deviations 4/3.
  CHECK(m.b_d2 == doctest::Approx(1.0 / 3.0));
  CHECK(m.b_d2_population == doctest::Approx(2.0 / 9.0));
  CHECK(m.b_a2 == doctest::Approx(1.0 / 3.0));
  CHECK(m.b_l2 == doctest::Approx(2.0 / 9.0));
  CHECK(m.min_pairwise_angle_deg == doctest::Approx(90.0));
  CHECK(m.norms == std::vector<double>{1.0, 2.0, 1.0});
  CHECK(m.similarity(0, 1) == doctest::Approx(0.0));
  CHECK(m.similarity(0, 2) == doctest::Approx(1.0));
  // Row 1 is orthogonal to everything: its dot sum is zero.
  CHECK(m.similarity_degenerate[1]);
  CHECK(std::isnan(m.similarity(1, 0)));
  CHECK_FALSE(m.similarity_degenerate[0]);
}

TEST_CASE("degenerate inputs throw") {
  CHECK_THROWS_AS(balance_metrics(Matrix{{1, 0}}), DegenerateWeights);
  CHECK_THROWS_AS(balance_metrics(Matrix{{1, 0}, {0, 0}}), DegenerateWeights);
  CHECK_THROWS_AS(class_means(Matrix{{1.0}}, std::vector<int>{0}, 2), DegenerateWeights);
}

TEST_CASE("class-mean geometry recovers a planted frame under imbalance") {
  Rng rng(33);
  const EtfFrame f = etf_frame(4, 6, rng);
  const std::vector<std::size_t> counts{50, 20, 5, 2};
  std::vector<double> offset{1, 2, 3, 4, 5, 6};
  std::size_t n = 0;
  for (auto k : counts) n += k;
  Matrix h(n, 6);
  std::vector<int> y;
  std::size_t r = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t s = 0; s < counts[k]; ++s, ++r) {
      y.push_back(static_cast<int>(k));
      for (std::size_t q = 0; q < 6; ++q) h(r, q) = 2.0 * f.vectors(k, q) + offset[q];
    }
  }
  const auto g = class_mean_geometry(h, y, 4);
  CHECK(g.metrics.b_a2 <= 1e-10);
  CHECK(g.metrics.b_l2 <= 1e-10);
  for (std::size_t q = 0; q < 6; ++q) CHECK(g.center[q] == doctest::Approx(offset[q]));
  for (double v : g.within_class_variance) CHECK(v <= 1e-20);
}

TEST_CASE("minority collapse score and nearest mean") {
  const Matrix w{{1, 0, 0}, {0, 1, 0}, {0, 1, 1e-3}, {0, -1, 0}};
  const std::vector<int> minority{1, 2, 3};
  CHECK(minority_collapse_score(w, minority) == doctest::Approx(1.0).epsilon(1e-6));
  const std::vector<int> apart{0, 3};
  CHECK(minority_collapse_score(w, apart) == doctest::Approx(0.0));
  CHECK_THROWS_AS(minority_collapse_score(w, std::vector<int>{1}), InvalidSpec);

  const Matrix means{{0, 0}, {10, 0}};
  CHECK(nearest_mean(means, std::vector<double>{6, 1}) == 1);
  CHECK(nearest_mean(means, std::vector<double>{4, 1}) == 0);
}
