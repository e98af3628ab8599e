#include <cmath>
#include <numeric>

#include "arblab/analysis.hpp"
#include "arblab/loss.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace arblab;

namespace {

struct Instance {
  Matrix features;   // b × d
  Matrix classifier; // c × d
  std::vector<int> labels;
  ClassCounts counts;
};

// Random small problem. Counts are batch-local or random positive globals.
Instance random_instance(Rng& rng, bool global) {
  const std::size_t b = 1 + rng.below(8);
  const std::size_t c = 2 + rng.below(4);
  const std::size_t d = 1 + rng.below(6);
  Instance in{gaussian_matrix(rng, b, d), gaussian_matrix(rng, c, d), std::vector<int>(b), {}};
  for (auto& y : in.labels) y = static_cast<int>(rng.below(c));
  if (global) {
    std::vector<double> n(c);
    for (auto& v : n) v = 1.0 + std::floor(rng.uniform() * 500.0);
    in.counts = ClassCounts::global(std::span<const double>(n));
  } else {
    in.counts = ClassCounts::from_labels(in.labels, c);
  }
  return in;
}

double summed_loss(LossKind kind, const Instance& in) {
  const Matrix logits = matmul_transposed(in.features, in.classifier);
  return batch_loss(kind, logits, in.labels, in.counts) * static_cast<double>(in.labels.size());
}

}  // namespace

TEST_CASE("hand-computed ARB values for two classes") {
  const std::vector<double> z{0.0, 0.0};
  const auto counts = ClassCounts::global(std::vector<std::size_t>{1, 3});

  const auto p0 = arb_softmax(z, counts, 0);
  CHECK(p0[0] == doctest::Approx(0.25));
  CHECK(p0[1] == doctest::Approx(0.25));
  const auto p1 = arb_softmax(z, counts, 1);
  CHECK(p1[0] == doctest::Approx(0.75));
  CHECK(p1[1] == doctest::Approx(0.75));

  CHECK(sample_loss(LossKind::Arb, z, 0, counts) == doctest::Approx(std::log(4.0)));
  CHECK(sample_loss(LossKind::Arb, z, 1, counts) == doctest::Approx(0.287682072451781));
  CHECK(sample_loss(LossKind::CrossEntropy, z, 1, counts) == doctest::Approx(std::log(2.0)));

  const auto g0 = logit_gradient(LossKind::Arb, z, 0, counts);
  CHECK(g0[0] == doctest::Approx(-0.75));
  CHECK(g0[1] == doctest::Approx(0.75));
  const auto g1 = logit_gradient(LossKind::Arb, z, 1, counts);
  CHECK(g1[0] == doctest::Approx(0.25));
  CHECK(g1[1] == doctest::Approx(-0.25));

  // log(1 + e^−5 / 3): the truth term bounds the loss below by 0.
  CHECK(sample_loss(LossKind::Arb, std::vector<double>{0.0, 5.0}, 1, counts) ==
        doctest::Approx(std::log1p(std::exp(-5.0) / 3.0)));
}

TEST_CASE("losses match the direct weighted-softmax oracle") {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const Instance in = random_instance(rng, t % 2 == 0);
    const Matrix logits = matmul_transposed(in.features, in.classifier);
    const std::vector<double> ones(in.counts.size(), 1.0);
    for (std::size_t j = 0; j < in.labels.size(); ++j) {
      const auto z = logits.row(j);
      CHECK(sample_loss(LossKind::Arb, z, in.labels[j], in.counts) ==
            doctest::Approx(oracle::weighted_softmax_loss(z, in.labels[j], in.counts.counts))
                .epsilon(1e-12));
      CHECK(sample_loss(LossKind::CrossEntropy, z, in.labels[j], in.counts) ==
            doctest::Approx(oracle::weighted_softmax_loss(z, in.labels[j], ones)).epsilon(1e-12));
    }
  }
}

TEST_CASE("ARB normalization identity") {
  Rng rng(22);
  for (int t = 0; t < 100; ++t) {
    const Instance in = random_instance(rng, true);
    const Matrix logits = matmul_transposed(in.features, in.classifier);
    const int y = in.labels[0];
    const auto p = arb_softmax(logits.row(0), in.counts, y);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += in.counts.counts[i] / in.counts.counts[y] * p[i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("closed-form gradients match central differences") {
  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    Instance in = random_instance(rng, t % 2 == 0);
    for (LossKind kind : {LossKind::CrossEntropy, LossKind::Arb}) {
      // Logits
      std::vector<double> z(in.counts.size());
      for (auto& v : z) v = 2.0 * rng.normal();
      const int y = in.labels[0];
      const auto fd_z = oracle::central_diff(std::span<double>(z), [&] {
        return sample_loss(kind, z, y, in.counts);
      });
      CHECK(oracle::rel_error(logit_gradient(kind, z, y, in.counts), fd_z) <= 1e-6);

      // Classifier (batch sum)
      const Matrix fd_w = oracle::central_diff(in.classifier, [&] { return summed_loss(kind, in); });
      const auto report = classifier_gradient(kind, in.features, in.labels, in.classifier, in.counts);
      CHECK(oracle::rel_error(report.full, fd_w) <= 1e-6);

      // Feature of sample 0
      std::vector<double> h(in.features.row(0).begin(), in.features.row(0).end());
      const auto fd_h = oracle::central_diff(std::span<double>(h), [&] {
        Matrix one(1, h.size(), h);
        return sample_loss(kind, matmul_transposed(one, in.classifier).row(0), y, in.counts);
      });
      const auto zrow = matmul_transposed(Matrix(1, h.size(), h), in.classifier);
      CHECK(oracle::rel_error(feature_gradient(kind, zrow.row(0), y, in.counts, in.classifier),
                              fd_h) <= 1e-6);
    }
  }
}

TEST_CASE("logit gradients sum to zero") {
  Rng rng(24);
  for (int t = 0; t < 1000; ++t) {
    const Instance in = random_instance(rng, t % 2 == 0);
    const Matrix logits = matmul_transposed(in.features, in.classifier);
    for (LossKind kind : {LossKind::CrossEntropy, LossKind::Arb}) {
      for (std::size_t j = 0; j < in.labels.size(); ++j) {
        const auto g = logit_gradient(kind, logits.row(j), in.labels[j], in.counts);
        CHECK(std::abs(std::accumulate(g.begin(), g.end(), 0.0)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("uniform counts make ARB identical to CE") {
  Rng rng(25);
  for (int t = 0; t < 1000; ++t) {
    Instance in = random_instance(rng, true);
    const double n = 1.0 + rng.below(1000);
    in.counts = ClassCounts::global(std::vector<double>(in.counts.size(), n));
    const Matrix logits = matmul_transposed(in.features, in.classifier);
    CHECK(std::abs(arb_loss(logits, in.labels, in.counts) - ce_loss(logits, in.labels)) <= 1e-14);
    const auto y = in.labels[0];
    const auto pa = arb_softmax(logits.row(0), in.counts, y);
    const auto pc = softmax(logits.row(0));
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(std::abs(pa[i] - pc[i]) <= 1e-14);
    const auto ra = classifier_gradient(LossKind::Arb, in.features, in.labels, in.classifier, in.counts);
    const auto rc = classifier_gradient(LossKind::CrossEntropy, in.features, in.labels,
                                        in.classifier, in.counts);
    CHECK(max_abs_diff(ra.full, rc.full) <= 1e-14);
    CHECK(max_abs_diff(ra.attraction, rc.attraction) <= 1e-14);
    const auto fa = feature_gradient(LossKind::Arb, logits.row(0), y, in.counts, in.classifier);
    const auto fc = feature_gradient(LossKind::CrossEntropy, logits.row(0), y, in.counts,
                                     in.classifier);
    for (std::size_t k = 0; k < fa.size(); ++k) CHECK(std::abs(fa[k] - fc[k]) <= 1e-14);
  }
}

TEST_CASE("gradient report reconstructs the full gradient") {
  Rng rng(26);
  for (int t = 0; t < 300; ++t) {
    const Instance in = random_instance(rng, t % 2 == 0);
    for (LossKind kind : {LossKind::CrossEntropy, LossKind::Arb}) {
      const auto r = classifier_gradient(kind, in.features, in.labels, in.classifier, in.counts);
      CHECK(r.reconstruction_residual() <= 1e-10);
      const std::size_t c = r.num_classes();
      for (std::size_t i = 0; i < c; ++i) {
        CHECK(norm2(r.repulsion[i].row(i)) == 0.0);
        CHECK(r.attraction_norm[i] == doctest::Approx(norm2(r.attraction.row(i))));
        // CE normalizes by the batch's own label counts.
        const double n = kind == LossKind::Arb
                             ? in.counts.counts[i]
                             : ClassCounts::from_labels(in.labels, c).counts[i];
        for (std::size_t k = 0; k < r.full.cols(); ++k) {
          const double want = n > 0 ? r.full(i, k) / n : 0.0;
          CHECK(r.normalized_full(i, k) == doctest::Approx(want));
        }
      }
      const auto mixed = combine_reports(0.3, r, 0.7, r);
      CHECK(max_abs_diff(mixed.full, r.full) < 1e-12);
    }
  }
}

TEST_CASE("classes absent from a batch drop out") {
  const Matrix logits{{1.0, 2.0, 5.0}, {0.5, -1.0, 7.0}};
  const std::vector<int> labels{0, 1};
  const auto counts = ClassCounts::from_labels(labels, 3);
  CHECK(counts.counts == std::vector<double>{1, 1, 0});
  const auto eval = evaluate_batch(LossKind::Arb, logits, labels, counts);
  CHECK(std::isfinite(eval.mean_loss));
  CHECK(eval.logit_grads(0, 2) == 0.0);
  CHECK(eval.logit_grads(1, 2) == 0.0);
  // Only classes 0 and 1 compete: a two-way softmax.
  const double expect = std::log1p(std::exp(1.0));
  CHECK(sample_loss(LossKind::Arb, logits.row(0), 0, counts) == doctest::Approx(expect));
  CHECK_THROWS_AS(sample_loss(LossKind::Arb, logits.row(0), 2, counts), InvalidSpec);
}

TEST_CASE("ARB repulsion is count-free on separated features, CE scales with counts") {
  PropositionScenario sc;
  sc.num_classes = 4;
  sc.dim = 8;
  sc.noise = 0.0;
  sc.weight_scale = 2.5;
  sc.feature_scale = 2.5;
  const std::vector<std::size_t> counts{20, 200, 20, 20};
  const ScenarioDraw draw = draw_scenario(sc, counts, 1);
  const auto cc = ClassCounts::global(std::span<const std::size_t>(counts));
  const auto ce = classifier_gradient(LossKind::CrossEntropy, draw.features, draw.labels,
                                      draw.classifier, cc);
  const auto arb = classifier_gradient(LossKind::Arb, draw.features, draw.labels, draw.classifier, cc);
  CHECK(*repulsion_ratio(ce, 0, 1, 2) == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(*repulsion_ratio(arb, 0, 1, 2) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("weighted class means and q coefficients") {
  const Matrix h{{1, 0}, {3, 0}, {0, 2}};
  const std::vector<int> y{0, 0, 1};
  const std::vector<double> q{1.0, 0.5, 2.0};
  const auto m0 = weighted_class_mean(h, y, q, 0);
  CHECK(m0.mean == std::vector<double>{1.25, 0.0});
  CHECK_FALSE(m0.empty);
  CHECK(weighted_class_mean(h, y, q, 2).empty);
  const Matrix g{{-0.25, 0.25}, {0.5, -0.5}};
  CHECK(q_coefficients(g, 0) == std::vector<double>{0.25, 0.5});
}

TEST_CASE("parsers reject unknown names") {
  CHECK(parse_loss_kind("arb") == LossKind::Arb);
  CHECK(parse_counts_mode("global") == CountsMode::Global);
  CHECK_THROWS_AS(parse_loss_kind("focal"), InvalidSpec);
  CHECK_THROWS_AS(ClassCounts::global(std::vector<double>{1.0, 0.0}), InvalidSpec);
}
