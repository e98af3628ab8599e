#include <cmath>

#include "arblab/model.hpp"
#include "arblab/trainer.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "tmpdir.hpp"

using namespace arblab;

namespace {

// Forward pass written directly from the layer definition.
Matrix naive_logits(const Mlp& mlp, const Matrix& x) {
  Matrix a = x;
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    Matrix z = oracle::naive_matmul(a, transpose(mlp.weights[l]));
    if (l + 1 == mlp.num_layers()) return z;
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t k = 0; k < z.cols(); ++k) {
        const double v = z(r, k) + mlp.biases[l](0, k);
        switch (mlp.activation) {
          case Activation::Relu: z(r, k) = v > 0 ? v : 0.0; break;
          case Activation::Tanh: z(r, k) = std::tanh(v); break;
          case Activation::Sigmoid: z(r, k) = 1.0 / (1.0 + std::exp(-v)); break;
        }
      }
    }
    a = std::move(z);
  }
  return a;
}

Mlp random_mlp(Rng& rng, std::size_t in, std::size_t c, Activation act, int hidden_layers) {
  std::vector<std::size_t> dims{in};
  for (int l = 0; l < hidden_layers; ++l) dims.push_back(2 + rng.below(5));
  dims.push_back(c);
  Mlp mlp = init_mlp(dims, act, ClassifierInit::Gaussian, rng);
  for (auto& b : mlp.biases) {
    for (auto& v : b.data()) v = 0.3 * rng.normal();
  }
  return mlp;
}

// Train and test draws from one mixture.
std::pair<Dataset, Dataset> blobs(std::size_t per_class, double scale) {
  Rng rng(1);
  const auto mix = make_gaussian_mixture(rng, 3, 4, scale);
  const std::vector<std::size_t> counts(3, per_class);
  Dataset train_set = sample_mixture(mix, counts, rng);
  return {std::move(train_set), sample_mixture(mix, counts, rng)};
}

}  // namespace

TEST_CASE("forward matches the naive oracle") {
  Rng rng(41);
  for (Activation act : {Activation::Relu, Activation::Tanh, Activation::Sigmoid}) {
    const Mlp mlp = random_mlp(rng, 5, 4, act, 2);
    const Matrix x = gaussian_matrix(rng, 6, 5);
    const auto fr = forward(mlp, x);
    CHECK(max_abs_diff(fr.logits, naive_logits(mlp, x)) < 1e-12);
    CHECK(fr.features.cols() == mlp.feature_dim());
    CHECK(max_abs_diff(fr.logits, matmul_transposed(fr.features, mlp.classifier())) < 1e-12);
    if (act == Activation::Relu) {
      for (double v : fr.features.data()) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("backward matches central differences on every parameter") {
  Rng rng(42);
  for (int t = 0; t < 100; ++t) {
    const auto act = static_cast<Activation>(t % 3);
    const std::size_t b = 1 + rng.below(8), c = 2 + rng.below(4), in = 1 + rng.below(6);
    Mlp mlp = random_mlp(rng, in, c, act, 1 + t % 2);
    const Matrix x = gaussian_matrix(rng, b, in);
    std::vector<int> ya(b), yb(b);
    for (auto& y : ya) y = static_cast<int>(rng.below(c));
    for (auto& y : yb) y = static_cast<int>(rng.below(c));
    const LossKind kind = t % 4 < 2 ? LossKind::CrossEntropy : LossKind::Arb;
    std::vector<double> n(c);
    for (auto& v : n) v = 1.0 + rng.below(100);
    const auto counts = ClassCounts::global(std::span<const double>(n));
    Targets targets{ya};
    if (t % 5 == 0) targets = Targets{ya, yb, 0.3};

    const auto grads = backward(mlp, x, targets, kind, counts);
    const auto flat = grads.flat();
    const auto params = mlp.parameters();
    REQUIRE(flat.size() == params.size());
    auto loss = [&] {
      const Matrix logits = forward(mlp, x).logits;
      double l = batch_loss(kind, logits, ya, counts);
      if (targets.lambda < 1.0) {
        l = 0.3 * l + 0.7 * batch_loss(kind, logits, yb, counts);
      }
      return l;
    };
    CHECK(grads.loss == doctest::Approx(loss()).epsilon(1e-12));
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Matrix fd = oracle::central_diff(*params[p], loss);
      CHECK(oracle::rel_error(*flat[p], fd) <= 1e-6);
    }
    CHECK(max_abs_diff(grads.weights.back(), (1.0 / static_cast<double>(b)) * grads.report.full) <
          1e-14);
  }
}

TEST_CASE("linear model: classifier gradient equals the loss-module gradient") {
  Rng rng(43);
  Mlp mlp = init_mlp(std::vector<std::size_t>{3, 4}, Activation::Relu, ClassifierInit::Gaussian, rng);
  const Matrix x = gaussian_matrix(rng, 5, 3);
  const std::vector<int> y{0, 1, 2, 3, 1};
  const auto counts = ClassCounts::from_labels(y, 4);
  const auto grads = backward(mlp, x, Targets{y}, LossKind::Arb, counts);
  const auto direct = classifier_gradient(LossKind::Arb, x, y, mlp.classifier(), counts);
  CHECK(max_abs_diff(grads.weights.back(), 0.2 * direct.full) < 1e-14);
}

TEST_CASE("confident correct predictions give vanishing gradients") {
  Mlp mlp;
  mlp.dims = {2, 2};
  mlp.weights = {Matrix{{40, 0}, {0, 40}}};
  const Matrix x{{1, 0}, {0, 1}};
  const std::vector<int> y{0, 1};
  const auto grads = backward(mlp, x, Targets{y}, LossKind::CrossEntropy, ClassCounts::uniform(2));
  CHECK(frobenius_norm(grads.weights[0]) < 1e-15);
}

TEST_CASE("sgd_step follows the momentum recurrence") {
  Matrix p{{1.0}};
  const Matrix g{{1.0}};
  SgdState st{0.1, 0.9, 0.0, {}};
  std::vector<Matrix*> ps{&p};
  std::vector<const Matrix*> gs{&g};
  sgd_step(st, ps, gs);
  CHECK(p(0, 0) == doctest::Approx(0.9));
  sgd_step(st, ps, gs);
  CHECK(p(0, 0) == doctest::Approx(0.71));

  Matrix q{{2.0, -4.0}};
  const Matrix zero(1, 2);
  SgdState decay{0.5, 0.0, 0.1, {}};
  std::vector<Matrix*> qs{&q};
  std::vector<const Matrix*> zs{&zero};
  sgd_step(decay, qs, zs);
  CHECK(q(0, 0) == doctest::Approx(2.0 * 0.95));
  CHECK(q(0, 1) == doctest::Approx(-4.0 * 0.95));

  std::vector<const Matrix*> wrong{&g};
  CHECK_THROWS_AS(sgd_step(decay, qs, wrong), DimensionError);
}

TEST_CASE("one CE step on a linear model, by hand") {
  Mlp mlp;
  mlp.dims = {2, 2};
  mlp.weights = {Matrix(2, 2)};
  const Matrix x{{1, 0}};
  const std::vector<int> y{0};
  const auto grads = backward(mlp, x, Targets{y}, LossKind::CrossEntropy, ClassCounts::uniform(2));
  CHECK(grads.loss == doctest::Approx(std::log(2.0)));
  SgdState st{0.1, 0.0, 0.0, {}};
  sgd_step(st, mlp.parameters(), grads.flat());
  CHECK(max_abs_diff(mlp.weights[0], Matrix{{0.05, 0}, {-0.05, 0}}) < 1e-15);
}

TEST_CASE("learning-rate schedules") {
  Schedule s;
  s.kind = Schedule::Kind::Step;
  s.base_lr = 0.1;
  s.milestones = {160, 180};
  s.total_epochs = 200;
  CHECK(lr_at(s, 0) == doctest::Approx(0.1));
  CHECK(lr_at(s, 159) == doctest::Approx(0.1));
  CHECK(lr_at(s, 160) == doctest::Approx(0.01));
  CHECK(lr_at(s, 199) == doctest::Approx(0.001));
  CHECK_THROWS_AS(lr_at(s, 200), InvalidSpec);

  Schedule cos{Schedule::Kind::Cosine, 0.2, {}, 0.1, 0.0, 10};
  CHECK(lr_at(cos, 0) == doctest::Approx(0.2));
  CHECK(lr_at(cos, 5) == doctest::Approx(0.1));
  CHECK(parse_schedule_kind("cosine") == Schedule::Kind::Cosine);
}

TEST_CASE("checkpoint round trip is exact") {
  TempDir tmp("ckpt");
  Rng rng(44);
  const Mlp mlp = random_mlp(rng, 3, 4, Activation::Tanh, 2);
  save_checkpoint(to_checkpoint(mlp), tmp / "m.json");
  const Mlp back = mlp_from_checkpoint(load_checkpoint(tmp / "m.json"));
  CHECK(back.dims == mlp.dims);
  CHECK(back.activation == mlp.activation);
  CHECK(back.weights == mlp.weights);
  CHECK(back.biases == mlp.biases);
  tmp.write("bad.json", "{\"format\":\"other\"}");
  CHECK_THROWS(load_checkpoint(tmp / "bad.json"));
}

TEST_CASE("training: zero epochs, separable blobs, determinism") {
  const auto [train_set, test_set] = blobs(60, 8.0);
  TrainOptions opt;
  opt.schedule = Schedule{Schedule::Kind::Constant, 0.1, {}, 0.1, 0.0, 0};
  opt.batch_size = 16;
  opt.seed = 3;
  CHECK(train(train_set, test_set, opt).logs.empty());

  opt.schedule.total_epochs = 15;
  for (LossKind kind : {LossKind::CrossEntropy, LossKind::Arb}) {
    opt.loss = kind;
    const auto a = train(train_set, test_set, opt);
    REQUIRE(a.logs.size() == 15);
    CHECK(a.final_eval.overall_acc >= 0.99);
    CHECK(a.logs.back().g.size() == 3);
    const auto b = train(train_set, test_set, opt);
    CHECK(a.model.weights == b.model.weights);
    for (std::size_t e = 0; e < a.logs.size(); ++e) CHECK(a.logs[e].train_loss == b.logs[e].train_loss);
  }

  opt.hidden = {8};
  opt.mixup = true;
  const auto mixed = train(train_set, test_set, opt);
  CHECK(mixed.final_eval.overall_acc >= 0.95);
}

TEST_CASE("training that blows up reports divergence") {
  const Dataset d = blobs(20, 8.0).first;
  TrainOptions opt;
  opt.hidden = {16};
  opt.schedule = Schedule{Schedule::Kind::Constant, 1e6, {}, 0.1, 0.0, 100};
  CHECK_THROWS_AS(train(d, d, opt), DivergedError);
}

TEST_CASE("peeled mode on balanced counts approaches a balanced frame") {
  PeeledOptions opt;
  opt.dim = 8;
  opt.counts = std::vector<std::size_t>(4, 20);
  opt.lr = 2.0;
  opt.steps = 600;
  opt.log_every = 100;
  opt.seed = 1;
  const auto r = train_peeled(opt);
  REQUIRE(r.logs.size() == 7);
  CHECK(r.logs.front().epoch == 0);
  CHECK(r.logs.back().epoch == 600);
  CHECK(r.logs.back().metrics.b_a2 * 10.0 < r.logs.front().metrics.b_a2);
  CHECK(r.logs.back().train_loss < r.logs.front().train_loss);
  CHECK(r.minority.empty());
  CHECK(std::isnan(r.logs.back().minority_score));

  CHECK(default_minority(std::vector<std::size_t>{1000, 1000, 10, 10}) == std::vector<int>{2, 3});
  CHECK(parse_feature_step("sample") == FeatureStep::Sample);
  opt.log_every = 0;
  CHECK_THROWS_AS(train_peeled(opt), InvalidSpec);
}
