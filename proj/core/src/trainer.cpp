#include "arblab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "arblab/collapse.hpp"

namespace arblab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool params_finite(const std::vector<const Matrix*>& params) {
  return std::all_of(params.begin(), params.end(), [](const Matrix* m) { return m->all_finite(); });
}

void fill_metrics(EpochLog& log, const Matrix& classifier) {
  try {
    log.metrics = balance_metrics(classifier);
    log.metrics_valid = true;
  } catch (const DegenerateWeights&) {
    log.metrics = CollapseMetrics{};
    log.metrics.b_d2 = log.metrics.b_a2 = log.metrics.b_l2 = kNaN;
    log.metrics.min_pairwise_angle_deg = kNaN;
    log.metrics_valid = false;
  }
}

/// Accuracy of argmax predictions over `logits`.
void fill_accuracy(std::span<const int> labels, const Matrix& logits, std::size_t c,
                   double& overall, double& balanced, std::vector<double>& per_class) {
  std::vector<std::size_t> hits(c, 0);
  std::vector<std::size_t> seen(c, 0);
  std::size_t correct = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto row = logits.row(j);
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const auto y = static_cast<std::size_t>(labels[j]);
    ++seen[y];
    if (pred == y) {
      ++hits[y];
      ++correct;
    }
  }
  overall = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  per_class.assign(c, 0.0);
  balanced = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (seen[k] == 0) {
      per_class[k] = kNaN;
      continue;
    }
    per_class[k] = static_cast<double>(hits[k]) / static_cast<double>(seen[k]);
    balanced += per_class[k];
    ++present;
  }
  balanced = present == 0 ? 0.0 : balanced / static_cast<double>(present);
}

}  // namespace

std::string_view to_string(FeatureStep s) { return s == FeatureStep::Mean ? "mean" : "sample"; }

FeatureStep parse_feature_step(std::string_view s) {
  if (s == "mean") return FeatureStep::Mean;
  if (s == "sample") return FeatureStep::Sample;
  throw InvalidSpec("unknown feature step `" + std::string(s) + "` (expected mean|sample)");
}

int rarest_class(std::span<const std::size_t> counts) {
  if (counts.empty()) throw InvalidSpec("no classes");
  std::size_t best = 0;
  for (std::size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] <= counts[best]) best = k;
  }
  return static_cast<int>(best);
}

Evaluation evaluate(const Mlp& mlp, const Dataset& data, const Dataset& reference) {
  Evaluation ev;
  const ForwardResult fr = forward(mlp, data.features);
  fill_accuracy(data.labels, fr.logits, mlp.num_classes(), ev.overall_acc, ev.balanced_acc,
                ev.per_class_acc);
  try {
    const ForwardResult ref = forward(mlp, reference.features);
    const Matrix means = class_means(ref.features, reference.labels, mlp.num_classes());
    std::size_t correct = 0;
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (nearest_mean(means, fr.features.row(j)) == data.labels[j]) ++correct;
    }
    ev.ncm_acc = static_cast<double>(correct) / static_cast<double>(data.size());
  } catch (const DegenerateWeights&) {
    ev.ncm_acc = kNaN;
  }
  return ev;
}

TrainResult train(const Dataset& train_set, const Dataset& test_set, const TrainOptions& options,
                  const EpochCallback& on_epoch) {
  if (train_set.num_classes != test_set.num_classes) {
    throw InvalidSpec("train and test sets disagree on the class count");
  }
  if (options.batch_size < 1) throw InvalidSpec("batch size must be >= 1");
  const std::size_t c = train_set.num_classes;
  const int tracked =
      options.tracked_class >= 0 ? options.tracked_class : rarest_class(train_set.class_counts);
  if (static_cast<std::size_t>(tracked) >= c) throw InvalidSpec("tracked class out of range");

  Rng root(options.seed);
  Rng init_rng = root.split();
  Rng shuffle_rng = root.split();
  Rng mixup_rng = root.split();

  std::vector<std::size_t> dims{train_set.dim()};
  dims.insert(dims.end(), options.hidden.begin(), options.hidden.end());
  dims.push_back(c);

  TrainResult result;
  result.tracked_class = tracked;
  result.model = init_mlp(dims, options.activation, options.classifier_init, init_rng);
  Mlp& mlp = result.model;
  SgdState sgd{options.schedule.base_lr, options.momentum, options.weight_decay, {}};
  const ClassCounts global_counts = ClassCounts::global(train_set.class_counts);

  for (int epoch = 0; epoch < options.schedule.total_epochs; ++epoch) {
    sgd.lr = lr_at(options.schedule, epoch);
    GradientNormAccumulator g_acc(c, tracked);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const Batch& batch : iterate_batches(train_set, options.batch_size, true, shuffle_rng)) {
      const ClassCounts counts = options.counts_mode == CountsMode::Batch
                                     ? ClassCounts::from_labels(batch.labels, c)
                                     : global_counts;
      MlpGradients grads;
      if (options.mixup) {
        const MixedBatch mixed = mixup(batch, options.mixup_alpha, mixup_rng);
        grads = backward(mlp, mixed.features, {mixed.labels_a, mixed.labels_b, mixed.lambda},
                         options.loss, counts);
      } else {
        grads = backward(mlp, batch.features, {batch.labels}, options.loss, counts);
      }
      if (!std::isfinite(grads.loss)) throw DivergedError("non-finite training loss", epoch);
      g_acc.add(grads.report);
      loss_sum += grads.loss * static_cast<double>(batch.labels.size());
      seen += batch.labels.size();
      auto params = mlp.parameters();
      const auto flat = grads.flat();
      sgd_step(sgd, params, flat);
    }
    if (!params_finite(std::as_const(mlp).parameters())) {
      throw DivergedError("non-finite parameter", epoch);
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = sgd.lr;
    log.train_loss = loss_sum / static_cast<double>(seen);
    const Evaluation ev = evaluate(mlp, test_set, train_set);
    log.overall_acc = ev.overall_acc;
    log.balanced_acc = ev.balanced_acc;
    log.per_class_acc = ev.per_class_acc;
    log.ncm_acc = ev.ncm_acc;
    fill_metrics(log, mlp.classifier());
    log.g = g_acc.mean();
    log.minority_score = kNaN;
    if (on_epoch) on_epoch(log);
    result.logs.push_back(std::move(log));
  }
  result.final_eval = evaluate(mlp, test_set, train_set);
  return result;
}

std::vector<int> default_minority(std::span<const std::size_t> counts) {
  if (counts.empty()) return {};
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  if (*hi == *lo) return {};
  const double cut = std::sqrt(static_cast<double>(*hi) * static_cast<double>(*lo));
  std::vector<int> out;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (static_cast<double>(counts[k]) <= cut) out.push_back(static_cast<int>(k));
  }
  return out.size() >= 2 ? out : std::vector<int>{};
}

PeeledResult train_peeled(const PeeledOptions& options, const EpochCallback& on_log) {
  const std::size_t c = options.counts.size();
  if (c < 2) throw InvalidSpec("peeled mode needs at least two classes");
  if (options.dim < 1) throw InvalidSpec("feature dimension must be >= 1");
  if (options.steps < 0) throw InvalidSpec("step count must be >= 0");
  if (options.log_every < 1) throw InvalidSpec("log interval must be >= 1");
  std::size_t n = 0;
  for (auto k : options.counts) {
    if (k < 1) throw InvalidSpec("every class needs at least one sample");
    n += k;
  }

  PeeledResult res;
  res.tracked_class =
      options.tracked_class >= 0 ? options.tracked_class : rarest_class(options.counts);
  if (static_cast<std::size_t>(res.tracked_class) >= c) {
    throw InvalidSpec("tracked class out of range");
  }
  res.minority = options.minority.empty() ? default_minority(options.counts) : options.minority;

  Rng rng(options.seed);
  res.classifier = options.init_scale * gaussian_matrix(rng, c, options.dim);
  res.features = options.init_scale * gaussian_matrix(rng, n, options.dim);
  res.labels.reserve(n);
  for (std::size_t k = 0; k < c; ++k) res.labels.insert(res.labels.end(), options.counts[k], static_cast<int>(k));

  const ClassCounts counts = ClassCounts::global(options.counts);
  SgdState sgd{options.lr, options.momentum, options.weight_decay, {}};
  const double radius = options.feature_norm_bound > 0.0 ? std::sqrt(options.feature_norm_bound) : 0.0;

  auto record = [&](int step, const BatchEval& eval, const Matrix& logits,
                    const GradientReport& report) {
    EpochLog log;
    log.epoch = step;
    log.lr = options.lr;
    log.train_loss = eval.mean_loss;
    fill_accuracy(res.labels, logits, c, log.overall_acc, log.balanced_acc, log.per_class_acc);
    log.ncm_acc = kNaN;
    fill_metrics(log, res.classifier);
    GradientNormAccumulator acc(c, res.tracked_class);
    acc.add(report);
    log.g = acc.mean();
    log.minority_score = kNaN;
    if (res.minority.size() >= 2) {
      try {
        log.minority_score = minority_collapse_score(res.classifier, res.minority);
      } catch (const DegenerateWeights&) {
      }
    }
    if (on_log) on_log(log);
    res.logs.push_back(std::move(log));
  };

  for (int step = 0; step <= options.steps; ++step) {
    const Matrix logits = matmul_transposed(res.features, res.classifier);
    const BatchEval eval = evaluate_batch(options.loss, logits, res.labels, counts);
    if (!std::isfinite(eval.mean_loss)) throw DivergedError("non-finite loss", step);
    const ClassCounts used = options.loss == LossKind::CrossEntropy
                                 ? ClassCounts::from_labels(res.labels, c)
                                 : counts;
    const GradientReport report = decompose_gradient(res.features, res.labels, eval.logit_grads, used);
    if (step == options.steps || step % options.log_every == 0) record(step, eval, logits, report);
    if (step == options.steps) break;

    const Matrix grad_w = (1.0 / static_cast<double>(n)) * report.full;
    Matrix grad_h = matmul(eval.logit_grads, res.classifier);
    if (options.feature_step == FeatureStep::Mean) grad_h *= 1.0 / static_cast<double>(n);
    Matrix* params[] = {&res.classifier, &res.features};
    const Matrix* grads[] = {&grad_w, &grad_h};
    sgd_step(sgd, params, grads);
    if (radius > 0.0) {
      for (std::size_t j = 0; j < n; ++j) {
        auto h = res.features.row(j);
        const double len = norm2(h);
        if (len > radius) {
          for (auto& v : h) v *= radius / len;
        }
      }
    }
    if (!res.classifier.all_finite() || !res.features.all_finite()) {
      throw DivergedError("non-finite parameter", step);
    }
  }
  return res;
}

}  // namespace arblab
