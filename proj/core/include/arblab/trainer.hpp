#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "arblab/analysis.hpp"
#include "arblab/data.hpp"
#include "arblab/loss.hpp"
#include "arblab/model.hpp"

namespace arblab {

struct TrainOptions {
  LossKind loss = LossKind::CrossEntropy;
  CountsMode counts_mode = CountsMode::Batch;
  std::vector<std::size_t> hidden;  // hidden widths; empty = linear classifier
  Activation activation = Activation::Relu;
  ClassifierInit classifier_init = ClassifierInit::Gaussian;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Schedule schedule;                // total_epochs is the epoch count
  std::size_t batch_size = 128;
  bool mixup = false;
  double mixup_alpha = 1.0;
  int tracked_class = -1;           // −1: the rarest training class
  std::uint64_t seed = 0;
};

struct Evaluation {
  double overall_acc = 0.0;
  double balanced_acc = 0.0;
  std::vector<double> per_class_acc;
  double ncm_acc = 0.0;
};

/// Argmax-logit accuracy, plus the nearest-class-mean rule using class means
/// of `reference`'s last-layer features.
Evaluation evaluate(const Mlp& mlp, const Dataset& data, const Dataset& reference);

/// Rarest class (ties: highest index, matching the long-tail ordering).
int rarest_class(std::span<const std::size_t> counts);

struct TrainResult {
  Mlp model;
  std::vector<EpochLog> logs;
  Evaluation final_eval;
  int tracked_class = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch training; every epoch appends one EpochLog evaluated on `test`.
/// Deterministic for a given (data, options). Throws DivergedError on a
/// non-finite loss or parameter.
TrainResult train(const Dataset& train_set, const Dataset& test_set, const TrainOptions& options,
                  const EpochCallback& on_epoch = {});

/// Unconstrained-features model: free features H (n × d) and classifier W
/// (c × d) optimized jointly by full-batch momentum SGD.
///
/// W follows the gradient of the mean loss plus λ·W. With FeatureStep::Mean,
/// H follows the gradient of (1/n)Σ_j L_j + (λ/2)‖H‖²_F + (λ/2)‖W‖², so the
/// decay on each h_j is as strong as on W. With FeatureStep::Sample, each h_j
/// follows its own sample's loss gradient plus λ·h_j, i.e. the objective
/// (1/n)Σ_j [L_j + (λ/2)‖h_j‖²] + (λ/2)‖W‖² with an n-fold step on H.
/// When feature_norm_bound > 0 every h_j is projected onto the ball of
/// radius sqrt(feature_norm_bound) after each step.
enum class FeatureStep { Mean, Sample };
std::string_view to_string(FeatureStep s);
FeatureStep parse_feature_step(std::string_view s);

struct PeeledOptions {
  LossKind loss = LossKind::CrossEntropy;
  std::size_t dim = 16;
  std::vector<std::size_t> counts;
  double lr = 0.5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int steps = 2000;
  double init_scale = 0.1;
  double feature_norm_bound = 0.0;
  FeatureStep feature_step = FeatureStep::Mean;
  int log_every = 1;
  int tracked_class = -1;
  std::vector<int> minority;  // empty: classes with n ≤ sqrt(n_max·n_min) when n_max > n_min
  std::uint64_t seed = 0;
};

struct PeeledResult {
  Matrix features;
  Matrix classifier;
  std::vector<int> labels;
  std::vector<EpochLog> logs;  // epoch field holds the step index
  std::vector<int> minority;
  int tracked_class = 0;
};

std::vector<int> default_minority(std::span<const std::size_t> counts);

PeeledResult train_peeled(const PeeledOptions& options, const EpochCallback& on_log = {});

}  // namespace arblab
