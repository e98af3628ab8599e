#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "arblab/collapse.hpp"
#include "arblab/loss.hpp"

namespace arblab {

/// One row of the training log.
struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double overall_acc = 0.0;
  double balanced_acc = 0.0;  // mean of per_class_acc
  std::vector<double> per_class_acc;
  double ncm_acc = 0.0;       // nearest-class-mean rule on last-layer features
  CollapseMetrics metrics;    // of the classifier weights
  bool metrics_valid = true;  // false when the classifier was degenerate
  /// Gradient-component norms for the tracked class, averaged over the
  /// epoch's batches: g[k] = mean ‖∇_{b,k}‖ for k ≠ tracked and
  /// g[tracked] = mean ‖∇_a‖.
  std::vector<double> g;
  double minority_score = 0.0;  // NaN unless a minority set is defined
};

/// Streaming form of epoch_gradient_norms.
class GradientNormAccumulator {
 public:
  GradientNormAccumulator(std::size_t num_classes, int tracked_class);
  void add(const GradientReport& report);
  std::size_t batches() const noexcept { return batches_; }
  std::vector<double> mean() const;

 private:
  int tracked_;
  std::vector<double> sums_;
  std::size_t batches_ = 0;
};

/// g_k = mean over batches of ‖repulsion[tracked].row(k)‖ (k ≠ tracked);
/// g_tracked = mean ‖attraction.row(tracked)‖. Batches without class-k
/// samples contribute zero. Throws InvalidSpec on an empty stream.
std::vector<double> epoch_gradient_norms(std::span<const GradientReport> reports,
                                         int tracked_class);

/// Centered moving average; windows are truncated at the series edges.
/// window must be odd and ≥ 1.
std::vector<double> smooth(std::span<const double> series, std::size_t window);

/// Spread of the repulsion components acting on the tracked class: each
/// g_k series (k ≠ tracked) is smoothed, averaged over the last
/// ceil(tail_fraction · epochs) epochs, and max_k / min_k of those averages
/// is returned (+inf when a component averages to 0). The attraction entry
/// g_tracked is excluded. Throws InvalidSpec on an empty log.
double gradient_spread(std::span<const EpochLog> logs, int tracked_class,
                       double tail_fraction = 0.25, std::size_t window = 1);

/// Controlled scenario for the gradient-balance checks.
///
/// Classifier: an ETF scaled to `weight_scale`. Class-k features:
/// feature_scale · w*_k/‖w*_k‖ + noise · N(0, I), so every class has the same
/// expected squared feature norm. The tracked class is 0.
struct PropositionScenario {
  std::size_t num_classes = 4;
  std::size_t dim = 8;
  std::size_t base_count = 20;
  double weight_scale = 2.5;
  double feature_scale = 2.5;
  double noise = 0.3;
  std::vector<double> ratios{1.0, 3.0, 10.0, 30.0};
  /// Paired attraction/repulsion scenario: n_i / n_k for the rare class i.
  double paired_ratio = 0.01;
  std::size_t seeds = 50;
  std::uint64_t seed = 0;

  bool operator==(const PropositionScenario&) const = default;
};

/// FNV-1a over the scenario parameters; recorded in every report.
std::uint64_t scenario_hash(const PropositionScenario& s);

struct RatioSample {
  double count_ratio = 0.0;
  std::vector<double> ce;   // one observed norm ratio per unflagged seed
  std::vector<double> arb;
  double ce_median = 0.0;
  double arb_median = 0.0;
  std::size_t flagged = 0;  // seeds whose ratio was undefined
};

struct PropositionReport {
  int proposition = 1;
  std::uint64_t scenario_hash = 0;
  std::uint64_t first_seed = 0;
  std::size_t seeds = 0;
  std::vector<RatioSample> points;
  /// OLS slope of log(median norm ratio) against log(count ratio).
  double ce_slope = 0.0;
  double arb_slope = 0.0;
  std::optional<RatioSample> paired;  // proposition 2 only
  /// Largest norm observed per component over all scenarios, indexed by
  /// class (entry 0 is the tracked class's attraction term).
  std::vector<double> ce_sup_norms;
  std::vector<double> arb_sup_norms;
  /// Per-class mean squared feature norm, averaged over scenarios.
  std::vector<double> mean_sq_feature_norm;
};

/// ‖repulsion[tracked].row(k)‖ / ‖repulsion[tracked].row(l)‖, or nullopt when
/// the denominator is below 1e-12 (e.g. class l absent).
std::optional<double> repulsion_ratio(const GradientReport& r, int tracked, int k, int l);
/// ‖attraction.row(i)‖ / ‖repulsion[i].row(k)‖ with the same flagging rule.
std::optional<double> attraction_ratio(const GradientReport& r, int i, int k);

/// Repulsion balance: classes k = 1 and l = 2 with n_k/n_l swept over
/// scenario.ratios, tracked class 0.
PropositionReport check_proposition_1(const PropositionScenario& scenario);

/// Attraction/repulsion balance: tracked class 0 against k = 1 with
/// n_0/n_k = 1/r over scenario.ratios, plus the paired scenario.
PropositionReport check_proposition_2(const PropositionScenario& scenario);

/// Features and labels of one scenario draw with the given per-class counts.
struct ScenarioDraw {
  Matrix classifier;
  Matrix features;
  std::vector<int> labels;
};
ScenarioDraw draw_scenario(const PropositionScenario& scenario,
                           std::span<const std::size_t> counts, std::uint64_t seed);

double median(std::vector<double> values);
/// OLS slope of y on x.
double ols_slope(std::span<const double> x, std::span<const double> y);

}  // namespace arblab
