#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "arblab/config.hpp"
#include "arblab/data.hpp"
#include "arblab/trainer.hpp"

namespace arblab {

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
};

void apply_overrides(ExperimentConfig& config, const RunOverrides& overrides);

struct ExperimentData {
  Dataset train;
  Dataset test;
};

/// Train/test sets for a standard-mode config. The data stream is seeded
/// from config.seed but independent of the model's initialization stream.
ExperimentData build_data(const ExperimentConfig& config);

/// Per-class training counts: data.counts, or the long-tail profile.
std::vector<std::size_t> training_counts(const ExperimentConfig& config);

constexpr int kEpochsCsvVersion = 1;

/// epochs.csv: epoch, lr, train_loss, overall_acc, balanced_acc,
/// acc_class_0..c−1, B_D2, B_A2, B_L2, min_angle_deg, g_0..c−1, and for peeled
/// runs a trailing minority_collapse column. Reals use 9 significant digits;
/// undefined values are written as `nan`.
std::string epochs_csv(const std::vector<EpochLog>& logs, std::size_t num_classes, bool peeled);

/// Outcome of one arm; the JSON text is what final_metrics.json holds.
struct ArmResult {
  std::vector<EpochLog> logs;
  double overall_acc = 0.0;
  double balanced_acc = 0.0;
  std::vector<double> per_class_acc;
  int tracked_class = 0;
  double g_spread = 0.0;
  std::optional<CollapseMetrics> metrics;  // of the final classifier
  double minority_score = 0.0;             // peeled runs
  std::string final_json;
};

/// Trains one arm and writes config.ini, epochs.csv, final_metrics.json and
/// checkpoint.json (plus propositions.json when enabled) into `out_dir`.
/// Progress lines go to `log` unless it is null.
ArmResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                         std::ostream* log);

/// Runs CE and ARB on identical data and seed; arm artifacts go to
/// <out>/ce and <out>/arb, the paired report to <out>/compare.json.
std::string run_compare(const ExperimentConfig& config, std::ostream* log);

/// Runs both proposition checkers and writes <out>/propositions.json.
std::string run_propositions(const ExperimentConfig& config, std::ostream* log);

/// Balance metrics of the `classifier.weight` tensor of a checkpoint, as JSON.
std::string checkpoint_metrics(const std::filesystem::path& checkpoint);

/// Process exit status for `command` ("run", "compare", "check-propositions",
/// "metrics"): 0 ok, 1 runtime or I/O failure, 2 invalid config, 3 divergence.
int dispatch(const std::string& command, const std::filesystem::path& target,
             const RunOverrides& overrides, std::ostream& out, std::ostream& err);

}  // namespace arblab
