#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "arblab/analysis.hpp"
#include "arblab/loss.hpp"
#include "arblab/model.hpp"
#include "arblab/trainer.hpp"

namespace arblab {

enum class DataSource { Synth, Idx, Csv };
std::string_view to_string(DataSource s);

enum class RunMode { Standard, Peeled };
std::string_view to_string(RunMode m);

// Keys are addressed as "section.key"; `seed` and `mode` are top-level.
struct ExperimentConfig {
  std::uint64_t seed = 0;

  struct Data {
    DataSource source = DataSource::Synth;
    std::size_t num_classes = 10;
    std::size_t dim = 32;
    // Training counts. Empty: derived from imbalance_factor and base_count
    // (synth), or the file's own counts (idx, csv).
    std::vector<std::size_t> counts;
    double imbalance_factor = 1.0;
    std::size_t base_count = 500;
    std::size_t test_per_class = 200;  // synth only
    double mean_scale = 2.0;           // synth only
    bool mixup = false;
    double mixup_alpha = 1.0;
    std::string train_path;            // csv file, or idx images
    std::string train_labels_path;     // idx only
    std::string test_path;
    std::string test_labels_path;

    bool operator==(const Data&) const = default;
  } data;

  struct Model {
    std::vector<std::size_t> hidden{64};
    Activation activation = Activation::Relu;
    std::string init = "he";
    ClassifierInit classifier_init = ClassifierInit::Gaussian;

    bool operator==(const Model&) const = default;
  } model;

  struct Loss {
    LossKind kind = LossKind::CrossEntropy;
    CountsMode counts_mode = CountsMode::Batch;

    bool operator==(const Loss&) const = default;
  } loss;

  struct Optim {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    Schedule::Kind schedule = Schedule::Kind::Step;
    std::vector<int> milestones;  // empty: 160/200 and 180/200 of the epochs
    double factor = 0.1;
    double lr_end = 0.0;
    int epochs = 200;             // peeled mode: optimization steps
    std::size_t batch_size = 128;

    bool operator==(const Optim&) const = default;
  } optim;

  RunMode mode = RunMode::Standard;

  struct Tracking {
    int tracked_class = -1;  // −1: rarest
    std::size_t smooth_window = 11;

    bool operator==(const Tracking&) const = default;
  } tracking;

  struct Peeled {
    double init_scale = 0.1;
    double feature_norm_bound = 0.0;
    FeatureStep feature_step = FeatureStep::Mean;
    int log_every = 1;
    std::vector<int> minority;

    bool operator==(const Peeled&) const = default;
  } peeled;

  struct Propositions {
    bool enabled = false;  // also run the checkers from `run`
    PropositionScenario scenario;

    bool operator==(const Propositions&) const = default;
  } propositions;

  struct Output {
    std::string directory = "out";

    bool operator==(const Output&) const = default;
  } output;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses INI text ("[section]" headers, "key = value" lines, '#' or ';'
/// comments, comma-separated lists) or a JSON object with the same layout.
/// Every value is validated and defaults are filled in, including the step
/// milestones. Throws ConfigError naming the offending key.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Resolved config as INI; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& config);

/// Training-loop options implied by the config.
TrainOptions train_options(const ExperimentConfig& config);

}  // namespace arblab
