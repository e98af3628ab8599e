#include "arblab/runner.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>

#include "arblab/collapse.hpp"
#include "arblab/errors.hpp"
#include "arblab/io.hpp"
#include "json.hpp"

namespace arblab {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Keeps the data stream apart from the trainer's stream for the same seed.
constexpr std::uint64_t kDataStream = 0xd1b54a32d192ed03ULL;

/// Reals in JSON artifacts carry 9 significant digits; non-finite → null.
Json r9(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::strtod(format_real(v).c_str(), nullptr);
}

Json r9(std::span<const double> v) {
  Json out = Json::array();
  for (double x : v) out.push_back(r9(x));
  return out;
}

Json metrics_json(const CollapseMetrics& m) {
  Json j;
  j["B_D2"] = r9(m.b_d2);
  j["B_A2"] = r9(m.b_a2);
  j["B_L2"] = r9(m.b_l2);
  j["B_D2_population"] = r9(m.b_d2_population);
  j["B_A2_population"] = r9(m.b_a2_population);
  j["min_angle_deg"] = r9(m.min_pairwise_angle_deg);
  j["mean_cosine"] = r9(m.mean_cosine);
  j["norms"] = r9(m.norms);
  Json sim = Json::array();
  for (std::size_t i = 0; i < m.similarity.rows(); ++i) sim.push_back(r9(m.similarity.row(i)));
  j["similarity"] = std::move(sim);
  Json degenerate = Json::array();
  for (bool b : m.similarity_degenerate) degenerate.push_back(b);
  j["similarity_degenerate"] = std::move(degenerate);
  return j;
}

std::optional<CollapseMetrics> try_metrics(const Matrix& w) {
  try {
    return balance_metrics(w);
  } catch (const DegenerateWeights&) {
    return std::nullopt;
  }
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json sample_json(const RatioSample& s) {
  Json j;
  j["count_ratio"] = r9(s.count_ratio);
  j["ce_median"] = r9(s.ce_median);
  j["arb_median"] = r9(s.arb_median);
  j["flagged"] = s.flagged;
  j["ce"] = r9(s.ce);
  j["arb"] = r9(s.arb);
  return j;
}

Json report_json(const PropositionReport& r) {
  Json j;
  j["proposition"] = r.proposition;
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.scenario_hash));
  j["scenario_hash"] = hash;
  j["first_seed"] = r.first_seed;
  j["seeds"] = r.seeds;
  j["ce_slope"] = r9(r.ce_slope);
  j["arb_slope"] = r9(r.arb_slope);
  Json points = Json::array();
  for (const auto& p : r.points) points.push_back(sample_json(p));
  j["points"] = std::move(points);
  j["paired"] = r.paired ? sample_json(*r.paired) : Json(nullptr);
  j["ce_sup_norms"] = r9(r.ce_sup_norms);
  j["arb_sup_norms"] = r9(r.arb_sup_norms);
  j["mean_sq_feature_norm"] = r9(r.mean_sq_feature_norm);
  return j;
}

Json scenario_json(const PropositionScenario& s) {
  Json j;
  j["num_classes"] = s.num_classes;
  j["dim"] = s.dim;
  j["base_count"] = s.base_count;
  j["weight_scale"] = r9(s.weight_scale);
  j["feature_scale"] = r9(s.feature_scale);
  j["noise"] = r9(s.noise);
  j["ratios"] = r9(s.ratios);
  j["paired_ratio"] = r9(s.paired_ratio);
  j["seeds"] = s.seeds;
  j["seed"] = s.seed;
  return j;
}

std::string propositions_text(const PropositionScenario& scenario) {
  Json j;
  j["scenario"] = scenario_json(scenario);
  j["proposition_1"] = report_json(check_proposition_1(scenario));
  j["proposition_2"] = report_json(check_proposition_2(scenario));
  return dump(j);
}

std::string real_cell(double v) { return format_real(v); }

void progress(std::ostream* log, const char* label, const EpochLog& e) {
  if (log == nullptr) return;
  char line[160];
  std::snprintf(line, sizeof line, "%s %5d  lr %.4g  loss %.6f  acc %.4f  bal %.4f\n", label,
                e.epoch, e.lr, e.train_loss, e.overall_acc, e.balanced_acc);
  *log << line << std::flush;
}

double spread_or_nan(const std::vector<EpochLog>& logs, int tracked, std::size_t window) {
  return logs.empty() ? kNaN : gradient_spread(logs, tracked, 0.25, window);
}

Json common_json(const ExperimentConfig& cfg, const ArmResult& r) {
  Json j;
  j["epochs_csv_version"] = kEpochsCsvVersion;
  j["mode"] = std::string(to_string(cfg.mode));
  j["loss"] = std::string(to_string(cfg.loss.kind));
  j["counts_mode"] = std::string(to_string(cfg.loss.counts_mode));
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.optim.epochs;
  j["overall_acc"] = r9(r.overall_acc);
  j["balanced_acc"] = r9(r.balanced_acc);
  j["per_class_acc"] = r9(r.per_class_acc);
  j["tracked_class"] = r.tracked_class;
  j["tracked_class_acc"] = r9(r.per_class_acc.at(static_cast<std::size_t>(r.tracked_class)));
  j["g_spread_last_quarter"] = r9(r.g_spread);
  j["smooth_window"] = cfg.tracking.smooth_window;
  j["classifier"] = r.metrics ? metrics_json(*r.metrics) : Json(nullptr);
  return j;
}

ArmResult run_standard(const ExperimentConfig& cfg, const fs::path& out, std::ostream* log) {
  const ExperimentData data = build_data(cfg);
  const char* label = cfg.loss.kind == LossKind::Arb ? "[arb]" : "[ce] ";
  TrainResult tr = train(data.train, data.test, train_options(cfg),
                         [&](const EpochLog& e) { progress(log, label, e); });

  ArmResult r;
  r.logs = std::move(tr.logs);
  r.overall_acc = tr.final_eval.overall_acc;
  r.balanced_acc = tr.final_eval.balanced_acc;
  r.per_class_acc = tr.final_eval.per_class_acc;
  r.tracked_class = tr.tracked_class;
  r.g_spread = spread_or_nan(r.logs, r.tracked_class, cfg.tracking.smooth_window);
  r.metrics = try_metrics(tr.model.classifier());
  r.minority_score = kNaN;

  Json j = common_json(cfg, r);
  j["ncm_acc"] = r9(tr.final_eval.ncm_acc);
  j["train_counts"] = data.train.class_counts;
  try {
    const ForwardResult fr = forward(tr.model, data.train.features);
    const ClassMeanGeometry geo =
        class_mean_geometry(fr.features, data.train.labels, data.train.num_classes);
    Json f = metrics_json(geo.metrics);
    f["within_class_variance"] = r9(geo.within_class_variance);
    j["feature_geometry"] = std::move(f);
  } catch (const DegenerateWeights&) {
    j["feature_geometry"] = nullptr;
  }
  r.final_json = dump(j);

  write_file_atomic(out / "epochs.csv", epochs_csv(r.logs, data.train.num_classes, false));
  write_file_atomic(out / "final_metrics.json", r.final_json);
  save_checkpoint(to_checkpoint(tr.model), out / "checkpoint.json");
  return r;
}

ArmResult run_peeled(const ExperimentConfig& cfg, const fs::path& out, std::ostream* log) {
  PeeledOptions po;
  po.loss = cfg.loss.kind;
  po.dim = cfg.data.dim;
  po.counts = training_counts(cfg);
  po.lr = cfg.optim.lr;
  po.momentum = cfg.optim.momentum;
  po.weight_decay = cfg.optim.weight_decay;
  po.steps = cfg.optim.epochs;
  po.init_scale = cfg.peeled.init_scale;
  po.feature_norm_bound = cfg.peeled.feature_norm_bound;
  po.feature_step = cfg.peeled.feature_step;
  po.log_every = cfg.peeled.log_every;
  po.tracked_class = cfg.tracking.tracked_class;
  po.minority = cfg.peeled.minority;
  po.seed = cfg.seed;
  const char* label = cfg.loss.kind == LossKind::Arb ? "[arb]" : "[ce] ";
  const int every = std::max(1, cfg.optim.epochs / 20);
  PeeledResult pr = train_peeled(po, [&](const EpochLog& e) {
    if (e.epoch % every == 0 || e.epoch == cfg.optim.epochs) progress(log, label, e);
  });

  ArmResult r;
  r.logs = std::move(pr.logs);
  const EpochLog& last = r.logs.back();
  r.overall_acc = last.overall_acc;
  r.balanced_acc = last.balanced_acc;
  r.per_class_acc = last.per_class_acc;
  r.tracked_class = pr.tracked_class;
  r.g_spread = spread_or_nan(r.logs, r.tracked_class, cfg.tracking.smooth_window);
  r.metrics = try_metrics(pr.classifier);
  r.minority_score = last.minority_score;

  Json j = common_json(cfg, r);
  j["train_counts"] = po.counts;
  j["minority"] = pr.minority;
  j["minority_collapse"] = r9(r.minority_score);
  j["mean_sq_feature_norm"] = r9(std::pow(frobenius_norm(pr.features), 2) /
                                 static_cast<double>(pr.features.rows()));
  r.final_json = dump(j);

  Checkpoint ckpt;
  ckpt.meta = {{"kind", "peeled"}};
  ckpt.tensors.push_back({"classifier.weight", pr.classifier});
  ckpt.tensors.push_back({"features", pr.features});
  Matrix labels(1, pr.labels.size());
  for (std::size_t j2 = 0; j2 < pr.labels.size(); ++j2) labels(0, j2) = pr.labels[j2];
  ckpt.tensors.push_back({"labels", labels});

  write_file_atomic(out / "epochs.csv", epochs_csv(r.logs, po.counts.size(), true));
  write_file_atomic(out / "final_metrics.json", r.final_json);
  save_checkpoint(ckpt, out / "checkpoint.json");
  return r;
}

Json arm_json(const ArmResult& r) {
  Json j;
  j["overall_acc"] = r9(r.overall_acc);
  j["balanced_acc"] = r9(r.balanced_acc);
  j["per_class_acc"] = r9(r.per_class_acc);
  j["tracked_class"] = r.tracked_class;
  j["tracked_class_acc"] = r9(r.per_class_acc.at(static_cast<std::size_t>(r.tracked_class)));
  j["g_spread_last_quarter"] = r9(r.g_spread);
  j["minority_collapse"] = r9(r.minority_score);
  j["classifier"] = r.metrics ? metrics_json(*r.metrics) : Json(nullptr);
  return j;
}

double metric_delta(const std::optional<CollapseMetrics>& a, const std::optional<CollapseMetrics>& b,
                    double CollapseMetrics::*field) {
  return a && b ? (*b).*field - (*a).*field : kNaN;
}

}  // namespace

void apply_overrides(ExperimentConfig& config, const RunOverrides& overrides) {
  if (overrides.seed) config.seed = *overrides.seed;
  if (overrides.out) {
    if (overrides.out->empty()) throw ConfigError("output.directory", "must not be empty");
    config.output.directory = *overrides.out;
  }
}

std::vector<std::size_t> training_counts(const ExperimentConfig& config) {
  if (!config.data.counts.empty()) return config.data.counts;
  return longtail_counts({config.data.imbalance_factor, config.data.base_count},
                         config.data.num_classes);
}

ExperimentData build_data(const ExperimentConfig& cfg) {
  Rng rng(cfg.seed ^ kDataStream);
  const std::size_t c = cfg.data.num_classes;
  if (cfg.data.source == DataSource::Synth) {
    const GaussianMixture mixture = make_gaussian_mixture(rng, c, cfg.data.dim, cfg.data.mean_scale);
    const auto counts = training_counts(cfg);
    Dataset train = sample_mixture(mixture, counts, rng);
    const std::vector<std::size_t> test_counts(c, cfg.data.test_per_class);
    Dataset test = sample_mixture(mixture, test_counts, rng);
    return {std::move(train), std::move(test)};
  }
  if (!cfg.data.counts.empty()) {
    throw ConfigError("data.counts", "explicit counts apply to synth data only");
  }
  Dataset train;
  Dataset test;
  if (cfg.data.source == DataSource::Csv) {
    train = load_csv(cfg.data.train_path, c);
    test = load_csv(cfg.data.test_path, c);
  } else {
    train = load_idx(cfg.data.train_path, cfg.data.train_labels_path);
    test = load_idx(cfg.data.test_path, cfg.data.test_labels_path);
  }
  if (train.num_classes != c || test.num_classes != c) {
    throw ConfigError("data.num_classes", "does not match the class count in the data files");
  }
  if (train.dim() != cfg.data.dim || test.dim() != cfg.data.dim) {
    throw ConfigError("data.dim", "expected " + std::to_string(train.dim()) +
                                      " to match the data files");
  }
  if (cfg.data.imbalance_factor > 1.0) {
    train = apply_longtail(train, {cfg.data.imbalance_factor, cfg.data.base_count}, rng);
  }
  return {std::move(train), std::move(test)};
}

std::string epochs_csv(const std::vector<EpochLog>& logs, std::size_t c, bool peeled) {
  std::string out = "epoch,lr,train_loss,overall_acc,balanced_acc";
  for (std::size_t k = 0; k < c; ++k) out += ",acc_class_" + std::to_string(k);
  out += ",B_D2,B_A2,B_L2,min_angle_deg";
  for (std::size_t k = 0; k < c; ++k) out += ",g_" + std::to_string(k);
  if (peeled) out += ",minority_collapse";
  out += '\n';
  for (const auto& e : logs) {
    out += std::to_string(e.epoch);
    for (double v : {e.lr, e.train_loss, e.overall_acc, e.balanced_acc}) out += "," + real_cell(v);
    for (std::size_t k = 0; k < c; ++k) out += "," + real_cell(e.per_class_acc.at(k));
    const auto& m = e.metrics;
    for (double v : {m.b_d2, m.b_a2, m.b_l2, m.min_pairwise_angle_deg}) {
      out += "," + real_cell(e.metrics_valid ? v : kNaN);
    }
    for (std::size_t k = 0; k < c; ++k) out += "," + real_cell(e.g.at(k));
    if (peeled) out += "," + real_cell(e.minority_score);
    out += '\n';
  }
  return out;
}

ArmResult run_experiment(const ExperimentConfig& config, const fs::path& out_dir,
                         std::ostream* log) {
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "config.ini", to_ini(config));
  ArmResult r = config.mode == RunMode::Standard ? run_standard(config, out_dir, log)
                                                 : run_peeled(config, out_dir, log);
  if (config.propositions.enabled) {
    write_file_atomic(out_dir / "propositions.json", propositions_text(config.propositions.scenario));
  }
  return r;
}

std::string run_compare(const ExperimentConfig& config, std::ostream* log) {
  const fs::path out = config.output.directory;
  ExperimentConfig ce_cfg = config;
  ce_cfg.loss.kind = LossKind::CrossEntropy;
  ce_cfg.propositions.enabled = false;
  ExperimentConfig arb_cfg = ce_cfg;
  arb_cfg.loss.kind = LossKind::Arb;
  const ArmResult ce = run_experiment(ce_cfg, out / "ce", log);
  const ArmResult arb = run_experiment(arb_cfg, out / "arb", log);

  Json j;
  j["mode"] = std::string(to_string(config.mode));
  j["seed"] = config.seed;
  j["ce"] = arm_json(ce);
  j["arb"] = arm_json(arb);
  Json d;
  d["overall_acc"] = r9(arb.overall_acc - ce.overall_acc);
  d["balanced_acc"] = r9(arb.balanced_acc - ce.balanced_acc);
  std::vector<double> per_class(ce.per_class_acc.size());
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    per_class[k] = arb.per_class_acc[k] - ce.per_class_acc[k];
  }
  d["per_class_acc"] = r9(per_class);
  d["B_D2"] = r9(metric_delta(ce.metrics, arb.metrics, &CollapseMetrics::b_d2));
  d["B_A2"] = r9(metric_delta(ce.metrics, arb.metrics, &CollapseMetrics::b_a2));
  d["B_L2"] = r9(metric_delta(ce.metrics, arb.metrics, &CollapseMetrics::b_l2));
  d["min_angle_deg"] =
      r9(metric_delta(ce.metrics, arb.metrics, &CollapseMetrics::min_pairwise_angle_deg));
  d["g_spread_last_quarter"] = r9(arb.g_spread - ce.g_spread);
  d["minority_collapse"] = r9(arb.minority_score - ce.minority_score);
  j["delta_arb_minus_ce"] = std::move(d);
  const std::string text = dump(j);
  write_file_atomic(out / "compare.json", text);
  if (config.propositions.enabled) {
    write_file_atomic(out / "propositions.json", propositions_text(config.propositions.scenario));
  }
  return text;
}

std::string run_propositions(const ExperimentConfig& config, std::ostream* log) {
  const fs::path out = config.output.directory;
  fs::create_directories(out);
  const std::string text = propositions_text(config.propositions.scenario);
  write_file_atomic(out / "propositions.json", text);
  if (log != nullptr) *log << "wrote " << (out / "propositions.json").string() << "\n";
  return text;
}

std::string checkpoint_metrics(const fs::path& checkpoint) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Matrix* w = ckpt.find("classifier.weight");
  if (w == nullptr) throw FormatError("checkpoint has no classifier.weight tensor", 0);
  return dump(metrics_json(balance_metrics(*w)));
}

int dispatch(const std::string& command, const fs::path& target, const RunOverrides& overrides,
             std::ostream& out, std::ostream& err) {
  try {
    if (command == "metrics") {
      out << checkpoint_metrics(target);
      return 0;
    }
    ExperimentConfig cfg = load_config(target);
    apply_overrides(cfg, overrides);
    std::ostream* log = overrides.quiet ? nullptr : &out;
    if (command == "run") {
      run_experiment(cfg, cfg.output.directory, log);
    } else if (command == "compare") {
      const std::string text = run_compare(cfg, log);
      if (!overrides.quiet) out << text;
    } else if (command == "check-propositions") {
      run_propositions(cfg, log);
    } else {
      err << "unknown command `" << command << "`\n";
      return 1;
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const DivergedError& e) {
    err << "diverged at epoch " << e.epoch() << ": " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace arblab
