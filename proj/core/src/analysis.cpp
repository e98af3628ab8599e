#include "arblab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>

namespace arblab {

GradientNormAccumulator::GradientNormAccumulator(std::size_t num_classes, int tracked_class)
    : tracked_(tracked_class), sums_(num_classes, 0.0) {
  if (tracked_class < 0 || static_cast<std::size_t>(tracked_class) >= num_classes) {
    throw InvalidSpec("tracked class " + std::to_string(tracked_class) + " out of range");
  }
}

void GradientNormAccumulator::add(const GradientReport& report) {
  if (report.num_classes() != sums_.size()) {
    throw DimensionError("gradient report has the wrong class count");
  }
  const auto t = static_cast<std::size_t>(tracked_);
  for (std::size_t k = 0; k < sums_.size(); ++k) {
    sums_[k] += k == t ? report.attraction_norm[t] : report.repulsion_norm(t, k);
  }
  ++batches_;
}

std::vector<double> GradientNormAccumulator::mean() const {
  if (batches_ == 0) throw InvalidSpec("no batches accumulated");
  std::vector<double> g(sums_);
  for (auto& v : g) v /= static_cast<double>(batches_);
  return g;
}

std::vector<double> epoch_gradient_norms(std::span<const GradientReport> reports,
                                         int tracked_class) {
  if (reports.empty()) throw InvalidSpec("no gradient reports");
  GradientNormAccumulator acc(reports.front().num_classes(), tracked_class);
  for (const auto& r : reports) acc.add(r);
  return acc.mean();
}

std::vector<double> smooth(std::span<const double> series, std::size_t window) {
  if (window < 1 || window % 2 == 0) throw InvalidSpec("smoothing window must be odd and >= 1");
  const std::size_t half = window / 2;
  const std::size_t n = series.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n - 1, i + half);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += series[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

double gradient_spread(std::span<const EpochLog> logs, int tracked_class, double tail_fraction,
                       std::size_t window) {
  if (logs.empty()) throw InvalidSpec("gradient spread of an empty log");
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
    throw InvalidSpec("tail fraction must be in (0, 1]");
  }
  const std::size_t n = logs.size();
  const std::size_t c = logs.front().g.size();
  const auto tail = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(n))));
  double hi = 0.0;
  double lo = std::numeric_limits<double>::infinity();
  std::vector<double> series(n);
  for (std::size_t k = 0; k < c; ++k) {
    if (static_cast<int>(k) == tracked_class) continue;
    for (std::size_t e = 0; e < n; ++e) series[e] = logs[e].g.at(k);
    const auto sm = smooth(series, window);
    double m = 0.0;
    for (std::size_t e = n - tail; e < n; ++e) m += sm[e];
    m /= static_cast<double>(tail);
    hi = std::max(hi, m);
    lo = std::min(lo, m);
  }
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

std::uint64_t scenario_hash(const PropositionScenario& s) {
  std::ostringstream key;
  key.precision(17);
  key << s.num_classes << '|' << s.dim << '|' << s.base_count << '|' << s.weight_scale << '|'
      << s.feature_scale << '|' << s.noise << '|' << s.paired_ratio << '|' << s.seeds << '|'
      << s.seed;
  for (double r : s.ratios) key << '|' << r;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : key.str()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double ols_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidSpec("slope needs >= 2 paired points");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw InvalidSpec("slope undefined for constant x");
  return sxy / sxx;
}

std::optional<double> repulsion_ratio(const GradientReport& r, int tracked, int k, int l) {
  const auto t = static_cast<std::size_t>(tracked);
  const double den = r.repulsion_norm(t, static_cast<std::size_t>(l));
  if (!(den > 1e-12)) return std::nullopt;
  return r.repulsion_norm(t, static_cast<std::size_t>(k)) / den;
}

std::optional<double> attraction_ratio(const GradientReport& r, int i, int k) {
  const auto t = static_cast<std::size_t>(i);
  const double den = r.repulsion_norm(t, static_cast<std::size_t>(k));
  if (!(den > 1e-12) || !(r.attraction_norm[t] > 1e-12)) return std::nullopt;
  return r.attraction_norm[t] / den;
}

ScenarioDraw draw_scenario(const PropositionScenario& scenario,
                           std::span<const std::size_t> counts, std::uint64_t seed) {
  const std::size_t c = scenario.num_classes;
  if (counts.size() != c) throw InvalidSpec("scenario counts must have one entry per class");
  Rng rng(seed);
  const EtfFrame frame = etf_frame(c, scenario.dim, rng);
  ScenarioDraw draw{scenario.weight_scale * frame.vectors, Matrix(), {}};
  std::size_t n = 0;
  for (auto v : counts) n += v;
  draw.features = Matrix(n, scenario.dim);
  draw.labels.resize(n);
  std::size_t r = 0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t s = 0; s < counts[k]; ++s, ++r) {
      draw.labels[r] = static_cast<int>(k);
      for (std::size_t q = 0; q < scenario.dim; ++q) {
        draw.features(r, q) = scenario.feature_scale * frame.vectors(k, q) +
                              scenario.noise * rng.normal();
      }
    }
  }
  return draw;
}

namespace {

void validate(const PropositionScenario& s) {
  if (s.num_classes < 3) throw InvalidSpec("proposition scenarios need at least 3 classes");
  if (s.dim < s.num_classes) throw InvalidSpec("scenario dim must be >= num_classes");
  if (s.seeds < 1) throw InvalidSpec("scenario needs at least one seed");
  if (s.ratios.size() < 2) throw InvalidSpec("scenario needs at least two ratios");
  for (double r : s.ratios) {
    if (!(r > 0.0)) throw InvalidSpec("count ratios must be > 0");
  }
  if (!(s.paired_ratio > 0.0)) throw InvalidSpec("paired ratio must be > 0");
}

std::size_t scaled(std::size_t base, double factor) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(base) * factor + 0.5));
}

struct Accumulators {
  std::vector<double> ce_sup;
  std::vector<double> arb_sup;
  std::vector<double> sq_norm_sum;
  std::size_t draws = 0;

  explicit Accumulators(std::size_t c) : ce_sup(c, 0.0), arb_sup(c, 0.0), sq_norm_sum(c, 0.0) {}

  void add(const ScenarioDraw& d, const GradientReport& ce, const GradientReport& arb) {
    const std::size_t c = ce_sup.size();
    ce_sup[0] = std::max(ce_sup[0], ce.attraction_norm[0]);
    arb_sup[0] = std::max(arb_sup[0], arb.attraction_norm[0]);
    for (std::size_t k = 1; k < c; ++k) {
      ce_sup[k] = std::max(ce_sup[k], ce.repulsion_norm(0, k));
      arb_sup[k] = std::max(arb_sup[k], arb.repulsion_norm(0, k));
    }
    std::vector<double> sums(c, 0.0);
    std::vector<std::size_t> n(c, 0);
    for (std::size_t j = 0; j < d.labels.size(); ++j) {
      const auto k = static_cast<std::size_t>(d.labels[j]);
      const double nn = norm2(d.features.row(j));
      sums[k] += nn * nn;
      ++n[k];
    }
    for (std::size_t k = 0; k < c; ++k) {
      if (n[k] > 0) sq_norm_sum[k] += sums[k] / static_cast<double>(n[k]);
    }
    ++draws;
  }

  void finish(PropositionReport& rep) const {
    rep.ce_sup_norms = ce_sup;
    rep.arb_sup_norms = arb_sup;
    rep.mean_sq_feature_norm = sq_norm_sum;
    for (auto& v : rep.mean_sq_feature_norm) v /= static_cast<double>(std::max<std::size_t>(draws, 1));
  }
};

template <typename RatioFn>
RatioSample run_point(const PropositionScenario& s, std::span<const std::size_t> counts,
                      double count_ratio, std::uint64_t seed_offset, RatioFn ratio,
                      Accumulators& acc) {
  RatioSample pt;
  pt.count_ratio = count_ratio;
  for (std::size_t k = 0; k < s.seeds; ++k) {
    const std::uint64_t seed = s.seed + seed_offset + k;
    const ScenarioDraw d = draw_scenario(s, counts, seed);
    const ClassCounts cc = ClassCounts::from_labels(d.labels, s.num_classes);
    const GradientReport ce =
        classifier_gradient(LossKind::CrossEntropy, d.features, d.labels, d.classifier, cc);
    const GradientReport arb =
        classifier_gradient(LossKind::Arb, d.features, d.labels, d.classifier, cc);
    acc.add(d, ce, arb);
    const auto rc = ratio(ce);
    const auto ra = ratio(arb);
    if (!rc || !ra) {
      ++pt.flagged;
      continue;
    }
    pt.ce.push_back(*rc);
    pt.arb.push_back(*ra);
  }
  pt.ce_median = median(pt.ce);
  pt.arb_median = median(pt.arb);
  return pt;
}

void fit_slopes(PropositionReport& rep) {
  std::vector<double> x;
  std::vector<double> yc;
  std::vector<double> ya;
  for (const auto& p : rep.points) {
    if (p.ce.empty() || p.arb.empty()) continue;
    x.push_back(std::log(p.count_ratio));
    yc.push_back(std::log(p.ce_median));
    ya.push_back(std::log(p.arb_median));
  }
  if (x.size() < 2) {
    rep.ce_slope = rep.arb_slope = std::nan("");
    return;
  }
  rep.ce_slope = ols_slope(x, yc);
  rep.arb_slope = ols_slope(x, ya);
}

}  // namespace

PropositionReport check_proposition_1(const PropositionScenario& scenario) {
  validate(scenario);
  PropositionReport rep;
  rep.proposition = 1;
  rep.scenario_hash = scenario_hash(scenario);
  rep.first_seed = scenario.seed;
  rep.seeds = scenario.seeds;
  Accumulators acc(scenario.num_classes);
  std::uint64_t offset = 0;
  for (double r : scenario.ratios) {
    std::vector<std::size_t> counts(scenario.num_classes, scenario.base_count);
    counts[1] = scaled(scenario.base_count, r);
    rep.points.push_back(run_point(
        scenario, counts, r, offset,
        [](const GradientReport& g) { return repulsion_ratio(g, 0, 1, 2); }, acc));
    offset += scenario.seeds;
  }
  fit_slopes(rep);
  acc.finish(rep);
  return rep;
}

PropositionReport check_proposition_2(const PropositionScenario& scenario) {
  validate(scenario);
  PropositionReport rep;
  rep.proposition = 2;
  rep.scenario_hash = scenario_hash(scenario);
  rep.first_seed = scenario.seed;
  rep.seeds = scenario.seeds;
  Accumulators acc(scenario.num_classes);
  const auto ratio = [](const GradientReport& g) { return attraction_ratio(g, 0, 1); };
  std::uint64_t offset = 0;
  for (double r : scenario.ratios) {
    // n_0 / n_1 = 1 / r: the tracked class becomes the rare one.
    std::vector<std::size_t> counts(scenario.num_classes, scenario.base_count);
    counts[1] = scaled(scenario.base_count, r);
    rep.points.push_back(run_point(scenario, counts, 1.0 / r, offset, ratio, acc));
    offset += scenario.seeds;
  }
  std::vector<std::size_t> counts(scenario.num_classes, scenario.base_count);
  counts[1] = scaled(scenario.base_count, 1.0 / scenario.paired_ratio);
  rep.paired = run_point(scenario, counts, scenario.paired_ratio, offset, ratio, acc);
  fit_slopes(rep);
  acc.finish(rep);
  return rep;
}

}  // namespace arblab
