#include "arblab/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace arblab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_truth(int truth, std::size_t c) {
  if (truth < 0 || static_cast<std::size_t>(truth) >= c) {
    throw InvalidSpec("label " + std::to_string(truth) + " outside [0, " + std::to_string(c) +
                      ")");
  }
}

/// log(n_k / n_truth) per class; identically zero for cross-entropy.
/// Log space keeps extreme count ratios finite.
std::vector<double> log_weights(LossKind kind, const ClassCounts& counts, int truth,
                                std::size_t c) {
  check_truth(truth, c);
  std::vector<double> lw(c, 0.0);
  if (kind == LossKind::CrossEntropy) return lw;
  if (counts.size() != c) {
    throw DimensionError("class counts have " + std::to_string(counts.size()) +
                         " entries for " + std::to_string(c) + " logits");
  }
  const double n_truth = counts.counts[static_cast<std::size_t>(truth)];
  if (!(n_truth > 0.0)) {
    throw InvalidSpec("truth class " + std::to_string(truth) + " has zero count");
  }
  const double log_truth = std::log(n_truth);
  for (std::size_t k = 0; k < c; ++k) {
    const double n = counts.counts[k];
    lw[k] = n > 0.0 ? std::log(n) - log_truth : kNegInf;
  }
  return lw;
}

/// Shifted logits s_k = z_k + log(n_k/n_truth) with max m and
/// denom = Σ_k exp(s_k − m) ≥ 1.
struct Shifted {
  std::vector<double> s;
  double max = 0.0;
  double denom = 0.0;
};

Shifted shift(std::span<const double> z, std::span<const double> lw) {
  Shifted out;
  out.s.resize(z.size());
  out.max = kNegInf;
  for (std::size_t k = 0; k < z.size(); ++k) {
    out.s[k] = z[k] + lw[k];
    out.max = std::max(out.max, out.s[k]);
  }
  for (double v : out.s) out.denom += std::exp(v - out.max);
  return out;
}

double loss_from(const Shifted& sh, std::span<const double> z, int truth) {
  const auto t = static_cast<std::size_t>(truth);
  if (sh.s[t] == sh.max) {
    double rest = 0.0;
    for (std::size_t k = 0; k < sh.s.size(); ++k) {
      if (k != t) rest += std::exp(sh.s[k] - sh.max);
    }
    return std::log1p(rest);
  }
  return sh.max - z[t] + std::log(sh.denom);
}

std::vector<double> grad_from(const Shifted& sh, int truth) {
  std::vector<double> g(sh.s.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = std::exp(sh.s[k] - sh.max) / sh.denom;
  g[static_cast<std::size_t>(truth)] -= 1.0;
  return g;
}

void check_batch(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size()) {
    throw DimensionError("logits have " + std::to_string(logits.rows()) + " rows for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw InvalidSpec("empty batch");
}

}  // namespace

std::string_view to_string(LossKind kind) {
  return kind == LossKind::CrossEntropy ? "ce" : "arb";
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "ce") return LossKind::CrossEntropy;
  if (s == "arb") return LossKind::Arb;
  throw InvalidSpec("unknown loss kind `" + std::string(s) + "` (expected ce|arb)");
}

std::string_view to_string(CountsMode mode) {
  return mode == CountsMode::Batch ? "batch" : "global";
}

CountsMode parse_counts_mode(std::string_view s) {
  if (s == "batch") return CountsMode::Batch;
  if (s == "global") return CountsMode::Global;
  throw InvalidSpec("unknown counts mode `" + std::string(s) + "` (expected batch|global)");
}

ClassCounts ClassCounts::uniform(std::size_t num_classes) {
  return {std::vector<double>(num_classes, 1.0), CountsMode::Global};
}

ClassCounts ClassCounts::global(std::span<const std::size_t> counts) {
  std::vector<double> v(counts.begin(), counts.end());
  return global(std::span<const double>(v));
}

ClassCounts ClassCounts::global(std::span<const double> counts) {
  for (double n : counts) {
    if (!(n > 0.0) || !std::isfinite(n)) throw InvalidSpec("global class counts must be > 0");
  }
  return {std::vector<double>(counts.begin(), counts.end()), CountsMode::Global};
}

ClassCounts ClassCounts::from_labels(std::span<const int> labels, std::size_t num_classes) {
  ClassCounts out{std::vector<double>(num_classes, 0.0), CountsMode::Batch};
  for (int y : labels) {
    check_truth(y, num_classes);
    out.counts[static_cast<std::size_t>(y)] += 1.0;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> z) {
  const std::vector<double> lw(z.size(), 0.0);
  const Shifted sh = shift(z, lw);
  std::vector<double> p(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) p[k] = std::exp(z[k] - sh.max) / sh.denom;
  return p;
}

std::vector<double> arb_softmax(std::span<const double> z, const ClassCounts& counts, int truth) {
  const auto lw = log_weights(LossKind::Arb, counts, truth, z.size());
  const Shifted sh = shift(z, lw);
  std::vector<double> p(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) p[k] = std::exp(z[k] - sh.max) / sh.denom;
  return p;
}

double sample_loss(LossKind kind, std::span<const double> z, int truth,
                   const ClassCounts& counts) {
  const auto lw = log_weights(kind, counts, truth, z.size());
  return loss_from(shift(z, lw), z, truth);
}

std::vector<double> logit_gradient(LossKind kind, std::span<const double> z, int truth,
                                   const ClassCounts& counts) {
  const auto lw = log_weights(kind, counts, truth, z.size());
  return grad_from(shift(z, lw), truth);
}

BatchEval evaluate_batch(LossKind kind, const Matrix& logits, std::span<const int> labels,
                         const ClassCounts& counts) {
  check_batch(logits, labels);
  BatchEval out{0.0, Matrix(logits.rows(), logits.cols())};
  double total = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto z = logits.row(j);
    const auto lw = log_weights(kind, counts, labels[j], z.size());
    const Shifted sh = shift(z, lw);
    total += loss_from(sh, z, labels[j]);
    const auto g = grad_from(sh, labels[j]);
    std::copy(g.begin(), g.end(), out.logit_grads.row(j).begin());
  }
  out.mean_loss = total / static_cast<double>(labels.size());
  return out;
}

double batch_loss(LossKind kind, const Matrix& logits, std::span<const int> labels,
                  const ClassCounts& counts) {
  check_batch(logits, labels);
  double total = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    total += sample_loss(kind, logits.row(j), labels[j], counts);
  }
  return total / static_cast<double>(labels.size());
}

double ce_loss(const Matrix& logits, std::span<const int> labels) {
  return batch_loss(LossKind::CrossEntropy, logits, labels, ClassCounts::uniform(logits.cols()));
}

double arb_loss(const Matrix& logits, std::span<const int> labels, const ClassCounts& counts) {
  return batch_loss(LossKind::Arb, logits, labels, counts);
}

double GradientReport::reconstruction_residual() const {
  Matrix sum = attraction;
  for (std::size_t i = 0; i < repulsion.size(); ++i) {
    auto row = sum.row(i);
    for (std::size_t k = 0; k < repulsion[i].rows(); ++k) {
      if (k != i) axpy(1.0, repulsion[i].row(k), row);
    }
  }
  return max_abs_diff(full, sum);
}

GradientReport decompose_gradient(const Matrix& features, std::span<const int> labels,
                                  const Matrix& logit_grads, const ClassCounts& counts) {
  const std::size_t b = features.rows();
  const std::size_t d = features.cols();
  const std::size_t c = logit_grads.cols();
  if (labels.size() != b || logit_grads.rows() != b) {
    throw DimensionError("gradient decomposition: " + std::to_string(b) + " feature rows, " +
                         std::to_string(labels.size()) + " labels, " +
                         std::to_string(logit_grads.rows()) + " gradient rows");
  }
  GradientReport r;
  r.full = matmul(transpose(logit_grads), features);
  r.attraction = Matrix(c, d);
  r.repulsion.assign(c, Matrix(c, d));
  for (std::size_t j = 0; j < b; ++j) {
    check_truth(labels[j], c);
    const auto k = static_cast<std::size_t>(labels[j]);
    const auto h = features.row(j);
    for (std::size_t i = 0; i < c; ++i) {
      const double g = logit_grads(j, i);
      if (i == k) {
        axpy(g, h, r.attraction.row(i));
      } else {
        axpy(g, h, r.repulsion[i].row(k));
      }
    }
  }
  r.attraction_norm.resize(c);
  r.repulsion_norm = Matrix(c, c);
  r.normalized_full = Matrix(c, d);
  for (std::size_t i = 0; i < c; ++i) {
    r.attraction_norm[i] = norm2(r.attraction.row(i));
    for (std::size_t k = 0; k < c; ++k) {
      if (k != i) r.repulsion_norm(i, k) = norm2(r.repulsion[i].row(k));
    }
    const double n = i < counts.size() ? counts.counts[i] : 0.0;
    if (n > 0.0) axpy(1.0 / n, r.full.row(i), r.normalized_full.row(i));
  }
  return r;
}

GradientReport combine_reports(double a, const GradientReport& x, double b,
                               const GradientReport& y) {
  GradientReport r;
  r.full = a * x.full + b * y.full;
  r.attraction = a * x.attraction + b * y.attraction;
  r.normalized_full = a * x.normalized_full + b * y.normalized_full;
  const std::size_t c = x.num_classes();
  r.repulsion.reserve(c);
  r.attraction_norm.resize(c);
  r.repulsion_norm = Matrix(c, c);
  for (std::size_t i = 0; i < c; ++i) {
    r.repulsion.push_back(a * x.repulsion[i] + b * y.repulsion[i]);
    r.attraction_norm[i] = norm2(r.attraction.row(i));
    for (std::size_t k = 0; k < c; ++k) {
      if (k != i) r.repulsion_norm(i, k) = norm2(r.repulsion[i].row(k));
    }
  }
  return r;
}

GradientReport classifier_gradient(LossKind kind, const Matrix& features,
                                   std::span<const int> labels, const Matrix& classifier,
                                   const ClassCounts& counts) {
  if (features.cols() != classifier.cols()) {
    throw DimensionError("features have dim " + std::to_string(features.cols()) +
                         ", classifier vectors have dim " + std::to_string(classifier.cols()));
  }
  const Matrix logits = matmul_transposed(features, classifier);
  const BatchEval eval = evaluate_batch(kind, logits, labels, counts);
  const ClassCounts used =
      kind == LossKind::CrossEntropy ? ClassCounts::from_labels(labels, classifier.rows()) : counts;
  return decompose_gradient(features, labels, eval.logit_grads, used);
}

std::vector<double> feature_gradient(LossKind kind, std::span<const double> z, int truth,
                                     const ClassCounts& counts, const Matrix& classifier) {
  if (classifier.rows() != z.size()) {
    throw DimensionError("classifier has " + std::to_string(classifier.rows()) +
                         " vectors for " + std::to_string(z.size()) + " logits");
  }
  const auto g = logit_gradient(kind, z, truth, counts);
  std::vector<double> out(classifier.cols(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) axpy(g[i], classifier.row(i), out);
  return out;
}

WeightedMean weighted_class_mean(const Matrix& features, std::span<const int> labels,
                                 std::span<const double> q, int cls) {
  if (labels.size() != features.rows() || q.size() != features.rows()) {
    throw DimensionError("weighted_class_mean: mismatched batch lengths");
  }
  WeightedMean out{std::vector<double>(features.cols(), 0.0), true};
  std::size_t n = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] != cls) continue;
    axpy(q[j], features.row(j), out.mean);
    ++n;
  }
  if (n == 0) return out;
  out.empty = false;
  for (auto& v : out.mean) v /= static_cast<double>(n);
  return out;
}

std::vector<double> q_coefficients(const Matrix& logit_grads, int column) {
  check_truth(column, logit_grads.cols());
  std::vector<double> q(logit_grads.rows());
  for (std::size_t j = 0; j < q.size(); ++j) {
    q[j] = std::abs(logit_grads(j, static_cast<std::size_t>(column)));
  }
  return q;
}

}  // namespace arblab
