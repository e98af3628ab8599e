#include "arblab/collapse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace arblab {

namespace {

std::vector<double> checked_norms(const Matrix& vectors) {
  std::vector<double> norms(vectors.rows());
  for (std::size_t i = 0; i < vectors.rows(); ++i) {
    norms[i] = norm2(vectors.row(i));
    if (!(norms[i] > 0.0) || !std::isfinite(norms[i])) {
      throw DegenerateWeights("vector " + std::to_string(i) + " has zero or non-finite norm");
    }
  }
  return norms;
}

double cosine(const Matrix& v, std::span<const double> norms, std::size_t i, std::size_t j) {
  const double c = dot(v.row(i), v.row(j)) / (norms[i] * norms[j]);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace

EtfFrame etf_frame(std::size_t num_classes, std::size_t dim, Rng& rng) {
  if (num_classes < 2) throw InvalidSpec("an ETF needs at least two classes");
  if (dim < num_classes) {
    throw InvalidSpec("ETF dimension " + std::to_string(dim) + " is below class count " +
                      std::to_string(num_classes));
  }
  const std::size_t c = num_classes;
  const Matrix p = qr_orthonormal(gaussian_matrix(rng, dim, c));  // d × c
  const double scale = std::sqrt(static_cast<double>(c) / static_cast<double>(c - 1));
  EtfFrame frame{Matrix(c, dim), c, dim};
  for (std::size_t r = 0; r < dim; ++r) {
    double mean = 0.0;
    for (std::size_t i = 0; i < c; ++i) mean += p(r, i);
    mean /= static_cast<double>(c);
    for (std::size_t i = 0; i < c; ++i) frame.vectors(i, r) = scale * (p(r, i) - mean);
  }
  return frame;
}

CollapseMetrics balance_metrics(const Matrix& vectors) {
  const std::size_t c = vectors.rows();
  if (c < 2) throw DegenerateWeights("balance metrics need at least two vectors");
  CollapseMetrics m;
  m.norms = checked_norms(vectors);
  const Matrix gram = matmul_transposed(vectors, vectors);

  const double pairs = static_cast<double>(c * (c - 1));
  double dot_mean = 0.0;
  double cos_mean = 0.0;
  double min_angle = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      dot_mean += gram(i, j);
      const double cs = cosine(vectors, m.norms, i, j);
      cos_mean += cs;
      min_angle = std::min(min_angle, std::acos(cs) * 180.0 / std::numbers::pi);
    }
  }
  dot_mean /= pairs;
  cos_mean /= pairs;
  double dot_ss = 0.0;
  double cos_ss = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      dot_ss += (gram(i, j) - dot_mean) * (gram(i, j) - dot_mean);
      const double dc = cosine(vectors, m.norms, i, j) - cos_mean;
      cos_ss += dc * dc;
    }
  }
  const double cm1_sq = static_cast<double>((c - 1) * (c - 1));
  m.b_d2 = dot_ss / cm1_sq;
  m.b_a2 = cos_ss / cm1_sq;
  m.b_d2_population = dot_ss / pairs;
  m.b_a2_population = cos_ss / pairs;
  m.mean_cosine = cos_mean;
  m.min_pairwise_angle_deg = min_angle;

  double norm_mean = 0.0;
  for (double n : m.norms) norm_mean += n;
  norm_mean /= static_cast<double>(c);
  for (double n : m.norms) m.b_l2 += (n - norm_mean) * (n - norm_mean);
  m.b_l2 /= static_cast<double>(c);

  m.similarity = Matrix(c, c);
  m.similarity_degenerate.assign(c, false);
  for (std::size_t i = 0; i < c; ++i) {
    double row_sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      if (k != i) row_sum += gram(i, k);
    }
    if (std::abs(row_sum) < 1e-12) {
      m.similarity_degenerate[i] = true;
      for (std::size_t j = 0; j < c; ++j) {
        if (j != i) m.similarity(i, j) = std::numeric_limits<double>::quiet_NaN();
      }
      continue;
    }
    for (std::size_t j = 0; j < c; ++j) {
      if (j != i) m.similarity(i, j) = gram(i, j) / row_sum;
    }
  }
  return m;
}

Matrix class_means(const Matrix& features, std::span<const int> labels, std::size_t num_classes) {
  if (labels.size() != features.rows()) {
    throw DimensionError("class_means: " + std::to_string(features.rows()) + " rows, " +
                         std::to_string(labels.size()) + " labels");
  }
  Matrix means(num_classes, features.cols());
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto k = static_cast<std::size_t>(labels[j]);
    if (labels[j] < 0 || k >= num_classes) {
      throw InvalidSpec("label " + std::to_string(labels[j]) + " out of range");
    }
    axpy(1.0, features.row(j), means.row(k));
    ++counts[k];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) throw DegenerateWeights("class " + std::to_string(k) + " is empty");
    for (auto& v : means.row(k)) v /= static_cast<double>(counts[k]);
  }
  return means;
}

ClassMeanGeometry class_mean_geometry(const Matrix& features, std::span<const int> labels,
                                      std::size_t num_classes) {
  ClassMeanGeometry g;
  const Matrix means = class_means(features, labels, num_classes);
  const std::size_t d = features.cols();
  g.center.assign(d, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) axpy(1.0, means.row(k), g.center);
  for (auto& v : g.center) v /= static_cast<double>(num_classes);

  g.centered_means = means;
  for (std::size_t k = 0; k < num_classes; ++k) axpy(-1.0, g.center, g.centered_means.row(k));

  g.within_class_variance.assign(num_classes, 0.0);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto k = static_cast<std::size_t>(labels[j]);
    double sq = 0.0;
    const auto h = features.row(j);
    for (std::size_t r = 0; r < d; ++r) {
      const double diff = h[r] - means(k, r);
      sq += diff * diff;
    }
    g.within_class_variance[k] += sq;
    ++counts[k];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    g.within_class_variance[k] /= static_cast<double>(counts[k]);
  }
  g.metrics = balance_metrics(g.centered_means);
  return g;
}

double minority_collapse_score(const Matrix& vectors, std::span<const int> minority) {
  if (minority.size() < 2) throw InvalidSpec("minority set needs at least two classes");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < minority.size(); ++a) {
    for (std::size_t b = a + 1; b < minority.size(); ++b) {
      const auto i = static_cast<std::size_t>(minority[a]);
      const auto j = static_cast<std::size_t>(minority[b]);
      if (minority[a] < 0 || minority[b] < 0 || i >= vectors.rows() || j >= vectors.rows()) {
        throw InvalidSpec("minority class id out of range");
      }
      const double ni = norm2(vectors.row(i));
      const double nj = norm2(vectors.row(j));
      if (!(ni > 0.0) || !(nj > 0.0)) {
        throw DegenerateWeights("zero-norm vector in minority set");
      }
      best = std::max(best, dot(vectors.row(i), vectors.row(j)) / (ni * nj));
    }
  }
  return best;
}

int nearest_mean(const Matrix& means, std::span<const double> x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < means.rows(); ++k) {
    double d = 0.0;
    const auto m = means.row(k);
    for (std::size_t r = 0; r < x.size(); ++r) d += (x[r] - m[r]) * (x[r] - m[r]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace arblab
