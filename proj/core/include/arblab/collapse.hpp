#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "arblab/numkit.hpp"

namespace arblab {

/// Simplex equiangular tight frame: c unit vectors of dimension d with
/// pairwise dot products −1/(c−1). Row i of `vectors` is w*_i.
struct EtfFrame {
  Matrix vectors;
  std::size_t num_classes = 0;
  std::size_t dim = 0;
};

/// W* = sqrt(c/(c−1)) · P (I − 11ᵀ/c) with P the orthonormal factor of a
/// seeded d × c Gaussian. Throws InvalidSpec when d < c or c < 2.
EtfFrame etf_frame(std::size_t num_classes, std::size_t dim, Rng& rng);

/// Geometry of c weight (or class-mean) vectors.
///
/// b_d2 and b_a2 are the squared deviations of
/// the c(c−1) off-diagonal dot products (cosines) from their mean, divided
/// by (c−1)². The *_population fields divide by c(c−1) instead.
/// b_l2 is the population variance of the norms.
///
/// similarity(i, j) = w_iᵀw_j / Σ_{k≠i} w_iᵀw_k off the diagonal, 0 on it.
/// A row whose off-diagonal dot sum is below 1e-12 in magnitude is NaN and
/// flagged in similarity_degenerate.
struct CollapseMetrics {
  double b_d2 = 0.0;
  double b_a2 = 0.0;
  double b_l2 = 0.0;
  double b_d2_population = 0.0;
  double b_a2_population = 0.0;
  Matrix similarity;
  std::vector<bool> similarity_degenerate;
  double min_pairwise_angle_deg = 0.0;
  double mean_cosine = 0.0;
  std::vector<double> norms;
};

/// Throws DegenerateWeights on fewer than two vectors or a zero-norm vector.
CollapseMetrics balance_metrics(const Matrix& vectors);

/// Per-class means (c × d) of `features`. Throws DegenerateWeights when a
/// class has no samples.
Matrix class_means(const Matrix& features, std::span<const int> labels, std::size_t num_classes);

struct ClassMeanGeometry {
  CollapseMetrics metrics;               // over the centered class means
  Matrix centered_means;                 // c × d
  std::vector<double> center;            // average of the class means
  std::vector<double> within_class_variance;  // mean squared distance to own class mean
};

/// Class means are centered by the unweighted average of the class means,
/// so a frame placed at the class means is recovered regardless of counts.
ClassMeanGeometry class_mean_geometry(const Matrix& features, std::span<const int> labels,
                                      std::size_t num_classes);

/// Largest pairwise cosine among the listed vectors; 1 means fully collapsed.
double minority_collapse_score(const Matrix& vectors, std::span<const int> minority);

/// Index of the nearest row of `means` to x in Euclidean distance.
int nearest_mean(const Matrix& means, std::span<const double> x);

}  // namespace arblab
