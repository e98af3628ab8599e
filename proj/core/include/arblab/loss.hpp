#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "arblab/numkit.hpp"

namespace arblab {

enum class LossKind { CrossEntropy, Arb };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view s);

enum class CountsMode { Batch, Global };

std::string_view to_string(CountsMode mode);
CountsMode parse_counts_mode(std::string_view s);

/// Class cardinalities n_k used by the ARB denominator.
///
/// Global counts must all be positive. Batch-local counts may contain zeros
/// for classes absent from the batch; those classes drop out of the
/// denominator sum. The truth class of any evaluated sample must have n > 0.
struct ClassCounts {
  std::vector<double> counts;
  CountsMode mode = CountsMode::Global;

  static ClassCounts uniform(std::size_t num_classes);
  static ClassCounts global(std::span<const std::size_t> counts);
  static ClassCounts global(std::span<const double> counts);
  static ClassCounts from_labels(std::span<const int> labels, std::size_t num_classes);

  std::size_t size() const noexcept { return counts.size(); }
};

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> z);

/// p̃_i = exp(z_i) / Σ_k (n_k / n_truth) exp(z_k).
/// Σ_i (n_i/n_truth)·p̃_i = 1; Σ_i p̃_i is not 1 in general.
std::vector<double> arb_softmax(std::span<const double> z, const ClassCounts& counts, int truth);

/// Per-sample loss: −log softmax(z)[truth] or −log p̃_truth.
double sample_loss(LossKind kind, std::span<const double> z, int truth,
                   const ClassCounts& counts);

/// Mean cross-entropy over the rows of `logits`.
double ce_loss(const Matrix& logits, std::span<const int> labels);
/// Mean ARB loss. Non-negative: the truth term alone contributes 1 to the
/// denominator sum.
double arb_loss(const Matrix& logits, std::span<const int> labels, const ClassCounts& counts);
double batch_loss(LossKind kind, const Matrix& logits, std::span<const int> labels,
                  const ClassCounts& counts);

/// ∂L/∂z for one sample with a one-hot label.
///   CE:  g_i = p_i − δ_{i,truth}
///   ARB: g_truth = −(1 − p̃_truth), g_i = (n_i/n_truth)·p̃_i otherwise
/// Components sum to zero for both.
std::vector<double> logit_gradient(LossKind kind, std::span<const double> z, int truth,
                                   const ClassCounts& counts);

/// Loss mean and per-sample logit gradients (b × c) for a batch.
struct BatchEval {
  double mean_loss = 0.0;
  Matrix logit_grads;
};
BatchEval evaluate_batch(LossKind kind, const Matrix& logits, std::span<const int> labels,
                         const ClassCounts& counts);

/// Gradient of the batch-summed loss w.r.t. every classifier vector w_i,
/// split by the class of the contributing samples.
///
/// attraction.row(i)   = Σ_{j∈π(i)} g_{j,i}·h_j
/// repulsion[i].row(k) = Σ_{j∈π(k)} g_{j,i}·h_j   (k ≠ i; row i is zero)
/// full.row(i)         = Σ_j g_{j,i}·h_j, computed independently of the parts.
///
/// These are sums over the batch; trainers divide by b.
struct GradientReport {
  Matrix full;                       // c × d
  Matrix attraction;                 // c × d
  std::vector<Matrix> repulsion;     // c entries of c × d
  std::vector<double> attraction_norm;
  Matrix repulsion_norm;             // c × c, (i, k) = ‖repulsion[i].row(k)‖
  /// full.row(i) / n_i with the counts the loss used (zero row when n_i = 0).
  /// For ARB this strips the common n_i factor shared by every term of ∇w_i.
  Matrix normalized_full;

  std::size_t num_classes() const noexcept { return full.rows(); }
  /// max |full − (attraction + Σ_k repulsion)|.
  double reconstruction_residual() const;
};

/// Decomposes given per-sample logit gradients (b × c) over features (b × d).
GradientReport decompose_gradient(const Matrix& features, std::span<const int> labels,
                                  const Matrix& logit_grads, const ClassCounts& counts);

/// Weighted sum of reports: a·x + b·y (used for mixed two-label batches).
GradientReport combine_reports(double a, const GradientReport& x, double b,
                               const GradientReport& y);

/// classifier is c × d (row i = w_i); features b × d.
GradientReport classifier_gradient(LossKind kind, const Matrix& features,
                                   std::span<const int> labels, const Matrix& classifier,
                                   const ClassCounts& counts);

/// ∂L_j/∂h_j = Σ_i g_i·w_i.
std::vector<double> feature_gradient(LossKind kind, std::span<const double> z, int truth,
                                     const ClassCounts& counts, const Matrix& classifier);

struct WeightedMean {
  std::vector<double> mean;
  bool empty = false;
};

/// (1/n_i)·Σ_{j∈π(i)} q_j·h_j over the samples of class `cls`.
/// Absent class gives a zero vector with `empty` set.
WeightedMean weighted_class_mean(const Matrix& features, std::span<const int> labels,
                                 std::span<const double> q, int cls);

/// q_{j,i} = |g_{j,i}|: 1 − p for same-class samples, p otherwise (CE).
std::vector<double> q_coefficients(const Matrix& logit_grads, int column);

}  // namespace arblab
