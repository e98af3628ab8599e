#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "arblab/numkit.hpp"

namespace arblab {

/// Features (n × d) with integer labels in [0, c) and per-class counts.
/// Class 0 is the most frequent class in every long-tailed construction.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::size_t> class_counts;
  std::size_t num_classes = 0;

  /// Validates labels and fills class_counts. Every class must be present.
  static Dataset make(Matrix features, std::vector<int> labels, std::size_t num_classes);

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  Dataset subset(std::span<const std::size_t> indices) const;
};

struct LongTailSpec {
  double imbalance_factor = 1.0;  // n_max / n_min
  std::size_t base_count = 0;     // n_max
};

/// Target counts n_i = round_half_up(base · IF^(−i/(c−1))), floored at 1.
std::vector<std::size_t> longtail_counts(const LongTailSpec& spec, std::size_t num_classes);

struct Batch {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::size_t> batch_counts;
};

/// Batch whose inputs were mixed pairwise: x' = λ·x_a + (1−λ)·x_b.
/// Losses over it are λ·L(labels_a) + (1−λ)·L(labels_b).
struct MixedBatch {
  Matrix features;
  std::vector<int> labels_a;
  std::vector<int> labels_b;
  std::vector<std::size_t> batch_counts;  // counts of labels_a
  double lambda = 1.0;
};

/// Class-conditional Gaussians N(mean_i, I_d).
struct GaussianMixture {
  Matrix means;  // c × d, row i is mean_scale · μ_i
};

/// Means along orthonormal directions (QR of a seeded Gaussian) scaled by
/// mean_scale. When d < c the directions are random unit vectors instead.
GaussianMixture make_gaussian_mixture(Rng& rng, std::size_t num_classes, std::size_t dim,
                                      double mean_scale);

/// Draws counts[i] samples of class i, classes in order.
Dataset sample_mixture(const GaussianMixture& mixture, std::span<const std::size_t> counts,
                       Rng& rng);

Dataset synth_gaussian_mixture(Rng& rng, std::size_t num_classes, std::size_t dim,
                               std::span<const std::size_t> counts, double mean_scale);

/// Subsamples each class without replacement down to longtail_counts(spec).
/// Kept samples retain their original relative order.
Dataset apply_longtail(const Dataset& ds, const LongTailSpec& spec, Rng& rng);

/// One epoch of batches. Every sample appears exactly once; the last batch may
/// be short. The permutation is drawn from `rng` only when `shuffle` is set.
std::vector<Batch> iterate_batches(const Dataset& ds, std::size_t batch_size, bool shuffle,
                                   Rng& rng);

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);

/// Mixes the batch with a random permutation of itself, λ ~ Beta(alpha, alpha).
MixedBatch mixup(const Batch& batch, double alpha, Rng& rng);
/// Deterministic form: partner of row j is row partner[j].
MixedBatch mixup_with(const Batch& batch, double lambda, std::span<const std::size_t> partner);

/// IDX image file (magic 0x00000803, u8 pixels) and label file (0x00000801).
/// Pixels are scaled to [0, 1]. num_classes = max label + 1.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// CSV with a header row and a required `label` column; every other column is
/// a feature. No quoting. num_classes = max label + 1 unless given.
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes = 0);
void save_csv(const Dataset& ds, const std::filesystem::path& path);

}  // namespace arblab
