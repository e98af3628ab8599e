#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "arblab/loss.hpp"
#include "arblab/numkit.hpp"

namespace arblab {

enum class Activation { Relu, Tanh, Sigmoid };
std::string_view to_string(Activation a);
Activation parse_activation(std::string_view s);

enum class ClassifierInit { Gaussian, Etf };
std::string_view to_string(ClassifierInit init);
ClassifierInit parse_classifier_init(std::string_view s);

/// Fully connected network x → σ(W_1 x + b_1) → … → W_L h.
///
/// dims = [d_0, …, d_L]; weights[l] is dims[l+1] × dims[l]; hidden layers
/// carry biases (1 × width); the classifier weights.back() (c × d_{L−1}) has
/// none, so its rows are the class vectors w_i. dims of size 2 is a plain
/// linear classifier on the inputs.
struct Mlp {
  std::vector<std::size_t> dims;
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
  Activation activation = Activation::Relu;

  std::size_t num_layers() const noexcept { return weights.size(); }
  std::size_t num_classes() const noexcept { return dims.back(); }
  std::size_t feature_dim() const noexcept { return dims[dims.size() - 2]; }
  const Matrix& classifier() const { return weights.back(); }
  Matrix& classifier() { return weights.back(); }

  /// W_1, b_1, W_2, b_2, …, W_L.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
};

/// Hidden layers: N(0, 2/fan_in). Classifier: the same, or a unit-norm ETF
/// (requires d_{L−1} ≥ c).
Mlp init_mlp(std::span<const std::size_t> dims, Activation activation, ClassifierInit classifier,
             Rng& rng);

struct ForwardResult {
  Matrix features;  // n × d_{L−1}, penultimate activations
  Matrix logits;    // n × c
};
ForwardResult forward(const Mlp& mlp, const Matrix& x);

/// Labels for one backward pass. A mixed batch sets labels_b and lambda < 1;
/// the loss is then λ·L(labels_a) + (1−λ)·L(labels_b).
struct Targets {
  std::span<const int> labels_a;
  std::span<const int> labels_b{};
  double lambda = 1.0;
};

/// Gradients of the batch-mean loss, laid out like Mlp::parameters().
/// report holds the batch-summed classifier decomposition, so
/// weights.back() == report.full / b.
struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
  double loss = 0.0;
  GradientReport report;

  std::vector<const Matrix*> flat() const;
};

MlpGradients backward(const Mlp& mlp, const Matrix& x, const Targets& targets, LossKind kind,
                      const ClassCounts& counts);

/// Momentum SGD with coupled weight decay:
///   v ← momentum·v + grad + λ·param;  param ← param − lr·v
struct SgdState {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<Matrix> velocity;  // created on first step
};

void sgd_step(SgdState& state, std::span<Matrix* const> params,
              std::span<const Matrix* const> grads);

struct Schedule {
  enum class Kind { Constant, Step, Cosine };
  Kind kind = Kind::Constant;
  double base_lr = 0.1;           // constant / step start; cosine start
  std::vector<int> milestones;    // step
  double factor = 0.1;            // step
  double lr_end = 0.0;            // cosine
  int total_epochs = 1;
};

std::string_view to_string(Schedule::Kind k);
Schedule::Kind parse_schedule_kind(std::string_view s);

/// step:   base · factor^(#milestones ≤ epoch)
/// cosine: lr_end + ½(base − lr_end)(1 + cos(π·epoch/total))
/// Throws InvalidSpec unless 0 ≤ epoch < total_epochs.
double lr_at(const Schedule& schedule, int epoch);

struct NamedTensor {
  std::string name;
  Matrix value;
};

/// Versioned JSON checkpoint: {"format":"arblab-checkpoint","version":1,
/// "meta":{...},"tensors":[{"name","rows","cols","data"}]}. Doubles are
/// written with round-trip precision.
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  std::vector<std::pair<std::string, std::string>> meta;

  const Matrix* find(std::string_view name) const;
};

constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const Mlp& mlp);
Mlp mlp_from_checkpoint(const Checkpoint& ckpt);

}  // namespace arblab
