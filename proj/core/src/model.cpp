#include "arblab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "json.hpp"

#include "arblab/collapse.hpp"
#include "arblab/io.hpp"

namespace arblab {

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Relu:
      return x > 0.0 ? x : 0.0;
    case Activation::Tanh:
      return std::tanh(x);
    case Activation::Sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

/// Derivative expressed through the pre-activation x and output y.
double activate_grad(Activation a, double x, double y) {
  switch (a) {
    case Activation::Relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh:
      return 1.0 - y * y;
    case Activation::Sigmoid:
      return y * (1.0 - y);
  }
  return 1.0;
}

struct ForwardCache {
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l
  std::vector<Matrix> pre;     // hidden pre-activations
  Matrix logits;
};

ForwardCache forward_cached(const Mlp& mlp, const Matrix& x) {
  if (x.cols() != mlp.dims.front()) {
    throw DimensionError("input has " + std::to_string(x.cols()) + " columns, network expects " +
                         std::to_string(mlp.dims.front()));
  }
  ForwardCache cache;
  cache.inputs.push_back(x);
  const std::size_t hidden = mlp.num_layers() - 1;
  for (std::size_t l = 0; l < hidden; ++l) {
    Matrix pre = matmul_transposed(cache.inputs.back(), mlp.weights[l]);
    const auto bias = mlp.biases[l].row(0);
    for (std::size_t r = 0; r < pre.rows(); ++r) axpy(1.0, bias, pre.row(r));
    Matrix post = pre;
    for (auto& v : post.data()) v = activate(mlp.activation, v);
    cache.pre.push_back(std::move(pre));
    cache.inputs.push_back(std::move(post));
  }
  cache.logits = matmul_transposed(cache.inputs.back(), mlp.weights.back());
  return cache;
}

std::string layer_name(std::size_t l, const char* what) {
  return "layer" + std::to_string(l + 1) + "." + what;
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Relu:
      return "relu";
    case Activation::Tanh:
      return "tanh";
    case Activation::Sigmoid:
      return "sigmoid";
  }
  return "relu";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw InvalidSpec("unknown activation `" + std::string(s) + "` (expected relu|tanh|sigmoid)");
}

std::string_view to_string(ClassifierInit init) {
  return init == ClassifierInit::Gaussian ? "gaussian" : "etf";
}

ClassifierInit parse_classifier_init(std::string_view s) {
  if (s == "gaussian") return ClassifierInit::Gaussian;
  if (s == "etf") return ClassifierInit::Etf;
  throw InvalidSpec("unknown classifier init `" + std::string(s) + "` (expected gaussian|etf)");
}

std::vector<Matrix*> Mlp::parameters() {
  std::vector<Matrix*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    if (l < biases.size()) out.push_back(&biases[l]);
  }
  return out;
}

std::vector<const Matrix*> Mlp::parameters() const {
  std::vector<const Matrix*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    if (l < biases.size()) out.push_back(&biases[l]);
  }
  return out;
}

std::vector<const Matrix*> MlpGradients::flat() const {
  std::vector<const Matrix*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    if (l < biases.size()) out.push_back(&biases[l]);
  }
  return out;
}

Mlp init_mlp(std::span<const std::size_t> dims, Activation activation, ClassifierInit classifier,
             Rng& rng) {
  if (dims.size() < 2) throw InvalidSpec("network needs an input and an output dimension");
  for (auto d : dims) {
    if (d < 1) throw InvalidSpec("layer widths must be >= 1");
  }
  if (dims.back() < 2) throw InvalidSpec("classifier needs at least two classes");
  Mlp mlp;
  mlp.dims.assign(dims.begin(), dims.end());
  mlp.activation = activation;
  const std::size_t layers = dims.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    const bool last = l + 1 == layers;
    if (last && classifier == ClassifierInit::Etf) {
      mlp.weights.push_back(etf_frame(fan_out, fan_in, rng).vectors);
      continue;
    }
    Matrix w = gaussian_matrix(rng, fan_out, fan_in);
    w *= std::sqrt(2.0 / static_cast<double>(fan_in));
    mlp.weights.push_back(std::move(w));
    if (!last) mlp.biases.emplace_back(1, fan_out, 0.0);
  }
  return mlp;
}

ForwardResult forward(const Mlp& mlp, const Matrix& x) {
  ForwardCache cache = forward_cached(mlp, x);
  return {std::move(cache.inputs.back()), std::move(cache.logits)};
}

MlpGradients backward(const Mlp& mlp, const Matrix& x, const Targets& targets, LossKind kind,
                      const ClassCounts& counts) {
  const ForwardCache cache = forward_cached(mlp, x);
  const Matrix& h = cache.inputs.back();
  const std::size_t b = x.rows();
  if (targets.labels_a.size() != b) {
    throw DimensionError("backward: " + std::to_string(b) + " inputs, " +
                         std::to_string(targets.labels_a.size()) + " labels");
  }
  const bool mixed = targets.lambda < 1.0;
  if (mixed && targets.labels_b.size() != b) {
    throw DimensionError("backward: mixed batch needs a second label list of length " +
                         std::to_string(b));
  }

  MlpGradients out;
  BatchEval eval_a = evaluate_batch(kind, cache.logits, targets.labels_a, counts);
  Matrix logit_grads = eval_a.logit_grads;
  const ClassCounts used = kind == LossKind::CrossEntropy
                               ? ClassCounts::from_labels(targets.labels_a, mlp.num_classes())
                               : counts;
  if (mixed) {
    const BatchEval eval_b = evaluate_batch(kind, cache.logits, targets.labels_b, counts);
    const double lam = targets.lambda;
    out.loss = lam * eval_a.mean_loss + (1.0 - lam) * eval_b.mean_loss;
    logit_grads = lam * eval_a.logit_grads + (1.0 - lam) * eval_b.logit_grads;
    out.report = combine_reports(
        lam, decompose_gradient(h, targets.labels_a, eval_a.logit_grads, used), 1.0 - lam,
        decompose_gradient(h, targets.labels_b, eval_b.logit_grads, used));
  } else {
    out.loss = eval_a.mean_loss;
    out.report = decompose_gradient(h, targets.labels_a, eval_a.logit_grads, used);
  }

  const double inv_b = 1.0 / static_cast<double>(b);
  const std::size_t layers = mlp.num_layers();
  out.weights.resize(layers);
  out.biases.resize(layers - 1);
  out.weights.back() = inv_b * out.report.full;

  // Gradient of the mean loss w.r.t. the current layer's output.
  Matrix upstream = inv_b * matmul(logit_grads, mlp.weights.back());
  for (std::size_t l = layers - 1; l-- > 0;) {
    const Matrix& pre = cache.pre[l];
    const Matrix& post = cache.inputs[l + 1];
    Matrix delta(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta.data()[i] =
          upstream.data()[i] * activate_grad(mlp.activation, pre.data()[i], post.data()[i]);
    }
    out.weights[l] = matmul(transpose(delta), cache.inputs[l]);
    Matrix db(1, delta.cols());
    for (std::size_t r = 0; r < delta.rows(); ++r) axpy(1.0, delta.row(r), db.row(0));
    out.biases[l] = std::move(db);
    if (l > 0) upstream = matmul(delta, mlp.weights[l]);
  }
  return out;
}

void sgd_step(SgdState& state, std::span<Matrix* const> params,
              std::span<const Matrix* const> grads) {
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.velocity.empty()) {
    for (const Matrix* p : params) state.velocity.emplace_back(p->rows(), p->cols(), 0.0);
  }
  if (state.velocity.size() != params.size()) {
    throw DimensionError("sgd_step: velocity buffers do not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    Matrix& v = state.velocity[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() || v.rows() != p.rows() ||
        v.cols() != p.cols()) {
      throw DimensionError("sgd_step: shape mismatch for parameter " + std::to_string(i));
    }
    auto pd = p.data();
    auto gd = g.data();
    auto vd = v.data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      vd[k] = state.momentum * vd[k] + gd[k] + state.weight_decay * pd[k];
      pd[k] -= state.lr * vd[k];
    }
  }
}

std::string_view to_string(Schedule::Kind k) {
  switch (k) {
    case Schedule::Kind::Constant:
      return "constant";
    case Schedule::Kind::Step:
      return "step";
    case Schedule::Kind::Cosine:
      return "cosine";
  }
  return "constant";
}

Schedule::Kind parse_schedule_kind(std::string_view s) {
  if (s == "constant") return Schedule::Kind::Constant;
  if (s == "step") return Schedule::Kind::Step;
  if (s == "cosine") return Schedule::Kind::Cosine;
  throw InvalidSpec("unknown schedule `" + std::string(s) + "` (expected constant|step|cosine)");
}

double lr_at(const Schedule& schedule, int epoch) {
  if (epoch < 0 || epoch >= schedule.total_epochs) {
    throw InvalidSpec("epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(schedule.total_epochs) + ")");
  }
  switch (schedule.kind) {
    case Schedule::Kind::Constant:
      return schedule.base_lr;
    case Schedule::Kind::Step: {
      double lr = schedule.base_lr;
      for (int m : schedule.milestones) {
        if (epoch >= m) lr *= schedule.factor;
      }
      return lr;
    }
    case Schedule::Kind::Cosine: {
      const double t = static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs);
      return schedule.lr_end +
             0.5 * (schedule.base_lr - schedule.lr_end) * (1.0 + std::cos(std::numbers::pi * t));
    }
  }
  return schedule.base_lr;
}

const Matrix* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["format"] = "arblab-checkpoint";
  j["version"] = kCheckpointVersion;
  j["meta"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ckpt.meta) j["meta"][k] = v;
  j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : ckpt.tensors) {
    nlohmann::ordered_json jt;
    jt["name"] = t.name;
    jt["rows"] = t.value.rows();
    jt["cols"] = t.value.cols();
    jt["data"] = std::vector<double>(t.value.data().begin(), t.value.data().end());
    j["tensors"].push_back(std::move(jt));
  }
  write_file_atomic(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), e.byte);
  }
  try {
    if (j.value("format", "") != "arblab-checkpoint") {
      throw FormatError("checkpoint: missing arblab-checkpoint format tag", 0);
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw FormatError("checkpoint: unsupported version " + j.at("version").dump(), 0);
    }
    Checkpoint ckpt;
    if (j.contains("meta")) {
      for (const auto& [k, v] : j.at("meta").items()) ckpt.meta.emplace_back(k, v.get<std::string>());
    }
    for (const auto& jt : j.at("tensors")) {
      auto data = jt.at("data").get<std::vector<double>>();
      ckpt.tensors.push_back({jt.at("name").get<std::string>(),
                              Matrix(jt.at("rows").get<std::size_t>(),
                                     jt.at("cols").get<std::size_t>(), std::move(data))});
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), 0);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), 0);
  }
}

Checkpoint to_checkpoint(const Mlp& mlp) {
  Checkpoint ckpt;
  std::string dims;
  for (std::size_t i = 0; i < mlp.dims.size(); ++i) {
    if (i > 0) dims += ",";
    dims += std::to_string(mlp.dims[i]);
  }
  ckpt.meta = {{"kind", "mlp"}, {"dims", dims}, {"activation", std::string(to_string(mlp.activation))}};
  for (std::size_t l = 0; l + 1 < mlp.num_layers(); ++l) {
    ckpt.tensors.push_back({layer_name(l, "weight"), mlp.weights[l]});
    ckpt.tensors.push_back({layer_name(l, "bias"), mlp.biases[l]});
  }
  ckpt.tensors.push_back({"classifier.weight", mlp.classifier()});
  return ckpt;
}

Mlp mlp_from_checkpoint(const Checkpoint& ckpt) {
  Mlp mlp;
  std::string dims;
  std::string activation = "relu";
  for (const auto& [k, v] : ckpt.meta) {
    if (k == "dims") dims = v;
    if (k == "activation") activation = v;
  }
  if (dims.empty()) throw FormatError("checkpoint: no network dims in meta", 0);
  std::size_t start = 0;
  while (start <= dims.size()) {
    const std::size_t comma = std::min(dims.find(',', start), dims.size());
    mlp.dims.push_back(std::stoul(dims.substr(start, comma - start)));
    start = comma + 1;
  }
  mlp.activation = parse_activation(activation);
  for (std::size_t l = 0; l + 2 < mlp.dims.size(); ++l) {
    const Matrix* w = ckpt.find(layer_name(l, "weight"));
    const Matrix* b = ckpt.find(layer_name(l, "bias"));
    if (!w || !b) throw FormatError("checkpoint: missing tensors for " + layer_name(l, "*"), 0);
    mlp.weights.push_back(*w);
    mlp.biases.push_back(*b);
  }
  const Matrix* cls = ckpt.find("classifier.weight");
  if (!cls) throw FormatError("checkpoint: missing classifier.weight", 0);
  mlp.weights.push_back(*cls);
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    if (mlp.weights[l].rows() != mlp.dims[l + 1] || mlp.weights[l].cols() != mlp.dims[l]) {
      throw FormatError("checkpoint: tensor shape disagrees with dims for layer " +
                            std::to_string(l + 1),
                        0);
    }
  }
  return mlp;
}

}  // namespace arblab
