#include "arblab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "arblab/errors.hpp"
#include "arblab/io.hpp"
#include "json.hpp"

namespace arblab {

std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::Synth:
      return "synth";
    case DataSource::Idx:
      return "idx";
    case DataSource::Csv:
      return "csv";
  }
  return "synth";
}

std::string_view to_string(RunMode m) { return m == RunMode::Standard ? "standard" : "peeled"; }

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_integer(const std::string& key, std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw ConfigError(key, "expected an integer, got `" + std::string(s) + "`");
  }
  return v;
}

double parse_double(const std::string& key, std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty() || !std::isfinite(v)) {
    throw ConfigError(key, "expected a finite number, got `" + std::string(s) + "`");
  }
  return v;
}

bool parse_bool(const std::string& key, std::string_view s) {
  if (s == "true" || s == "on" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "off" || s == "no" || s == "0") return false;
  throw ConfigError(key, "expected true|false, got `" + std::string(s) + "`");
}

template <typename T>
std::vector<T> parse_int_list(const std::string& key, std::string_view s) {
  std::vector<T> out;
  for (auto item : split_list(s)) out.push_back(parse_integer<T>(key, item));
  return out;
}

std::vector<double> parse_double_list(const std::string& key, std::string_view s) {
  std::vector<double> out;
  for (auto item : split_list(s)) out.push_back(parse_double(key, item));
  return out;
}

/// Enum parsers throw InvalidSpec; rewrap with the key.
template <typename F>
auto parse_enum(const std::string& key, std::string_view s, F parse) {
  try {
    return parse(s);
  } catch (const InvalidSpec& e) {
    throw ConfigError(key, e.what());
  }
}

std::string real(double v) { return format_real(v, 17); }

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += real(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

Schedule::Kind parse_kind(std::string_view s) { return parse_schedule_kind(s); }

struct Field {
  std::string key;  // "section.name" or "seed"
  std::function<void(ExperimentConfig&, const std::string&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define ARB_FIELD(KEY, MEMBER, PARSE, FORMAT)                                            \
  Field {                                                                                \
    KEY, [](ExperimentConfig& c, const std::string& k, std::string_view v) {             \
      c.MEMBER = PARSE;                                                                  \
      (void)k;                                                                           \
    },                                                                                   \
        [](const ExperimentConfig& c) { return std::string(FORMAT(c.MEMBER)); }          \
  }

std::string str_u64(std::uint64_t v) { return std::to_string(v); }
std::string str_size(std::size_t v) { return std::to_string(v); }
std::string str_int(int v) { return std::to_string(v); }
std::string str_bool(bool v) { return v ? "true" : "false"; }
std::string str_string(const std::string& v) { return v; }
std::string str_tracked(int v) { return v < 0 ? "rarest" : std::to_string(v); }
template <typename E>
std::string str_enum(E e) {
  return std::string(to_string(e));
}

int parse_tracked(const std::string& key, std::string_view v) {
  if (v == "rarest") return -1;
  const int id = parse_integer<int>(key, v);
  if (id < 0) throw ConfigError(key, "expected `rarest` or a class id >= 0");
  return id;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      ARB_FIELD("seed", seed, parse_integer<std::uint64_t>(k, v), str_u64),

      ARB_FIELD("mode", mode,
                parse_enum(k, v,
                           [](std::string_view s) {
                             if (s == "standard") return RunMode::Standard;
                             if (s == "peeled") return RunMode::Peeled;
                             throw InvalidSpec("expected standard|peeled, got `" +
                                               std::string(s) + "`");
                           }),
                str_enum),

      ARB_FIELD("data.source", data.source,
                parse_enum(k, v,
                           [](std::string_view s) {
                             if (s == "synth") return DataSource::Synth;
                             if (s == "idx") return DataSource::Idx;
                             if (s == "csv") return DataSource::Csv;
                             throw InvalidSpec("expected synth|idx|csv, got `" + std::string(s) +
                                               "`");
                           }),
                str_enum),
      ARB_FIELD("data.num_classes", data.num_classes, parse_integer<std::size_t>(k, v), str_size),
      ARB_FIELD("data.dim", data.dim, parse_integer<std::size_t>(k, v), str_size),
      ARB_FIELD("data.counts", data.counts, parse_int_list<std::size_t>(k, v), join),
      ARB_FIELD("data.imbalance_factor", data.imbalance_factor, parse_double(k, v), real),
      ARB_FIELD("data.base_count", data.base_count, parse_integer<std::size_t>(k, v), str_size),
      ARB_FIELD("data.test_per_class", data.test_per_class, parse_integer<std::size_t>(k, v),
                str_size),
      ARB_FIELD("data.mean_scale", data.mean_scale, parse_double(k, v), real),
      ARB_FIELD("data.mixup", data.mixup, parse_bool(k, v), str_bool),
      ARB_FIELD("data.mixup_alpha", data.mixup_alpha, parse_double(k, v), real),
      ARB_FIELD("data.train_path", data.train_path, std::string(v), str_string),
      ARB_FIELD("data.train_labels_path", data.train_labels_path, std::string(v), str_string),
      ARB_FIELD("data.test_path", data.test_path, std::string(v), str_string),
      ARB_FIELD("data.test_labels_path", data.test_labels_path, std::string(v), str_string),

      ARB_FIELD("model.hidden", model.hidden, parse_int_list<std::size_t>(k, v), join),
      ARB_FIELD("model.activation", model.activation, parse_enum(k, v, parse_activation),
                str_enum),
      ARB_FIELD("model.init", model.init, std::string(v), str_string),
      ARB_FIELD("model.classifier_init", model.classifier_init,
                parse_enum(k, v, parse_classifier_init), str_enum),

      ARB_FIELD("loss.kind", loss.kind, parse_enum(k, v, parse_loss_kind), str_enum),
      ARB_FIELD("loss.counts_mode", loss.counts_mode, parse_enum(k, v, parse_counts_mode),
                str_enum),

      ARB_FIELD("optim.lr", optim.lr, parse_double(k, v), real),
      ARB_FIELD("optim.momentum", optim.momentum, parse_double(k, v), real),
      ARB_FIELD("optim.weight_decay", optim.weight_decay, parse_double(k, v), real),
      ARB_FIELD("optim.schedule", optim.schedule, parse_enum(k, v, parse_kind), str_enum),
      ARB_FIELD("optim.milestones", optim.milestones, parse_int_list<int>(k, v), join),
      ARB_FIELD("optim.factor", optim.factor, parse_double(k, v), real),
      ARB_FIELD("optim.lr_end", optim.lr_end, parse_double(k, v), real),
      ARB_FIELD("optim.epochs", optim.epochs, parse_integer<int>(k, v), str_int),
      ARB_FIELD("optim.batch_size", optim.batch_size, parse_integer<std::size_t>(k, v), str_size),

      ARB_FIELD("tracking.tracked_class", tracking.tracked_class, parse_tracked(k, v),
                str_tracked),
      ARB_FIELD("tracking.smooth_window", tracking.smooth_window,
                parse_integer<std::size_t>(k, v), str_size),

      ARB_FIELD("peeled.init_scale", peeled.init_scale, parse_double(k, v), real),
      ARB_FIELD("peeled.feature_norm_bound", peeled.feature_norm_bound, parse_double(k, v), real),
      ARB_FIELD("peeled.feature_step", peeled.feature_step, parse_enum(k, v, parse_feature_step),
                str_enum),
      ARB_FIELD("peeled.log_every", peeled.log_every, parse_integer<int>(k, v), str_int),
      ARB_FIELD("peeled.minority", peeled.minority, parse_int_list<int>(k, v), join),

      ARB_FIELD("propositions.enabled", propositions.enabled, parse_bool(k, v), str_bool),
      ARB_FIELD("propositions.num_classes", propositions.scenario.num_classes,
                parse_integer<std::size_t>(k, v), str_size),
      ARB_FIELD("propositions.dim", propositions.scenario.dim, parse_integer<std::size_t>(k, v),
                str_size),
      ARB_FIELD("propositions.base_count", propositions.scenario.base_count,
                parse_integer<std::size_t>(k, v), str_size),
      ARB_FIELD("propositions.weight_scale", propositions.scenario.weight_scale,
                parse_double(k, v), real),
      ARB_FIELD("propositions.feature_scale", propositions.scenario.feature_scale,
                parse_double(k, v), real),
      ARB_FIELD("propositions.noise", propositions.scenario.noise, parse_double(k, v), real),
      ARB_FIELD("propositions.ratios", propositions.scenario.ratios, parse_double_list(k, v), join),
      ARB_FIELD("propositions.paired_ratio", propositions.scenario.paired_ratio,
                parse_double(k, v), real),
      ARB_FIELD("propositions.seeds", propositions.scenario.seeds,
                parse_integer<std::size_t>(k, v), str_size),
      ARB_FIELD("propositions.seed", propositions.scenario.seed,
                parse_integer<std::uint64_t>(k, v), str_u64),

      ARB_FIELD("output.directory", output.directory, std::string(v), str_string),
  };
  return table;
}

#undef ARB_FIELD

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

using Entries = std::vector<std::pair<std::string, std::string>>;

Entries read_ini(std::string_view text) {
  Entries out;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no), "unterminated section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no), "expected `key = value`");
    }
    const auto name = trim(line.substr(0, eq));
    std::string key = section.empty() ? std::string(name) : section + "." + std::string(name);
    out.emplace_back(std::move(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

std::string scalar_text(const std::string& key, const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) return real(v.get<double>());
  throw ConfigError(key, "expected a scalar value");
}

Entries read_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("json", e.what());
  }
  if (!doc.is_object()) throw ConfigError("json", "top level must be an object");
  Entries out;
  auto add = [&](const std::string& key, const nlohmann::json& v) {
    if (v.is_array()) {
      std::string joined;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) joined += ",";
        joined += scalar_text(key, v[i]);
      }
      out.emplace_back(key, joined);
    } else {
      out.emplace_back(key, scalar_text(key, v));
    }
  };
  for (const auto& [name, value] : doc.items()) {
    if (value.is_object()) {
      for (const auto& [inner, v] : value.items()) add(name + "." + inner, v);
    } else {
      add(name, value);
    }
  }
  return out;
}

void require(bool ok, const char* key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

void validate(ExperimentConfig& c) {
  auto& d = c.data;
  require(d.num_classes >= 2, "data.num_classes", "must be >= 2");
  require(d.dim >= 1, "data.dim", "must be >= 1");
  if (!d.counts.empty()) {
    require(d.counts.size() == d.num_classes, "data.counts",
            "needs one entry per class (" + std::to_string(d.num_classes) + ")");
    for (auto n : d.counts) require(n >= 1, "data.counts", "every count must be >= 1");
  }
  require(d.imbalance_factor >= 1.0, "data.imbalance_factor", "must be >= 1");
  require(d.base_count >= 1, "data.base_count", "must be >= 1");
  require(d.test_per_class >= 1, "data.test_per_class", "must be >= 1");
  require(d.mean_scale >= 0.0, "data.mean_scale", "must be >= 0");
  require(d.mixup_alpha > 0.0, "data.mixup_alpha", "must be > 0");
  if (d.source != DataSource::Synth) {
    require(!d.train_path.empty(), "data.train_path", "required for file sources");
    require(!d.test_path.empty(), "data.test_path", "required for file sources");
  }
  if (d.source == DataSource::Idx) {
    require(!d.train_labels_path.empty(), "data.train_labels_path", "required for idx");
    require(!d.test_labels_path.empty(), "data.test_labels_path", "required for idx");
  }

  for (auto w : c.model.hidden) require(w >= 1, "model.hidden", "widths must be >= 1");
  require(c.model.init == "he", "model.init", "expected `he`, got `" + c.model.init + "`");
  if (c.model.classifier_init == ClassifierInit::Etf && c.mode == RunMode::Standard) {
    const std::size_t feat = c.model.hidden.empty() ? d.dim : c.model.hidden.back();
    require(feat >= d.num_classes, "model.classifier_init",
            "etf needs a feature dimension >= num_classes");
  }

  auto& o = c.optim;
  require(o.lr > 0.0, "optim.lr", "must be > 0, got " + format_real(o.lr));
  require(o.momentum >= 0.0 && o.momentum < 1.0, "optim.momentum", "must be in [0, 1)");
  require(o.weight_decay >= 0.0, "optim.weight_decay", "must be >= 0");
  require(o.factor > 0.0 && o.factor <= 1.0, "optim.factor", "must be in (0, 1]");
  require(o.lr_end >= 0.0 && o.lr_end < o.lr, "optim.lr_end", "must be in [0, optim.lr)");
  require(o.epochs >= 0, "optim.epochs", "must be >= 0");
  require(o.batch_size >= 1, "optim.batch_size", "must be >= 1");
  if (o.schedule == Schedule::Kind::Step && o.milestones.empty()) {
    for (double frac : {0.8, 0.9}) {
      const int m = static_cast<int>(std::lround(frac * o.epochs));
      if (m > 0 && (o.milestones.empty() || m > o.milestones.back())) o.milestones.push_back(m);
    }
  }
  for (std::size_t i = 0; i < o.milestones.size(); ++i) {
    require(o.milestones[i] > 0, "optim.milestones", "must be > 0");
    require(i == 0 || o.milestones[i] > o.milestones[i - 1], "optim.milestones",
            "must be strictly increasing");
  }

  require(c.tracking.tracked_class < static_cast<int>(d.num_classes), "tracking.tracked_class",
          "class id out of range");
  require(c.tracking.smooth_window % 2 == 1, "tracking.smooth_window", "must be odd");

  auto& p = c.peeled;
  require(p.init_scale > 0.0, "peeled.init_scale", "must be > 0");
  require(p.feature_norm_bound >= 0.0, "peeled.feature_norm_bound", "must be >= 0");
  require(p.log_every >= 1, "peeled.log_every", "must be >= 1");
  std::set<int> seen;
  for (int m : p.minority) {
    require(m >= 0 && m < static_cast<int>(d.num_classes), "peeled.minority",
            "class id out of range");
    require(seen.insert(m).second, "peeled.minority", "duplicate class id");
  }
  require(p.minority.empty() || p.minority.size() >= 2, "peeled.minority",
          "needs at least two classes");

  const auto& s = c.propositions.scenario;
  require(s.num_classes >= 3, "propositions.num_classes", "must be >= 3");
  require(s.dim >= s.num_classes, "propositions.dim", "must be >= propositions.num_classes");
  require(s.base_count >= 1, "propositions.base_count", "must be >= 1");
  require(s.weight_scale > 0.0, "propositions.weight_scale", "must be > 0");
  require(s.feature_scale >= 0.0, "propositions.feature_scale", "must be >= 0");
  require(s.noise >= 0.0, "propositions.noise", "must be >= 0");
  require(s.ratios.size() >= 2, "propositions.ratios", "needs at least two ratios");
  for (double r : s.ratios) require(r > 0.0, "propositions.ratios", "ratios must be > 0");
  require(s.paired_ratio > 0.0, "propositions.paired_ratio", "must be > 0");
  require(s.seeds >= 1, "propositions.seeds", "must be >= 1");

  require(!c.output.directory.empty(), "output.directory", "must not be empty");
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  const auto first = trim(text).substr(0, 1);
  const Entries entries = first == "{" ? read_json(text) : read_ini(text);
  ExperimentConfig cfg;
  std::set<std::string> seen;
  for (const auto& [key, value] : entries) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError(key, "unknown key");
    if (!seen.insert(key).second) throw ConfigError(key, "duplicate key");
    f->set(cfg, key, value);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  // An unreadable file is an I/O failure, not an invalid config.
  return parse_config(read_file(path));
}

std::string to_ini(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += name + " = " + f.get(config) + "\n";
  }
  return out;
}

TrainOptions train_options(const ExperimentConfig& c) {
  TrainOptions t;
  t.loss = c.loss.kind;
  t.counts_mode = c.loss.counts_mode;
  t.hidden = c.model.hidden;
  t.activation = c.model.activation;
  t.classifier_init = c.model.classifier_init;
  t.momentum = c.optim.momentum;
  t.weight_decay = c.optim.weight_decay;
  t.schedule.kind = c.optim.schedule;
  t.schedule.base_lr = c.optim.lr;
  t.schedule.milestones = c.optim.milestones;
  t.schedule.factor = c.optim.factor;
  t.schedule.lr_end = c.optim.lr_end;
  t.schedule.total_epochs = c.optim.epochs;
  t.batch_size = c.optim.batch_size;
  t.mixup = c.data.mixup;
  t.mixup_alpha = c.data.mixup_alpha;
  t.tracked_class = c.tracking.tracked_class;
  t.seed = c.seed;
  return t;
}

}  // namespace arblab
