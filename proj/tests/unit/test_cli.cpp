#include <cmath>
#include <sstream>
#include <string>

#include "arblab/config.hpp"
#include "arblab/io.hpp"
#include "arblab/runner.hpp"
#include "doctest.h"
#include "json.hpp"
#include "tmpdir.hpp"

using namespace arblab;

namespace {

const char* kSmallRun = R"(# tiny long-tailed run
seed = 4

[data]
num_classes = 3
dim = 4
base_count = 30
imbalance_factor = 3
test_per_class = 10
mean_scale = 3

[model]
hidden = 8

[loss]
kind = arb

[optim]
lr = 0.05
epochs = 5
batch_size = 16
schedule = cosine
)";

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string cell; std::getline(in, cell, ',');) out.push_back(cell);
  return out;
}

int run_cli(const std::string& cmd, const std::filesystem::path& cfg, const std::filesystem::path& out,
            std::string* err_text = nullptr) {
  std::ostringstream out_s, err_s;
  RunOverrides ov;
  ov.out = out.string();
  ov.quiet = true;
  const int rc = dispatch(cmd, cfg, ov, out_s, err_s);
  if (err_text != nullptr) *err_text = err_s.str();
  return rc;
}

}  // namespace

TEST_CASE("INI parsing fills every section") {
  const auto cfg = parse_config(kSmallRun);
  CHECK(cfg.seed == 4);
  CHECK(cfg.data.num_classes == 3);
  CHECK(cfg.data.imbalance_factor == 3.0);
  CHECK(cfg.model.hidden == std::vector<std::size_t>{8});
  CHECK(cfg.loss.kind == LossKind::Arb);
  CHECK(cfg.optim.schedule == Schedule::Kind::Cosine);
  CHECK(cfg.optim.epochs == 5);
  CHECK(cfg.mode == RunMode::Standard);
}

TEST_CASE("JSON input uses the same layout") {
  const auto cfg = parse_config(R"({"seed": 9, "mode": "peeled",
    "data": {"num_classes": 4, "counts": [20, 20, 5, 5]},
    "peeled": {"feature_step": "sample", "log_every": 10},
    "optim": {"lr": 0.5, "epochs": 30}})");
  CHECK(cfg.seed == 9);
  CHECK(cfg.mode == RunMode::Peeled);
  CHECK(cfg.data.counts == std::vector<std::size_t>{20, 20, 5, 5});
  CHECK(cfg.peeled.feature_step == FeatureStep::Sample);
  CHECK(cfg.peeled.log_every == 10);
}

TEST_CASE("config errors name the offending field") {
  auto field_of = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  CHECK(field_of("[optim]\nlr = -0.1\n") == "optim.lr");
  CHECK(field_of("[optim]\nlearning_rate = 0.1\n") == "optim.learning_rate");
  CHECK(field_of("[loss]\nkind = focal\n") == "loss.kind");
  CHECK(field_of("[data]\nnum_classes = three\n") == "data.num_classes");
  CHECK(field_of("[optim]\nlr = 0.1\nlr = 0.2\n") == "optim.lr");
  CHECK(field_of(R"({"optim": {"momentum": "fast"}})") == "optim.momentum");
  CHECK(field_of("[data]\ncounts = 5, 5\n") == "data.counts");

  try {
    parse_config("[optim]\nlr = -0.1\n");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("-0.1") != std::string::npos);
  }
}

TEST_CASE("the INI echo round-trips") {
  auto cfg = parse_config(kSmallRun);
  cfg.optim.lr = 0.1 + 0.2;  // not exactly representable in short form
  cfg.propositions.scenario.ratios = {1.0, 2.5};
  cfg.tracking.tracked_class = 1;
  const auto back = parse_config(to_ini(cfg));
  CHECK(back == cfg);
  CHECK(to_ini(back) == to_ini(cfg));
  // Defaults resolve and survive the echo too.
  const auto dflt = parse_config("");
  CHECK(parse_config(to_ini(dflt)) == dflt);
  CHECK(dflt.optim.milestones == std::vector<int>{160, 180});
}

TEST_CASE("run writes the four artifacts") {
  TempDir tmp("cli_run");
  const auto cfg_path = tmp.write("run.ini", kSmallRun);
  const auto out = tmp / "nested" / "out";
  REQUIRE(run_cli("run", cfg_path, out) == 0);
  for (const char* leaf : {"config.ini", "epochs.csv", "final_metrics.json", "checkpoint.json"}) {
    CHECK(std::filesystem::exists(out / leaf));
  }
  const auto lines = split_lines(read_file(out / "epochs.csv"));
  REQUIRE(lines.size() == 6);
  const auto header = split_cells(lines[0]);
  CHECK(header[0] == "epoch");
  CHECK(header[4] == "balanced_acc");
  CHECK(header.size() == 5 + 3 + 4 + 3);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split_cells(lines[r]);
    REQUIRE(cells.size() == header.size());
    CHECK(cells[0] == std::to_string(r - 1));
    for (const auto& cell : cells) {
      if (cell == "nan") continue;
      std::size_t used = 0;
      const double v = std::stod(cell, &used);
      CHECK(used == cell.size());
      CHECK(std::isfinite(v));
    }
  }
  const auto fm = nlohmann::json::parse(read_file(out / "final_metrics.json"));
  CHECK(fm["epochs_csv_version"] == kEpochsCsvVersion);
  CHECK(fm["loss"] == "arb");
  CHECK(fm.contains("balanced_acc"));

  // The echoed config reproduces the run's configuration.
  auto echoed = load_config(out / "config.ini");
  auto original = parse_config(kSmallRun);
  original.output.directory = out.string();
  CHECK(echoed == original);

  std::ostringstream o, e;
  CHECK(dispatch("metrics", out / "checkpoint.json", {}, o, e) == 0);
  CHECK(nlohmann::json::parse(o.str()).contains("B_A2"));
}

TEST_CASE("reruns are byte-identical") {
  TempDir tmp("cli_det");
  const auto cfg_path = tmp.write("run.ini", kSmallRun);
  REQUIRE(run_cli("run", cfg_path, tmp / "a") == 0);
  REQUIRE(run_cli("run", cfg_path, tmp / "b") == 0);
  CHECK(read_file(tmp / "a" / "epochs.csv") == read_file(tmp / "b" / "epochs.csv"));
  CHECK(read_file(tmp / "a" / "final_metrics.json") == read_file(tmp / "b" / "final_metrics.json"));
  CHECK(read_file(tmp / "a" / "checkpoint.json") == read_file(tmp / "b" / "checkpoint.json"));
}

TEST_CASE("compare writes both arms and the paired report") {
  TempDir tmp("cli_cmp");
  const auto cfg_path = tmp.write("run.ini", kSmallRun);
  REQUIRE(run_cli("compare", cfg_path, tmp / "cmp") == 0);
  CHECK(std::filesystem::exists(tmp / "cmp" / "ce" / "epochs.csv"));
  CHECK(std::filesystem::exists(tmp / "cmp" / "arb" / "epochs.csv"));
  const auto j = nlohmann::json::parse(read_file(tmp / "cmp" / "compare.json"));
  const double delta = j["delta_arb_minus_ce"]["balanced_acc"];
  const double arb = j["arb"]["balanced_acc"];
  const double ce = j["ce"]["balanced_acc"];
  CHECK(delta == doctest::Approx(arb - ce).epsilon(1e-6));
}

TEST_CASE("peeled runs append the minority column") {
  TempDir tmp("cli_peeled");
  const auto cfg_path = tmp.write("p.ini",
                                  "mode = peeled\n[data]\nnum_classes = 4\ndim = 4\n"
                                  "counts = 20, 20, 2, 2\n[optim]\nlr = 0.5\nepochs = 20\n"
                                  "[peeled]\nlog_every = 5\n");
  REQUIRE(run_cli("run", cfg_path, tmp / "o") == 0);
  const auto lines = split_lines(read_file(tmp / "o" / "epochs.csv"));
  CHECK(split_cells(lines[0]).back() == "minority_collapse");
  CHECK(lines.size() == 1 + 5);
}

TEST_CASE("exit codes") {
  TempDir tmp("cli_exit");
  std::string err;
  const auto bad = tmp.write("bad.ini", "[optim]\nlr = -1\n");
  CHECK(run_cli("run", bad, tmp / "o", &err) == 2);
  CHECK(err.find("optim.lr") != std::string::npos);

  std::string diverge = kSmallRun;
  diverge.replace(diverge.find("lr = 0.05"), 9, "lr = 1e6");
  diverge.replace(diverge.find("epochs = 5"), 10, "epochs = 100");
  const auto dv = tmp.write("dv.ini", diverge);
  CHECK(run_cli("run", dv, tmp / "o2", &err) == 3);

  CHECK(run_cli("run", tmp / "missing.ini", tmp / "o3") == 1);
  CHECK(run_cli("frobnicate", bad, tmp / "o4") != 0);
}

TEST_CASE("check-propositions writes a report") {
  TempDir tmp("cli_props");
  const auto cfg = tmp.write("p.ini", "[propositions]\nseeds = 4\nratios = 1, 10\n");
  REQUIRE(run_cli("check-propositions", cfg, tmp / "o") == 0);
  const auto j = nlohmann::json::parse(read_file(tmp / "o" / "propositions.json"));
  CHECK(j.dump().find("ce_slope") != std::string::npos);
}

TEST_CASE("shipped example configs parse") {
  const std::filesystem::path dir = std::filesystem::path(ARBLAB_SOURCE_DIR) / "configs";
  int seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_config(entry.path()));
    ++seen;
  }
  CHECK(seen >= 4);
}
