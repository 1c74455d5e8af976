#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "binnlab/checkpoint.hpp"
#include "binnlab/commands.hpp"
#include "binnlab/network.hpp"

using namespace binnlab;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("binnlab_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
  return path.string();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string train_config(const std::string& out_dir, std::size_t epochs,
                         const std::string& extra_training = "") {
  std::ostringstream os;
  os << R"({
  "config_version": 1,
  "seed": 11,
  "out_dir": ")" << out_dir << R"(",
  "dataset": {"kind": "parity", "n_bits": 3, "n_samples": 8},
  "network": {"arch": "mlp", "hidden": [5], "variant": "fpv", "fpv_sigma": 0.6},
  "estimator": {"kind": "st"},
  "training": {"epochs": )" << epochs << R"(, "batch_size": 4, "lambda_kl": 1e-6)"
     << extra_training << R"(}
})";
  return os.str();
}

}  // namespace

TEST_CASE("train command writes one metrics row per epoch plus artifacts") {
  TempDir dir;
  const std::string cfg = write_file(dir.path / "run.json", train_config((dir.path / "out").string(), 5));
  CHECK(run_command("train", cfg, {}) == kExitOk);

  const std::string metrics = read_file(dir.path / "out" / "metrics.jsonl");
  std::size_t rows = 0;
  for (char c : metrics) rows += c == '\n';
  CHECK(rows == 5);
  CHECK(fs::exists(dir.path / "out" / "checkpoint.json"));
  CHECK(fs::exists(dir.path / "out" / "summary.json"));
}

TEST_CASE("train command: nkl variant reports zero kl every epoch") {
  TempDir dir;
  std::string cfg_text = train_config((dir.path / "out").string(), 3);
  // Switch the variant via a --set override instead of editing the document.
  const std::string cfg = write_file(dir.path / "run.json", cfg_text);
  CliOverrides overrides;
  overrides.sets = {{"network.variant", "nkl"}};
  CHECK(run_command("train", cfg, overrides) == kExitOk);
  std::ifstream in(dir.path / "out" / "metrics.jsonl");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    CHECK(line.find("\"kl_value\":0.0") != std::string::npos);
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("train command: reruns are byte-identical, resumes continue exactly") {
  TempDir dir;
  const std::string cfg_a =
      write_file(dir.path / "a.json", train_config((dir.path / "a").string(), 6));
  const std::string cfg_b =
      write_file(dir.path / "b.json", train_config((dir.path / "b").string(), 6));
  CHECK(run_command("train", cfg_a, {}) == kExitOk);
  CHECK(run_command("train", cfg_b, {}) == kExitOk);
  CHECK(read_file(dir.path / "a" / "metrics.jsonl") == read_file(dir.path / "b" / "metrics.jsonl"));
  CHECK(read_file(dir.path / "a" / "checkpoint.json") ==
        read_file(dir.path / "b" / "checkpoint.json"));

  // Stop at epoch 3, resume to 6: the tail metrics and final checkpoint match
  // the uninterrupted run byte for byte. The interrupted leg keeps the full
  // run's cosine horizon.
  const std::string cfg_half = write_file(
      dir.path / "half.json",
      train_config((dir.path / "half").string(), 3, ", \"schedule_epochs\": 6"));
  CHECK(run_command("train", cfg_half, {}) == kExitOk);
  const std::string resume_extra =
      std::string(", \"resume_from\": \"") + (dir.path / "half" / "checkpoint.json").string() +
      "\"";
  const std::string cfg_resume = write_file(
      dir.path / "resume.json", train_config((dir.path / "resume").string(), 6, resume_extra));
  CHECK(run_command("train", cfg_resume, {}) == kExitOk);

  std::istringstream full(read_file(dir.path / "a" / "metrics.jsonl"));
  std::string line, tail_expected, tail_actual;
  std::size_t row = 0;
  while (std::getline(full, line)) {
    if (row++ >= 3) tail_expected += line + "\n";
  }
  tail_actual = read_file(dir.path / "resume" / "metrics.jsonl");
  CHECK(tail_actual == tail_expected);
  CHECK(read_file(dir.path / "resume" / "checkpoint.json") ==
        read_file(dir.path / "a" / "checkpoint.json"));
}

TEST_CASE("config validation: unknown keys, bad version, missing file") {
  TempDir dir;
  const std::string bad_key = write_file(dir.path / "bad.json", R"({
    "config_version": 1,
    "dataset": {"kind": "parity", "n_bits": 3, "n_samples": 8, "typo_field": 1},
    "network": {"arch": "mlp", "hidden": [4]},
    "estimator": {"kind": "st"},
    "training": {"epochs": 1}
  })");
  CHECK(run_command("train", bad_key, {}) == kExitConfigError);

  const std::string bad_version = write_file(dir.path / "v.json", R"({"config_version": 2})");
  CHECK(run_command("train", bad_version, {}) == kExitConfigError);
  CHECK(run_command("train", (dir.path / "absent.json").string(), {}) == kExitConfigError);
  CHECK(run_command("nonsense", bad_version, {}) == kExitConfigError);

  const std::string bad_estimator = write_file(dir.path / "e.json", R"({
    "config_version": 1,
    "dataset": {"kind": "parity", "n_bits": 3, "n_samples": 8},
    "network": {"arch": "mlp", "hidden": [4]},
    "estimator": {"kind": "iwst"},
    "training": {"epochs": 1}
  })");
  CHECK(run_command("train", bad_estimator, {}) == kExitConfigError);
}

TEST_CASE("seed override changes the run, set overrides reach nested keys") {
  TempDir dir;
  const std::string cfg =
      write_file(dir.path / "run.json", train_config((dir.path / "x").string(), 2));
  CliOverrides o1;
  o1.out_dir = (dir.path / "s1").string();
  o1.seed = 101;
  CHECK(run_command("train", cfg, o1) == kExitOk);
  CliOverrides o2;
  o2.out_dir = (dir.path / "s2").string();
  o2.seed = 202;
  CHECK(run_command("train", cfg, o2) == kExitOk);
  CHECK(read_file(dir.path / "s1" / "metrics.jsonl") != read_file(dir.path / "s2" / "metrics.jsonl"));

  CliOverrides o3;
  o3.out_dir = (dir.path / "s3").string();
  o3.sets = {{"training.epochs", "4"}};
  CHECK(run_command("train", cfg, o3) == kExitOk);
  std::size_t rows = 0;
  for (char c : read_file(dir.path / "s3" / "metrics.jsonl")) rows += c == '\n';
  CHECK(rows == 4);
}

TEST_CASE("estimator bench: stable csv, st equals st-match, reinforce noisier") {
  TempDir dir;
  const std::string cfg = write_file(dir.path / "bench.json", R"({
    "config_version": 1,
    "seed": 7,
    "out_dir": ")" + (dir.path / "out").string() + R"(",
    "dataset": {"kind": "parity", "n_bits": 4, "n_samples": 4},
    "network": {"arch": "mlp", "hidden": [5], "variant": "full", "granularity": "per_weight"},
    "estimator": {"kind": "st"},
    "bench": {"trials": 6000, "estimators": [
      {"kind": "st"},
      {"kind": "iwst", "p_policy": "st_match"},
      {"kind": "reinforce"}
    ]}
  })");
  CHECK(run_command("estimator-bench", cfg, {}) == kExitOk);
  const std::string csv = read_file(dir.path / "out" / "bench.csv");
  CHECK(csv.find("estimator,param_group,bias,variance,se,trials") == 0);

  // st and iwst(st_match) rows carry identical numbers.
  std::istringstream in(csv);
  std::string line;
  std::map<std::string, std::string> st_rows, match_rows;
  std::map<std::string, double> st_var, rf_var;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    const std::string est = line.substr(0, first);
    const std::string group = line.substr(first + 1, second - first - 1);
    const std::string rest = line.substr(second + 1);
    if (est == "st") st_rows[group] = rest;
    if (est == "iwst(st_match)") match_rows[group] = rest;
    std::istringstream vals(rest);
    std::string bias, var;
    std::getline(vals, bias, ',');
    std::getline(vals, var, ',');
    if (est == "st") st_var[group] = std::stod(var);
    if (est == "reinforce") rf_var[group] = std::stod(var);
  }
  CHECK(!st_rows.empty());
  CHECK(st_rows == match_rows);
  // Median-free shortcut: the first-layer means group shows the variance gap.
  CHECK(rf_var.at("layer0.means") > st_var.at("layer0.means"));

  // Rerun: identical bytes.
  CliOverrides redo;
  redo.out_dir = (dir.path / "out2").string();
  CHECK(run_command("estimator-bench", cfg, redo) == kExitOk);
  CHECK(read_file(dir.path / "out" / "bench.csv") == read_file(dir.path / "out2" / "bench.csv"));

  // Budget diagnostics: an oversized bench network exits with a runtime error.
  CliOverrides big;
  big.out_dir = (dir.path / "out3").string();
  big.sets = {{"network.hidden", "[12, 12]"}};
  CHECK(run_command("estimator-bench", cfg, big) == kExitRuntimeError);
}

TEST_CASE("gen-data writes csv for parity and jsonl for temporal patterns") {
  TempDir dir;
  const std::string cfg = write_file(dir.path / "gen.json", R"({
    "config_version": 1,
    "seed": 3,
    "out_dir": ")" + (dir.path / "d1").string() + R"(",
    "dataset": {"kind": "parity", "n_bits": 3, "n_samples": 10}
  })");
  CHECK(run_command("gen-data", cfg, {}) == kExitOk);
  CHECK(fs::exists(dir.path / "d1" / "dataset.csv"));

  const std::string cfg2 = write_file(dir.path / "gen2.json", R"({
    "config_version": 1,
    "seed": 3,
    "out_dir": ")" + (dir.path / "d2").string() + R"(",
    "dataset": {"kind": "temporal", "n_classes": 2, "timesteps": 5, "channels": 3,
                "noise_rate": 0.1, "samples_per_class": 4}
  })");
  CHECK(run_command("gen-data", cfg2, {}) == kExitOk);
  CHECK(fs::exists(dir.path / "d2" / "dataset.jsonl"));
}

TEST_CASE("checkpoint round trip restores parameters bit for bit") {
  NetworkSpec spec = make_lif_spec(3, {4}, 2, 4, 0.7, 1.0, true, 0.2,
                                   ScaleGranularity::PerNeuron, Variant::Full, 0.01);
  NetworkParams params = init_network_params(spec, RngKey(55));
  OptimizerState opt = OptimizerState::init(params.layout, 0.004, 0.04);
  opt.step_count = 17;
  opt.first_moment[3] = -0.125;
  opt.second_moment[5] = 1e-9;

  TempDir dir;
  const std::string path = (dir.path / "ck.json").string();
  save_checkpoint({99, 12, spec, params, opt}, path);
  const TrainingCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.seed == 99);
  CHECK(loaded.next_epoch == 12);
  CHECK(loaded.params.values == params.values);
  CHECK(loaded.opt.first_moment == opt.first_moment);
  CHECK(loaded.opt.second_moment == opt.second_moment);
  CHECK(loaded.opt.step_count == 17);
  CHECK(loaded.spec.layers.size() == spec.layers.size());
  CHECK(loaded.spec.layers[0].recurrent);
}

TEST_CASE("grad probe emits a stable csv schema") {
  TempDir dir;
  const std::string cfg = write_file(dir.path / "probe.json", R"({
    "config_version": 1,
    "seed": 5,
    "out_dir": ")" + (dir.path / "out").string() + R"(",
    "dataset": {"kind": "parity", "n_bits": 3, "n_samples": 8},
    "network": {"arch": "residual_mlp", "hidden_width": 5, "blocks": 3, "variant": "fpv",
                "fpv_sigma": 0.5},
    "estimator": {"kind": "st"},
    "training": {"epochs": 4, "batch_size": 4},
    "probe": {"lambdas": [0.0, 1e-6], "epochs": 4}
  })");
  CHECK(run_command("grad-probe", cfg, {}) == kExitOk);
  std::ifstream in(dir.path / "out" / "grad_probe.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "lambda,epoch,train_loss,eval_accuracy,kl_value,attenuation_factor,shallow_deep_ratio,"
        "norm_layer0,norm_layer1,norm_layer2,norm_layer3");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2 * 4);
}
