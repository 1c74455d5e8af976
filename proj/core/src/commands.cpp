#include "binnlab/commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "binnlab/checkpoint.hpp"
#include "binnlab/datasets.hpp"
#include "binnlab/oracles.hpp"
#include "binnlab/theorem_checks.hpp"
#include "binnlab/training.hpp"
#include "json_io.hpp"

namespace binnlab {

namespace {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Schema: every known key, per object path. Unknown keys are rejected so a
// typo never silently falls back to a default.

const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"", {"config_version", "seed", "out_dir", "dataset", "network", "estimator", "training",
            "bench", "checks", "probe"}},
      {"dataset",
       {"kind", "n_bits", "n_samples", "train_fraction", "n_classes", "timesteps", "channels",
        "noise_rate", "samples_per_class", "path"}},
      {"network",
       {"arch", "hidden", "hidden_width", "blocks", "theta", "beta", "recurrent", "readout_beta",
        "granularity", "variant", "fpv_sigma", "base_noise_var", "kappa_feedback_grad"}},
      {"estimator", {"kind", "p_policy", "temperature", "damping"}},
      {"training",
       {"epochs", "batch_size", "lambda_kl", "kl_mode", "lr_weights", "lr_scales",
        "cosine_floor_divisor", "shuffle", "schedule_epochs", "resume_from"}},
      {"bench", {"trials", "estimators"}},
      {"checks",
       {"rao_cases", "rao_trials", "cheby_networks", "cheby_trials", "cheby_epsilons",
        "prop34_trials", "equivalence_runs"}},
      {"probe", {"lambdas", "epochs", "collapse_ratio"}},
  };
  return schema;
}

void check_keys(const json& node, const std::string& path) {
  const auto& schema = config_schema();
  auto it = schema.find(path);
  if (it == schema.end()) return;  // leaves validated by typed getters
  if (!node.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (const auto& [key, value] : node.items()) {
    if (!it->second.count(key)) {
      throw ConfigError("config: unknown key '" + (path.empty() ? key : path + "." + key) + "'");
    }
    if (value.is_object()) check_keys(value, path.empty() ? key : path + "." + key);
  }
}

// Typed getters -------------------------------------------------------------

template <typename T>
T get_or(const json& node, const std::string& key, T fallback) {
  if (!node.contains(key)) return fallback;
  try {
    return node.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config: bad value for '" + key + "'");
  }
}

template <typename T>
T require(const json& node, const std::string& key, const std::string& where) {
  if (!node.contains(key)) throw ConfigError("config: missing '" + where + "." + key + "'");
  try {
    return node.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config: bad value for '" + where + "." + key + "'");
  }
}

const json& section(const json& root, const std::string& name) {
  if (!root.contains(name)) throw ConfigError("config: missing section '" + name + "'");
  return root.at(name);
}

// Builders ------------------------------------------------------------------

ScaleGranularity parse_granularity(const std::string& name) {
  if (name == "per_layer") return ScaleGranularity::PerLayer;
  if (name == "per_neuron") return ScaleGranularity::PerNeuron;
  if (name == "per_weight") return ScaleGranularity::PerWeight;
  throw ConfigError("config: unknown granularity '" + name + "'");
}

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::Full;
  if (name == "mfa") return Variant::Mfa;
  if (name == "fpv") return Variant::Fpv;
  if (name == "nkl") return Variant::Nkl;
  throw ConfigError("config: unknown variant '" + name + "'");
}

EstimatorConfig parse_estimator(const json& node) {
  const std::string kind = require<std::string>(node, "kind", "estimator");
  const bool damping = get_or<bool>(node, "damping", false);
  std::optional<double> temperature;
  if (node.contains("temperature")) temperature = node.at("temperature").get<double>();

  EstimatorConfig config;
  if (kind == "st") {
    config = EstimatorConfig::st();
  } else if (kind == "iwst") {
    const std::string policy = require<std::string>(node, "p_policy", "estimator");
    PPolicy p;
    if (policy == "p0") p = PPolicy::P0;
    else if (policy == "p1") p = PPolicy::P1;
    else if (policy == "half") p = PPolicy::Half;
    else if (policy == "st_match") p = PPolicy::StMatch;
    else if (policy == "low_var") p = PPolicy::LowVar;
    else throw ConfigError("config: unknown p_policy '" + policy + "'");
    config = EstimatorConfig::iw_st(p, damping, temperature);
  } else if (kind == "agr") {
    if (!temperature) throw ConfigError("config: agr estimator needs 'temperature'");
    config = EstimatorConfig::agr(*temperature);
  } else if (kind == "gsst") {
    if (!temperature) throw ConfigError("config: gsst estimator needs 'temperature'");
    config = EstimatorConfig::gs_st(*temperature);
  } else if (kind == "reinforce") {
    config = EstimatorConfig::reinforce();
  } else if (kind == "exact") {
    config = EstimatorConfig::exact();
  } else {
    throw ConfigError("config: unknown estimator kind '" + kind + "'");
  }
  try {
    config.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config;
}

Dataset build_dataset(const json& root, std::uint64_t seed) {
  const json& node = section(root, "dataset");
  const std::string kind = require<std::string>(node, "kind", "dataset");
  if (kind == "parity") {
    return gen_parity(require<std::size_t>(node, "n_bits", "dataset"),
                      require<std::size_t>(node, "n_samples", "dataset"), seed,
                      get_or<double>(node, "train_fraction", 1.0));
  }
  if (kind == "temporal") {
    return gen_temporal_pattern(require<std::size_t>(node, "n_classes", "dataset"),
                                require<std::size_t>(node, "timesteps", "dataset"),
                                require<std::size_t>(node, "channels", "dataset"),
                                get_or<double>(node, "noise_rate", 0.0), seed,
                                get_or<std::size_t>(node, "samples_per_class", 30),
                                get_or<double>(node, "train_fraction", 0.8));
  }
  if (kind == "csv") return load_csv_dataset(require<std::string>(node, "path", "dataset"));
  if (kind == "jsonl") return load_jsonl_dataset(require<std::string>(node, "path", "dataset"));
  throw ConfigError("config: unknown dataset kind '" + kind + "'");
}

NetworkSpec build_network(const json& root, const Dataset& data) {
  const json& node = section(root, "network");
  const std::string arch = require<std::string>(node, "arch", "network");
  const ScaleGranularity granularity =
      parse_granularity(get_or<std::string>(node, "granularity", "per_layer"));
  const Variant variant = parse_variant(get_or<std::string>(node, "variant", "full"));
  const double theta = get_or<double>(node, "theta", data.spiking() ? 1.0 : 0.0);

  NetworkSpec spec;
  if (arch == "mlp") {
    std::vector<std::size_t> widths = {data.inputs.dim(1)};
    for (std::size_t w : require<std::vector<std::size_t>>(node, "hidden", "network")) {
      widths.push_back(w);
    }
    spec = make_mlp_spec(widths, data.n_classes, theta, granularity, variant);
  } else if (arch == "residual_mlp") {
    spec = make_residual_mlp_spec(data.inputs.dim(1),
                                  require<std::size_t>(node, "hidden_width", "network"),
                                  require<std::size_t>(node, "blocks", "network"), data.n_classes,
                                  theta, granularity, variant);
  } else if (arch == "lif") {
    if (!data.spiking()) throw ConfigError("config: lif network needs a spiking dataset");
    spec = make_lif_spec(data.inputs.dim(2),
                         require<std::vector<std::size_t>>(node, "hidden", "network"),
                         data.n_classes, data.inputs.dim(1), get_or<double>(node, "beta", 0.9),
                         theta, get_or<bool>(node, "recurrent", false),
                         get_or<double>(node, "readout_beta", 0.0), granularity, variant,
                         get_or<double>(node, "base_noise_var", 0.0));
  } else {
    throw ConfigError("config: unknown network arch '" + arch + "'");
  }
  spec.fpv_sigma = get_or<double>(node, "fpv_sigma", 0.5);
  spec.kappa_feedback_grad = get_or<bool>(node, "kappa_feedback_grad", true);
  try {
    spec.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return spec;
}

TrainConfig build_train_config(const json& root, std::uint64_t seed) {
  const json& node = section(root, "training");
  TrainConfig config;
  config.epochs = require<std::size_t>(node, "epochs", "training");
  config.batch_size = get_or<std::size_t>(node, "batch_size", 16);
  config.lambda_kl = get_or<double>(node, "lambda_kl", 1e-6);
  const std::string kl_mode = get_or<std::string>(node, "kl_mode", "per_weight");
  if (kl_mode == "per_weight") config.kl_mode = KlMode::PerWeight;
  else if (kl_mode == "per_neuron") config.kl_mode = KlMode::PerNeuron;
  else throw ConfigError("config: unknown kl_mode '" + kl_mode + "'");
  config.estimator = parse_estimator(section(root, "estimator"));
  config.lr_weights = get_or<double>(node, "lr_weights", 0.005);
  config.lr_scales = get_or<double>(node, "lr_scales", 0.05);
  config.cosine_floor_divisor = get_or<double>(node, "cosine_floor_divisor", 50.0);
  config.shuffle = get_or<bool>(node, "shuffle", true);
  config.schedule_epochs = get_or<std::size_t>(node, "schedule_epochs", 0);
  config.seed = seed;
  try {
    config.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config;
}

json metrics_to_json(const EpochMetrics& m) {
  json row;
  row["epoch"] = m.epoch;
  row["train_loss"] = m.train_loss;
  row["eval_accuracy"] = m.eval_accuracy;
  row["kl_value"] = m.kl_value;
  row["per_layer_grad_norms"] = m.per_layer_grad_norms;
  row["attenuation_factor"] = m.attenuation_factor;
  return row;
}

std::filesystem::path ensure_out_dir(const json& root) {
  const std::string out = get_or<std::string>(root, "out_dir", "out");
  std::filesystem::create_directories(out);
  return out;
}

// Commands ------------------------------------------------------------------

int cmd_train(const json& root) {
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = get_or<std::uint64_t>(root, "seed", 1);
  const std::filesystem::path out_dir = ensure_out_dir(root);
  Dataset data = build_dataset(root, seed);
  NetworkSpec spec = build_network(root, data);
  TrainConfig config = build_train_config(root, seed);

  NetworkParams params;
  OptimizerState opt;
  std::size_t start_epoch = 0;
  const std::string resume = get_or<std::string>(section(root, "training"), "resume_from", "");
  if (!resume.empty()) {
    TrainingCheckpoint ck = load_checkpoint(resume);
    if (detail::network_spec_to_json(ck.spec) != detail::network_spec_to_json(spec)) {
      throw ConfigError("config: checkpoint network does not match the configured network");
    }
    params = std::move(ck.params);
    opt = std::move(ck.opt);
    start_epoch = ck.next_epoch;
    if (ck.seed != seed) throw ConfigError("config: checkpoint seed does not match");
  } else {
    params = init_network_params(spec, RngKey(seed));
    opt = OptimizerState::init(params.layout, config.lr_weights, config.lr_scales);
  }

  std::ofstream metrics_out(out_dir / "metrics.jsonl");
  if (!metrics_out) throw std::runtime_error("cannot open metrics.jsonl");
  EpochMetrics last;
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    last = train_epoch(spec, params, data, config, opt, epoch);
    metrics_out << metrics_to_json(last).dump() << "\n";
  }
  metrics_out.close();

  TrainingCheckpoint ck{seed, config.epochs, spec, std::move(params), std::move(opt)};
  save_checkpoint(ck, (out_dir / "checkpoint.json").string());

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json summary;
  summary["result"] = {{"epochs", config.epochs},
                       {"final_train_loss", last.train_loss},
                       {"final_eval_accuracy", last.eval_accuracy},
                       {"final_kl_value", last.kl_value}};
  summary["timing"] = {{"wall_seconds", wall}};
  std::ofstream summary_out(out_dir / "summary.json");
  summary_out << summary.dump(2) << "\n";
  std::cout << "train: " << config.epochs << " epochs, final accuracy " << last.eval_accuracy
            << "\n";
  return kExitOk;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_estimator_bench(const json& root) {
  const std::uint64_t seed = get_or<std::uint64_t>(root, "seed", 1);
  const std::filesystem::path out_dir = ensure_out_dir(root);
  Dataset data = build_dataset(root, seed);
  NetworkSpec spec = build_network(root, data);
  NetworkParams params = init_network_params(spec, RngKey(seed));
  const json& bench = section(root, "bench");
  const std::size_t trials = get_or<std::size_t>(bench, "trials", 20000);
  if (!bench.contains("estimators") || !bench.at("estimators").is_array()) {
    throw ConfigError("config: bench.estimators must be an array");
  }

  if (data.size() == 0) throw ConfigError("config: bench dataset is empty");
  Tensor input;
  if (data.spiking()) {
    input = Tensor({data.inputs.dim(1), data.inputs.dim(2)});
    for (std::size_t i = 0; i < input.size(); ++i) input[i] = data.inputs[i];
  } else {
    input = Tensor({data.inputs.dim(1)});
    for (std::size_t i = 0; i < input.size(); ++i) input[i] = data.inputs[i];
  }
  const std::size_t target = data.targets[0];

  const EnumerationBudget budget;
  std::ofstream csv(out_dir / "bench.csv");
  csv << "estimator,param_group,bias,variance,se,trials\n";
  for (const json& est_node : bench.at("estimators")) {
    check_keys(est_node, "estimator");
    const EstimatorConfig estimator = parse_estimator(est_node);
    EstimatorMoments moments = estimator_moments(spec, params, input, target, LossSpec::ce(),
                                                 estimator, trials, RngKey(seed), budget);
    for (const ParamBlock& block : params.layout.blocks) {
      std::vector<double> abs_bias, variance, se;
      for (std::size_t p = block.offset; p < block.offset + block.size(); ++p) {
        abs_bias.push_back(std::abs(moments.bias[p]));
        variance.push_back(moments.variance[p]);
        se.push_back(moments.standard_error[p]);
      }
      csv << estimator.describe() << "," << block.name << "," << median_of(abs_bias) << ","
          << median_of(variance) << "," << median_of(se) << "," << moments.trials << "\n";
    }
  }
  std::cout << "estimator-bench: wrote " << (out_dir / "bench.csv").string() << "\n";
  return kExitOk;
}

int cmd_theorem_checks(const json& root) {
  const std::uint64_t seed = get_or<std::uint64_t>(root, "seed", 1);
  const std::filesystem::path out_dir = ensure_out_dir(root);
  const json& checks = root.contains("checks") ? root.at("checks") : json::object();
  const std::size_t rao_cases = get_or<std::size_t>(checks, "rao_cases", 10);
  const std::size_t rao_trials = get_or<std::size_t>(checks, "rao_trials", 200000);
  const std::size_t cheby_networks = get_or<std::size_t>(checks, "cheby_networks", 20);
  const std::size_t cheby_trials = get_or<std::size_t>(checks, "cheby_trials", 2000);
  const std::vector<double> epsilons =
      get_or<std::vector<double>>(checks, "cheby_epsilons", {0.5, 1.0, 2.0});
  const std::size_t prop34_trials = get_or<std::size_t>(checks, "prop34_trials", 30000);
  const std::size_t equivalence_runs = get_or<std::size_t>(checks, "equivalence_runs", 100000);

  bool all_passed = true;
  json report;

  // Closed-form conditional expectation vs Monte Carlo, random (F, k).
  {
    RngStream rng = RngKey(seed).child(1).stream();
    json cases = json::array();
    for (std::size_t c = 0; c < rao_cases; ++c) {
      const double f = 0.05 + 0.9 * rng.next_double();
      const double k = 0.05 + 1.95 * rng.next_double();
      RaoBlackwellReport r = rao_blackwell_check(f, k, rao_trials, RngKey(seed).child(2).child(c));
      const bool ok = r.within_3se && r.variance_ok;
      all_passed = all_passed && ok;
      cases.push_back({{"f", f},
                       {"k", k},
                       {"closed_form", {r.closed_form[0], r.closed_form[1]}},
                       {"mc_mean", {r.mc_mean[0], r.mc_mean[1]}},
                       {"var_agr", r.var_agr},
                       {"var_gsst", r.var_gsst},
                       {"pass", ok}});
    }
    report["rao_blackwell"] = std::move(cases);
  }

  // Chebyshev bound on random small networks.
  {
    json cases = json::array();
    const EnumerationBudget budget;
    RngStream geom = RngKey(seed).child(3).stream();
    for (std::size_t n = 0; n < cheby_networks; ++n) {
      const std::size_t hidden = 3 + geom.next_below(3);
      NetworkSpec spec = make_mlp_spec({4, hidden, 3}, 2, 0.0, ScaleGranularity::PerLayer,
                                       Variant::Full);
      NetworkParams params = init_network_params(spec, RngKey(seed).child(4).child(n));
      Tensor input({4});
      for (std::size_t b = 0; b < 4; ++b) input[b] = geom.next_double() < 0.5 ? 0.0 : 1.0;
      for (double eps : epsilons) {
        BiasBoundReport r = chebyshev_bound_check(spec, params, input, eps, cheby_trials,
                                                  RngKey(seed).child(5).child(n), budget);
        const bool ok =
            r.empirical_probability >= r.chebyshev_lower_bound - 4.0 * r.standard_error;
        all_passed = all_passed && ok;
        cases.push_back({{"network", n},
                         {"epsilon", eps},
                         {"empirical", r.empirical_probability},
                         {"bound", r.chebyshev_lower_bound},
                         {"se", r.standard_error},
                         {"pass", ok}});
      }
    }
    report["chebyshev"] = std::move(cases);
  }

  // p-policy bias/variance intervals on the constructed instance.
  {
    Prop34Report r = run_prop34_experiment(prop34_trials, RngKey(seed).child(6));
    json policies = json::array();
    for (const auto& p : r.policies) {
      policies.push_back({{"policy", p.name},
                          {"median_abs_bias", p.median_abs_bias},
                          {"median_variance", p.median_variance}});
    }
    const bool ok = r.bias_ordering_ok && r.lowvar_variance_ok;
    all_passed = all_passed && ok;
    report["prop34"] = {{"policies", std::move(policies)},
                        {"bias_ordering_ok", r.bias_ordering_ok},
                        {"lowvar_variance_ok", r.lowvar_variance_ok},
                        {"pass", ok}};
  }

  // Recurrent-view vs explicit-resampling equivalence.
  {
    RecurrentEquivalenceReport r =
        run_recurrent_equivalence_check(equivalence_runs, RngKey(seed).child(7));
    all_passed = all_passed && r.within_3se;
    report["recurrent_equivalence"] = {{"runs", r.runs},
                                       {"recursion_rates", r.recursion_rates},
                                       {"explicit_rates", r.explicit_rates},
                                       {"max_z", r.max_z},
                                       {"pass", r.within_3se}};
  }

  report["all_passed"] = all_passed;
  std::ofstream out(out_dir / "theorem_checks.json");
  out << report.dump(2) << "\n";
  std::cout << "theorem-checks: " << (all_passed ? "all passed" : "FAILURES") << "\n";
  return all_passed ? kExitOk : kExitCheckFailure;
}

int cmd_grad_probe(const json& root) {
  const std::uint64_t seed = get_or<std::uint64_t>(root, "seed", 1);
  const std::filesystem::path out_dir = ensure_out_dir(root);
  Dataset data = build_dataset(root, seed);
  NetworkSpec spec = build_network(root, data);
  const json& probe = section(root, "probe");
  const std::vector<double> lambdas =
      get_or<std::vector<double>>(probe, "lambdas", {0.0, 1e-7, 1e-6, 1e-5});
  const std::size_t epochs = get_or<std::size_t>(probe, "epochs", 120);

  TrainConfig base = build_train_config(root, seed);
  base.epochs = epochs;

  const std::size_t stochastic_layers = spec.layers.size() - 1;
  std::ofstream csv(out_dir / "grad_probe.csv");
  csv << "lambda,epoch,train_loss,eval_accuracy,kl_value,attenuation_factor,shallow_deep_ratio";
  for (std::size_t l = 0; l < stochastic_layers; ++l) csv << ",norm_layer" << l;
  csv << "\n";

  for (double lambda : lambdas) {
    NetworkParams params = init_network_params(spec, RngKey(seed));
    OptimizerState opt = OptimizerState::init(params.layout, base.lr_weights, base.lr_scales);
    TrainConfig config = base;
    config.lambda_kl = lambda;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      EpochMetrics m = train_epoch(spec, params, data, config, opt, epoch);
      const double shallow = m.per_layer_grad_norms.front();
      // Deepest stochastic layer (readout norm excluded from the ratio).
      const double deep = m.per_layer_grad_norms[stochastic_layers - 1];
      const double ratio = deep > 0.0 ? shallow / deep : 0.0;
      csv << lambda << "," << epoch << "," << m.train_loss << "," << m.eval_accuracy << ","
          << m.kl_value << "," << m.attenuation_factor << "," << ratio;
      for (std::size_t l = 0; l < stochastic_layers; ++l) {
        csv << "," << m.per_layer_grad_norms[l];
      }
      csv << "\n";
    }
  }
  std::cout << "grad-probe: wrote " << (out_dir / "grad_probe.csv").string() << "\n";
  return kExitOk;
}

int cmd_gen_data(const json& root) {
  const std::uint64_t seed = get_or<std::uint64_t>(root, "seed", 1);
  const std::filesystem::path out_dir = ensure_out_dir(root);
  Dataset data = build_dataset(root, seed);
  std::filesystem::path path;
  if (data.spiking()) {
    path = out_dir / "dataset.jsonl";
    write_jsonl_dataset(data, path.string());
  } else {
    path = out_dir / "dataset.csv";
    write_csv_dataset(data, path.string());
  }
  std::cout << "gen-data: wrote " << path.string() << " (" << data.size() << " rows)\n";
  return kExitOk;
}

// Override handling ---------------------------------------------------------

json parse_override_value(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (const std::exception&) {
    return json(raw);  // plain string
  }
}

void apply_set(json& root, const std::string& dotted, const std::string& raw) {
  json* node = &root;
  std::size_t begin = 0;
  std::vector<std::string> parts;
  while (true) {
    const std::size_t dot = dotted.find('.', begin);
    parts.push_back(dotted.substr(begin, dot - begin));
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = parse_override_value(raw);
}

}  // namespace

int run_command(const std::string& command, const std::string& config_path,
                const CliOverrides& overrides) {
  json root;
  try {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("config: cannot open " + config_path);
    try {
      in >> root;
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    for (const auto& [path, value] : overrides.sets) apply_set(root, path, value);
    if (overrides.seed) root["seed"] = *overrides.seed;
    if (overrides.out_dir) root["out_dir"] = *overrides.out_dir;

    if (!root.contains("config_version") || root.at("config_version").get<int>() != 1) {
      throw ConfigError("config: missing or unsupported config_version (expected 1)");
    }
    check_keys(root, "");
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "config: " << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    if (command == "train") return cmd_train(root);
    if (command == "estimator-bench") return cmd_estimator_bench(root);
    if (command == "theorem-checks") return cmd_theorem_checks(root);
    if (command == "grad-probe") return cmd_grad_probe(root);
    if (command == "gen-data") return cmd_gen_data(root);
    std::cerr << "unknown command '" << command << "'\n";
    return kExitConfigError;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfigError;
  } catch (const BudgetExceededError& e) {
    std::cerr << e.what() << "\n"
              << "hint: shrink the bench network (fewer/narrower layers) to fit the "
                 "enumeration budget\n";
    return kExitRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}

}  // namespace binnlab
