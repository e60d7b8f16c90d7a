#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cfvi/data.hpp"
#include "cfvi/error.hpp"
#include "cfvi/forest_params.hpp"
#include "cfvi/importance.hpp"
#include "cfvi/oracle.hpp"
#include "cfvi/report.hpp"
#include "cfvi/simulation.hpp"

namespace cfvi::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kEstimationError = 4 };

inline int exit_code(ErrorKind kind) {
  switch (category(kind)) {
    case ErrorCategory::config: return kConfigError;
    case ErrorCategory::data: return kDataError;
    case ErrorCategory::estimation: return kEstimationError;
  }
  return kConfigError;
}

inline std::string_view to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::estimation: return "estimation";
  }
  return "config";
}

/// error category=<c> kind=<k> [row=<n>] message="<json-escaped text>"
inline std::string error_line(ErrorCategory c, std::string_view kind, const std::string& message,
                              std::optional<std::size_t> row = std::nullopt) {
  std::string line = "error category=" + std::string(to_string(c)) + " kind=" + std::string(kind);
  if (row) line += " row=" + std::to_string(*row);
  return line + " message=" + Json(message).dump();
}

// Data seeds for simulated inputs come from this stream of the master seed.
inline constexpr std::uint64_t kDataStream = 0xda7a;

struct RunConfig {
  std::string input;
  std::string outcome;
  std::string treatment;
  std::string dgp;
  std::size_t n = 3000;
  ForestParams params;
  CenteringParams centering;
  std::optional<std::uint64_t> seed;
  std::size_t repetitions = 10;
  std::string variant = "corrected";
  std::string groups;
  bool only_groups = false;
  std::size_t cluster = 0;
  bool sample_split = false;
  std::string format = "json";
  std::string output;
  std::string config;
};

/// Flag-name map of everything that shapes the results; feeding it back as
/// flags reruns the analysis.
inline Json to_json(const RunConfig& c) {
  Json j;
  if (!c.input.empty()) {
    j["input"] = c.input;
    j["outcome"] = c.outcome;
    j["treatment"] = c.treatment;
  } else {
    j["dgp"] = c.dgp;
    j["n"] = c.n;
  }
  const ForestParams& p = c.params;
  j["trees"] = p.num_trees;
  j["subsample-fraction"] = p.subsample_fraction;
  j["honesty-fraction"] = p.honesty_fraction;
  j["min-node-size"] = p.min_node_size;
  j["min-child-fraction"] = p.min_child_fraction;
  if (p.mtry) j["mtry"] = *p.mtry;
  j["max-leaf-size"] = p.max_leaf_size;
  j["truncation-bound"] = p.truncation_bound;
  j["threads"] = p.num_threads;
  j["center-trees"] = c.centering.num_trees;
  j["center-subsample-fraction"] = c.centering.subsample_fraction;
  j["center-min-node-size"] = c.centering.min_node_size;
  j["center-max-leaf-size"] = c.centering.max_leaf_size;
  j["center-mtry"] = c.centering.mtry;
  if (c.centering.honesty) j["honest-centering"] = true;
  j["seed"] = c.seed.value_or(p.seed);
  j["reps"] = c.repetitions;
  j["variant"] = c.variant;
  if (!c.groups.empty()) j["groups"] = c.groups;
  if (c.only_groups) j["only-groups"] = true;
  if (c.cluster > 0) j["cluster"] = c.cluster;
  if (c.sample_split) j["sample-split"] = true;
  j["format"] = c.format;
  return j;
}

/// Turns a stored config back into flags.
inline std::vector<std::string> config_flags(const Json& config) {
  if (!config.is_object()) throw Error(ErrorKind::InvalidArgument, "config must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : config.items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + key);
    } else if (value.is_string()) {
      args.push_back("--" + key);
      args.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      args.push_back("--" + key);
      args.push_back(value.dump());
    } else if (!value.is_null()) {
      throw Error(ErrorKind::InvalidArgument, "config field '" + key + "' has an unsupported type");
    }
  }
  return args;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::InvalidArgument, path + " is not JSON: " + e.what());
  }
}

/// Writes to `path`, or to `out` when the path is empty.
template <typename Fn>
void emit(const std::string& path, std::ostream& out, Fn&& write) {
  if (path.empty()) {
    write(out);
    return;
  }
  std::ofstream file(path);
  if (!file) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
  write(file);
  if (!file) throw Error(ErrorKind::InvalidArgument, "failed writing " + path);
}

inline std::uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

/// Parses "x2,x3" or "2,3" (1-based) into a column set.
inline FeatureSet parse_target(const std::string& spec, const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto token = std::string(detail::trim(item));
    if (token.empty()) continue;
    const auto it = std::find(names.begin(), names.end(), token);
    if (it != names.end()) {
      idx.push_back(static_cast<std::size_t>(it - names.begin()));
      continue;
    }
    std::size_t pos = 0;
    std::size_t one_based = 0;
    try {
      one_based = std::stoul(token, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != token.size() || one_based < 1 || one_based > names.size()) {
      throw Error(ErrorKind::InvalidArgument, "unknown target column '" + token + "'");
    }
    idx.push_back(one_based - 1);
  }
  if (idx.empty()) throw Error(ErrorKind::InvalidArgument, "empty target");
  return FeatureSet(std::move(idx));
}

inline std::vector<std::string> default_names(std::size_t p) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

inline int cmd_importance(RunConfig cfg, std::ostream& out, std::ostream& err) {
  if (cfg.input.empty() == cfg.dgp.empty()) {
    throw Error(ErrorKind::InvalidArgument, "give exactly one of --input and --dgp");
  }
  if (!cfg.input.empty() && (cfg.outcome.empty() || cfg.treatment.empty())) {
    throw Error(ErrorKind::InvalidArgument, "--input needs --outcome and --treatment");
  }
  if (!cfg.groups.empty() && cfg.cluster > 0) {
    throw Error(ErrorKind::InvalidArgument, "--groups and --cluster are exclusive");
  }
  if (!cfg.seed) cfg.seed = entropy_seed();
  cfg.params.seed = *cfg.seed;
  const Variant variant = parse_variant(cfg.variant);
  ImportanceOptions options;
  options.repetitions = cfg.repetitions;
  options.sample_split = cfg.sample_split;
  options.centering = cfg.centering;
  if (options.repetitions < 1) throw Error(ErrorKind::InvalidParams, "reps must be >= 1");
  cfg.params.validate();

  DataSource source;
  std::optional<Dataset> loaded;
  if (!cfg.input.empty()) {
    loaded = load_csv(cfg.input, cfg.outcome, cfg.treatment);
    const auto report = validate(*loaded);
    if (report.error) throw *report.error;
    if (report.has_warning(Warning::ConstantOutcome)) err << "warning kind=ConstantOutcome\n";
    if (report.has_warning(Warning::DegenerateTreatmentArm)) err << "warning kind=DegenerateTreatmentArm\n";
    source = [&loaded](std::size_t) { return *loaded; };
  } else {
    source = replicates(dgp_by_name(cfg.dgp), cfg.n, derive_seed(*cfg.seed, kDataStream));
    loaded = source(0);
  }
  const Dataset& first = *loaded;
  const auto& names = first.feature_names();

  std::vector<Group> groups;
  if (!cfg.groups.empty()) {
    groups = load_groups(cfg.groups, names, cfg.only_groups);
  } else if (cfg.cluster > 0) {
    groups = cluster_groups(first, cfg.cluster);
  } else {
    groups = singleton_groups(first);
  }

  const auto start = std::chrono::steady_clock::now();
  const ImportanceResult result = importance_all(source, groups, cfg.params, options);
  const double elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  emit(cfg.output, out, [&](std::ostream& os) {
    if (cfg.format == "csv") {
      write_report_csv(os, result, variant, names);
    } else {
      Json doc = report_json(result, variant, names);
      doc["config"] = to_json(cfg);
      doc["timing_ms"] = elapsed;
      os << doc.dump(2) << '\n';
    }
  });
  return kOk;
}

inline int cmd_simulate(const std::string& dgp, std::size_t n, std::optional<std::uint64_t> seed,
                        const std::string& output, std::ostream& out, std::ostream& err) {
  if (!seed) {
    seed = entropy_seed();
    err << "seed=" << *seed << '\n';
  }
  const auto sim = simulate(dgp, n, *seed);
  emit(output, out, [&](std::ostream& os) { write_csv(sim.data, os); });
  return kOk;
}

struct OracleConfig {
  std::string dgp;
  std::string target;
  bool bias = false;
  std::size_t n_mc = 1'000'000;
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  std::string format = "json";
  std::string output;
};

inline int cmd_oracle(const OracleConfig& cfg, std::ostream& out) {
  const DgpSpec spec = dgp_by_name(cfg.dgp);
  const auto names = default_names(spec.p);
  const FeatureSet drop = parse_target(cfg.target, names);
  OracleOptions options;
  options.n_mc = cfg.n_mc;
  options.seed = cfg.seed;
  options.num_threads = cfg.threads;

  Json doc{{"dgp", cfg.dgp}, {"target", column_names(drop, names)}, {"n_mc", cfg.n_mc}, {"seed", cfg.seed}};
  double headline = 0.0;
  if (cfg.bias) {
    headline = oracle_bias(spec, drop, options);
    doc["bias"] = headline;
  } else {
    const auto o = oracle_importance(spec, drop, options);
    headline = o.squared_difference;
    doc["importance"] = o.squared_difference;
    doc["variance_decomposition"] = o.variance_decomposition;
    doc["tau_variance"] = o.tau_variance;
  }
  emit(cfg.output, out, [&](std::ostream& os) {
    if (cfg.format == "text") {
      os << detail::format_real(headline) << '\n';
    } else {
      os << doc.dump(2) << '\n';
    }
  });
  return kOk;
}

namespace detail {

inline std::string env_name(const std::string& flag) {
  std::string name = "CFVI_";
  for (char c : flag) name += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

}  // namespace detail

/// Entry point. `args` excludes the program name. Every flag can also be set
/// through CFVI_<FLAG> (upper case, dashes as underscores); explicit flags win.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  OracleConfig ocfg;
  std::string sim_dgp, sim_output;
  std::size_t sim_n = 0;
  std::uint64_t sim_seed = 0;
  std::uint64_t seed = 0;
  std::size_t mtry = 0;

  CLI::App app{"Variable importance for causal forests"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto* imp = app.add_subcommand("importance", "Estimate variable or group importance");
  auto* sim = app.add_subcommand("simulate", "Write a simulated dataset as CSV");
  auto* orc = app.add_subcommand("oracle", "Monte-Carlo importance or bias for a simulation design");
  for (auto* sub : {imp, sim, orc}) sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto opt = [](CLI::App* sub, const std::string& flag, auto& target, const std::string& help) {
    return sub->add_option("--" + flag, target, help)->envname(detail::env_name(flag));
  };
  auto flag = [](CLI::App* sub, const std::string& name, bool& target, const std::string& help) {
    return sub->add_flag("--" + name, target, help)->envname(detail::env_name(name));
  };

  const auto dgp_check = CLI::IsMember(dgp_names());
  opt(imp, "input", cfg.input, "CSV with a header row")->check(CLI::ExistingFile);
  opt(imp, "outcome", cfg.outcome, "Outcome column name");
  opt(imp, "treatment", cfg.treatment, "Binary treatment column name");
  opt(imp, "dgp", cfg.dgp, "Simulation design instead of --input")->check(dgp_check);
  opt(imp, "n", cfg.n, "Rows per simulated dataset")->check(CLI::PositiveNumber);
  opt(imp, "trees", cfg.params.num_trees, "Trees per forest");
  opt(imp, "subsample-fraction", cfg.params.subsample_fraction, "Rows drawn per tree");
  opt(imp, "honesty-fraction", cfg.params.honesty_fraction, "Share of the subsample used to choose splits");
  opt(imp, "min-node-size", cfg.params.min_node_size, "Smallest child");
  opt(imp, "min-child-fraction", cfg.params.min_child_fraction, "Smallest child as a share of its parent");
  opt(imp, "mtry", mtry, "Variables tried per split (0 = default)");
  opt(imp, "max-leaf-size", cfg.params.max_leaf_size, "Largest leaf before random splitting");
  opt(imp, "truncation-bound", cfg.params.truncation_bound, "Bound on effect estimates");
  opt(imp, "threads", cfg.params.num_threads, "Worker threads (0 = all cores)");
  opt(imp, "center-trees", cfg.centering.num_trees, "Trees per centering forest (0 = a quarter of --trees, at least 50)");
  opt(imp, "center-subsample-fraction", cfg.centering.subsample_fraction, "Rows drawn per centering tree");
  opt(imp, "center-min-node-size", cfg.centering.min_node_size, "Smallest child in centering trees");
  opt(imp, "center-max-leaf-size", cfg.centering.max_leaf_size, "Largest centering leaf before random splitting");
  opt(imp, "center-mtry", cfg.centering.mtry, "Variables tried per centering split (0 = all)");
  flag(imp, "honest-centering", cfg.centering.honesty, "Grow honest centering trees");
  auto* seed_opt = opt(imp, "seed", seed, "Master seed (drawn at random when omitted)");
  opt(imp, "reps", cfg.repetitions, "Repetitions");
  opt(imp, "variant", cfg.variant, "corrected, uncorrected or both")
      ->check(CLI::IsMember({"corrected", "uncorrected", "both"}));
  opt(imp, "groups", cfg.groups, "JSON file of column groups")->check(CLI::ExistingFile);
  flag(imp, "only-groups", cfg.only_groups, "Skip columns no group mentions");
  opt(imp, "cluster", cfg.cluster, "Group columns into this many correlation clusters");
  flag(imp, "sample-split", cfg.sample_split, "Fit full and retrained forests on disjoint halves");
  opt(imp, "format", cfg.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  opt(imp, "output", cfg.output, "Report path (stdout when omitted)");
  opt(imp, "config", cfg.config, "Rerun with the config stored in a report")->check(CLI::ExistingFile);

  opt(sim, "dgp", sim_dgp, "Simulation design")->required()->check(dgp_check);
  opt(sim, "n", sim_n, "Rows")->required();
  auto* sim_seed_opt = opt(sim, "seed", sim_seed, "Seed (drawn at random when omitted)");
  opt(sim, "output", sim_output, "CSV path (stdout when omitted)");

  opt(orc, "dgp", ocfg.dgp, "Simulation design")->required()->check(dgp_check);
  opt(orc, "target", ocfg.target, "Dropped columns: names or 1-based indices, comma separated")->required();
  flag(orc, "bias", ocfg.bias, "Bias of the uncorrected importance instead");
  opt(orc, "n-mc", ocfg.n_mc, "Outer Monte-Carlo draws");
  opt(orc, "seed", ocfg.seed, "Seed");
  opt(orc, "threads", ocfg.threads, "Worker threads (0 = all cores)");
  opt(orc, "format", ocfg.format, "json or text")->check(CLI::IsMember({"json", "text"}));
  opt(orc, "output", ocfg.output, "Output path (stdout when omitted)");

  try {
    try {
      std::vector<std::string> reversed(args.rbegin(), args.rend());
      app.parse(reversed);
      if (imp->parsed() && !cfg.config.empty()) {
        // Stored values first so explicit flags override them.
        const Json report = read_json_file(cfg.config);
        if (!report.contains("config")) throw Error(ErrorKind::InvalidArgument, cfg.config + " has no config");
        std::vector<std::string> merged{"importance"};
        for (auto& a : config_flags(report["config"])) merged.push_back(std::move(a));
        for (std::size_t k = 1; k < args.size(); ++k) merged.push_back(args[k]);
        const std::string path = cfg.config;
        cfg = RunConfig{};
        seed = 0;
        mtry = 0;
        app.clear();
        std::vector<std::string> again(merged.rbegin(), merged.rend());
        app.parse(again);
        cfg.config = path;
      }
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
        app.exit(e, out, err);
        return kOk;
      }
      err << error_line(ErrorCategory::config, "InvalidArgument", e.what()) << '\n';
      return kConfigError;
    }

    if (imp->parsed()) {
      if (seed_opt->count() > 0) cfg.seed = seed;
      if (mtry > 0) cfg.params.mtry = mtry;
      return cmd_importance(cfg, out, err);
    }
    if (sim->parsed()) {
      std::optional<std::uint64_t> s;
      if (sim_seed_opt->count() > 0) s = sim_seed;
      return cmd_simulate(sim_dgp, sim_n, s, sim_output, out, err);
    }
    return cmd_oracle(ocfg, out);
  } catch (const Error& e) {
    err << error_line(category(e.kind()), to_string(e.kind()), e.message(), e.row()) << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << error_line(ErrorCategory::config, "Internal", e.what()) << '\n';
    return kConfigError;
  }
}

}  // namespace cfvi::cli
