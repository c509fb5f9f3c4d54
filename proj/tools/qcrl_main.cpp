#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qcrl/experiment.hpp"

namespace fs = std::filesystem;
using namespace qcrl;

namespace {

struct CommonOpts {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::uint64_t seed = 0;
  long budget = -1;
  CLI::Option* config_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* budget_opt = nullptr;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  o.config_opt = sub->add_option("--config", o.config, "experiment config file");
  sub->add_option("--override", o.overrides,
                  "section.key=value applied over the config (repeatable)");
  o.out_opt = sub->add_option("--out", o.out, "output directory");
  o.seed_opt = sub->add_option("--seed", o.seed, "run only this seed");
  o.budget_opt = sub->add_option("--budget", o.budget, "episode budget");
}

ExperimentConfig resolve_opts(const CommonOpts& o) {
  ExperimentConfig cfg = o.config.empty()
                             ? load_config_text("", "defaults", o.overrides)
                             : load_config_file(o.config, o.overrides);
  if (o.seed_opt && o.seed_opt->count()) cfg.seeds = {o.seed};
  if (o.out_opt && o.out_opt->count()) cfg.output_dir = o.out;
  if (o.budget_opt && o.budget_opt->count()) {
    if (o.budget < 0) throw ConfigError("--budget: negative episode budget");
    cfg.budget = static_cast<int>(o.budget);
  }
  return cfg;
}

int cmd_print_config(const CommonOpts& o) {
  std::cout << serialize_config(resolve_opts(o));
  return 0;
}

int cmd_grape(const CommonOpts& o) {
  ExperimentConfig cfg = resolve_opts(o);
  if (task_is_ecd(cfg.task)) {
    throw ConfigError("grape: applies to pulse tasks; use train for ECD circuits");
  }
  if (o.seed_opt && o.seed_opt->count()) cfg.grape.seed = o.seed;

  const SystemSpec sys = make_system(cfg);
  const GrapeResult res = grape_optimize(sys, ground_state(sys), make_task_target(cfg),
                                         cfg.grape);

  fs::create_directories(cfg.output_dir);
  std::vector<std::string> labels;
  for (const ControlChannel& c : sys.controls) labels.push_back(c.label);
  const std::string pulse_path = cfg.output_dir + "/grape_pulses.json";
  save_pulses(pulse_path, res.pulses, labels);

  const std::string trace_path = cfg.output_dir + "/grape_trace.csv";
  std::ofstream trace(trace_path, std::ios::binary);
  if (!trace) throw Error("cannot write " + trace_path);
  trace << "# qcrl " << kToolkitVersion << "\n# config " << config_hash(cfg) << "\n";
  trace << "iteration,fidelity\n";
  for (std::size_t i = 0; i < res.fidelity_trace.size(); ++i) {
    trace << i << "," << format_double(res.fidelity_trace[i]) << "\n";
  }

  std::cout << "fidelity " << format_double(res.fidelity) << " after " << res.iterations
            << " iterations\n"
            << pulse_path << "\n"
            << trace_path << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  const ExperimentConfig cfg = resolve_opts(o);
  const std::uint64_t seed = cfg.seeds.front();
  const SeedResult res = run_seed(cfg, seed);
  std::cout << "seed " << seed << ": best fidelity " << format_double(res.best_fidelity)
            << ", final " << format_double(res.final_fidelity) << ", episodes to "
            << format_double(kFidelityThreshold) << ": " << res.episodes_to_threshold << "\n"
            << res.metrics_path << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& o, bool sequential) {
  const ExperimentConfig cfg = resolve_opts(o);
  const ExperimentResult res = run_experiment(cfg, !sequential);
  for (const SeedResult& r : res.seeds) {
    std::cout << "seed " << r.seed << ": best " << format_double(r.best_fidelity)
              << ", final " << format_double(r.final_fidelity) << ", episodes to threshold "
              << r.episodes_to_threshold << "\n";
  }
  std::cout << "median episodes to threshold: " << res.median_episodes_to_threshold << "\n"
            << "median final fidelity: " << format_double(res.median_final_fidelity) << "\n"
            << res.output_dir << "/sweep_summary.json\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint, const std::string& pulses,
             int episodes) {
  const ExperimentConfig cfg = resolve_opts(o);
  if (checkpoint.empty() == pulses.empty()) {
    throw ConfigError("eval: give exactly one of --checkpoint or --pulses");
  }
  const std::uint64_t seed = cfg.seeds.front();
  const EvalStats st = checkpoint.empty() ? eval_saved_pulses(pulses, cfg, seed, episodes)
                                          : eval_checkpoint(checkpoint, cfg, seed, episodes);
  std::cout << "{\n"
            << "  \"episodes\": " << st.episodes << ",\n"
            << "  \"mean_reward\": " << format_double(st.mean_reward) << ",\n"
            << "  \"var_reward\": " << format_double(st.var_reward) << ",\n"
            << "  \"mean_fidelity\": " << format_double(st.mean_fidelity) << ",\n"
            << "  \"min_fidelity\": " << format_double(st.min_fidelity) << ",\n"
            << "  \"max_fidelity\": " << format_double(st.max_fidelity) << "\n"
            << "}\n";
  return 0;
}

int cmd_wigner(const CommonOpts& o, const std::string& pulses, const std::string& ecd,
               bool target, const std::string& out_file, double extent, int points) {
  const ExperimentConfig cfg = resolve_opts(o);
  const int given = int(!pulses.empty()) + int(!ecd.empty()) + int(target);
  if (given != 1) throw ConfigError("wigner: give exactly one of --pulses, --ecd, --target");
  if (cfg.task == Task::Bell) throw ConfigError("wigner: needs a cavity task");

  QuantumState state;
  if (target) {
    state = make_task_target(cfg);
  } else if (!pulses.empty()) {
    auto env = make_env(cfg, cfg.seeds.front());
    auto* pe = dynamic_cast<PulseEnv*>(env.get());
    if (!pe) throw ConfigError("wigner: --pulses needs a pulse task");
    const LoadedPulses loaded = load_pulses(pulses);
    check_pulse_shape(pe->nominal(), loaded.pulses);
    state = pe->final_state(encode_pulses(pe->nominal(), loaded.pulses));
  } else {
    auto env = make_env(cfg, cfg.seeds.front());
    auto* ee = dynamic_cast<EcdEnv*>(env.get());
    if (!ee) throw ConfigError("wigner: --ecd needs an ECD task");
    const EcdCircuitParams params = load_ecd_params(ecd);
    if (params.n_q != ee->n_q() || params.n_c != ee->n_c()) {
      throw ConfigError("wigner: circuit dimensions do not match the config");
    }
    state = ee->final_state(encode_ecd_params(params));
  }
  write_wigner_csv(out_file, cfg, state, extent, points);
  std::cout << out_file << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantum control toolkit: GRAPE demos + RL fine-tuning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolkitVersion);

  CommonOpts grape_o, train_o, sweep_o, eval_o, wigner_o, print_o;

  CLI::App* grape = app.add_subcommand("grape", "optimize open-loop pulses on the nominal model");
  add_common(grape, grape_o);

  CLI::App* train = app.add_subcommand("train", "demo generation plus RL training, one seed");
  add_common(train, train_o);

  CLI::App* sweep = app.add_subcommand("sweep", "all configured seeds, one worker per seed");
  add_common(sweep, sweep_o);
  bool sequential = false;
  sweep->add_flag("--sequential", sequential, "run seeds one after another");

  CLI::App* eval = app.add_subcommand("eval", "deterministic evaluation of a saved policy");
  add_common(eval, eval_o);
  std::string eval_checkpoint_prefix, eval_pulses;
  int eval_episodes = 10;
  eval->add_option("--checkpoint", eval_checkpoint_prefix, "agent checkpoint prefix");
  eval->add_option("--pulses", eval_pulses, "pulse file replayed as a constant policy");
  eval->add_option("--episodes", eval_episodes, "evaluation episodes");

  CLI::App* wigner = app.add_subcommand("wigner", "phase-space CSV for a state or control");
  add_common(wigner, wigner_o);
  std::string wigner_pulses, wigner_ecd, wigner_out = "wigner.csv";
  bool wigner_target = false;
  double wigner_extent = 4.0;
  int wigner_points = 81;
  wigner->add_option("--pulses", wigner_pulses, "pulse file to propagate");
  wigner->add_option("--ecd", wigner_ecd, "ECD circuit file to run");
  wigner->add_flag("--target", wigner_target, "use the task target state");
  wigner->add_option("--out-file", wigner_out, "output CSV path");
  wigner->add_option("--extent", wigner_extent, "half-width of the phase-space grid");
  wigner->add_option("--points", wigner_points, "grid points per axis");

  CLI::App* print_config =
      app.add_subcommand("print-config", "resolved config with all defaults explicit");
  add_common(print_config, print_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*grape) return cmd_grape(grape_o);
    if (*train) return cmd_train(train_o);
    if (*sweep) return cmd_sweep(sweep_o, sequential);
    if (*eval) return cmd_eval(eval_o, eval_checkpoint_prefix, eval_pulses, eval_episodes);
    if (*wigner) {
      return cmd_wigner(wigner_o, wigner_pulses, wigner_ecd, wigner_target, wigner_out,
                        wigner_extent, wigner_points);
    }
    if (*print_config) return cmd_print_config(print_o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
