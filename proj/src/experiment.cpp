#include "qcrl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace qcrl {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kMixMul = 0x9e3779b97f4a7c15ull;

std::uint64_t mix_stream(std::uint64_t seed, std::uint64_t stream) {
  return seed ^ (kMixMul * (stream + 1));
}

EnvOptions env_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  EnvOptions opts;
  opts.reward_mode = cfg.reward_mode;
  opts.shots = cfg.shots;
  opts.seed = mix_stream(seed, 31);
  return opts;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json parse_json_file(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": parse error at byte " + std::to_string(e.byte) + ": " +
                      e.what());
  }
}

double field_double(const json& j, const std::string& path, const std::string& field) {
  if (!j.contains(field)) throw ConfigError(path + ": missing field '" + field + "'");
  if (!j.at(field).is_number()) throw ConfigError(path + ": field '" + field + "' not a number");
  return j.at(field).get<double>();
}

std::string csv_header(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::ostringstream out;
  out << "# qcrl " << kToolkitVersion << "\n";
  out << "# config " << config_hash(cfg) << "\n";
  out << "# task " << task_name(cfg.task) << " algorithm " << algorithm_name(cfg.algorithm)
      << " seed " << seed << "\n";
  return out.str();
}

std::string sac_metrics_csv(const ExperimentConfig& cfg, std::uint64_t seed,
                            const std::vector<SacMetricsRow>& trace) {
  std::ostringstream out;
  out << csv_header(cfg, seed);
  out << "timestep,episodes,mean_reward,best_fidelity,q_loss,pi_loss,lambda_bc\n";
  for (const SacMetricsRow& r : trace) {
    out << r.timestep << "," << r.episodes << "," << format_double(r.mean_reward) << ","
        << format_double(r.best_fidelity) << "," << format_double(r.q_loss) << ","
        << format_double(r.pi_loss) << "," << format_double(r.lambda_bc) << "\n";
  }
  return out.str();
}

std::string ppo_metrics_csv(const ExperimentConfig& cfg, std::uint64_t seed,
                            const std::vector<PpoMetricsRow>& trace) {
  std::ostringstream out;
  out << csv_header(cfg, seed);
  out << "timestep,episodes,mean_reward,best_fidelity,clip_frac,approx_kl,entropy\n";
  for (const PpoMetricsRow& r : trace) {
    out << r.timestep << "," << r.episodes << "," << format_double(r.mean_reward) << ","
        << format_double(r.best_fidelity) << "," << format_double(r.clip_frac) << ","
        << format_double(r.approx_kl) << "," << format_double(r.entropy) << "\n";
  }
  return out.str();
}

template <typename Row>
long first_crossing(const std::vector<Row>& trace, double threshold) {
  for (const Row& r : trace) {
    if (r.best_fidelity >= threshold) return r.episodes;
  }
  return -1;
}

// The executed action behind a result: decoded and saved as the best pulse
// or circuit artifact.
void save_best_action(Env& env, const RVector& action, const std::string& path) {
  if (auto* pe = dynamic_cast<PulseEnv*>(&env)) {
    const SystemSpec& sys = pe->nominal();
    std::vector<std::string> labels;
    for (const ControlChannel& c : sys.controls) labels.push_back(c.label);
    save_pulses(path, decode_action(sys, action), labels);
  } else if (auto* ee = dynamic_cast<EcdEnv*>(&env)) {
    save_ecd_params(path, decode_ecd_action(ee->n_q(), ee->n_c(), action));
  } else {
    throw ContractViolation("save_best_action: unsupported env type");
  }
}

void save_final_state(const ExperimentConfig& cfg, Env& env, const RVector& action,
                      const std::string& stem) {
  QuantumState fin;
  if (auto* pe = dynamic_cast<PulseEnv*>(&env)) {
    fin = pe->final_state(action);
  } else if (auto* ee = dynamic_cast<EcdEnv*>(&env)) {
    fin = ee->final_state(action);
  } else {
    return;
  }

  if (cfg.task == Task::Bell) {
    json j;
    j["dims"] = fin.dims;
    std::vector<double> re, im;
    for (int i = 0; i < fin.amps.size(); ++i) {
      re.push_back(fin.amps(i).real());
      im.push_back(fin.amps(i).imag());
    }
    j["re"] = re;
    j["im"] = im;
    write_text(stem + "_final_state.json", j.dump(2) + "\n");
  } else {
    write_wigner_csv(stem + "_wigner.csv", cfg, fin);
  }
}

}  // namespace

SystemSpec make_system(const ExperimentConfig& cfg) {
  switch (cfg.task) {
    case Task::Bell:
      return build_two_qubit_system(cfg.two_qubit, cfg.n_segments, cfg.dt_ns);
    case Task::Binomial:
    case Task::Cat:
      return build_kerr_system(cfg.kerr, cfg.n_segments, cfg.dt_ns);
    case Task::GkpEcd:
    case Task::CatEcd:
      throw ContractViolation("make_system: ECD tasks have no pulse system");
  }
  throw Error("make_system: unknown task");
}

QuantumState make_task_target(const ExperimentConfig& cfg) {
  if (cfg.task == Task::Bell) return make_target(cfg.target, {2, 2});
  if (task_is_ecd(cfg.task)) return make_target(cfg.target, {cfg.ecd_n_q, cfg.ecd_n_c});
  return make_target(cfg.target, {cfg.kerr.n_q, cfg.kerr.n_c});
}

std::unique_ptr<Env> make_env(const ExperimentConfig& cfg, std::uint64_t seed) {
  const QuantumState target = make_task_target(cfg);
  if (task_is_ecd(cfg.task)) {
    return std::make_unique<EcdEnv>(cfg.ecd_n_q, cfg.ecd_n_c, target, cfg.ecd_depth, cfg.bias,
                                    env_options(cfg, seed));
  }
  const SystemSpec sys = make_system(cfg);
  return std::make_unique<PulseEnv>(sys, ground_state(sys), target, cfg.bias,
                                    env_options(cfg, seed));
}

void save_pulses(const std::string& path, const PulseSet& pulses,
                 const std::vector<std::string>& labels) {
  if (!labels.empty() && static_cast<int>(labels.size()) != pulses.n_channels()) {
    throw DimensionError("save_pulses: label count != channel count");
  }
  json j;
  j["dt_ns"] = pulses.dt_ns;
  j["channels"] = json::array();
  for (int k = 0; k < pulses.n_channels(); ++k) {
    json ch;
    ch["label"] = labels.empty() ? "ch" + std::to_string(k) : labels[k];
    std::vector<double> values(pulses.u.cols());
    for (int s = 0; s < pulses.u.cols(); ++s) values[s] = pulses.u(k, s);
    ch["values"] = values;
    j["channels"].push_back(ch);
  }
  write_text(path, j.dump(2) + "\n");
}

LoadedPulses load_pulses(const std::string& path) {
  const json j = parse_json_file(path);
  LoadedPulses out;
  out.pulses.dt_ns = field_double(j, path, "dt_ns");
  if (!(out.pulses.dt_ns > 0.0)) throw ConfigError(path + ": field 'dt_ns' must be > 0");
  if (!j.contains("channels")) throw ConfigError(path + ": missing field 'channels'");
  const json& chans = j.at("channels");
  if (!chans.is_array() || chans.empty()) {
    throw ConfigError(path + ": field 'channels' must be a non-empty array");
  }
  int n_seg = -1;
  out.pulses.u.resize(chans.size(), 0);
  for (std::size_t k = 0; k < chans.size(); ++k) {
    const json& ch = chans.at(k);
    if (!ch.contains("values") || !ch.at("values").is_array()) {
      throw ConfigError(path + ": channel " + std::to_string(k) + " missing 'values'");
    }
    const std::vector<double> values = ch.at("values").get<std::vector<double>>();
    if (n_seg < 0) {
      n_seg = static_cast<int>(values.size());
      if (n_seg == 0) throw ConfigError(path + ": channel 0 has no values");
      out.pulses.u.resize(chans.size(), n_seg);
    } else if (static_cast<int>(values.size()) != n_seg) {
      throw ConfigError(path + ": channel length mismatch at channel " + std::to_string(k));
    }
    for (int s = 0; s < n_seg; ++s) out.pulses.u(k, s) = values[s];
    out.labels.push_back(ch.value("label", "ch" + std::to_string(k)));
  }
  return out;
}

void save_ecd_params(const std::string& path, const EcdCircuitParams& params) {
  json j;
  j["n_q"] = params.n_q;
  j["n_c"] = params.n_c;
  j["layers"] = json::array();
  for (const EcdLayer& l : params.layers) {
    j["layers"].push_back(
        {{"beta_re", l.beta_re}, {"beta_im", l.beta_im}, {"theta", l.theta}, {"phi", l.phi}});
  }
  write_text(path, j.dump(2) + "\n");
}

EcdCircuitParams load_ecd_params(const std::string& path) {
  const json j = parse_json_file(path);
  EcdCircuitParams params;
  params.n_q = static_cast<int>(field_double(j, path, "n_q"));
  params.n_c = static_cast<int>(field_double(j, path, "n_c"));
  if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty()) {
    throw ConfigError(path + ": field 'layers' must be a non-empty array");
  }
  for (const json& l : j.at("layers")) {
    EcdLayer layer;
    layer.beta_re = field_double(l, path, "beta_re");
    layer.beta_im = field_double(l, path, "beta_im");
    layer.theta = field_double(l, path, "theta");
    layer.phi = field_double(l, path, "phi");
    params.layers.push_back(layer);
  }
  return params;
}

DemoArtifacts make_demo(const ExperimentConfig& cfg, Env& env) {
  DemoBuildResult built;
  if (auto* pe = dynamic_cast<PulseEnv*>(&env)) {
    built = build_pulse_demo(*pe, cfg.grape);
  } else if (auto* ee = dynamic_cast<EcdEnv*>(&env)) {
    built = build_ecd_demo(*ee, cfg.ecd_demo_seed, cfg.ecd_demo_restarts, cfg.ecd_demo_iters);
  } else {
    throw ContractViolation("make_demo: unsupported env type");
  }
  if (built.demo.empty()) throw TrainingError("make_demo: produced no demonstrations");

  DemoArtifacts out;
  out.action = built.demo.at(0).action;
  out.nominal_fidelity = built.nominal_fidelity.at(0);
  out.biased_fidelity = built.demo.at(0).true_fidelity;
  out.demo = std::move(built.demo);
  return out;
}

EvalStats eval_policy(Env& env, const std::function<RVector(const RVector&)>& policy,
                      int episodes) {
  if (episodes < 1) throw ContractViolation("eval_policy: episodes < 1");
  EvalStats stats;
  stats.episodes = episodes;
  stats.min_fidelity = 1.0;
  std::vector<double> rewards;
  rewards.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    const RVector obs = env.reset();
    const StepResult sr = env.step(policy(obs));
    rewards.push_back(sr.reward);
    stats.mean_fidelity += sr.true_fidelity;
    stats.min_fidelity = std::min(stats.min_fidelity, sr.true_fidelity);
    stats.max_fidelity = std::max(stats.max_fidelity, sr.true_fidelity);
  }
  for (double r : rewards) stats.mean_reward += r;
  stats.mean_reward /= episodes;
  const auto [mn, mx] = std::minmax_element(rewards.begin(), rewards.end());
  if (*mn != *mx) {  // identical rewards report exactly zero variance
    for (double r : rewards) {
      stats.var_reward += (r - stats.mean_reward) * (r - stats.mean_reward);
    }
    stats.var_reward /= episodes;
  }
  stats.mean_fidelity /= episodes;
  return stats;
}

EvalStats eval_checkpoint(const std::string& prefix, const ExperimentConfig& cfg,
                          std::uint64_t seed, int episodes) {
  auto env = make_env(cfg, seed);
  const int act_dim = env->action_dim();
  if (algorithm_is_sac(cfg.algorithm)) {
    const SacAgent agent = load_sac_checkpoint(prefix, env->obs_dim(), act_dim, cfg.sac.hidden);
    return eval_policy(
        *env, [&](const RVector& obs) { return sac_mean_action(agent, obs); }, episodes);
  }
  const PpoAgent agent = load_ppo_checkpoint(prefix, env->obs_dim(), act_dim, cfg.ppo.hidden);
  return eval_policy(
      *env, [&](const RVector& obs) { return ppo_mean_action(agent, obs); }, episodes);
}

EvalStats eval_saved_pulses(const std::string& path, const ExperimentConfig& cfg,
                            std::uint64_t seed, int episodes) {
  auto env = make_env(cfg, seed);
  auto* pe = dynamic_cast<PulseEnv*>(env.get());
  if (!pe) throw ContractViolation("eval_saved_pulses: config task is not a pulse task");
  const LoadedPulses loaded = load_pulses(path);
  check_pulse_shape(pe->nominal(), loaded.pulses);
  const RVector action = encode_pulses(pe->nominal(), loaded.pulses);
  return eval_policy(
      *env, [&](const RVector&) { return action; }, episodes);
}

void save_sac_checkpoint(const std::string& prefix, const SacAgent& agent) {
  save_checkpoint(prefix, {{"actor", &agent.actor},
                           {"q1", &agent.q1},
                           {"q2", &agent.q2},
                           {"q1_target", &agent.q1_target},
                           {"q2_target", &agent.q2_target}});
}

SacAgent load_sac_checkpoint(const std::string& prefix, int obs_dim, int act_dim,
                             const std::vector<int>& hidden) {
  SacAgent agent = make_sac_agent(obs_dim, act_dim, hidden, 0);
  load_checkpoint(prefix, {{"actor", &agent.actor},
                           {"q1", &agent.q1},
                           {"q2", &agent.q2},
                           {"q1_target", &agent.q1_target},
                           {"q2_target", &agent.q2_target}});
  return agent;
}

void save_ppo_checkpoint(const std::string& prefix, const PpoAgent& agent) {
  save_checkpoint(prefix, {{"policy", &agent.policy}, {"value", &agent.value}},
                  {{"log_std", &agent.log_std}});
}

PpoAgent load_ppo_checkpoint(const std::string& prefix, int obs_dim, int act_dim,
                             const std::vector<int>& hidden) {
  PpoAgent agent = make_ppo_agent(obs_dim, act_dim, hidden, 0.0, 0);
  load_checkpoint(prefix, {{"policy", &agent.policy}, {"value", &agent.value}},
                  {{"log_std", &agent.log_std}});
  return agent;
}

void write_wigner_csv(const std::string& path, const ExperimentConfig& cfg,
                      const QuantumState& state, double extent, int points) {
  const CMatrix rho = reduce_to_cavity_dm(state);
  std::vector<PhasePoint> grid;
  grid.reserve(static_cast<std::size_t>(points) * points);
  for (int ix = 0; ix < points; ++ix) {
    for (int ip = 0; ip < points; ++ip) {
      PhasePoint pt;
      pt.x = -extent + 2.0 * extent * ix / (points - 1);
      pt.p = -extent + 2.0 * extent * ip / (points - 1);
      grid.push_back(pt);
    }
  }
  const std::vector<double> w = wigner_dm(rho, grid);
  std::ostringstream out;
  out << "# qcrl " << kToolkitVersion << "\n";
  out << "# config " << config_hash(cfg) << "\n";
  out << "x,p,w\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out << format_double(grid[i].x) << "," << format_double(grid[i].p) << ","
        << format_double(w[i]) << "\n";
  }
  write_text(path, out.str());
}

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.output_dir);
  const std::string stem = cfg.output_dir + "/seed" + std::to_string(seed);

  SeedResult res;
  res.seed = seed;
  res.metrics_path = stem + "_metrics.csv";

  auto env = make_env(cfg, seed);

  DemoArtifacts demo;
  const bool wants_demo = algorithm_uses_demo(cfg.algorithm);
  if (wants_demo) {
    demo = make_demo(cfg, *env);
    res.demo_nominal_fidelity = demo.nominal_fidelity;
    res.demo_biased_fidelity = demo.biased_fidelity;
    save_best_action(*env, demo.action, stem + "_demo.json");
  }

  RVector best_action;
  std::string metrics;
  if (cfg.budget > 0) {
    if (algorithm_is_sac(cfg.algorithm)) {
      SacTrainResult tr = train_sacfd(*env, demo.demo, cfg.sac, cfg.budget, seed);
      metrics = sac_metrics_csv(cfg, seed, tr.trace);
      res.best_fidelity = tr.best_fidelity;
      res.episodes_run = tr.trace.empty() ? 0 : tr.trace.back().episodes;
      res.episodes_to_threshold = first_crossing(tr.trace, kFidelityThreshold);
      best_action = tr.best_action;
      save_sac_checkpoint(stem + "_agent", tr.agent);
      const RVector obs = env->reset();
      res.final_fidelity = env->step(sac_mean_action(tr.agent, obs)).true_fidelity;
    } else {
      PpoTrainResult tr = run_ppo(*env, demo.demo, cfg.ppo, cfg.budget, seed);
      metrics = ppo_metrics_csv(cfg, seed, tr.trace);
      res.best_fidelity = tr.best_fidelity;
      res.episodes_run = tr.trace.empty() ? 0 : tr.trace.back().episodes;
      res.episodes_to_threshold = first_crossing(tr.trace, kFidelityThreshold);
      best_action = tr.best_action;
      save_ppo_checkpoint(stem + "_agent", tr.agent);
      const RVector obs = env->reset();
      res.final_fidelity = env->step(ppo_mean_action(tr.agent, obs)).true_fidelity;
    }
  } else {
    // Demo-only evaluation; the metrics file keeps its header shape.
    if (algorithm_is_sac(cfg.algorithm)) {
      metrics = sac_metrics_csv(cfg, seed, {});
    } else {
      metrics = ppo_metrics_csv(cfg, seed, {});
    }
    if (!wants_demo) {
      throw ConfigError("run_seed: budget 0 with a from-scratch algorithm evaluates nothing");
    }
    best_action = demo.action;
    res.best_fidelity = demo.biased_fidelity;
    res.final_fidelity = demo.biased_fidelity;
  }
  write_text(res.metrics_path, metrics);

  if (best_action.size() > 0) {
    save_best_action(*env, best_action, stem + "_best.json");
    save_final_state(cfg, *env, best_action, stem);
  }

  res.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json j;
  j["toolkit_version"] = kToolkitVersion;
  j["config_hash"] = config_hash(cfg);
  j["task"] = task_name(cfg.task);
  j["algorithm"] = algorithm_name(cfg.algorithm);
  j["seed"] = seed;
  j["budget"] = cfg.budget;
  j["episodes_run"] = res.episodes_run;
  j["threshold"] = kFidelityThreshold;
  j["episodes_to_threshold"] = res.episodes_to_threshold;
  j["best_fidelity"] = res.best_fidelity;
  j["final_fidelity"] = res.final_fidelity;
  j["demo_nominal_fidelity"] = res.demo_nominal_fidelity;
  j["demo_biased_fidelity"] = res.demo_biased_fidelity;
  j["wall_time_s"] = res.wall_time_s;
  write_text(stem + "_summary.json", j.dump(2) + "\n");
  return res;
}

long median_episodes(std::vector<long> values) {
  if (values.empty()) return -1;
  for (long& v : values) {
    if (v < 0) v = LONG_MAX;
  }
  std::sort(values.begin(), values.end());
  const long m = values[(values.size() - 1) / 2];
  return m == LONG_MAX ? -1 : m;
}

double median_value(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool parallel) {
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir + "/config.ini", serialize_config(cfg));

  ExperimentResult out;
  out.output_dir = cfg.output_dir;
  out.seeds.resize(cfg.seeds.size());

  if (parallel && cfg.seeds.size() > 1) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(cfg.seeds.size());
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      workers.emplace_back([&, i]() {
        try {
          out.seeds[i] = run_seed(cfg, cfg.seeds[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (std::thread& t : workers) t.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      out.seeds[i] = run_seed(cfg, cfg.seeds[i]);
    }
  }

  std::vector<long> eps;
  std::vector<double> fins;
  json per_seed = json::array();
  for (const SeedResult& r : out.seeds) {
    eps.push_back(r.episodes_to_threshold);
    fins.push_back(r.final_fidelity);
    json j;
    j["seed"] = r.seed;
    j["episodes_to_threshold"] = r.episodes_to_threshold;
    j["best_fidelity"] = r.best_fidelity;
    j["final_fidelity"] = r.final_fidelity;
    j["demo_nominal_fidelity"] = r.demo_nominal_fidelity;
    j["demo_biased_fidelity"] = r.demo_biased_fidelity;
    per_seed.push_back(j);
  }
  out.median_episodes_to_threshold = median_episodes(eps);
  out.median_final_fidelity = median_value(fins);

  json j;
  j["toolkit_version"] = kToolkitVersion;
  j["config_hash"] = config_hash(cfg);
  j["task"] = task_name(cfg.task);
  j["algorithm"] = algorithm_name(cfg.algorithm);
  j["threshold"] = kFidelityThreshold;
  j["seeds"] = per_seed;
  j["median_episodes_to_threshold"] = out.median_episodes_to_threshold;
  j["median_final_fidelity"] = out.median_final_fidelity;
  write_text(cfg.output_dir + "/sweep_summary.json", j.dump(2) + "\n");
  return out;
}

}  // namespace qcrl
