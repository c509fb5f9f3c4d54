#include "qcrl/config.hpp"

#include <cctype>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace qcrl {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void fail(const std::string& where, const std::string& msg) {
  throw ConfigError(where + ": " + msg);
}

double parse_double(const std::string& v, const std::string& where) {
  const std::string t = trim(v);
  if (t.empty()) fail(where, "empty value, expected a number");
  char* end = nullptr;
  const double x = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) fail(where, "not a number: '" + t + "'");
  return x;
}

long long parse_ll(const std::string& v, const std::string& where) {
  const std::string t = trim(v);
  if (t.empty()) fail(where, "empty value, expected an integer");
  char* end = nullptr;
  const long long x = std::strtoll(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size()) fail(where, "not an integer: '" + t + "'");
  return x;
}

int parse_int(const std::string& v, const std::string& where) {
  const long long x = parse_ll(v, where);
  if (x < INT_MIN || x > INT_MAX) fail(where, "integer out of range: '" + trim(v) + "'");
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& v, const std::string& where) {
  const std::string t = trim(v);
  if (t.empty() || t[0] == '-') fail(where, "expected a non-negative integer, got '" + t + "'");
  char* end = nullptr;
  const unsigned long long x = std::strtoull(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size()) fail(where, "not an integer: '" + t + "'");
  return static_cast<std::uint64_t>(x);
}

bool parse_bool(const std::string& v, const std::string& where) {
  const std::string t = trim(v);
  if (t == "true") return true;
  if (t == "false") return false;
  fail(where, "expected true or false, got '" + t + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> items;
  if (trim(v).empty()) return items;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = v.find(',', start);
    items.push_back(trim(v.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return items;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& v, const std::string& where) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : split_list(v)) out.push_back(parse_u64(item, where));
  return out;
}

std::vector<int> parse_int_list(const std::string& v, const std::string& where) {
  std::vector<int> out;
  for (const std::string& item : split_list(v)) out.push_back(parse_int(item, where));
  return out;
}

Task parse_task(const std::string& v, const std::string& where) {
  const std::string t = trim(v);
  if (t == "bell") return Task::Bell;
  if (t == "binomial") return Task::Binomial;
  if (t == "cat") return Task::Cat;
  if (t == "gkp_ecd") return Task::GkpEcd;
  if (t == "cat_ecd") return Task::CatEcd;
  fail(where, "unknown task '" + t + "' (bell, binomial, cat, gkp_ecd, cat_ecd)");
}

Algorithm parse_algorithm(const std::string& v, const std::string& where) {
  const std::string t = trim(v);
  if (t == "sacfd") return Algorithm::Sacfd;
  if (t == "ppo") return Algorithm::Ppo;
  if (t == "sac_scratch") return Algorithm::SacScratch;
  if (t == "ppo_scratch") return Algorithm::PpoScratch;
  fail(where, "unknown algorithm '" + t + "' (sacfd, ppo, sac_scratch, ppo_scratch)");
}

BiasMode parse_bias_mode(const std::string& v, const std::string& where) {
  const std::string t = trim(v);
  if (t == "none") return BiasMode::None;
  if (t == "deterministic_scale") return BiasMode::DeterministicScale;
  if (t == "random_scale") return BiasMode::RandomScale;
  fail(where, "unknown bias mode '" + t + "' (none, deterministic_scale, random_scale)");
}

FilterSpec::Kind parse_filter_kind(const std::string& v, const std::string& where) {
  const std::string t = trim(v);
  if (t == "none") return FilterSpec::Kind::None;
  if (t == "moving_average") return FilterSpec::Kind::MovingAverage;
  if (t == "lowpass") return FilterSpec::Kind::Lowpass;
  fail(where, "unknown filter '" + t + "' (none, moving_average, lowpass)");
}

RewardMode parse_reward_mode(const std::string& v, const std::string& where) {
  const std::string t = trim(v);
  if (t == "exact") return RewardMode::Exact;
  if (t == "povm") return RewardMode::Povm;
  fail(where, "unknown reward mode '" + t + "' (exact, povm)");
}

double parse_mhz(const std::string& v, const std::string& where) {
  return mhz_to_radns(parse_double(v, where));
}

void apply_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                 const std::string& where) {
  // [run]
  if (key == "run.task") cfg.task = parse_task(value, where);
  else if (key == "run.algorithm") cfg.algorithm = parse_algorithm(value, where);
  else if (key == "run.seeds") cfg.seeds = parse_u64_list(value, where);
  else if (key == "run.budget") cfg.budget = parse_int(value, where);
  else if (key == "run.output_dir") cfg.output_dir = trim(value);
  // [system]
  else if (key == "system.n_segments") cfg.n_segments = parse_int(value, where);
  else if (key == "system.dt_ns") cfg.dt_ns = parse_double(value, where);
  else if (key == "system.omega1_mhz") cfg.two_qubit.omega1 = parse_mhz(value, where);
  else if (key == "system.omega2_mhz") cfg.two_qubit.omega2 = parse_mhz(value, where);
  else if (key == "system.g_max_mhz") cfg.two_qubit.g_max = parse_mhz(value, where);
  else if (key == "system.drive_max_mhz") cfg.two_qubit.drive_max = parse_mhz(value, where);
  else if (key == "system.n_q") cfg.kerr.n_q = parse_int(value, where);
  else if (key == "system.n_c") cfg.kerr.n_c = parse_int(value, where);
  else if (key == "system.detune_c_mhz") cfg.kerr.d_omega_c = parse_mhz(value, where);
  else if (key == "system.detune_q_mhz") cfg.kerr.d_omega_q = parse_mhz(value, where);
  else if (key == "system.chi_mhz") cfg.kerr.chi = parse_mhz(value, where);
  else if (key == "system.e_c_mhz") cfg.kerr.e_c = parse_mhz(value, where);
  else if (key == "system.k_self_mhz") cfg.kerr.k_self = parse_mhz(value, where);
  else if (key == "system.chi_prime_mhz") cfg.kerr.chi_prime = parse_mhz(value, where);
  else if (key == "system.cavity_drive_max_mhz")
    cfg.kerr.cavity_drive_max = parse_mhz(value, where);
  else if (key == "system.qubit_drive_max_mhz")
    cfg.kerr.qubit_drive_max = parse_mhz(value, where);
  // [target]
  else if (key == "target.alpha") cfg.target.alpha = parse_double(value, where);
  else if (key == "target.delta") cfg.target.delta = parse_double(value, where);
  // [ecd]
  else if (key == "ecd.n_q") cfg.ecd_n_q = parse_int(value, where);
  else if (key == "ecd.n_c") cfg.ecd_n_c = parse_int(value, where);
  else if (key == "ecd.depth") cfg.ecd_depth = parse_int(value, where);
  else if (key == "ecd.demo_restarts") cfg.ecd_demo_restarts = parse_int(value, where);
  else if (key == "ecd.demo_iters") cfg.ecd_demo_iters = parse_int(value, where);
  else if (key == "ecd.demo_seed") cfg.ecd_demo_seed = parse_u64(value, where);
  // [bias]
  else if (key == "bias.mode") cfg.bias.mode = parse_bias_mode(value, where);
  else if (key == "bias.level") cfg.bias.level = parse_double(value, where);
  else if (key == "bias.seed") cfg.bias.seed = parse_u64(value, where);
  else if (key == "bias.filter") cfg.bias.filter.kind = parse_filter_kind(value, where);
  else if (key == "bias.filter_window") cfg.bias.filter.window = parse_int(value, where);
  else if (key == "bias.filter_cutoff_mhz")
    cfg.bias.filter.cutoff_mhz = parse_double(value, where);
  // [reward]
  else if (key == "reward.mode") cfg.reward_mode = parse_reward_mode(value, where);
  else if (key == "reward.shots") cfg.shots = parse_int(value, where);
  // [grape]
  else if (key == "grape.max_iters") cfg.grape.max_iters = parse_int(value, where);
  else if (key == "grape.alpha0") cfg.grape.alpha0 = parse_double(value, where);
  else if (key == "grape.stop_fidelity") cfg.grape.stop_fidelity = parse_double(value, where);
  else if (key == "grape.grad_tol") cfg.grape.grad_tol = parse_double(value, where);
  else if (key == "grape.max_backtracks") cfg.grape.max_backtracks = parse_int(value, where);
  else if (key == "grape.seed") cfg.grape.seed = parse_u64(value, where);
  else if (key == "grape.init_noise_frac")
    cfg.grape.init_noise_frac = parse_double(value, where);
  // [sac]
  else if (key == "sac.gamma") cfg.sac.gamma = parse_double(value, where);
  else if (key == "sac.alpha") cfg.sac.alpha = parse_double(value, where);
  else if (key == "sac.tau") cfg.sac.tau = parse_double(value, where);
  else if (key == "sac.mu") cfg.sac.mu = parse_double(value, where);
  else if (key == "sac.lambda_bc0") cfg.sac.lambda_bc0 = parse_double(value, where);
  else if (key == "sac.bc_decay_tau") cfg.sac.bc_decay_tau = parse_double(value, where);
  else if (key == "sac.bc_warmup_iters") cfg.sac.bc_warmup_iters = parse_int(value, where);
  else if (key == "sac.bc_warmup_lr") cfg.sac.bc_warmup_lr = parse_double(value, where);
  else if (key == "sac.batch") cfg.sac.batch = parse_int(value, where);
  else if (key == "sac.lr") cfg.sac.lr = parse_double(value, where);
  else if (key == "sac.log_std_init") cfg.sac.log_std_init = parse_double(value, where);
  else if (key == "sac.env_steps_per_update")
    cfg.sac.env_steps_per_update = parse_int(value, where);
  else if (key == "sac.hidden") cfg.sac.hidden = parse_int_list(value, where);
  else if (key == "sac.replay_capacity") {
    cfg.sac.replay_capacity = static_cast<std::size_t>(parse_u64(value, where));
  }
  // [ppo]
  else if (key == "ppo.clip_eps") cfg.ppo.clip_eps = parse_double(value, where);
  else if (key == "ppo.gamma") cfg.ppo.gamma = parse_double(value, where);
  else if (key == "ppo.lambda_ent") cfg.ppo.lambda_ent = parse_double(value, where);
  else if (key == "ppo.rollout_size") cfg.ppo.rollout_size = parse_int(value, where);
  else if (key == "ppo.epochs_per_update")
    cfg.ppo.epochs_per_update = parse_int(value, where);
  else if (key == "ppo.minibatch") cfg.ppo.minibatch = parse_int(value, where);
  else if (key == "ppo.lr") cfg.ppo.lr = parse_double(value, where);
  else if (key == "ppo.pretrain_iters") cfg.ppo.pretrain_iters = parse_int(value, where);
  else if (key == "ppo.pretrain_lr") cfg.ppo.pretrain_lr = parse_double(value, where);
  else if (key == "ppo.reward_norm") cfg.ppo.reward_norm = parse_bool(value, where);
  else if (key == "ppo.kl_stop") cfg.ppo.kl_stop = parse_double(value, where);
  else if (key == "ppo.log_std_init") cfg.ppo.log_std_init = parse_double(value, where);
  else if (key == "ppo.hidden") cfg.ppo.hidden = parse_int_list(value, where);
  else fail(where, "unknown key '" + key + "'");
}

void validate(const ExperimentConfig& cfg, const std::string& source) {
  const auto bad = [&](const std::string& msg) { fail(source, msg); };
  if (cfg.seeds.empty()) bad("run.seeds: at least one seed required");
  if (cfg.budget < 0) bad("run.budget: negative episode budget");
  if (cfg.output_dir.empty()) bad("run.output_dir: empty");
  if (cfg.n_segments < 1) bad("system.n_segments: must be >= 1");
  if (!(cfg.dt_ns > 0.0)) bad("system.dt_ns: must be > 0");
  if (cfg.kerr.n_q < 2) bad("system.n_q: must be >= 2");
  if (cfg.kerr.n_c < 2) bad("system.n_c: must be >= 2");
  if (cfg.ecd_n_q < 2) bad("ecd.n_q: must be >= 2");
  if (cfg.ecd_n_c < 2) bad("ecd.n_c: must be >= 2");
  if (cfg.ecd_depth < 1) bad("ecd.depth: must be >= 1");
  if (cfg.ecd_demo_restarts < 0) bad("ecd.demo_restarts: negative");
  if (cfg.ecd_demo_iters < 0) bad("ecd.demo_iters: negative");
  if (cfg.bias.level < 0.0) bad("bias.level: negative");
  if (cfg.bias.filter.kind == FilterSpec::Kind::MovingAverage &&
      (cfg.bias.filter.window < 1 || cfg.bias.filter.window % 2 == 0)) {
    bad("bias.filter_window: moving average needs an odd width >= 1");
  }
  if (cfg.bias.filter.kind == FilterSpec::Kind::Lowpass && !(cfg.bias.filter.cutoff_mhz > 0.0)) {
    bad("bias.filter_cutoff_mhz: must be > 0");
  }
  if (task_is_ecd(cfg.task) && cfg.bias.filter.kind != FilterSpec::Kind::None) {
    bad("bias.filter: pulse filters do not apply to gate tasks");
  }
  if (cfg.shots < 1) bad("reward.shots: must be >= 1");
  if (cfg.task == Task::Cat || cfg.task == Task::CatEcd) {
    if (!(cfg.target.alpha > 0.0)) bad("target.alpha: must be > 0");
  }
  if (cfg.task == Task::GkpEcd) {
    if (!(cfg.target.delta > 0.0) || cfg.target.delta >= 1.0) {
      bad("target.delta: must be in (0, 1)");
    }
  }
  if (cfg.grape.max_iters < 0) bad("grape.max_iters: negative");
  if (cfg.sac.mu < 0.0 || cfg.sac.mu > 1.0) bad("sac.mu: must be in [0, 1]");
  if (cfg.sac.batch < 1) bad("sac.batch: must be >= 1");
  if (cfg.sac.replay_capacity < 1) bad("sac.replay_capacity: must be >= 1");
  if (!(cfg.sac.alpha > 0.0)) bad("sac.alpha: must be > 0");
  if (cfg.sac.log_std_init < kLogStdMin || cfg.sac.log_std_init > kLogStdMax) {
    bad("sac.log_std_init: must be within the log-std clamp range");
  }
  if (cfg.sac.bc_warmup_iters < 0) bad("sac.bc_warmup_iters: must be >= 0");
  if (!(cfg.sac.bc_warmup_lr > 0.0)) bad("sac.bc_warmup_lr: must be > 0");
  if (cfg.ppo.rollout_size < 1) bad("ppo.rollout_size: must be >= 1");
  if (cfg.ppo.minibatch < 1) bad("ppo.minibatch: must be >= 1");
  if (cfg.ppo.epochs_per_update < 1) bad("ppo.epochs_per_update: must be >= 1");
  if (cfg.ppo.pretrain_iters < 0) bad("ppo.pretrain_iters: negative");
  if (!(cfg.ppo.clip_eps > 0.0)) bad("ppo.clip_eps: must be > 0");
}

// Shortest decimal m with mhz_to_radns(m) == w, searching a few ulps around
// the direct conversion; every value that entered through mhz_to_radns has
// an exact preimage within this range.
std::string format_mhz(double w_radns) {
  const double m0 = radns_to_mhz(w_radns);
  double up = m0;
  double dn = m0;
  for (int step = 0; step < 5; ++step) {
    if (mhz_to_radns(up) == w_radns) return format_double(up);
    if (mhz_to_radns(dn) == w_radns) return format_double(dn);
    up = std::nextafter(up, HUGE_VAL);
    dn = std::nextafter(dn, -HUGE_VAL);
  }
  throw ContractViolation("format_mhz: no exact MHz preimage near " + format_double(m0));
}

void kv(std::ostringstream& out, const char* key, const std::string& value) {
  out << key << " = " << value << "\n";
}

void kv(std::ostringstream& out, const char* key, double value) {
  kv(out, key, format_double(value));
}

void kv(std::ostringstream& out, const char* key, int value) {
  kv(out, key, std::to_string(value));
}

void kv(std::ostringstream& out, const char* key, std::uint64_t value) {
  kv(out, key, std::to_string(value));
}

void kv(std::ostringstream& out, const char* key, bool value) {
  kv(out, key, std::string(value ? "true" : "false"));
}

void kv_mhz(std::ostringstream& out, const char* key, double w_radns) {
  kv(out, key, format_mhz(w_radns));
}

template <typename T>
void kv_list(std::ostringstream& out, const char* key, const std::vector<T>& values) {
  std::string joined;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) joined += ", ";
    joined += std::to_string(values[i]);
  }
  kv(out, key, joined);
}

}  // namespace

bool task_is_ecd(Task t) { return t == Task::GkpEcd || t == Task::CatEcd; }

bool algorithm_uses_demo(Algorithm a) {
  return a == Algorithm::Sacfd || a == Algorithm::Ppo;
}

bool algorithm_is_sac(Algorithm a) {
  return a == Algorithm::Sacfd || a == Algorithm::SacScratch;
}

const char* task_name(Task t) {
  switch (t) {
    case Task::Bell: return "bell";
    case Task::Binomial: return "binomial";
    case Task::Cat: return "cat";
    case Task::GkpEcd: return "gkp_ecd";
    case Task::CatEcd: return "cat_ecd";
  }
  return "?";
}

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Sacfd: return "sacfd";
    case Algorithm::Ppo: return "ppo";
    case Algorithm::SacScratch: return "sac_scratch";
    case Algorithm::PpoScratch: return "ppo_scratch";
  }
  return "?";
}

ExperimentConfig default_config(Task task, Algorithm algorithm) {
  ExperimentConfig cfg;
  cfg.task = task;
  cfg.algorithm = algorithm;
  cfg.seeds = {0};

  // Small nets train much faster at these action dimensions and lose nothing
  // measurable on single-step episodes.
  cfg.sac.hidden = {128, 128};
  cfg.ppo.hidden = {128, 128};

  switch (task) {
    case Task::Bell:
      cfg.budget = 10000;
      cfg.n_segments = 50;
      cfg.dt_ns = 2.0;
      cfg.bias.mode = BiasMode::DeterministicScale;
      cfg.bias.level = 0.25;
      cfg.grape.stop_fidelity = 0.9999;
      cfg.grape.max_iters = 300;
      cfg.sac.alpha = 1e-4;
      cfg.output_dir = "runs/bell";
      break;
    case Task::Binomial:
      cfg.budget = 20000;
      cfg.n_segments = 40;
      cfg.dt_ns = 8.0;
      cfg.bias.mode = BiasMode::None;
      cfg.bias.level = 0.0;
      // A deliberately imperfect demo; training closes the rest of the gap.
      cfg.grape.stop_fidelity = 0.85;
      cfg.grape.max_iters = 400;
      cfg.sac.alpha = 5e-5;
      cfg.output_dir = "runs/binomial";
      break;
    case Task::Cat:
      cfg.budget = 10000;
      cfg.n_segments = 40;
      cfg.dt_ns = 8.0;
      cfg.target.alpha = 1.5;
      cfg.bias.mode = BiasMode::None;
      cfg.bias.level = 0.0;
      cfg.bias.filter.kind = FilterSpec::Kind::Lowpass;
      cfg.bias.filter.cutoff_mhz = 31.25;
      cfg.grape.stop_fidelity = 0.995;
      cfg.grape.max_iters = 400;
      cfg.sac.alpha = 5e-5;
      cfg.output_dir = "runs/cat";
      break;
    case Task::GkpEcd:
      cfg.budget = 20000;
      cfg.ecd_n_c = 14;
      cfg.ecd_depth = 10;
      cfg.target.delta = 0.3;
      cfg.bias.mode = BiasMode::DeterministicScale;
      cfg.bias.level = 0.25;
      cfg.ecd_demo_restarts = 8;
      cfg.ecd_demo_iters = 400;
      cfg.sac.alpha = 1e-3;
      cfg.output_dir = "runs/gkp_ecd";
      break;
    case Task::CatEcd:
      cfg.budget = 20000;
      cfg.ecd_n_c = 12;
      cfg.ecd_depth = 5;
      cfg.target.alpha = 2.0;
      cfg.bias.mode = BiasMode::DeterministicScale;
      cfg.bias.level = 0.25;
      cfg.ecd_demo_restarts = 8;
      cfg.ecd_demo_iters = 400;
      cfg.sac.alpha = 1e-3;
      cfg.output_dir = "runs/cat_ecd";
      break;
  }

  if (task == Task::Bell) {
    cfg.target.kind = TargetKind::Bell;
  } else if (task == Task::Binomial) {
    cfg.target.kind = TargetKind::Binomial;
  } else if (task == Task::Cat || task == Task::CatEcd) {
    cfg.target.kind = TargetKind::Cat;
  } else {
    cfg.target.kind = TargetKind::Gkp;
  }

  // Scratch variants carry their demo-free settings explicitly so the
  // resolved dump reads true.
  if (algorithm == Algorithm::SacScratch) {
    cfg.sac.mu = 0.0;
    cfg.sac.lambda_bc0 = 0.0;
  }
  if (algorithm == Algorithm::PpoScratch) {
    cfg.ppo.pretrain_iters = 0;
  }
  return cfg;
}

RawConfig parse_config_text(const std::string& text, const std::string& source) {
  RawConfig raw;
  raw.source = source;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail(where, "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) fail(where, "empty section name");
      for (char c : section) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') {
          fail(where, "bad section name '" + section + "'");
        }
      }
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) fail(where, "expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) fail(where, "empty key");
    if (section.empty()) fail(where, "key '" + key + "' outside any [section]");
    const std::string full = section + "." + key;
    if (raw.entries.count(full)) {
      fail(where, "duplicate key '" + full + "' (first at line " +
                      std::to_string(raw.entries[full].line) + ")");
    }
    raw.entries[full] = RawEntry{value, lineno};
  }
  return raw;
}

void apply_override(RawConfig& raw, const std::string& assignment) {
  const std::string where = raw.source + ": override '" + assignment + "'";
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) fail(where, "expected section.key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.') {
    fail(where, "key must be section.key");
  }
  raw.entries[key] = RawEntry{value, 0};  // overrides replace silently
}

ExperimentConfig resolve_config(const RawConfig& raw) {
  const auto where_of = [&](const RawEntry& e) {
    return e.line > 0 ? raw.source + ":" + std::to_string(e.line)
                      : raw.source + ": override";
  };

  Task task = Task::Bell;
  Algorithm algorithm = Algorithm::Sacfd;
  if (auto it = raw.entries.find("run.task"); it != raw.entries.end()) {
    task = parse_task(it->second.value, where_of(it->second));
  }
  if (auto it = raw.entries.find("run.algorithm"); it != raw.entries.end()) {
    algorithm = parse_algorithm(it->second.value, where_of(it->second));
  }

  ExperimentConfig cfg = default_config(task, algorithm);
  for (const auto& [key, entry] : raw.entries) {
    apply_entry(cfg, key, entry.value, where_of(entry));
  }
  validate(cfg, raw.source);
  return cfg;
}

ExperimentConfig load_config_text(const std::string& text, const std::string& source,
                                  const std::vector<std::string>& overrides) {
  RawConfig raw = parse_config_text(text, source);
  for (const std::string& o : overrides) apply_override(raw, o);
  return resolve_config(raw);
}

ExperimentConfig load_config_file(const std::string& path,
                                  const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_config_text(buf.str(), path, overrides);
}

std::string format_double(double x) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) return buf;
  }
  return buf;  // %.17g always round-trips
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "# resolved experiment configuration, toolkit " << kToolkitVersion << "\n";
  out << "\n[run]\n";
  kv(out, "task", std::string(task_name(cfg.task)));
  kv(out, "algorithm", std::string(algorithm_name(cfg.algorithm)));
  kv_list(out, "seeds", cfg.seeds);
  kv(out, "budget", cfg.budget);
  kv(out, "output_dir", cfg.output_dir);

  out << "\n[system]\n";
  kv(out, "n_segments", cfg.n_segments);
  kv(out, "dt_ns", cfg.dt_ns);
  kv_mhz(out, "omega1_mhz", cfg.two_qubit.omega1);
  kv_mhz(out, "omega2_mhz", cfg.two_qubit.omega2);
  kv_mhz(out, "g_max_mhz", cfg.two_qubit.g_max);
  kv_mhz(out, "drive_max_mhz", cfg.two_qubit.drive_max);
  kv(out, "n_q", cfg.kerr.n_q);
  kv(out, "n_c", cfg.kerr.n_c);
  kv_mhz(out, "detune_c_mhz", cfg.kerr.d_omega_c);
  kv_mhz(out, "detune_q_mhz", cfg.kerr.d_omega_q);
  kv_mhz(out, "chi_mhz", cfg.kerr.chi);
  kv_mhz(out, "e_c_mhz", cfg.kerr.e_c);
  kv_mhz(out, "k_self_mhz", cfg.kerr.k_self);
  kv_mhz(out, "chi_prime_mhz", cfg.kerr.chi_prime);
  kv_mhz(out, "cavity_drive_max_mhz", cfg.kerr.cavity_drive_max);
  kv_mhz(out, "qubit_drive_max_mhz", cfg.kerr.qubit_drive_max);

  out << "\n[target]\n";
  kv(out, "alpha", cfg.target.alpha);
  kv(out, "delta", cfg.target.delta);

  out << "\n[ecd]\n";
  kv(out, "n_q", cfg.ecd_n_q);
  kv(out, "n_c", cfg.ecd_n_c);
  kv(out, "depth", cfg.ecd_depth);
  kv(out, "demo_restarts", cfg.ecd_demo_restarts);
  kv(out, "demo_iters", cfg.ecd_demo_iters);
  kv(out, "demo_seed", cfg.ecd_demo_seed);

  out << "\n[bias]\n";
  switch (cfg.bias.mode) {
    case BiasMode::None: kv(out, "mode", std::string("none")); break;
    case BiasMode::DeterministicScale:
      kv(out, "mode", std::string("deterministic_scale"));
      break;
    case BiasMode::RandomScale: kv(out, "mode", std::string("random_scale")); break;
  }
  kv(out, "level", cfg.bias.level);
  kv(out, "seed", cfg.bias.seed);
  switch (cfg.bias.filter.kind) {
    case FilterSpec::Kind::None: kv(out, "filter", std::string("none")); break;
    case FilterSpec::Kind::MovingAverage:
      kv(out, "filter", std::string("moving_average"));
      break;
    case FilterSpec::Kind::Lowpass: kv(out, "filter", std::string("lowpass")); break;
  }
  kv(out, "filter_window", cfg.bias.filter.window);
  kv(out, "filter_cutoff_mhz", cfg.bias.filter.cutoff_mhz);

  out << "\n[reward]\n";
  kv(out, "mode", std::string(cfg.reward_mode == RewardMode::Exact ? "exact" : "povm"));
  kv(out, "shots", cfg.shots);

  out << "\n[grape]\n";
  kv(out, "max_iters", cfg.grape.max_iters);
  kv(out, "alpha0", cfg.grape.alpha0);
  kv(out, "stop_fidelity", cfg.grape.stop_fidelity);
  kv(out, "grad_tol", cfg.grape.grad_tol);
  kv(out, "max_backtracks", cfg.grape.max_backtracks);
  kv(out, "seed", cfg.grape.seed);
  kv(out, "init_noise_frac", cfg.grape.init_noise_frac);

  out << "\n[sac]\n";
  kv(out, "gamma", cfg.sac.gamma);
  kv(out, "alpha", cfg.sac.alpha);
  kv(out, "tau", cfg.sac.tau);
  kv(out, "mu", cfg.sac.mu);
  kv(out, "lambda_bc0", cfg.sac.lambda_bc0);
  kv(out, "bc_decay_tau", cfg.sac.bc_decay_tau);
  kv(out, "bc_warmup_iters", cfg.sac.bc_warmup_iters);
  kv(out, "bc_warmup_lr", cfg.sac.bc_warmup_lr);
  kv(out, "batch", cfg.sac.batch);
  kv(out, "lr", cfg.sac.lr);
  kv(out, "log_std_init", cfg.sac.log_std_init);
  kv(out, "env_steps_per_update", cfg.sac.env_steps_per_update);
  kv_list(out, "hidden", cfg.sac.hidden);
  kv(out, "replay_capacity", static_cast<std::uint64_t>(cfg.sac.replay_capacity));

  out << "\n[ppo]\n";
  kv(out, "clip_eps", cfg.ppo.clip_eps);
  kv(out, "gamma", cfg.ppo.gamma);
  kv(out, "lambda_ent", cfg.ppo.lambda_ent);
  kv(out, "rollout_size", cfg.ppo.rollout_size);
  kv(out, "epochs_per_update", cfg.ppo.epochs_per_update);
  kv(out, "minibatch", cfg.ppo.minibatch);
  kv(out, "lr", cfg.ppo.lr);
  kv(out, "pretrain_iters", cfg.ppo.pretrain_iters);
  kv(out, "pretrain_lr", cfg.ppo.pretrain_lr);
  kv(out, "reward_norm", cfg.ppo.reward_norm);
  kv(out, "kl_stop", cfg.ppo.kl_stop);
  kv(out, "log_std_init", cfg.ppo.log_std_init);
  kv_list(out, "hidden", cfg.ppo.hidden);
  return out.str();
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // The hash identifies experiment content; where the artifacts land is not
  // part of it, so a relocated re-run still matches its own header stamps.
  ExperimentConfig keyed = cfg;
  keyed.output_dir = ".";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(serialize_config(keyed))));
  return buf;
}

}  // namespace qcrl
