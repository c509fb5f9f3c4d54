#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qcrl/env.hpp"
#include "qcrl/grape.hpp"
#include "qcrl/ppo.hpp"
#include "qcrl/sacfd.hpp"

namespace qcrl {

inline constexpr const char* kToolkitVersion = "0.1.0";

enum class Task { Bell, Binomial, Cat, GkpEcd, CatEcd };
enum class Algorithm { Sacfd, Ppo, SacScratch, PpoScratch };

bool task_is_ecd(Task t);
bool algorithm_uses_demo(Algorithm a);
bool algorithm_is_sac(Algorithm a);

const char* task_name(Task t);
const char* algorithm_name(Algorithm a);

// Full experiment description. Frequencies live here in rad/ns (as in the
// physics structs); the text format quotes them in MHz.
struct ExperimentConfig {
  Task task = Task::Bell;
  Algorithm algorithm = Algorithm::Sacfd;
  std::vector<std::uint64_t> seeds = {0};
  int budget = 10000;  // env episodes per seed; 0 = demo evaluation only
  std::string output_dir = "runs/out";

  // Pulse-task system (two-qubit for bell, transmon+cavity otherwise).
  int n_segments = 50;
  double dt_ns = 2.0;
  TwoQubitParams two_qubit;
  KerrParams kerr;

  TargetSpec target;  // kind is fixed by the task; alpha/delta adjustable

  // ECD-task circuit and demo search.
  int ecd_n_q = 2;
  int ecd_n_c = 12;
  int ecd_depth = 5;
  int ecd_demo_restarts = 6;
  int ecd_demo_iters = 300;
  std::uint64_t ecd_demo_seed = 0;

  BiasModel bias;
  RewardMode reward_mode = RewardMode::Exact;
  int shots = 1000;

  GrapeOptions grape;
  SacConfig sac;
  PpoConfig ppo;
};

// Task- and algorithm-specific presets (system geometry, bias, optimizer
// calibration). The resolved dump of this is the full default config.
ExperimentConfig default_config(Task task, Algorithm algorithm);

// One parsed `key = value` occurrence.
struct RawEntry {
  std::string value;
  int line = 0;  // 1-based; 0 for command-line overrides
};

// Section-qualified key ("section.key") -> entry, plus the source label used
// in error messages.
struct RawConfig {
  std::map<std::string, RawEntry> entries;
  std::string source = "config";
};

// Parse the INI-like text: `[section]` headers, `key = value` lines, `#`
// comments (whole-line or trailing). Throws ConfigError with source:line on
// malformed lines, keys outside a section, and duplicate keys.
RawConfig parse_config_text(const std::string& text, const std::string& source);

// Apply a `section.key=value` override string (line recorded as 0).
void apply_override(RawConfig& raw, const std::string& assignment);

// Defaults for the task/algorithm named in the raw entries (or bell/sacfd),
// overlaid with every raw entry. Unknown keys and unparseable values throw
// ConfigError naming source:line; consistency violations name the key.
ExperimentConfig resolve_config(const RawConfig& raw);

// Convenience: parse + overrides + resolve.
ExperimentConfig load_config_text(const std::string& text, const std::string& source,
                                  const std::vector<std::string>& overrides = {});
ExperimentConfig load_config_file(const std::string& path,
                                  const std::vector<std::string>& overrides = {});

// Canonical full dump: every key explicit, fixed ordering, shortest decimal
// that round-trips. resolve(serialize(cfg)) reproduces cfg exactly.
std::string serialize_config(const ExperimentConfig& cfg);

// FNV-1a 64-bit over the canonical serialization (with output_dir
// neutralized, so the hash names the experiment, not its destination),
// as 16 hex digits.
std::uint64_t fnv1a64(const std::string& text);
std::string config_hash(const ExperimentConfig& cfg);

// Shortest printf-style decimal that parses back to exactly x.
std::string format_double(double x);

}  // namespace qcrl
