#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "qcrl/experiment.hpp"
#include "qcrl/grape.hpp"
#include "qcrl/net.hpp"

namespace fs = std::filesystem;
using namespace qcrl;

namespace {

// Gates, pinned. A criterion fails rather than bends.
constexpr double kPropagatorTol = 1e-9;     // propagator vs Taylor series
constexpr double kGrapeGradTol = 1e-5;      // analytic vs central-difference gradient
constexpr double kMlpGradTol = 1e-4;        // backprop vs central differences
constexpr double kOracleBudgetS = 60.0;     // criterion 1 wall-clock budget
constexpr double kDemoCeiling = 0.97;       // biased demo must land below this
constexpr double kRecoverFloor = 0.995;     // bell recovery target
constexpr double kEfficiencyRatio = 0.65;   // demo-seeded vs scratch episode ratio
constexpr double kScratchCap = 0.9;         // scratch must stay below, 160-dim task
constexpr double kRlfdFloor = 0.98;         // demo-seeded must exceed, 160-dim task
constexpr double kDemoBand[2] = {0.80, 0.90};  // "about 0.85" demo for the bosonic task
constexpr double kCatEcdFloor = 0.98;
constexpr double kGkpEcdFloor = 0.95;
constexpr double kEcdDemoGap = 0.05;        // training must beat the biased demo by this
constexpr double kWignerSymTol = 1e-8;
const std::vector<double> kCutoffsMhz = {6.25, 31.25, 81.25};

void banner(int n, const std::string& name, bool pass, const std::string& detail) {
  std::printf("criterion %d (%s): %s%s%s\n", n, name.c_str(), pass ? "PASS" : "FAIL",
              detail.empty() ? "" : " ", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double median_member(const std::vector<SeedResult>& seeds, double SeedResult::*m) {
  std::vector<double> v;
  for (const SeedResult& r : seeds) v.push_back(r.*m);
  return median_value(std::move(v));
}

long median_crossing(const std::vector<SeedResult>& seeds) {
  std::vector<long> v;
  for (const SeedResult& r : seeds) v.push_back(r.episodes_to_threshold);
  return median_episodes(std::move(v));
}

// The training studies behind criteria 2-6, cached so the bell runs are
// shared between the recovery and efficiency checks. Keyed by output dir.
const ExperimentResult& cached_run(const ExperimentConfig& cfg) {
  static std::map<std::string, ExperimentResult> cache;
  auto it = cache.find(cfg.output_dir);
  if (it == cache.end()) {
    it = cache.emplace(cfg.output_dir, run_experiment(cfg, true)).first;
  }
  return it->second;
}

ExperimentConfig study_config(Task task, Algorithm algo, int n_seeds, const std::string& name) {
  ExperimentConfig cfg = default_config(task, algo);
  cfg.seeds.clear();
  for (int s = 0; s < n_seeds; ++s) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  cfg.output_dir = "acceptance_runs/" + name;
  return cfg;
}

}  // namespace

TEST_CASE("oracle and invariant suite") {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  // Propagator against a long Taylor series of exp(-i H dt).
  double prop_err = 0.0;
  for (int inst = 0; inst < 5; ++inst) {
    const int n = 4 + inst;
    CMatrix h(n, n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) h(r, c) = Complex(gauss(rng), gauss(rng));
    }
    h = ((h + dagger(h)) / 2.0).eval();
    const double dt = 0.7 + 0.2 * inst;
    const CMatrix u = propagator(h, dt);
    CMatrix taylor = CMatrix::Identity(n, n);
    CMatrix term = CMatrix::Identity(n, n);
    for (int k = 1; k <= 60; ++k) {
      term = (term * (Complex(0.0, -1.0) * dt / double(k)) * h).eval();
      taylor += term;
    }
    prop_err = std::max(prop_err, (u - taylor).cwiseAbs().maxCoeff());
  }

  // GRAPE gradient against central differences, every pulse entry, 20 random
  // pulse tables on a short-horizon two-qubit system.
  ExperimentConfig bell = default_config(Task::Bell, Algorithm::Sacfd);
  bell.n_segments = 8;
  const SystemSpec sys = make_system(bell);
  const QuantumState psi0 = ground_state(sys);
  const QuantumState target = make_task_target(bell);
  double grape_err = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    PulseSet p = random_initial_pulses(sys, 100 + inst, 0.5);
    const auto [fid, grad] = grape_gradient(sys, p, psi0, target);
    (void)fid;
    const double eps = 1e-6;
    for (int k = 0; k < p.n_channels(); ++k) {
      for (int j = 0; j < p.n_segments(); ++j) {
        const double saved = p.u(k, j);
        p.u(k, j) = saved + eps;
        const double f_plus = fidelity(propagate(sys, p, psi0), target);
        p.u(k, j) = saved - eps;
        const double f_minus = fidelity(propagate(sys, p, psi0), target);
        p.u(k, j) = saved;
        const double fd = (f_plus - f_minus) / (2.0 * eps);
        const double scale = std::max({std::abs(fd), std::abs(grad(k, j)), 1e-8});
        grape_err = std::max(grape_err, std::abs(fd - grad(k, j)) / scale);
      }
    }
  }

  // MLP backprop against central differences on loss = sum(w . y), 20 random
  // nets mixing activations, layer norm, and batch sizes.
  double mlp_err = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    MlpSpec spec;
    spec.sizes = {3, 6, 5, 2};
    spec.hidden = (inst % 2 == 0) ? Activation::Relu : Activation::Tanh;
    spec.layer_norm = (inst % 3 == 0);
    MlpNet net(spec, 1000 + inst);
    const int batch = 1 + inst % 4;
    RMatrix x(3, batch), w(2, batch);
    for (int i = 0; i < x.size(); ++i) x(i) = uni(rng);
    for (int i = 0; i < w.size(); ++i) w(i) = uni(rng);

    MlpNet::Cache cache;
    net.forward(x, cache);
    std::vector<RMatrix> grads = net.zero_grads();
    net.backward(cache, w, grads);

    auto loss = [&]() { return (w.array() * net.forward(x).array()).sum(); };
    std::vector<RMatrix*> params = net.params();
    const double eps = 1e-6;
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (int i = 0; i < params[b]->size(); ++i) {
        double& p = (*params[b])(i);
        const double saved = p;
        p = saved + eps;
        const double l_plus = loss();
        p = saved - eps;
        const double l_minus = loss();
        p = saved;
        const double fd = (l_plus - l_minus) / (2.0 * eps);
        const double scale = std::max({std::abs(fd), std::abs(grads[b](i)), 1e-6});
        mlp_err = std::max(mlp_err, std::abs(fd - grads[b](i)) / scale);
      }
    }
  }

  // Module invariants: every unit binary next to this one, exit code 0.
  const fs::path bin_dir = fs::read_symlink("/proc/self/exe").parent_path();
  const std::vector<std::string> units = {
      "test_qmath", "test_model", "test_dynamics", "test_grape",  "test_env",       "test_net",
      "test_buffers", "test_sacfd", "test_ppo",    "test_config", "test_experiment"};
  int units_failed = 0;
  for (const std::string& u : units) {
    const std::string cmd = (bin_dir / u).string() + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) ++units_failed;
  }

  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = prop_err <= kPropagatorTol && grape_err <= kGrapeGradTol &&
                    mlp_err <= kMlpGradTol && units_failed == 0 && elapsed < kOracleBudgetS;
  banner(1, "oracles and invariants", pass,
         "propagator " + fmt(prop_err) + ", grape " + fmt(grape_err) + ", mlp " + fmt(mlp_err) +
             ", unit failures " + std::to_string(units_failed) + ", " + fmt(elapsed) + "s");
  CHECK(prop_err <= kPropagatorTol);
  CHECK(grape_err <= kGrapeGradTol);
  CHECK(mlp_err <= kMlpGradTol);
  CHECK(units_failed == 0);
  CHECK(elapsed < kOracleBudgetS);
}

TEST_CASE("bell recovery from a biased demonstration") {
  const ExperimentResult& sac = cached_run(study_config(Task::Bell, Algorithm::Sacfd, 5, "bell_sacfd"));
  const ExperimentResult& ppo = cached_run(study_config(Task::Bell, Algorithm::Ppo, 5, "bell_ppo"));

  const double demo_med = median_member(sac.seeds, &SeedResult::demo_biased_fidelity);
  const double sac_best = median_member(sac.seeds, &SeedResult::best_fidelity);
  const double ppo_best = median_member(ppo.seeds, &SeedResult::best_fidelity);

  const bool pass = demo_med < kDemoCeiling && sac_best >= kRecoverFloor && ppo_best >= kRecoverFloor;
  banner(2, "bell recovery", pass,
         "demo " + fmt(demo_med) + ", sacfd " + fmt(sac_best) + ", ppo " + fmt(ppo_best) +
             " (median of 5 seeds)");
  CHECK(demo_med < kDemoCeiling);
  CHECK(sac_best >= kRecoverFloor);
  CHECK(ppo_best >= kRecoverFloor);
}

TEST_CASE("demonstrations buy sample efficiency") {
  const ExperimentResult& sacfd = cached_run(study_config(Task::Bell, Algorithm::Sacfd, 5, "bell_sacfd"));
  const ExperimentResult& scratch =
      cached_run(study_config(Task::Bell, Algorithm::SacScratch, 5, "bell_sac_scratch"));

  const long fd_med = median_crossing(sacfd.seeds);
  const long scratch_med = median_crossing(scratch.seeds);
  const int budget = default_config(Task::Bell, Algorithm::Sacfd).budget;
  // A scratch run that never crosses counts as the full budget, which only
  // makes the ratio harder to fail in the wrong direction.
  const double scratch_eff = scratch_med < 0 ? double(budget) : double(scratch_med);

  const bool pass = fd_med > 0 && double(fd_med) <= kEfficiencyRatio * scratch_eff;
  banner(3, "sample efficiency", pass,
         "sacfd " + std::to_string(fd_med) + " episodes vs scratch " +
             (scratch_med < 0 ? ">" + std::to_string(budget) : std::to_string(scratch_med)) +
             " (threshold " + fmt(kFidelityThreshold) + ")");
  CHECK(fd_med > 0);
  CHECK(double(fd_med) <= kEfficiencyRatio * scratch_eff);
}

TEST_CASE("high-dimensional task needs the demonstration") {
  const int kSeeds = 3;
  const ExperimentResult& sacfd =
      cached_run(study_config(Task::Binomial, Algorithm::Sacfd, kSeeds, "binomial_sacfd"));
  const ExperimentResult& ppofd =
      cached_run(study_config(Task::Binomial, Algorithm::Ppo, kSeeds, "binomial_ppo"));
  const ExperimentResult& sac0 =
      cached_run(study_config(Task::Binomial, Algorithm::SacScratch, kSeeds, "binomial_sac_scratch"));
  const ExperimentResult& ppo0 =
      cached_run(study_config(Task::Binomial, Algorithm::PpoScratch, kSeeds, "binomial_ppo_scratch"));

  const double demo_med = median_member(sacfd.seeds, &SeedResult::demo_nominal_fidelity);
  const double sacfd_best = median_member(sacfd.seeds, &SeedResult::best_fidelity);
  const double ppofd_best = median_member(ppofd.seeds, &SeedResult::best_fidelity);
  const double sac0_best = median_member(sac0.seeds, &SeedResult::best_fidelity);
  const double ppo0_best = median_member(ppo0.seeds, &SeedResult::best_fidelity);
  const double sacfd_final = median_member(sacfd.seeds, &SeedResult::final_fidelity);
  const double ppofd_final = median_member(ppofd.seeds, &SeedResult::final_fidelity);

  const bool demo_ok = demo_med >= kDemoBand[0] && demo_med <= kDemoBand[1];
  const bool pass = demo_ok && sac0_best < kScratchCap && ppo0_best < kScratchCap &&
                    sacfd_best > kRlfdFloor && ppofd_best > kRlfdFloor &&
                    ppofd_final >= sacfd_final;
  banner(4, "from-scratch failure at 160 dims", pass,
         "demo " + fmt(demo_med) + ", scratch sac " + fmt(sac0_best) + " ppo " + fmt(ppo0_best) +
             ", demo-seeded sac " + fmt(sacfd_best) + " ppo " + fmt(ppofd_best) + ", finals " +
             fmt(sacfd_final) + "/" + fmt(ppofd_final));
  CHECK(demo_ok);
  CHECK(sac0_best < kScratchCap);
  CHECK(ppo0_best < kScratchCap);
  CHECK(sacfd_best > kRlfdFloor);
  CHECK(ppofd_best > kRlfdFloor);
  CHECK(ppofd_final >= sacfd_final);
}

TEST_CASE("fidelity grows with drive-line bandwidth") {
  std::vector<double> best_meds, demo_meds;
  for (double cutoff : kCutoffsMhz) {
    ExperimentConfig cfg = study_config(Task::Cat, Algorithm::Sacfd, 3,
                                        "cat_cutoff_" + fmt(cutoff));
    cfg.bias.filter.kind = FilterSpec::Kind::Lowpass;
    cfg.bias.filter.cutoff_mhz = cutoff;
    const ExperimentResult& res = cached_run(cfg);
    best_meds.push_back(median_member(res.seeds, &SeedResult::best_fidelity));
    demo_meds.push_back(median_member(res.seeds, &SeedResult::demo_biased_fidelity));
  }

  bool monotone = true;
  for (std::size_t i = 1; i < best_meds.size(); ++i) {
    monotone = monotone && best_meds[i] >= best_meds[i - 1];
  }
  bool beats_demo = true;
  for (std::size_t i = 0; i < best_meds.size(); ++i) {
    beats_demo = beats_demo && best_meds[i] > demo_meds[i];
  }

  std::string detail;
  for (std::size_t i = 0; i < best_meds.size(); ++i) {
    detail += fmt(kCutoffsMhz[i]) + "MHz demo " + fmt(demo_meds[i]) + " -> " + fmt(best_meds[i]);
    if (i + 1 < best_meds.size()) detail += ", ";
  }
  banner(5, "bandwidth robustness", monotone && beats_demo, detail);
  CHECK(monotone);
  CHECK(beats_demo);
}

TEST_CASE("ecd state preparation under gate bias") {
  const ExperimentResult& cat = cached_run(study_config(Task::CatEcd, Algorithm::Sacfd, 3, "cat_ecd"));
  const ExperimentResult& gkp = cached_run(study_config(Task::GkpEcd, Algorithm::Sacfd, 3, "gkp_ecd"));

  const double cat_best = median_member(cat.seeds, &SeedResult::best_fidelity);
  const double gkp_best = median_member(gkp.seeds, &SeedResult::best_fidelity);
  const double cat_demo = median_member(cat.seeds, &SeedResult::demo_biased_fidelity);
  const double gkp_demo = median_member(gkp.seeds, &SeedResult::demo_biased_fidelity);

  const bool pass = cat_best >= kCatEcdFloor && gkp_best >= kGkpEcdFloor &&
                    cat_demo <= cat_best - kEcdDemoGap && gkp_demo <= gkp_best - kEcdDemoGap;
  banner(6, "ecd preparation", pass,
         "cat " + fmt(cat_demo) + " -> " + fmt(cat_best) + ", gkp " + fmt(gkp_demo) + " -> " +
             fmt(gkp_best));
  CHECK(cat_best >= kCatEcdFloor);
  CHECK(gkp_best >= kGkpEcdFloor);
  CHECK(cat_demo <= cat_best - kEcdDemoGap);
  CHECK(gkp_demo <= gkp_best - kEcdDemoGap);
}

TEST_CASE("re-runs are bit identical") {
  ExperimentConfig cfg = default_config(Task::Bell, Algorithm::Sacfd);
  cfg.seeds = {0, 1};
  cfg.budget = 120;
  cfg.grape.max_iters = 120;
  cfg.grape.stop_fidelity = 0.99;
  cfg.sac.hidden = {32, 32};
  cfg.sac.batch = 32;

  cfg.output_dir = "acceptance_runs/det_serial";
  run_experiment(cfg, false);
  cfg.output_dir = "acceptance_runs/det_threads";
  run_experiment(cfg, true);

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  bool identical = true;
  for (int s : {0, 1}) {
    const std::string a = slurp("acceptance_runs/det_serial/seed" + std::to_string(s) + "_metrics.csv");
    const std::string b = slurp("acceptance_runs/det_threads/seed" + std::to_string(s) + "_metrics.csv");
    identical = identical && !a.empty() && a == b;
  }
  banner(7, "determinism", identical, "2 seeds, serial vs threaded, metrics CSVs");
  CHECK(identical);
}

TEST_CASE("environment properties") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  // Exact-mode reward is the fidelity oracle.
  ExperimentConfig bell = default_config(Task::Bell, Algorithm::Sacfd);
  bell.seeds = {0};
  bool exact_ok = true;
  {
    auto env = make_env(bell, 0);
    auto* pe = dynamic_cast<PulseEnv*>(env.get());
    for (int t = 0; t < 10; ++t) {
      RVector a(env->action_dim());
      for (int i = 0; i < a.size(); ++i) a(i) = uni(rng);
      const StepResult res = env->step(a);
      exact_ok = exact_ok && res.reward == fidelity(pe->final_state(a), pe->target());
      exact_ok = exact_ok && res.reward == res.true_fidelity;
    }
  }

  // POVM rewards are unbiased: mean over trials within 5 sigma of the truth.
  bool povm_ok = true;
  double povm_dev_sigma = 0.0;
  {
    ExperimentConfig cfg = bell;
    cfg.n_segments = 10;  // short pulse, same sampling law
    cfg.reward_mode = RewardMode::Povm;
    cfg.shots = 1000;
    auto env = make_env(cfg, 5);
    RVector a(env->action_dim());
    for (int i = 0; i < a.size(); ++i) a(i) = uni(rng);
    const int trials = 10000;
    double sum = 0.0, f = 0.0;
    for (int t = 0; t < trials; ++t) {
      const StepResult res = env->step(a);
      sum += res.reward;
      f = res.true_fidelity;
    }
    const double mean = sum / trials;
    const double sigma = std::sqrt(std::max(f * (1.0 - f), 1e-12) / (cfg.shots * double(trials)));
    povm_dev_sigma = std::abs(mean - f) / sigma;
    povm_ok = povm_dev_sigma <= 5.0;
  }

  // Bias level zero is the nominal system.
  bool zero_bias_ok = true;
  {
    ExperimentConfig with = bell;
    with.bias.mode = BiasMode::RandomScale;
    with.bias.level = 0.0;
    with.bias.seed = 99;
    ExperimentConfig without = bell;
    without.bias.mode = BiasMode::None;
    auto env_a = make_env(with, 0);
    auto env_b = make_env(without, 0);
    for (int t = 0; t < 5; ++t) {
      RVector a(env_a->action_dim());
      for (int i = 0; i < a.size(); ++i) a(i) = uni(rng);
      zero_bias_ok = zero_bias_ok && env_a->step(a).reward == env_b->step(a).reward;
    }
  }

  // Filters: both kernels linear; the brick-wall lowpass is a projection.
  bool filter_ok = true;
  {
    const int n = 32;
    RMatrix x(3, n), y(3, n);
    for (int i = 0; i < x.size(); ++i) x(i) = uni(rng);
    for (int i = 0; i < y.size(); ++i) y(i) = uni(rng);
    const double a = 0.7, b = -1.3;
    const RMatrix mix = a * x + b * y;

    const RMatrix ma_mix = moving_average_filter(mix, 5);
    const RMatrix ma_sep = a * moving_average_filter(x, 5) + b * moving_average_filter(y, 5);
    filter_ok = filter_ok && (ma_mix - ma_sep).cwiseAbs().maxCoeff() <= 1e-12;

    const double dt = 2.0, cutoff = 20.0;
    const RMatrix lp_mix = lowpass_filter(mix, cutoff, dt);
    const RMatrix lp_sep = a * lowpass_filter(x, cutoff, dt) + b * lowpass_filter(y, cutoff, dt);
    filter_ok = filter_ok && (lp_mix - lp_sep).cwiseAbs().maxCoeff() <= 1e-12;

    const RMatrix lp_twice = lowpass_filter(lp_mix, cutoff, dt);
    filter_ok = filter_ok && (lp_twice - lp_mix).cwiseAbs().maxCoeff() <= 1e-12;

    filter_ok = filter_ok && (moving_average_filter(x, 1) - x).cwiseAbs().maxCoeff() == 0.0;
  }

  // Even cat Wigner function is symmetric under beta -> -beta.
  bool wigner_ok = true;
  double wigner_dev = 0.0;
  {
    ExperimentConfig cfg = default_config(Task::CatEcd, Algorithm::Sacfd);
    const QuantumState cat = make_task_target(cfg);
    const CMatrix rho = reduce_to_cavity_dm(cat);
    std::vector<PhasePoint> grid, mirrored;
    std::uniform_real_distribution<double> pos(-2.5, 2.5);
    for (int i = 0; i < 40; ++i) {
      const double gx = pos(rng), gp = pos(rng);
      grid.push_back({gx, gp});
      mirrored.push_back({-gx, -gp});
    }
    const std::vector<double> w = wigner_dm(rho, grid);
    const std::vector<double> w_neg = wigner_dm(rho, mirrored);
    for (std::size_t i = 0; i < w.size(); ++i) {
      wigner_dev = std::max(wigner_dev, std::abs(w[i] - w_neg[i]));
    }
    wigner_ok = wigner_dev <= kWignerSymTol;
  }

  const bool pass = exact_ok && povm_ok && zero_bias_ok && filter_ok && wigner_ok;
  banner(8, "environment properties", pass,
         "povm deviation " + fmt(povm_dev_sigma) + " sigma, wigner asymmetry " + fmt(wigner_dev));
  CHECK(exact_ok);
  CHECK(povm_ok);
  CHECK(zero_bias_ok);
  CHECK(filter_ok);
  CHECK(wigner_ok);
}
