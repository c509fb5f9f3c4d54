#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qcrl/qmath.hpp"

namespace qcrl {

enum class Activation { Linear, Tanh, Relu };

struct MlpSpec {
  std::vector<int> sizes;  // input, hidden..., output
  Activation hidden = Activation::Relu;
  Activation output = Activation::Linear;
  bool layer_norm = false;  // normalize hidden pre-activations
};

// Fully-connected net with hand-written backprop. Batches are matrix columns.
// Parameter blocks are exposed in a fixed order (per layer: weights, bias,
// then LayerNorm gain/offset when present) for Adam and checkpointing.
class MlpNet {
 public:
  MlpNet() = default;
  MlpNet(const MlpSpec& spec, std::uint64_t seed);

  int input_dim() const { return spec_.sizes.front(); }
  int output_dim() const { return spec_.sizes.back(); }
  const MlpSpec& spec() const { return spec_; }

  struct Cache {
    RMatrix x;
    std::vector<RMatrix> normed;   // LayerNorm outputs n (empty matrix when unused)
    std::vector<RMatrix> inv_std;  // 1 x batch, LayerNorm 1/sigma
    std::vector<RMatrix> preact;   // layer input to the activation
    std::vector<RMatrix> postact;  // layer output
  };

  RMatrix forward(const RMatrix& x) const;
  RMatrix forward(const RMatrix& x, Cache& cache) const;
  RVector forward_vec(const RVector& x) const;

  // Adds parameter gradients of sum(grad_y . y) into grads (block order as
  // params()); returns dL/dx.
  RMatrix backward(const Cache& cache, const RMatrix& grad_y, std::vector<RMatrix>& grads) const;

  std::vector<RMatrix*> params();
  std::vector<const RMatrix*> params() const;
  std::vector<RMatrix> zero_grads() const;

  // this <- (1 - tau) this + tau src (target-network tracking).
  void polyak_from(const MlpNet& src, double tau);

 private:
  struct Layer {
    RMatrix w;
    RMatrix b;      // column
    RMatrix gamma;  // column, LayerNorm gain
    RMatrix beta;   // column, LayerNorm offset
    bool ln = false;
    Activation act = Activation::Linear;
  };
  MlpSpec spec_;
  std::vector<Layer> layers_;
};

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int t = 0;
  std::vector<RMatrix> m;
  std::vector<RMatrix> v;
};

// Bias-corrected Adam descent step; moments are allocated on first use.
void adam_step(std::vector<RMatrix*> params, const std::vector<RMatrix>& grads, AdamState& st);

inline constexpr double kLogStdMin = -8.0;
inline constexpr double kLogStdMax = 2.0;

RVector clamp_log_std(const RVector& log_std);

struct GaussianPolicyOut {
  RVector mean;
  RVector log_std;  // clamped to [kLogStdMin, kLogStdMax]
  bool squashed = true;
};

struct SampleResult {
  RVector action;
  RVector pre_tanh;  // mean + std * zeta (equals action when unsquashed)
  RVector zeta;
  double log_prob = 0.0;
};

// a = tanh(mean + std * zeta) with the change-of-variables log-prob.
SampleResult sample_squashed_gaussian(const GaussianPolicyOut& out, std::mt19937_64& rng);

// Plain reparameterized Gaussian sample, u = mean + std * zeta.
SampleResult sample_gaussian(const GaussianPolicyOut& out, std::mt19937_64& rng);

// log N(u; mean, diag(std^2)).
double gaussian_log_prob(const RVector& mean, const RVector& log_std, const RVector& u);

// Squashed log-prob from the pre-squash point, numerically stable in the
// log(1 - tanh^2) term.
double squashed_log_prob(const RVector& mean, const RVector& log_std, const RVector& pre_tanh);

// Sum_i (0.5 ln(2 pi e) + log_std_i).
double gaussian_entropy(const RVector& log_std);

// Checkpoints: `prefix.bin` holds every block as native little-endian f64,
// `prefix.json` the shape manifest. Loading validates shapes.
void save_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, const MlpNet*>>& nets,
                     const std::vector<std::pair<std::string, const RMatrix*>>& blocks = {});
void load_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, MlpNet*>>& nets,
                     const std::vector<std::pair<std::string, RMatrix*>>& blocks = {});

}  // namespace qcrl
