#include "qcrl/net.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace qcrl {

namespace {

constexpr double kLnEps = 1e-5;

RMatrix activate(const RMatrix& u, Activation act) {
  switch (act) {
    case Activation::Linear:
      return u;
    case Activation::Tanh:
      return u.array().tanh().matrix();
    case Activation::Relu:
      return u.cwiseMax(0.0);
  }
  throw Error("unknown activation");
}

RMatrix activate_backward(const RMatrix& g, const RMatrix& u, const RMatrix& y, Activation act) {
  switch (act) {
    case Activation::Linear:
      return g;
    case Activation::Tanh:
      return (g.array() * (1.0 - y.array().square())).matrix();
    case Activation::Relu:
      return (g.array() * (u.array() > 0.0).cast<double>()).matrix();
  }
  throw Error("unknown activation");
}

double softplus(double x) {
  // log(1 + e^x) without overflow.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 ln(2 pi)

}  // namespace

MlpNet::MlpNet(const MlpSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.sizes.size() < 2) throw DimensionError("MlpNet: need at least input and output sizes");
  std::mt19937_64 rng(seed);
  const int n_layers = static_cast<int>(spec.sizes.size()) - 1;
  layers_.resize(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    const int fan_in = spec.sizes[l];
    const int fan_out = spec.sizes[l + 1];
    if (fan_in < 1 || fan_out < 1) throw DimensionError("MlpNet: layer size < 1");
    Layer& layer = layers_[l];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> uni(-limit, limit);
    layer.w = RMatrix::NullaryExpr(fan_out, fan_in, [&]() { return uni(rng); });
    layer.b = RMatrix::Zero(fan_out, 1);
    const bool hidden = l + 1 < n_layers;
    layer.act = hidden ? spec.hidden : spec.output;
    layer.ln = hidden && spec.layer_norm;
    if (layer.ln) {
      layer.gamma = RMatrix::Ones(fan_out, 1);
      layer.beta = RMatrix::Zero(fan_out, 1);
    }
  }
}

RMatrix MlpNet::forward(const RMatrix& x) const {
  Cache unused;
  return forward(x, unused);
}

RVector MlpNet::forward_vec(const RVector& x) const {
  return forward(RMatrix(x)).col(0);
}

RMatrix MlpNet::forward(const RMatrix& x, Cache& cache) const {
  if (x.rows() != input_dim()) throw DimensionError("MlpNet::forward: input dim mismatch");
  cache.x = x;
  const int n_layers = static_cast<int>(layers_.size());
  cache.normed.assign(n_layers, {});
  cache.inv_std.assign(n_layers, {});
  cache.preact.assign(n_layers, {});
  cache.postact.assign(n_layers, {});

  RMatrix h = x;
  for (int l = 0; l < n_layers; ++l) {
    const Layer& layer = layers_[l];
    RMatrix z = layer.w * h;
    z.colwise() += RVector(layer.b.col(0));
    RMatrix u;
    if (layer.ln) {
      const RMatrix mean = z.colwise().mean();
      RMatrix centered = z.rowwise() - mean.row(0);
      const RMatrix var = centered.array().square().colwise().mean().matrix();
      const RMatrix inv_std = (var.array() + kLnEps).rsqrt().matrix();
      RMatrix normed = (centered.array().rowwise() * inv_std.row(0).array()).matrix();
      u = (normed.array().colwise() * layer.gamma.col(0).array()).matrix();
      u.colwise() += RVector(layer.beta.col(0));
      cache.normed[l] = std::move(normed);
      cache.inv_std[l] = inv_std;
    } else {
      u = std::move(z);
    }
    RMatrix y = activate(u, layer.act);
    cache.preact[l] = std::move(u);
    cache.postact[l] = y;
    h = std::move(y);
  }
  return h;
}

RMatrix MlpNet::backward(const Cache& cache, const RMatrix& grad_y,
                         std::vector<RMatrix>& grads) const {
  const int n_layers = static_cast<int>(layers_.size());
  if (cache.postact.empty()) throw ContractViolation("MlpNet::backward: run forward first");
  if (grads.size() != params().size()) {
    throw DimensionError("MlpNet::backward: gradient block count mismatch");
  }

  // Map layer index to its first block slot.
  std::vector<int> slot(n_layers);
  int s = 0;
  for (int l = 0; l < n_layers; ++l) {
    slot[l] = s;
    s += layers_[l].ln ? 4 : 2;
  }

  RMatrix g = grad_y;
  for (int l = n_layers - 1; l >= 0; --l) {
    const Layer& layer = layers_[l];
    g = activate_backward(g, cache.preact[l], cache.postact[l], layer.act);
    if (layer.ln) {
      const RMatrix& n = cache.normed[l];
      grads[slot[l] + 2] += (g.array() * n.array()).rowwise().sum().matrix();
      grads[slot[l] + 3] += g.rowwise().sum();
      RMatrix dn = (g.array().colwise() * layer.gamma.col(0).array()).matrix();
      const RMatrix mean_dn = dn.colwise().mean();
      const RMatrix mean_dnn = (dn.array() * n.array()).colwise().mean().matrix();
      RMatrix dz = dn;
      dz.array().rowwise() -= mean_dn.row(0).array();
      dz.array() -= n.array().rowwise() * mean_dnn.row(0).array();
      dz.array().rowwise() *= cache.inv_std[l].row(0).array();
      g = std::move(dz);
    }
    const RMatrix& h_prev = l == 0 ? cache.x : cache.postact[l - 1];
    grads[slot[l]] += g * h_prev.transpose();
    grads[slot[l] + 1] += g.rowwise().sum();
    if (l > 0) g = (layers_[l].w.transpose() * g).eval();
  }
  return layers_[0].w.transpose() * g;
}

std::vector<RMatrix*> MlpNet::params() {
  std::vector<RMatrix*> out;
  for (auto& l : layers_) {
    out.push_back(&l.w);
    out.push_back(&l.b);
    if (l.ln) {
      out.push_back(&l.gamma);
      out.push_back(&l.beta);
    }
  }
  return out;
}

std::vector<const RMatrix*> MlpNet::params() const {
  std::vector<const RMatrix*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.w);
    out.push_back(&l.b);
    if (l.ln) {
      out.push_back(&l.gamma);
      out.push_back(&l.beta);
    }
  }
  return out;
}

std::vector<RMatrix> MlpNet::zero_grads() const {
  std::vector<RMatrix> out;
  for (const auto* p : params()) out.push_back(RMatrix::Zero(p->rows(), p->cols()));
  return out;
}

void MlpNet::polyak_from(const MlpNet& src, double tau) {
  auto mine = params();
  auto theirs = src.params();
  if (mine.size() != theirs.size()) throw DimensionError("polyak_from: structure mismatch");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    *mine[i] = (1.0 - tau) * (*mine[i]) + tau * (*theirs[i]);
  }
}

void adam_step(std::vector<RMatrix*> params, const std::vector<RMatrix>& grads, AdamState& st) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: params/grads mismatch");
  if (st.m.empty()) {
    for (const auto* p : params) {
      st.m.push_back(RMatrix::Zero(p->rows(), p->cols()));
      st.v.push_back(RMatrix::Zero(p->rows(), p->cols()));
    }
  }
  if (st.m.size() != params.size()) throw DimensionError("adam_step: state/params mismatch");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, st.t);
  const double bc2 = 1.0 - std::pow(st.beta2, st.t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols()) {
      throw DimensionError("adam_step: gradient shape mismatch");
    }
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i].cwiseProduct(grads[i]);
    const RMatrix m_hat = st.m[i] / bc1;
    const RMatrix v_hat = st.v[i] / bc2;
    params[i]->array() -= st.lr * m_hat.array() / (v_hat.array().sqrt() + st.eps);
  }
}

RVector clamp_log_std(const RVector& log_std) {
  return log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

double gaussian_log_prob(const RVector& mean, const RVector& log_std, const RVector& u) {
  if (mean.size() != log_std.size() || mean.size() != u.size()) {
    throw DimensionError("gaussian_log_prob: size mismatch");
  }
  double lp = 0.0;
  for (int i = 0; i < mean.size(); ++i) {
    const double z = (u(i) - mean(i)) * std::exp(-log_std(i));
    lp += -0.5 * z * z - log_std(i) - kHalfLog2Pi;
  }
  return lp;
}

double squashed_log_prob(const RVector& mean, const RVector& log_std, const RVector& pre_tanh) {
  double lp = gaussian_log_prob(mean, log_std, pre_tanh);
  for (int i = 0; i < pre_tanh.size(); ++i) {
    // log(1 - tanh(x)^2) = 2 (ln 2 - x - softplus(-2x))
    lp -= 2.0 * (std::log(2.0) - pre_tanh(i) - softplus(-2.0 * pre_tanh(i)));
  }
  return lp;
}

namespace {

SampleResult draw(const GaussianPolicyOut& out, std::mt19937_64& rng, bool squash) {
  const RVector log_std = clamp_log_std(out.log_std);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SampleResult res;
  res.zeta = RVector(out.mean.size());
  for (int i = 0; i < res.zeta.size(); ++i) res.zeta(i) = gauss(rng);
  res.pre_tanh = out.mean + log_std.array().exp().matrix().cwiseProduct(res.zeta);
  if (squash) {
    // tanh rounds to exactly 1 for |x| beyond ~19; pull such draws one ulp
    // inside so callers can rely on the open interval.
    const double edge = std::nextafter(1.0, 0.0);
    res.action = res.pre_tanh.array().tanh().matrix().cwiseMin(edge).cwiseMax(-edge);
    res.log_prob = squashed_log_prob(out.mean, log_std, res.pre_tanh);
  } else {
    res.action = res.pre_tanh;
    res.log_prob = gaussian_log_prob(out.mean, log_std, res.pre_tanh);
  }
  return res;
}

}  // namespace

SampleResult sample_squashed_gaussian(const GaussianPolicyOut& out, std::mt19937_64& rng) {
  return draw(out, rng, true);
}

SampleResult sample_gaussian(const GaussianPolicyOut& out, std::mt19937_64& rng) {
  return draw(out, rng, false);
}

double gaussian_entropy(const RVector& log_std) {
  const double per_dim = 0.5 * std::log(kTwoPi * std::exp(1.0));
  return log_std.size() * per_dim + log_std.sum();
}

namespace {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Linear:
      return "linear";
    case Activation::Tanh:
      return "tanh";
    case Activation::Relu:
      return "relu";
  }
  return "linear";
}

Activation activation_from(const std::string& s) {
  if (s == "linear") return Activation::Linear;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw Error("checkpoint: unknown activation '" + s + "'");
}

void append_blocks(std::vector<const RMatrix*>& all, const MlpNet& net) {
  for (const auto* p : net.params()) all.push_back(p);
}

}  // namespace

void save_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, const MlpNet*>>& nets,
                     const std::vector<std::pair<std::string, const RMatrix*>>& blocks) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["dtype"] = "f64-le";
  manifest["nets"] = nlohmann::json::array();
  manifest["blocks"] = nlohmann::json::array();

  std::vector<const RMatrix*> all;
  for (const auto& [name, net] : nets) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["sizes"] = net->spec().sizes;
    entry["hidden"] = activation_name(net->spec().hidden);
    entry["output"] = activation_name(net->spec().output);
    entry["layer_norm"] = net->spec().layer_norm;
    manifest["nets"].push_back(entry);
    append_blocks(all, *net);
  }
  for (const auto& [name, block] : blocks) {
    manifest["blocks"].push_back(
        {{"name", name}, {"rows", block->rows()}, {"cols", block->cols()}});
    all.push_back(block);
  }

  std::size_t total = 0;
  for (const auto* b : all) total += static_cast<std::size_t>(b->size());
  manifest["total_doubles"] = total;

  std::ofstream bin(prefix + ".bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("cannot write checkpoint " + prefix + ".bin");
  for (const auto* b : all) {
    // Eigen default storage is column-major; write columns in order.
    bin.write(reinterpret_cast<const char*>(b->data()),
              static_cast<std::streamsize>(sizeof(double) * b->size()));
  }
  bin.close();

  std::ofstream js(prefix + ".json", std::ios::trunc);
  if (!js) throw Error("cannot write checkpoint " + prefix + ".json");
  js << manifest.dump(2) << "\n";
}

void load_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, MlpNet*>>& nets,
                     const std::vector<std::pair<std::string, RMatrix*>>& blocks) {
  std::ifstream js(prefix + ".json");
  if (!js) throw Error("cannot read checkpoint " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(js);

  const auto& net_entries = manifest.at("nets");
  if (net_entries.size() != nets.size()) throw Error("checkpoint: net count mismatch");
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const auto& entry = net_entries.at(i);
    MlpSpec spec;
    spec.sizes = entry.at("sizes").get<std::vector<int>>();
    spec.hidden = activation_from(entry.at("hidden").get<std::string>());
    spec.output = activation_from(entry.at("output").get<std::string>());
    spec.layer_norm = entry.at("layer_norm").get<bool>();
    if (entry.at("name").get<std::string>() != nets[i].first) {
      throw Error("checkpoint: net name mismatch at index " + std::to_string(i));
    }
    const MlpSpec& have = nets[i].second->spec();
    if (!have.sizes.empty() &&
        (have.sizes != spec.sizes || have.layer_norm != spec.layer_norm)) {
      throw Error("checkpoint: net '" + nets[i].first + "' shape mismatch");
    }
    *nets[i].second = MlpNet(spec, 0);
  }
  const auto& block_entries = manifest.at("blocks");
  if (block_entries.size() != blocks.size()) throw Error("checkpoint: block count mismatch");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& entry = block_entries.at(i);
    if (entry.at("name").get<std::string>() != blocks[i].first) {
      throw Error("checkpoint: block name mismatch at index " + std::to_string(i));
    }
    blocks[i].second->resize(entry.at("rows").get<int>(), entry.at("cols").get<int>());
  }

  std::vector<RMatrix*> all;
  for (const auto& [name, net] : nets) {
    for (auto* p : net->params()) all.push_back(p);
  }
  for (const auto& [name, block] : blocks) all.push_back(block);

  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw Error("cannot read checkpoint " + prefix + ".bin");
  for (auto* b : all) {
    bin.read(reinterpret_cast<char*>(b->data()),
             static_cast<std::streamsize>(sizeof(double) * b->size()));
    if (!bin) throw Error("checkpoint: binary payload too short");
  }
  char extra;
  if (bin.read(&extra, 1)) throw Error("checkpoint: binary payload has trailing bytes");
}

}  // namespace qcrl
