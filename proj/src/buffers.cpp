#include "qcrl/buffers.hpp"

#include <algorithm>
#include <numeric>

namespace qcrl {

namespace {

// Uniform draw of n indices from [0, pool). Without replacement via a partial
// Fisher-Yates shuffle when the pool is large enough, with replacement
// otherwise (a one-record demo set still has to fill its minibatch share).
std::vector<std::size_t> draw_indices(std::size_t pool, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(n);
  if (pool == 0 || n == 0) return out;
  if (pool >= n) {
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(idx[i]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
    for (std::size_t i = 0; i < n; ++i) out.push_back(pick(rng));
  }
  return out;
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ContractViolation("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (t.source != Source::Agent) {
    throw ContractViolation("ReplayBuffer: only agent-sourced records allowed");
  }
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, std::mt19937_64& rng) const {
  return draw_indices(data_.size(), n, rng);
}

DemoBuffer::DemoBuffer(std::vector<Transition> records) : data_(std::move(records)) {
  for (auto& t : data_) t.source = Source::Demo;
}

std::vector<std::size_t> DemoBuffer::sample_indices(std::size_t n, std::mt19937_64& rng) const {
  return draw_indices(data_.size(), n, rng);
}

std::vector<Transition> sample_mixed(const ReplayBuffer& replay, const DemoBuffer& demo,
                                     std::size_t batch, double mu, std::mt19937_64& rng) {
  if (mu < 0.0 || mu > 1.0) throw ContractViolation("sample_mixed: mu outside [0, 1]");
  if (demo.empty() && replay.empty()) {
    throw ContractViolation("sample_mixed: both buffers empty");
  }
  std::size_t n_demo = static_cast<std::size_t>(mu * static_cast<double>(batch));
  if (replay.empty() || demo.empty()) {
    n_demo = replay.empty() ? batch : 0;
  }
  std::vector<Transition> out;
  out.reserve(batch);
  for (std::size_t i : demo.sample_indices(n_demo, rng)) out.push_back(demo.at(i));
  for (std::size_t i : replay.sample_indices(batch - n_demo, rng)) out.push_back(replay.at(i));
  return out;
}

}  // namespace qcrl
