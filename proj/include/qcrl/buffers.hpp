#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "qcrl/qmath.hpp"

namespace qcrl {

enum class Source { Agent, Demo };

struct Transition {
  RVector obs;
  RVector action;
  RVector next_obs;
  double reward = 0.0;
  bool done = true;
  double true_fidelity = 0.0;
  Source source = Source::Agent;
};

// Ring buffer for agent experience. Only agent-sourced records may enter, so
// the demonstration set stays disjoint from replay by construction.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 200000);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  const Transition& at(std::size_t i) const { return data_.at(i); }

  // Uniform without replacement when the buffer holds at least n records,
  // with replacement otherwise.
  std::vector<std::size_t> sample_indices(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

// Fixed demonstration set, immutable after construction.
class DemoBuffer {
 public:
  DemoBuffer() = default;
  explicit DemoBuffer(std::vector<Transition> records);

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  const Transition& at(std::size_t i) const { return data_.at(i); }

  std::vector<std::size_t> sample_indices(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::vector<Transition> data_;
};

// floor(mu * batch) demo records followed by replay records. An empty replay
// buffer yields an all-demo batch.
std::vector<Transition> sample_mixed(const ReplayBuffer& replay, const DemoBuffer& demo,
                                     std::size_t batch, double mu, std::mt19937_64& rng);

}  // namespace qcrl
