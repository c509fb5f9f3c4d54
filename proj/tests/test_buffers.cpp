#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "qcrl/buffers.hpp"

using namespace qcrl;

namespace {

Transition make_record(double reward, Source source = Source::Agent) {
  Transition t;
  t.obs = RVector::Constant(1, 1.0);
  t.action = RVector::Constant(2, reward);
  t.next_obs = t.obs;
  t.reward = reward;
  t.true_fidelity = reward;
  t.source = source;
  return t;
}

}  // namespace

TEST_CASE("replay buffer overwrites oldest records at capacity") {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) buf.push(make_record(i));
  REQUIRE(buf.size() == 3);
  std::multiset<double> rewards;
  for (std::size_t i = 0; i < buf.size(); ++i) rewards.insert(buf.at(i).reward);
  CHECK(rewards == std::multiset<double>{2.0, 3.0, 4.0});
}

TEST_CASE("replay rejects demo records and demo tags its contents") {
  ReplayBuffer buf(4);
  CHECK_THROWS_AS(buf.push(make_record(0.5, Source::Demo)), ContractViolation);

  DemoBuffer demo({make_record(0.9), make_record(0.8)});
  REQUIRE(demo.size() == 2);
  CHECK(demo.at(0).source == Source::Demo);
  CHECK(demo.at(1).source == Source::Demo);
}

TEST_CASE("sampling is without replacement when the pool suffices") {
  ReplayBuffer buf(16);
  for (int i = 0; i < 10; ++i) buf.push(make_record(i));
  std::mt19937_64 rng(3);
  const auto idx = buf.sample_indices(10, rng);
  std::set<std::size_t> unique(idx.begin(), idx.end());
  CHECK(unique.size() == 10);
  CHECK(*unique.rbegin() == 9);

  const auto small = buf.sample_indices(4, rng);
  CHECK(small.size() == 4);
  CHECK(std::set<std::size_t>(small.begin(), small.end()).size() == 4);
}

TEST_CASE("sampling falls back to replacement when the pool is short") {
  DemoBuffer demo({make_record(0.7)});
  std::mt19937_64 rng(4);
  const auto idx = demo.sample_indices(5, rng);
  REQUIRE(idx.size() == 5);
  for (std::size_t i : idx) CHECK(i == 0);
}

TEST_CASE("sampling is seeded and roughly uniform") {
  ReplayBuffer buf(16);
  for (int i = 0; i < 10; ++i) buf.push(make_record(i));
  std::mt19937_64 a(11), b(11), c(12);
  CHECK(buf.sample_indices(6, a) == buf.sample_indices(6, b));
  CHECK(buf.sample_indices(6, a) != buf.sample_indices(6, c));

  std::vector<int> counts(10, 0);
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20000; ++trial) counts[buf.sample_indices(1, rng)[0]] += 1;
  for (int n : counts) {
    CHECK(n > 1700);  // expected 2000, bound at five sigma
    CHECK(n < 2300);
  }
}

TEST_CASE("mixed minibatches follow the floor split with demo rows first") {
  ReplayBuffer replay(512);
  for (int i = 0; i < 300; ++i) replay.push(make_record(0.1));
  DemoBuffer demo({make_record(0.9)});
  std::mt19937_64 rng(7);

  const auto batch = sample_mixed(replay, demo, 256, 0.25, rng);
  REQUIRE(batch.size() == 256);
  const auto n_demo = static_cast<std::size_t>(
      std::count_if(batch.begin(), batch.end(),
                    [](const Transition& t) { return t.source == Source::Demo; }));
  CHECK(n_demo == 64);
  for (std::size_t i = 0; i < 64; ++i) CHECK(batch[i].source == Source::Demo);
  for (std::size_t i = 64; i < 256; ++i) CHECK(batch[i].source == Source::Agent);

  CHECK(sample_mixed(replay, demo, 10, 0.3, rng).size() == 10);
  const auto three = sample_mixed(replay, demo, 10, 0.3, rng);
  CHECK(std::count_if(three.begin(), three.end(),
                      [](const Transition& t) { return t.source == Source::Demo; }) == 3);
}

TEST_CASE("mixed sampling degenerates cleanly at the edges") {
  ReplayBuffer replay(64);
  for (int i = 0; i < 10; ++i) replay.push(make_record(0.1));
  DemoBuffer demo({make_record(0.9), make_record(0.8)});
  std::mt19937_64 rng(9);

  for (const Transition& t : sample_mixed(replay, demo, 8, 1.0, rng)) {
    CHECK(t.source == Source::Demo);
  }
  for (const Transition& t : sample_mixed(replay, demo, 8, 0.0, rng)) {
    CHECK(t.source == Source::Agent);
  }

  ReplayBuffer empty_replay(64);
  for (const Transition& t : sample_mixed(empty_replay, demo, 8, 0.25, rng)) {
    CHECK(t.source == Source::Demo);
  }

  CHECK_THROWS_AS(sample_mixed(replay, demo, 8, 1.5, rng), ContractViolation);
  DemoBuffer empty_demo;
  CHECK_THROWS_AS(sample_mixed(empty_replay, empty_demo, 8, 0.5, rng), ContractViolation);
}
