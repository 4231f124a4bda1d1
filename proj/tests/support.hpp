#pragma once

// Random value generators shared by the unit and acceptance tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "evodt/checkpoint.hpp"
#include "evodt/es.hpp"
#include "evodt/nn.hpp"
#include "evodt/wire.hpp"

namespace evodt::testing {

class Random {
 public:
  explicit Random(std::uint64_t seed) : rng_(seed) {}

  std::uint64_t u64() { return rng_(); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(rng_()); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  bool coin() { return (rng_() & 1u) != 0; }

  double real() {
    // Mix ordinary values with awkward finite ones.
    switch (below(8)) {
      case 0:
        return 0.0;
      case 1:
        return -0.0;
      case 2:
        return 1e-310;  // subnormal
      case 3:
        return -1.7976931348623157e308;
      default:
        return std::normal_distribution<double>(0.0, 100.0)(rng_);
    }
  }

  std::vector<double> reals(std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = real();
    return v;
  }

  std::string text(std::size_t max_len) {
    std::string s(below(max_len + 1), '\0');
    for (char& c : s) c = static_cast<char>(below(256));
    return s;
  }

  es::VbnStats vbn() {
    es::VbnStats s(below(4));
    s.count = u64() % 100000;
    s.mean = reals(s.dim());
    s.m2 = reals(s.dim());
    return s;
  }

  es::EsState state(std::size_t dim) {
    es::EsState s;
    s.theta = nn::FlatParams(reals(dim));
    s.sigma = 0.001 + static_cast<double>(below(1000)) * 1e-4;
    s.optimizer.kind = coin() ? es::OptimizerKind::kAdam : es::OptimizerKind::kSgdMomentum;
    s.optimizer.steps = u64() % 1000;
    s.optimizer.m = reals(dim);
    if (s.optimizer.kind == es::OptimizerKind::kAdam) s.optimizer.v = reals(dim);
    s.iteration = u64() % 100000;
    s.vbn = vbn();
    s.rng_seed = u64();
    return s;
  }

  nn::PolicySpec spec() {
    if (coin()) {
      std::vector<std::size_t> hidden(below(3));
      for (auto& h : hidden) h = 1 + below(6);
      return nn::feedforward_spec(1 + below(4), hidden, 1 + below(3));
    }
    const std::size_t heads = 1 + below(2);
    return nn::decision_transformer_spec(1 + below(3), 1 + below(2), 4 * heads, 1 + below(2), heads, 1 + below(4),
                                         1 + below(20));
  }

  checkpoint::Checkpoint checkpoint() {
    checkpoint::Checkpoint c;
    c.spec = spec();
    c.state = state(nn::param_count(c.spec));
    c.config_digest = u64();
    return c;
  }

  wire::Message message(std::size_t kind) {
    switch (kind % 8) {
      case 0:
        return wire::Hello{u32(), u32()};
      case 1:
        return wire::Welcome{text(200)};
      case 2: {
        wire::TaskMessage m;
        m.iteration = u64();
        m.rng_seed = u64();
        m.sigma = real();
        m.episodes_per_eval = u32();
        m.population = u32();
        m.first_index = u32();
        m.count = u32();
        m.theta_version = u64();
        m.desired_returns = reals(below(5));
        return m;
      }
      case 3: {
        wire::ResultMessage m;
        m.worker_id = u32();
        m.iteration = u64();
        m.first_index = u32();
        m.entries.resize(below(20));
        for (auto& e : m.entries) {
          e.offset = u64();
          e.sign = coin() ? 1 : -1;
          e.fitness = real();
          e.mean_return = real();
          e.episode_steps = u64();
          e.vbn_batch = reals(coin() ? 0 : 2 * below(10));
        }
        return m;
      }
      case 4: {
        wire::UpdateMessage m;
        m.iteration = u64();
        m.theta_version = u64();
        m.entries.resize(below(50));
        for (auto& e : m.entries) e = {u64(), static_cast<std::int8_t>(coin() ? 1 : -1), real()};
        m.vbn_delta = vbn();
        return m;
      }
      case 5:
        return wire::ResyncRequest{u32()};
      case 6:
        return wire::ResyncMessage{state(below(64))};
      default:
        return wire::Shutdown{};
    }
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace evodt::testing
