#pragma once

// Stratified minibatches: a third each of foreground, background and
// negative pairs. Leftover slots go to foreground, then background; the
// share of an empty pool is spread over the others the same way. Each pool
// is walked in a shuffled order that is redrawn once exhausted.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dmac/trainer/dataset.hpp"

namespace dmac::train {

class StratifiedSampler {
 public:
  StratifiedSampler() = default;
  StratifiedSampler(const Dataset& d, std::uint64_t seed) : rng_(seed) {
    if (d.empty()) throw ParameterError("sampler: empty dataset");
    for (std::size_t i = 0; i < d.size(); ++i) {
      pools_[static_cast<int>(d.samples[i].kind)].order.push_back(i);
    }
    for (auto& p : pools_) p.cursor = p.order.size();
  }

  // Per-kind counts for a batch of m.
  std::array<std::size_t, 3> quota(std::size_t m) const {
    std::vector<int> live;
    for (int k = 0; k < 3; ++k) {
      if (!pools_[k].order.empty()) live.push_back(k);
    }
    std::array<std::size_t, 3> q{};
    for (std::size_t j = 0; j < live.size(); ++j) {
      q[live[j]] = m / live.size() + (j < m % live.size() ? 1 : 0);
    }
    return q;
  }

  std::vector<std::size_t> next(std::size_t m) {
    if (m == 0) throw ParameterError("sampler: batch size must be >= 1");
    const auto q = quota(m);
    std::vector<std::size_t> out;
    for (int k = 0; k < 3; ++k) {
      for (std::size_t n = 0; n < q[k]; ++n) out.push_back(take(pools_[k]));
    }
    return out;
  }

  nlohmann::json state() const {
    std::ostringstream r;
    r << rng_;
    nlohmann::json pools = nlohmann::json::array();
    for (const auto& p : pools_) pools.push_back({{"order", p.order}, {"cursor", p.cursor}});
    return {{"rng", r.str()}, {"pools", pools}};
  }

  void restore(const nlohmann::json& j) {
    std::istringstream r(j.at("rng").get<std::string>());
    r >> rng_;
    if (!r) throw ParseError("sampler: bad generator state");
    const auto& pools = j.at("pools");
    if (pools.size() != 3) throw ParseError("sampler: expected three pools");
    for (int k = 0; k < 3; ++k) {
      pools_[k].order = pools[k].at("order").get<std::vector<std::size_t>>();
      pools_[k].cursor = pools[k].at("cursor").get<std::size_t>();
      if (pools_[k].cursor > pools_[k].order.size()) throw ParseError("sampler: cursor past pool end");
    }
  }

 private:
  struct Pool {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };

  std::size_t take(Pool& p) {
    if (p.cursor == p.order.size()) {
      std::sort(p.order.begin(), p.order.end());
      std::shuffle(p.order.begin(), p.order.end(), rng_);
      p.cursor = 0;
    }
    return p.order[p.cursor++];
  }

  std::mt19937_64 rng_;
  std::array<Pool, 3> pools_;
};

}  // namespace dmac::train
