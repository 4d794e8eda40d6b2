#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "l2sa/tensor.hpp"

namespace l2sa {

// Seeded generator shared by initialization, shuffling and synthetic data.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Real uniform(Real lo, Real hi) { return std::uniform_real_distribution<Real>(lo, hi)(engine_); }
  Real normal(Real mean, Real stddev) { return std::normal_distribution<Real>(mean, stddev)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own draws so the permutation only depends on the engine.
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[engine_() % i]);
  }

  Tensor uniform_tensor(Shape shape, Real lo, Real hi) {
    Tensor t(shape);
    for (auto& v : t.data()) v = uniform(lo, hi);
    return t;
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace l2sa
