#pragma once

#include <cstdint>
#include <random>

#include "catgrad/tensor.hpp"

namespace catgrad {

/// Deterministic random stream. A 64-bit master seed plus (trial, stream)
/// indices fully determine every draw; all variates are generated from raw
/// 64-bit engine output so the sequences are identical across platforms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  /// Independent stream for a (trial, stream) cell under one master seed.
  static RngStream derive(std::uint64_t master_seed, std::uint64_t trial, std::uint64_t stream);

  std::uint64_t next_u64();

  double uniform();       // [0, 1)
  double uniform_open();  // clamped to [1e-12, 1 - 1e-12]
  double gaussian();      // N(0, 1), Box-Muller
  double gumbel();        // -log(-log(u)) on clamped uniforms

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Inverse-transform Gumbel(0,1): -log(-log(u)), with u clamped to
/// [1e-12, 1 - 1e-12] so the result is always finite.
double gumbel_from_uniform(double u);

}  // namespace catgrad
