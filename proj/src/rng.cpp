#include "catgrad/rng.hpp"

#include <algorithm>
#include <cmath>

namespace catgrad {

namespace {
constexpr double kUnitEps = 1e-12;
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t seed) : engine_(seed) {}

RngStream RngStream::derive(std::uint64_t master_seed, std::uint64_t trial, std::uint64_t stream) {
  std::uint64_t s = master_seed;
  std::uint64_t a = splitmix64(s);
  s ^= trial * 0xd1342543de82ef95ULL;
  std::uint64_t b = splitmix64(s);
  s ^= stream * 0xaf251af3b0f025b5ULL;
  std::uint64_t c = splitmix64(s);
  return RngStream(a ^ (b + 0x9e3779b97f4a7c15ULL) ^ (c << 1));
}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() {
  // 53 random bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open() {
  double u = uniform();
  if (u < kUnitEps) return kUnitEps;
  if (u > 1.0 - kUnitEps) return 1.0 - kUnitEps;
  return u;
}

double RngStream::gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform_open();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(kTwoPi * u2);
  have_spare_ = true;
  return r * std::cos(kTwoPi * u2);
}

double gumbel_from_uniform(double u) {
  u = std::clamp(u, kUnitEps, 1.0 - kUnitEps);
  return -std::log(-std::log(u));
}

double RngStream::gumbel() { return gumbel_from_uniform(uniform()); }

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw Error("uniform_int: n must be positive");
  // Multiply-shift; bias is negligible for the small n used here.
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

}  // namespace catgrad
