#include <doctest.h>

#include <cmath>

#include "catgrad/rng.hpp"
#include "catgrad/stats.hpp"

using namespace catgrad;

TEST_CASE("same seed, same sequence") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derive separates trials and streams") {
  RngStream a = RngStream::derive(7, 0, 0);
  RngStream b = RngStream::derive(7, 1, 0);
  RngStream c = RngStream::derive(7, 0, 1);
  CHECK(a.next_u64() != b.next_u64());
  RngStream a2 = RngStream::derive(7, 0, 0);
  a2.next_u64();
  CHECK(a2.next_u64() != c.next_u64());
}

TEST_CASE("derive is reproducible") {
  RngStream a = RngStream::derive(123, 4, 5);
  RngStream b = RngStream::derive(123, 4, 5);
  for (int i = 0; i < 10; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("uniform stays in range and open variant avoids endpoints") {
  RngStream r(1);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    double v = r.uniform_open();
    CHECK(v >= 1e-12);
    CHECK(v <= 1.0 - 1e-12);
  }
}

TEST_CASE("gaussian moments") {
  RngStream r(3);
  std::vector<double> xs(200000);
  for (double& x : xs) x = r.gaussian();
  CHECK(std::abs(mean(xs)) < 0.01);
  CHECK(variance(xs) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("uniform_int covers range") {
  RngStream r(9);
  std::vector<int> seen(5, 0);
  for (int i = 0; i < 5000; ++i) ++seen[r.uniform_int(5)];
  for (int count : seen) CHECK(count > 800);
}
