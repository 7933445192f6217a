#include <doctest.h>

#include <cmath>
#include <limits>

#include "catgrad/tensor.hpp"

using namespace catgrad;

TEST_CASE("shape and data agree") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), Error);
}

TEST_CASE("scalar helpers") {
  Tensor s = Tensor::scalar(4.5);
  CHECK(s.is_scalar());
  CHECK(s.scalar_value() == 4.5);
  CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0}).scalar_value(), Error);
}

TEST_CASE("2d accessor is row-major") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at(0, 2) == 2);
  CHECK(t.at(1, 0) == 3);
}

TEST_CASE("reshape preserves data") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor r = t.reshaped({3, 2});
  CHECK(r.at(2, 1) == 5);
  CHECK_THROWS_AS(t.reshaped({4}), Error);
}

TEST_CASE("log_sum_exp uses max subtraction") {
  std::vector<double> big{1000.0, 1000.0};
  CHECK(log_sum_exp_span(big) == doctest::Approx(1000.0 + std::log(2.0)));
  std::vector<double> v{0.0, 0.0};
  CHECK(log_sum_exp_span(v) == doctest::Approx(0.6931471805599453));
}

TEST_CASE("softmax sums to one and stays positive") {
  std::vector<double> in{-3.0, 0.0, 5.0};
  std::vector<double> out(3);
  softmax_span(in, out);
  CHECK(out[0] + out[1] + out[2] == doctest::Approx(1.0).epsilon(1e-12));
  for (double p : out) CHECK(p > 0.0);
}

TEST_CASE("argmax ties break to lowest index") {
  std::vector<double> v{1.0, 3.0, 3.0, 0.0};
  CHECK(argmax_span(v) == 1);
}

TEST_CASE("all_finite flags inf") {
  Tensor t({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_FALSE(t.all_finite());
}
