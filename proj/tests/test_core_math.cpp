#include <doctest.h>

#include <cmath>
#include <set>

#include "binnlab/rng.hpp"
#include "binnlab/special_functions.hpp"
#include "binnlab/tensor.hpp"
#include "test_util.hpp"

using namespace binnlab;

TEST_CASE("normal cdf: symmetry, saturation, quadrature oracle") {
  CHECK(std_normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(std_normal_cdf(40.0) - 1.0) < 1e-15);
  CHECK(std::abs(std_normal_cdf(-40.0)) < 1e-15);

  // 97.5% quantile, expected value frozen from the quadrature oracle.
  const double oracle = testutil::normal_cdf_quadrature(1.959964);
  CHECK(std::abs(std_normal_cdf(1.959964) - oracle) < 1e-12);
  CHECK(std_normal_cdf(1.959964) == doctest::Approx(0.975).epsilon(1e-7));

  RngStream rng(RngStream::mix(123));
  for (int i = 0; i < 50; ++i) {
    const double x = 8.0 * (rng.next_double() - 0.5);
    CHECK(std::abs(std_normal_cdf(x) - testutil::normal_cdf_quadrature(x)) < 1e-12);
  }
}

TEST_CASE("normal cdf is monotone nondecreasing") {
  RngStream rng(RngStream::mix(5));
  for (int i = 0; i < 200; ++i) {
    const double x = 20.0 * (rng.next_double() - 0.5);
    const double d = 1e-3 * rng.next_double();
    CHECK(std_normal_cdf(x + d) >= std_normal_cdf(x));
  }
}

TEST_CASE("normal pdf: peak value, symmetry, tail") {
  // 1/sqrt(2 pi) by independent arithmetic.
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
  CHECK(std_normal_pdf(0.0) == doctest::Approx(inv_sqrt_2pi).epsilon(1e-14));
  CHECK(std_normal_pdf(3.0) == std_normal_pdf(-3.0));
  CHECK(std_normal_pdf(40.0) < 1e-300);
}

TEST_CASE("finite-difference relation between cdf and pdf") {
  RngStream rng(RngStream::mix(77));
  const double delta = 1e-5;
  for (int i = 0; i < 100; ++i) {
    const double x = 10.0 * (rng.next_double() - 0.5);
    const double fd = (std_normal_cdf(x + delta) - std_normal_cdf(x - delta)) / (2.0 * delta);
    CHECK(std::abs(fd - std_normal_pdf(x)) < 1e-8);
  }
}

TEST_CASE("tempered sigmoid: midpoint, direct value, zero-temperature limit") {
  CHECK(tempered_sigmoid(0.0, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(tempered_sigmoid(0.0, 1e-6) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(tempered_sigmoid(1.0, 1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(std::abs(tempered_sigmoid(0.3, 1e-6) - 1.0) < 1e-12);
  CHECK_THROWS_AS(tempered_sigmoid(0.1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(tempered_sigmoid(0.1, -1.0), std::invalid_argument);
}

TEST_CASE("tempered sigmoid complement identity") {
  RngStream rng(RngStream::mix(9));
  for (int i = 0; i < 200; ++i) {
    const double x = 30.0 * (rng.next_double() - 0.5);
    const double k = 0.01 + 3.0 * rng.next_double();
    CHECK(std::abs(tempered_sigmoid(x, k) + tempered_sigmoid(-x, k) - 1.0) < 1e-15);
  }
}

TEST_CASE("rng: determinism and distinctness of substreams") {
  const std::uint64_t path_a[] = {0};
  const std::uint64_t path_b[] = {1};
  RngStream a1 = RngStream::from(42, path_a);
  RngStream a2 = RngStream::from(42, path_a);
  RngStream b = RngStream::from(42, path_b);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t va = a1.next_u64();
    all_equal = all_equal && (va == a2.next_u64());
    any_diff = any_diff || (va != b.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("rng: uniform mean over 1e6 draws") {
  RngStream rng = RngKey(2024).child(7).stream();
  double sum = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) sum += rng.next_double();
  CHECK(std::abs(sum / n - 0.5) < 0.002);  // ~4 sigma of 1/sqrt(12 n)
}

TEST_CASE("rng: gaussian moments") {
  RngStream rng = RngKey(3).child(1).stream();
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double g = rng.next_gaussian();
    sum += g;
    sq += g * g;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("rng key children are order-sensitive") {
  RngKey root(1);
  CHECK(root.child(1).child(2).stream().next_u64() != root.child(2).child(1).stream().next_u64());
}

TEST_CASE("tensor: shape checks on element-wise ops") {
  Tensor a({2, 3}, 1.0);
  Tensor b({3, 2}, 1.0);
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(a.mul_(b), std::invalid_argument);

  Tensor c({2, 3}, 2.0);
  const Tensor s = add(a, c);
  CHECK(s(1, 2) == 3.0);
  CHECK(s.same_shape(a));
}

TEST_CASE("tensor: matmul and matvec shapes") {
  Tensor m = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor v = Tensor::from({3}, {1, 0, 1});
  const Tensor mv = matvec(m, v);
  CHECK(mv(0) == 4.0);
  CHECK(mv(1) == 10.0);
  CHECK_THROWS_AS(matvec(m, Tensor({2})), std::invalid_argument);

  const Tensor mm = matmul(m, Tensor::from({3, 1}, {1, 1, 1}));
  CHECK(mm(0, 0) == 6.0);
  CHECK(mm(1, 0) == 15.0);
}

TEST_CASE("tensor: from rejects mismatched data") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK(Tensor::from({2, 2}, {1, 0, 0, 1}).is_binary());
  CHECK_FALSE(Tensor::from({1}, {0.5}).is_binary());
}
