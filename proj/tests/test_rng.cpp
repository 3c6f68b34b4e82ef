#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "mirrams/rng.hpp"

using namespace mirrams;

TEST_CASE("rng: identical seeds give identical streams") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(1235);
  bool all_equal = true;
  Rng a2(1234);
  for (int i = 0; i < 8; ++i) all_equal = all_equal && (a2.next_u64() == c.next_u64());
  CHECK_FALSE(all_equal);
}

TEST_CASE("rng: derived streams are independent of parent consumption") {
  Rng root(99);
  Rng d1 = root.derive(5);
  root.next_u64();
  root.next_u64();
  Rng d2 = root.derive(5);  // derive() is const on the root seed
  for (int i = 0; i < 16; ++i) CHECK(d1.next_u64() == d2.next_u64());

  Rng other = root.derive(6);
  CHECK(other.next_u64() != Rng(99).derive(5).next_u64());
}

TEST_CASE("rng: uniform stays in [0,1) and below() respects the bound") {
  Rng r(7);
  for (int i = 0; i < 2000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 2000; ++i) CHECK(r.below(13) < 13);
  CHECK(r.below(1) == 0);
}

TEST_CASE("rng: below() is close to uniform over residues") {
  Rng r(21);
  std::vector<int> counts(8, 0);
  const int n = 80000;
  for (int i = 0; i < n; ++i) ++counts[r.below(8)];
  for (int c : counts) CHECK(std::abs(c - n / 8) < 450);  // ~4.5 sigma
}

TEST_CASE("rng: normal() has roughly standard moments") {
  Rng r(17);
  double s1 = 0, s2 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s1 += z;
    s2 += z * z;
  }
  CHECK(std::abs(s1 / n) < 0.02);
  CHECK(std::abs(s2 / n - 1.0) < 0.03);
}

TEST_CASE("rng: shuffle is a seeded permutation") {
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> w = v;
  Rng a(3);
  a.shuffle(v);
  Rng b(3);
  b.shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("rng: normal_cdf matches reference values") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(normal_cdf(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-9));
  CHECK(normal_cdf(-1.5) == doctest::Approx(0.06680720126885807).epsilon(1e-9));
}

TEST_CASE("rng: inverse_normal_cdf matches reference quantiles") {
  CHECK(inverse_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(inverse_normal_cdf(0.975) == doctest::Approx(1.9599639845400543).epsilon(1e-8));
  CHECK(inverse_normal_cdf(0.2) == doctest::Approx(-0.8416212335729142).epsilon(1e-8));
  CHECK(inverse_normal_cdf(0.0) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("rng: quantile and cdf are mutual inverses") {
  for (double p : {0.01, 0.1, 0.25, 0.5, 0.77, 0.95, 0.999}) {
    CHECK(normal_cdf(inverse_normal_cdf(p)) == doctest::Approx(p).epsilon(1e-9));
  }
}
