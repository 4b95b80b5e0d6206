#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "pswa/analytics.hpp"
#include "pswa/error.hpp"
#include "pswa/rng.hpp"

using namespace pswa;

namespace {

std::vector<double> random_series(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double level = 40.0;
  for (auto& x : v) {
    level = std::clamp(level + rng.uniform(-1.0, 2.0), 0.0, 100.0);
    x = std::clamp(level + rng.uniform(-3.0, 3.0), 0.0, 100.0);
  }
  return v;
}

}  // namespace

TEST_CASE("threshold_epoch") {
  const std::vector<double> s{50, 70, 91, 89};
  CHECK(threshold_epoch(s, 90) == 2u);
  CHECK_FALSE(threshold_epoch(s, 99).has_value());
  const std::vector<double> flat(5, 75.0);
  CHECK(threshold_epoch(flat, 75.0) == 0u);
  CHECK_THROWS_AS(threshold_epoch(s, 0.0), UsageError);
  CHECK_THROWS_AS(threshold_epoch(s, 100.0), UsageError);

  SUBCASE("monotone in threshold") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      const auto v = random_series(rng, 60);
      std::size_t last = 0;
      bool absent = false;
      for (double th = 1.0; th < 100.0; th += 0.5) {
        const auto e = threshold_epoch(v, th);
        if (!e) {
          absent = true;
          continue;
        }
        CHECK_FALSE(absent);  // once unreachable, higher thresholds stay unreachable
        CHECK(*e >= last);
        last = *e;
      }
    }
  }
}

TEST_CASE("window_stats") {
  const std::vector<double> ones(4, 1.0);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b <= 4; ++b) CHECK(window_stats(ones, a, b).sd == 0.0);
  const std::vector<double> two{0, 2};
  CHECK(window_stats(two, 0, 2).mean == 1.0);
  CHECK(window_stats(two, 0, 2).sd == 1.0);
  CHECK_THROWS_AS(window_stats(two, 1, 1), UsageError);
  CHECK_THROWS_AS(window_stats(two, 0, 3), UsageError);

  SUBCASE("random series against a Welford oracle") {
    Rng rng(9);
    std::vector<double> v(1000);
    for (auto& x : v) x = rng.uniform(0.0, 100.0);
    for (auto [a, b] : {std::pair<std::size_t, std::size_t>{0, 1000}, {20, 30}, {999, 1000}, {137, 801}}) {
      double mean = 0.0, m2 = 0.0;
      for (std::size_t i = a; i < b; ++i) {
        const double k = static_cast<double>(i - a + 1);
        const double d = v[i] - mean;
        mean += d / k;
        m2 += d * (v[i] - mean);
      }
      const auto w = window_stats(v, a, b);
      CHECK(std::abs(w.mean - mean) < 1e-9);
      CHECK(std::abs(w.sd - std::sqrt(m2 / static_cast<double>(b - a))) < 1e-9);
    }
  }
}

TEST_CASE("monotonic_stats") {
  const std::vector<double> rising{1, 2, 3, 4, 5};
  const auto r = monotonic_stats(rising);
  CHECK(r.improve_frac == 1.0);
  CHECK(r.stable_frac == 1.0);
  CHECK(r.stable_vs_max_frac == 1.0);

  const auto small_drop = monotonic_stats(std::vector<double>{90.0, 89.9}, 0.2);
  CHECK(small_drop.improve_frac == 0.0);
  CHECK(small_drop.stable_frac == 1.0);
  CHECK(small_drop.stable_vs_max_frac == 1.0);

  // pairs: 90->88 drop, 88->91 rise, 91->90.9 within tol
  const auto mixed = monotonic_stats(std::vector<double>{90, 88, 91, 90.9}, 0.2);
  CHECK(mixed.improve_frac == doctest::Approx(1.0 / 3.0));
  CHECK(mixed.stable_frac == doctest::Approx(2.0 / 3.0));
  CHECK(mixed.stable_vs_max_frac == doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(monotonic_stats(std::vector<double>{1.0}), UsageError);

  SUBCASE("fractions bounded, improvement implies stability, enumeration oracle") {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
      const auto v = random_series(rng, 2 + rng.below(40));
      const double tol = rng.uniform(0.0, 2.0);
      const auto m = monotonic_stats(v, tol);
      for (double f : {m.improve_frac, m.stable_frac, m.stable_vs_max_frac}) {
        CHECK(f >= 0.0);
        CHECK(f <= 1.0);
      }
      CHECK(m.improve_frac <= m.stable_frac);
      std::size_t count = 0;
      for (std::size_t t = 1; t < v.size(); ++t) {
        double prefix_max = v[0];
        for (std::size_t u = 1; u <= t; ++u) prefix_max = std::max(prefix_max, v[u]);
        count += v[t] >= prefix_max - tol;
      }
      CHECK(m.stable_vs_max_frac == doctest::Approx(static_cast<double>(count) / (v.size() - 1)));
    }
  }
}

TEST_CASE("compare_runs") {
  const std::vector<double> base{10, 20, 30, 40};
  CHECK(compare_runs(base, base) == 0.0);
  std::vector<double> plus3 = base;
  for (auto& x : plus3) x += 3.0;
  CHECK(compare_runs(plus3, base) == doctest::Approx(3.0));
  CHECK_THROWS_AS(compare_runs(std::vector<double>{1, 2}, base), UsageError);

  SUBCASE("range restriction equals the truncated computation") {
    Rng rng(2);
    const auto a = random_series(rng, 80), b = random_series(rng, 80);
    const std::vector<double> at(a.begin(), a.begin() + 30), bt(b.begin(), b.begin() + 30);
    CHECK(compare_runs(a, b, 0, 30) == doctest::Approx(compare_runs(at, bt)).epsilon(1e-12));
  }
}
