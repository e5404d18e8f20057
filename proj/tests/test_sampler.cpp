#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "paramap/rng.hpp"
#include "paramap/sampler.hpp"

using namespace paramap;
using namespace paramap::sampling;

namespace {

// All S-subsets of {0..N-1}.
std::vector<IndexSet> all_subsets(std::size_t N, std::size_t S) {
  std::vector<IndexSet> out;
  for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != S) continue;
    IndexSet s;
    for (std::size_t i = 0; i < N; ++i) {
      if (mask & (1u << i)) s.push_back(i);
    }
    out.push_back(s);
  }
  return out;
}

double brute_p0(std::size_t N, std::size_t S, double delta) {
  const auto subs = all_subsets(N, S);
  std::size_t good = 0;
  for (const auto& a : subs) {
    for (const auto& b : subs) good += jaccard(a, b) < delta;
  }
  return static_cast<double>(good) / static_cast<double>(subs.size() * subs.size());
}

IndexSet random_subset(std::size_t N, std::size_t S, Rng& rng) {
  std::vector<std::size_t> p(N);
  for (std::size_t i = 0; i < N; ++i) p[i] = i;
  for (std::size_t i = 0; i < S; ++i) std::swap(p[i], p[i + rng.below(N - i)]);
  IndexSet s(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(S));
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

TEST_CASE("jaccard examples") {
  CHECK(jaccard({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(jaccard({1, 2}, {3, 4}) == 0.0);
  CHECK(jaccard({1, 2, 3}, {2, 3, 4}) == 0.5);
  CHECK(jaccard({1, 5}, {2, 3, 4}) == jaccard({2, 3, 4}, {1, 5}));
  CHECK_THROWS(jaccard({}, {}));
}

TEST_CASE("p0 matches brute-force enumeration") {
  // Overlap 1 of two 2-subsets gives J = 1/3 < 0.5, so only O = 2 fails.
  CHECK(brute_p0(4, 2, 0.5) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(compute_p0(4, 2, 0.5) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  for (std::size_t N = 3; N <= 8; ++N) {
    for (std::size_t S = 1; S < N; ++S) {
      for (double delta : {0.05, 0.2, 1.0 / 3.0, 0.5, 0.7, 1.0}) {
        INFO(N << " " << S << " " << delta);
        CHECK(compute_p0(N, S, delta) == doctest::Approx(brute_p0(N, S, delta)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("p0 boundary delta = 1") {
  // Only full overlap reaches J = 1: p0 = 1 - 1/C(N,S).
  CHECK(compute_p0(10, 3, 1.0) == doctest::Approx(1.0 - 1.0 / 120.0).epsilon(1e-12));
}

TEST_CASE("p0 for the 60000/1000/0.2 example") {
  const double p0 = compute_p0(60000, 1000, 0.2);
  CHECK(p0 > 0.99999);
  CHECK(1800.0 * std::pow(p0, 1799.0) >= 1000.0);
  CHECK(expected_independent(1800, 0.99999) == doctest::Approx(1767.9).epsilon(1e-4));
}

TEST_CASE("p0 agrees with Monte Carlo") {
  Rng rng(17);
  for (int t = 0; t < 10; ++t) {
    const std::size_t N = 10 + rng.below(60);
    const std::size_t S = 1 + rng.below(N / 2);
    const double delta = 0.02 + 0.3 * rng.uniform();
    const double p0 = compute_p0(N, S, delta);
    const int trials = 100000;
    int hits = 0;
    for (int i = 0; i < trials; ++i) hits += jaccard(random_subset(N, S, rng), random_subset(N, S, rng)) < delta;
    const double est = static_cast<double>(hits) / trials;
    const double se = std::max(std::sqrt(p0 * (1 - p0) / trials), 1.0 / trials);
    INFO(N << " " << S << " " << delta << " p0=" << p0 << " mc=" << est);
    CHECK(std::abs(est - p0) <= 3 * se);
  }
}

TEST_CASE("plan_m") {
  const auto p = plan_from_p0(60000, 1000, 1000, 0.2, 0.99999);
  CHECK(expected_independent(1000, 0.99999) < 1000.0);
  CHECK(p.m > 1000);
  CHECK(p.m <= 1800);
  CHECK(expected_independent(p.m, 0.99999) >= 1000.0);
  CHECK(expected_independent(p.m - 1, 0.99999) < 1000.0);
  CHECK(plan_from_p0(100, 10, 7, 0.5, 1.0).m == 7);
  CHECK(plan_from_p0(100, 10, 1, 0.5, 0.9).m == 1);
  CHECK(plan_m(200, 20, 5, 0.5).m >= 5);

  std::size_t last = 0;
  for (std::size_t k = 1; k <= 30; ++k) {
    const auto q = plan_from_p0(1000, 10, k, 0.3, 0.99);
    CHECK(q.m >= last);
    last = q.m;
  }
  try {
    plan_from_p0(100, 10, 50, 0.5, 0.9);
    FAIL("expected infeasible");
  } catch (const InfeasiblePlan& e) {
    CHECK(e.max_expected() < 50.0);
    CHECK(e.max_expected() > 3.0);
  }
}

TEST_CASE("sample_independent contract") {
  SamplePlan plan = plan_from_p0(10, 2, 5, 0.9, compute_p0(10, 2, 0.9));
  plan.m = 200;
  const auto s = sample_independent(plan, 3, "tiny");
  CHECK(s.subsets.size() == 5);
  CHECK(pairwise_independent(s));
  const auto again = sample_independent(plan, 3, "tiny");
  CHECK(again.subsets == s.subsets);

  // Near-zero delta forces disjoint subsets, so at most N/S survive.
  SamplePlan strict{10, 2, 5, 1e-9, 5000, 0.0};
  const auto d = sample_independent(strict, 5);
  CHECK(d.subsets.size() == 5);
  CHECK(pairwise_independent(d));
  strict.k = 6;
  try {
    sample_independent(strict, 5);
    FAIL("expected shortfall");
  } catch (const InsufficientSamples& e) {
    CHECK(e.retained() == 5);
  }
}

TEST_CASE("sample set json round trip") {
  const auto plan = plan_m(200, 20, 5, 0.5);
  const auto s = sample_independent(plan, 1, "corpus");
  const nlohmann::json j = s;
  const auto back = j.get<SampleSet>();
  CHECK(back.subsets == s.subsets);
  CHECK(back.source == "corpus");
}
