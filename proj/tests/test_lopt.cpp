#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "paramap/lopt.hpp"
#include "paramap/rng.hpp"

using namespace paramap;
using namespace paramap::lopt;
using env::DType;
using env::Scale;

namespace {

env::Specs box(std::size_t n, double lo = -2.0, double hi = 2.0) {
  env::Specs s;
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back({"p" + std::to_string(i), DType::real, lo, hi, Scale::linear, nn::Activation::tanh});
  }
  return s;
}

const data::TabularSplit kNone;

LoptConfig raw_cfg() {
  LoptConfig c;
  c.relative = false;
  c.epsilon = 0.1;
  c.epsilon_prime = 1e-3;
  c.epsilon_total = 1e-2;
  return c;
}

}  // namespace

TEST_CASE("segment tree examples") {
  SegmentTree t(3, 0.0);
  t.update(1, 0.5);
  CHECK(t.range_sum(0, 2) == 0.5);
  t.update(1, 0.25);
  CHECK(t.range_sum(0, 2) == 0.25);
  t.update(1, 0.0);
  CHECK(t.range_sum(1, 1) == 0.0);
  CHECK_THROWS_AS(t.update(3, 1.0), std::out_of_range);
  CHECK_THROWS_AS(t.update(0, -1.0), std::invalid_argument);
  CHECK_THROWS_AS((void)t.range_sum(2, 1), std::out_of_range);

  SegmentTree fresh(5);
  CHECK_FALSE(fresh.check_over(0, 4, 1e-2));
  CHECK_FALSE(fresh.check_over(2, 2, 1e6));
  for (std::size_t i = 0; i < 5; ++i) fresh.update(i, 1e-2 / 5.0 * 0.99);
  CHECK(fresh.check_over(0, 4, 1e-2));
}

TEST_CASE("segment tree matches a naive array exactly") {
  Rng rng(1);
  for (int run = 0; run < 1000; ++run) {
    const std::size_t n = 1 + rng.below(40);
    SegmentTree t(n, 0.0);
    std::vector<double> naive(n, 0.0);
    for (int op = 0; op < 20; ++op) {
      const std::size_t i = rng.below(n);
      // Dyadic values keep every partial sum exact regardless of summation order.
      const double v = static_cast<double>(rng.below(1024)) / 64.0;
      t.update(i, v);
      naive[i] = v;
      std::size_t l = rng.below(n), r = rng.below(n);
      if (l > r) std::swap(l, r);
      double s = 0.0;
      for (std::size_t k = l; k <= r; ++k) s += naive[k];
      REQUIRE(t.range_sum(l, r) == s);
      REQUIRE(t.check_over(l, r, s) == true);
      REQUIRE(t.leaf(i) == v);
    }
  }
}

TEST_CASE("mc converges on 1-D quadratic") {
  auto specs = box(1);
  auto e = env::analytic_env(specs, {0.7}, {1.0});
  Climber c(*e, kNone, raw_cfg(), {1.0});
  c.mc(0);
  CHECK(std::abs(c.current()[0] - 0.7) < 1e-2);
  CHECK(c.tree().leaf(0) == doctest::Approx(std::abs(c.current()[0] - 1.0)));
}

TEST_CASE("mc on a flat env does not move") {
  auto specs = box(2);
  auto e = env::analytic_env(specs, {0.0, 0.0}, {0.0, 0.0});
  Climber c(*e, kNone, raw_cfg(), {0.3, -0.4});
  c.mc(0);
  CHECK(c.current() == env::HyperparamVector{0.3, -0.4});
  CHECK(c.tree().leaf(0) == 0.0);
}

TEST_CASE("mc is monotone from 100 random starts") {
  auto specs = box(2);
  auto e = env::analytic_env(specs, {0.25, -0.5}, {0.05, 0.1});
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const env::HyperparamVector start = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    const double before = e->evaluate(start, kNone);
    Climber c(*e, kNone, LoptConfig{}, start);
    c.mc(i % 2);
    CHECK(c.accuracy() >= before);
    CHECK(e->evaluate(c.current(), kNone) == c.accuracy());
    CHECK(std::abs(c.current()[i % 2] - (i % 2 ? -0.5 : 0.25)) < 1e-2);
  }
}

TEST_CASE("dmc on rotated quadratic") {
  auto specs = box(2);
  const env::HyperparamVector opt = {0.3, -0.6};
  auto e = env::rotated_env(specs, opt, std::acos(-1.0) / 4.0, {0.2, 0.5});
  auto cfg = raw_cfg();
  cfg.max_sweeps = 500;
  cfg.epsilon_total = 1e-4;
  Rng rng(6);
  for (int i = 0; i < 10; ++i) {
    const env::HyperparamVector start = {opt[0] + rng.uniform(-1.0, 1.0), opt[1] + rng.uniform(-1.0, 1.0)};
    Climber c(*e, kNone, cfg, start);
    c.dmc(0, 1);
    CHECK(std::abs(c.current()[0] - opt[0]) < 1e-2);
    CHECK(std::abs(c.current()[1] - opt[1]) < 1e-2);
  }
}

TEST_CASE("dmc on separable env equals two independent mc runs") {
  auto specs = box(2);
  auto e = env::analytic_env(specs, {0.3, -0.6}, {1.0, 2.0});
  const env::HyperparamVector start = {1.5, 0.9};
  Climber both(*e, kNone, raw_cfg(), start);
  both.dmc(0, 1);
  Climber first(*e, kNone, raw_cfg(), start);
  first.mc(0);
  Climber second(*e, kNone, raw_cfg(), start);
  second.mc(1);
  CHECK(both.current()[0] == first.current()[0]);
  CHECK(both.current()[1] == second.current()[1]);
}

TEST_CASE("dmc on a settled tree returns the input") {
  auto specs = box(2);
  auto e = env::analytic_env(specs, {0.3, -0.6}, {1.0, 2.0});
  Climber c(*e, kNone, raw_cfg(), {1.0, 1.0});
  c.tree().update(0, 0.0);
  c.tree().update(1, 0.0);
  c.dmc(0, 1);
  CHECK(c.current() == env::HyperparamVector{1.0, 1.0});
  CHECK(c.evaluations() == 1);
  CHECK_THROWS_AS(c.dmc(0, 0), std::invalid_argument);
}

TEST_CASE("lopt base case and 4-D separable recovery") {
  auto s1 = box(1);
  auto e1 = env::analytic_env(s1, {0.4}, {1.0});
  Climber single(*e1, kNone, raw_cfg(), {-1.0});
  single.mc(0);
  const auto r1 = lopt::lopt({-1.0}, *e1, kNone, raw_cfg());
  CHECK(r1.best == single.current());
  CHECK(r1.evaluations == single.evaluations());

  auto s4 = box(4);
  const env::HyperparamVector opt = {0.1, -0.7, 1.2, 0.0};
  auto e4 = env::analytic_env(s4, opt, {0.02, 0.01, 0.03, 0.02});
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    env::HyperparamVector start(4);
    for (auto& v : start) v = rng.uniform(-2.0, 2.0);
    const auto r = lopt::lopt(start, *e4, kNone, LoptConfig{});
    CHECK(r.accuracy >= e4->evaluate(start, kNone));
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(r.best[k] - opt[k]) < 1e-2);
  }
}

TEST_CASE("lopt respects log scale and integer coordinates") {
  env::Specs specs = {{"lr", DType::real, 1e-4, 1.0, Scale::log10, nn::Activation::tanh},
                      {"n", DType::integer, 1.0, 200.0, Scale::linear, nn::Activation::tanh}};
  auto e = env::analytic_env(specs, {1e-2, 57.0}, {0.2, 1e-5});
  const auto r = lopt::lopt({0.5, 190.0}, *e, kNone, LoptConfig{});
  CHECK(std::abs(std::log10(r.best[0]) + 2.0) < 1e-2);
  CHECK(r.best[1] == 57.0);
  CHECK(r.accuracy > 1.0 - 0.2 * 1e-4);
}

TEST_CASE("lopt budget exhaustion returns the incumbent") {
  auto specs = box(4);
  auto inner = env::analytic_env(specs, {0.1, 0.2, 0.3, 0.4}, {1.0, 1.0, 1.0, 1.0});
  env::CountingEnvironment counting(inner);
  auto cfg = LoptConfig{};
  cfg.budget = 9;
  const env::HyperparamVector start = {-1.0, -1.0, -1.0, -1.0};
  const auto r = lopt::lopt(start, counting, kNone, cfg, true);
  CHECK(r.budget_exhausted);
  CHECK(r.evaluations == 9);
  CHECK(counting.count() == 9);
  CHECK(r.accuracy >= inner->evaluate(start, kNone));
  CHECK(r.accuracy == inner->evaluate(r.best, kNone));
  REQUIRE(r.trace.size() == 9);
  CHECK(r.trace[0].coordinate == -1);
  std::ostringstream out;
  write_trace_csv(out, r.trace);
  CHECK(out.str().rfind("step,coordinate,value,accuracy\n", 0) == 0);
}

TEST_CASE("lopt is deterministic") {
  auto specs = box(3);
  auto e = env::rotated_env(box(2), {0.5, 0.5}, 0.5, {1.0, 2.0});
  const auto a = lopt::lopt({-1.0, 1.5}, *e, kNone, LoptConfig{});
  const auto b = lopt::lopt({-1.0, 1.5}, *e, kNone, LoptConfig{});
  CHECK(a.best == b.best);
  CHECK(a.evaluations == b.evaluations);
}

TEST_CASE("evaluation count grows sub-quadratically") {
  Rng rng(12);
  std::vector<double> evals;
  for (std::size_t n : {4u, 16u, 64u}) {
    auto specs = box(n);
    env::HyperparamVector opt(n), start(n);
    // Small enough that no start in the box hits the zero floor.
    std::vector<double> curv(n, 0.1 / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      opt[i] = rng.uniform(-1.0, 1.0);
      start[i] = rng.uniform(-2.0, 2.0);
    }
    auto inner = env::analytic_env(specs, opt, curv);
    env::CountingEnvironment counting(inner);
    const auto r = lopt::lopt(start, counting, kNone, LoptConfig{});
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(r.best[i] - opt[i]) < 1e-2);
    evals.push_back(static_cast<double>(counting.count()));
  }
  CHECK(evals[1] / evals[0] < 16.0);
  CHECK(evals[2] / evals[1] < 16.0);
}
