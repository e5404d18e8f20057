#include "paramap/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "paramap/rng.hpp"

namespace paramap::sampling {

double jaccard(const IndexSet& a, const IndexSet& b) {
  if (a.empty() && b.empty()) throw std::invalid_argument("jaccard of two empty sets");
  std::size_t inter = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

double log_choose(double n, double k) { return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1); }

// Same arithmetic as jaccard() so the planner and the filter agree at the boundary.
bool below(std::size_t o, std::size_t S, double delta) {
  return static_cast<double>(o) / static_cast<double>(2 * S - o) < delta;
}

}  // namespace

double compute_p0(std::size_t N, std::size_t S, double delta) {
  if (S == 0 || S >= N) throw std::invalid_argument("compute_p0 needs 0 < S < N");
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must be in (0,1]");
  const auto dN = static_cast<double>(N);
  const auto dS = static_cast<double>(S);
  const double log_total = log_choose(dN, dS);
  const std::size_t lo = 2 * S > N ? 2 * S - N : 0;
  double inside = 0.0;
  double outside = 0.0;
  for (std::size_t o = lo; o <= S; ++o) {
    const double lp = log_choose(dS, static_cast<double>(o)) + log_choose(dN - dS, dS - static_cast<double>(o)) - log_total;
    const double p = std::exp(lp);
    (below(o, S, delta) ? inside : outside) += p;
  }
  // Take whichever side is small directly; its complement carries no
  // accumulated rounding from the large side.
  const double total = inside + outside;
  if (outside < inside) return std::clamp(1.0 - outside / total, 0.0, 1.0);
  return std::clamp(inside / total, 0.0, 1.0);
}

double expected_independent(std::size_t m, double p0) {
  return static_cast<double>(m) * std::pow(p0, static_cast<double>(m) - 1.0);
}

InfeasiblePlan::InfeasiblePlan(std::size_t k, double max_expected, std::size_t best_m)
    : std::runtime_error("cannot expect " + std::to_string(k) + " independent subsets; best is " +
                         std::to_string(max_expected) + " at m=" + std::to_string(best_m)),
      max_expected_(max_expected),
      best_m_(best_m) {}

SamplePlan plan_from_p0(std::size_t N, std::size_t S, std::size_t k, double delta, double p0) {
  if (k == 0) throw std::invalid_argument("k must be positive");
  SamplePlan plan{N, S, k, delta, k, p0};
  if (p0 >= 1.0) return plan;
  // E(m) rises up to m* = -1/ln(p0) and falls after it.
  std::size_t peak = 1;
  if (p0 > 0.0) {
    const double mstar = -1.0 / std::log(p0);
    const auto f = static_cast<std::size_t>(std::max(1.0, std::floor(mstar)));
    peak = expected_independent(f + 1, p0) > expected_independent(f, p0) ? f + 1 : f;
  }
  const double best = expected_independent(peak, p0);
  if (best < static_cast<double>(k)) throw InfeasiblePlan(k, best, peak);
  std::size_t lo = k;
  std::size_t hi = peak;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (expected_independent(mid, p0) >= static_cast<double>(k)) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  plan.m = lo;
  return plan;
}

SamplePlan plan_m(std::size_t N, std::size_t S, std::size_t k, double delta) {
  return plan_from_p0(N, S, k, delta, compute_p0(N, S, delta));
}

InsufficientSamples::InsufficientSamples(std::size_t retained, std::size_t wanted, std::size_t draws)
    : std::runtime_error("kept " + std::to_string(retained) + " of " + std::to_string(wanted) +
                         " wanted independent subsets after " + std::to_string(draws) + " draws"),
      retained_(retained) {}

SampleSet sample_independent(const SamplePlan& plan, std::uint64_t seed, const std::string& source) {
  if (plan.S == 0 || plan.S >= plan.N) throw std::invalid_argument("plan needs 0 < S < N");
  SampleSet out{source, plan.N, plan.S, plan.delta, 0, {}};
  Rng rng(seed);
  std::vector<char> mark(plan.N, 0);
  IndexSet draw;
  while (out.draws < plan.m && out.subsets.size() < plan.k) {
    // Floyd's algorithm: S distinct indices without materializing a permutation.
    draw.clear();
    for (std::size_t j = plan.N - plan.S; j < plan.N; ++j) {
      const std::size_t t = rng.below(j + 1);
      const std::size_t pick = mark[t] ? j : t;
      mark[pick] = 1;
      draw.push_back(pick);
    }
    for (std::size_t v : draw) mark[v] = 0;
    std::sort(draw.begin(), draw.end());
    ++out.draws;
    const bool ok = std::all_of(out.subsets.begin(), out.subsets.end(),
                                [&](const IndexSet& kept) { return jaccard(draw, kept) < plan.delta; });
    if (ok) out.subsets.push_back(draw);
  }
  if (out.subsets.size() < plan.k) throw InsufficientSamples(out.subsets.size(), plan.k, out.draws);
  return out;
}

bool pairwise_independent(const SampleSet& s) {
  for (std::size_t i = 0; i < s.subsets.size(); ++i) {
    const auto& a = s.subsets[i];
    if (a.size() != s.S || !std::is_sorted(a.begin(), a.end()) || std::adjacent_find(a.begin(), a.end()) != a.end()) {
      return false;
    }
    if (!a.empty() && a.back() >= s.N) return false;
    for (std::size_t j = i + 1; j < s.subsets.size(); ++j) {
      if (!(jaccard(a, s.subsets[j]) < s.delta)) return false;
    }
  }
  return true;
}

void to_json(nlohmann::json& j, const SampleSet& s) {
  j = nlohmann::json{{"source", s.source}, {"N", s.N},           {"S", s.S},
                     {"delta", s.delta},   {"draws", s.draws}, {"subsets", s.subsets}};
}

void from_json(const nlohmann::json& j, SampleSet& s) {
  j.at("source").get_to(s.source);
  j.at("N").get_to(s.N);
  j.at("S").get_to(s.S);
  j.at("delta").get_to(s.delta);
  j.at("draws").get_to(s.draws);
  j.at("subsets").get_to(s.subsets);
}

void to_json(nlohmann::json& j, const SamplePlan& p) {
  j = nlohmann::json{{"N", p.N}, {"S", p.S}, {"k", p.k}, {"delta", p.delta}, {"m", p.m}, {"p0", p.p0}};
}

}  // namespace paramap::sampling
