#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace paramap::sampling {

// Sorted, duplicate-free row indices.
using IndexSet = std::vector<std::size_t>;

double jaccard(const IndexSet& a, const IndexSet& b);

// P(J < delta) for two independent uniform S-subsets of an N-set. The overlap
// O is hypergeometric(N, S, S) and J = O / (2S - O).
double compute_p0(std::size_t N, std::size_t S, double delta);

// E[n] = m * p0^(m-1), the expected number of draws independent of all others.
double expected_independent(std::size_t m, double p0);

struct SamplePlan {
  std::size_t N = 0;
  std::size_t S = 0;
  std::size_t k = 0;
  double delta = 0.5;
  std::size_t m = 0;
  double p0 = 1.0;
};

class InfeasiblePlan : public std::runtime_error {
 public:
  InfeasiblePlan(std::size_t k, double max_expected, std::size_t best_m);
  [[nodiscard]] double max_expected() const { return max_expected_; }
  [[nodiscard]] std::size_t best_m() const { return best_m_; }

 private:
  double max_expected_;
  std::size_t best_m_;
};

// Smallest m with m * p0^(m-1) >= k.
SamplePlan plan_m(std::size_t N, std::size_t S, std::size_t k, double delta);
SamplePlan plan_from_p0(std::size_t N, std::size_t S, std::size_t k, double delta, double p0);

struct SampleSet {
  std::string source;
  std::size_t N = 0;
  std::size_t S = 0;
  double delta = 0.5;
  std::size_t draws = 0;  // draws actually performed
  std::vector<IndexSet> subsets;
};

class InsufficientSamples : public std::runtime_error {
 public:
  InsufficientSamples(std::size_t retained, std::size_t wanted, std::size_t draws);
  [[nodiscard]] std::size_t retained() const { return retained_; }

 private:
  std::size_t retained_;
};

// Draws uniform S-subsets, keeping each one whose similarity to every kept
// subset is below delta. Stops once plan.k are kept or plan.m draws are spent.
SampleSet sample_independent(const SamplePlan& plan, std::uint64_t seed, const std::string& source = "");

// Exhaustive pairwise check.
bool pairwise_independent(const SampleSet& s);

void to_json(nlohmann::json& j, const SampleSet& s);
void from_json(const nlohmann::json& j, SampleSet& s);
void to_json(nlohmann::json& j, const SamplePlan& p);

}  // namespace paramap::sampling
