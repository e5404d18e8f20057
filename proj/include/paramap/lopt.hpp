#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "paramap/env.hpp"

// Local refinement by recursive coordinate hill climbing. A segment tree over
// per-coordinate last-move sizes decides when a range of coordinates has settled.
namespace paramap::lopt {

class SegmentTree {
 public:
  static constexpr double kSentinel = 1e30;

  explicit SegmentTree(std::size_t n, double init = kSentinel);

  // Replaces leaf i (no accumulation).
  void update(std::size_t i, double value);
  // Inclusive range [l, r].
  [[nodiscard]] double range_sum(std::size_t l, std::size_t r) const;
  // True iff range_sum(l, r) <= eps.
  [[nodiscard]] bool check_over(std::size_t l, std::size_t r, double eps) const;
  [[nodiscard]] double leaf(std::size_t i) const;
  [[nodiscard]] std::size_t size() const { return n_; }

 private:
  double query(std::size_t node, std::size_t lo, std::size_t hi, std::size_t l, std::size_t r) const;
  void set(std::size_t node, std::size_t lo, std::size_t hi, std::size_t i, double value);
  void build(std::size_t node, std::size_t lo, std::size_t hi, double init);

  std::size_t n_;
  std::vector<double> tree_;
};

struct LoptConfig {
  // Strides and thresholds are fractions of each coordinate's u-range when
  // relative is set, raw u units otherwise.
  double epsilon = 0.25;         // initial MC stride
  double epsilon_prime = 2e-3;   // MC stops once the stride is at or below this
  double epsilon_total = 1e-2;   // settled when a range's last moves sum below its share of this
  int max_mc_iters = 200;
  int max_sweeps = 50;
  std::size_t budget = 0;  // environment evaluations; 0 means unlimited
  bool relative = true;
};

struct TraceRow {
  std::size_t step = 0;
  int coordinate = -1;  // -1 for the starting point
  double value = 0.0;
  double accuracy = 0.0;
};

class Climber {
 public:
  // A known start accuracy skips the initial evaluation.
  Climber(const env::Environment& env, const data::TabularSplit& split, LoptConfig cfg, env::HyperparamVector start,
          bool record_trace = false, std::optional<double> start_accuracy = std::nullopt);

  void mc(std::size_t x);
  void dmc(std::size_t l, std::size_t r);
  void func(std::size_t l, std::size_t r);

  [[nodiscard]] const env::HyperparamVector& current() const { return p_; }
  [[nodiscard]] double accuracy() const { return acc_; }
  [[nodiscard]] double start_accuracy() const { return start_acc_; }
  [[nodiscard]] SegmentTree& tree() { return tree_; }
  [[nodiscard]] std::size_t evaluations() const { return evals_; }
  [[nodiscard]] bool exhausted() const { return exhausted_; }
  [[nodiscard]] const std::vector<TraceRow>& trace() const { return trace_; }
  // Convergence threshold for the coordinate range [l, r].
  [[nodiscard]] double threshold(std::size_t l, std::size_t r) const;

 private:
  std::optional<double> evaluate(const env::HyperparamVector& v, int coordinate);
  [[nodiscard]] double range_of(std::size_t x) const;

  const env::Environment& env_;
  const data::TabularSplit& split_;
  LoptConfig cfg_;
  env::Specs specs_;
  env::HyperparamVector p_;
  double acc_ = 0.0;
  double start_acc_ = 0.0;
  SegmentTree tree_;
  std::size_t evals_ = 0;
  bool exhausted_ = false;
  bool record_ = false;
  std::vector<TraceRow> trace_;
  std::map<env::HyperparamVector, double> memo_;
};

struct LoptResult {
  env::HyperparamVector best;
  double accuracy = 0.0;
  double start_accuracy = 0.0;
  std::size_t evaluations = 0;
  bool budget_exhausted = false;
  std::vector<TraceRow> trace;
};

LoptResult lopt(const env::HyperparamVector& p0, const env::Environment& env, const data::TabularSplit& split,
                const LoptConfig& cfg, bool record_trace = false,
                std::optional<double> start_accuracy = std::nullopt);

// budget is not serialized; callers set it per run.
void to_json(nlohmann::json& j, const LoptConfig& c);
void from_json(const nlohmann::json& j, LoptConfig& c);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace paramap::lopt
