#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "paramap/core_network.hpp"
#include "paramap/datasets.hpp"
#include "paramap/env.hpp"
#include "paramap/lopt.hpp"
#include "paramap/npe.hpp"

// Orchestration: prepare (sample, encode, label), train, evaluate, report.
// Each stage writes <out>/<stage>/ with a manifest of content hashes.
namespace paramap::pipeline {

inline constexpr int kFormatVersion = 1;

struct CorpusRef {
  std::string id;
  std::filesystem::path path;
};

struct SampleConfig {
  std::size_t S = 0;
  std::size_t k = 1;
  double delta = 0.5;
  std::optional<std::size_t> m;  // explicit draw count instead of the planner's
  double m_margin = 1.0;         // multiplies the planned draw count
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::vector<CorpusRef> corpora;
  SampleConfig sample;
  npe::EncoderSpec encoder;  // n_features / n_classes of 0 are inferred from the corpora
  env::LearnerKind learner = env::LearnerKind::ridge_logistic;
  std::size_t label_budget = 200;
  std::size_t eval_budget = 120;
  cn::CoreNetworkSpec core;
  lopt::LoptConfig lopt;
  double split_ratio = 0.9;
  double holdout_fraction = 0.1;
  int workers = 1;
  std::filesystem::path out = "run";
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);
// Relative corpus paths and out resolve against the config file's directory.
PipelineConfig load_config(const std::filesystem::path& path);

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what);
  [[nodiscard]] const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageResult {
  std::string stage;
  bool skipped = false;  // manifest already matched; nothing rewritten
  std::uint64_t manifest_hash = 0;
};

StageResult run_prepare(const PipelineConfig& cfg);
StageResult run_train(const PipelineConfig& cfg);
StageResult run_evaluate(const PipelineConfig& cfg);
StageResult run_report(const PipelineConfig& cfg);
std::vector<StageResult> run_all(const PipelineConfig& cfg);

// Shared helpers, exposed for the CLI and tests.

// Sorted class names; numeric order when every name parses as a number.
std::vector<std::string> canonical_classes(const std::vector<std::vector<std::string>>& per_corpus);
// Re-indexes labels to the given class order and pads features.
data::TabularDataset canonicalize(const data::TabularDataset& d, const std::vector<std::string>& classes,
                                  std::size_t n_features);

std::uint64_t dataset_seed(std::uint64_t seed, std::uint64_t purpose, const std::string& id);
// Seed of a dataset's 9:1 train/test split.
std::uint64_t split_seed(std::uint64_t seed, const std::string& id);
std::uint64_t hash_file(const std::filesystem::path& path);

inline const std::vector<std::string> kGroups = {"CN", "CN+LOPT", "BASELINE", "BCG"};

struct ReportRow {
  std::string dataset_id;
  std::string group;
  std::optional<double> accuracy;  // empty when the row failed
  std::size_t evaluations = 0;
  std::string error;
};

struct GroupSummary {
  std::string group;
  std::size_t n = 0;
  double max = 0, q3 = 0, median = 0, mean = 0, sd = 0, q1 = 0, min = 0;
};

// Linear interpolation between order statistics: h = (n - 1) q.
double quantile(const std::vector<double>& sorted, double q);
// sd uses n - 1 and is 0 for a single value.
GroupSummary summarize(const std::string& group, std::vector<double> values);
// Groups in kGroups order; a group with no successful row is omitted and warned about.
std::vector<GroupSummary> summarize_rows(const std::vector<ReportRow>& rows, std::vector<std::string>& warnings);

// Rank correlation with average ranks for ties. NaN when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace paramap::pipeline
