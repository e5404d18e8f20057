#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "paramap/env.hpp"
#include "paramap/lopt.hpp"
#include "paramap/rng.hpp"

// Oracle labels for sampled datasets and the bounded label transform the CN
// regresses on.
namespace paramap::labeling {

// Transformed labels live in [-kZoom, kZoom], inside the open tanh range.
inline constexpr double kZoom = 0.95;

std::vector<double> transform_label(const env::HyperparamVector& p, const env::Specs& specs);
// Total: clamps z, maps back to native scale, rounds integer dtypes.
env::HyperparamVector inverse_transform(const std::vector<double>& z, const env::Specs& specs);

// Uniform in u-space; integer dtypes uniform over their integers.
env::HyperparamVector sample_uniform(const env::Specs& specs, Rng& rng);

struct SearchResult {
  env::HyperparamVector best;
  double accuracy = 0.0;
  std::size_t evaluations = 0;
};

// Best of `probes` seeded uniform probes. Ties keep the earlier probe.
SearchResult random_search(const env::Environment& env, const data::TabularSplit& split, std::size_t probes,
                           std::uint64_t seed);

class LabelingError : public std::runtime_error {
 public:
  LabelingError(std::string dataset_id, const std::string& what);
  [[nodiscard]] const std::string& dataset_id() const { return id_; }

 private:
  std::string id_;
};

// Random search with max(d + 1, budget / 2) probes, then LOPT from the
// incumbent with whatever budget remains.
SearchResult label_dataset(const env::Environment& env, const data::TabularSplit& split, std::size_t budget,
                           std::uint64_t seed, const lopt::LoptConfig& cfg = {}, const std::string& dataset_id = "");

}  // namespace paramap::labeling
