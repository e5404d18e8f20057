#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <json.hpp>

#include "paramap/env.hpp"
#include "paramap/nn.hpp"
#include "paramap/npe.hpp"

// The core network: maps an encoded dataset to transformed hyperparameters.
namespace paramap::cn {

struct CoreNetworkSpec {
  int conv_kernel = 3;
  int conv_stride = 2;
  int conv_channels = 4;
  std::vector<int> trunk = {64, 64};
  double dropout = 0.1;
  double validation_fraction = 0.1;
  nn::TrainConfig train{0.01, 300, 8, 1.0, 0, nn::Loss::mse};
};

void to_json(nlohmann::json& j, const CoreNetworkSpec& s);
void from_json(const nlohmann::json& j, CoreNetworkSpec& s);

// One branch per meta matrix: conv + relu + flatten when the matrix is at
// least kernel-sized, flatten alone otherwise.
nn::NetworkSpec build_cn(const std::vector<npe::MatrixShape>& shapes, const env::Specs& specs,
                         const CoreNetworkSpec& cfg);
// Flattened width of each branch, in input order.
std::vector<int> branch_widths(const nn::NetworkSpec& net);

struct LabeledExample {
  npe::EncodedMeta meta;
  env::HyperparamVector raw_label;
  std::vector<double> transformed_label;
  double achieved_accuracy = 0.0;
};

LabeledExample make_example(npe::EncodedMeta meta, env::HyperparamVector raw_label, double accuracy,
                            const env::Specs& specs);

// Element-wise standardization of meta matrices, fitted on training metas.
struct Normalizer {
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> scale;

  static Normalizer fit(const std::vector<const npe::EncodedMeta*>& metas);
  static Normalizer identity(const std::vector<npe::MatrixShape>& shapes);
  [[nodiscard]] std::vector<nn::Tensor> apply(const npe::EncodedMeta& meta) const;
};

struct CoreNetworkModel {
  CoreNetworkSpec spec;
  env::Specs specs;
  std::uint64_t encoder_hash = 0;
  std::vector<npe::MatrixShape> shapes;
  Normalizer norm;
  nn::NetworkSpec net;
  nn::NetworkParams params;
  bool trained = false;
  double initial_loss = 0.0;
  std::vector<double> loss_history;
  double initial_validation_loss = 0.0;
  std::vector<double> validation_history;
  std::vector<std::string> train_ids;
  std::vector<std::string> validation_ids;
  // Encoder spec the metas came from, kept so the file alone can encode new data.
  nlohmann::json encoder;
};

class HashMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using StepHook = std::function<void(const nn::StepInfo&)>;

CoreNetworkModel train_cn(const std::vector<LabeledExample>& examples, const env::Specs& specs,
                          const CoreNetworkSpec& cfg, std::uint64_t seed, const StepHook& on_step = {});

// Randomly initialized, never trained. Shares the trained model's normalizer
// so only the learning differs.
CoreNetworkModel untrained_cn(const CoreNetworkModel& reference, std::uint64_t seed);

// Head outputs before the inverse transform.
std::vector<double> predict_raw(const CoreNetworkModel& model, const npe::EncodedMeta& meta);
env::HyperparamVector predict(const CoreNetworkModel& model, const npe::EncodedMeta& meta);

void to_json(nlohmann::json& j, const CoreNetworkModel& m);
void from_json(const nlohmann::json& j, CoreNetworkModel& m);
void save_model(const CoreNetworkModel& m, const std::filesystem::path& path);
CoreNetworkModel load_model(const std::filesystem::path& path);

}  // namespace paramap::cn
