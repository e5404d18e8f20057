#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "paramap/datasets.hpp"
#include "paramap/nn.hpp"

// Network parameter embedding: a dataset is described by the encoder weights
// of an autoencoder trained on its (attributes, one-hot label) pairs.
namespace paramap::npe {

enum class Variant { table, image };

struct ConvStage {
  int channels = 4;
  int kernel = 3;
  int stride = 2;
};

struct EncoderSpec {
  Variant variant = Variant::table;
  // Table geometry. hidden lists encoder widths between input and bottleneck;
  // left empty it defaults to ceil(input / 2) when that lies strictly between.
  int n_features = 0;
  std::vector<int> hidden;
  // Image geometry.
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<ConvStage> conv;

  int n_classes = 0;
  int bottleneck = 2;
  nn::TrainConfig train;
};

void to_json(nlohmann::json& j, const EncoderSpec& s);
void from_json(const nlohmann::json& j, EncoderSpec& s);

// FNV-1a 64 of the canonical JSON form.
std::uint64_t spec_hash(const EncoderSpec& s);

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  [[nodiscard]] double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const Matrix&) const = default;
};

struct MatrixShape {
  int rows = 0;
  int cols = 0;
  bool operator==(const MatrixShape&) const = default;
};

struct EncodedMeta {
  std::vector<Matrix> matrices;
  std::string dataset_id;
  std::uint64_t spec_hash = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;

  [[nodiscard]] std::vector<MatrixShape> shapes() const;
};

struct Autoencoder {
  nn::NetworkSpec net;
  // Layer indices of the parametric encoder layers, in order.
  std::vector<std::size_t> encoder_layers;
};

Autoencoder build_table_npe(const EncoderSpec& spec, int n_features, int n_classes);
Autoencoder build_image_npe(const EncoderSpec& spec, int height, int width, int channels, int n_classes);
Autoencoder build_npe(const EncoderSpec& spec);

// Shapes of the exported matrices, a function of the spec alone.
std::vector<MatrixShape> meta_shapes(const EncoderSpec& spec);

// Weight (out, in) plus bias as column in + 1. Conv kernels flatten to in_c * kh * kw.
Matrix with_bias(const nn::LayerSpec& layer, const nn::LayerParams& p);
nn::LayerParams split_bias(const Matrix& m);

std::vector<nn::Example> table_examples(const data::TabularDataset& d);
std::vector<nn::Example> image_examples(const data::ImageDataset& d);

// Trains the autoencoder (seeded by spec.train.seed mixed with seed) and
// exports the encoder matrices.
EncodedMeta encode_dataset(const data::TabularDataset& d, const EncoderSpec& spec, std::uint64_t seed,
                           const std::string& dataset_id = "");
EncodedMeta encode_dataset(const data::ImageDataset& d, const EncoderSpec& spec, std::uint64_t seed,
                           const std::string& dataset_id = "");

void to_json(nlohmann::json& j, const EncodedMeta& m);
void from_json(const nlohmann::json& j, EncodedMeta& m);

}  // namespace paramap::npe
