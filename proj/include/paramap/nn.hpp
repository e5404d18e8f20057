#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "paramap/rng.hpp"

// Small feedforward network engine: a DAG of fixed layer kinds over (C, H, W)
// tensors, processed one sample at a time with accumulated gradients.
namespace paramap::nn {

struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] int size() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(static_cast<std::size_t>(s.size()), 0.0) {}
  Tensor(Shape s, std::vector<double> d);

  // Flat vector shaped (n, 1, 1).
  static Tensor vec(std::vector<double> d);

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * shape.h + y) * shape.w + x]; }
  [[nodiscard]] double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape.h + y) * shape.w + x];
  }
};

enum class LayerKind { dense, conv2d, flatten, concat, activation, dropout, upsample2d, reshape };
enum class Activation { tanh, elu, relu, sigmoid };
enum class Padding { valid, same };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  // Node ids feeding this layer. Graph inputs are nodes 0..k-1 and layer i is
  // node k+i. Empty means "the previous node".
  std::vector<int> inputs;

  int in_dim = 0;
  int out_dim = 0;

  int kernel_h = 0;
  int kernel_w = 0;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  Padding padding = Padding::valid;

  Activation activation = Activation::tanh;
  double rate = 0.0;
  int factor = 1;
  Shape target;

  static LayerSpec dense(int in_dim, int out_dim, std::vector<int> inputs = {});
  static LayerSpec conv2d(int in_channels, int out_channels, int kernel, int stride,
                          Padding padding = Padding::valid, std::vector<int> inputs = {});
  static LayerSpec flatten(std::vector<int> inputs = {});
  static LayerSpec concat(std::vector<int> inputs);
  static LayerSpec act(Activation a, std::vector<int> inputs = {});
  static LayerSpec dropout(double rate, std::vector<int> inputs = {});
  static LayerSpec upsample2d(int factor, std::vector<int> inputs = {});
  static LayerSpec reshape(Shape target, std::vector<int> inputs = {});

  [[nodiscard]] bool parametric() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

struct NetworkSpec {
  std::vector<Shape> input_shapes;
  std::vector<LayerSpec> layers;

  [[nodiscard]] int num_inputs() const { return static_cast<int>(input_shapes.size()); }
  [[nodiscard]] int output_node() const { return num_inputs() + static_cast<int>(layers.size()) - 1; }
  // Node id of layer i.
  [[nodiscard]] int node_of(std::size_t layer) const { return num_inputs() + static_cast<int>(layer); }
};

struct LayerParams {
  std::vector<double> weight;  // dense: (out, in) row-major; conv: (out_c, in_c, kh, kw)
  std::vector<double> bias;
};

struct NetworkParams {
  std::vector<LayerParams> layers;

  [[nodiscard]] std::size_t count() const;
  [[nodiscard]] bool all_finite() const;
};

// Layer index is -1 when the problem is with the graph inputs.
class ShapeError : public std::runtime_error {
 public:
  ShapeError(int layer, const std::string& what);
  [[nodiscard]] int layer() const { return layer_; }

 private:
  int layer_;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  explicit NonFiniteLoss(std::size_t batch_index);
  [[nodiscard]] std::size_t batch_index() const { return batch_index_; }

 private:
  std::size_t batch_index_;
};

class Divergence : public std::runtime_error {
 public:
  Divergence(int epoch, std::vector<double> history);
  [[nodiscard]] int epoch() const { return epoch_; }
  [[nodiscard]] const std::vector<double>& history() const { return history_; }

 private:
  int epoch_;
  std::vector<double> history_;
};

// Validates the graph and returns the shape of every node (inputs first).
std::vector<Shape> infer_shapes(const NetworkSpec& spec);

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed);
NetworkParams zeros_like(const NetworkSpec& spec);
void check_params(const NetworkSpec& spec, const NetworkParams& params);

// Inference mode: dropout is the identity.
Tensor forward(const NetworkSpec& spec, const NetworkParams& params, const std::vector<Tensor>& inputs);

struct Example {
  std::vector<Tensor> inputs;
  Tensor target;
};

enum class Loss { mse };

struct Gradients {
  NetworkParams grads;
  double loss = 0.0;
};

// Mean over the batch of per-sample MSE (averaged over output elements).
// With a dropout generator the pass runs in training mode.
Gradients backward(const NetworkSpec& spec, const NetworkParams& params, std::span<const Example> batch,
                   Loss loss = Loss::mse, Rng* dropout = nullptr, std::size_t batch_index = 0);

double evaluate_loss(const NetworkSpec& spec, const NetworkParams& params, std::span<const Example> data,
                     Loss loss = Loss::mse, Rng* dropout = nullptr);

double global_norm(const NetworkParams& g);
NetworkParams clip_gradients(NetworkParams grads, double clip_norm);

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 100;
  int batch_size = 16;
  std::optional<double> clip_norm;
  std::uint64_t seed = 0;
  Loss loss = Loss::mse;
};

struct StepInfo {
  int epoch = 0;
  std::size_t batch = 0;
  double raw_norm = 0.0;
  double applied_norm = 0.0;
};

struct TrainOptions {
  std::span<const Example> validation;
  std::function<void(const StepInfo&)> on_step;
  const NetworkParams* init = nullptr;
};

struct TrainResult {
  NetworkParams params;
  double initial_loss = 0.0;
  std::vector<double> loss_history;  // full-data loss after each epoch, inference mode
  double initial_validation_loss = 0.0;
  std::vector<double> validation_history;
};

TrainResult train(const NetworkSpec& spec, const TrainConfig& config, std::span<const Example> data,
                  const TrainOptions& options = {});

// Inverse of a channel concat: cut a tensor into pieces of the given channel widths.
std::vector<Tensor> split_concat(const Tensor& t, const std::vector<int>& channels);

}  // namespace paramap::nn
