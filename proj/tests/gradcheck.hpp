#pragma once

// Finite-difference gradient checking shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "paramap/nn.hpp"

namespace gradcheck {

using namespace paramap;
using namespace paramap::nn;

struct Case {
  std::string name;
  NetworkSpec spec;
};

// One network per layer kind family; together they cover every kind.
inline std::vector<Case> cases() {
  std::vector<Case> out;
  {
    NetworkSpec s;
    s.input_shapes = {{3, 1, 1}};
    s.layers = {LayerSpec::dense(3, 4), LayerSpec::act(Activation::tanh), LayerSpec::dense(4, 2),
                LayerSpec::act(Activation::sigmoid)};
    out.push_back({"dense_tanh_sigmoid", s});
  }
  {
    NetworkSpec s;
    s.input_shapes = {{1, 5, 5}};
    s.layers = {LayerSpec::conv2d(1, 2, 3, 2, Padding::same), LayerSpec::act(Activation::elu), LayerSpec::flatten(),
                LayerSpec::dense(18, 1)};
    out.push_back({"conv_same_elu_flatten", s});
  }
  {
    // Two branches joined by concat.
    NetworkSpec s;
    s.input_shapes = {{1, 4, 4}, {2, 1, 1}};
    s.layers = {LayerSpec::conv2d(1, 1, 2, 2, Padding::valid, {0}),
                LayerSpec::act(Activation::relu),
                LayerSpec::flatten(),
                LayerSpec::concat({4, 1}),
                LayerSpec::dense(6, 2),
                LayerSpec::act(Activation::tanh)};
    out.push_back({"branches_relu_concat", s});
  }
  {
    NetworkSpec s;
    s.input_shapes = {{4, 1, 1}};
    s.layers = {LayerSpec::dense(4, 5), LayerSpec::act(Activation::tanh), LayerSpec::dropout(0.3),
                LayerSpec::dense(5, 2)};
    out.push_back({"dropout_training_mode", s});
  }
  {
    NetworkSpec s;
    s.input_shapes = {{2, 1, 1}};
    s.layers = {LayerSpec::dense(2, 4), LayerSpec::reshape({1, 2, 2}), LayerSpec::upsample2d(2),
                LayerSpec::conv2d(1, 1, 3, 1, Padding::same), LayerSpec::act(Activation::sigmoid),
                LayerSpec::flatten()};
    out.push_back({"reshape_upsample_conv", s});
  }
  return out;
}

inline std::vector<Example> random_batch(const NetworkSpec& spec, int n, Rng& rng) {
  const auto shapes = infer_shapes(spec);
  std::vector<Example> batch;
  for (int i = 0; i < n; ++i) {
    Example e;
    for (const auto& s : spec.input_shapes) {
      Tensor t(s);
      for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
      e.inputs.push_back(t);
    }
    Tensor target(shapes.back());
    for (double& v : target.data) v = rng.uniform(-1.0, 1.0);
    e.target = target;
    batch.push_back(e);
  }
  return batch;
}

// Largest relative error between analytic and central-difference gradients.
// The magnitude floor keeps rounding noise on near-zero entries from dominating.
inline double max_relative_error(const NetworkSpec& spec, std::uint64_t seed, double h = 1e-5) {
  Rng rng(seed);
  NetworkParams params = init_params(spec, seed);
  const auto batch = random_batch(spec, 3, rng);
  const std::uint64_t mask_seed = mix_seed(seed, 99);
  Rng r0(mask_seed);
  const Gradients g = backward(spec, params, batch, Loss::mse, &r0);
  double worst = 0.0;
  auto loss_at = [&](NetworkParams& p) {
    Rng r(mask_seed);
    return evaluate_loss(spec, p, batch, Loss::mse, &r);
  };
  auto probe = [&](std::vector<double>& vals, const std::vector<double>& grads) {
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double keep = vals[j];
      vals[j] = keep + h;
      const double up = loss_at(params);
      vals[j] = keep - h;
      const double down = loss_at(params);
      vals[j] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(grads[j]), 1e-6});
      worst = std::max(worst, std::abs(fd - grads[j]) / denom);
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    probe(params.layers[l].weight, g.grads.layers[l].weight);
    probe(params.layers[l].bias, g.grads.layers[l].bias);
  }
  return worst;
}

}  // namespace gradcheck
