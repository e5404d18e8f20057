#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "paramap/nn.hpp"

using namespace paramap;
using namespace paramap::nn;

namespace {

NetworkSpec single_dense(int in, int out) {
  NetworkSpec s;
  s.input_shapes = {{in, 1, 1}};
  s.layers = {LayerSpec::dense(in, out)};
  return s;
}

}  // namespace

TEST_CASE("dense identity passes input through") {
  auto spec = single_dense(2, 2);
  NetworkParams p = zeros_like(spec);
  p.layers[0].weight = {1, 0, 0, 1};
  const Tensor y = forward(spec, p, {Tensor::vec({0.3, -0.7})});
  CHECK(y.data == std::vector<double>{0.3, -0.7});
}

TEST_CASE("tanh of zero is zero") {
  NetworkSpec spec;
  spec.input_shapes = {{2, 1, 1}};
  spec.layers = {LayerSpec::dense(2, 1), LayerSpec::act(Activation::tanh)};
  NetworkParams p = zeros_like(spec);
  p.layers[0].weight = {1, 1};
  CHECK(forward(spec, p, {Tensor::vec({0, 0})}).data[0] == 0.0);
}

TEST_CASE("two-layer net matches hand-rolled matrix arithmetic") {
  NetworkSpec spec;
  spec.input_shapes = {{3, 1, 1}};
  spec.layers = {LayerSpec::dense(3, 4), LayerSpec::act(Activation::tanh), LayerSpec::dense(4, 2)};
  const NetworkParams p = init_params(spec, 7);
  const std::vector<double> x = {0.2, -0.4, 0.9};
  std::vector<double> h(4);
  for (int o = 0; o < 4; ++o) {
    double s = p.layers[0].bias[o];
    for (int i = 0; i < 3; ++i) s += p.layers[0].weight[o * 3 + i] * x[i];
    h[o] = std::tanh(s);
  }
  const Tensor y = forward(spec, p, {Tensor::vec(x)});
  for (int o = 0; o < 2; ++o) {
    double s = p.layers[2].bias[o];
    for (int i = 0; i < 4; ++i) s += p.layers[2].weight[o * 4 + i] * h[i];
    CHECK(std::abs(y.data[o] - s) < 1e-10);
  }
}

TEST_CASE("shape mismatch names the layer") {
  NetworkSpec spec;
  spec.input_shapes = {{3, 1, 1}};
  spec.layers = {LayerSpec::dense(3, 4), LayerSpec::dense(5, 1)};
  try {
    infer_shapes(spec);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.layer() == 1);
  }
  auto ok = single_dense(2, 1);
  CHECK_THROWS_AS(forward(ok, zeros_like(ok), {Tensor::vec({1, 2, 3})}), ShapeError);
}

TEST_CASE("dangling branch is rejected") {
  NetworkSpec spec;
  spec.input_shapes = {{2, 1, 1}, {2, 1, 1}};
  spec.layers = {LayerSpec::dense(2, 1, {0})};
  CHECK_THROWS_AS(infer_shapes(spec), ShapeError);
}

TEST_CASE("zero residual gives zero gradients") {
  NetworkSpec spec;
  spec.input_shapes = {{3, 1, 1}};
  spec.layers = {LayerSpec::dense(3, 3), LayerSpec::act(Activation::elu), LayerSpec::dense(3, 2)};
  const NetworkParams p = init_params(spec, 3);
  Example e{{Tensor::vec({0.1, 0.5, -0.3})}, {}};
  e.target = forward(spec, p, e.inputs);
  const Gradients g = backward(spec, p, std::vector<Example>{e});
  CHECK(global_norm(g.grads) == 0.0);
}

TEST_CASE("non-finite loss carries batch index") {
  auto spec = single_dense(1, 1);
  NetworkParams p = zeros_like(spec);
  p.layers[0].weight = {1e200};
  std::vector<Example> batch{{{Tensor::vec({1e200})}, Tensor::vec({0.0})}};
  try {
    backward(spec, p, batch, Loss::mse, nullptr, 4);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(e.batch_index() == 4);
  }
}

TEST_CASE("finite differences agree on every layer kind") {
  for (const auto& c : gradcheck::cases()) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      INFO(c.name << " seed " << seed);
      CHECK(gradcheck::max_relative_error(c.spec, seed) < 1e-4);
    }
  }
}

TEST_CASE("1x1 conv reduces to dense") {
  NetworkSpec conv;
  conv.input_shapes = {{3, 1, 1}};
  conv.layers = {LayerSpec::conv2d(3, 2, 1, 1)};
  auto dense = single_dense(3, 2);
  const NetworkParams p = init_params(dense, 11);
  Rng rng(5);
  const auto batch = gradcheck::random_batch(dense, 4, rng);
  const auto gd = backward(dense, p, batch);
  const auto gc = backward(conv, p, batch);
  CHECK(gd.loss == doctest::Approx(gc.loss).epsilon(1e-14));
  for (std::size_t j = 0; j < 6; ++j) CHECK(gd.grads.layers[0].weight[j] == doctest::Approx(gc.grads.layers[0].weight[j]));
  for (std::size_t j = 0; j < 2; ++j) CHECK(gd.grads.layers[0].bias[j] == doctest::Approx(gc.grads.layers[0].bias[j]));
}

TEST_CASE("clip_gradients") {
  auto spec = single_dense(1, 1);
  NetworkParams g = zeros_like(spec);
  g.layers[0].weight = {3};
  g.layers[0].bias = {4};
  const auto c = clip_gradients(g, 1.0);
  CHECK(c.layers[0].weight[0] == doctest::Approx(0.6));
  CHECK(c.layers[0].bias[0] == doctest::Approx(0.8));
  CHECK(global_norm(c) <= 1.0);
  const auto twice = clip_gradients(c, 1.0);
  CHECK(twice.layers[0].weight == c.layers[0].weight);
  CHECK(twice.layers[0].bias == c.layers[0].bias);

  NetworkParams small = zeros_like(spec);
  small.layers[0].weight = {0.3};
  small.layers[0].bias = {0.4};
  CHECK(clip_gradients(small, 1.0).layers[0].weight[0] == 0.3);
  CHECK(global_norm(clip_gradients(zeros_like(spec), 1.0)) == 0.0);
  CHECK_THROWS(clip_gradients(g, 0.0));
}

TEST_CASE("train learns identity map") {
  auto spec = single_dense(1, 1);
  std::vector<Example> data;
  for (int i = 0; i < 20; ++i) {
    const double x = -1.0 + 0.1 * i;
    data.push_back({{Tensor::vec({x})}, Tensor::vec({x})});
  }
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 500;
  cfg.batch_size = 4;
  cfg.seed = 9;
  const auto r = train(spec, cfg, data);
  CHECK(r.loss_history.size() == 500);
  CHECK(r.loss_history.back() < 1e-4);
  const auto again = train(spec, cfg, data);
  CHECK(again.loss_history == r.loss_history);

  cfg.epochs = 0;
  const auto none = train(spec, cfg, data);
  CHECK(none.loss_history.empty());
  const auto init = init_params(spec, cfg.seed);
  CHECK(none.params.layers[0].weight == init.layers[0].weight);
  CHECK(none.params.layers[0].bias == init.layers[0].bias);
}

TEST_CASE("clipping holds on every applied step") {
  auto spec = single_dense(2, 1);
  std::vector<Example> data;
  for (int i = 0; i < 8; ++i) data.push_back({{Tensor::vec({10.0 * i, -5.0})}, Tensor::vec({100.0})});
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 5;
  cfg.batch_size = 2;
  cfg.clip_norm = 0.5;
  double worst = 0.0;
  TrainOptions opt;
  opt.on_step = [&](const StepInfo& s) { worst = std::max(worst, s.applied_norm); };
  train(spec, cfg, data, opt);
  CHECK(worst <= 0.5);
  CHECK(worst > 0.0);
}

TEST_CASE("divergence reports the epoch") {
  auto spec = single_dense(1, 1);
  std::vector<Example> data;
  for (int i = 0; i < 4; ++i) data.push_back({{Tensor::vec({100.0 + i})}, Tensor::vec({1.0})});
  TrainConfig cfg;
  cfg.learning_rate = 10.0;
  cfg.epochs = 50;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(train(spec, cfg, data), Divergence);
}

TEST_CASE("dropout is identity at inference and forward is pure") {
  NetworkSpec spec;
  spec.input_shapes = {{4, 1, 1}};
  spec.layers = {LayerSpec::dropout(0.5)};
  const Tensor x = Tensor::vec({1, 2, 3, 4});
  CHECK(forward(spec, zeros_like(spec), {x}).data == x.data);
  NetworkSpec net;
  net.input_shapes = {{4, 1, 1}};
  net.layers = {LayerSpec::dense(4, 3), LayerSpec::dropout(0.4), LayerSpec::act(Activation::relu)};
  const auto p = init_params(net, 2);
  CHECK(forward(net, p, {x}).data == forward(net, p, {x}).data);
}

TEST_CASE("concat then split recovers branches") {
  NetworkSpec spec;
  spec.input_shapes = {{2, 1, 1}, {3, 1, 1}};
  spec.layers = {LayerSpec::concat({0, 1})};
  const Tensor a = Tensor::vec({1, 2});
  const Tensor b = Tensor::vec({3, 4, 5});
  const auto parts = split_concat(forward(spec, zeros_like(spec), {a, b}), {2, 3});
  CHECK(parts[0].data == a.data);
  CHECK(parts[1].data == b.data);
}

TEST_CASE("same padding and upsample shapes") {
  NetworkSpec spec;
  spec.input_shapes = {{1, 8, 8}};
  spec.layers = {LayerSpec::conv2d(1, 3, 3, 2, Padding::same), LayerSpec::conv2d(3, 2, 3, 2, Padding::same),
                 LayerSpec::upsample2d(4)};
  const auto shapes = infer_shapes(spec);
  CHECK(shapes[1] == Shape{3, 4, 4});
  CHECK(shapes[2] == Shape{2, 2, 2});
  CHECK(shapes[3] == Shape{2, 8, 8});
}
