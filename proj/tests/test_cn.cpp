#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "paramap/core_network.hpp"
#include "paramap/labeling.hpp"
#include "paramap/rng.hpp"

using namespace paramap;
using namespace paramap::cn;
using env::DType;
using env::Scale;

namespace {

env::Specs three_specs() {
  return {{"lr", DType::real, 1e-4, 1.0, Scale::log10, nn::Activation::tanh},
          {"l2", DType::real, 1e-6, 10.0, Scale::log10, nn::Activation::tanh},
          {"epochs", DType::integer, 1.0, 200.0, Scale::linear, nn::Activation::tanh}};
}

const std::vector<npe::MatrixShape> kShapes = {{6, 13}, {2, 7}};

npe::EncodedMeta random_meta(Rng& rng, const std::string& id, std::uint64_t hash = 42) {
  npe::EncodedMeta m;
  m.dataset_id = id;
  m.spec_hash = hash;
  for (const auto& s : kShapes) {
    npe::Matrix mat{s.rows, s.cols, {}};
    for (int i = 0; i < s.rows * s.cols; ++i) mat.data.push_back(rng.normal());
    m.matrices.push_back(std::move(mat));
  }
  return m;
}

// Label depends on one meta entry so the mapping is learnable.
std::vector<LabeledExample> learnable_examples(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const auto specs = three_specs();
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto meta = random_meta(rng, "d" + std::to_string(i));
    const double t = std::tanh(meta.matrices[0].data[0]);
    const auto raw = labeling::inverse_transform({0.5 * t, t, -0.3 * t}, specs);
    out.push_back(make_example(std::move(meta), raw, 0.5, specs));
  }
  return out;
}

CoreNetworkSpec small_cfg() {
  CoreNetworkSpec c;
  c.trunk = {16, 16};
  c.train = {0.05, 60, 4, 1.0, 0, nn::Loss::mse};
  return c;
}

}  // namespace

TEST_CASE("cn structure") {
  const auto net = build_cn(kShapes, three_specs(), CoreNetworkSpec{});
  CHECK(net.num_inputs() == 2);
  const auto shapes = nn::infer_shapes(net);
  CHECK(shapes.back() == nn::Shape{3, 1, 1});
  int concats = 0, convs = 0;
  for (const auto& L : net.layers) {
    concats += L.kind == nn::LayerKind::concat;
    convs += L.kind == nn::LayerKind::conv2d;
  }
  CHECK(concats == 2);  // branches and heads
  CHECK(convs == 1);    // the 2 x 7 matrix is smaller than the 3 x 3 kernel
  const auto widths = branch_widths(net);
  REQUIRE(widths.size() == 2);
  CHECK(widths[0] == 4 * 3 * 7);
  CHECK(widths[1] == 14);
  const nn::LayerSpec* first_dense = nullptr;
  for (const auto& L : net.layers) {
    if (L.kind == nn::LayerKind::dense) {
      first_dense = &L;
      break;
    }
  }
  REQUIRE(first_dense != nullptr);
  CHECK(first_dense->in_dim == widths[0] + widths[1]);
  CHECK(first_dense->out_dim == 64);

  const auto single = build_cn({{5, 5}}, {three_specs()[0]}, CoreNetworkSpec{});
  CHECK(nn::infer_shapes(single).back() == nn::Shape{1, 1, 1});
}

TEST_CASE("cn training descends and is deterministic") {
  const auto ex = learnable_examples(40, 1);
  const auto specs = three_specs();
  const auto m1 = train_cn(ex, specs, small_cfg(), 5);
  const auto m2 = train_cn(ex, specs, small_cfg(), 5);
  CHECK(m1.loss_history.back() <= m1.initial_loss);
  CHECK(m1.loss_history.size() == 60);
  CHECK(m1.validation_history.size() == 60);
  CHECK(m1.validation_ids.size() == 4);
  CHECK(m1.train_ids.size() == 36);
  for (std::size_t i = 0; i < m1.params.layers.size(); ++i) {
    CHECK(m1.params.layers[i].weight == m2.params.layers[i].weight);
    CHECK(m1.params.layers[i].bias == m2.params.layers[i].bias);
  }
  CHECK_THROWS_AS(train_cn({ex[0]}, specs, small_cfg(), 5), std::invalid_argument);
}

TEST_CASE("cn memorizes duplicate examples") {
  auto ex = learnable_examples(1, 3);
  ex.resize(5, ex[0]);
  auto cfg = small_cfg();
  cfg.dropout = 0.0;
  cfg.validation_fraction = 0.0;
  cfg.train.epochs = 300;
  const auto m = train_cn(ex, three_specs(), cfg, 1);
  CHECK(m.loss_history.back() < 1e-4);
  CHECK(m.loss_history.back() < m.initial_loss);
}

TEST_CASE("applied gradient steps respect the clip norm") {
  const auto ex = learnable_examples(30, 4);
  auto cfg = small_cfg();
  cfg.train.clip_norm = 0.05;
  int clipped = 0, steps = 0;
  double worst = 0.0;
  (void)train_cn(ex, three_specs(), cfg, 2, [&](const nn::StepInfo& s) {
    ++steps;
    worst = std::max(worst, s.applied_norm);
    clipped += s.raw_norm > 0.05;
  });
  CHECK(steps > 0);
  CHECK(clipped > 0);
  CHECK(worst <= 0.05);
}

TEST_CASE("predictions are in bounds and hash-checked") {
  const auto ex = learnable_examples(30, 6);
  const auto specs = three_specs();
  const auto m = train_cn(ex, specs, small_cfg(), 3);
  const auto bcg = untrained_cn(m, 3);
  CHECK_FALSE(bcg.trained);
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    const auto meta = random_meta(rng, "q");
    for (const auto* model : {&m, &bcg}) {
      const auto raw = predict_raw(*model, meta);
      for (double z : raw) {
        CHECK(z > -1.0);
        CHECK(z < 1.0);
      }
      const auto v = predict(*model, meta);
      env::check_vector(specs, v);
      CHECK(v[2] == std::round(v[2]));
    }
  }
  auto wrong = random_meta(rng, "w", 7);
  CHECK_THROWS_AS(predict(m, wrong), HashMismatch);
  auto bad_shape = random_meta(rng, "s");
  bad_shape.matrices.pop_back();
  CHECK_THROWS_AS(predict(m, bad_shape), std::invalid_argument);
}

TEST_CASE("cn learns a simple mapping") {
  const auto train = learnable_examples(120, 8);
  auto cfg = small_cfg();
  cfg.train.epochs = 150;
  const auto m = train_cn(train, three_specs(), cfg, 4);
  const auto test = learnable_examples(30, 9);
  double err = 0.0, base = 0.0;
  for (const auto& e : test) {
    const auto z = predict_raw(m, e.meta);
    err += (z[1] - e.transformed_label[1]) * (z[1] - e.transformed_label[1]);
    base += e.transformed_label[1] * e.transformed_label[1];
  }
  CHECK(err < 0.5 * base);
}

TEST_CASE("model file round trip") {
  const auto ex = learnable_examples(20, 11);
  const auto m = train_cn(ex, three_specs(), small_cfg(), 6);
  const auto path = std::filesystem::temp_directory_path() / "paramap_cn_model_test.json";
  save_model(m, path);
  const auto back = load_model(path);
  std::filesystem::remove(path);
  Rng rng(12);
  for (int i = 0; i < 10; ++i) {
    const auto meta = random_meta(rng, "r");
    CHECK(predict_raw(back, meta) == predict_raw(m, meta));
  }
  CHECK(back.loss_history == m.loss_history);
  CHECK(back.validation_history == m.validation_history);
  CHECK(back.encoder_hash == m.encoder_hash);
  CHECK(back.train_ids == m.train_ids);
}
