#include "paramap/core_network.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "paramap/codec.hpp"
#include "paramap/labeling.hpp"
#include "paramap/rng.hpp"

namespace paramap::cn {

using nn::LayerSpec;

namespace {

constexpr int kFormatVersion = 1;

std::string activation_name(nn::Activation a) { return a == nn::Activation::elu ? "elu" : "tanh"; }

}  // namespace

void to_json(nlohmann::json& j, const CoreNetworkSpec& s) {
  j = nlohmann::json{{"conv_kernel", s.conv_kernel},     {"conv_stride", s.conv_stride},
                     {"conv_channels", s.conv_channels}, {"trunk", s.trunk},
                     {"dropout", s.dropout},             {"validation_fraction", s.validation_fraction},
                     {"train", s.train}};
}

void from_json(const nlohmann::json& j, CoreNetworkSpec& s) {
  s.conv_kernel = j.value("conv_kernel", s.conv_kernel);
  s.conv_stride = j.value("conv_stride", s.conv_stride);
  s.conv_channels = j.value("conv_channels", s.conv_channels);
  s.trunk = j.value("trunk", s.trunk);
  s.dropout = j.value("dropout", s.dropout);
  s.validation_fraction = j.value("validation_fraction", s.validation_fraction);
  if (j.contains("train")) j.at("train").get_to(s.train);
  if (s.conv_kernel < 1 || s.conv_stride < 1 || s.conv_channels < 1) throw std::invalid_argument("bad cn conv");
  if (!(s.dropout >= 0.0 && s.dropout < 1.0)) throw std::invalid_argument("cn dropout must be in [0, 1)");
  if (!(s.validation_fraction >= 0.0 && s.validation_fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must be in [0, 1)");
  }
}

nn::NetworkSpec build_cn(const std::vector<npe::MatrixShape>& shapes, const env::Specs& specs,
                         const CoreNetworkSpec& cfg) {
  if (shapes.empty()) throw std::invalid_argument("core network needs at least one meta matrix");
  env::validate_specs(specs);
  nn::NetworkSpec net;
  for (const auto& s : shapes) net.input_shapes.push_back({1, s.rows, s.cols});
  auto& L = net.layers;
  auto last = [&] { return net.node_of(L.size() - 1); };

  std::vector<int> branch_out;
  int width = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    const int input = static_cast<int>(i);
    if (s.rows >= cfg.conv_kernel && s.cols >= cfg.conv_kernel) {
      L.push_back(LayerSpec::conv2d(1, cfg.conv_channels, cfg.conv_kernel, cfg.conv_stride, nn::Padding::same, {input}));
      L.push_back(LayerSpec::act(nn::Activation::relu));
      L.push_back(LayerSpec::flatten());
      const int oh = (s.rows + cfg.conv_stride - 1) / cfg.conv_stride;
      const int ow = (s.cols + cfg.conv_stride - 1) / cfg.conv_stride;
      width += cfg.conv_channels * oh * ow;
    } else {
      L.push_back(LayerSpec::flatten({input}));
      width += s.rows * s.cols;
    }
    branch_out.push_back(last());
  }
  if (branch_out.size() > 1) L.push_back(LayerSpec::concat(branch_out));
  int in = width;
  for (int w : cfg.trunk) {
    L.push_back(LayerSpec::dense(in, w));
    L.push_back(LayerSpec::act(nn::Activation::tanh));
    if (cfg.dropout > 0.0) L.push_back(LayerSpec::dropout(cfg.dropout));
    in = w;
  }
  const int trunk_out = last();
  std::vector<int> heads;
  for (const auto& s : specs) {
    L.push_back(LayerSpec::dense(in, 1, {trunk_out}));
    L.push_back(LayerSpec::act(s.head));
    heads.push_back(last());
  }
  if (heads.size() > 1) L.push_back(LayerSpec::concat(heads));
  nn::infer_shapes(net);
  return net;
}

std::vector<int> branch_widths(const nn::NetworkSpec& net) {
  const auto shapes = nn::infer_shapes(net);
  std::vector<int> out;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& L = net.layers[i];
    if (L.kind != nn::LayerKind::flatten) continue;
    out.push_back(shapes[static_cast<std::size_t>(net.node_of(i))].size());
    if (static_cast<int>(out.size()) == net.num_inputs()) break;
  }
  return out;
}

LabeledExample make_example(npe::EncodedMeta meta, env::HyperparamVector raw_label, double accuracy,
                            const env::Specs& specs) {
  auto z = labeling::transform_label(raw_label, specs);
  return {std::move(meta), std::move(raw_label), std::move(z), accuracy};
}

Normalizer Normalizer::fit(const std::vector<const npe::EncodedMeta*>& metas) {
  if (metas.empty()) throw std::invalid_argument("cannot fit a normalizer on no metas");
  Normalizer n;
  const auto& first = *metas.front();
  const double count = static_cast<double>(metas.size());
  for (std::size_t k = 0; k < first.matrices.size(); ++k) {
    const std::size_t size = first.matrices[k].data.size();
    std::vector<double> mean(size, 0.0), var(size, 0.0);
    for (const auto* m : metas) {
      for (std::size_t i = 0; i < size; ++i) mean[i] += m->matrices[k].data[i];
    }
    for (double& v : mean) v /= count;
    for (const auto* m : metas) {
      for (std::size_t i = 0; i < size; ++i) {
        const double d = m->matrices[k].data[i] - mean[i];
        var[i] += d * d;
      }
    }
    std::vector<double> scale(size);
    for (std::size_t i = 0; i < size; ++i) {
      const double sd = std::sqrt(var[i] / count);
      scale[i] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    n.mean.push_back(std::move(mean));
    n.scale.push_back(std::move(scale));
  }
  return n;
}

Normalizer Normalizer::identity(const std::vector<npe::MatrixShape>& shapes) {
  Normalizer n;
  for (const auto& s : shapes) {
    const auto size = static_cast<std::size_t>(s.rows) * s.cols;
    n.mean.emplace_back(size, 0.0);
    n.scale.emplace_back(size, 1.0);
  }
  return n;
}

std::vector<nn::Tensor> Normalizer::apply(const npe::EncodedMeta& meta) const {
  if (meta.matrices.size() != mean.size()) throw std::invalid_argument("meta has the wrong number of matrices");
  std::vector<nn::Tensor> out;
  for (std::size_t k = 0; k < meta.matrices.size(); ++k) {
    const auto& m = meta.matrices[k];
    if (m.data.size() != mean[k].size()) throw std::invalid_argument("meta matrix has the wrong size");
    nn::Tensor t({1, m.rows, m.cols});
    for (std::size_t i = 0; i < m.data.size(); ++i) t.data[i] = (m.data[i] - mean[k][i]) * scale[k][i];
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

void check_meta(const CoreNetworkModel& model, const npe::EncodedMeta& meta) {
  if (meta.spec_hash != model.encoder_hash) {
    throw HashMismatch("meta encoded with spec " + codec::hex64(meta.spec_hash) + ", model expects " +
                       codec::hex64(model.encoder_hash));
  }
  if (meta.shapes() != model.shapes) throw std::invalid_argument("meta matrix shapes do not match the model");
}

}  // namespace

CoreNetworkModel train_cn(const std::vector<LabeledExample>& examples, const env::Specs& specs,
                          const CoreNetworkSpec& cfg, std::uint64_t seed, const StepHook& on_step) {
  if (examples.size() < 2) throw std::invalid_argument("core network training needs at least two examples");
  CoreNetworkModel model;
  model.spec = cfg;
  model.specs = specs;
  model.encoder_hash = examples.front().meta.spec_hash;
  model.shapes = examples.front().meta.shapes();
  for (const auto& e : examples) {
    check_meta(model, e.meta);
    if (e.transformed_label.size() != specs.size()) throw std::invalid_argument("label width does not match specs");
  }
  model.net = build_cn(model.shapes, specs, cfg);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 11));
  rng.shuffle(order);
  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(order.size())));
  if (cfg.validation_fraction > 0.0) n_val = std::max<std::size_t>(n_val, 1);
  n_val = std::min(n_val, order.size() - 1);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());

  std::vector<const npe::EncodedMeta*> train_metas;
  for (auto i : tr) train_metas.push_back(&examples[i].meta);
  model.norm = Normalizer::fit(train_metas);

  auto to_example = [&](const LabeledExample& e) {
    return nn::Example{model.norm.apply(e.meta), nn::Tensor::vec(e.transformed_label)};
  };
  std::vector<nn::Example> train_set, val_set;
  for (auto i : tr) {
    train_set.push_back(to_example(examples[i]));
    model.train_ids.push_back(examples[i].meta.dataset_id);
  }
  for (auto i : val) {
    val_set.push_back(to_example(examples[i]));
    model.validation_ids.push_back(examples[i].meta.dataset_id);
  }

  auto tc = cfg.train;
  tc.seed = mix_seed(cfg.train.seed, seed);
  tc.batch_size = std::min<int>(tc.batch_size, static_cast<int>(train_set.size()));
  nn::TrainOptions opts;
  opts.validation = val_set;
  opts.on_step = on_step;
  auto result = nn::train(model.net, tc, train_set, opts);
  model.params = std::move(result.params);
  model.trained = true;
  model.initial_loss = result.initial_loss;
  model.loss_history = std::move(result.loss_history);
  model.initial_validation_loss = result.initial_validation_loss;
  model.validation_history = std::move(result.validation_history);
  return model;
}

CoreNetworkModel untrained_cn(const CoreNetworkModel& reference, std::uint64_t seed) {
  CoreNetworkModel m;
  m.spec = reference.spec;
  m.specs = reference.specs;
  m.encoder_hash = reference.encoder_hash;
  m.shapes = reference.shapes;
  m.norm = reference.norm;
  m.encoder = reference.encoder;
  m.net = build_cn(m.shapes, m.specs, m.spec);
  m.params = nn::init_params(m.net, mix_seed(reference.spec.train.seed, seed));
  return m;
}

std::vector<double> predict_raw(const CoreNetworkModel& model, const npe::EncodedMeta& meta) {
  check_meta(model, meta);
  return nn::forward(model.net, model.params, model.norm.apply(meta)).data;
}

env::HyperparamVector predict(const CoreNetworkModel& model, const npe::EncodedMeta& meta) {
  return labeling::inverse_transform(predict_raw(model, meta), model.specs);
}

void to_json(nlohmann::json& j, const CoreNetworkModel& m) {
  auto shapes = nlohmann::json::array();
  for (const auto& s : m.shapes) shapes.push_back({s.rows, s.cols});
  auto norm = nlohmann::json::array();
  for (std::size_t k = 0; k < m.norm.mean.size(); ++k) {
    norm.push_back({{"mean", codec::encode_doubles(m.norm.mean[k])}, {"scale", codec::encode_doubles(m.norm.scale[k])}});
  }
  auto heads = nlohmann::json::array();
  for (const auto& s : m.specs) heads.push_back(activation_name(s.head));
  j = nlohmann::json{{"format_version", kFormatVersion},
                     {"kind", "core_network"},
                     {"spec", m.spec},
                     {"specs", m.specs},
                     {"hashes", {{"encoder_spec", codec::hex64(m.encoder_hash)}}},
                     {"shapes", shapes},
                     {"normalizer", norm},
                     {"params", m.params},
                     {"trained", m.trained},
                     {"curves",
                      {{"initial_loss", codec::encode_doubles({m.initial_loss})},
                       {"loss_history", codec::encode_doubles(m.loss_history)},
                       {"initial_validation_loss", codec::encode_doubles({m.initial_validation_loss})},
                       {"validation_history", codec::encode_doubles(m.validation_history)}}},
                     {"train_ids", m.train_ids},
                     {"validation_ids", m.validation_ids}};
  if (!m.encoder.is_null()) j["encoder"] = m.encoder;
}

void from_json(const nlohmann::json& j, CoreNetworkModel& m) {
  if (j.at("format_version").get<int>() != kFormatVersion) throw std::invalid_argument("unsupported model version");
  if (j.at("kind").get<std::string>() != "core_network") throw std::invalid_argument("not a core network model");
  j.at("spec").get_to(m.spec);
  m.specs = j.at("specs").get<env::Specs>();
  m.encoder_hash = codec::parse_hex64(j.at("hashes").at("encoder_spec").get<std::string>());
  m.shapes.clear();
  for (const auto& s : j.at("shapes")) m.shapes.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
  m.norm = {};
  for (const auto& n : j.at("normalizer")) {
    m.norm.mean.push_back(codec::decode_doubles(n.at("mean").get<std::string>()));
    m.norm.scale.push_back(codec::decode_doubles(n.at("scale").get<std::string>()));
  }
  m.net = build_cn(m.shapes, m.specs, m.spec);
  m.params = j.at("params").get<nn::NetworkParams>();
  nn::check_params(m.net, m.params);
  m.trained = j.at("trained").get<bool>();
  const auto& c = j.at("curves");
  m.initial_loss = codec::decode_doubles(c.at("initial_loss").get<std::string>()).at(0);
  m.loss_history = codec::decode_doubles(c.at("loss_history").get<std::string>());
  m.initial_validation_loss = codec::decode_doubles(c.at("initial_validation_loss").get<std::string>()).at(0);
  m.validation_history = codec::decode_doubles(c.at("validation_history").get<std::string>());
  m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
  m.validation_ids = j.at("validation_ids").get<std::vector<std::string>>();
  m.encoder = j.value("encoder", nlohmann::json());
}

void save_model(const CoreNetworkModel& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
}

CoreNetworkModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in).get<CoreNetworkModel>();
}

}  // namespace paramap::cn
