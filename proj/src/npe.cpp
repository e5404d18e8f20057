#include "paramap/npe.hpp"

#include <stdexcept>

#include "paramap/codec.hpp"
#include "paramap/rng.hpp"

namespace paramap::npe {

using nn::Activation;
using nn::LayerSpec;
using nn::Padding;

void to_json(nlohmann::json& j, const EncoderSpec& s) {
  j = nlohmann::json{{"variant", s.variant == Variant::table ? "table_npe" : "image_npe"},
                     {"n_classes", s.n_classes},
                     {"bottleneck", s.bottleneck},
                     {"train", s.train}};
  if (s.variant == Variant::table) {
    j["n_features"] = s.n_features;
    j["hidden"] = s.hidden;
  } else {
    j["height"] = s.height;
    j["width"] = s.width;
    j["channels"] = s.channels;
    auto conv = nlohmann::json::array();
    for (const auto& c : s.conv) conv.push_back({{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}});
    j["conv"] = conv;
  }
}

void from_json(const nlohmann::json& j, EncoderSpec& s) {
  const auto v = j.at("variant").get<std::string>();
  if (v != "table_npe" && v != "image_npe") throw std::invalid_argument("unknown encoder variant '" + v + "'");
  s.variant = v == "table_npe" ? Variant::table : Variant::image;
  s.n_classes = j.value("n_classes", 0);
  s.bottleneck = j.at("bottleneck").get<int>();
  if (j.contains("train")) j.at("train").get_to(s.train);
  if (s.variant == Variant::table) {
    s.n_features = j.value("n_features", 0);
    s.hidden = j.value("hidden", std::vector<int>{});
  } else {
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.channels = j.at("channels").get<int>();
    s.conv.clear();
    for (const auto& c : j.at("conv")) {
      s.conv.push_back({c.at("channels").get<int>(), c.at("kernel").get<int>(), c.at("stride").get<int>()});
    }
  }
}

std::uint64_t spec_hash(const EncoderSpec& s) { return codec::fnv1a64(nlohmann::json(s).dump()); }

std::vector<MatrixShape> EncodedMeta::shapes() const {
  std::vector<MatrixShape> out;
  for (const auto& m : matrices) out.push_back({m.rows, m.cols});
  return out;
}

Autoencoder build_table_npe(const EncoderSpec& spec, int n_features, int n_classes) {
  if (spec.variant != Variant::table) throw std::invalid_argument("expected a table encoder spec");
  if (n_classes < 1) throw std::invalid_argument("table npe needs at least one class");
  if (n_features < 1) throw std::invalid_argument("table npe needs at least one feature");
  const int w = n_features + n_classes;
  if (spec.bottleneck < 1 || spec.bottleneck >= w) {
    throw std::invalid_argument("bottleneck " + std::to_string(spec.bottleneck) + " must be in [1, " +
                                std::to_string(w - 1) + "]");
  }
  std::vector<int> widths = {w};
  if (spec.hidden.empty()) {
    const int h = (w + 1) / 2;
    if (h > spec.bottleneck && h < w) widths.push_back(h);
  } else {
    for (int h : spec.hidden) {
      if (h < 1) throw std::invalid_argument("hidden widths must be positive");
      widths.push_back(h);
    }
  }
  widths.push_back(spec.bottleneck);

  Autoencoder ae;
  ae.net.input_shapes = {{w, 1, 1}};
  auto& L = ae.net.layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    ae.encoder_layers.push_back(L.size());
    L.push_back(LayerSpec::dense(widths[i], widths[i + 1]));
    L.push_back(LayerSpec::act(Activation::tanh));
  }
  for (std::size_t i = widths.size() - 1; i > 0; --i) {
    L.push_back(LayerSpec::dense(widths[i], widths[i - 1]));
    if (i > 1) L.push_back(LayerSpec::act(Activation::tanh));
  }
  nn::infer_shapes(ae.net);
  return ae;
}

Autoencoder build_image_npe(const EncoderSpec& spec, int height, int width, int channels, int n_classes) {
  if (spec.variant != Variant::image) throw std::invalid_argument("expected an image encoder spec");
  if (n_classes < 1) throw std::invalid_argument("image npe needs at least one class");
  if (height < 1 || width < 1 || channels < 1) throw std::invalid_argument("bad image geometry");
  if (spec.conv.empty()) throw std::invalid_argument("image npe needs at least one conv stage");
  int total = 1;
  for (const auto& c : spec.conv) {
    if (c.stride < 1 || c.kernel < 1 || c.channels < 1) throw std::invalid_argument("bad conv stage");
    total *= c.stride;
  }
  if (height % total != 0 || width % total != 0) {
    throw std::invalid_argument("image " + std::to_string(height) + "x" + std::to_string(width) +
                                " not divisible by total stride " + std::to_string(total));
  }

  Autoencoder ae;
  auto& net = ae.net;
  net.input_shapes = {{channels, height, width}, {n_classes, 1, 1}};
  auto& L = net.layers;
  auto last = [&] { return net.node_of(L.size() - 1); };

  int in_c = channels;
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const auto& c = spec.conv[i];
    ae.encoder_layers.push_back(L.size());
    L.push_back(LayerSpec::conv2d(in_c, c.channels, c.kernel, c.stride, Padding::same, i == 0 ? std::vector<int>{0}
                                                                                                : std::vector<int>{}));
    L.push_back(LayerSpec::act(Activation::tanh));
    in_c = c.channels;
  }
  const nn::Shape code{in_c, height / total, width / total};
  L.push_back(LayerSpec::flatten());
  L.push_back(LayerSpec::concat({last(), 1}));
  ae.encoder_layers.push_back(L.size());
  L.push_back(LayerSpec::dense(code.size() + n_classes, spec.bottleneck));
  L.push_back(LayerSpec::act(Activation::tanh));
  const int bottleneck = last();

  L.push_back(LayerSpec::dense(spec.bottleneck, code.size(), {bottleneck}));
  L.push_back(LayerSpec::act(Activation::tanh));
  L.push_back(LayerSpec::reshape(code));
  for (std::size_t i = spec.conv.size(); i-- > 0;) {
    const int out_c = i == 0 ? channels : spec.conv[i - 1].channels;
    L.push_back(LayerSpec::upsample2d(spec.conv[i].stride));
    L.push_back(LayerSpec::conv2d(spec.conv[i].channels, out_c, spec.conv[i].kernel, 1, Padding::same));
    if (i > 0) L.push_back(LayerSpec::act(Activation::tanh));
  }
  L.push_back(LayerSpec::flatten());
  const int image_out = last();
  L.push_back(LayerSpec::dense(spec.bottleneck, n_classes, {bottleneck}));
  L.push_back(LayerSpec::concat({image_out, last()}));
  nn::infer_shapes(net);
  return ae;
}

Autoencoder build_npe(const EncoderSpec& spec) {
  if (spec.variant == Variant::table) return build_table_npe(spec, spec.n_features, spec.n_classes);
  return build_image_npe(spec, spec.height, spec.width, spec.channels, spec.n_classes);
}

Matrix with_bias(const nn::LayerSpec& layer, const nn::LayerParams& p) {
  const int rows = layer.kind == nn::LayerKind::dense ? layer.out_dim : layer.out_channels;
  const int in = static_cast<int>(p.weight.size()) / rows;
  Matrix m{rows, in + 1, {}};
  m.data.reserve(static_cast<std::size_t>(rows) * (in + 1));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < in; ++c) m.data.push_back(p.weight[static_cast<std::size_t>(r) * in + c]);
    m.data.push_back(p.bias[r]);
  }
  return m;
}

nn::LayerParams split_bias(const Matrix& m) {
  nn::LayerParams p;
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c + 1 < m.cols; ++c) p.weight.push_back(m.at(r, c));
    p.bias.push_back(m.at(r, m.cols - 1));
  }
  return p;
}

std::vector<MatrixShape> meta_shapes(const EncoderSpec& spec) {
  const auto ae = build_npe(spec);
  std::vector<MatrixShape> out;
  for (auto i : ae.encoder_layers) {
    const auto& L = ae.net.layers[i];
    if (L.kind == nn::LayerKind::dense) {
      out.push_back({L.out_dim, L.in_dim + 1});
    } else {
      out.push_back({L.out_channels, L.in_channels * L.kernel_h * L.kernel_w + 1});
    }
  }
  return out;
}

std::vector<nn::Example> table_examples(const data::TabularDataset& d) {
  const int w = static_cast<int>(d.n_features) + d.n_classes;
  std::vector<nn::Example> out;
  out.reserve(d.n_rows);
  for (std::size_t r = 0; r < d.n_rows; ++r) {
    std::vector<double> v(d.row(r), d.row(r) + d.n_features);
    v.resize(static_cast<std::size_t>(w), 0.0);
    v[d.n_features + static_cast<std::size_t>(d.labels[r])] = 1.0;
    auto t = nn::Tensor::vec(std::move(v));
    out.push_back({{t}, t});
  }
  return out;
}

std::vector<nn::Example> image_examples(const data::ImageDataset& d) {
  const nn::Shape shape{static_cast<int>(d.channels), static_cast<int>(d.height), static_cast<int>(d.width)};
  const std::size_t px = static_cast<std::size_t>(shape.size());
  std::vector<nn::Example> out;
  out.reserve(d.n);
  for (std::size_t i = 0; i < d.n; ++i) {
    nn::Tensor img(shape);
    const double* src = d.pixels.data() + i * px;
    for (int y = 0; y < shape.h; ++y) {
      for (int x = 0; x < shape.w; ++x) {
        for (int c = 0; c < shape.c; ++c) img.at(c, y, x) = src[(static_cast<std::size_t>(y) * shape.w + x) * shape.c + c];
      }
    }
    std::vector<double> onehot(static_cast<std::size_t>(d.n_classes), 0.0);
    onehot[static_cast<std::size_t>(d.labels[i])] = 1.0;
    std::vector<double> target = img.data;
    target.insert(target.end(), onehot.begin(), onehot.end());
    out.push_back({{img, nn::Tensor::vec(onehot)}, nn::Tensor::vec(std::move(target))});
  }
  return out;
}

namespace {

EncodedMeta encode(const Autoencoder& ae, const std::vector<nn::Example>& examples, const EncoderSpec& spec,
                   std::uint64_t seed, const std::string& dataset_id) {
  if (examples.empty()) throw std::invalid_argument("cannot encode an empty dataset");
  auto cfg = spec.train;
  cfg.seed = mix_seed(spec.train.seed, seed);
  cfg.batch_size = std::min<int>(cfg.batch_size, static_cast<int>(examples.size()));
  const auto result = nn::train(ae.net, cfg, examples);
  EncodedMeta meta;
  meta.dataset_id = dataset_id;
  meta.spec_hash = spec_hash(spec);
  meta.initial_loss = result.initial_loss;
  meta.final_loss = result.loss_history.empty() ? result.initial_loss : result.loss_history.back();
  for (auto i : ae.encoder_layers) meta.matrices.push_back(with_bias(ae.net.layers[i], result.params.layers[i]));
  return meta;
}

}  // namespace

EncodedMeta encode_dataset(const data::TabularDataset& d, const EncoderSpec& spec, std::uint64_t seed,
                           const std::string& dataset_id) {
  if (spec.variant != Variant::table) throw std::invalid_argument("table dataset needs a table encoder spec");
  if (static_cast<int>(d.n_features) != spec.n_features || d.n_classes != spec.n_classes) {
    throw std::invalid_argument("dataset geometry (" + std::to_string(d.n_features) + " features, " +
                                std::to_string(d.n_classes) + " classes) does not match the encoder spec");
  }
  return encode(build_npe(spec), table_examples(d), spec, seed, dataset_id);
}

EncodedMeta encode_dataset(const data::ImageDataset& d, const EncoderSpec& spec, std::uint64_t seed,
                           const std::string& dataset_id) {
  if (spec.variant != Variant::image) throw std::invalid_argument("image dataset needs an image encoder spec");
  if (static_cast<int>(d.height) != spec.height || static_cast<int>(d.width) != spec.width ||
      static_cast<int>(d.channels) != spec.channels || static_cast<int>(d.n_classes) != spec.n_classes) {
    throw std::invalid_argument("image geometry does not match the encoder spec");
  }
  return encode(build_npe(spec), image_examples(d), spec, seed, dataset_id);
}

void to_json(nlohmann::json& j, const EncodedMeta& m) {
  auto mats = nlohmann::json::array();
  for (const auto& x : m.matrices) {
    mats.push_back({{"rows", x.rows}, {"cols", x.cols}, {"data", codec::encode_doubles(x.data)}});
  }
  j = nlohmann::json{{"dataset_id", m.dataset_id},
                     {"spec_hash", codec::hex64(m.spec_hash)},
                     {"initial_loss", codec::encode_doubles({m.initial_loss})},
                     {"final_loss", codec::encode_doubles({m.final_loss})},
                     {"matrices", mats}};
}

void from_json(const nlohmann::json& j, EncodedMeta& m) {
  m.dataset_id = j.at("dataset_id").get<std::string>();
  m.spec_hash = codec::parse_hex64(j.at("spec_hash").get<std::string>());
  m.initial_loss = codec::decode_doubles(j.at("initial_loss").get<std::string>()).at(0);
  m.final_loss = codec::decode_doubles(j.at("final_loss").get<std::string>()).at(0);
  m.matrices.clear();
  for (const auto& x : j.at("matrices")) {
    Matrix mat{x.at("rows").get<int>(), x.at("cols").get<int>(), codec::decode_doubles(x.at("data").get<std::string>())};
    if (mat.data.size() != static_cast<std::size_t>(mat.rows) * mat.cols) {
      throw std::invalid_argument("matrix blob size does not match its shape");
    }
    m.matrices.push_back(std::move(mat));
  }
}

}  // namespace paramap::npe
