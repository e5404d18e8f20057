#include "paramap/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace paramap::nn {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.c) + "," + std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(s), data(std::move(d)) {
  if (static_cast<int>(data.size()) != s.size()) {
    throw std::invalid_argument("tensor data size does not match shape " + to_string(s));
  }
}

Tensor Tensor::vec(std::vector<double> d) {
  Shape s{static_cast<int>(d.size()), 1, 1};
  return Tensor(s, std::move(d));
}

LayerSpec LayerSpec::dense(int in_dim, int out_dim, std::vector<int> inputs) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in_dim = in_dim;
  l.out_dim = out_dim;
  l.inputs = std::move(inputs);
  return l;
}

LayerSpec LayerSpec::conv2d(int in_channels, int out_channels, int kernel, int stride, Padding padding,
                            std::vector<int> inputs) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel_h = kernel;
  l.kernel_w = kernel;
  l.stride = stride;
  l.padding = padding;
  l.inputs = std::move(inputs);
  return l;
}

LayerSpec LayerSpec::flatten(std::vector<int> inputs) {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  l.inputs = std::move(inputs);
  return l;
}

LayerSpec LayerSpec::concat(std::vector<int> inputs) {
  LayerSpec l;
  l.kind = LayerKind::concat;
  l.inputs = std::move(inputs);
  return l;
}

LayerSpec LayerSpec::act(Activation a, std::vector<int> inputs) {
  LayerSpec l;
  l.kind = LayerKind::activation;
  l.activation = a;
  l.inputs = std::move(inputs);
  return l;
}

LayerSpec LayerSpec::dropout(double rate, std::vector<int> inputs) {
  LayerSpec l;
  l.kind = LayerKind::dropout;
  l.rate = rate;
  l.inputs = std::move(inputs);
  return l;
}

LayerSpec LayerSpec::upsample2d(int factor, std::vector<int> inputs) {
  LayerSpec l;
  l.kind = LayerKind::upsample2d;
  l.factor = factor;
  l.inputs = std::move(inputs);
  return l;
}

LayerSpec LayerSpec::reshape(Shape target, std::vector<int> inputs) {
  LayerSpec l;
  l.kind = LayerKind::reshape;
  l.target = target;
  l.inputs = std::move(inputs);
  return l;
}

std::size_t NetworkParams::count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

bool NetworkParams::all_finite() const {
  for (const auto& l : layers) {
    for (double v : l.weight) {
      if (!std::isfinite(v)) return false;
    }
    for (double v : l.bias) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ShapeError::ShapeError(int layer, const std::string& what)
    : std::runtime_error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}

NonFiniteLoss::NonFiniteLoss(std::size_t batch_index)
    : std::runtime_error("non-finite loss in batch " + std::to_string(batch_index)), batch_index_(batch_index) {}

Divergence::Divergence(int epoch, std::vector<double> history)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch)),
      epoch_(epoch),
      history_(std::move(history)) {}

namespace {

std::vector<std::vector<int>> resolve_inputs(const NetworkSpec& spec) {
  const int k = spec.num_inputs();
  std::vector<std::vector<int>> out(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const int self = k + static_cast<int>(i);
    out[i] = spec.layers[i].inputs;
    if (out[i].empty()) out[i].push_back(self - 1);
    for (int src : out[i]) {
      if (src < 0 || src >= self) {
        throw ShapeError(static_cast<int>(i), "input node " + std::to_string(src) + " is not an earlier node");
      }
    }
    if (spec.layers[i].kind != LayerKind::concat && out[i].size() != 1) {
      throw ShapeError(static_cast<int>(i), "only concat layers take several inputs");
    }
  }
  return out;
}

// Output extent and leading pad for one spatial axis.
struct Axis {
  int out = 0;
  int pad = 0;
};

Axis conv_axis(int in, int k, int s, Padding p) {
  if (p == Padding::valid) return {in >= k ? (in - k) / s + 1 : 0, 0};
  const int out = (in + s - 1) / s;
  const int total = std::max((out - 1) * s + k - in, 0);
  return {out, total / 2};
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::tanh:
      return std::tanh(x);
    case Activation::elu:
      return x > 0.0 ? x : std::expm1(x);
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

// Derivative expressed through input x and output y.
double activate_grad(Activation a, double x, double y) {
  switch (a) {
    case Activation::tanh:
      return 1.0 - y * y;
    case Activation::elu:
      return x > 0.0 ? 1.0 : y + 1.0;
    case Activation::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid:
      return y * (1.0 - y);
  }
  return 1.0;
}

class Executor {
 public:
  Executor(const NetworkSpec& spec, const NetworkParams& params)
      : spec_(spec), params_(params), inputs_(resolve_inputs(spec)), shapes_(infer_shapes(spec)) {
    check_params(spec, params);
    acts_.resize(shapes_.size());
    grads_.resize(shapes_.size());
    for (std::size_t n = 0; n < shapes_.size(); ++n) {
      acts_[n] = Tensor(shapes_[n]);
      grads_[n] = Tensor(shapes_[n]);
    }
    masks_.resize(spec.layers.size());
  }

  const Tensor& run(const std::vector<Tensor>& inputs, Rng* dropout) {
    const int k = spec_.num_inputs();
    if (static_cast<int>(inputs.size()) != k) {
      throw ShapeError(-1, "expected " + std::to_string(k) + " inputs, got " + std::to_string(inputs.size()));
    }
    for (int i = 0; i < k; ++i) {
      if (inputs[i].shape != shapes_[i]) {
        throw ShapeError(-1, "input " + std::to_string(i) + " has shape " + to_string(inputs[i].shape) +
                                 ", expected " + to_string(shapes_[i]));
      }
      acts_[i].data = inputs[i].data;
    }
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) forward_layer(i, dropout);
    return acts_.back();
  }

  // Accumulates parameter gradients for the most recent run().
  void back(const std::vector<double>& grad_out, NetworkParams& grads) {
    for (auto& g : grads_) std::fill(g.data.begin(), g.data.end(), 0.0);
    grads_.back().data = grad_out;
    for (std::size_t i = spec_.layers.size(); i-- > 0;) backward_layer(i, grads);
  }

 private:
  void forward_layer(std::size_t i, Rng* dropout) {
    const LayerSpec& L = spec_.layers[i];
    const int node = spec_.node_of(i);
    Tensor& out = acts_[node];
    const Tensor& in = acts_[inputs_[i][0]];
    switch (L.kind) {
      case LayerKind::dense: {
        const auto& P = params_.layers[i];
        const int nin = L.in_dim;
        for (int o = 0; o < L.out_dim; ++o) {
          const double* w = P.weight.data() + static_cast<std::size_t>(o) * nin;
          double s = P.bias[o];
          for (int j = 0; j < nin; ++j) s += w[j] * in.data[j];
          out.data[o] = s;
        }
        break;
      }
      case LayerKind::conv2d: {
        const auto& P = params_.layers[i];
        const Shape is = in.shape;
        const Axis ay = conv_axis(is.h, L.kernel_h, L.stride, L.padding);
        const Axis ax = conv_axis(is.w, L.kernel_w, L.stride, L.padding);
        for (int co = 0; co < L.out_channels; ++co) {
          for (int oy = 0; oy < ay.out; ++oy) {
            for (int ox = 0; ox < ax.out; ++ox) {
              double s = P.bias[co];
              for (int ci = 0; ci < L.in_channels; ++ci) {
                const double* w = P.weight.data() + (static_cast<std::size_t>(co) * L.in_channels + ci) *
                                                        L.kernel_h * L.kernel_w;
                for (int ky = 0; ky < L.kernel_h; ++ky) {
                  const int y = oy * L.stride + ky - ay.pad;
                  if (y < 0 || y >= is.h) continue;
                  for (int kx = 0; kx < L.kernel_w; ++kx) {
                    const int x = ox * L.stride + kx - ax.pad;
                    if (x < 0 || x >= is.w) continue;
                    s += w[ky * L.kernel_w + kx] * in.at(ci, y, x);
                  }
                }
              }
              out.at(co, oy, ox) = s;
            }
          }
        }
        break;
      }
      case LayerKind::flatten:
      case LayerKind::reshape:
        std::copy(in.data.begin(), in.data.end(), out.data.begin());
        break;
      case LayerKind::concat: {
        auto it = out.data.begin();
        for (int src : inputs_[i]) it = std::copy(acts_[src].data.begin(), acts_[src].data.end(), it);
        break;
      }
      case LayerKind::activation:
        for (std::size_t j = 0; j < in.data.size(); ++j) out.data[j] = activate(L.activation, in.data[j]);
        break;
      case LayerKind::dropout: {
        auto& mask = masks_[i];
        if (dropout == nullptr || L.rate == 0.0) {
          mask.clear();
          std::copy(in.data.begin(), in.data.end(), out.data.begin());
          break;
        }
        mask.resize(in.data.size());
        const double keep = 1.0 - L.rate;
        for (std::size_t j = 0; j < in.data.size(); ++j) {
          mask[j] = dropout->uniform() < keep ? 1.0 / keep : 0.0;
          out.data[j] = in.data[j] * mask[j];
        }
        break;
      }
      case LayerKind::upsample2d: {
        const int f = L.factor;
        for (int c = 0; c < out.shape.c; ++c) {
          for (int y = 0; y < out.shape.h; ++y) {
            for (int x = 0; x < out.shape.w; ++x) out.at(c, y, x) = in.at(c, y / f, x / f);
          }
        }
        break;
      }
    }
  }

  void backward_layer(std::size_t i, NetworkParams& grads) {
    const LayerSpec& L = spec_.layers[i];
    const int node = spec_.node_of(i);
    const Tensor& g = grads_[node];
    const int src = inputs_[i][0];
    const Tensor& in = acts_[src];
    Tensor& gin = grads_[src];
    switch (L.kind) {
      case LayerKind::dense: {
        const auto& P = params_.layers[i];
        auto& G = grads.layers[i];
        const int nin = L.in_dim;
        for (int o = 0; o < L.out_dim; ++o) {
          const double go = g.data[o];
          if (go == 0.0) continue;
          G.bias[o] += go;
          const double* w = P.weight.data() + static_cast<std::size_t>(o) * nin;
          double* gw = G.weight.data() + static_cast<std::size_t>(o) * nin;
          for (int j = 0; j < nin; ++j) {
            gw[j] += go * in.data[j];
            gin.data[j] += go * w[j];
          }
        }
        break;
      }
      case LayerKind::conv2d: {
        const auto& P = params_.layers[i];
        auto& G = grads.layers[i];
        const Shape is = in.shape;
        const Axis ay = conv_axis(is.h, L.kernel_h, L.stride, L.padding);
        const Axis ax = conv_axis(is.w, L.kernel_w, L.stride, L.padding);
        for (int co = 0; co < L.out_channels; ++co) {
          for (int oy = 0; oy < ay.out; ++oy) {
            for (int ox = 0; ox < ax.out; ++ox) {
              const double go = g.at(co, oy, ox);
              if (go == 0.0) continue;
              G.bias[co] += go;
              for (int ci = 0; ci < L.in_channels; ++ci) {
                const std::size_t base = (static_cast<std::size_t>(co) * L.in_channels + ci) * L.kernel_h * L.kernel_w;
                for (int ky = 0; ky < L.kernel_h; ++ky) {
                  const int y = oy * L.stride + ky - ay.pad;
                  if (y < 0 || y >= is.h) continue;
                  for (int kx = 0; kx < L.kernel_w; ++kx) {
                    const int x = ox * L.stride + kx - ax.pad;
                    if (x < 0 || x >= is.w) continue;
                    const std::size_t wi = base + ky * L.kernel_w + kx;
                    G.weight[wi] += go * in.at(ci, y, x);
                    gin.at(ci, y, x) += go * P.weight[wi];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::flatten:
      case LayerKind::reshape:
        for (std::size_t j = 0; j < g.data.size(); ++j) gin.data[j] += g.data[j];
        break;
      case LayerKind::concat: {
        std::size_t off = 0;
        for (int s : inputs_[i]) {
          Tensor& t = grads_[s];
          for (std::size_t j = 0; j < t.data.size(); ++j) t.data[j] += g.data[off + j];
          off += t.data.size();
        }
        break;
      }
      case LayerKind::activation: {
        const Tensor& out = acts_[node];
        for (std::size_t j = 0; j < g.data.size(); ++j) {
          gin.data[j] += g.data[j] * activate_grad(L.activation, in.data[j], out.data[j]);
        }
        break;
      }
      case LayerKind::dropout: {
        const auto& mask = masks_[i];
        for (std::size_t j = 0; j < g.data.size(); ++j) gin.data[j] += mask.empty() ? g.data[j] : g.data[j] * mask[j];
        break;
      }
      case LayerKind::upsample2d: {
        const int f = L.factor;
        for (int c = 0; c < g.shape.c; ++c) {
          for (int y = 0; y < g.shape.h; ++y) {
            for (int x = 0; x < g.shape.w; ++x) gin.at(c, y / f, x / f) += g.at(c, y, x);
          }
        }
        break;
      }
    }
  }

  const NetworkSpec& spec_;
  const NetworkParams& params_;
  std::vector<std::vector<int>> inputs_;
  std::vector<Shape> shapes_;
  std::vector<Tensor> acts_;
  std::vector<Tensor> grads_;
  std::vector<std::vector<double>> masks_;
};

double sample_loss(const Tensor& y, const Tensor& t, std::vector<double>* grad, double scale) {
  const std::size_t d = y.data.size();
  double s = 0.0;
  if (grad != nullptr) grad->resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double r = y.data[j] - t.data[j];
    s += r * r;
    if (grad != nullptr) (*grad)[j] = 2.0 * r * scale / static_cast<double>(d);
  }
  return s / static_cast<double>(d);
}

void check_target(const Tensor& y, const Example& ex) {
  if (ex.target.data.size() != y.data.size()) {
    throw ShapeError(-1, "target has " + std::to_string(ex.target.data.size()) + " values, output has " +
                             std::to_string(y.data.size()));
  }
}

}  // namespace

std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  if (spec.input_shapes.empty()) throw ShapeError(-1, "network has no inputs");
  if (spec.layers.empty()) throw ShapeError(-1, "network has no layers");
  for (const auto& s : spec.input_shapes) {
    if (s.c < 1 || s.h < 1 || s.w < 1) throw ShapeError(-1, "bad input shape " + to_string(s));
  }
  const auto inputs = resolve_inputs(spec);
  std::vector<Shape> shapes(spec.input_shapes);
  std::vector<int> uses(spec.input_shapes.size() + spec.layers.size(), 0);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& L = spec.layers[i];
    const int li = static_cast<int>(i);
    for (int s : inputs[i]) ++uses[s];
    const Shape in = shapes[inputs[i][0]];
    Shape out = in;
    switch (L.kind) {
      case LayerKind::dense:
        if (L.in_dim < 1 || L.out_dim < 1) throw ShapeError(li, "dense dims must be positive");
        if (in.size() != L.in_dim) {
          throw ShapeError(li, "dense expects " + std::to_string(L.in_dim) + " inputs, got " + to_string(in));
        }
        out = {L.out_dim, 1, 1};
        break;
      case LayerKind::conv2d: {
        if (L.stride < 1) throw ShapeError(li, "conv stride must be >= 1");
        if (L.kernel_h < 1 || L.kernel_w < 1 || L.out_channels < 1) throw ShapeError(li, "bad conv geometry");
        if (in.c != L.in_channels) {
          throw ShapeError(li, "conv expects " + std::to_string(L.in_channels) + " channels, got " + to_string(in));
        }
        const Axis ay = conv_axis(in.h, L.kernel_h, L.stride, L.padding);
        const Axis ax = conv_axis(in.w, L.kernel_w, L.stride, L.padding);
        if (ay.out < 1 || ax.out < 1) throw ShapeError(li, "conv kernel larger than input " + to_string(in));
        out = {L.out_channels, ay.out, ax.out};
        break;
      }
      case LayerKind::flatten:
        out = {in.size(), 1, 1};
        break;
      case LayerKind::concat: {
        int c = 0;
        for (int s : inputs[i]) {
          if (shapes[s].h != in.h || shapes[s].w != in.w) {
            throw ShapeError(li, "concat spatial mismatch " + to_string(shapes[s]) + " vs " + to_string(in));
          }
          c += shapes[s].c;
        }
        out = {c, in.h, in.w};
        break;
      }
      case LayerKind::activation:
        break;
      case LayerKind::dropout:
        if (!(L.rate >= 0.0 && L.rate < 1.0)) throw ShapeError(li, "dropout rate must be in [0,1)");
        break;
      case LayerKind::upsample2d:
        if (L.factor < 1) throw ShapeError(li, "upsample factor must be >= 1");
        out = {in.c, in.h * L.factor, in.w * L.factor};
        break;
      case LayerKind::reshape:
        if (L.target.size() != in.size()) {
          throw ShapeError(li, "cannot reshape " + to_string(in) + " to " + to_string(L.target));
        }
        out = L.target;
        break;
    }
    shapes.push_back(out);
  }
  for (std::size_t n = 0; n + 1 < uses.size(); ++n) {
    if (uses[n] == 0) {
      const int layer = static_cast<int>(n) - spec.num_inputs();
      throw ShapeError(layer, "node " + std::to_string(n) + " does not reach the output");
    }
  }
  return shapes;
}

void check_params(const NetworkSpec& spec, const NetworkParams& params) {
  if (params.layers.size() != spec.layers.size()) {
    throw ShapeError(-1, "parameter list has " + std::to_string(params.layers.size()) + " layers, spec has " +
                             std::to_string(spec.layers.size()));
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& L = spec.layers[i];
    std::size_t nw = 0;
    std::size_t nb = 0;
    if (L.kind == LayerKind::dense) {
      nw = static_cast<std::size_t>(L.in_dim) * L.out_dim;
      nb = L.out_dim;
    } else if (L.kind == LayerKind::conv2d) {
      nw = static_cast<std::size_t>(L.out_channels) * L.in_channels * L.kernel_h * L.kernel_w;
      nb = L.out_channels;
    }
    if (params.layers[i].weight.size() != nw || params.layers[i].bias.size() != nb) {
      throw ShapeError(static_cast<int>(i), "parameter shape does not match layer");
    }
  }
}

NetworkParams zeros_like(const NetworkSpec& spec) {
  NetworkParams p;
  p.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& L = spec.layers[i];
    if (L.kind == LayerKind::dense) {
      p.layers[i].weight.assign(static_cast<std::size_t>(L.in_dim) * L.out_dim, 0.0);
      p.layers[i].bias.assign(L.out_dim, 0.0);
    } else if (L.kind == LayerKind::conv2d) {
      p.layers[i].weight.assign(static_cast<std::size_t>(L.out_channels) * L.in_channels * L.kernel_h * L.kernel_w,
                                0.0);
      p.layers[i].bias.assign(L.out_channels, 0.0);
    }
  }
  return p;
}

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  infer_shapes(spec);
  NetworkParams p = zeros_like(spec);
  Rng rng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& L = spec.layers[i];
    if (!L.parametric()) continue;
    const int fan_in = L.kind == LayerKind::dense ? L.in_dim : L.in_channels * L.kernel_h * L.kernel_w;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : p.layers[i].weight) w = rng.uniform(-bound, bound);
    for (double& b : p.layers[i].bias) b = rng.uniform(-bound, bound);
  }
  return p;
}

Tensor forward(const NetworkSpec& spec, const NetworkParams& params, const std::vector<Tensor>& inputs) {
  Executor ex(spec, params);
  return ex.run(inputs, nullptr);
}

Gradients backward(const NetworkSpec& spec, const NetworkParams& params, std::span<const Example> batch, Loss,
                   Rng* dropout, std::size_t batch_index) {
  if (batch.empty()) throw std::invalid_argument("backward needs a nonempty batch");
  Executor ex(spec, params);
  Gradients out{zeros_like(spec), 0.0};
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> g;
  for (const Example& e : batch) {
    const Tensor& y = ex.run(e.inputs, dropout);
    check_target(y, e);
    out.loss += sample_loss(y, e.target, &g, scale) * scale;
    ex.back(g, out.grads);
  }
  if (!std::isfinite(out.loss)) throw NonFiniteLoss(batch_index);
  return out;
}

double evaluate_loss(const NetworkSpec& spec, const NetworkParams& params, std::span<const Example> data, Loss,
                     Rng* dropout) {
  if (data.empty()) return 0.0;
  Executor ex(spec, params);
  double total = 0.0;
  for (const Example& e : data) {
    const Tensor& y = ex.run(e.inputs, dropout);
    check_target(y, e);
    total += sample_loss(y, e.target, nullptr, 1.0);
  }
  return total / static_cast<double>(data.size());
}

double global_norm(const NetworkParams& g) {
  double s = 0.0;
  for (const auto& l : g.layers) {
    for (double v : l.weight) s += v * v;
    for (double v : l.bias) s += v * v;
  }
  return std::sqrt(s);
}

NetworkParams clip_gradients(NetworkParams grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  const double norm = global_norm(grads);
  if (norm <= clip_norm) return grads;
  // The product can land a few ulps above clip_norm; shrink until it doesn't.
  double f = clip_norm / norm;
  for (;;) {
    NetworkParams scaled = grads;
    for (auto& l : scaled.layers) {
      for (double& v : l.weight) v *= f;
      for (double& v : l.bias) v *= f;
    }
    if (global_norm(scaled) <= clip_norm) return scaled;
    f *= 1.0 - 0x1p-40;
  }
}

TrainResult train(const NetworkSpec& spec, const TrainConfig& config, std::span<const Example> data,
                  const TrainOptions& options) {
  if (data.empty()) throw std::invalid_argument("training data is empty");
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (config.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (config.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (static_cast<std::size_t>(config.batch_size) > data.size()) {
    throw std::invalid_argument("batch_size " + std::to_string(config.batch_size) + " exceeds " +
                                std::to_string(data.size()) + " training examples");
  }
  if (config.clip_norm && !(*config.clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");

  TrainResult res;
  res.params = options.init != nullptr ? *options.init : init_params(spec, config.seed);
  check_params(spec, res.params);
  res.initial_loss = evaluate_loss(spec, res.params, data, config.loss);
  if (!options.validation.empty()) res.initial_validation_loss = evaluate_loss(spec, res.params, options.validation);

  Rng order_rng(mix_seed(config.seed, 1));
  Rng dropout_rng(mix_seed(config.seed, 2));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Executor ex(spec, res.params);
  Gradients g{zeros_like(spec), 0.0};
  std::vector<double> gout;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    std::size_t b = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (auto& l : g.grads.layers) {
        std::fill(l.weight.begin(), l.weight.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
      }
      g.loss = 0.0;
      for (std::size_t j = start; j < stop; ++j) {
        const Example& e = data[order[j]];
        const Tensor& y = ex.run(e.inputs, &dropout_rng);
        check_target(y, e);
        g.loss += sample_loss(y, e.target, &gout, scale) * scale;
        ex.back(gout, g.grads);
      }
      if (!std::isfinite(g.loss)) throw Divergence(epoch, res.loss_history);
      StepInfo info{epoch, b, global_norm(g.grads), 0.0};
      if (config.clip_norm && info.raw_norm > *config.clip_norm) {
        g.grads = clip_gradients(std::move(g.grads), *config.clip_norm);
      }
      info.applied_norm = global_norm(g.grads);
      if (options.on_step) options.on_step(info);
      for (std::size_t l = 0; l < res.params.layers.size(); ++l) {
        auto& P = res.params.layers[l];
        const auto& G = g.grads.layers[l];
        for (std::size_t j = 0; j < P.weight.size(); ++j) P.weight[j] -= config.learning_rate * G.weight[j];
        for (std::size_t j = 0; j < P.bias.size(); ++j) P.bias[j] -= config.learning_rate * G.bias[j];
      }
    }
    const double loss = evaluate_loss(spec, res.params, data, config.loss);
    res.loss_history.push_back(loss);
    if (!std::isfinite(loss) || !res.params.all_finite()) throw Divergence(epoch, res.loss_history);
    if (!options.validation.empty()) {
      res.validation_history.push_back(evaluate_loss(spec, res.params, options.validation));
    }
  }
  return res;
}

std::vector<Tensor> split_concat(const Tensor& t, const std::vector<int>& channels) {
  const int total = std::accumulate(channels.begin(), channels.end(), 0);
  if (total != t.shape.c) throw std::invalid_argument("channel widths do not sum to tensor channels");
  std::vector<Tensor> out;
  std::size_t off = 0;
  for (int c : channels) {
    Tensor piece(Shape{c, t.shape.h, t.shape.w});
    std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(off), piece.data.size(), piece.data.begin());
    off += piece.data.size();
    out.push_back(std::move(piece));
  }
  return out;
}

}  // namespace paramap::nn
