#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

#include "paramap/env.hpp"

namespace paramap::env {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_train_split(const data::TabularSplit& split) {
  const auto& tr = split.train;
  if (tr.n_rows == 0 || split.test.n_rows == 0) throw std::invalid_argument("empty train or test part");
  if (tr.n_features != split.test.n_features) throw std::invalid_argument("train/test feature width mismatch");
  for (std::size_t i = 1; i < tr.n_rows; ++i) {
    if (tr.labels[i] != tr.labels[0]) return;
  }
  throw std::invalid_argument("degenerate split: single class in train");
}

// Solves a x = b in place for symmetric positive definite a (n x n, row-major).
bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    a[j * n + j] = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
    b[i] = s / a[i * n + i];
  }
  return true;
}

// Binary ridge logistic fit by damped Newton. The step size starts at lr and
// doubles every epoch up to a full step. The intercept is penalized like the
// weights. Returns (w_1..w_d, b).
std::vector<double> fit_logistic(const data::TabularDataset& d, const std::vector<double>& y, double lr, double l2,
                                 int epochs) {
  const std::size_t p = d.n_features + 1;
  const double n = static_cast<double>(d.n_rows);
  std::vector<double> theta(p, 0.0), grad(p), hess(p * p), x(p);
  x[p - 1] = 1.0;
  for (int e = 0; e < epochs; ++e) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(hess.begin(), hess.end(), 0.0);
    for (std::size_t r = 0; r < d.n_rows; ++r) {
      const double* row = d.row(r);
      double z = theta[p - 1];
      for (std::size_t j = 0; j + 1 < p; ++j) {
        x[j] = row[j];
        z += theta[j] * row[j];
      }
      const double m = sigmoid(z);
      const double g = m - y[r];
      const double s = m * (1.0 - m);
      for (std::size_t i = 0; i < p; ++i) {
        grad[i] += g * x[i];
        const double sx = s * x[i];
        for (std::size_t j = 0; j <= i; ++j) hess[i * p + j] += sx * x[j];
      }
    }
    for (std::size_t i = 0; i < p; ++i) {
      grad[i] = grad[i] / n + 2.0 * l2 * theta[i];
      for (std::size_t j = 0; j <= i; ++j) {
        hess[i * p + j] /= n;
        hess[j * p + i] = hess[i * p + j];
      }
      hess[i * p + i] += 2.0 * l2;
    }
    if (!cholesky_solve(hess, grad, p)) break;
    const double step = std::min(1.0, lr * std::ldexp(1.0, std::min(e, 60)));
    double moved = 0.0, size = 0.0;
    bool finite = true;
    for (std::size_t i = 0; i < p; ++i) finite = finite && std::isfinite(grad[i]);
    if (!finite) break;
    for (std::size_t i = 0; i < p; ++i) {
      theta[i] -= step * grad[i];
      moved = std::max(moved, std::abs(step * grad[i]));
      size = std::max(size, std::abs(theta[i]));
    }
    if (moved <= 1e-12 * (1.0 + size)) break;
  }
  return theta;
}

double linear_score(const std::vector<double>& theta, const double* row, std::size_t d) {
  double z = theta[d];
  for (std::size_t j = 0; j < d; ++j) z += theta[j] * row[j];
  return z;
}

double accuracy_of(const std::vector<std::vector<double>>& scores, const data::TabularDataset& test) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < test.n_rows; ++r) {
    std::size_t pred = 0;
    if (scores.size() == 1) {
      pred = scores[0][r] > 0.0 ? 1 : 0;
    } else {
      for (std::size_t k = 1; k < scores.size(); ++k) {
        if (scores[k][r] > scores[pred][r]) pred = k;
      }
    }
    if (pred == static_cast<std::size_t>(test.labels[r])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.n_rows);
}

// Targets for one binary problem: a single model for two classes, one-vs-rest otherwise.
std::vector<std::vector<double>> binary_targets(const data::TabularDataset& d) {
  const std::size_t k = std::max<std::size_t>(2, d.n_classes);
  const std::size_t models = k == 2 ? 1 : k;
  std::vector<std::vector<double>> ys(models, std::vector<double>(d.n_rows));
  for (std::size_t m = 0; m < models; ++m) {
    const std::size_t positive = models == 1 ? 1 : m;
    for (std::size_t r = 0; r < d.n_rows; ++r) ys[m][r] = static_cast<std::size_t>(d.labels[r]) == positive ? 1.0 : 0.0;
  }
  return ys;
}

class RidgeLogisticEnv : public Environment {
 public:
  RidgeLogisticEnv() : specs_(learner_specs(LearnerKind::ridge_logistic)) {}
  [[nodiscard]] const Specs& specs() const override { return specs_; }
  [[nodiscard]] std::string name() const override { return "ridge_logistic"; }

  [[nodiscard]] double evaluate(const HyperparamVector& v, const data::TabularSplit& split) const override {
    check_vector(specs_, v);
    check_train_split(split);
    const auto& test = split.test;
    std::vector<std::vector<double>> scores;
    for (const auto& y : binary_targets(split.train)) {
      const auto theta = fit_logistic(split.train, y, v[0], v[1], static_cast<int>(v[2]));
      auto& s = scores.emplace_back(test.n_rows);
      for (std::size_t r = 0; r < test.n_rows; ++r) s[r] = linear_score(theta, test.row(r), test.n_features);
    }
    return accuracy_of(scores, test);
  }

 private:
  Specs specs_;
};

struct Stump {
  std::size_t feature = 0;
  double threshold = 0.0;  // left when x < threshold
  double left = 0.0;
  double right = 0.0;
};

// Quantile cut points, at most max_bins - 1 of them, strictly increasing.
std::vector<double> cut_points(const data::TabularDataset& d, std::size_t feature, int max_bins) {
  std::vector<double> col(d.n_rows);
  for (std::size_t r = 0; r < d.n_rows; ++r) col[r] = d.at(r, feature);
  std::sort(col.begin(), col.end());
  std::vector<double> cuts;
  for (int b = 1; b < max_bins; ++b) {
    const std::size_t pos = static_cast<std::size_t>(b) * d.n_rows / static_cast<std::size_t>(max_bins);
    if (pos == 0 || pos >= d.n_rows) continue;
    const double c = col[pos];
    if (c > col.front() && (cuts.empty() || c > cuts.back())) cuts.push_back(c);
  }
  return cuts;
}

class BoostedStumpsEnv : public Environment {
 public:
  BoostedStumpsEnv() : specs_(learner_specs(LearnerKind::boosted_stumps)) {}
  [[nodiscard]] const Specs& specs() const override { return specs_; }
  [[nodiscard]] std::string name() const override { return "boosted_stumps"; }

  [[nodiscard]] double evaluate(const HyperparamVector& v, const data::TabularSplit& split) const override {
    check_vector(specs_, v);
    check_train_split(split);
    const auto& tr = split.train;
    const auto& test = split.test;
    const int rounds = static_cast<int>(v[0]);
    const double lr = v[1];
    const int max_bins = static_cast<int>(v[2]);
    const std::size_t nf = tr.n_features;

    std::vector<std::vector<double>> cuts(nf);
    std::vector<std::vector<std::uint16_t>> bins(nf, std::vector<std::uint16_t>(tr.n_rows));
    for (std::size_t f = 0; f < nf; ++f) {
      cuts[f] = cut_points(tr, f, max_bins);
      for (std::size_t r = 0; r < tr.n_rows; ++r) {
        bins[f][r] = static_cast<std::uint16_t>(
            std::upper_bound(cuts[f].begin(), cuts[f].end(), tr.at(r, f)) - cuts[f].begin());
      }
    }

    std::vector<std::vector<double>> scores;
    for (const auto& y : binary_targets(tr)) {
      double pos = 0.0;
      for (double t : y) pos += t;
      const double prior = std::clamp(pos / static_cast<double>(tr.n_rows), 1e-6, 1.0 - 1e-6);
      const double base = std::log(prior / (1.0 - prior));
      std::vector<double> f(tr.n_rows, base);
      std::vector<Stump> stumps;
      std::vector<double> gsum, hsum;
      for (int it = 0; it < rounds; ++it) {
        std::vector<double> g(tr.n_rows), h(tr.n_rows);
        double gt = 0.0, ht = 0.0;
        for (std::size_t r = 0; r < tr.n_rows; ++r) {
          const double p = sigmoid(f[r]);
          g[r] = p - y[r];
          h[r] = std::max(p * (1.0 - p), 1e-12);
          gt += g[r];
          ht += h[r];
        }
        constexpr double lambda = 1.0;
        double best_gain = 0.0;
        std::optional<Stump> best;
        for (std::size_t ft = 0; ft < nf; ++ft) {
          const std::size_t nb = cuts[ft].size() + 1;
          if (nb < 2) continue;
          gsum.assign(nb, 0.0);
          hsum.assign(nb, 0.0);
          for (std::size_t r = 0; r < tr.n_rows; ++r) {
            gsum[bins[ft][r]] += g[r];
            hsum[bins[ft][r]] += h[r];
          }
          double gl = 0.0, hl = 0.0;
          for (std::size_t b = 0; b + 1 < nb; ++b) {
            gl += gsum[b];
            hl += hsum[b];
            const double gr = gt - gl, hr = ht - hl;
            const double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - gt * gt / (ht + lambda);
            if (gain > best_gain) {
              best_gain = gain;
              best = Stump{ft, cuts[ft][b], -gl / (hl + lambda), -gr / (hr + lambda)};
            }
          }
        }
        if (!best) break;
        best->left *= lr;
        best->right *= lr;
        for (std::size_t r = 0; r < tr.n_rows; ++r) {
          f[r] += tr.at(r, best->feature) < best->threshold ? best->left : best->right;
        }
        stumps.push_back(*best);
      }
      auto& s = scores.emplace_back(test.n_rows, base);
      for (std::size_t r = 0; r < test.n_rows; ++r) {
        for (const auto& st : stumps) s[r] += test.at(r, st.feature) < st.threshold ? st.left : st.right;
      }
    }
    return accuracy_of(scores, test);
  }

 private:
  Specs specs_;
};

}  // namespace

Specs learner_specs(LearnerKind kind) {
  using nn::Activation;
  if (kind == LearnerKind::ridge_logistic) {
    return {{"learning_rate", DType::real, 1e-4, 1.0, Scale::log10, Activation::tanh},
            {"l2", DType::real, 1e-6, 10.0, Scale::log10, Activation::tanh},
            {"epochs", DType::integer, 1.0, 200.0, Scale::linear, Activation::tanh}};
  }
  return {{"n_rounds", DType::integer, 1.0, 300.0, Scale::linear, Activation::tanh},
          {"learning_rate", DType::real, 1e-3, 1.0, Scale::log10, Activation::tanh},
          {"max_bins", DType::integer, 2.0, 64.0, Scale::linear, Activation::tanh}};
}

EnvPtr toy_learner_env(LearnerKind kind, std::uint64_t) {
  if (kind == LearnerKind::ridge_logistic) return std::make_shared<RidgeLogisticEnv>();
  return std::make_shared<BoostedStumpsEnv>();
}

}  // namespace paramap::env
