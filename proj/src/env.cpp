#include "paramap/env.hpp"

#include <algorithm>
#include <cmath>

namespace paramap::env {

double HyperparamSpec::to_u(double v) const { return scale == Scale::log10 ? std::log10(v) : v; }

double HyperparamSpec::from_u(double u) const { return scale == Scale::log10 ? std::pow(10.0, u) : u; }

double HyperparamSpec::snap(double v) const {
  v = std::clamp(v, min, max);
  if (dtype == DType::integer) {
    v = std::round(v);
    // Bounds need not be integral; stay inside them.
    if (v < min) v = std::ceil(min);
    if (v > max) v = std::floor(max);
  }
  return v;
}

void validate_specs(const Specs& specs) {
  if (specs.empty()) throw std::invalid_argument("empty hyperparameter schema");
  for (const auto& s : specs) {
    if (!(s.min < s.max)) throw std::invalid_argument(s.name + ": min must be below max");
    if (s.scale == Scale::log10 && !(s.min > 0.0)) throw std::invalid_argument(s.name + ": log10 scale needs min > 0");
    if (s.dtype == DType::integer && std::ceil(s.min) > std::floor(s.max)) {
      throw std::invalid_argument(s.name + ": no integer inside bounds");
    }
  }
}

OutOfBounds::OutOfBounds(std::size_t index, const std::string& what)
    : std::invalid_argument(what), index_(index) {}

void check_vector(const Specs& specs, const HyperparamVector& v) {
  if (v.size() != specs.size()) {
    throw OutOfBounds(v.size(), "expected " + std::to_string(specs.size()) + " values, got " + std::to_string(v.size()));
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& s = specs[i];
    if (!(v[i] >= s.min && v[i] <= s.max)) {
      throw OutOfBounds(i, s.name + " = " + std::to_string(v[i]) + " outside [" + std::to_string(s.min) + ", " +
                               std::to_string(s.max) + "]");
    }
    if (s.dtype == DType::integer && v[i] != std::round(v[i])) {
      throw OutOfBounds(i, s.name + " = " + std::to_string(v[i]) + " is not an integer");
    }
  }
}

std::vector<double> to_u(const Specs& specs, const HyperparamVector& v) {
  std::vector<double> u(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) u[i] = specs[i].to_u(v[i]);
  return u;
}

HyperparamVector from_u(const Specs& specs, const std::vector<double>& u) {
  HyperparamVector v(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) v[i] = specs[i].from_u(u[i]);
  return v;
}

namespace {

class QuadraticEnv : public Environment {
 public:
  QuadraticEnv(Specs specs, HyperparamVector optimum, double angle, std::vector<double> curvature, std::string name)
      : specs_(std::move(specs)), angle_(angle), curvature_(std::move(curvature)), name_(std::move(name)) {
    validate_specs(specs_);
    check_vector(specs_, optimum);
    if (curvature_.size() != specs_.size()) throw std::invalid_argument("one curvature per parameter");
    for (double c : curvature_) {
      if (c < 0.0) throw std::invalid_argument("curvature must be non-negative");
    }
    opt_u_ = to_u(specs_, optimum);
  }

  [[nodiscard]] const Specs& specs() const override { return specs_; }

  [[nodiscard]] double evaluate(const HyperparamVector& v, const data::TabularSplit&) const override {
    check_vector(specs_, v);
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = specs_[i].to_u(v[i]) - opt_u_[i];
    if (angle_ != 0.0) {
      const double c = std::cos(angle_);
      const double s = std::sin(angle_);
      const double a = c * d[0] + s * d[1];
      const double b = -s * d[0] + c * d[1];
      d[0] = a;
      d[1] = b;
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) loss += curvature_[i] * d[i] * d[i];
    return std::max(0.0, 1.0 - loss);
  }

  [[nodiscard]] std::string name() const override { return name_; }

 private:
  Specs specs_;
  std::vector<double> opt_u_;
  double angle_;
  std::vector<double> curvature_;
  std::string name_;
};

}  // namespace

EnvPtr analytic_env(Specs specs, HyperparamVector optimum, std::vector<double> curvature) {
  return std::make_shared<QuadraticEnv>(std::move(specs), std::move(optimum), 0.0, std::move(curvature), "analytic");
}

EnvPtr rotated_env(Specs specs, HyperparamVector optimum, double angle, std::vector<double> curvature) {
  if (specs.size() != 2) throw std::invalid_argument("rotated_env needs exactly two parameters");
  return std::make_shared<QuadraticEnv>(std::move(specs), std::move(optimum), angle, std::move(curvature), "rotated");
}

LearnerKind learner_from_string(const std::string& s) {
  if (s == "ridge_logistic") return LearnerKind::ridge_logistic;
  if (s == "boosted_stumps") return LearnerKind::boosted_stumps;
  throw std::invalid_argument("unknown learner '" + s + "'");
}

std::string to_string(LearnerKind k) {
  return k == LearnerKind::ridge_logistic ? "ridge_logistic" : "boosted_stumps";
}

void to_json(nlohmann::json& j, const HyperparamSpec& s) {
  j = nlohmann::json{{"name", s.name},
                     {"dtype", s.dtype == DType::real ? "real" : "integer"},
                     {"min", s.min},
                     {"max", s.max},
                     {"scale", s.scale == Scale::linear ? "linear" : "log10"},
                     {"activation", s.head == nn::Activation::elu ? "elu" : "tanh"}};
}

void from_json(const nlohmann::json& j, HyperparamSpec& s) {
  j.at("name").get_to(s.name);
  const auto dtype = j.at("dtype").get<std::string>();
  if (dtype != "real" && dtype != "integer") throw std::invalid_argument("bad dtype '" + dtype + "'");
  s.dtype = dtype == "real" ? DType::real : DType::integer;
  j.at("min").get_to(s.min);
  j.at("max").get_to(s.max);
  const auto scale = j.at("scale").get<std::string>();
  if (scale != "linear" && scale != "log10") throw std::invalid_argument("bad scale '" + scale + "'");
  s.scale = scale == "linear" ? Scale::linear : Scale::log10;
  const auto act = j.value("activation", std::string("tanh"));
  if (act != "tanh" && act != "elu") throw std::invalid_argument("bad head activation '" + act + "'");
  s.head = act == "elu" ? nn::Activation::elu : nn::Activation::tanh;
}

}  // namespace paramap::env
