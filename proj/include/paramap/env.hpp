#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "paramap/datasets.hpp"
#include "paramap/nn.hpp"

// Hyperparameter schemas and the environments that score a hyperparameter
// vector on a train/test split.
namespace paramap::env {

enum class DType { real, integer };
enum class Scale { linear, log10 };

struct HyperparamSpec {
  std::string name;
  DType dtype = DType::real;
  double min = 0.0;
  double max = 1.0;
  Scale scale = Scale::linear;
  nn::Activation head = nn::Activation::tanh;

  // Working coordinate: log10 for log-scaled specs, identity otherwise.
  [[nodiscard]] double to_u(double v) const;
  [[nodiscard]] double from_u(double u) const;
  [[nodiscard]] double u_min() const { return to_u(min); }
  [[nodiscard]] double u_max() const { return to_u(max); }
  // Clamp to bounds and round integer dtypes.
  [[nodiscard]] double snap(double v) const;
};

using HyperparamVector = std::vector<double>;
using Specs = std::vector<HyperparamSpec>;

void validate_specs(const Specs& specs);

class OutOfBounds : public std::invalid_argument {
 public:
  OutOfBounds(std::size_t index, const std::string& what);
  [[nodiscard]] std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// Throws OutOfBounds for wrong length, out-of-range or non-integral values.
void check_vector(const Specs& specs, const HyperparamVector& v);

std::vector<double> to_u(const Specs& specs, const HyperparamVector& v);
HyperparamVector from_u(const Specs& specs, const std::vector<double>& u);

class Environment {
 public:
  virtual ~Environment() = default;
  [[nodiscard]] virtual const Specs& specs() const = 0;
  // Accuracy in [0, 1]. Deterministic in (v, split).
  [[nodiscard]] virtual double evaluate(const HyperparamVector& v, const data::TabularSplit& split) const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
};

using EnvPtr = std::shared_ptr<const Environment>;

// max(0, 1 - sum c_i (u_i - u*_i)^2), a separable concave surrogate.
EnvPtr analytic_env(Specs specs, HyperparamVector optimum, std::vector<double> curvature);
// Same surrogate in coordinates rotated by angle (radians); needs two parameters.
EnvPtr rotated_env(Specs specs, HyperparamVector optimum, double angle, std::vector<double> curvature);

enum class LearnerKind { ridge_logistic, boosted_stumps };
EnvPtr toy_learner_env(LearnerKind kind, std::uint64_t seed = 0);
Specs learner_specs(LearnerKind kind);
LearnerKind learner_from_string(const std::string& s);
std::string to_string(LearnerKind k);

// Pass-through wrapper that counts evaluate() calls.
class CountingEnvironment : public Environment {
 public:
  explicit CountingEnvironment(EnvPtr inner) : inner_(std::move(inner)) {}
  [[nodiscard]] const Specs& specs() const override { return inner_->specs(); }
  [[nodiscard]] double evaluate(const HyperparamVector& v, const data::TabularSplit& split) const override {
    ++count_;
    return inner_->evaluate(v, split);
  }
  [[nodiscard]] std::string name() const override { return inner_->name(); }
  [[nodiscard]] std::size_t count() const { return count_.load(); }
  void reset() { count_ = 0; }

 private:
  EnvPtr inner_;
  mutable std::atomic<std::size_t> count_{0};
};

void to_json(nlohmann::json& j, const HyperparamSpec& s);
void from_json(const nlohmann::json& j, HyperparamSpec& s);

}  // namespace paramap::env
