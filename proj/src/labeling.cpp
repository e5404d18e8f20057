#include "paramap/labeling.hpp"

#include <algorithm>
#include <cmath>

namespace paramap::labeling {

std::vector<double> transform_label(const env::HyperparamVector& p, const env::Specs& specs) {
  env::check_vector(specs, p);
  std::vector<double> z(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& s = specs[i];
    const double u = s.to_u(p[i]);
    z[i] = kZoom * (2.0 * (u - s.u_min()) / (s.u_max() - s.u_min()) - 1.0);
  }
  return z;
}

env::HyperparamVector inverse_transform(const std::vector<double>& z, const env::Specs& specs) {
  if (z.size() != specs.size()) throw std::invalid_argument("label width does not match the schema");
  env::HyperparamVector v(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(z[i])) throw std::invalid_argument("non-finite transformed label");
    const auto& s = specs[i];
    const double t = std::clamp(z[i], -kZoom, kZoom) / kZoom;
    const double u = s.u_min() + (t + 1.0) / 2.0 * (s.u_max() - s.u_min());
    v[i] = s.snap(s.from_u(u));
  }
  return v;
}

env::HyperparamVector sample_uniform(const env::Specs& specs, Rng& rng) {
  env::HyperparamVector v(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.dtype == env::DType::integer && s.scale == env::Scale::linear) {
      const double lo = std::ceil(s.min);
      const double hi = std::floor(s.max);
      v[i] = lo + static_cast<double>(rng.below(static_cast<std::uint64_t>(hi - lo) + 1));
    } else {
      v[i] = s.snap(s.from_u(rng.uniform(s.u_min(), s.u_max())));
    }
  }
  return v;
}

SearchResult random_search(const env::Environment& env, const data::TabularSplit& split, std::size_t probes,
                           std::uint64_t seed) {
  if (probes == 0) throw std::invalid_argument("random search needs at least one probe");
  Rng rng(seed);
  SearchResult r;
  r.accuracy = -1.0;
  for (std::size_t i = 0; i < probes; ++i) {
    auto v = sample_uniform(env.specs(), rng);
    const double a = env.evaluate(v, split);
    ++r.evaluations;
    if (a > r.accuracy) {
      r.accuracy = a;
      r.best = std::move(v);
    }
  }
  return r;
}

LabelingError::LabelingError(std::string dataset_id, const std::string& what)
    : std::runtime_error("dataset " + dataset_id + ": " + what), id_(std::move(dataset_id)) {}

SearchResult label_dataset(const env::Environment& env, const data::TabularSplit& split, std::size_t budget,
                           std::uint64_t seed, const lopt::LoptConfig& cfg, const std::string& dataset_id) {
  const std::size_t d = env.specs().size();
  if (budget < d + 1) throw std::invalid_argument("labeling budget must be at least d + 1");
  try {
    const std::size_t probes = std::max(d + 1, budget / 2);
    auto r = random_search(env, split, probes, seed);
    const std::size_t left = budget - probes;
    if (left == 0) return r;
    auto c = cfg;
    c.budget = left;
    const auto refined = lopt::lopt(r.best, env, split, c, false, r.accuracy);
    r.evaluations += refined.evaluations;
    if (refined.accuracy > r.accuracy) {
      r.best = refined.best;
      r.accuracy = refined.accuracy;
    }
    return r;
  } catch (const LabelingError&) {
    throw;
  } catch (const std::exception& e) {
    throw LabelingError(dataset_id, e.what());
  }
}

}  // namespace paramap::labeling
