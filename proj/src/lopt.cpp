#include "paramap/lopt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace paramap::lopt {

SegmentTree::SegmentTree(std::size_t n, double init) : n_(n) {
  if (n == 0) throw std::invalid_argument("segment tree needs at least one leaf");
  tree_.assign(4 * n, 0.0);
  build(1, 0, n - 1, init);
}

void SegmentTree::build(std::size_t node, std::size_t lo, std::size_t hi, double init) {
  if (lo == hi) {
    tree_[node] = init;
    return;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  build(2 * node, lo, mid, init);
  build(2 * node + 1, mid + 1, hi, init);
  tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
}

void SegmentTree::set(std::size_t node, std::size_t lo, std::size_t hi, std::size_t i, double value) {
  if (lo == hi) {
    tree_[node] = value;
    return;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  if (i <= mid) {
    set(2 * node, lo, mid, i, value);
  } else {
    set(2 * node + 1, mid + 1, hi, i, value);
  }
  tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
}

double SegmentTree::query(std::size_t node, std::size_t lo, std::size_t hi, std::size_t l, std::size_t r) const {
  if (l <= lo && hi <= r) return tree_[node];
  const std::size_t mid = lo + (hi - lo) / 2;
  double s = 0.0;
  if (l <= mid) s += query(2 * node, lo, mid, l, r);
  if (r > mid) s += query(2 * node + 1, mid + 1, hi, l, r);
  return s;
}

void SegmentTree::update(std::size_t i, double value) {
  if (i >= n_) throw std::out_of_range("segment tree index " + std::to_string(i) + " out of range");
  if (!(value >= 0.0)) throw std::invalid_argument("segment tree values must be non-negative");
  set(1, 0, n_ - 1, i, value);
}

double SegmentTree::range_sum(std::size_t l, std::size_t r) const {
  if (l > r || r >= n_) throw std::out_of_range("bad segment tree range");
  return query(1, 0, n_ - 1, l, r);
}

bool SegmentTree::check_over(std::size_t l, std::size_t r, double eps) const { return range_sum(l, r) <= eps; }

double SegmentTree::leaf(std::size_t i) const { return range_sum(i, i); }

Climber::Climber(const env::Environment& env, const data::TabularSplit& split, LoptConfig cfg,
                 env::HyperparamVector start, bool record_trace, std::optional<double> start_accuracy)
    : env_(env), split_(split), cfg_(cfg), specs_(env.specs()), p_(std::move(start)), tree_(specs_.size()),
      record_(record_trace) {
  if (!(cfg_.epsilon > 0.0 && cfg_.epsilon_prime > 0.0 && cfg_.epsilon_total > 0.0)) {
    throw std::invalid_argument("lopt thresholds must be positive");
  }
  if (cfg_.max_mc_iters < 1 || cfg_.max_sweeps < 1) throw std::invalid_argument("lopt caps must be >= 1");
  env::check_vector(specs_, p_);
  if (start_accuracy) {
    acc_ = *start_accuracy;
    memo_.emplace(p_, acc_);
  } else {
    const auto a = evaluate(p_, -1);
    if (!a) throw std::invalid_argument("lopt budget too small to score the start point");
    acc_ = *a;
  }
  start_acc_ = acc_;
}

double Climber::range_of(std::size_t x) const {
  return cfg_.relative ? specs_[x].u_max() - specs_[x].u_min() : 1.0;
}

double Climber::threshold(std::size_t l, std::size_t r) const {
  // Each coordinate gets an equal share, so settled halves imply a settled whole.
  return cfg_.epsilon_total * static_cast<double>(r - l + 1) / static_cast<double>(specs_.size());
}

std::optional<double> Climber::evaluate(const env::HyperparamVector& v, int coordinate) {
  if (auto it = memo_.find(v); it != memo_.end()) return it->second;
  if (cfg_.budget != 0 && evals_ >= cfg_.budget) {
    exhausted_ = true;
    return std::nullopt;
  }
  const double a = env_.evaluate(v, split_);
  ++evals_;
  memo_.emplace(v, a);
  if (record_) trace_.push_back({evals_, coordinate, coordinate >= 0 ? v[coordinate] : 0.0, a});
  return a;
}

void Climber::mc(std::size_t x) {
  if (x >= specs_.size()) throw std::out_of_range("coordinate out of range");
  const auto& spec = specs_[x];
  const double scale = range_of(x);
  const double u_start = spec.to_u(p_[x]);
  double stride = cfg_.epsilon * scale;
  const double stop = cfg_.epsilon_prime * scale;
  const bool integral = spec.dtype == env::DType::integer;

  for (int it = 0; it < cfg_.max_mc_iters && !exhausted_; ++it) {
    if (!integral && stride <= stop) break;
    const double u = spec.to_u(p_[x]);
    // Integer steps never go below one unit.
    const double step = integral ? std::max(1.0, std::round(stride)) : stride;
    double best_acc = acc_;
    std::optional<double> best_val;
    for (double dir : {-1.0, 1.0}) {
      const double cand = spec.snap(spec.from_u(std::clamp(u + dir * step, spec.u_min(), spec.u_max())));
      if (cand == p_[x]) continue;
      auto probe = p_;
      probe[x] = cand;
      const auto a = evaluate(probe, static_cast<int>(x));
      if (!a) break;
      if (*a > best_acc) {
        best_acc = *a;
        best_val = cand;
      }
    }
    if (exhausted_) break;
    if (best_val) {
      p_[x] = *best_val;
      acc_ = best_acc;
      continue;
    }
    if (integral && step <= 1.0) break;
    stride /= 2.0;
  }
  tree_.update(x, std::abs(spec.to_u(p_[x]) - u_start) / scale);
}

void Climber::dmc(std::size_t l, std::size_t r) {
  if (r != l + 1) throw std::invalid_argument("dmc works on adjacent coordinates");
  for (int sweep = 0; sweep < cfg_.max_sweeps && !exhausted_; ++sweep) {
    if (tree_.check_over(l, r, threshold(l, r))) break;
    mc(l);
    mc(r);
  }
}

void Climber::func(std::size_t l, std::size_t r) {
  if (exhausted_) return;
  if (l == r) {
    mc(l);
    return;
  }
  if (r == l + 1) {
    dmc(l, r);
    return;
  }
  const std::size_t mid = l + (r - l) / 2;
  for (int sweep = 0; sweep < cfg_.max_sweeps && !exhausted_; ++sweep) {
    if (tree_.check_over(l, r, threshold(l, r))) break;
    func(l, mid);
    func(mid + 1, r);
  }
}

LoptResult lopt(const env::HyperparamVector& p0, const env::Environment& env, const data::TabularSplit& split,
                const LoptConfig& cfg, bool record_trace, std::optional<double> start_accuracy) {
  Climber c(env, split, cfg, p0, record_trace, start_accuracy);
  c.func(0, env.specs().size() - 1);
  return {c.current(), c.accuracy(), c.start_accuracy(), c.evaluations(), c.exhausted(), c.trace()};
}

void to_json(nlohmann::json& j, const LoptConfig& c) {
  j = nlohmann::json{{"epsilon", c.epsilon},           {"epsilon_prime", c.epsilon_prime},
                     {"epsilon_total", c.epsilon_total}, {"max_mc_iters", c.max_mc_iters},
                     {"max_sweeps", c.max_sweeps},       {"relative", c.relative}};
}

void from_json(const nlohmann::json& j, LoptConfig& c) {
  c.epsilon = j.value("epsilon", c.epsilon);
  c.epsilon_prime = j.value("epsilon_prime", c.epsilon_prime);
  c.epsilon_total = j.value("epsilon_total", c.epsilon_total);
  c.max_mc_iters = j.value("max_mc_iters", c.max_mc_iters);
  c.max_sweeps = j.value("max_sweeps", c.max_sweeps);
  c.relative = j.value("relative", c.relative);
  if (!(c.epsilon > 0.0 && c.epsilon_prime > 0.0 && c.epsilon_total > 0.0)) {
    throw std::invalid_argument("lopt strides and thresholds must be positive");
  }
  if (c.max_mc_iters < 1 || c.max_sweeps < 1) throw std::invalid_argument("lopt iteration caps must be positive");
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "step,coordinate,value,accuracy\n";
  out.precision(17);
  for (const auto& t : trace) out << t.step << ',' << t.coordinate << ',' << t.value << ',' << t.accuracy << '\n';
}

}  // namespace paramap::lopt
