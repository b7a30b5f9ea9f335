#pragma once

// Fixtures and independent oracles shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "metaepi/data.hpp"
#include "metaepi/diffcore.hpp"
#include "metaepi/episodic.hpp"
#include "metaepi/metalearn.hpp"
#include "metaepi/model.hpp"

namespace metaepi::testing {

// One dummy row; objectives that ignore the batch still need a non-empty one.
inline Batch toy_batch() {
  Batch b;
  b.embeddings = Matrix(1, 1, 1.0);
  b.labels = {0};
  return b;
}

// L(theta) = a * theta^2 over a scalar.
inline QuadraticObjective scalar_square(double a = 1.0) { return QuadraticObjective(Matrix(1, 1, 2.0 * a)); }

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

// max_j |a_j - b_j| / max(max_j |b_j|, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    diff = std::max(diff, std::abs(a[j] - b[j]));
    scale = std::max(scale, std::abs(b[j]));
  }
  return diff / std::max(scale, floor);
}

// Central differences of f at x, coordinate by coordinate.
inline Vector finite_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector probe = x;
  for (std::size_t j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const double up = f(probe);
    probe[j] = x[j] - h;
    const double down = f(probe);
    probe[j] = x[j];
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

// Small adapter problem: D=8 embeddings, 6 classes, H=16.
struct AdapterFixture {
  SyntheticData data;
  AdapterShape shape;
  AdapterObjective objective;

  explicit AdapterFixture(std::uint64_t seed = 3, std::size_t dim = 8, std::size_t hidden = 16)
      : data(generate(SyntheticSpec::uniform(6, dim, 2, 0.3, 0.4, 20, seed))),
        shape{dim, hidden, 0.5, 10.0},
        objective(shape, data.prototypes) {}

  Task task(std::uint64_t seed, TaskShape task_shape = {3, 5, 5}) const {
    Rng rng(seed);
    return TaskSampler(data.bank, task_shape).sample_random(rng);
  }
  Vector params(std::uint64_t seed) const { return AdapterParams::initialize(shape, seed).flatten(); }
};

// L_out(theta - alpha (.) grad L_in(theta)) for the one-step composite map.
inline double composite_loss(const Objective& obj, const Task& task, const Vector& theta, const Vector& alpha) {
  const Vector g_in = gradient(obj, theta, task.support);
  Vector adapted = theta;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    adapted[j] -= (alpha.size() == 1 ? alpha[0] : alpha[j]) * g_in[j];
  }
  return obj.loss(adapted, task.query);
}

// Composite meta-gradient by central differences over theta and alpha.
inline MetaGradient composite_fd(const Objective& obj, const Task& task, const MetaParams& mp, double h) {
  MetaGradient g;
  g.d_theta = finite_difference([&](const Vector& t) { return composite_loss(obj, task, t, mp.alpha); },
                                mp.theta, h);
  g.d_alpha = finite_difference([&](const Vector& a) { return composite_loss(obj, task, mp.theta, a); },
                                mp.alpha, h);
  return g;
}

// Left fold of P <- (P + A) / 2 from zero.
inline double memory_fold(std::span<const double> accuracies) {
  double p = 0.0;
  for (double a : accuracies) p = (p + a) / 2.0;
  return p;
}

// Reference class selection: one key per class in ascending id order, then a
// full sort on (value, last sampled, key, id) and the first n_way ids.
inline std::vector<int> selection_oracle(const std::vector<double>& values,
                                         const std::vector<std::int64_t>& last_sampled, std::size_t n_way,
                                         Rng& rng) {
  std::vector<std::tuple<double, std::int64_t, std::uint64_t, int>> order;
  for (std::size_t c = 0; c < values.size(); ++c) {
    const std::uint64_t key = rng();
    order.emplace_back(values[c], last_sampled[c], key, static_cast<int>(c));
  }
  std::sort(order.begin(), order.end());
  std::vector<int> out;
  for (std::size_t i = 0; i < n_way; ++i) out.push_back(std::get<3>(order[i]));
  return out;
}

// Per-class accuracy by explicit recount: argmax with lowest-index ties.
inline std::map<int, double> recount_accuracy(const Matrix& scores, std::span<const int> labels) {
  std::map<int, std::pair<int, int>> tally;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.cols(); ++c) {
      if (scores(i, c) > scores(i, best)) best = c;
    }
    auto& [hit, total] = tally[labels[i]];
    hit += static_cast<int>(best) == labels[i] ? 1 : 0;
    ++total;
  }
  std::map<int, double> out;
  for (const auto& [c, t] : tally) out[c] = static_cast<double>(t.first) / t.second;
  return out;
}

}  // namespace metaepi::testing
