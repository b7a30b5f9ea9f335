#include "metaepi/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "metaepi/batch.hpp"
#include "metaepi/errors.hpp"

namespace metaepi {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw DimensionError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " given " + std::to_string(values_.size()) + " values");
  }
}

void require_finite(std::span<const double> values, std::string_view stage) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("non-finite value at index " + std::to_string(i) + " in " +
                         std::string(stage));
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double norm_inf(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

namespace ops {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

void matmul_backward(const Matrix& a, const Matrix& b, const Matrix& d_out, Matrix* d_a,
                     Matrix* d_b) {
  if (d_a != nullptr) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      auto g = d_out.row(i);
      for (std::size_t k = 0; k < a.cols(); ++k) (*d_a)(i, k) += dot(g, b.row(k));
    }
  }
  if (d_b != nullptr) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      auto g = d_out.row(i);
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        axpy(aik, g, d_b->row(k));
      }
    }
  }
}

void add_bias(Matrix& x, std::span<const double> bias) {
  if (bias.size() != x.cols()) throw DimensionError("add_bias: width mismatch");
  for (std::size_t i = 0; i < x.rows(); ++i) axpy(1.0, bias, x.row(i));
}

void add_bias_backward(const Matrix& d_out, std::span<double> d_bias) {
  for (std::size_t i = 0; i < d_out.rows(); ++i) axpy(1.0, d_out.row(i), d_bias);
}

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

void relu_backward(const Matrix& pre, Matrix& d_out) {
  auto p = pre.values();
  auto d = d_out.values();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(p[i] > 0.0)) d[i] = 0.0;
  }
}

Matrix normalize_rows(const Matrix& x, Vector& norms, std::string_view what) {
  Matrix y = x;
  norms.assign(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double n = norm2(x.row(i));
    if (!(n > 0.0)) throw NumericError(std::string(what));
    norms[i] = n;
    for (double& v : y.row(i)) v /= n;
  }
  return y;
}

Matrix normalize_rows_backward(const Matrix& y, const Vector& norms, const Matrix& d_y) {
  Matrix d_x(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const auto yr = y.row(i);
    const auto gr = d_y.row(i);
    const double proj = dot(yr, gr);
    auto out = d_x.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) out[j] = (gr[j] - yr[j] * proj) / norms[i];
  }
  return d_x;
}

namespace {

std::size_t prototype_row(const Matrix& prototypes, std::span<const int> classes, std::size_t c) {
  const std::size_t r = classes.empty() ? c : static_cast<std::size_t>(classes[c]);
  if (r >= prototypes.rows()) throw DimensionError("class id outside prototype table");
  return r;
}

}  // namespace

Matrix cosine_scores(const Matrix& x, const Matrix& prototypes, std::span<const int> classes,
                     double scale) {
  if (x.cols() != prototypes.cols()) throw DimensionError("cosine_scores: embedding dim mismatch");
  const std::size_t width = classes.empty() ? prototypes.rows() : classes.size();
  Matrix s(x.rows(), width);
  for (std::size_t c = 0; c < width; ++c) {
    const auto p = prototypes.row(prototype_row(prototypes, classes, c));
    for (std::size_t i = 0; i < x.rows(); ++i) s(i, c) = scale * dot(x.row(i), p);
  }
  return s;
}

Matrix cosine_scores_backward(const Matrix& prototypes, std::span<const int> classes, double scale,
                              const Matrix& d_scores) {
  Matrix d_x(d_scores.rows(), prototypes.cols());
  for (std::size_t c = 0; c < d_scores.cols(); ++c) {
    const auto p = prototypes.row(prototype_row(prototypes, classes, c));
    for (std::size_t i = 0; i < d_scores.rows(); ++i) axpy(scale * d_scores(i, c), p, d_x.row(i));
  }
  return d_x;
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix p = scores;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto r = p.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double& v : r) {
      v = std::exp(v - m);
      z += v;
    }
    for (double& v : r) v /= z;
  }
  return p;
}

double softmax_cross_entropy(const Matrix& scores, std::span<const int> targets, Matrix* d_scores) {
  if (targets.size() != scores.rows()) throw DimensionError("cross-entropy: one target per row");
  if (scores.rows() == 0) throw DimensionError("cross-entropy: empty batch");
  const double n = static_cast<double>(scores.rows());
  double total = 0.0;
  if (d_scores != nullptr) *d_scores = Matrix(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto r = scores.row(i);
    const auto t = static_cast<std::size_t>(targets[i]);
    if (t >= r.size()) throw DimensionError("cross-entropy: target outside score columns");
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - m);
    const double log_z = m + std::log(z);
    total += log_z - r[t];
    if (d_scores != nullptr) {
      auto g = d_scores->row(i);
      for (std::size_t c = 0; c < r.size(); ++c) g[c] = std::exp(r[c] - log_z) / n;
      g[t] -= 1.0 / n;
    }
  }
  return total / n;
}

}  // namespace ops

Vector gradient(const Objective& objective, std::span<const double> params, const Batch& batch,
                std::string_view stage) {
  if (params.size() != objective.dimension()) {
    throw DimensionError("gradient: parameter length " + std::to_string(params.size()) +
                         " does not match objective dimension " +
                         std::to_string(objective.dimension()));
  }
  if (batch.size() == 0) throw DimensionError("gradient: empty batch");
  Vector g(params.size());
  const double loss = objective.loss_and_gradient(params, batch, g);
  if (!std::isfinite(loss)) throw NumericError("non-finite loss in " + std::string(stage));
  require_finite(g, stage);
  return g;
}

Vector hvp(const Objective& objective, std::span<const double> params, const Batch& batch,
           std::span<const double> v) {
  if (v.empty()) throw DimensionError("hvp: zero-length direction");
  if (v.size() != params.size()) throw DimensionError("hvp: direction length mismatch");
  require_finite(v, "hvp direction");
  const double v_norm = norm2(v);
  if (v_norm == 0.0) return Vector(v.size(), 0.0);

  const double h =
      std::cbrt(std::numeric_limits<double>::epsilon()) * (1.0 + norm_inf(params));
  Vector plus(params.begin(), params.end());
  Vector minus(params.begin(), params.end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double step = h * v[i] / v_norm;
    plus[i] += step;
    minus[i] -= step;
  }
  const Vector g_plus = gradient(objective, plus, batch, "hvp (+h)");
  const Vector g_minus = gradient(objective, minus, batch, "hvp (-h)");
  Vector out(v.size());
  const double factor = v_norm / (2.0 * h);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (g_plus[i] - g_minus[i]) * factor;
  require_finite(out, "hvp");
  return out;
}

QuadraticObjective::QuadraticObjective(Matrix a, Vector b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() != a_.cols()) throw DimensionError("quadratic: A must be square");
  if (b_.empty()) b_.assign(a_.rows(), 0.0);
  if (b_.size() != a_.rows()) throw DimensionError("quadratic: b length mismatch");
}

Evaluation QuadraticObjective::evaluate(std::span<const double> params, const Batch&) const {
  if (params.size() != dimension()) throw DimensionError("quadratic: parameter length mismatch");
  double loss = dot(b_, params);
  for (std::size_t i = 0; i < a_.rows(); ++i) loss += 0.5 * params[i] * dot(a_.row(i), params);
  return {loss, Matrix{}};
}

double QuadraticObjective::loss_and_gradient(std::span<const double> params, const Batch& batch,
                                             std::span<double> grad) const {
  if (grad.size() != dimension()) throw DimensionError("quadratic: gradient length mismatch");
  // Gradient of 0.5 x^T A x is the symmetric part of A applied to x.
  for (std::size_t i = 0; i < a_.rows(); ++i) {
    double g = b_[i];
    for (std::size_t j = 0; j < a_.cols(); ++j) g += 0.5 * (a_(i, j) + a_(j, i)) * params[j];
    grad[i] = g;
  }
  return evaluate(params, batch).loss;
}

Evaluation ScaledObjective::evaluate(std::span<const double> params, const Batch& batch) const {
  Evaluation e = inner_.evaluate(params, batch);
  e.loss *= factor_;
  return e;
}

double ScaledObjective::loss_and_gradient(std::span<const double> params, const Batch& batch,
                                          std::span<double> grad) const {
  const double loss = inner_.loss_and_gradient(params, batch, grad);
  for (double& g : grad) g *= factor_;
  return factor_ * loss;
}

}  // namespace metaepi
