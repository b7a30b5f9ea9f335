#pragma once

// Dense double-precision arithmetic, hand-written reverse-mode adjoints for a
// fixed set of operations, and the differentiable-objective contract used by
// both optimization loops.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace metaepi {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct Batch;

// Throws NumericError naming `stage` if any entry is NaN or infinite.
void require_finite(std::span<const double> values, std::string_view stage);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double norm_inf(std::span<const double> a);
// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

namespace ops {

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// Given dC, accumulate dA += dC * B^T and dB += A^T * dC. Either output may be null.
void matmul_backward(const Matrix& a, const Matrix& b, const Matrix& d_out, Matrix* d_a,
                     Matrix* d_b);

// Adds `bias` to every row in place.
void add_bias(Matrix& x, std::span<const double> bias);
// d_bias += column sums of d_out
void add_bias_backward(const Matrix& d_out, std::span<double> d_bias);

Matrix relu(const Matrix& x);
// Masks d_out by (pre > 0) in place.
void relu_backward(const Matrix& pre, Matrix& d_out);

// Row-wise unit normalization. Writes each row's original norm to `norms`.
// A zero-norm row raises NumericError with `what` as the message.
Matrix normalize_rows(const Matrix& x, Vector& norms, std::string_view what = "zero-norm row");
// dX from dY for Y = X / ||X||: (dY - Y <Y, dY>) / ||X||, row-wise.
Matrix normalize_rows_backward(const Matrix& y, const Vector& norms, const Matrix& d_y);

// scores(i, c) = scale * <x_i, prototype_{classes[c]}>. Empty `classes` selects all rows.
Matrix cosine_scores(const Matrix& x, const Matrix& prototypes, std::span<const int> classes,
                     double scale);
Matrix cosine_scores_backward(const Matrix& prototypes, std::span<const int> classes, double scale,
                              const Matrix& d_scores);

Matrix softmax_rows(const Matrix& scores);
// Mean cross-entropy over rows; `targets` index columns. Writes dL/dscores if `d_scores` is set.
double softmax_cross_entropy(const Matrix& scores, std::span<const int> targets, Matrix* d_scores);

}  // namespace ops

struct Evaluation {
  double loss = 0.0;
  Matrix scores;  // n x (task classes); empty for objectives with no classifier
};

// A scalar loss of a flat parameter vector over a batch. Implementations must be
// pure: identical inputs give bit-identical outputs.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::size_t dimension() const = 0;
  virtual Evaluation evaluate(std::span<const double> params, const Batch& batch) const = 0;
  // Returns the loss and overwrites `grad` (length dimension()) with its gradient.
  virtual double loss_and_gradient(std::span<const double> params, const Batch& batch,
                                   std::span<double> grad) const = 0;

  double loss(std::span<const double> params, const Batch& batch) const {
    return evaluate(params, batch).loss;
  }
};

// Gradient of the batch loss. Checks shapes, rejects empty batches, and raises
// NumericError naming `stage` if the loss or gradient is not finite.
Vector gradient(const Objective& objective, std::span<const double> params, const Batch& batch,
                std::string_view stage = "gradient");

// Hessian-vector product by central differences of the analytic gradient along
// v/||v|| with step cbrt(eps) * (1 + ||params||_inf). Exact zero for v = 0.
Vector hvp(const Objective& objective, std::span<const double> params, const Batch& batch,
           std::span<const double> v);

// L(theta) = 0.5 theta^T A theta + b^T theta. Ignores the batch contents.
class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(Matrix a, Vector b = {});

  std::size_t dimension() const override { return a_.rows(); }
  Evaluation evaluate(std::span<const double> params, const Batch& batch) const override;
  double loss_and_gradient(std::span<const double> params, const Batch& batch,
                           std::span<double> grad) const override;

 private:
  Matrix a_;
  Vector b_;
};

// c * L for a wrapped objective. The wrapped objective must outlive this one.
class ScaledObjective final : public Objective {
 public:
  ScaledObjective(const Objective& inner, double factor) : inner_(inner), factor_(factor) {}

  std::size_t dimension() const override { return inner_.dimension(); }
  Evaluation evaluate(std::span<const double> params, const Batch& batch) const override;
  double loss_and_gradient(std::span<const double> params, const Batch& batch,
                           std::span<double> grad) const override;

 private:
  const Objective& inner_;
  double factor_;
};

}  // namespace metaepi
