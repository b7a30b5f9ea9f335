#pragma once

// Frozen encoder -> residual adapter -> cosine-prototype classifier.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "metaepi/batch.hpp"
#include "metaepi/diffcore.hpp"

namespace metaepi {

// Fixed feature map standing in for a pretrained encoder. Rows are projected
// (unless identity) and then unit-normalized.
class FrozenEncoder {
 public:
  static FrozenEncoder identity();
  // Gaussian projection raw_dim -> dim with entries N(0, 1/raw_dim), fixed by seed.
  static FrozenEncoder seeded(std::size_t raw_dim, std::size_t dim, std::uint64_t seed);

  bool is_identity() const noexcept { return identity_; }
  const Matrix& projection() const noexcept { return projection_; }

  Matrix encode(const Matrix& raw) const;

 private:
  FrozenEncoder() = default;
  bool identity_ = true;
  Matrix projection_;
};

// One unit-norm row per class; rows are normalized on construction.
class ClassPrototypes {
 public:
  ClassPrototypes() = default;
  explicit ClassPrototypes(Matrix rows);

  std::size_t count() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return rows_.cols(); }
  const Matrix& matrix() const noexcept { return rows_; }

 private:
  Matrix rows_;
};

struct AdapterShape {
  std::size_t dim = 32;     // D
  std::size_t hidden = 16;  // H
  double blend = 0.5;       // r in [0, 1]
  double logit_scale = 10.0;

  std::size_t parameter_count() const noexcept { return 2 * dim * hidden + hidden + dim; }
  void validate() const;
};

// Residual bottleneck adapter weights. Flattened layout: W1 (D x H, row-major),
// b1 (H), W2 (H x D, row-major), b2 (D).
struct AdapterParams {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  static AdapterParams zeros(const AdapterShape& shape);
  // W1 ~ N(0, 1/D), W2 ~ N(0, 0.01/H), zero biases.
  static AdapterParams initialize(const AdapterShape& shape, std::uint64_t seed);
  static AdapterParams unflatten(const AdapterShape& shape, std::span<const double> flat);

  Vector flatten() const;
};

struct ForwardResult {
  double loss = 0.0;
  Matrix scores;              // n x task classes
  std::vector<bool> correct;  // argmax(scores_i) == local label, ties to lowest index
};

ForwardResult forward(const AdapterParams& params, const AdapterShape& shape,
                      const ClassPrototypes& prototypes, const Batch& batch);

// Row-wise argmax, ties broken by the lowest column index.
std::vector<int> predict(const Matrix& scores);

// Fraction of correctly classified rows per label value present in `labels`.
std::map<int, double> accuracy_by_class(const Matrix& scores, std::span<const int> labels);

// Mean softmax cross-entropy of the adapter classifier over a batch, as a
// differentiable objective of the flattened adapter parameters.
class AdapterObjective final : public Objective {
 public:
  AdapterObjective(AdapterShape shape, ClassPrototypes prototypes);

  const AdapterShape& shape() const noexcept { return shape_; }
  const ClassPrototypes& prototypes() const noexcept { return prototypes_; }

  std::size_t dimension() const override { return shape_.parameter_count(); }
  Evaluation evaluate(std::span<const double> params, const Batch& batch) const override;
  double loss_and_gradient(std::span<const double> params, const Batch& batch,
                           std::span<double> grad) const override;

 private:
  AdapterShape shape_;
  ClassPrototypes prototypes_;
};

}  // namespace metaepi
