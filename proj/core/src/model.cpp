#include "metaepi/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "metaepi/errors.hpp"

namespace metaepi {

int Batch::local_label(std::size_t i) const {
  const int label = labels.at(i);
  if (classes.empty()) return label;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c] == label) return static_cast<int>(c);
  }
  throw DimensionError("label " + std::to_string(label) + " is not one of the batch classes");
}

std::vector<int> Batch::local_labels() const {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = local_label(i);
  return out;
}

FrozenEncoder FrozenEncoder::identity() { return FrozenEncoder{}; }

FrozenEncoder FrozenEncoder::seeded(std::size_t raw_dim, std::size_t dim, std::uint64_t seed) {
  if (raw_dim == 0 || dim == 0) throw DimensionError("encoder dimensions must be positive");
  FrozenEncoder enc;
  enc.identity_ = false;
  enc.projection_ = Matrix(raw_dim, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(raw_dim)));
  for (double& v : enc.projection_.values()) v = normal(rng);
  return enc;
}

Matrix FrozenEncoder::encode(const Matrix& raw) const {
  Vector norms;
  if (identity_) return ops::normalize_rows(raw, norms, "zero-norm embedding");
  if (raw.cols() != projection_.rows()) {
    throw DimensionError("encoder expects " + std::to_string(projection_.rows()) +
                         " input columns, got " + std::to_string(raw.cols()));
  }
  return ops::normalize_rows(ops::matmul(raw, projection_), norms, "zero-norm embedding");
}

ClassPrototypes::ClassPrototypes(Matrix rows) {
  require_finite(rows.values(), "class prototypes");
  Vector norms;
  rows_ = ops::normalize_rows(rows, norms, "zero-norm class prototype");
}

void AdapterShape::validate() const {
  if (dim == 0 || hidden == 0) throw ConfigError("adapter dimensions must be positive");
  if (!(blend >= 0.0 && blend <= 1.0)) throw ConfigError("blend ratio must lie in [0, 1]");
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) {
    throw ConfigError("logit scale must be positive and finite");
  }
}

AdapterParams AdapterParams::zeros(const AdapterShape& shape) {
  return {Matrix(shape.dim, shape.hidden), Vector(shape.hidden, 0.0), Matrix(shape.hidden, shape.dim),
          Vector(shape.dim, 0.0)};
}

AdapterParams AdapterParams::initialize(const AdapterShape& shape, std::uint64_t seed) {
  AdapterParams p = zeros(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> in(0.0, 1.0 / std::sqrt(static_cast<double>(shape.dim)));
  std::normal_distribution<double> out(0.0, 0.1 / std::sqrt(static_cast<double>(shape.hidden)));
  for (double& v : p.w1.values()) v = in(rng);
  for (double& v : p.w2.values()) v = out(rng);
  return p;
}

AdapterParams AdapterParams::unflatten(const AdapterShape& shape, std::span<const double> flat) {
  if (flat.size() != shape.parameter_count()) {
    throw DimensionError("adapter expects " + std::to_string(shape.parameter_count()) +
                         " parameters, got " + std::to_string(flat.size()));
  }
  const std::size_t dh = shape.dim * shape.hidden;
  auto it = flat.begin();
  auto take = [&it](std::size_t n) {
    std::vector<double> v(it, it + static_cast<std::ptrdiff_t>(n));
    it += static_cast<std::ptrdiff_t>(n);
    return v;
  };
  AdapterParams p;
  p.w1 = Matrix(shape.dim, shape.hidden, take(dh));
  p.b1 = take(shape.hidden);
  p.w2 = Matrix(shape.hidden, shape.dim, take(dh));
  p.b2 = take(shape.dim);
  return p;
}

Vector AdapterParams::flatten() const {
  Vector flat;
  flat.reserve(w1.size() + b1.size() + w2.size() + b2.size());
  flat.insert(flat.end(), w1.values().begin(), w1.values().end());
  flat.insert(flat.end(), b1.begin(), b1.end());
  flat.insert(flat.end(), w2.values().begin(), w2.values().end());
  flat.insert(flat.end(), b2.begin(), b2.end());
  return flat;
}

namespace {

// Intermediate values of one forward pass, kept for the backward sweep.
struct Trace {
  Matrix pre;      // x W1 + b1
  Matrix hidden;   // relu(pre)
  Matrix blended;  // unit rows of (1-r) x + r (h W2 + b2)
  Vector norms;
  Matrix scores;
};

Trace run_forward(const AdapterParams& p, const AdapterShape& shape, const Matrix& protos,
                  const Batch& batch) {
  const Matrix& x = batch.embeddings;
  if (x.cols() != shape.dim) {
    throw DimensionError("batch embedding dim " + std::to_string(x.cols()) +
                         " does not match adapter dim " + std::to_string(shape.dim));
  }
  if (x.rows() != batch.labels.size()) throw DimensionError("batch needs one label per row");
  Trace t;
  t.pre = ops::matmul(x, p.w1);
  ops::add_bias(t.pre, p.b1);
  t.hidden = ops::relu(t.pre);
  Matrix mix = ops::matmul(t.hidden, p.w2);
  ops::add_bias(mix, p.b2);
  const double r = shape.blend;
  auto mv = mix.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < mv.size(); ++i) mv[i] = (1.0 - r) * xv[i] + r * mv[i];
  t.blended = ops::normalize_rows(mix, t.norms, "zero-norm blended embedding");
  t.scores = ops::cosine_scores(t.blended, protos, batch.classes, shape.logit_scale);
  return t;
}

}  // namespace

ForwardResult forward(const AdapterParams& params, const AdapterShape& shape,
                      const ClassPrototypes& prototypes, const Batch& batch) {
  Trace t = run_forward(params, shape, prototypes.matrix(), batch);
  const auto targets = batch.local_labels();
  ForwardResult out;
  out.loss = ops::softmax_cross_entropy(t.scores, targets, nullptr);
  const auto predicted = predict(t.scores);
  out.correct.resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) out.correct[i] = predicted[i] == targets[i];
  out.scores = std::move(t.scores);
  return out;
}

std::vector<int> predict(const Matrix& scores) {
  std::vector<int> out(scores.rows(), 0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto r = scores.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < r.size(); ++c) {
      if (r[c] > r[best]) best = c;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::map<int, double> accuracy_by_class(const Matrix& scores, std::span<const int> labels) {
  if (labels.size() != scores.rows()) throw DimensionError("accuracy: one label per score row");
  const auto predicted = predict(scores);
  std::map<int, std::pair<std::size_t, std::size_t>> tally;  // label -> (correct, total)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [hit, total] = tally[labels[i]];
    ++total;
    if (predicted[i] == labels[i]) ++hit;
  }
  std::map<int, double> acc;
  for (const auto& [label, counts] : tally) {
    acc[label] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return acc;
}

AdapterObjective::AdapterObjective(AdapterShape shape, ClassPrototypes prototypes)
    : shape_(shape), prototypes_(std::move(prototypes)) {
  shape_.validate();
  if (prototypes_.dim() != shape_.dim) {
    throw DimensionError("prototype dim " + std::to_string(prototypes_.dim()) +
                         " does not match adapter dim " + std::to_string(shape_.dim));
  }
}

Evaluation AdapterObjective::evaluate(std::span<const double> params, const Batch& batch) const {
  const auto p = AdapterParams::unflatten(shape_, params);
  Trace t = run_forward(p, shape_, prototypes_.matrix(), batch);
  const double loss = ops::softmax_cross_entropy(t.scores, batch.local_labels(), nullptr);
  return {loss, std::move(t.scores)};
}

double AdapterObjective::loss_and_gradient(std::span<const double> params, const Batch& batch,
                                           std::span<double> grad) const {
  if (grad.size() != dimension()) throw DimensionError("adapter: gradient length mismatch");
  const auto p = AdapterParams::unflatten(shape_, params);
  const Matrix& protos = prototypes_.matrix();
  Trace t = run_forward(p, shape_, protos, batch);

  Matrix d_scores;
  const double loss = ops::softmax_cross_entropy(t.scores, batch.local_labels(), &d_scores);
  const Matrix d_blended =
      ops::cosine_scores_backward(protos, batch.classes, shape_.logit_scale, d_scores);
  Matrix d_mix = ops::normalize_rows_backward(t.blended, t.norms, d_blended);
  for (double& v : d_mix.values()) v *= shape_.blend;

  AdapterParams g = AdapterParams::zeros(shape_);
  Matrix d_hidden(t.hidden.rows(), t.hidden.cols());
  ops::matmul_backward(t.hidden, p.w2, d_mix, &d_hidden, &g.w2);
  ops::add_bias_backward(d_mix, g.b2);
  ops::relu_backward(t.pre, d_hidden);
  ops::matmul_backward(batch.embeddings, p.w1, d_hidden, nullptr, &g.w1);
  ops::add_bias_backward(d_hidden, g.b1);

  const Vector flat = g.flatten();
  std::copy(flat.begin(), flat.end(), grad.begin());
  return loss;
}

}  // namespace metaepi
