#include "hierot/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace hierot {

void ModelDims::validate() const {
  if (input_dim < 1 || hidden_dim < 1 || channels < 1)
    throw InvariantError("model dims must be positive");
  if (classes < 2) throw InvariantError("model needs at least two classes");
  if (depth < 1) throw InvariantError("embedder depth must be >= 1");
}

namespace {

std::vector<std::pair<Eigen::Index, Eigen::Index>> layer_shapes(const ModelDims& d) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;  // (out, in)
  Eigen::Index in = d.input_dim;
  for (int l = 0; l < d.depth; ++l) {
    const Eigen::Index out = (l + 1 == d.depth) ? d.channels : d.hidden_dim;
    shapes.emplace_back(out, in);
    in = out;
  }
  return shapes;
}

bool relu_after(const ModelDims& d, std::size_t layer) {
  return layer + 1 < static_cast<std::size_t>(d.depth) || d.final_relu;
}

}  // namespace

ModelParams ModelParams::zeros(const ModelDims& dims) {
  dims.validate();
  ModelParams p;
  p.dims = dims;
  for (auto [out, in] : layer_shapes(dims))
    p.embedder.push_back({Matrix::Zero(out, in), Matrix::Zero(1, out)});
  p.classifier = {Matrix::Zero(dims.classes, dims.channels), Matrix::Zero(1, dims.classes)};
  return p;
}

ModelParams ModelParams::init(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p = zeros(dims);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Matrix& w) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = scale * normal(rng);
  };
  for (auto& layer : p.embedder) fill(layer.weight);
  fill(p.classifier.weight);
  return p;
}

void ModelParams::for_each(const std::function<void(const std::string&, Matrix&, bool)>& fn) {
  for (std::size_t l = 0; l < embedder.size(); ++l) {
    fn("embed." + std::to_string(l) + ".weight", embedder[l].weight, false);
    fn("embed." + std::to_string(l) + ".bias", embedder[l].bias, false);
  }
  fn("classifier.weight", classifier.weight, true);
  fn("classifier.bias", classifier.bias, true);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Matrix&, bool)>& fn) const {
  const_cast<ModelParams*>(this)->for_each(
      [&](const std::string& name, Matrix& t, bool cls) { fn(name, t, cls); });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& t, bool) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

PatchGrid embed(const PatchGrid& raw, const ModelParams& params, EmbedTrace* trace) {
  if (raw.channels() != params.dims.input_dim)
    throw InvariantError("embed: patch dimension " + std::to_string(raw.channels()) +
                         " does not match model input dimension " +
                         std::to_string(params.dims.input_dim));
  if (trace) {
    trace->inputs.clear();
    trace->activations.clear();
  }
  Matrix x = raw.patches();
  for (std::size_t l = 0; l < params.embedder.size(); ++l) {
    const DenseLayer& layer = params.embedder[l];
    Matrix h = x * layer.weight.transpose();
    h.rowwise() += layer.bias.row(0);
    if (trace) {
      trace->inputs.push_back(x);
      trace->activations.push_back(h);
    }
    x = relu_after(params.dims, l) ? Matrix(h.cwiseMax(0.0)) : h;
  }
  return PatchGrid(std::move(x));
}

void embed_backward(const EmbedTrace& trace, const Matrix& d_out, const ModelParams& params,
                    ModelParams& grads) {
  Matrix d = d_out;
  for (std::size_t l = params.embedder.size(); l-- > 0;) {
    if (relu_after(params.dims, l))
      d = (trace.activations[l].array() > 0.0).select(d, 0.0);
    grads.embedder[l].weight.noalias() += d.transpose() * trace.inputs[l];
    grads.embedder[l].bias.row(0) += d.colwise().sum();
    if (l > 0) d = d * params.embedder[l].weight;
  }
}

Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

Vector classify_pooled(const Vector& pooled, const ModelParams& params) {
  const Vector logits = params.classifier.weight * pooled + params.classifier.bias.row(0).transpose();
  return softmax(logits);
}

Vector pool_and_classify(const PatchGrid& grid, const ModelParams& params) {
  if (grid.channels() != params.dims.channels)
    throw InvariantError("pool_and_classify: grid channel count does not match the classifier");
  return classify_pooled(grid.pooled(), params);
}

double cross_entropy(const Vector& probs, Eigen::Index label) {
  if (label < 0 || label >= probs.size())
    throw InvariantError("class index " + std::to_string(label) + " out of range");
  return -std::log(std::max(probs[label], kProbabilityFloor));
}

Vector cross_entropy_backward(const Vector& pooled, const Vector& probs, Eigen::Index label,
                              double weight, const ModelParams& params, ModelParams& grads) {
  // d(-log max(p_y, floor)) / d logits = p - onehot(y) while unclamped, zero when clamped.
  Vector d_logits = Vector::Zero(probs.size());
  if (probs[label] > kProbabilityFloor) {
    d_logits = probs * weight;
    d_logits[label] -= weight;
  }
  grads.classifier.weight.noalias() += d_logits * pooled.transpose();
  grads.classifier.bias.row(0) += d_logits.transpose();
  return params.classifier.weight.transpose() * d_logits;
}

void LrSchedule::validate() const {
  if (!(chi0 > 0.0)) throw InvariantError("lr schedule: chi0 must be > 0");
  if (mu < 0.0 || nu < 0.0) throw InvariantError("lr schedule: mu and nu must be >= 0");
  if (!(classifier_multiplier > 0.0))
    throw InvariantError("lr schedule: classifier multiplier must be > 0");
}

double lr_at(const LrSchedule& schedule, double q) {
  if (!(q >= 0.0 && q <= 1.0))
    throw std::out_of_range("lr_at: progress " + std::to_string(q) + " outside [0, 1]");
  return schedule.chi0 / std::pow(1.0 + schedule.mu * q, schedule.nu);
}

double classifier_lr_at(const LrSchedule& schedule, double q) {
  return schedule.classifier_multiplier * lr_at(schedule, q);
}

void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr, double momentum,
              double weight_decay) {
  if (grad.rows() != param.rows() || grad.cols() != param.cols())
    throw InvariantError("sgd_step: gradient shape does not match parameter");
  if (velocity.size() == 0) velocity = Matrix::Zero(param.rows(), param.cols());
  velocity = momentum * velocity + grad + weight_decay * param;
  param -= lr * velocity;
}

void SgdOptimizer::step(ModelParams& params, const ModelParams& grads, double embed_lr,
                        double classifier_lr) {
  std::vector<const Matrix*> g;
  grads.for_each([&](const std::string&, const Matrix& t, bool) { g.push_back(&t); });
  std::size_t idx = 0;
  params.for_each([&](const std::string& name, Matrix& t, bool cls) {
    if (idx >= g.size()) throw InvariantError("sgd: gradient is missing tensor " + name);
    if (velocity_.size() <= idx) velocity_.emplace_back();
    sgd_step(t, *g[idx], velocity_[idx], cls ? classifier_lr : embed_lr, momentum_, weight_decay_);
    ++idx;
  });
}

void SgdOptimizer::step_extra(Matrix& param, const Matrix& grad, double lr) {
  sgd_step(param, grad, extra_velocity_, lr, momentum_, 0.0);
}

}  // namespace hierot
