#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hierot/measures.hpp"
#include "hierot/patch_grid.hpp"

namespace hierot {

struct ModelDims {
  Eigen::Index input_dim = 4;
  Eigen::Index hidden_dim = 16;
  Eigen::Index channels = 8;
  Eigen::Index classes = 5;
  int depth = 2;
  // ReLU after the last embedder layer, as after a final conv block.
  bool final_relu = true;

  void validate() const;
};

/// Affine layer y = W x + b with W stored out x in and b as a 1 x out row.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
};

/// Parameters of the patch embedder g and the classifier f. The same type
/// doubles as the gradient container (see zeros_like).
struct ModelParams {
  ModelDims dims;
  std::vector<DenseLayer> embedder;
  DenseLayer classifier;

  /// Seeded Gaussian init scaled by 1/sqrt(fan_in); biases start at zero.
  static ModelParams init(const ModelDims& dims, std::uint64_t seed);
  static ModelParams zeros(const ModelDims& dims);
  ModelParams zeros_like() const { return zeros(dims); }

  /// Visits every tensor as (name, tensor, is_classifier) in a fixed order.
  void for_each(const std::function<void(const std::string&, Matrix&, bool)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix&, bool)>& fn) const;

  std::size_t parameter_count() const;
};

/// Intermediate activations kept by embed for the backward pass.
struct EmbedTrace {
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> activations;  // pre-ReLU output of each layer
};

/// Patch-wise embedder: the same affine+ReLU stack applied to every patch.
PatchGrid embed(const PatchGrid& raw, const ModelParams& params, EmbedTrace* trace = nullptr);

/// Accumulates d loss / d params for the embedder given d loss / d output grid.
void embed_backward(const EmbedTrace& trace, const Matrix& d_out, const ModelParams& params,
                    ModelParams& grads);

/// Softmax over class logits of the pooled grid.
Vector pool_and_classify(const PatchGrid& grid, const ModelParams& params);
Vector classify_pooled(const Vector& pooled, const ModelParams& params);
Vector softmax(const Vector& logits);

inline constexpr double kProbabilityFloor = 1e-12;

/// -log p[label] with p clamped to kProbabilityFloor.
double cross_entropy(const Vector& probs, Eigen::Index label);

/// Backprop of cross_entropy(classify_pooled(pooled), label) scaled by weight:
/// accumulates classifier gradients and returns d loss / d pooled.
Vector cross_entropy_backward(const Vector& pooled, const Vector& probs, Eigen::Index label,
                              double weight, const ModelParams& params, ModelParams& grads);

struct LrSchedule {
  double chi0 = 0.01;
  double mu = 10.0;
  double nu = 0.75;
  double classifier_multiplier = 10.0;

  void validate() const;
};

/// chi0 / (1 + mu q)^nu for progress q in [0, 1].
double lr_at(const LrSchedule& schedule, double q);
double classifier_lr_at(const LrSchedule& schedule, double q);

/// One momentum-SGD update of a single tensor:
///   v <- momentum v + (g + weight_decay w);  w <- w - lr v.
void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr, double momentum,
              double weight_decay);

/// Momentum SGD over all ModelParams tensors with separate embedder and
/// classifier learning rates. Velocity buffers are created on first use.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ModelParams& params, const ModelParams& grads, double embed_lr, double classifier_lr);
  /// Update for a free-standing tensor (the projection directions), no weight decay.
  void step_extra(Matrix& param, const Matrix& grad, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Matrix> velocity_;
  Matrix extra_velocity_;
};

}  // namespace hierot
