#pragma once

#include "mrcn/layers.hpp"
#include "mrcn/tensor.hpp"

namespace mrcn {

// Per-channel affine applied after per-sample spatial standardization.
struct InstanceNormParams {
  Tensor gamma;   // (C)
  Tensor beta;    // (C)
  double epsilon = 1e-5;  // inside the sqrt

  static InstanceNormParams identity(std::size_t channels);
};

// out[n,c,:,:] = gamma[c] * (x - mean_{n,c}) / sqrt(var_{n,c} + eps) + beta[c]
// with biased spatial variance; modality tag preserved.
FeatureMap instance_normalize(const FeatureMap& input, const InstanceNormParams& params);

// M = F - F_norm. Shapes and modality tags must agree.
FeatureMap modality_residual(const FeatureMap& original, const FeatureMap& normalized);

// Trainable wrapper: one of these exists per modality. Forward matches
// instance_normalize on the current parameter values; backward accumulates
// gamma/beta grads and returns the input grad.
class InstanceNorm {
 public:
  InstanceNorm() = default;
  explicit InstanceNorm(std::size_t channels, double epsilon = 1e-5);

  std::size_t channels() const { return gamma.value.dim(0); }
  InstanceNormParams params() const;

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_y);

  void visit_params(const std::string& prefix, const ParamVisitor& fn);

  Param gamma;
  Param beta;
  double epsilon = 1e-5;
};

}  // namespace mrcn
