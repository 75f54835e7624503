#include "mrcn/modality_norm.hpp"

#include <cmath>

#include "mrcn/check.hpp"

namespace mrcn {

InstanceNormParams InstanceNormParams::identity(std::size_t channels) {
  InstanceNormParams p;
  p.gamma = Tensor::constant({channels}, 1.0);
  p.beta = Tensor({channels});
  return p;
}

namespace {

void check_in_inputs(const FeatureMap& input, const InstanceNormParams& params) {
  validate_feature_map(input, "instance_normalize");
  MRCN_CHECK(params.epsilon > 0.0, "instance_normalize: epsilon must be > 0");
  MRCN_CHECK(params.gamma.rank() == 1 && params.beta.rank() == 1,
             "instance_normalize: gamma/beta must be rank-1");
  MRCN_CHECK(params.gamma.dim(0) == input.channels() && params.beta.dim(0) == input.channels(),
             "instance_normalize: parameter channel count does not match input");
}

}  // namespace

FeatureMap instance_normalize(const FeatureMap& input, const InstanceNormParams& params) {
  check_in_inputs(input, params);
  const std::size_t n = input.batch(), c = input.channels();
  const std::size_t hw = input.height() * input.width();
  const double inv_m = 1.0 / static_cast<double>(hw);

  FeatureMap out;
  out.modality = input.modality;
  out.data = Tensor(input.data.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* x = input.data.data() + (b * c + ch) * hw;
      double* y = out.data.data() + (b * c + ch) * hw;
      double mean = 0.0;
      for (std::size_t i = 0; i < hw; ++i) mean += x[i];
      mean *= inv_m;
      double var = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = x[i] - mean;
        var += d * d;
      }
      var *= inv_m;
      const double inv_std = 1.0 / std::sqrt(var + params.epsilon);
      const double g = params.gamma[ch], bta = params.beta[ch];
      for (std::size_t i = 0; i < hw; ++i) y[i] = g * (x[i] - mean) * inv_std + bta;
    }
  }
  return out;
}

FeatureMap modality_residual(const FeatureMap& original, const FeatureMap& normalized) {
  MRCN_CHECK(original.data.same_shape(normalized.data),
             "modality_residual: shape mismatch " + original.data.shape_str() + " vs " +
                 normalized.data.shape_str());
  MRCN_CHECK(original.modality == normalized.modality,
             "modality_residual: modality tags differ");
  FeatureMap m;
  m.modality = original.modality;
  m.data = original.data - normalized.data;
  return m;
}

InstanceNorm::InstanceNorm(std::size_t channels, double eps)
    : gamma({channels}), beta({channels}), epsilon(eps) {
  gamma.value.fill(1.0);
}

InstanceNormParams InstanceNorm::params() const {
  InstanceNormParams p;
  p.gamma = gamma.value;
  p.beta = beta.value;
  p.epsilon = epsilon;
  return p;
}

Tensor InstanceNorm::forward(const Tensor& x) const {
  FeatureMap f{x, Modality::kVis};
  return instance_normalize(f, params()).data;
}

Tensor InstanceNorm::backward(const Tensor& x, const Tensor& grad_y) {
  MRCN_CHECK(x.same_shape(grad_y), "InstanceNorm::backward: shape mismatch");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const double inv_m = 1.0 / static_cast<double>(hw);
  Tensor grad_x(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* xp = x.data() + (b * c + ch) * hw;
      const double* gy = grad_y.data() + (b * c + ch) * hw;
      double* gx = grad_x.data() + (b * c + ch) * hw;
      double mean = 0.0;
      for (std::size_t i = 0; i < hw; ++i) mean += xp[i];
      mean *= inv_m;
      double var = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = xp[i] - mean;
        var += d * d;
      }
      var *= inv_m;
      const double inv_std = 1.0 / std::sqrt(var + epsilon);
      const double g = gamma.value[ch];

      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xhat = (xp[i] - mean) * inv_std;
        sum_gy += gy[i];
        sum_gy_xhat += gy[i] * xhat;
        gamma.grad[ch] += gy[i] * xhat;
        beta.grad[ch] += gy[i];
      }
      const double mean_gy = sum_gy * inv_m;
      const double mean_gy_xhat = sum_gy_xhat * inv_m;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xhat = (xp[i] - mean) * inv_std;
        gx[i] = g * inv_std * (gy[i] - mean_gy - xhat * mean_gy_xhat);
      }
    }
  }
  return grad_x;
}

void InstanceNorm::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gamma", gamma);
  fn(prefix + ".beta", beta);
}

}  // namespace mrcn
