#include "mrcn/attention.hpp"

#include <algorithm>

#include "mrcn/check.hpp"

namespace mrcn {

ChannelAttention::ChannelAttention(std::size_t channels, std::size_t reduction_)
    : fc1(channels, std::max<std::size_t>(1, channels / reduction_)),
      fc2(std::max<std::size_t>(1, channels / reduction_), channels),
      reduction(reduction_) {
  MRCN_CHECK(channels >= 1 && reduction_ >= 1, "ChannelAttention: bad dimensions");
}

// Gates open at sigmoid(kGateBiasInit) ~= 0.1, so a freshly built block passes
// the normalized features nearly unchanged and learns what to readmit.
constexpr double kGateBiasInit = -2.2;

void ChannelAttention::init(Rng& rng) {
  fc1.init(rng);
  fc2.init(rng);
  fc2.bias.value.fill(kGateBiasInit);
}

Tensor ChannelAttention::weights(const Tensor& m) const {
  MRCN_CHECK(m.rank() == 4 && m.dim(1) == channels(),
             "ChannelAttention: channel count mismatch, input " + m.shape_str());
  Tensor z = global_avg_pool(m);
  Tensor h = relu(fc1.forward(z));
  return sigmoid(fc2.forward(h));
}

Tensor ChannelAttention::backward(const Tensor& m, const Tensor& grad_y) {
  MRCN_CHECK(m.same_shape(grad_y), "ChannelAttention::backward: shape mismatch");
  const std::size_t n = m.dim(0), c = m.dim(1), hw = m.dim(2) * m.dim(3);

  // Recompute the forward intermediates (cheap relative to the conv stages).
  Tensor z = global_avg_pool(m);
  Tensor pre1 = fc1.forward(z);
  Tensor h = relu(pre1);
  Tensor a = sigmoid(fc2.forward(h));

  // Product path: y = m .* a  (a broadcast over H, W).
  Tensor grad_m(m.shape());
  Tensor grad_a({n, c});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double av = a.at2(b, ch);
      const double* mp = m.data() + (b * c + ch) * hw;
      const double* gy = grad_y.data() + (b * c + ch) * hw;
      double* gm = grad_m.data() + (b * c + ch) * hw;
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        gm[i] = gy[i] * av;
        acc += gy[i] * mp[i];
      }
      grad_a.at2(b, ch) = acc;
    }
  }

  // Gate path: sigmoid -> fc2 -> relu -> fc1 -> pool.
  Tensor grad_pre2 = grad_a;
  for (std::size_t i = 0; i < grad_pre2.numel(); ++i) grad_pre2[i] *= a[i] * (1.0 - a[i]);
  Tensor grad_h = fc2.backward(h, grad_pre2);
  Tensor grad_pre1 = relu_backward(pre1, grad_h);
  Tensor grad_z = fc1.backward(z, grad_pre1);
  grad_m.add_(global_avg_pool_backward(m.shape(), grad_z));
  return grad_m;
}

void ChannelAttention::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  fc1.visit_params(prefix + ".fc1", fn);
  fc2.visit_params(prefix + ".fc2", fn);
}

std::size_t ChannelAttention::param_count() const {
  return fc1.weight.numel() + fc1.bias.numel() + fc2.weight.numel() + fc2.bias.numel();
}

Tensor attention_weights(const FeatureMap& m, const ChannelAttention& att) {
  validate_feature_map(m, "attention_weights");
  return att.weights(m.data);
}

FeatureMap distill(const FeatureMap& m, const Tensor& weights) {
  MRCN_CHECK(weights.rank() == 2 && weights.dim(0) == m.batch() && weights.dim(1) == m.channels(),
             "distill: weights must be (N, C) matching the map");
  const std::size_t n = m.batch(), c = m.channels(), hw = m.height() * m.width();
  FeatureMap out;
  out.modality = m.modality;
  out.data = Tensor(m.data.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double wv = weights.at2(b, ch);
      const double* src = m.data.data() + (b * c + ch) * hw;
      double* dst = out.data.data() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * wv;
    }
  }
  return out;
}

}  // namespace mrcn
