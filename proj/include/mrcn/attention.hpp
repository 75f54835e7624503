#pragma once

#include "mrcn/layers.hpp"
#include "mrcn/tensor.hpp"

namespace mrcn {

// SE-style channel gate: global average pool -> fc (C -> C/r) -> ReLU ->
// fc (C/r -> C) -> sigmoid. Hidden width is max(1, C/r) so small-channel
// configs stay valid.
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(std::size_t channels, std::size_t reduction = 16);

  void init(Rng& rng);
  std::size_t channels() const { return fc2.out_dim(); }
  std::size_t hidden_dim() const { return fc1.out_dim(); }

  // (N, C, H, W) -> per-sample per-channel weights in (0, 1), shape (N, C).
  Tensor weights(const Tensor& m) const;

  // Combined backward through y = m * weights(m): accumulates fc grads and
  // returns grad wrt m (both the product path and the gate path).
  Tensor backward(const Tensor& m, const Tensor& grad_y);

  void visit_params(const std::string& prefix, const ParamVisitor& fn);
  std::size_t param_count() const;

  Dense fc1;
  Dense fc2;
  std::size_t reduction = 16;
};

// Spec-level op: attention weights for a residual map.
Tensor attention_weights(const FeatureMap& m, const ChannelAttention& att);

// out[n,c,h,w] = m[n,c,h,w] * weights[n,c].
FeatureMap distill(const FeatureMap& m, const Tensor& weights);

}  // namespace mrcn
