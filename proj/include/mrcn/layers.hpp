#pragma once

#include <functional>
#include <string>

#include "mrcn/rng.hpp"
#include "mrcn/tensor.hpp"

namespace mrcn {

// A learnable tensor and its accumulated gradient.
struct Param {
  Tensor value;
  Tensor grad;

  explicit Param(std::vector<std::size_t> shape) : value(shape), grad(shape) {}
  Param() = default;
  std::size_t numel() const { return value.numel(); }
  void zero_grad() { grad.zero(); }
};

using ParamVisitor = std::function<void(const std::string& path, Param& p)>;

// y = x W^T + b, x: (N, in), W: (out, in), b: (out).
class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in_dim, std::size_t out_dim);

  void init(Rng& rng);  // fan-in scaled gaussian weights, zero bias
  Tensor forward(const Tensor& x) const;
  // Accumulates weight/bias grads; returns grad wrt x.
  Tensor backward(const Tensor& x, const Tensor& grad_y);

  std::size_t in_dim() const { return weight.value.dim(1); }
  std::size_t out_dim() const { return weight.value.dim(0); }
  void visit_params(const std::string& prefix, const ParamVisitor& fn);

  Param weight;
  Param bias;
};

// Plain 2D convolution, square stride/pad, direct loops.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
         std::size_t pad);

  void init(Rng& rng);
  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_y);

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  std::size_t out_size(std::size_t in, std::size_t axis_pad) const;
  void visit_params(const std::string& prefix, const ParamVisitor& fn);

  Param weight;  // (out, in, k, k)
  Param bias;    // (out)
  std::size_t kernel = 0, stride = 1, pad = 0;
};

Tensor relu(const Tensor& x);
// grad wrt pre-activation, given the pre-activation values.
Tensor relu_backward(const Tensor& pre, const Tensor& grad_y);

// Per-sample standardization over the whole (C, H, W) extent: zero mean, unit
// variance per sample. Parameter-free; a single global mean/scale cannot
// absorb per-channel structure, so channelwise signals pass through.
Tensor sample_standardize(const Tensor& x, double eps = 1e-5);
Tensor sample_standardize_backward(const Tensor& x, const Tensor& grad_y, double eps = 1e-5);

// Row-wise standardization of an (N, d) matrix: zero mean, unit variance per
// row. Used as the embedding head so hinge margins see a fixed feature scale.
Tensor rows_standardize(const Tensor& x, double eps = 1e-5);
Tensor rows_standardize_backward(const Tensor& x, const Tensor& grad_y, double eps = 1e-5);

// (N, C, H, W) -> (N, C) spatial mean.
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const std::vector<std::size_t>& input_shape,
                                const Tensor& grad_y);

Tensor sigmoid(const Tensor& x);

}  // namespace mrcn
