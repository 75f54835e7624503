#include "mrcn/layers.hpp"

#include <cmath>

#include "mrcn/check.hpp"

namespace mrcn {

Dense::Dense(std::size_t in_dim, std::size_t out_dim)
    : weight({out_dim, in_dim}), bias({out_dim}) {}

void Dense::init(Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_dim()));
  for (std::size_t i = 0; i < weight.value.numel(); ++i) weight.value[i] = rng.gaussian(0.0, stddev);
  bias.value.zero();
}

Tensor Dense::forward(const Tensor& x) const {
  MRCN_CHECK(x.rank() == 2 && x.dim(1) == in_dim(),
             "Dense::forward: input shape " + x.shape_str() + " does not match in_dim");
  const std::size_t n = x.dim(0), in = in_dim(), out = out_dim();
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * in;
    double* yi = y.data() + i * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* w = weight.value.data() + o * in;
      double acc = bias.value[o];
      for (std::size_t k = 0; k < in; ++k) acc += w[k] * xi[k];
      yi[o] = acc;
    }
  }
  return y;
}

Tensor Dense::backward(const Tensor& x, const Tensor& grad_y) {
  const std::size_t n = x.dim(0), in = in_dim(), out = out_dim();
  MRCN_CHECK(grad_y.rank() == 2 && grad_y.dim(0) == n && grad_y.dim(1) == out,
             "Dense::backward: grad shape mismatch");
  Tensor grad_x({n, in});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * in;
    const double* gy = grad_y.data() + i * out;
    double* gx = grad_x.data() + i * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gy[o];
      bias.grad[o] += g;
      double* gw = weight.grad.data() + o * in;
      const double* w = weight.value.data() + o * in;
      for (std::size_t k = 0; k < in; ++k) {
        gw[k] += g * xi[k];
        gx[k] += g * w[k];
      }
    }
  }
  return grad_x;
}

void Dense::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
}

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel_, std::size_t stride_,
               std::size_t pad_)
    : weight({out_ch, in_ch, kernel_, kernel_}),
      bias({out_ch}),
      kernel(kernel_),
      stride(stride_),
      pad(pad_) {
  MRCN_CHECK(kernel >= 1 && stride >= 1, "Conv2d: kernel and stride must be >= 1");
}

void Conv2d::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_channels() * kernel * kernel);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (std::size_t i = 0; i < weight.value.numel(); ++i) weight.value[i] = rng.gaussian(0.0, stddev);
  bias.value.zero();
}

std::size_t Conv2d::out_size(std::size_t in, std::size_t /*axis_pad*/) const {
  MRCN_CHECK(in + 2 * pad >= kernel, "Conv2d: input smaller than kernel");
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor Conv2d::forward(const Tensor& x) const {
  MRCN_CHECK(x.rank() == 4 && x.dim(1) == in_channels(),
             "Conv2d::forward: input " + x.shape_str() + " does not match weight layout");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = out_channels();
  const std::size_t ho = out_size(h, pad), wo = out_size(w, pad);
  Tensor y({n, co, ho, wo});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias.value[oc];
          for (std::size_t ic = 0; ic < ci; ++ic) {
            for (std::size_t ky = 0; ky < kernel; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kernel; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += x.at4(b, ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       weight.value.at4(oc, ic, ky, kx);
              }
            }
          }
          y.at4(b, oc, oy, ox) = acc;
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_y) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = out_channels();
  const std::size_t ho = grad_y.dim(2), wo = grad_y.dim(3);
  MRCN_CHECK(grad_y.dim(0) == n && grad_y.dim(1) == co, "Conv2d::backward: grad shape mismatch");
  Tensor grad_x({n, ci, h, w});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double g = grad_y.at4(b, oc, oy, ox);
          if (g == 0.0) continue;
          bias.grad[oc] += g;
          for (std::size_t ic = 0; ic < ci; ++ic) {
            for (std::size_t ky = 0; ky < kernel; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kernel; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t uy = static_cast<std::size_t>(iy);
                const std::size_t ux = static_cast<std::size_t>(ix);
                weight.grad.at4(oc, ic, ky, kx) += g * x.at4(b, ic, uy, ux);
                grad_x.at4(b, ic, uy, ux) += g * weight.value.at4(oc, ic, ky, kx);
              }
            }
          }
        }
      }
    }
  }
  return grad_x;
}

void Conv2d::visit_params(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    if (y[i] < 0.0) y[i] = 0.0;
  }
  return y;
}

Tensor relu_backward(const Tensor& pre, const Tensor& grad_y) {
  MRCN_CHECK(pre.same_shape(grad_y), "relu_backward: shape mismatch");
  Tensor gx = grad_y;
  for (std::size_t i = 0; i < gx.numel(); ++i) {
    if (pre[i] <= 0.0) gx[i] = 0.0;
  }
  return gx;
}

namespace {

void standardize_group(const double* src, double* dst, std::size_t m, double eps) {
  double mean = 0.0;
  for (std::size_t i = 0; i < m; ++i) mean += src[i];
  mean /= static_cast<double>(m);
  double var = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = src[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(m);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] - mean) * inv;
}

void standardize_group_backward(const double* src, const double* gy, double* dst, std::size_t m,
                                double eps) {
  double mean = 0.0;
  for (std::size_t i = 0; i < m; ++i) mean += src[i];
  mean /= static_cast<double>(m);
  double var = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = src[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(m);
  const double inv = 1.0 / std::sqrt(var + eps);
  double sum_gy = 0.0, sum_gy_xhat = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double xhat = (src[i] - mean) * inv;
    sum_gy += gy[i];
    sum_gy_xhat += gy[i] * xhat;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double xhat = (src[i] - mean) * inv;
    dst[i] = inv * (gy[i] - sum_gy * inv_m - xhat * sum_gy_xhat * inv_m);
  }
}

}  // namespace

Tensor sample_standardize(const Tensor& x, double eps) {
  MRCN_CHECK(x.rank() == 4, "sample_standardize: expected rank-4 input");
  const std::size_t n = x.dim(0), chw = x.numel() / x.dim(0);
  Tensor y(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    standardize_group(x.data() + b * chw, y.data() + b * chw, chw, eps);
  return y;
}

Tensor sample_standardize_backward(const Tensor& x, const Tensor& grad_y, double eps) {
  MRCN_CHECK(x.same_shape(grad_y), "sample_standardize_backward: shape mismatch");
  const std::size_t n = x.dim(0), chw = x.numel() / x.dim(0);
  Tensor gx(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    standardize_group_backward(x.data() + b * chw, grad_y.data() + b * chw, gx.data() + b * chw,
                               chw, eps);
  return gx;
}

Tensor rows_standardize(const Tensor& x, double eps) {
  MRCN_CHECK(x.rank() == 2, "rows_standardize: expected (N, d) input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    standardize_group(x.data() + i * d, y.data() + i * d, d, eps);
  return y;
}

Tensor rows_standardize_backward(const Tensor& x, const Tensor& grad_y, double eps) {
  MRCN_CHECK(x.same_shape(grad_y), "rows_standardize_backward: shape mismatch");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor gx(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    standardize_group_backward(x.data() + i * d, grad_y.data() + i * d, gx.data() + i * d, d, eps);
  return gx;
}

Tensor global_avg_pool(const Tensor& x) {
  MRCN_CHECK(x.rank() == 4, "global_avg_pool: expected rank-4 input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + (b * c + ch) * hw;
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      y.at2(b, ch) = acc * inv;
    }
  }
  return y;
}

Tensor global_avg_pool_backward(const std::vector<std::size_t>& input_shape, const Tensor& grad_y) {
  MRCN_CHECK(input_shape.size() == 4, "global_avg_pool_backward: expected rank-4 shape");
  Tensor gx(input_shape);
  const std::size_t n = input_shape[0], c = input_shape[1], hw = input_shape[2] * input_shape[3];
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g = grad_y.at2(b, ch) * inv;
      double* p = gx.data() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] = g;
    }
  }
  return gx;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
  return y;
}

}  // namespace mrcn
