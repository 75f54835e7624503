#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "mrcn/check.hpp"

namespace mrcn {

enum class Modality { kVis, kNir };

const char* to_string(Modality m);
Modality modality_from_string(const std::string& s);

// Dense row-major tensor of doubles, rank 1..4. Small and desk-scale by
// design; all heavy loops hoist dims into locals and index flat storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  static Tensor constant(std::vector<std::size_t> shape, double value);

  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // (n, c, h, w) for rank-4 tensors.
  double& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  // (i, j) for rank-2 tensors.
  double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  // (c, h, w) for rank-3 tensors.
  double& at3(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double at3(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  void fill(double value);
  void zero() { fill(0.0); }
  bool all_finite() const;

  // this += other (shapes must match).
  void add_(const Tensor& other);
  // this += s * other.
  void axpy_(double s, const Tensor& other);
  void scale_(double s);

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);

// Rank-4 (N, C, H, W) feature map tagged with the spectrum it came from.
struct FeatureMap {
  Tensor data;
  Modality modality = Modality::kVis;

  std::size_t batch() const { return data.dim(0); }
  std::size_t channels() const { return data.dim(1); }
  std::size_t height() const { return data.dim(2); }
  std::size_t width() const { return data.dim(3); }
};

// Throws ContractViolation unless `f` is rank-4 with positive dims and finite
// entries.
void validate_feature_map(const FeatureMap& f, const char* where);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace mrcn
