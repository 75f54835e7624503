#include "mrcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mrcn {

const char* to_string(Modality m) { return m == Modality::kVis ? "vis" : "nir"; }

Modality modality_from_string(const std::string& s) {
  if (s == "vis" || s == "VIS") return Modality::kVis;
  if (s == "nir" || s == "NIR") return Modality::kNir;
  throw ContractViolation("unknown modality tag: " + s);
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  MRCN_CHECK(!shape_.empty() && shape_.size() <= 4, "tensor rank must be 1..4");
  std::size_t n = 1;
  for (std::size_t d : shape_) n *= d;
  data_.assign(n, 0.0);
}

Tensor Tensor::constant(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::add_(const Tensor& other) {
  MRCN_CHECK(same_shape(other), "add_: shape mismatch " + shape_str() + " vs " + other.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::axpy_(double s, const Tensor& other) {
  MRCN_CHECK(same_shape(other), "axpy_: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
}

void Tensor::scale_(double s) {
  for (double& v : data_) v *= s;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << "]";
  return os.str();
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out.add_(b);
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out.axpy_(-1.0, b);
  return out;
}

void validate_feature_map(const FeatureMap& f, const char* where) {
  MRCN_CHECK(f.data.rank() == 4, std::string(where) + ": feature map must be rank-4 (N,C,H,W)");
  for (std::size_t i = 0; i < 4; ++i)
    MRCN_CHECK(f.data.dim(i) >= 1, std::string(where) + ": feature map dims must be >= 1");
  MRCN_CHECK(f.data.all_finite(), std::string(where) + ": feature map has non-finite entries");
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  MRCN_CHECK(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace mrcn
