#include "hse/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace hse {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, DType dtype)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)), dtype_(dtype) {
  if (dtype_ == DType::Float32)
    f32_.assign(static_cast<size_t>(numel_), 0.0f);
  else
    f64_.assign(static_cast<size_t>(numel_), 0.0);
}

Tensor::Tensor(const Tensor& other)
    : shape_(other.shape_),
      numel_(other.numel_),
      dtype_(other.dtype_),
      f32_(other.f32_),
      f64_(other.f64_),
      requires_grad_(other.requires_grad_) {
  if (other.grad_) grad_ = std::make_unique<Tensor>(*other.grad_);
}

Tensor& Tensor::operator=(const Tensor& other) {
  if (this == &other) return *this;
  shape_ = other.shape_;
  numel_ = other.numel_;
  dtype_ = other.dtype_;
  f32_ = other.f32_;
  f64_ = other.f64_;
  requires_grad_ = other.requires_grad_;
  grad_ = other.grad_ ? std::make_unique<Tensor>(*other.grad_) : nullptr;
  return *this;
}

Tensor Tensor::zeros(std::vector<int> shape, DType dtype) {
  return Tensor(std::move(shape), dtype);
}

Tensor Tensor::full(std::vector<int> shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  t.fill(value);
  return t;
}

Tensor Tensor::from_values(std::vector<int> shape, const std::vector<double>& values,
                           DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (static_cast<int64_t>(values.size()) != t.numel())
    throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " +
                     t.shape_str());
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, values[static_cast<size_t>(i)]);
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) {
  return from_values({1}, {value}, dtype);
}

double Tensor::get(int64_t i) const {
  return dtype_ == DType::Float32 ? static_cast<double>(f32_[static_cast<size_t>(i)])
                                  : f64_[static_cast<size_t>(i)];
}

void Tensor::set(int64_t i, double v) {
  if (dtype_ == DType::Float32)
    f32_[static_cast<size_t>(i)] = static_cast<float>(v);
  else
    f64_[static_cast<size_t>(i)] = v;
}

double Tensor::at4(int n, int c, int h, int w) const {
  if (rank() != 4) throw ShapeError("at4 on tensor of shape " + shape_str());
  int64_t i = ((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  return get(i);
}

double Tensor::at2(int r, int c) const {
  if (rank() != 2) throw ShapeError("at2 on tensor of shape " + shape_str());
  return get(static_cast<int64_t>(r) * shape_[1] + c);
}

Tensor Tensor::astype(DType dt) const {
  if (dt == dtype_) return *this;
  Tensor out(shape_, dt);
  for (int64_t i = 0; i < numel_; ++i) out.set(i, get(i));
  return out;
}

void Tensor::fill(double v) {
  if (dtype_ == DType::Float32)
    f32_.assign(f32_.size(), static_cast<float>(v));
  else
    f64_.assign(f64_.size(), v);
}

bool Tensor::all_finite() const {
  if (dtype_ == DType::Float32) {
    for (float v : f32_)
      if (!std::isfinite(v)) return false;
  } else {
    for (double v : f64_)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

bool Tensor::bits_equal(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  if (dtype_ == DType::Float32)
    return f32_.size() == other.f32_.size() &&
           std::memcmp(f32_.data(), other.f32_.data(), f32_.size() * sizeof(float)) == 0;
  return f64_.size() == other.f64_.size() &&
         std::memcmp(f64_.data(), other.f64_.data(), f64_.size() * sizeof(double)) == 0;
}

Tensor& Tensor::grad() {
  if (!grad_) grad_ = std::make_unique<Tensor>(shape_, dtype_);
  return *grad_;
}

const Tensor& Tensor::grad() const {
  if (!grad_) throw ShapeError("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) grad_->fill(0.0);
}

}  // namespace hse
