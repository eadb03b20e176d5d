#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hse/errors.hpp"

namespace hse {

enum class DType : uint8_t { Float32 = 0, Float64 = 1 };

inline const char* dtype_name(DType dt) {
  return dt == DType::Float32 ? "float32" : "float64";
}
inline size_t dtype_size(DType dt) {
  return dt == DType::Float32 ? sizeof(float) : sizeof(double);
}

// Dense row-major N-d array of real values. Storage is float32 or float64,
// selected at construction. A tensor optionally carries a gradient buffer of
// identical shape and dtype; the autodiff graph accumulates into it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, DType dtype);

  Tensor(const Tensor& other);
  Tensor& operator=(const Tensor& other);
  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;

  static Tensor zeros(std::vector<int> shape, DType dtype);
  static Tensor full(std::vector<int> shape, double value, DType dtype);
  static Tensor from_values(std::vector<int> shape, const std::vector<double>& values,
                            DType dtype = DType::Float64);
  static Tensor scalar(double value, DType dtype = DType::Float64);

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return numel_; }
  DType dtype() const { return dtype_; }
  bool defined() const { return numel_ > 0 || !shape_.empty(); }

  template <class T>
  T* data();
  template <class T>
  const T* data() const;

  // Generic element access; dispatches on dtype. Fine outside hot loops.
  double get(int64_t i) const;
  void set(int64_t i, double v);

  double at4(int n, int c, int h, int w) const;  // rank-4 convenience
  double at2(int r, int c) const;                // rank-2 convenience

  Tensor astype(DType dt) const;
  void fill(double v);
  bool all_finite() const;
  std::string shape_str() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  // Bitwise equality of the value buffers (shape, dtype, and payload).
  bool bits_equal(const Tensor& other) const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool rg) { requires_grad_ = rg; }

  bool has_grad() const { return grad_ != nullptr; }
  Tensor& grad();              // allocates a zero buffer on first use
  const Tensor& grad() const;  // throws if absent
  void zero_grad();
  void drop_grad() { grad_.reset(); }

 private:
  std::vector<int> shape_;
  int64_t numel_ = 0;
  DType dtype_ = DType::Float64;
  std::vector<float> f32_;
  std::vector<double> f64_;
  bool requires_grad_ = false;
  std::unique_ptr<Tensor> grad_;
};

template <>
inline float* Tensor::data<float>() {
  if (dtype_ != DType::Float32) throw ShapeError("tensor is not float32");
  return f32_.data();
}
template <>
inline double* Tensor::data<double>() {
  if (dtype_ != DType::Float64) throw ShapeError("tensor is not float64");
  return f64_.data();
}
template <>
inline const float* Tensor::data<float>() const {
  if (dtype_ != DType::Float32) throw ShapeError("tensor is not float32");
  return f32_.data();
}
template <>
inline const double* Tensor::data<double>() const {
  if (dtype_ != DType::Float64) throw ShapeError("tensor is not float64");
  return f64_.data();
}

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

}  // namespace hse
