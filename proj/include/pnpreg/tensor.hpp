#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "pnpreg/errors.hpp"

namespace pnpreg {

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
const char* dtype_name(DType dtype);

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

// Invokes `f.template operator()<T>()` with T matching `dtype`.
template <typename F>
decltype(auto) visit_dtype(DType dtype, F&& f) {
  if (dtype == DType::F32) return f.template operator()<float>();
  return f.template operator()<double>();
}

// Dense, contiguous, row-major N-d array. Images use N,C,H,W.
//
// Tensors are plain values: copying duplicates the buffer. Gradient
// bookkeeping lives on the Tape (see autodiff.hpp), not here.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::F64);

  static Tensor zeros(Shape shape, DType dtype = DType::F64) { return Tensor(std::move(shape), dtype); }
  static Tensor full(Shape shape, double value, DType dtype = DType::F64);
  static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = DType::F64);
  static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dtype = DType::F64);
  static Tensor scalar(double value, DType dtype = DType::F64) { return full({}, value, dtype); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept;
  DType dtype() const noexcept { return dtype_; }
  bool defined() const noexcept { return defined_; }

  template <typename T>
  std::span<T> data() {
    check_type<T>();
    return std::span<T>(std::get<std::vector<T>>(buffer_));
  }
  template <typename T>
  std::span<const T> data() const {
    check_type<T>();
    return std::span<const T>(std::get<std::vector<T>>(buffer_));
  }

  // Element access by flat index, converted to double.
  double item(std::size_t flat) const;
  double item() const;  // rank-0 or single-element tensors
  void set(std::size_t flat, double value);

  std::vector<double> to_vector() const;
  Tensor to(DType dtype) const;
  Tensor reshaped(Shape shape) const;
  Tensor zeros_like() const { return Tensor(shape_, dtype_); }

  bool has_non_finite() const;

 private:
  template <typename T>
  void check_type() const {
    if (dtype_ != dtype_of<T>()) {
      throw ArgumentError(std::string("tensor dtype is ") + dtype_name(dtype_) + ", requested " +
                          dtype_name(dtype_of<T>()));
    }
  }

  Shape shape_;
  DType dtype_ = DType::F64;
  bool defined_ = false;
  std::variant<std::vector<float>, std::vector<double>> buffer_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);
void require_same_dtype(const Tensor& a, const Tensor& b, const char* what);

// Non-differentiable elementwise helpers used by solvers and operators.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a + s * b
Tensor axpy(const Tensor& a, double s, const Tensor& b);
void axpy_inplace(Tensor& a, double s, const Tensor& b);

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double squared_norm(const Tensor& a);
double max_abs(const Tensor& a);
double mean_squared_difference(const Tensor& a, const Tensor& b);
// ||a - b|| / max(||b||, tiny)
double relative_l2(const Tensor& a, const Tensor& b);

}  // namespace pnpreg
