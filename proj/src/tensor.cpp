#include "pnpreg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace pnpreg {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::F32 ? "fp32" : "fp64"; }

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype), defined_(true) {
  const auto n = shape_numel(shape_);
  if (dtype_ == DType::F32) {
    buffer_ = std::vector<float>(n, 0.0f);
  } else {
    buffer_ = std::vector<double>(n, 0.0);
  }
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  visit_dtype(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (values.size() != t.numel()) {
    throw DimensionError("from_values: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(t.shape()));
  }
  visit_dtype(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::numel() const noexcept { return defined_ ? shape_numel(shape_) : 0; }

double Tensor::item(std::size_t flat) const {
  return visit_dtype(dtype_, [&]<typename T>() { return static_cast<double>(data<T>()[flat]); });
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return item(0);
}

void Tensor::set(std::size_t flat, double value) {
  visit_dtype(dtype_, [&]<typename T>() { data<T>()[flat] = static_cast<T>(value); });
}

std::vector<double> Tensor::to_vector() const {
  return visit_dtype(dtype_, [&]<typename T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_) return *this;
  Tensor out(shape_, dtype);
  visit_dtype(dtype_, [&]<typename S>() {
    visit_dtype(dtype, [&]<typename D>() {
      auto src = data<S>();
      auto dst = out.data<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::has_non_finite() const {
  return visit_dtype(dtype_, [&]<typename T>() {
    for (T v : data<T>()) {
      if (!std::isfinite(v)) return true;
    }
    return false;
  });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dtype() != b.dtype()) {
    throw ArgumentError(std::string(what) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                        dtype_name(b.dtype()));
  }
}

namespace {

template <typename Op>
Tensor binary(const Tensor& a, const Tensor& b, const char* what, Op op) {
  require_same_shape(a, b, what);
  require_same_dtype(a, b, what);
  Tensor out(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = op(x[i], y[i]);
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](auto x, auto y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](auto x, auto y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](auto x, auto y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto o = out.data<T>();
    const T c = static_cast<T>(s);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * x[i];
  });
  return out;
}

Tensor axpy(const Tensor& a, double s, const Tensor& b) {
  Tensor out = a;
  axpy_inplace(out, s, b);
  return out;
}

void axpy_inplace(Tensor& a, double s, const Tensor& b) {
  require_same_shape(a, b, "axpy");
  require_same_dtype(a, b, "axpy");
  visit_dtype(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    const T c = static_cast<T>(s);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += c * y[i];
  });
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  require_same_dtype(a, b, "dot");
  return visit_dtype(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    return acc;
  });
}

double sum(const Tensor& a) {
  return visit_dtype(a.dtype(), [&]<typename T>() {
    double acc = 0.0;
    for (T v : a.data<T>()) acc += static_cast<double>(v);
    return acc;
  });
}

double squared_norm(const Tensor& a) { return dot(a, a); }

double max_abs(const Tensor& a) {
  return visit_dtype(a.dtype(), [&]<typename T>() {
    double m = 0.0;
    for (T v : a.data<T>()) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  });
}

double mean_squared_difference(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_squared_difference");
  require_same_dtype(a, b, "mean_squared_difference");
  return visit_dtype(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
      acc += d * d;
    }
    return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
  });
}

double relative_l2(const Tensor& a, const Tensor& b) {
  const double num = std::sqrt(mean_squared_difference(a, b) * static_cast<double>(a.numel()));
  const double den = std::sqrt(squared_norm(b));
  return num / std::max(den, std::numeric_limits<double>::min());
}

}  // namespace pnpreg
