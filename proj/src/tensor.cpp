#include "ecp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ecp {

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw std::invalid_argument("shape must have at least one axis");
  count_ = 1;
  for (std::size_t d : dims_) {
    if (d == 0) throw std::invalid_argument("shape " + to_string() + " has a zero extent");
    if (count_ > std::numeric_limits<std::size_t>::max() / d)
      throw std::invalid_argument("shape " + to_string() + " overflows element count");
    count_ *= d;
  }
}

std::string Shape::to_string() const {
  std::string out = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims_[i]);
  }
  return out + "]";
}

Tensor Tensor::filled(const Shape& shape, double value) {
  if (shape.rank() == 0) throw std::invalid_argument("cannot fill an empty shape");
  return Tensor(shape, std::vector<double>(shape.element_count(), value));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
  if (shape.rank() == 0 || values.size() != shape.element_count())
    throw std::invalid_argument("tensor of shape " + shape.to_string() + " needs " +
                                std::to_string(shape.element_count()) + " values, got " +
                                std::to_string(values.size()));
  return Tensor(shape, std::move(values));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.rank())
    throw std::out_of_range("index rank " + std::to_string(index.size()) +
                            " does not match tensor rank " + std::to_string(shape_.rank()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    const std::size_t extent = shape_.dims()[axis++];
    if (i >= extent) throw std::out_of_range("index out of range for shape " + shape_.to_string());
    flat = flat * extent + i;
  }
  return flat;
}

Tensor Tensor::reshaped(const Shape& shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(shape);
}

Tensor Tensor::reshaped(const Shape& shape) && {
  if (shape.element_count() != data_.size())
    throw std::invalid_argument("cannot reshape " + shape_.to_string() + " to " + shape.to_string());
  return Tensor(shape, std::move(data_));
}

Tensor Tensor::slice(std::size_t index) const {
  if (shape_.rank() < 2) throw std::invalid_argument("slice needs rank >= 2");
  if (index >= shape_[0]) throw std::out_of_range("slice index out of range");
  std::vector<std::size_t> inner(shape_.dims().begin() + 1, shape_.dims().end());
  Shape sub(std::move(inner));
  const std::size_t n = sub.element_count();
  auto first = data_.begin() + static_cast<std::ptrdiff_t>(index * n);
  return Tensor(sub, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().to_string() +
                                " vs " + b.shape().to_string());
}

Tensor binary_map(const Tensor& a, const Tensor& b,
                  const std::function<double(double, double)>& op) {
  require_same_shape(a, b, "binary_map");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(a[i], b[i]);
  return Tensor::from(a.shape(), std::move(out));
}

Tensor unary_map(const Tensor& a, const std::function<double(double)>& op) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(a[i]);
  return Tensor::from(a.shape(), std::move(out));
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  return binary_map(a, b, std::plus<>{});
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  return binary_map(a, b, std::minus<>{});
}

Tensor operator*(double s, const Tensor& a) {
  return unary_map(a, [s](double v) { return s * v; });
}

void axpy_inplace(Tensor& a, double scale, const Tensor& b) {
  require_same_shape(a, b, "axpy");
  auto dst = a.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

double sum(const Tensor& t) {
  return std::accumulate(t.data().begin(), t.data().end(), 0.0);
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  require_same_shape(a, b, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace ecp
