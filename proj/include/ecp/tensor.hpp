#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ecp {

/// Ordered list of positive extents. Row-major throughout the library.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  /// Product of extents; 0 only for the default-constructed empty shape.
  std::size_t element_count() const noexcept { return count_; }

  std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::size_t count_ = 0;
};

/// Dense row-major tensor of doubles. No broadcasting: every shape mismatch
/// is an std::invalid_argument.
class Tensor {
 public:
  Tensor() = default;

  static Tensor filled(const Shape& shape, double value);
  static Tensor zeros(const Shape& shape) { return filled(shape, 0.0); }
  static Tensor from(const Shape& shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  /// Flat row-major offset of a multi-index; bounds-checked.
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  template <typename... I>
  double& at(I... index) {
    return data_[offset({static_cast<std::size_t>(index)...})];
  }
  template <typename... I>
  double at(I... index) const {
    return data_[offset({static_cast<std::size_t>(index)...})];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(const Shape& shape) const&;
  Tensor reshaped(const Shape& shape) &&;

  /// Copy of the sub-tensor at `index` along axis 0.
  Tensor slice(std::size_t index) const;

  void fill(double value);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  std::vector<double> data_;
};

Tensor binary_map(const Tensor& a, const Tensor& b,
                  const std::function<double(double, double)>& op);
Tensor unary_map(const Tensor& a, const std::function<double(double)>& op);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

/// a += scale * b, shapes must match.
void axpy_inplace(Tensor& a, double scale, const Tensor& b);

double sum(const Tensor& t);
bool all_finite(const Tensor& t);

/// Largest |a-b| / max(|a|, |b|, floor) over all elements.
double max_relative_error(const Tensor& a, const Tensor& b,
                          double floor = 1e-12);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace ecp
