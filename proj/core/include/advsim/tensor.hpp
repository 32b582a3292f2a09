#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace advsim {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles. Images are rank-3 tensors laid out as
// [height, width, channel] with continuous pixel values in [0, 255].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 accessors.
  double& at(std::size_t h, std::size_t w, std::size_t c) {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }
  double at(std::size_t h, std::size_t w, std::size_t c) const {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }

  // Same data under a new shape of equal size.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;
  void fill(double value);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

using Image = Tensor;

// Throws DimensionError unless `image` is [height, width, 3].
void require_image(const Tensor& image, std::size_t height, std::size_t width, const char* what);
Image make_image(std::size_t height, std::size_t width, double fill = 0.0);

double max_abs_diff(const Tensor& a, const Tensor& b);
double l2_norm(std::span<const double> v);
double l1_norm(std::span<const double> v);
double linf_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

}  // namespace advsim
