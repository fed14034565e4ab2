#ifndef PCDAL_TENSOR_HPP
#define PCDAL_TENSOR_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcdal/error.hpp"

namespace pcdal {

/// On-disk element type. In memory every tensor is held as f64; an f32 tensor
/// is one whose values are exactly representable in binary32.
enum class DType : std::uint8_t { F32 = 0x01, F64 = 0x02 };

inline constexpr std::size_t kMaxRank = 4;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank)
    throw ShapeError("tensor rank must be in [1, 4], got " + std::to_string(shape.size()));
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_to_string(shape));
}

/// Dense row-major tensor (last axis fastest) of rank 1..4.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::F64)
      : dtype_(dtype), shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_volume(shape_))
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_to_string(shape_));
    if (dtype_ == DType::F32)
      for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
  }

  static Tensor filled(Shape shape, double value, DType dtype = DType::F64) {
    validate_shape(shape);
    const auto n = shape_volume(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), dtype);
  }

  static Tensor zeros(Shape shape, DType dtype = DType::F64) {
    return filled(std::move(shape), 0.0, dtype);
  }

  DType dtype() const noexcept { return dtype_; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  Shape strides() const {
    Shape s(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
    return s;
  }

  std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) throw ShapeError("index rank mismatch");
    std::size_t off = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= shape_[i]) throw ShapeError("index out of range");
      off = off * shape_[i] + index[i];
    }
    return off;
  }

  double at(std::initializer_list<std::size_t> index) const {
    return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
  }

  /// Returns a copy with the given dtype (values rounded to binary32 for F32).
  Tensor as(DType dtype) const { return Tensor(shape_, data_, dtype); }

  /// Same data, new shape of equal volume.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_, dtype_); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dtype_ == b.dtype_ && a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  DType dtype_ = DType::F64;
  Shape shape_;
  std::vector<double> data_;
};

/// Names which axes of a tensor carry class/channel, depth, height and width.
struct AxisRoles {
  std::optional<std::size_t> class_axis;
  std::optional<std::size_t> depth;
  std::optional<std::size_t> height;
  std::optional<std::size_t> width;

  /// Class-probability vector with no spatial axes.
  static AxisRoles vector() { return AxisRoles{0, std::nullopt, std::nullopt, std::nullopt}; }
  /// H x W single-channel image.
  static AxisRoles image() { return AxisRoles{std::nullopt, std::nullopt, 0, 1}; }
  /// C x H x W map.
  static AxisRoles map2d() { return AxisRoles{0, std::nullopt, 1, 2}; }
  /// D x H x W single-channel volume.
  static AxisRoles volume() { return AxisRoles{std::nullopt, 0, 1, 2}; }
  /// C x D x H x W map.
  static AxisRoles map3d() { return AxisRoles{0, 1, 2, 3}; }

  std::vector<std::size_t> spatial_axes() const {
    std::vector<std::size_t> out;
    for (const auto& a : {depth, height, width})
      if (a) out.push_back(*a);
    return out;
  }

  void validate(std::size_t rank) const {
    std::array<std::optional<std::size_t>, 4> all{class_axis, depth, height, width};
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (!all[i]) continue;
      if (*all[i] >= rank)
        throw LayoutError("axis role index " + std::to_string(*all[i]) + " outside rank " +
                          std::to_string(rank));
      for (std::size_t j = i + 1; j < all.size(); ++j)
        if (all[j] && *all[j] == *all[i]) throw LayoutError("axis roles must name distinct axes");
    }
  }
};

/// Numerically stable softmax along `axis`.
inline Tensor softmax(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank())
    throw InvalidArgument("softmax axis " + std::to_string(axis) + " out of range for rank " +
                          std::to_string(t.rank()));
  const auto strides = t.strides();
  const std::size_t len = t.extent(axis);
  const std::size_t stride = strides[axis];
  const std::size_t outer = t.size() / (len * stride);
  std::vector<double> out(t.size());
  const auto in = t.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t inner = 0; inner < stride; ++inner) {
      const std::size_t base = o * len * stride + inner;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) peak = std::max(peak, in[base + k * stride]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(in[base + k * stride] - peak);
        out[base + k * stride] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * stride] /= total;
    }
  }
  return Tensor(t.shape(), std::move(out), DType::F64);
}

}  // namespace pcdal

#endif  // PCDAL_TENSOR_HPP
