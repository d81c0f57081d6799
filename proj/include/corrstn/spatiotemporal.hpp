#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "corrstn/error.hpp"

namespace corrstn {

/// Dense T x N x C array of sensor readings, timestamp-major.
///
/// Element (t, n, c) lives at ((t * N) + n) * C + c. All entries must be
/// finite; the constructor rejects NaN and infinities.
class SpatioTemporalTensor {
 public:
  SpatioTemporalTensor() = default;

  SpatioTemporalTensor(std::size_t timestamps, std::size_t sensors, std::size_t attributes,
                       int interval_minutes = 5)
      : t_(timestamps), n_(sensors), c_(attributes), interval_(interval_minutes),
        data_(timestamps * sensors * attributes, 0.0) {
    validate_dims();
  }

  SpatioTemporalTensor(std::size_t timestamps, std::size_t sensors, std::size_t attributes,
                       std::vector<double> values, int interval_minutes = 5)
      : t_(timestamps), n_(sensors), c_(attributes), interval_(interval_minutes),
        data_(std::move(values)) {
    validate_dims();
    if (data_.size() != t_ * n_ * c_) {
      throw DimensionError("tensor value count " + std::to_string(data_.size()) +
                           " does not match T*N*C = " + std::to_string(t_ * n_ * c_));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw DataError("tensor contains a non-finite value");
    }
  }

  std::size_t timestamps() const { return t_; }
  std::size_t sensors() const { return n_; }
  std::size_t attributes() const { return c_; }
  int interval_minutes() const { return interval_; }

  double& operator()(std::size_t t, std::size_t n, std::size_t c) { return data_[(t * n_ + n) * c_ + c]; }
  double operator()(std::size_t t, std::size_t n, std::size_t c) const {
    return data_[(t * n_ + n) * c_ + c];
  }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

  /// Readings of one sensor/attribute over [begin, end).
  std::vector<double> series(std::size_t sensor, std::size_t attribute, std::size_t begin,
                             std::size_t end) const {
    if (end > t_ || begin > end) throw RangeError("series range outside [0, T)");
    std::vector<double> out;
    out.reserve(end - begin);
    for (std::size_t t = begin; t < end; ++t) out.push_back((*this)(t, sensor, attribute));
    return out;
  }

  std::vector<double> series(std::size_t sensor, std::size_t attribute) const {
    return series(sensor, attribute, 0, t_);
  }

  /// Copy of timestamps [begin, end).
  SpatioTemporalTensor slice(std::size_t begin, std::size_t end) const {
    if (end > t_ || begin >= end) throw RangeError("slice range outside [0, T)");
    const std::size_t row = n_ * c_;
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                            data_.begin() + static_cast<std::ptrdiff_t>(end * row));
    return SpatioTemporalTensor(end - begin, n_, c_, std::move(out), interval_);
  }

 private:
  void validate_dims() const {
    if (t_ == 0 || n_ == 0 || c_ == 0) throw DimensionError("tensor extents must be positive");
    if (interval_ <= 0) throw DimensionError("interval_minutes must be positive");
  }

  std::size_t t_ = 0;
  std::size_t n_ = 0;
  std::size_t c_ = 0;
  int interval_ = 5;
  std::vector<double> data_;
};

}  // namespace corrstn
