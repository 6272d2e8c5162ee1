#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cflsim/errors.hpp"

namespace cflsim {

struct ParamSegment {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  bool operator==(const ParamSegment& o) const {
    return name == o.name && rows == o.rows && cols == o.cols;
  }
};

class ParamLayout {
 public:
  explicit ParamLayout(std::vector<ParamSegment> segments) : segments_(std::move(segments)) {
    offsets_.reserve(segments_.size());
    for (const auto& seg : segments_) {
      offsets_.push_back(total_);
      total_ += seg.size();
    }
  }

  const std::vector<ParamSegment>& segments() const { return segments_; }
  std::size_t total_size() const { return total_; }
  std::size_t offset(std::size_t seg_index) const { return offsets_.at(seg_index); }

  bool operator==(const ParamLayout& o) const { return segments_ == o.segments_; }

 private:
  std::vector<ParamSegment> segments_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

inline LayoutPtr make_layout(std::vector<ParamSegment> segments) {
  return std::make_shared<const ParamLayout>(std::move(segments));
}

/// Flat double vector with named segment metadata; the common currency for
/// model weights, gradients and per-parameter importance scores.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(LayoutPtr layout, double fill = 0.0)
      : layout_(std::move(layout)), values_(layout_ ? layout_->total_size() : 0, fill) {}

  ParamVector(LayoutPtr layout, std::vector<double> values)
      : layout_(std::move(layout)), values_(std::move(values)) {
    if (!layout_ || values_.size() != layout_->total_size()) {
      throw ShapeError("value count does not match layout size");
    }
    check_finite("construction");
  }

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  const LayoutPtr& layout() const { return layout_; }

  std::span<double> segment(std::size_t seg_index) {
    const auto& seg = layout_->segments().at(seg_index);
    return {values_.data() + layout_->offset(seg_index), seg.size()};
  }
  std::span<const double> segment(std::size_t seg_index) const {
    const auto& seg = layout_->segments().at(seg_index);
    return {values_.data() + layout_->offset(seg_index), seg.size()};
  }

  bool same_layout(const ParamVector& o) const {
    if (layout_ == o.layout_) return true;
    if (!layout_ || !o.layout_) return false;
    return *layout_ == *o.layout_;
  }

  void require_same_layout(const ParamVector& o, const char* what) const {
    if (!same_layout(o)) throw ShapeError(std::string(what) + ": parameter layouts differ");
  }

  // this += scale * other
  ParamVector& add_scaled(const ParamVector& other, double scale) {
    require_same_layout(other, "add_scaled");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
    check_finite("add_scaled");
    return *this;
  }

  ParamVector& scale(double factor) {
    for (auto& v : values_) v *= factor;
    check_finite("scale");
    return *this;
  }

  void fill(double value) {
    for (auto& v : values_) v = value;
  }

  void check_finite(const char* what) const {
    for (const double v : values_) {
      if (!std::isfinite(v)) throw NumericError(std::string(what) + " produced a non-finite value");
    }
  }

 private:
  LayoutPtr layout_;
  std::vector<double> values_;
};

inline ParamVector zeros_like(const ParamVector& v) { return ParamVector(v.layout()); }

inline ParamVector subtract(const ParamVector& a, const ParamVector& b) {
  a.require_same_layout(b, "subtract");
  ParamVector out(a.layout());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  out.check_finite("subtract");
  return out;
}

inline double squared_distance(const ParamVector& a, const ParamVector& b) {
  a.require_same_layout(b, "squared_distance");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  return total;
}

inline double l2_norm(const ParamVector& a) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * a[i];
  return std::sqrt(total);
}

inline double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  a.require_same_layout(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace cflsim
