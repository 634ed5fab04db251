#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "t4c/error.hpp"

namespace t4c {

// Dense (t, c, h, w) block of uint8 cells in row-major order.
class Frames {
 public:
  Frames() = default;
  Frames(std::size_t t, std::size_t c, std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : t_(t), c_(c), h_(h), w_(w), data_(t * c * h * w, fill) {}
  Frames(std::size_t t, std::size_t c, std::size_t h, std::size_t w, std::vector<std::uint8_t> data)
      : t_(t), c_(c), h_(h), w_(w), data_(std::move(data)) {
    if (data_.size() != t * c * h * w) {
      throw ShapeError("frame data length does not match (t, c, h, w)");
    }
  }

  std::size_t t() const { return t_; }
  std::size_t c() const { return c_; }
  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  std::size_t frame_size() const { return c_ * h_ * w_; }
  std::size_t size() const { return data_.size(); }

  std::uint8_t& at(std::size_t ti, std::size_t ci, std::size_t y, std::size_t x) {
    return data_[((ti * c_ + ci) * h_ + y) * w_ + x];
  }
  std::uint8_t at(std::size_t ti, std::size_t ci, std::size_t y, std::size_t x) const {
    return data_[((ti * c_ + ci) * h_ + y) * w_ + x];
  }

  std::span<std::uint8_t> frame(std::size_t ti) { return {data_.data() + ti * frame_size(), frame_size()}; }
  std::span<const std::uint8_t> frame(std::size_t ti) const {
    return {data_.data() + ti * frame_size(), frame_size()};
  }

  // Copy of frames [first, first + count).
  Frames slice(std::size_t first, std::size_t count) const;
  // Spatial crop applied to every frame and channel.
  Frames crop(std::size_t row0, std::size_t col0, std::size_t rows, std::size_t cols) const;

  std::vector<std::uint8_t>& data() { return data_; }
  const std::vector<std::uint8_t>& data() const { return data_; }

  bool same_shape(const Frames& o) const { return t_ == o.t_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  friend bool operator==(const Frames&, const Frames&) = default;

 private:
  std::size_t t_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

// Round half-up, then clamp to [0, 255]. NaN maps to 0.
std::uint8_t round_to_u8(double v);

}  // namespace t4c
