#include "t4c/frames.hpp"

#include <algorithm>
#include <cmath>

namespace t4c {

Frames Frames::slice(std::size_t first, std::size_t count) const {
  if (first + count > t_) throw RangeError("frame slice out of range");
  std::vector<std::uint8_t> out(data_.begin() + static_cast<std::ptrdiff_t>(first * frame_size()),
                                data_.begin() + static_cast<std::ptrdiff_t>((first + count) * frame_size()));
  return Frames(count, c_, h_, w_, std::move(out));
}

Frames Frames::crop(std::size_t row0, std::size_t col0, std::size_t rows, std::size_t cols) const {
  if (rows == 0 || cols == 0 || row0 + rows > h_ || col0 + cols > w_) {
    throw RangeError("crop region outside the grid");
  }
  Frames out(t_, c_, rows, cols);
  for (std::size_t ti = 0; ti < t_; ++ti) {
    for (std::size_t ci = 0; ci < c_; ++ci) {
      for (std::size_t y = 0; y < rows; ++y) {
        const std::uint8_t* src = &data_[((ti * c_ + ci) * h_ + row0 + y) * w_ + col0];
        std::copy(src, src + cols, &out.at(ti, ci, y, 0));
      }
    }
  }
  return out;
}

std::uint8_t round_to_u8(double v) {
  if (!(v >= 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::floor(v + 0.5));
}

}  // namespace t4c
