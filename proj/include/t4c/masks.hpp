#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "t4c/frames.hpp"

namespace t4c {

// 2-D activity mask shared across channels. A cell is active iff some scanned
// value at that cell, in any channel, is strictly greater than the threshold,
// so threshold 0 marks exactly the cells that were ever non-zero.
struct Mask {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> active;  // h*w, 0 or 1
  std::uint8_t threshold = 0;
  std::size_t source_span = 0;  // frames scanned

  bool at(std::size_t y, std::size_t x) const { return active[y * w + x] != 0; }
  std::size_t active_count() const;
};

Mask build_mask(const std::vector<Frames>& movies, std::uint8_t threshold);
Frames apply_mask(const Frames& prediction, const Mask& mask);

// Mask file: TMM1 with t = 1, c = 1 and cells 0 (inactive) or 255 (active).
void save_mask(const Mask& mask, const std::string& city, const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

}  // namespace t4c
