#include "t4c/masks.hpp"

#include <algorithm>

#include "t4c/movie_store.hpp"

namespace t4c {

std::size_t Mask::active_count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), std::uint8_t{1}));
}

Mask build_mask(const std::vector<Frames>& movies, std::uint8_t threshold) {
  if (movies.empty()) throw RangeError("build_mask needs at least one movie");
  Mask mask;
  mask.h = movies.front().h();
  mask.w = movies.front().w();
  mask.threshold = threshold;
  mask.active.assign(mask.h * mask.w, 0);
  const std::size_t plane = mask.h * mask.w;
  for (const auto& m : movies) {
    if (m.h() != mask.h || m.w() != mask.w) throw ShapeError("movies differ in grid shape");
    const auto& d = m.data();
    for (std::size_t p = 0; p < m.t() * m.c(); ++p) {
      const std::uint8_t* src = d.data() + p * plane;
      for (std::size_t i = 0; i < plane; ++i) mask.active[i] |= static_cast<std::uint8_t>(src[i] > threshold);
    }
    mask.source_span += m.t();
  }
  return mask;
}

Frames apply_mask(const Frames& prediction, const Mask& mask) {
  if (prediction.h() != mask.h || prediction.w() != mask.w) throw ShapeError("mask shape does not match prediction");
  Frames out = prediction;
  const std::size_t plane = mask.h * mask.w;
  auto& d = out.data();
  for (std::size_t p = 0; p < out.t() * out.c(); ++p) {
    std::uint8_t* dst = d.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!mask.active[i]) dst[i] = 0;
    }
  }
  return out;
}

void save_mask(const Mask& mask, const std::string& city, const std::filesystem::path& path) {
  Frames f(1, 1, mask.h, mask.w);
  for (std::size_t i = 0; i < mask.active.size(); ++i) f.data()[i] = mask.active[i] ? 255 : 0;
  ingest(f, city, "MASK", path);
}

Mask load_mask(const std::filesystem::path& path) {
  auto movie = Movie::open(path);
  const auto& h = movie.header();
  if (h.t != 1 || h.c != 1) throw FormatError("mask file must have t = 1 and c = 1");
  const auto f = movie.read_all();
  Mask mask;
  mask.h = h.h;
  mask.w = h.w;
  mask.active.resize(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto v = f.data()[i];
    if (v != 0 && v != 255) throw FormatError("mask cells must be 0 or 255");
    mask.active[i] = v == 255;
  }
  return mask;
}

}  // namespace t4c
