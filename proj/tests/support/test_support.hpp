#pragma once

// Shared helpers for the unit tests and the acceptance binary: scratch
// directories, random data, brute-force oracles and finite differences.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "t4c/frames.hpp"
#include "t4c/tensor.hpp"

namespace t4c::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t4c") {
    std::string tmpl = (std::filesystem::temp_directory_path() / (tag + "-XXXXXX")).string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Frames random_frames(std::mt19937_64& rng, std::size_t t, std::size_t c, std::size_t h, std::size_t w) {
  std::uniform_int_distribution<int> cell(0, 255);
  Frames f(t, c, h, w);
  for (auto& v : f.data()) v = static_cast<std::uint8_t>(cell(rng));
  return f;
}

template <class T>
Tensor<T> random_tensor(std::mt19937_64& rng, std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(u(rng));
  return t;
}

// Same-padded cross-correlation, straight from the definition.
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  Tensor<double> y({n, co, h, w});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long yy = static_cast<long>(i + u) - ph, xx = static_cast<long>(j + v) - pw;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                acc += k.at(o, c, u, v) * x.at(s, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
              }
          y.at(s, o, i, j) = acc;
        }
  return y;
}

// Stride-2 2x2 transposed convolution, scatter form.
inline Tensor<double> naive_upconv2d(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3), co = k.dim(1);
  Tensor<double> y({n, co, 2 * h, 2 * w});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < 2 * h; ++i)
        for (std::size_t j = 0; j < 2 * w; ++j) y.at(s, o, i, j) = b[o];
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t o = 0; o < co; ++o)
            for (std::size_t u = 0; u < 2; ++u)
              for (std::size_t v = 0; v < 2; ++v) y.at(s, o, 2 * i + u, 2 * j + v) += x.at(s, c, i, j) * k.at(c, o, u, v);
  return y;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Worst elementwise relative error between an analytic gradient and central
// differences of `f` with respect to `param` (perturbed in place).
inline double gradient_error(Tensor<double>& param, const Tensor<double>& analytic, const std::function<double()>& f,
                             double step = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double keep = param[i];
    param[i] = keep + step;
    const double up = f();
    param[i] = keep - step;
    const double down = f();
    param[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace t4c::testing
