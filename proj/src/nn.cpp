#include "t4c/nn.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

#include <Eigen/Core>

namespace t4c {

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace nn {
namespace {

std::atomic<unsigned> g_threads{1};

// Runs fn(i) for i in [0, n). Each index is handled by exactly one thread.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  const unsigned threads = std::min<std::size_t>(g_threads.load(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
}

template <class T>
void require_rank4(const Tensor<T>& x, const char* what) {
  if (x.rank() != 4) throw ShapeError(std::string(what) + " must be rank 4, got " + shape_string(x.shape()));
}

template <class T>
void check_conv_shapes(const Tensor<T>& x, const Tensor<T>& k) {
  require_rank4(x, "conv2d input");
  require_rank4(k, "conv2d kernel");
  if (k.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d kernel " + shape_string(k.shape()) + " does not match input " + shape_string(x.shape()));
  }
  if (k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0) throw ShapeError("same-padding conv2d needs odd kernel sizes");
}

}  // namespace

void set_num_threads(unsigned n) { g_threads = std::max(1u, n); }
unsigned num_threads() { return g_threads.load(); }

// ---------------------------------------------------------------- conv2d
//
// Convolutions run as im2col + GEMM over bands of output rows. The band
// height depends only on the layer shape, never on the thread count.

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

constexpr std::size_t kColumnBudget = std::size_t{1} << 21;  // elements per im2col band

struct ConvGeometry {
  std::size_t ci, h, w, kh, kw;
  std::size_t band_rows;
  std::size_t patch() const { return ci * kh * kw; }
};

ConvGeometry geometry(std::size_t ci, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw) {
  const std::size_t per_row = ci * kh * kw * w;
  return {ci, h, w, kh, kw, std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1), 1, h)};
}

// col[(c*kh + ky)*kw + kx][(y - y0)*w + x] = in[c][y + ky - kh/2][x + kx - kw/2], zero outside.
template <class T>
void im2col(const T* in, const ConvGeometry& g, std::size_t y0, std::size_t rows, RowMat<T>& col) {
  const auto ph = static_cast<std::ptrdiff_t>(g.kh / 2), pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  const auto H = static_cast<std::ptrdiff_t>(g.h), W = static_cast<std::ptrdiff_t>(g.w);
  col.resize(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(rows * g.w));
  for (std::size_t c = 0; c < g.ci; ++c) {
    const T* plane = in + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* dst = col.data() + ((c * g.kh + ky) * g.kw + kx) * rows * g.w;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(W, W - dx);
        for (std::size_t r = 0; r < rows; ++r) {
          T* drow = dst + r * g.w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y0 + r + ky) - ph;
          if (sy < 0 || sy >= H) {
            std::fill(drow, drow + g.w, T{0});
            continue;
          }
          const T* srow = plane + sy * W;
          std::fill(drow, drow + x0, T{0});
          for (std::ptrdiff_t x = x0; x < x1; ++x) drow[x] = srow[x + dx];
          std::fill(drow + x1, drow + W, T{0});
        }
      }
    }
  }
}

// Scatter-add of a column band back into the input layout.
template <class T>
void col2im_add(const RowMat<T>& col, const ConvGeometry& g, std::size_t y0, std::size_t rows, T* out) {
  const auto ph = static_cast<std::ptrdiff_t>(g.kh / 2), pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  const auto H = static_cast<std::ptrdiff_t>(g.h), W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.ci; ++c) {
    T* plane = out + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* src = col.data() + ((c * g.kh + ky) * g.kw + kx) * rows * g.w;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
        const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(W, W - dx);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y0 + r + ky) - ph;
          if (sy < 0 || sy >= H) continue;
          const T* srow = src + r * g.w;
          T* drow = plane + sy * W;
          for (std::ptrdiff_t x = x0; x < x1; ++x) drow[x + dx] += srow[x];
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias) {
  check_conv_shapes(x, k);
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (bias.size() != co) throw ShapeError("conv2d bias length must equal output channels");
  const auto g = geometry(ci, h, w, kh, kw);
  const auto hw = static_cast<Eigen::Index>(h * w);
  Eigen::Map<const RowMat<T>> kmat(k.data(), static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(g.patch()));

  Tensor<T> y({n, co, h, w});
  parallel_for(n, [&](std::size_t b) {
    RowMat<T> col;
    for (std::size_t y0 = 0; y0 < h; y0 += g.band_rows) {
      const std::size_t rows = std::min(g.band_rows, h - y0);
      const auto cols = static_cast<Eigen::Index>(rows * w);
      StridedMap<T> out(y.plane(b, 0) + y0 * w, static_cast<Eigen::Index>(co), cols, Eigen::OuterStride<>(hw));
      if (kh == 1 && kw == 1) {
        ConstStridedMap<T> in(x.plane(b, 0) + y0 * w, static_cast<Eigen::Index>(ci), cols, Eigen::OuterStride<>(hw));
        out.noalias() = kmat * in;
      } else {
        im2col(x.plane(b, 0), g, y0, rows, col);
        out.noalias() = kmat * col;
      }
      for (std::size_t o = 0; o < co; ++o) out.row(static_cast<Eigen::Index>(o)).array() += bias[o];
    }
  });
  return y;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& grad_out) {
  check_conv_shapes(x, k);
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (grad_out.shape() != std::vector<std::size_t>{n, co, h, w}) {
    throw ShapeError("conv2d grad_out " + shape_string(grad_out.shape()) + " does not match forward output");
  }
  const auto g = geometry(ci, h, w, kh, kw);
  const auto hw = static_cast<Eigen::Index>(h * w);
  const auto CO = static_cast<Eigen::Index>(co), P = static_cast<Eigen::Index>(g.patch());
  Eigen::Map<const RowMat<T>> kmat(k.data(), CO, P);

  ConvGrads<T> r{Tensor<T>(x.shape()), Tensor<T>(k.shape()), Tensor<T>({co})};
  for (std::size_t o = 0; o < co; ++o) {
    T acc = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* go = grad_out.plane(b, o);
      for (std::size_t i = 0; i < h * w; ++i) acc += go[i];
    }
    r.grad_bias[o] = acc;
  }

  // Per-sample kernel gradients, reduced afterwards in sample order.
  std::vector<RowMat<T>> partial(n, RowMat<T>::Zero(CO, P));
  parallel_for(n, [&](std::size_t b) {
    RowMat<T> col, dcol;
    for (std::size_t y0 = 0; y0 < h; y0 += g.band_rows) {
      const std::size_t rows = std::min(g.band_rows, h - y0);
      const auto cols = static_cast<Eigen::Index>(rows * w);
      ConstStridedMap<T> gout(grad_out.plane(b, 0) + y0 * w, CO, cols, Eigen::OuterStride<>(hw));
      if (kh == 1 && kw == 1) {
        ConstStridedMap<T> in(x.plane(b, 0) + y0 * w, P, cols, Eigen::OuterStride<>(hw));
        partial[b].noalias() += gout * in.transpose();
        StridedMap<T> gx(r.grad_x.plane(b, 0) + y0 * w, P, cols, Eigen::OuterStride<>(hw));
        gx.noalias() = kmat.transpose() * gout;
      } else {
        im2col(x.plane(b, 0), g, y0, rows, col);
        partial[b].noalias() += gout * col.transpose();
        dcol.noalias() = kmat.transpose() * gout;
        col2im_add(dcol, g, y0, rows, r.grad_x.plane(b, 0));
      }
    }
  });
  Eigen::Map<RowMat<T>> gk(r.grad_k.data(), CO, P);
  for (std::size_t b = 0; b < n; ++b) gk += partial[b];
  return r;
}

// ---------------------------------------------------------------- relu

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (!x.same_shape(grad_out)) throw ShapeError("relu grad_out shape mismatch");
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T{0} ? grad_out[i] : T{0};
  return g;
}

// ---------------------------------------------------------------- maxpool

template <class T>
PoolResult<T> maxpool2d_forward(const Tensor<T>& x) {
  require_rank4(x, "maxpool input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("maxpool needs even spatial dims, got " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult<T> r{Tensor<T>({n, c, oh, ow}), std::vector<std::uint32_t>(n * c * oh * ow)};
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* in = x.data() + p * h * w;
    T* out = r.out.data() + p * oh * ow;
    std::uint32_t* am = r.argmax.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (2 * y) * w + 2 * xx;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (auto idx : cand) {
          if (in[idx] > in[best]) best = idx;
        }
        out[y * ow + xx] = in[best];
        am[y * ow + xx] = static_cast<std::uint32_t>(p * h * w + best);
      }
    }
  }
  return r;
}

template <class T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                             const std::vector<std::size_t>& input_shape) {
  if (grad_out.size() != argmax.size()) throw ShapeError("maxpool grad_out does not match argmax record");
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

// ---------------------------------------------------------------- upconv

template <class T>
Tensor<T> upconv2d_forward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias) {
  require_rank4(x, "upconv input");
  require_rank4(k, "upconv kernel");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k.dim(0) != ci || k.dim(2) != 2 || k.dim(3) != 2) {
    throw ShapeError("upconv kernel " + shape_string(k.shape()) + " does not match input " + shape_string(x.shape()));
  }
  const std::size_t co = k.dim(1);
  if (bias.size() != co) throw ShapeError("upconv bias length must equal output channels");
  const std::size_t oh = 2 * h, ow = 2 * w;
  Tensor<T> y({n, co, oh, ow});
  parallel_for(n * co, [&](std::size_t job) {
    const std::size_t b = job / co, o = job % co;
    T* out = y.plane(b, o);
    std::fill(out, out + oh * ow, bias[o]);
    for (std::size_t c = 0; c < ci; ++c) {
      const T* in = x.plane(b, c);
      const T* kk = k.data() + (c * co + o) * 4;
      for (std::size_t yy = 0; yy < h; ++yy) {
        T* r0 = out + (2 * yy) * ow;
        T* r1 = r0 + ow;
        const T* irow = in + yy * w;
        for (std::size_t xx = 0; xx < w; ++xx) {
          const T v = irow[xx];
          r0[2 * xx] += v * kk[0];
          r0[2 * xx + 1] += v * kk[1];
          r1[2 * xx] += v * kk[2];
          r1[2 * xx + 1] += v * kk[3];
        }
      }
    }
  });
  return y;
}

template <class T>
ConvGrads<T> upconv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& grad_out) {
  require_rank4(x, "upconv input");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(1), ow = 2 * w;
  if (grad_out.shape() != std::vector<std::size_t>{n, co, 2 * h, 2 * w}) {
    throw ShapeError("upconv grad_out " + shape_string(grad_out.shape()) + " does not match forward output");
  }
  ConvGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(k.shape()), Tensor<T>({co})};
  for (std::size_t o = 0; o < co; ++o) {
    T bsum = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* go = grad_out.plane(b, o);
      for (std::size_t i = 0; i < 4 * h * w; ++i) bsum += go[i];
    }
    g.grad_bias[o] = bsum;
  }
  parallel_for(ci, [&](std::size_t c) {
    for (std::size_t o = 0; o < co; ++o) {
      T acc[4] = {0, 0, 0, 0};
      for (std::size_t b = 0; b < n; ++b) {
        const T* in = x.plane(b, c);
        const T* go = grad_out.plane(b, o);
        for (std::size_t yy = 0; yy < h; ++yy) {
          const T* r0 = go + (2 * yy) * ow;
          const T* r1 = r0 + ow;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const T v = in[yy * w + xx];
            acc[0] += v * r0[2 * xx];
            acc[1] += v * r0[2 * xx + 1];
            acc[2] += v * r1[2 * xx];
            acc[3] += v * r1[2 * xx + 1];
          }
        }
      }
      std::copy(acc, acc + 4, g.grad_k.data() + (c * co + o) * 4);
    }
  });
  parallel_for(n * ci, [&](std::size_t job) {
    const std::size_t b = job / ci, c = job % ci;
    T* gx = g.grad_x.plane(b, c);
    for (std::size_t o = 0; o < co; ++o) {
      const T* go = grad_out.plane(b, o);
      const T* kk = k.data() + (c * co + o) * 4;
      for (std::size_t yy = 0; yy < h; ++yy) {
        const T* r0 = go + (2 * yy) * ow;
        const T* r1 = r0 + ow;
        for (std::size_t xx = 0; xx < w; ++xx) {
          gx[yy * w + xx] +=
              kk[0] * r0[2 * xx] + kk[1] * r0[2 * xx + 1] + kk[2] * r1[2 * xx] + kk[3] * r1[2 * xx + 1];
        }
      }
    }
  });
  return g;
}

// ---------------------------------------------------------------- concat

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a, "concat input");
  require_rank4(b, "concat input");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat of " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(a.plane(i, 0), a.plane(i, 0) + ca * hw, out.plane(i, 0));
    std::copy(b.plane(i, 0), b.plane(i, 0) + cb * hw, out.plane(i, ca));
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& grad, std::size_t channels_a) {
  require_rank4(grad, "split input");
  if (channels_a > grad.dim(1)) throw ShapeError("split point beyond channel count");
  const std::size_t n = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
  Tensor<T> a({n, channels_a, grad.dim(2), grad.dim(3)});
  Tensor<T> b({n, c - channels_a, grad.dim(2), grad.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(grad.plane(i, 0), grad.plane(i, 0) + channels_a * hw, a.data() + i * channels_a * hw);
    std::copy(grad.plane(i, channels_a), grad.plane(i, 0) + c * hw, b.data() + i * (c - channels_a) * hw);
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------- padding

std::size_t round_up(std::size_t v, std::size_t multiple) {
  if (multiple == 0) throw RangeError("padding multiple must be >= 1");
  return (v + multiple - 1) / multiple * multiple;
}

template <class T>
std::pair<Tensor<T>, PadRecord> pad_spatial(const Tensor<T>& x, std::size_t multiple) {
  require_rank4(x, "pad input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ph = round_up(h, multiple), pw = round_up(w, multiple);
  PadRecord rec{h, w};
  if (ph == h && pw == w) return {x, rec};
  Tensor<T> out({n, c, ph, pw});
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      const T* src = x.data() + (p * h + y) * w;
      std::copy(src, src + w, out.data() + (p * ph + y) * pw);
    }
  }
  return {std::move(out), rec};
}

template <class T>
Tensor<T> crop_spatial(const Tensor<T>& x, const PadRecord& rec) {
  require_rank4(x, "crop input");
  const std::size_t n = x.dim(0), c = x.dim(1), ph = x.dim(2), pw = x.dim(3);
  if (rec.h > ph || rec.w > pw) throw ShapeError("crop record larger than tensor");
  if (rec.h == ph && rec.w == pw) return x;
  Tensor<T> out({n, c, rec.h, rec.w});
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t y = 0; y < rec.h; ++y) {
      const T* src = x.data() + (p * ph + y) * pw;
      std::copy(src, src + rec.w, out.data() + (p * rec.h + y) * rec.w);
    }
  }
  return out;
}

// ---------------------------------------------------------------- loss

template <class T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("mse_loss shapes " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  }
  if (pred.empty()) throw ShapeError("mse_loss on empty tensors");
  LossResult<T> r{0.0, Tensor<T>(pred.shape())};
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
    r.grad[i] = static_cast<T>(2.0 * d * inv_n);
  }
  r.loss = acc * inv_n;
  return r;
}

template <class T>
Tensor<T> clamp_255(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(x[i], T{0}, T{255});
  return y;
}

#define T4C_INSTANTIATE(T)                                                                                       \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> relu_forward(const Tensor<T>&);                                                            \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                         \
  template PoolResult<T> maxpool2d_forward(const Tensor<T>&);                                                   \
  template Tensor<T> maxpool2d_backward(const Tensor<T>&, const std::vector<std::uint32_t>&,                    \
                                        const std::vector<std::size_t>&);                                       \
  template Tensor<T> upconv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template ConvGrads<T> upconv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                       \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, std::size_t);                       \
  template std::pair<Tensor<T>, PadRecord> pad_spatial(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> crop_spatial(const Tensor<T>&, const PadRecord&);                                          \
  template LossResult<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> clamp_255(const Tensor<T>&);

T4C_INSTANTIATE(float)
T4C_INSTANTIATE(double)
#undef T4C_INSTANTIATE

}  // namespace nn
}  // namespace t4c
