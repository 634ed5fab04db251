#pragma once

// Dense CPU kernels with hand-written backward passes. Every kernel is
// instantiated for float (training) and double (gradient checking).
//
// Kernels may split work over output channels across threads, but the
// accumulation order of every element is fixed, so results are bitwise
// independent of the thread count.

#include <cstdint>
#include <utility>

#include "t4c/tensor.hpp"

namespace t4c::nn {

void set_num_threads(unsigned n);
unsigned num_threads();

template <class T>
struct ConvGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_k;
  Tensor<T> grad_bias;
};

// Cross-correlation with zero "same" padding. x: (n, ci, h, w),
// k: (co, ci, kh, kw) with odd kh, kw, bias: (co).
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias);
template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& grad_out);

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x);
// Gradient passes where x > 0; the gradient at exactly 0 is 0.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

template <class T>
struct PoolResult {
  Tensor<T> out;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

// 2x2 window, stride 2. Ties go to the first maximum in row-major window order.
template <class T>
PoolResult<T> maxpool2d_forward(const Tensor<T>& x);
template <class T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                             const std::vector<std::size_t>& input_shape);

// 2x2 transposed convolution, stride 2. x: (n, ci, h, w), k: (ci, co, 2, 2),
// bias: (co). Output (n, co, 2h, 2w).
template <class T>
Tensor<T> upconv2d_forward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias);
template <class T>
ConvGrads<T> upconv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& grad_out);

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
// Splits a channel-stacked gradient into the first `channels_a` channels and the rest.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& grad, std::size_t channels_a);

struct PadRecord {
  std::size_t h = 0;  // original height
  std::size_t w = 0;  // original width
};

std::size_t round_up(std::size_t v, std::size_t multiple);

// Zero-pads bottom/right of a rank-4 tensor up to the next multiple.
template <class T>
std::pair<Tensor<T>, PadRecord> pad_spatial(const Tensor<T>& x, std::size_t multiple);
template <class T>
Tensor<T> crop_spatial(const Tensor<T>& x, const PadRecord& record);

template <class T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // d loss / d pred = 2 (pred - target) / N
};

template <class T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

template <class T>
Tensor<T> clamp_255(const Tensor<T>& x);

}  // namespace t4c::nn
