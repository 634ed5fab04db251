#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "t4c/nn.hpp"
#include "t4c/tensor.hpp"

namespace t4c {

struct UNetConfig {
  std::size_t depth = 5;
  std::size_t in_channels = 36;
  std::size_t out_channels = 9;
  std::size_t base_channels = 16;
  // When set, cell values v enter the network as (v - 127.5) / 127.5 and
  // outputs are mapped back the same way before clamping. Otherwise raw
  // 0-255 values go in and come out.
  bool normalize = false;

  // Encoder level i carries base_channels * 2^i features.
  std::size_t level_channels(std::size_t level) const { return base_channels << level; }
  // Spatial dims fed to the network must be multiples of this.
  std::size_t spatial_multiple() const { return std::size_t{1} << (depth - 1); }
  void validate() const;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

template <class T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;
};

// Weights of an encoder/decoder network with skip connections:
//   encoder level i: 3x3 conv -> ReLU -> 3x3 conv -> ReLU, 2x2 max-pool between levels
//   decoder level i: 2x2 up-conv from level i+1, concat(skip_i, up), double conv
//   head: 1x1 conv, no activation
template <class T>
struct UNetParams {
  UNetConfig config;
  std::vector<ConvLayer<T>> enc1, enc2;  // depth entries
  std::vector<ConvLayer<T>> up;          // depth-1 entries, up[i]: level i+1 -> level i
  std::vector<ConvLayer<T>> dec1, dec2;  // depth-1 entries
  ConvLayer<T> head;

  static UNetParams zeros(const UNetConfig& config);
  // He-style fan-in scaled normal weights, zero biases, seeded.
  static UNetParams he_init(const UNetConfig& config, std::uint64_t seed);

  // Stable (name, tensor) listing used by serialization and the optimizer.
  std::vector<std::pair<std::string, Tensor<T>*>> named();
  std::vector<std::pair<std::string, const Tensor<T>*>> named() const;
  std::size_t parameter_count() const;

  template <class U>
  UNetParams<U> cast() const;

  friend bool operator==(const UNetParams& a, const UNetParams& b) {
    if (!(a.config == b.config)) return false;
    auto na = a.named();
    auto nb = b.named();
    for (std::size_t i = 0; i < na.size(); ++i) {
      if (!(*na[i].second == *nb[i].second)) return false;
    }
    return true;
  }
};

// Activations kept by the forward pass for the backward pass.
template <class T>
struct UNetTape {
  struct Block {
    Tensor<T> input;  // input of the first conv
    Tensor<T> z1, a1, z2, a2;
  };
  std::vector<Block> enc;                           // depth entries
  std::vector<std::vector<std::uint32_t>> argmax;   // depth-1 entries
  std::vector<std::vector<std::size_t>> pool_in_shape;
  std::vector<Tensor<T>> up_in;                     // depth-1 entries
  std::vector<Block> dec;                           // depth-1 entries
  Tensor<T> head_in;
};

template <class T>
struct UNetGrads {
  UNetParams<T> params;
  Tensor<T> grad_x;
};

// x: (n, in_channels, H, W) with H, W multiples of 2^(depth-1).
template <class T>
Tensor<T> unet_forward(const UNetParams<T>& params, const Tensor<T>& x, UNetTape<T>* tape = nullptr);

// Gradients of sum(grad_out * forward(x)); `tape` must come from unet_forward on x.
template <class T>
UNetGrads<T> unet_backward(const UNetParams<T>& params, const UNetTape<T>& tape, const Tensor<T>& grad_out);

// Checkpoint file "UNP1": magic, u32 depth, u32 in, u32 out, u32 base,
// u32 flags (bit 0 = normalize), u32 tensor count, then per tensor:
// u16 name length + name, u32 rank, u32 dims, little-endian float32 values.
void save_checkpoint(const UNetParams<float>& params, const std::filesystem::path& path);
UNetParams<float> load_checkpoint(const std::filesystem::path& path);
void write_params(std::ostream& out, const UNetParams<float>& params);
UNetParams<float> read_params(std::istream& in);

}  // namespace t4c
