#include "t4c/unet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace t4c {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void UNetConfig::validate() const {
  if (depth < 1) throw RangeError("U-Net depth must be >= 1");
  if (in_channels < 1 || out_channels < 1 || base_channels < 1) throw RangeError("U-Net channel counts must be >= 1");
  if (depth > 16) throw RangeError("U-Net depth too large");
}

namespace {

template <class T>
ConvLayer<T> conv_layer(std::size_t co, std::size_t ci, std::size_t k) {
  return {Tensor<T>({co, ci, k, k}), Tensor<T>({co})};
}

template <class T>
ConvLayer<T> upconv_layer(std::size_t ci, std::size_t co) {
  return {Tensor<T>({ci, co, 2, 2}), Tensor<T>({co})};
}

// Standard normal draws from a 64-bit Mersenne twister via Box-Muller, so the
// sequence does not depend on the standard library's distribution code.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}
  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <class T>
void fill_normal(Tensor<T>& t, double stddev, NormalSource& src) {
  for (auto& v : t.values()) v = static_cast<T>(stddev * src.next());
}

template <class T>
Tensor<T> add(Tensor<T> a, const Tensor<T>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

template <class T>
typename UNetTape<T>::Block double_conv(const ConvLayer<T>& c1, const ConvLayer<T>& c2, Tensor<T> input) {
  typename UNetTape<T>::Block b;
  b.z1 = nn::conv2d_forward(input, c1.weight, c1.bias);
  b.a1 = nn::relu_forward(b.z1);
  b.z2 = nn::conv2d_forward(b.a1, c2.weight, c2.bias);
  b.a2 = nn::relu_forward(b.z2);
  b.input = std::move(input);
  return b;
}

// Backward through conv -> relu -> conv -> relu; returns grad w.r.t. block input.
template <class T>
Tensor<T> double_conv_backward(const ConvLayer<T>& c1, const ConvLayer<T>& c2, const typename UNetTape<T>::Block& b,
                               const Tensor<T>& grad_a2, ConvLayer<T>& g1, ConvLayer<T>& g2) {
  auto gz2 = nn::relu_backward(b.z2, grad_a2);
  auto r2 = nn::conv2d_backward(b.a1, c2.weight, gz2);
  g2.weight = std::move(r2.grad_k);
  g2.bias = std::move(r2.grad_bias);
  auto gz1 = nn::relu_backward(b.z1, r2.grad_x);
  auto r1 = nn::conv2d_backward(b.input, c1.weight, gz1);
  g1.weight = std::move(r1.grad_k);
  g1.bias = std::move(r1.grad_bias);
  return std::move(r1.grad_x);
}

}  // namespace

template <class T>
UNetParams<T> UNetParams<T>::zeros(const UNetConfig& config) {
  config.validate();
  UNetParams p;
  p.config = config;
  std::size_t in = config.in_channels;
  for (std::size_t i = 0; i < config.depth; ++i) {
    const std::size_t f = config.level_channels(i);
    p.enc1.push_back(conv_layer<T>(f, in, 3));
    p.enc2.push_back(conv_layer<T>(f, f, 3));
    in = f;
  }
  for (std::size_t i = 0; i + 1 < config.depth; ++i) {
    const std::size_t f = config.level_channels(i);
    p.up.push_back(upconv_layer<T>(config.level_channels(i + 1), f));
    p.dec1.push_back(conv_layer<T>(f, 2 * f, 3));
    p.dec2.push_back(conv_layer<T>(f, f, 3));
  }
  p.head = conv_layer<T>(config.out_channels, config.base_channels, 1);
  return p;
}

template <class T>
UNetParams<T> UNetParams<T>::he_init(const UNetConfig& config, std::uint64_t seed) {
  auto p = zeros(config);
  NormalSource src(seed);
  for (auto& [name, t] : p.named()) {
    if (t->rank() != 4) continue;  // biases stay zero
    const bool up = name.rfind("up", 0) == 0;
    const std::size_t fan_in = up ? t->dim(0) : t->dim(1) * t->dim(2) * t->dim(3);
    fill_normal(*t, std::sqrt(2.0 / static_cast<double>(fan_in)), src);
  }
  return p;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> UNetParams<T>::named() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  auto push = [&](const std::string& prefix, ConvLayer<T>& l) {
    out.emplace_back(prefix + ".weight", &l.weight);
    out.emplace_back(prefix + ".bias", &l.bias);
  };
  for (std::size_t i = 0; i < enc1.size(); ++i) {
    push("enc" + std::to_string(i) + ".conv1", enc1[i]);
    push("enc" + std::to_string(i) + ".conv2", enc2[i]);
  }
  for (std::size_t i = 0; i < up.size(); ++i) {
    push("up" + std::to_string(i), up[i]);
    push("dec" + std::to_string(i) + ".conv1", dec1[i]);
    push("dec" + std::to_string(i) + ".conv2", dec2[i]);
  }
  push("head", head);
  return out;
}

template <class T>
std::vector<std::pair<std::string, const Tensor<T>*>> UNetParams<T>::named() const {
  auto mut = const_cast<UNetParams*>(this)->named();
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(std::move(n), t);
  return out;
}

template <class T>
std::size_t UNetParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

template <class T>
template <class U>
UNetParams<U> UNetParams<T>::cast() const {
  auto out = UNetParams<U>::zeros(config);
  auto src = named();
  auto dst = out.named();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
  return out;
}

template <class T>
Tensor<T> unet_forward(const UNetParams<T>& params, const Tensor<T>& x, UNetTape<T>* tape) {
  const auto& cfg = params.config;
  if (x.rank() != 4 || x.dim(1) != cfg.in_channels) {
    throw ShapeError("U-Net input " + shape_string(x.shape()) + " does not have " +
                     std::to_string(cfg.in_channels) + " channels");
  }
  const std::size_t m = cfg.spatial_multiple();
  if (x.dim(2) % m || x.dim(3) % m) {
    throw ShapeError("U-Net input spatial dims " + shape_string(x.shape()) + " must be multiples of " +
                     std::to_string(m) + "; pad first");
  }
  UNetTape<T> local;
  UNetTape<T>& tp = tape ? *tape : local;
  tp = UNetTape<T>{};

  Tensor<T> h = x;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    tp.enc.push_back(double_conv(params.enc1[i], params.enc2[i], std::move(h)));
    if (i + 1 < cfg.depth) {
      const auto& a2 = tp.enc.back().a2;
      auto pooled = nn::maxpool2d_forward(a2);
      tp.argmax.push_back(std::move(pooled.argmax));
      tp.pool_in_shape.push_back(a2.shape());
      h = std::move(pooled.out);
    } else {
      h = tp.enc.back().a2;
    }
  }
  tp.dec.resize(cfg.depth - 1);
  tp.up_in.resize(cfg.depth - 1);
  for (std::size_t i = cfg.depth - 1; i-- > 0;) {
    auto u = nn::upconv2d_forward(h, params.up[i].weight, params.up[i].bias);
    tp.up_in[i] = std::move(h);
    auto cat = nn::concat_channels(tp.enc[i].a2, u);
    tp.dec[i] = double_conv(params.dec1[i], params.dec2[i], std::move(cat));
    h = tp.dec[i].a2;
  }
  auto out = nn::conv2d_forward(h, params.head.weight, params.head.bias);
  tp.head_in = std::move(h);
  return out;
}

template <class T>
UNetGrads<T> unet_backward(const UNetParams<T>& params, const UNetTape<T>& tape, const Tensor<T>& grad_out) {
  const auto& cfg = params.config;
  if (tape.enc.size() != cfg.depth) throw ShapeError("tape does not match the network depth");
  UNetGrads<T> g{UNetParams<T>::zeros(cfg), {}};

  auto rh = nn::conv2d_backward(tape.head_in, params.head.weight, grad_out);
  g.params.head.weight = std::move(rh.grad_k);
  g.params.head.bias = std::move(rh.grad_bias);
  Tensor<T> gh = std::move(rh.grad_x);

  std::vector<Tensor<T>> skip_grad(cfg.depth);
  for (std::size_t i = 0; i + 1 < cfg.depth; ++i) {
    auto gcat = double_conv_backward(params.dec1[i], params.dec2[i], tape.dec[i], gh, g.params.dec1[i],
                                     g.params.dec2[i]);
    auto [gskip, gu] = nn::split_channels(gcat, cfg.level_channels(i));
    skip_grad[i] = std::move(gskip);
    auto ru = nn::upconv2d_backward(tape.up_in[i], params.up[i].weight, gu);
    g.params.up[i].weight = std::move(ru.grad_k);
    g.params.up[i].bias = std::move(ru.grad_bias);
    gh = std::move(ru.grad_x);
  }

  // gh is now the gradient w.r.t. the deepest encoder output.
  for (std::size_t i = cfg.depth; i-- > 0;) {
    Tensor<T> ga2;
    if (i + 1 == cfg.depth) {
      ga2 = std::move(gh);
    } else {
      ga2 = add(nn::maxpool2d_backward(gh, tape.argmax[i], tape.pool_in_shape[i]), skip_grad[i]);
    }
    gh = double_conv_backward(params.enc1[i], params.enc2[i], tape.enc[i], ga2, g.params.enc1[i], g.params.enc2[i]);
  }
  g.grad_x = std::move(gh);
  return g;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kCheckpointMagic[4] = {'U', 'N', 'P', '1'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::ostream& out, std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("truncated checkpoint");
  return v;
}
std::uint16_t get_u16(std::istream& in) {
  std::uint16_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 2)) throw FormatError("truncated checkpoint");
  return v;
}

}  // namespace

void write_params(std::ostream& out, const UNetParams<float>& params) {
  const auto& c = params.config;
  out.write(kCheckpointMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(c.depth));
  put_u32(out, static_cast<std::uint32_t>(c.in_channels));
  put_u32(out, static_cast<std::uint32_t>(c.out_channels));
  put_u32(out, static_cast<std::uint32_t>(c.base_channels));
  put_u32(out, c.normalize ? 1u : 0u);
  const auto named = params.named();
  put_u32(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
  }
}

UNetParams<float> read_params(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("bad magic: not a UNP1 checkpoint");
  }
  UNetConfig c;
  c.depth = get_u32(in);
  c.in_channels = get_u32(in);
  c.out_channels = get_u32(in);
  c.base_channels = get_u32(in);
  c.normalize = (get_u32(in) & 1u) != 0;
  auto params = UNetParams<float>::zeros(c);
  auto named = params.named();
  const std::uint32_t count = get_u32(in);
  if (count != named.size()) throw FormatError("checkpoint tensor count does not match its config");
  for (auto& [expect_name, t] : named) {
    std::string name(get_u16(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw FormatError("truncated checkpoint");
    if (name != expect_name) throw FormatError("checkpoint tensor '" + name + "' where '" + expect_name + "' expected");
    std::vector<std::size_t> shape(get_u32(in));
    for (auto& d : shape) d = get_u32(in);
    if (shape != t->shape()) throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_string(shape));
    if (!in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)))) {
      throw FormatError("truncated checkpoint");
    }
  }
  return params;
}

void save_checkpoint(const UNetParams<float>& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  write_params(out, params);
  if (!out.flush()) throw IoError("short write to " + path.string());
}

UNetParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_params(in);
}

template struct UNetParams<float>;
template struct UNetParams<double>;
template UNetParams<double> UNetParams<float>::cast<double>() const;
template UNetParams<float> UNetParams<double>::cast<float>() const;
template UNetParams<float> UNetParams<float>::cast<float>() const;
template UNetParams<double> UNetParams<double>::cast<double>() const;
template Tensor<float> unet_forward(const UNetParams<float>&, const Tensor<float>&, UNetTape<float>*);
template Tensor<double> unet_forward(const UNetParams<double>&, const Tensor<double>&, UNetTape<double>*);
template UNetGrads<float> unet_backward(const UNetParams<float>&, const UNetTape<float>&, const Tensor<float>&);
template UNetGrads<double> unet_backward(const UNetParams<double>&, const UNetTape<double>&, const Tensor<double>&);

}  // namespace t4c
