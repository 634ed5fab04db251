#include "t4c/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <limits>
#include <random>

#include "t4c/evaluate.hpp"

namespace t4c {

void SGDConfig::validate() const {
  if (!(lr_initial > 0.0) || !(lr_after_drop > 0.0)) throw RangeError("learning rates must be > 0");
  if (batch_size == 0) throw RangeError("batch size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw RangeError("momentum must lie in [0, 1)");
  if (drop_epoch > epochs) throw RangeError("drop_epoch must not exceed the epoch count");
}

double lr_schedule(std::size_t epoch, const SGDConfig& config) {
  return epoch < config.drop_epoch ? config.lr_initial : config.lr_after_drop;
}

TrainState TrainState::fresh(const UNetConfig& model, std::uint64_t seed) {
  TrainState s;
  s.params = UNetParams<float>::he_init(model, seed);
  s.velocity = UNetParams<float>::zeros(model);
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------- state I/O

namespace {

constexpr char kStateMagic[4] = {'U', 'T', 'S', '1'};

template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class V>
V get(std::istream& in) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated train state");
  return v;
}

}  // namespace

void save_train_state(const TrainState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write train state " + path.string());
  out.write(kStateMagic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.epoch));
  put<std::uint64_t>(out, state.step);
  put<std::uint64_t>(out, state.seed);
  write_params(out, state.params);
  write_params(out, state.velocity);
  if (!out.flush()) throw IoError("short write to " + path.string());
}

TrainState load_train_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open train state " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kStateMagic, 4) != 0) throw FormatError("bad magic: not a UTS1 file");
  TrainState s;
  s.epoch = get<std::uint32_t>(in);
  s.step = get<std::uint64_t>(in);
  s.seed = get<std::uint64_t>(in);
  s.params = read_params(in);
  s.velocity = read_params(in);
  if (!(s.params.config == s.velocity.config)) throw FormatError("velocity layout differs from params");
  return s;
}

// ---------------------------------------------------------------- optimizer

template <class T>
void sgd_update(std::span<Tensor<T>* const> params, std::span<Tensor<T>* const> velocity,
                std::span<const Tensor<T>* const> grads, double lr, double momentum, bool nesterov) {
  if (params.size() != velocity.size() || params.size() != grads.size()) {
    throw ShapeError("sgd_update: params, velocity and grads differ in length");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(*grads[k]) || !params[k]->same_shape(*velocity[k])) {
      throw ShapeError("sgd_update: gradient shape " + shape_string(grads[k]->shape()) + " does not match parameter " +
                       shape_string(params[k]->shape()));
    }
    for (std::size_t i = 0; i < grads[k]->size(); ++i) {
      if (!std::isfinite((*grads[k])[i])) {
        throw NumericalError("non-finite gradient in parameter tensor " + std::to_string(k) + " at element " +
                             std::to_string(i));
      }
    }
  }
  const T mu = static_cast<T>(momentum);
  const T rate = static_cast<T>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& v = *velocity[k];
    const auto& g = *grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + g[i];
      p[i] -= nesterov ? rate * (g[i] + mu * v[i]) : rate * v[i];
    }
  }
}

template void sgd_update<float>(std::span<Tensor<float>* const>, std::span<Tensor<float>* const>,
                                std::span<const Tensor<float>* const>, double, double, bool);
template void sgd_update<double>(std::span<Tensor<double>* const>, std::span<Tensor<double>* const>,
                                 std::span<const Tensor<double>* const>, double, double, bool);

void sgd_step(TrainState& state, const UNetParams<float>& grads, double lr, const SGDConfig& config) {
  if (!(grads.config == state.params.config)) throw ShapeError("gradient layout differs from params");
  std::vector<Tensor<float>*> p, v;
  std::vector<const Tensor<float>*> g;
  for (auto& [n, t] : state.params.named()) p.push_back(t);
  for (auto& [n, t] : state.velocity.named()) v.push_back(t);
  for (auto& [n, t] : grads.named()) g.push_back(t);
  sgd_update<float>(p, v, g, lr, config.momentum, config.nesterov);
  ++state.step;
}

// ---------------------------------------------------------------- tensors

namespace {

// Normalized cells are (v - 127.5) / 127.5, i.e. [0, 255] maps onto [-1, 1].
constexpr double kHalfRange = 127.5;
float value_scale(const UNetConfig& model) { return model.normalize ? static_cast<float>(1.0 / kHalfRange) : 1.0f; }
float value_offset(const UNetConfig& model) { return model.normalize ? static_cast<float>(kHalfRange) : 0.0f; }
double loss_to_255(const UNetConfig& model) { return model.normalize ? kHalfRange * kHalfRange : 1.0; }

void check_clip_layout(const Clip& clip, const UNetConfig& model) {
  const std::size_t in = clip.input.t() * clip.input.c();
  const std::size_t out = kTargetFrames * clip.input.c();
  if (model.in_channels != in || model.out_channels != out) {
    throw ShapeError("model expects " + std::to_string(model.in_channels) + " -> " +
                     std::to_string(model.out_channels) + " channels but clips give " + std::to_string(in) + " -> " +
                     std::to_string(out));
  }
}

}  // namespace

Tensor<float> input_tensor(const std::vector<const Clip*>& clips, const UNetConfig& model, nn::PadRecord* record) {
  if (clips.empty()) throw RangeError("empty batch");
  const auto& first = clips.front()->input;
  const std::size_t ch = first.t() * first.c(), h = first.h(), w = first.w();
  Tensor<float> x({clips.size(), ch, h, w});
  const float scale = value_scale(model), offset = value_offset(model);
  for (std::size_t b = 0; b < clips.size(); ++b) {
    check_clip_layout(*clips[b], model);
    if (!clips[b]->input.same_shape(first)) throw ShapeError("clips in a batch must share their shape");
    const auto collapsed = collapse_time(clips[b]->input);
    float* dst = x.plane(b, 0);
    for (std::size_t i = 0; i < collapsed.data.size(); ++i) dst[i] = (static_cast<float>(collapsed.data[i]) - offset) * scale;
  }
  auto [padded, rec] = nn::pad_spatial(x, model.spatial_multiple());
  if (record) *record = rec;
  return padded;
}

Tensor<float> target_tensor(const std::vector<const Clip*>& clips, const UNetConfig& model) {
  const auto& first = clips.front()->target;
  Tensor<float> y({clips.size(), first.t() * first.c(), first.h(), first.w()});
  const float scale = value_scale(model), offset = value_offset(model);
  for (std::size_t b = 0; b < clips.size(); ++b) {
    const auto& d = clips[b]->target.data();
    float* dst = y.plane(b, 0);
    for (std::size_t i = 0; i < d.size(); ++i) dst[i] = (static_cast<float>(d[i]) - offset) * scale;
  }
  return y;
}

std::vector<Frames> predict_batch(const UNetParams<float>& params, const std::vector<const Clip*>& clips) {
  const auto& model = params.config;
  nn::PadRecord rec;
  const auto x = input_tensor(clips, model, &rec);
  const auto y = nn::crop_spatial(unet_forward(params, x), rec);
  const double out_scale = 1.0 / value_scale(model), out_offset = value_offset(model);
  const std::size_t c = clips.front()->input.c();
  const std::size_t plane = rec.h * rec.w;
  std::vector<Frames> out;
  out.reserve(clips.size());
  for (std::size_t b = 0; b < clips.size(); ++b) {
    std::vector<std::uint8_t> cells(model.out_channels * plane);
    const float* src = y.plane(b, 0);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      cells[i] = round_to_u8(static_cast<double>(src[i]) * out_scale + out_offset);
    }
    out.push_back(expand_time(model.out_channels, rec.h, rec.w, std::move(cells), kTargetFrames, c));
  }
  return out;
}

Frames predict(const UNetParams<float>& params, const Clip& clip) {
  return std::move(predict_batch(params, {&clip}).front());
}

double train_loss(const UNetParams<float>& params, const std::vector<const Clip*>& clips) {
  nn::PadRecord rec;
  const auto x = input_tensor(clips, params.config, &rec);
  const auto y = nn::crop_spatial(unet_forward(params, x), rec);
  return nn::mse_loss(y, target_tensor(clips, params.config)).loss * loss_to_255(params.config);
}

// ---------------------------------------------------------------- training

namespace {

struct Batch {
  std::vector<Clip> clips;
  std::vector<const Clip*> ptrs() const {
    std::vector<const Clip*> p;
    for (const auto& c : clips) p.push_back(&c);
    return p;
  }
};

Batch load_batch(const MovieStore& store, const std::vector<ClipSpec>& specs, const std::vector<std::size_t>& order,
                 std::size_t first, std::size_t count) {
  Batch b;
  for (std::size_t i = first; i < first + count; ++i) b.clips.push_back(load_clip(specs[order[i]], store));
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x74346331u};
  std::mt19937_64 rng(seq);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

struct ValidationResult {
  double all = 0.0;
  double test_slots = std::numeric_limits<double>::quiet_NaN();
};

ValidationResult validate(const UNetParams<float>& params, const MovieStore& store, const std::vector<ClipSpec>& specs,
                          const std::set<std::size_t>& test_slots, std::size_t batch_size) {
  MetricsAccumulator all, hit;
  std::vector<std::size_t> order(specs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t first = 0; first < specs.size(); first += batch_size) {
    const std::size_t n = std::min(batch_size, specs.size() - first);
    const auto batch = load_batch(store, specs, order, first, n);
    const auto preds = predict_batch(params, batch.ptrs());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& clip = batch.clips[i];
      all.add(clip.spec.city, preds[i], clip.target);
      if (test_slots.contains(clip.spec.target_slot())) hit.add(clip.spec.city, preds[i], clip.target);
    }
  }
  ValidationResult r;
  r.all = all.result().overall;
  if (!hit.empty()) r.test_slots = hit.result().overall;
  return r;
}

}  // namespace

TrainResult train(const TrainOptions& options, const MovieStore& store, const std::vector<ClipSpec>& train_clips,
                  const std::vector<ClipSpec>& val_clips, const std::set<std::size_t>& test_slots,
                  std::optional<TrainState> resume) {
  options.model.validate();
  options.sgd.validate();
  if (train_clips.empty()) throw RangeError("no training clips");
  if (val_clips.empty()) throw RangeError("no validation clips");
  nn::set_num_threads(options.threads);

  const auto& sgd = options.sgd;
  TrainResult result;
  result.state = resume ? std::move(*resume) : TrainState::fresh(options.model, sgd.seed);
  if (!(result.state.params.config == options.model)) throw ShapeError("resumed state has a different model config");
  result.best = result.state.params;
  result.best_val_mse = std::numeric_limits<double>::infinity();

  bool warned = false;
  const double scale = loss_to_255(options.model);
  const std::size_t multiple = options.model.spatial_multiple();

  for (auto& state = result.state; state.epoch < sgd.epochs; ++state.epoch) {
    const double lr = lr_schedule(state.epoch, sgd);
    const auto order = epoch_order(train_clips.size(), state.seed, state.epoch);
    const std::size_t n_batches = (train_clips.size() + sgd.batch_size - 1) / sgd.batch_size;
    auto batch_at = [&](std::size_t b) {
      const std::size_t first = b * sgd.batch_size;
      return load_batch(store, train_clips, order, first, std::min(sgd.batch_size, train_clips.size() - first));
    };

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    bool stopped = false;
    // Clip loading runs one batch ahead; batches are consumed strictly in order.
    std::future<Batch> next = std::async(std::launch::async, batch_at, 0);
    for (std::size_t b = 0; b < n_batches; ++b) {
      Batch batch = next.get();
      if (b + 1 < n_batches) next = std::async(std::launch::async, batch_at, b + 1);

      const auto ptrs = batch.ptrs();
      nn::PadRecord rec;
      const auto x = input_tensor(ptrs, options.model, &rec);
      UNetTape<float> tape;
      const auto out = nn::crop_spatial(unet_forward(state.params, x, &tape), rec);
      auto loss = nn::mse_loss(out, target_tensor(ptrs, options.model));
      if (!std::isfinite(loss.loss)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(state.epoch) + ", step " +
                             std::to_string(state.step) + " (lr " + std::to_string(lr) + ")");
      }
      auto grad_out = nn::pad_spatial(loss.grad, multiple).first;
      const auto grads = unet_backward(state.params, tape, grad_out);
      try {
        sgd_step(state, grads.params, lr, sgd);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(state.epoch) + ", step " +
                             std::to_string(state.step));
      }
      loss_sum += loss.loss * scale * static_cast<double>(ptrs.size());
      loss_count += ptrs.size();
      if (options.max_steps && state.step >= options.max_steps) {
        stopped = true;
        break;
      }
    }
    if (stopped) {
      if (next.valid()) next.wait();
      break;
    }

    const auto val = validate(state.params, store, val_clips, test_slots, sgd.batch_size);
    if (std::isnan(val.test_slots) && !warned) {
      warned = true;
      if (options.on_warning && !test_slots.empty()) {
        options.on_warning("no validation clip falls on a test slot; logging NaN");
      }
    }
    EpochLog row{state.epoch, lr, loss_sum / static_cast<double>(loss_count), val.all, val.test_slots};
    result.log.push_back(row);
    if (val.all < result.best_val_mse) {
      result.best_val_mse = val.all;
      result.best = state.params;
    }
    if (options.on_epoch) options.on_epoch(row);
  }
  return result;
}

void write_epoch_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write epoch log " + path.string());
  out << "epoch,lr,train_mse,val_mse,val_test_slots_mse\n";
  out.precision(17);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.lr << ',' << r.train_mse << ',' << r.val_mse << ',';
    if (std::isnan(r.val_test_slots_mse)) {
      out << "NaN";
    } else {
      out << r.val_test_slots_mse;
    }
    out << '\n';
  }
}

}  // namespace t4c
