#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <vector>

#include "t4c/dataset.hpp"
#include "t4c/unet.hpp"

namespace t4c {

struct SGDConfig {
  double lr_initial = 0.02;
  double lr_after_drop = 0.001;
  std::size_t drop_epoch = 5;  // epochs [0, drop_epoch) use lr_initial
  double momentum = 0.9;
  bool nesterov = true;
  std::size_t batch_size = 5;
  std::size_t epochs = 12;
  std::uint64_t seed = 0;

  void validate() const;
};

double lr_schedule(std::size_t epoch, const SGDConfig& config);

struct TrainState {
  UNetParams<float> params;
  UNetParams<float> velocity;  // same layout as params
  std::size_t epoch = 0;       // next epoch to run
  std::uint64_t step = 0;
  std::uint64_t seed = 0;      // epoch shuffles derive from (seed, epoch)

  static TrainState fresh(const UNetConfig& model, std::uint64_t seed);
};

// Optimizer state file "UTS1": magic, u32 epoch, u64 step, u64 seed, then the
// parameters and the velocity as two UNP1 blocks.
void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

// v <- momentum * v + g, then p <- p - lr * (g + momentum * v) with Nesterov,
// or p <- p - lr * v without. Throws NumericalError on a non-finite gradient.
template <class T>
void sgd_update(std::span<Tensor<T>* const> params, std::span<Tensor<T>* const> velocity,
                std::span<const Tensor<T>* const> grads, double lr, double momentum, bool nesterov);

void sgd_step(TrainState& state, const UNetParams<float>& grads, double lr, const SGDConfig& config);

// Network input for a batch of clips: (n, t*c, H', W') after collapse and
// padding to the network's spatial multiple, scaled if the model normalizes.
Tensor<float> input_tensor(const std::vector<const Clip*>& clips, const UNetConfig& model, nn::PadRecord* record);
// Regression target (n, 3*c, h, w) on the network's value scale.
Tensor<float> target_tensor(const std::vector<const Clip*>& clips, const UNetConfig& model);

// Three predicted frames per clip: collapse, pad, forward, crop, expand,
// clamp to [0, 255], round half-up.
std::vector<Frames> predict_batch(const UNetParams<float>& params, const std::vector<const Clip*>& clips);
Frames predict(const UNetParams<float>& params, const Clip& clip);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double val_test_slots_mse = 0.0;  // NaN when no validation clip hits a test slot
};

struct TrainResult {
  TrainState state;
  UNetParams<float> best;  // lowest full-validation MSE
  double best_val_mse = 0.0;
  std::vector<EpochLog> log;
};

struct TrainOptions {
  UNetConfig model;
  SGDConfig sgd;
  unsigned threads = 1;
  // Stop after this many optimizer steps (0 = run all epochs). The log only
  // contains completed epochs.
  std::uint64_t max_steps = 0;
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const std::string&)> on_warning;
};

// Trains on clips from `store`. Loss is the MSE of unclamped network output;
// validation columns are MSEs of the uint8 predictions on the 0-255 scale.
TrainResult train(const TrainOptions& options, const MovieStore& store, const std::vector<ClipSpec>& train_clips,
                  const std::vector<ClipSpec>& val_clips, const std::set<std::size_t>& test_slots,
                  std::optional<TrainState> resume = std::nullopt);

// Mean training loss on the 0-255 scale over `clips` with the given params.
double train_loss(const UNetParams<float>& params, const std::vector<const Clip*>& clips);

void write_epoch_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace t4c
