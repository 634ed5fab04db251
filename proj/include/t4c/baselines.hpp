#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "t4c/dataset.hpp"
#include "t4c/frames.hpp"

namespace t4c {

// Per-slot mean frames over the training days, kept as exact 64-bit sums and
// observation counts so that accumulation order never matters.
class SlotAverageModel {
 public:
  SlotAverageModel() = default;
  SlotAverageModel(std::size_t c, std::size_t h, std::size_t w, const std::set<std::size_t>& slots);

  // Adds one day's frame for `slot`.
  void accumulate(std::size_t slot, std::span<const std::uint8_t> frame);
  // Adds another model's sums and counts. Both must cover the same slots.
  void merge(const SlotAverageModel& other);

  bool covers(std::size_t slot) const { return sums_.contains(slot); }
  std::uint64_t count(std::size_t slot) const;
  const std::vector<std::uint64_t>& sums(std::size_t slot) const;
  // Real-valued mean frame (c, h, w) for `slot`.
  std::vector<double> mean(std::size_t slot) const;
  std::set<std::size_t> slots() const;

  std::size_t c() const { return c_; }
  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }

  friend bool operator==(const SlotAverageModel&, const SlotAverageModel&) = default;

 private:
  std::size_t c_ = 0, h_ = 0, w_ = 0;
  std::map<std::size_t, std::vector<std::uint64_t>> sums_;
  std::map<std::size_t, std::uint64_t> counts_;
};

// Builds the model from whole-day movies. `threads` > 1 partitions the days and
// merges partial sums; the result equals the sequential one.
SlotAverageModel time_slot_average(const std::vector<Frames>& train_days, const std::set<std::size_t>& slots,
                                   unsigned threads = 1);
SlotAverageModel time_slot_average(const MovieStore& store, const std::string& city,
                                   const std::set<std::size_t>& slots, unsigned threads = 1);

Frames predict_slot_average(const SlotAverageModel& model, const ClipSpec& spec);
Frames persistence(const Clip& clip);
Frames zero_baseline(const Clip& clip);

// Model file: TMM1 with one frame per covered slot (rounded means, date
// "MODEL") plus a slot list sidecar at `<path>.slots`. Loading yields a model
// whose means equal the stored rounded means.
void save_slot_average(const SlotAverageModel& model, const std::string& city, const std::filesystem::path& path);
SlotAverageModel load_slot_average(const std::filesystem::path& path);

}  // namespace t4c
