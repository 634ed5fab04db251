#include "t4c/baselines.hpp"

#include <cmath>
#include <thread>

namespace t4c {

SlotAverageModel::SlotAverageModel(std::size_t c, std::size_t h, std::size_t w, const std::set<std::size_t>& slots)
    : c_(c), h_(h), w_(w) {
  if (slots.empty()) throw RangeError("slot average needs at least one slot");
  for (auto s : slots) {
    sums_.emplace(s, std::vector<std::uint64_t>(c * h * w, 0));
    counts_.emplace(s, 0);
  }
}

void SlotAverageModel::accumulate(std::size_t slot, std::span<const std::uint8_t> frame) {
  auto it = sums_.find(slot);
  if (it == sums_.end()) throw RangeError("slot " + std::to_string(slot) + " not tracked by this model");
  if (frame.size() != it->second.size()) throw ShapeError("frame size does not match the slot average model");
  auto& sum = it->second;
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += frame[i];
  counts_[slot] += 1;
}

void SlotAverageModel::merge(const SlotAverageModel& other) {
  if (other.c_ != c_ || other.h_ != h_ || other.w_ != w_ || other.slots() != slots()) {
    throw ShapeError("cannot merge slot average models of different layout");
  }
  for (auto& [slot, sum] : sums_) {
    const auto& o = other.sums_.at(slot);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += o[i];
    counts_[slot] += other.counts_.at(slot);
  }
}

std::uint64_t SlotAverageModel::count(std::size_t slot) const {
  auto it = counts_.find(slot);
  if (it == counts_.end()) throw RangeError("slot " + std::to_string(slot) + " not covered by the model");
  return it->second;
}

const std::vector<std::uint64_t>& SlotAverageModel::sums(std::size_t slot) const {
  auto it = sums_.find(slot);
  if (it == sums_.end()) throw RangeError("slot " + std::to_string(slot) + " not covered by the model");
  return it->second;
}

std::vector<double> SlotAverageModel::mean(std::size_t slot) const {
  const auto n = count(slot);
  if (n == 0) throw RangeError("slot " + std::to_string(slot) + " has zero observations");
  const auto& sum = sums(slot);
  std::vector<double> out(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) out[i] = static_cast<double>(sum[i]) / static_cast<double>(n);
  return out;
}

std::set<std::size_t> SlotAverageModel::slots() const {
  std::set<std::size_t> out;
  for (const auto& [s, _] : sums_) out.insert(s);
  return out;
}

namespace {

void accumulate_day(SlotAverageModel& model, const Frames& day) {
  for (auto slot : model.slots()) {
    if (slot < day.t()) model.accumulate(slot, day.frame(slot));
  }
}

void check_zero_counts(const SlotAverageModel& model) {
  for (auto slot : model.slots()) {
    if (model.count(slot) == 0) throw RangeError("slot " + std::to_string(slot) + " has zero observations");
  }
}

}  // namespace

SlotAverageModel time_slot_average(const std::vector<Frames>& train_days, const std::set<std::size_t>& slots,
                                   unsigned threads) {
  if (train_days.empty()) throw RangeError("slot average needs at least one training day");
  const auto& first = train_days.front();
  for (const auto& d : train_days) {
    if (d.c() != first.c() || d.h() != first.h() || d.w() != first.w()) {
      throw ShapeError("training days differ in grid shape");
    }
  }
  SlotAverageModel model(first.c(), first.h(), first.w(), slots);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(train_days.size())));
  if (threads == 1) {
    for (const auto& d : train_days) accumulate_day(model, d);
  } else {
    std::vector<SlotAverageModel> partial(threads, SlotAverageModel(first.c(), first.h(), first.w(), slots));
    {
      std::vector<std::jthread> workers;
      for (unsigned k = 0; k < threads; ++k) {
        workers.emplace_back([&, k] {
          for (std::size_t d = k; d < train_days.size(); d += threads) accumulate_day(partial[k], train_days[d]);
        });
      }
    }
    for (const auto& p : partial) model.merge(p);
  }
  check_zero_counts(model);
  return model;
}

SlotAverageModel time_slot_average(const MovieStore& store, const std::string& city,
                                   const std::set<std::size_t>& slots, unsigned threads) {
  std::vector<Frames> days;
  for (const Movie* m : store.movies()) {
    if (m->header().city == city) days.push_back(m->read_all());
  }
  if (days.empty()) throw RangeError("no training days for city '" + city + "'");
  return time_slot_average(days, slots, threads);
}

Frames predict_slot_average(const SlotAverageModel& model, const ClipSpec& spec) {
  Frames out(kTargetFrames, model.c(), model.h(), model.w());
  for (std::size_t j = 0; j < kTargetFrames; ++j) {
    const std::size_t slot = spec.target_slot() + j;
    if (!model.covers(slot)) throw RangeError("slot " + std::to_string(slot) + " not covered by the model");
    const auto mean = model.mean(slot);
    auto frame = out.frame(j);
    for (std::size_t i = 0; i < mean.size(); ++i) frame[i] = round_to_u8(mean[i]);
  }
  if (spec.region) {
    const auto& r = *spec.region;
    return out.crop(r.row0, r.col0, r.rows, r.cols);
  }
  return out;
}

Frames persistence(const Clip& clip) {
  const auto& in = clip.input;
  Frames out(kTargetFrames, in.c(), in.h(), in.w());
  const auto last = in.frame(in.t() - 1);
  for (std::size_t j = 0; j < kTargetFrames; ++j) std::copy(last.begin(), last.end(), out.frame(j).begin());
  return out;
}

Frames zero_baseline(const Clip& clip) {
  return Frames(kTargetFrames, clip.input.c(), clip.input.h(), clip.input.w(), std::uint8_t{0});
}

void save_slot_average(const SlotAverageModel& model, const std::string& city, const std::filesystem::path& path) {
  const auto slots = model.slots();
  Frames frames(slots.size(), model.c(), model.h(), model.w());
  std::size_t i = 0;
  for (auto s : slots) {
    const auto mean = model.mean(s);
    auto f = frames.frame(i++);
    for (std::size_t k = 0; k < mean.size(); ++k) f[k] = round_to_u8(mean[k]);
  }
  ingest(frames, city, "MODEL", path);
  auto sidecar = path;
  sidecar += ".slots";
  write_slot_file(sidecar, slots);
}

SlotAverageModel load_slot_average(const std::filesystem::path& path) {
  auto movie = Movie::open(path);
  auto sidecar = path;
  sidecar += ".slots";
  const auto slots = read_slot_file(sidecar);
  if (slots.size() != movie.header().t) throw FormatError("slot sidecar does not match the model frame count");
  const auto frames = movie.read_all();
  SlotAverageModel model(frames.c(), frames.h(), frames.w(), slots);
  std::size_t i = 0;
  for (auto s : slots) model.accumulate(s, frames.frame(i++));
  return model;
}

}  // namespace t4c
