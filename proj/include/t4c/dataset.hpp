#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "t4c/frames.hpp"
#include "t4c/movie_store.hpp"

namespace t4c {

inline constexpr std::size_t kSlotsPerDay = 288;
inline constexpr std::size_t kInputFrames = 12;
inline constexpr std::size_t kTargetFrames = 3;
inline constexpr std::size_t kClipFrames = kInputFrames + kTargetFrames;

struct Region {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const Region&, const Region&) = default;
};

struct ClipSpec {
  std::string city;
  std::string day;  // ISO-8601 date, as stored in the movie header
  std::size_t t_start = 0;
  std::optional<Region> region;

  // Slot of the first predicted frame.
  std::size_t target_slot() const { return t_start + kInputFrames; }
  friend bool operator==(const ClipSpec&, const ClipSpec&) = default;
};

struct Clip {
  Frames input;   // (12, c, h, w)
  Frames target;  // (3, c, h, w)
  ClipSpec spec;
};

// Input frames stacked along channels: data[k] holds source frame k / c,
// channel k % c.
struct CollapsedSample {
  std::size_t t = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> data;  // (t*c, h, w)

  std::size_t channels() const { return t * c; }
};

struct TemporalFeatures {
  int day_of_week = 0;  // Monday = 0
  std::size_t slot_of_day = 0;
  double slot_norm = 0.0;
};

// Collection of per-day movies keyed by (city, date).
class MovieStore {
 public:
  MovieStore() = default;

  // Registers every *.tmm file in `dir`. Throws IoError if the directory is
  // missing and FormatError on an invalid file.
  static MovieStore scan(const std::filesystem::path& dir, ReadStats* stats = nullptr);

  void add(const std::filesystem::path& path, ReadStats* stats = nullptr);

  const Movie& get(const std::string& city, const std::string& day) const;
  bool contains(const std::string& city, const std::string& day) const;
  std::vector<MovieHeader> headers() const;
  std::vector<const Movie*> movies() const;
  std::set<std::string> cities() const;
  bool empty() const { return movies_.empty(); }
  std::size_t size() const { return movies_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, std::shared_ptr<Movie>> movies_;
};

struct EnumerateOptions {
  std::size_t stride = 1;
  // When set, keep only clips whose first predicted slot is listed.
  std::optional<std::set<std::size_t>> test_slots;
  std::optional<Region> region;
};

// Clip specs sorted by (city, day, t_start). Clips never cross a day boundary.
std::vector<ClipSpec> enumerate_clips(const std::vector<MovieHeader>& movies, const EnumerateOptions& options = {});

Clip load_clip(const ClipSpec& spec, const MovieStore& store);
Clip split_clip(const Frames& fifteen, ClipSpec spec);

CollapsedSample collapse_time(const Frames& frames);
Frames expand_time(const CollapsedSample& sample);
// Reinterpret a (t*c, h, w) buffer as (t, c, h, w); errors if the channel
// count is not t*c.
Frames expand_time(std::size_t channels, std::size_t h, std::size_t w, std::vector<std::uint8_t> data,
                   std::size_t t, std::size_t c);

TemporalFeatures temporal_features(const ClipSpec& spec);
// 0 = Monday ... 6 = Sunday. Throws FormatError on an unparsable date.
int day_of_week(const std::string& iso_date);
// ISO date `days` after `iso_date`.
std::string add_days(const std::string& iso_date, int days);

enum class SynthKind { constant, time_ramp, slot_pattern, random };
SynthKind parse_synth_kind(const std::string& name);

struct SynthOptions {
  SynthKind kind = SynthKind::constant;
  std::uint64_t seed = 0;
  std::uint8_t constant_value = 0;
  // Day index within a generated series. Only the random kind and the
  // slot_pattern noise depend on it.
  std::uint64_t day = 0;
  // Amplitude of zero-mean integer noise added to the volume and speed
  // channels of slot_pattern movies. 0 keeps frames a pure function of slot.
  int noise = 0;
};

// Desk-scale generator. Channel 2 (heading) only ever holds 0, 85, 170 or 255
// for the structured kinds.
Frames synth_movie(const SynthOptions& options, std::size_t t, std::size_t c, std::size_t h, std::size_t w);

// Test-slot filter file: one slot index (0-287) per line.
std::set<std::size_t> read_slot_file(const std::filesystem::path& path);
void write_slot_file(const std::filesystem::path& path, const std::set<std::size_t>& slots);

}  // namespace t4c
