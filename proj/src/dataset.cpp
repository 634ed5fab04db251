#include "t4c/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>

namespace t4c {

// ---------------------------------------------------------------- store

MovieStore MovieStore::scan(const std::filesystem::path& dir, ReadStats* stats) {
  if (!std::filesystem::is_directory(dir)) throw IoError("data directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".tmm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  MovieStore store;
  for (const auto& f : files) store.add(f, stats);
  return store;
}

void MovieStore::add(const std::filesystem::path& path, ReadStats* stats) {
  auto movie = std::make_shared<Movie>(Movie::open(path, stats));
  auto key = std::make_pair(movie->header().city, movie->header().date);
  if (movies_.contains(key)) {
    throw FormatError("duplicate movie for " + key.first + " " + key.second + ": " + path.string());
  }
  movies_.emplace(std::move(key), std::move(movie));
}

const Movie& MovieStore::get(const std::string& city, const std::string& day) const {
  auto it = movies_.find({city, day});
  if (it == movies_.end()) throw RangeError("no movie for city '" + city + "' on " + day);
  return *it->second;
}

bool MovieStore::contains(const std::string& city, const std::string& day) const {
  return movies_.contains({city, day});
}

std::vector<MovieHeader> MovieStore::headers() const {
  std::vector<MovieHeader> out;
  out.reserve(movies_.size());
  for (const auto& [key, movie] : movies_) out.push_back(movie->header());
  return out;
}

std::vector<const Movie*> MovieStore::movies() const {
  std::vector<const Movie*> out;
  for (const auto& [key, movie] : movies_) out.push_back(movie.get());
  return out;
}

std::set<std::string> MovieStore::cities() const {
  std::set<std::string> out;
  for (const auto& [key, movie] : movies_) out.insert(key.first);
  return out;
}

// ---------------------------------------------------------------- clips

std::vector<ClipSpec> enumerate_clips(const std::vector<MovieHeader>& movies, const EnumerateOptions& options) {
  if (movies.empty()) throw RangeError("cannot enumerate clips over an empty movie set");
  if (options.stride == 0) throw RangeError("clip stride must be >= 1");

  auto sorted = movies;
  std::sort(sorted.begin(), sorted.end(), [](const MovieHeader& a, const MovieHeader& b) {
    return std::tie(a.city, a.date) < std::tie(b.city, b.date);
  });

  std::vector<ClipSpec> out;
  for (const auto& m : sorted) {
    if (options.region) {
      const auto& r = *options.region;
      if (r.rows == 0 || r.cols == 0 || r.row0 + r.rows > m.h || r.col0 + r.cols > m.w) {
        throw RangeError("region outside the grid of " + m.city + " " + m.date);
      }
    }
    if (m.t < kClipFrames) continue;
    for (std::size_t t0 = 0; t0 + kClipFrames <= m.t; t0 += options.stride) {
      if (options.test_slots && !options.test_slots->contains(t0 + kInputFrames)) continue;
      out.push_back(ClipSpec{m.city, m.date, t0, options.region});
    }
  }
  return out;
}

Clip split_clip(const Frames& fifteen, ClipSpec spec) {
  if (fifteen.t() != kClipFrames) throw ShapeError("a clip needs exactly 15 frames");
  return Clip{fifteen.slice(0, kInputFrames), fifteen.slice(kInputFrames, kTargetFrames), std::move(spec)};
}

Clip load_clip(const ClipSpec& spec, const MovieStore& store) {
  const Movie& movie = store.get(spec.city, spec.day);
  if (spec.t_start + kClipFrames > movie.header().t) {
    throw RangeError("clip starting at frame " + std::to_string(spec.t_start) + " runs past the end of the day (" +
                     std::to_string(movie.header().t) + " frames)");
  }
  Frames frames = movie.read_frames(spec.t_start, kClipFrames);
  if (spec.region) {
    const auto& r = *spec.region;
    frames = frames.crop(r.row0, r.col0, r.rows, r.cols);
  }
  return split_clip(frames, spec);
}

// ---------------------------------------------------------------- collapse

CollapsedSample collapse_time(const Frames& frames) {
  // (t, c, h, w) row-major already has frame-major, channel-minor plane order.
  return CollapsedSample{frames.t(), frames.c(), frames.h(), frames.w(), frames.data()};
}

Frames expand_time(std::size_t channels, std::size_t h, std::size_t w, std::vector<std::uint8_t> data,
                   std::size_t t, std::size_t c) {
  if (t == 0 || c == 0 || channels != t * c) {
    throw ShapeError(std::to_string(channels) + " channels cannot be split into t=" + std::to_string(t) +
                     " frames of c=" + std::to_string(c) + " channels");
  }
  return Frames(t, c, h, w, std::move(data));
}

Frames expand_time(const CollapsedSample& sample) {
  return expand_time(sample.data.size() / std::max<std::size_t>(1, sample.h * sample.w), sample.h, sample.w,
                     sample.data, sample.t, sample.c);
}

// ---------------------------------------------------------------- calendar

namespace {

std::chrono::year_month_day parse_date(const std::string& iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (iso.size() != 10 || std::sscanf(iso.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
    throw FormatError("unparsable date '" + iso + "', expected YYYY-MM-DD");
  }
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw FormatError("invalid calendar date '" + iso + "'");
  return ymd;
}

}  // namespace

int day_of_week(const std::string& iso_date) {
  const std::chrono::weekday wd{std::chrono::sys_days{parse_date(iso_date)}};
  return static_cast<int>(wd.iso_encoding()) - 1;
}

std::string add_days(const std::string& iso_date, int days) {
  const std::chrono::year_month_day ymd{std::chrono::sys_days{parse_date(iso_date)} + std::chrono::days{days}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

TemporalFeatures temporal_features(const ClipSpec& spec) {
  TemporalFeatures f;
  f.day_of_week = day_of_week(spec.day);
  f.slot_of_day = spec.target_slot() % kSlotsPerDay;
  f.slot_norm = static_cast<double>(f.slot_of_day) / static_cast<double>(kSlotsPerDay);
  return f;
}

// ---------------------------------------------------------------- synth

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "constant") return SynthKind::constant;
  if (name == "time_ramp") return SynthKind::time_ramp;
  if (name == "slot_pattern") return SynthKind::slot_pattern;
  if (name == "random") return SynthKind::random;
  throw FormatError("unknown synth kind '" + name + "' (constant, time_ramp, slot_pattern, random)");
}

namespace {

constexpr std::size_t kHeadingChannel = 2;

std::uint8_t heading_class(std::size_t k) { return static_cast<std::uint8_t>(85 * (k % 4)); }

std::mt19937_64 day_rng(std::uint64_t seed, std::uint64_t day) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(day), static_cast<std::uint32_t>(day >> 32)};
  return std::mt19937_64(seq);
}

// Noise-free slot_pattern value. Volume rises and speed falls linearly over
// the day on top of a fixed spatial texture; heading is a static class map.
int slot_pattern_value(std::size_t slot, std::size_t ch, std::size_t y, std::size_t x) {
  const double s = static_cast<double>(slot % kSlotsPerDay) / static_cast<double>(kSlotsPerDay - 1);
  switch (ch) {
    case 1:
      return static_cast<int>(200.0 - 80.0 * s - 10.0 * static_cast<double>((x + 2 * y) % 3) + 0.5);
    case kHeadingChannel:
      return heading_class(y / 2 + x / 2);
    default:
      return static_cast<int>(20.0 + 60.0 * s + 5.0 * static_cast<double>((7 * y + 3 * x) % 5) + 0.5);
  }
}

}  // namespace

Frames synth_movie(const SynthOptions& options, std::size_t t, std::size_t c, std::size_t h, std::size_t w) {
  if (t == 0 || c == 0 || h == 0 || w == 0) throw ShapeError("synthetic movie dimensions must be >= 1");
  Frames out(t, c, h, w);
  switch (options.kind) {
    case SynthKind::constant:
      std::fill(out.data().begin(), out.data().end(), options.constant_value);
      break;
    case SynthKind::time_ramp:
      for (std::size_t i = 0; i < t; ++i) {
        auto f = out.frame(i);
        std::fill(f.begin(), f.end(), static_cast<std::uint8_t>(i % 256));
      }
      break;
    case SynthKind::slot_pattern: {
      auto rng = day_rng(options.seed, options.day);
      const auto span = static_cast<std::uint64_t>(2 * std::max(options.noise, 0) + 1);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
              int v = slot_pattern_value(i, ch, y, x);
              if (options.noise > 0 && ch != kHeadingChannel) {
                v += static_cast<int>(rng() % span) - options.noise;
              }
              out.at(i, ch, y, x) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
            }
      break;
    }
    case SynthKind::random: {
      auto rng = day_rng(options.seed, options.day);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
              const auto r = rng();
              out.at(i, ch, y, x) =
                  ch == kHeadingChannel ? heading_class(static_cast<std::size_t>(r >> 62)) : static_cast<std::uint8_t>(r >> 56);
            }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------- slot files

std::set<std::size_t> read_slot_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read slot file " + path.string());
  std::set<std::size_t> slots;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(line.data() + first, line.data() + line.size(), v);
    if (ec != std::errc{} || ptr != line.data() + line.size() || v >= kSlotsPerDay) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected a slot index 0-287");
    }
    slots.insert(v);
  }
  return slots;
}

void write_slot_file(const std::filesystem::path& path, const std::set<std::size_t>& slots) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write slot file " + path.string());
  for (auto s : slots) out << s << '\n';
}

}  // namespace t4c
