#pragma once

// TMM1 container: a fixed-layout, uncompressed store for one day of traffic
// frames. Layout (all integers little-endian):
//
//   bytes 0-3   magic "TMM1"
//   u16         version (= 1)
//   u16         c
//   u32         t
//   u32         h
//   u32         w
//   u16 + bytes city (UTF-8)
//   u16 + bytes date (UTF-8, ISO-8601)
//   t chunks of c*h*w uint8 cells, each chunk in (c, h, w) row-major order
//
// Chunk i starts at header_size + i*c*h*w. There is no padding.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>

#include "t4c/frames.hpp"

namespace t4c {

inline constexpr char kMovieMagic[4] = {'T', 'M', 'M', '1'};
inline constexpr std::uint16_t kMovieVersion = 1;

struct MovieHeader {
  std::uint16_t version = kMovieVersion;
  std::uint32_t t = 0;
  std::uint16_t c = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::string city;
  std::string date;

  std::size_t frame_bytes() const { return std::size_t{c} * h * w; }
  std::size_t payload_bytes() const { return frame_bytes() * t; }
  // Encoded size of the header, which is where frame 0 begins.
  std::size_t encoded_size() const { return 24 + city.size() + date.size(); }

  friend bool operator==(const MovieHeader&, const MovieHeader&) = default;
};

// Byte counters for the I/O layer. Readers add to these atomically so one
// instance can be shared by several threads.
struct ReadStats {
  std::atomic<std::uint64_t> header_bytes{0};
  std::atomic<std::uint64_t> payload_bytes{0};
  std::atomic<std::uint64_t> read_calls{0};

  void reset() {
    header_bytes = 0;
    payload_bytes = 0;
    read_calls = 0;
  }
};

// Writes `frames` as a TMM1 file. The file is written to a temporary sibling
// and renamed into place.
void ingest(const Frames& frames, const std::string& city, const std::string& date,
            const std::filesystem::path& dest);

// Ingest from a headerless byte buffer with declared dimensions.
void ingest_raw(std::span<const std::uint8_t> raw, std::size_t t, std::size_t c, std::size_t h, std::size_t w,
                const std::string& city, const std::string& date, const std::filesystem::path& dest);

// Read-only handle to a TMM1 file. Opening parses and validates the header
// only; frames are read on demand with positional reads, so a handle may be
// shared between threads.
class Movie {
 public:
  static Movie open(const std::filesystem::path& path, ReadStats* stats = nullptr);

  Movie(Movie&& other) noexcept;
  Movie& operator=(Movie&& other) noexcept;
  Movie(const Movie&) = delete;
  Movie& operator=(const Movie&) = delete;
  ~Movie();

  const MovieHeader& header() const { return header_; }
  const std::filesystem::path& path() const { return path_; }

  // Frames [t_start, t_start + count). Touches exactly count*c*h*w payload bytes.
  Frames read_frames(std::size_t t_start, std::size_t count) const;
  Frames read_all() const { return read_frames(0, header_.t); }

  void set_stats(ReadStats* stats) { stats_ = stats; }

 private:
  Movie(int fd, std::filesystem::path path, MovieHeader header, ReadStats* stats)
      : fd_(fd), path_(std::move(path)), header_(std::move(header)), stats_(stats) {}

  int fd_ = -1;
  std::filesystem::path path_;
  MovieHeader header_;
  ReadStats* stats_ = nullptr;
};

// Header encode/decode, exposed for tests and tooling.
std::vector<std::uint8_t> encode_header(const MovieHeader& header);
MovieHeader decode_header(std::span<const std::uint8_t> bytes);

}  // namespace t4c
