#include "t4c/movie_store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <utility>

namespace t4c {
namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  if (s.size() > 0xffff) throw FormatError("header string longer than 65535 bytes");
  put_u16(out, static_cast<std::uint16_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    std::size_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void magic() {
    need(4);
    if (std::memcmp(bytes_.data(), kMovieMagic, 4) != 0) throw FormatError("bad magic: not a TMM1 file");
    pos_ += 4;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("truncated TMM1 header");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void validate_dims(const MovieHeader& h) {
  if (h.version != kMovieVersion) throw FormatError("unsupported TMM1 version " + std::to_string(h.version));
  if (h.t == 0 || h.c == 0 || h.h == 0 || h.w == 0) throw FormatError("TMM1 dimensions must all be >= 1");
}

// pread until `n` bytes are read or EOF.
std::size_t read_at(int fd, std::uint8_t* dst, std::size_t n, std::size_t offset) {
  std::size_t done = 0;
  while (done < n) {
    ssize_t r = ::pread(fd, dst + done, n - done, static_cast<off_t>(offset + done));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("read failed: ") + std::strerror(errno));
    }
    if (r == 0) break;
    done += static_cast<std::size_t>(r);
  }
  return done;
}

}  // namespace

std::vector<std::uint8_t> encode_header(const MovieHeader& header) {
  std::vector<std::uint8_t> out;
  out.reserve(header.encoded_size());
  out.insert(out.end(), kMovieMagic, kMovieMagic + 4);
  put_u16(out, header.version);
  put_u16(out, header.c);
  put_u32(out, header.t);
  put_u32(out, header.h);
  put_u32(out, header.w);
  put_string(out, header.city);
  put_string(out, header.date);
  return out;
}

MovieHeader decode_header(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.magic();
  MovieHeader h;
  h.version = in.u16();
  h.c = in.u16();
  h.t = in.u32();
  h.h = in.u32();
  h.w = in.u32();
  h.city = in.str();
  h.date = in.str();
  validate_dims(h);
  return h;
}

void ingest(const Frames& frames, const std::string& city, const std::string& date,
            const std::filesystem::path& dest) {
  ingest_raw(frames.data(), frames.t(), frames.c(), frames.h(), frames.w(), city, date, dest);
}

void ingest_raw(std::span<const std::uint8_t> raw, std::size_t t, std::size_t c, std::size_t h, std::size_t w,
                const std::string& city, const std::string& date, const std::filesystem::path& dest) {
  if (t == 0 || c == 0 || h == 0 || w == 0) throw ShapeError("movie dimensions must all be >= 1");
  if (c > 0xffff || t > 0xffffffffu || h > 0xffffffffu || w > 0xffffffffu) {
    throw ShapeError("movie dimensions exceed the TMM1 field widths");
  }
  if (raw.size() != t * c * h * w) {
    throw ShapeError("raw buffer holds " + std::to_string(raw.size()) + " bytes, expected t*c*h*w = " +
                     std::to_string(t * c * h * w));
  }
  MovieHeader header;
  header.t = static_cast<std::uint32_t>(t);
  header.c = static_cast<std::uint16_t>(c);
  header.h = static_cast<std::uint32_t>(h);
  header.w = static_cast<std::uint32_t>(w);
  header.city = city;
  header.date = date;
  const auto head = encode_header(header);

  auto tmp = dest;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + dest.string());
    out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("short write to " + dest.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, dest, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move movie into place at " + dest.string());
  }
}

Movie Movie::open(const std::filesystem::path& path, ReadStats* stats) {
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
  try {
    struct stat st {};
    if (::fstat(fd, &st) != 0) throw IoError("cannot stat " + path.string());
    const auto file_size = static_cast<std::size_t>(st.st_size);

    // Fixed part plus the city length prefix, then the variable tail.
    std::vector<std::uint8_t> head(22);
    if (read_at(fd, head.data(), head.size(), 0) != head.size()) throw FormatError("truncated TMM1 header");
    if (std::memcmp(head.data(), kMovieMagic, 4) != 0) throw FormatError("bad magic: not a TMM1 file");
    const std::size_t city_len = head[20] | (head[21] << 8);
    head.resize(22 + city_len + 2);
    if (read_at(fd, head.data() + 22, city_len + 2, 22) != city_len + 2) throw FormatError("truncated TMM1 header");
    const std::size_t date_len = head[22 + city_len] | (head[23 + city_len] << 8);
    const std::size_t fixed = head.size();
    head.resize(fixed + date_len);
    if (read_at(fd, head.data() + fixed, date_len, fixed) != date_len) throw FormatError("truncated TMM1 header");

    MovieHeader header = decode_header(head);
    if (stats) {
      stats->header_bytes += head.size();
      stats->read_calls += 3;
    }
    const std::size_t expected = header.encoded_size() + header.payload_bytes();
    if (file_size != expected) {
      throw FormatError("TMM1 size mismatch in " + path.string() + ": file has " + std::to_string(file_size) +
                        " bytes, header implies " + std::to_string(expected) +
                        (file_size < expected ? " (truncated)" : " (trailing data)"));
    }
    return Movie(fd, path, std::move(header), stats);
  } catch (...) {
    ::close(fd);
    throw;
  }
}

Movie::Movie(Movie&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)),
      path_(std::move(other.path_)),
      header_(std::move(other.header_)),
      stats_(other.stats_) {}

Movie& Movie::operator=(Movie&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    path_ = std::move(other.path_);
    header_ = std::move(other.header_);
    stats_ = other.stats_;
  }
  return *this;
}

Movie::~Movie() {
  if (fd_ >= 0) ::close(fd_);
}

Frames Movie::read_frames(std::size_t t_start, std::size_t count) const {
  if (count == 0 || t_start >= header_.t || count > header_.t - t_start) {
    throw RangeError("frame range [" + std::to_string(t_start) + ", " + std::to_string(t_start + count) +
                     ") outside movie of " + std::to_string(header_.t) + " frames");
  }
  const std::size_t chunk = header_.frame_bytes();
  std::vector<std::uint8_t> buf(count * chunk);
  const std::size_t offset = header_.encoded_size() + t_start * chunk;
  if (read_at(fd_, buf.data(), buf.size(), offset) != buf.size()) {
    throw IoError("unexpected end of file in " + path_.string());
  }
  if (stats_) {
    stats_->payload_bytes += buf.size();
    stats_->read_calls += 1;
  }
  return Frames(count, header_.c, header_.h, header_.w, std::move(buf));
}

}  // namespace t4c
