#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "t4c/frames.hpp"

namespace t4c {

struct Metrics {
  double overall = 0.0;
  std::vector<double> per_frame;    // per prediction horizon
  std::vector<double> per_channel;
  std::map<std::string, double> per_city;
  std::size_t clips = 0;
  std::uint64_t elements = 0;
};

// Exact accumulation of squared errors over uint8 predictions. Sums are
// integers, so the result does not depend on the order clips are added.
class MetricsAccumulator {
 public:
  void add(const std::string& city, const Frames& prediction, const Frames& truth);
  void merge(const MetricsAccumulator& other);
  Metrics result() const;
  bool empty() const { return clips_ == 0; }

 private:
  struct Cell {
    std::uint64_t sse = 0;
    std::uint64_t n = 0;
  };
  std::size_t t_ = 0, c_ = 0;
  std::size_t clips_ = 0;
  Cell overall_;
  std::vector<Cell> frame_, channel_;
  std::map<std::string, Cell> city_;
};

Metrics evaluate(const std::vector<Frames>& predictions, const std::vector<Frames>& truths,
                 const std::vector<std::string>& cities = {});

// JSON report with overall / per_frame / per_channel / per_city fields.
std::string metrics_json(const Metrics& m, unsigned threads);

}  // namespace t4c
