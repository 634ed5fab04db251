#include "t4c/evaluate.hpp"

#include <json.hpp>

namespace t4c {

void MetricsAccumulator::add(const std::string& city, const Frames& prediction, const Frames& truth) {
  if (!prediction.same_shape(truth)) throw ShapeError("prediction and truth shapes differ");
  if (clips_ == 0) {
    t_ = truth.t();
    c_ = truth.c();
    frame_.assign(t_, {});
    channel_.assign(c_, {});
  } else if (truth.t() != t_ || truth.c() != c_) {
    throw ShapeError("all evaluated clips must share (t, c)");
  }
  const std::size_t plane = truth.h() * truth.w();
  const auto& p = prediction.data();
  const auto& g = truth.data();
  auto& city_cell = city_[city];
  for (std::size_t ti = 0; ti < t_; ++ti) {
    for (std::size_t ci = 0; ci < c_; ++ci) {
      const std::size_t base = (ti * c_ + ci) * plane;
      std::uint64_t sse = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        const int d = int{p[base + i]} - int{g[base + i]};
        sse += static_cast<std::uint64_t>(d * d);
      }
      for (Cell* cell : {&overall_, &frame_[ti], &channel_[ci], &city_cell}) {
        cell->sse += sse;
        cell->n += plane;
      }
    }
  }
  ++clips_;
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
  if (other.clips_ == 0) return;
  if (clips_ == 0) {
    *this = other;
    return;
  }
  if (other.t_ != t_ || other.c_ != c_) throw ShapeError("cannot merge metrics of different layout");
  auto add_cell = [](Cell& a, const Cell& b) {
    a.sse += b.sse;
    a.n += b.n;
  };
  add_cell(overall_, other.overall_);
  for (std::size_t i = 0; i < t_; ++i) add_cell(frame_[i], other.frame_[i]);
  for (std::size_t i = 0; i < c_; ++i) add_cell(channel_[i], other.channel_[i]);
  for (const auto& [city, cell] : other.city_) add_cell(city_[city], cell);
  clips_ += other.clips_;
}

Metrics MetricsAccumulator::result() const {
  if (clips_ == 0) throw RangeError("no clips were evaluated");
  auto mse = [](const Cell& c) { return static_cast<double>(c.sse) / static_cast<double>(c.n); };
  Metrics m;
  m.overall = mse(overall_);
  for (const auto& c : frame_) m.per_frame.push_back(mse(c));
  for (const auto& c : channel_) m.per_channel.push_back(mse(c));
  for (const auto& [city, c] : city_) m.per_city[city] = mse(c);
  m.clips = clips_;
  m.elements = overall_.n;
  return m;
}

Metrics evaluate(const std::vector<Frames>& predictions, const std::vector<Frames>& truths,
                 const std::vector<std::string>& cities) {
  if (predictions.size() != truths.size()) throw ShapeError("prediction and truth counts differ");
  if (!cities.empty() && cities.size() != truths.size()) throw ShapeError("one city per clip expected");
  MetricsAccumulator acc;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    acc.add(cities.empty() ? std::string("all") : cities[i], predictions[i], truths[i]);
  }
  return acc.result();
}

std::string metrics_json(const Metrics& m, unsigned threads) {
  nlohmann::ordered_json j;
  j["overall"] = m.overall;
  j["per_frame"] = m.per_frame;
  j["per_channel"] = m.per_channel;
  j["per_city"] = m.per_city;
  j["clips"] = m.clips;
  j["elements"] = m.elements;
  j["threads"] = threads;
  return j.dump(2) + "\n";
}

}  // namespace t4c
