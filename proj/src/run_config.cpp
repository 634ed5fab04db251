#include "t4c/run_config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace t4c {
namespace {

using nlohmann::json;

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw FormatError("unknown config key '" + where + key + "'");
  }
}

template <class V>
void read(const json& obj, const char* key, V& out) {
  if (obj.contains(key)) out = obj.at(key).get<V>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  RunConfig c;
  try {
    const json root = json::parse(json_text);
    if (!root.is_object()) throw FormatError("config must be a JSON object");
    reject_unknown(root, {"model", "sgd", "data", "threads", "max_steps"}, "");
    read(root, "threads", c.threads);
    read(root, "max_steps", c.max_steps);
    if (root.contains("model")) {
      const auto& m = root.at("model");
      reject_unknown(m, {"depth", "in_channels", "out_channels", "base_channels", "normalize"}, "model.");
      read(m, "depth", c.model.depth);
      read(m, "base_channels", c.model.base_channels);
      read(m, "normalize", c.model.normalize);
      if (m.contains("in_channels") || m.contains("out_channels")) {
        if (!m.contains("in_channels") || !m.contains("out_channels")) {
          throw FormatError("model.in_channels and model.out_channels must be given together");
        }
        read(m, "in_channels", c.model.in_channels);
        read(m, "out_channels", c.model.out_channels);
        c.model_channels_set = true;
      }
    }
    if (root.contains("sgd")) {
      const auto& s = root.at("sgd");
      reject_unknown(s,
                     {"lr_initial", "lr_after_drop", "drop_epoch", "momentum", "nesterov", "batch_size", "epochs",
                      "seed"},
                     "sgd.");
      read(s, "lr_initial", c.sgd.lr_initial);
      read(s, "lr_after_drop", c.sgd.lr_after_drop);
      read(s, "drop_epoch", c.sgd.drop_epoch);
      read(s, "momentum", c.sgd.momentum);
      read(s, "nesterov", c.sgd.nesterov);
      read(s, "batch_size", c.sgd.batch_size);
      read(s, "epochs", c.sgd.epochs);
      read(s, "seed", c.sgd.seed);
    }
    if (root.contains("data")) {
      const auto& d = root.at("data");
      reject_unknown(d, {"city", "stride", "region", "val_days", "test_slots"}, "data.");
      read(d, "city", c.data.city);
      read(d, "stride", c.data.stride);
      read(d, "val_days", c.data.val_days);
      if (d.contains("test_slots")) {
        for (auto s : d.at("test_slots").get<std::vector<std::size_t>>()) {
          if (s >= kSlotsPerDay) throw FormatError("test slot " + std::to_string(s) + " outside 0-287");
          c.data.test_slots.insert(s);
        }
      }
      if (d.contains("region") && !d.at("region").is_null()) {
        const auto r = d.at("region").get<std::vector<std::size_t>>();
        if (r.size() != 4) throw FormatError("data.region must be [row0, col0, rows, cols]");
        c.data.region = Region{r[0], r[1], r[2], r[3]};
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid config: ") + e.what());
  }
  c.model.validate();
  c.sgd.validate();
  if (c.data.stride == 0) throw FormatError("data.stride must be >= 1");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = {{"depth", c.model.depth},
                {"in_channels", c.model.in_channels},
                {"out_channels", c.model.out_channels},
                {"base_channels", c.model.base_channels},
                {"normalize", c.model.normalize}};
  j["sgd"] = {{"lr_initial", c.sgd.lr_initial}, {"lr_after_drop", c.sgd.lr_after_drop},
              {"drop_epoch", c.sgd.drop_epoch}, {"momentum", c.sgd.momentum},
              {"nesterov", c.sgd.nesterov},     {"batch_size", c.sgd.batch_size},
              {"epochs", c.sgd.epochs},         {"seed", c.sgd.seed}};
  nlohmann::ordered_json d;
  d["city"] = c.data.city;
  d["stride"] = c.data.stride;
  d["val_days"] = c.data.val_days;
  d["test_slots"] = c.data.test_slots;
  if (c.data.region) {
    d["region"] = {c.data.region->row0, c.data.region->col0, c.data.region->rows, c.data.region->cols};
  } else {
    d["region"] = nullptr;
  }
  j["data"] = d;
  j["threads"] = c.threads;
  j["max_steps"] = c.max_steps;
  return j.dump(2) + "\n";
}

RunPlan plan_run(const RunConfig& config, const MovieStore& store) {
  if (store.empty()) throw RangeError("no movies in the data directory");
  RunPlan plan;
  const auto cities = store.cities();
  if (config.data.city.empty()) {
    if (cities.size() != 1) throw RangeError("data holds several cities; set data.city (one U-Net per city)");
    plan.city = *cities.begin();
  } else {
    if (!cities.contains(config.data.city)) throw RangeError("no movies for city '" + config.data.city + "'");
    plan.city = config.data.city;
  }

  std::vector<MovieHeader> days;
  for (const auto& h : store.headers()) {
    if (h.city == plan.city) days.push_back(h);
  }
  // headers() is ordered by (city, date).
  if (days.size() <= config.data.val_days || config.data.val_days == 0) {
    throw RangeError("city '" + plan.city + "' has " + std::to_string(days.size()) +
                     " days; need at least one training and one validation day");
  }
  const std::vector<MovieHeader> train_days(days.begin(), days.end() - static_cast<std::ptrdiff_t>(config.data.val_days));
  const std::vector<MovieHeader> val_days(days.end() - static_cast<std::ptrdiff_t>(config.data.val_days), days.end());

  EnumerateOptions opts;
  opts.stride = config.data.stride;
  opts.region = config.data.region;
  plan.train_clips = enumerate_clips(train_days, opts);
  plan.val_clips = enumerate_clips(val_days, opts);
  plan.test_slots = config.data.test_slots;

  plan.model = config.model;
  const std::size_t c = days.front().c;
  if (!config.model_channels_set) {
    plan.model.in_channels = kInputFrames * c;
    plan.model.out_channels = kTargetFrames * c;
  } else if (plan.model.in_channels != kInputFrames * c || plan.model.out_channels != kTargetFrames * c) {
    throw ShapeError("model channels " + std::to_string(plan.model.in_channels) + " -> " +
                     std::to_string(plan.model.out_channels) + " do not match data with c = " + std::to_string(c));
  }
  return plan;
}

}  // namespace t4c
