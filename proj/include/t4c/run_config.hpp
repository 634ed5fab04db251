#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include "t4c/dataset.hpp"
#include "t4c/trainer.hpp"
#include "t4c/unet.hpp"

namespace t4c {

struct DataOptions {
  std::string city;  // empty: the only city in the data directory
  std::size_t stride = 1;
  std::optional<Region> region;
  std::size_t val_days = 1;  // latest dates of the city held out for validation
  std::set<std::size_t> test_slots;
};

// One JSON document holding model, optimizer and data options. Every field
// is optional; omitted optimizer fields keep the reference recipe
// (lr 0.02 -> 0.001 after 5 epochs, momentum 0.9 Nesterov, batch 5).
struct RunConfig {
  UNetConfig model;
  SGDConfig sgd;
  DataOptions data;
  unsigned threads = 1;
  std::uint64_t max_steps = 0;
  bool model_channels_set = false;  // in/out channels given explicitly
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& config);

struct RunPlan {
  std::string city;
  UNetConfig model;  // channel counts resolved against the data
  std::vector<ClipSpec> train_clips;
  std::vector<ClipSpec> val_clips;
  std::set<std::size_t> test_slots;
};

// Picks the city, splits its days into train/validation by date and
// enumerates clips for both.
RunPlan plan_run(const RunConfig& config, const MovieStore& store);

}  // namespace t4c
