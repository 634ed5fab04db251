// t4c: command-line driver for ingest, training, prediction and evaluation.
//
// Exit codes: 0 success, 2 usage or data error, 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "t4c/baselines.hpp"
#include "t4c/dataset.hpp"
#include "t4c/evaluate.hpp"
#include "t4c/masks.hpp"
#include "t4c/movie_store.hpp"
#include "t4c/run_config.hpp"
#include "t4c/trainer.hpp"

namespace fs = std::filesystem;
using namespace t4c;

namespace {

struct Shape {
  std::size_t t = 0, c = 0, h = 0, w = 0;
};

Shape parse_shape(const std::string& text) {
  Shape s;
  char a, b, c;
  std::istringstream in(text);
  if (!(in >> s.t >> a >> s.c >> b >> s.h >> c >> s.w) || a != ',' || b != ',' || c != ',' || !in.eof()) {
    throw FormatError("shape must be t,c,h,w: '" + text + "'");
  }
  return s;
}

// Prediction files are named <city>__<date>__<slot>.tmm, slot being the
// first predicted slot of the day.
std::string prediction_name(const std::string& city, const std::string& date, std::size_t slot) {
  return city + "__" + date + "__" + std::to_string(slot) + ".tmm";
}

struct PredictionKey {
  std::string city, date;
  std::size_t slot = 0;
};

PredictionKey parse_prediction_name(const fs::path& p) {
  const std::string stem = p.stem().string();
  const auto s2 = stem.rfind("__");
  const auto s1 = s2 == std::string::npos || s2 == 0 ? std::string::npos : stem.rfind("__", s2 - 1);
  if (s1 == std::string::npos) throw FormatError("prediction file name is not <city>__<date>__<slot>.tmm: " + p.string());
  PredictionKey k{stem.substr(0, s1), stem.substr(s1 + 2, s2 - s1 - 2), 0};
  try {
    std::size_t used = 0;
    k.slot = std::stoul(stem.substr(s2 + 2), &used);
    if (used != stem.size() - s2 - 2) throw std::invalid_argument("slot");
  } catch (const std::logic_error&) {
    throw FormatError("bad slot in prediction file name " + p.string());
  }
  return k;
}

std::string pick_city(const MovieStore& store, const std::string& requested) {
  if (!requested.empty()) {
    if (!store.cities().contains(requested)) throw RangeError("no movies for city '" + requested + "'");
    return requested;
  }
  if (store.cities().size() != 1) throw RangeError("data holds several cities; pass --city");
  return *store.cities().begin();
}

std::vector<MovieHeader> city_headers(const MovieStore& store, const std::string& city) {
  std::vector<MovieHeader> out;
  for (const auto& h : store.headers())
    if (city.empty() || h.city == city) out.push_back(h);
  return out;
}

std::vector<ClipSpec> clips_for(const MovieStore& store, const std::string& city, const std::string& slots_file,
                                std::size_t stride) {
  EnumerateOptions o;
  o.stride = stride;
  if (!slots_file.empty()) o.test_slots = read_slot_file(slots_file);
  const auto clips = enumerate_clips(city_headers(store, city), o);
  if (clips.empty()) throw RangeError("no clips match the requested slots");
  return clips;
}

void write_prediction(const Frames& frames, const ClipSpec& spec, const fs::path& dir) {
  ingest(frames, spec.city, spec.day, dir / prediction_name(spec.city, spec.day, spec.target_slot()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text) || !out.flush()) throw IoError("cannot write " + path.string());
}

std::string header_json(const MovieHeader& h) {
  nlohmann::ordered_json j;
  j["version"] = h.version;
  j["t"] = h.t;
  j["c"] = h.c;
  j["h"] = h.h;
  j["w"] = h.w;
  j["city"] = h.city;
  j["date"] = h.date;
  j["header_bytes"] = h.encoded_size();
  j["payload_bytes"] = h.payload_bytes();
  return j.dump(2);
}

// ---------------------------------------------------------------- commands

struct IngestArgs {
  std::string input, shape, city, date, out;
};

void run_ingest(const IngestArgs& a) {
  std::ifstream in(a.input, std::ios::binary);
  if (!in) throw IoError("cannot read " + a.input);
  std::vector<std::uint8_t> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  Shape s;
  if (!a.shape.empty()) {
    s = parse_shape(a.shape);
  } else {
    // Default grid: 3 channels of 495 x 436, frame count from the file size.
    s = {0, 3, 495, 436};
    const std::size_t frame = s.c * s.h * s.w;
    if (raw.empty() || raw.size() % frame != 0) {
      throw ShapeError("input of " + std::to_string(raw.size()) + " bytes is not a whole number of 3x495x436 frames");
    }
    s.t = raw.size() / frame;
  }
  ingest_raw(raw, s.t, s.c, s.h, s.w, a.city, a.date, a.out);
  std::cout << header_json(Movie::open(a.out).header()) << "\n";
}

struct InspectArgs {
  std::string file, dump;
};

void run_inspect(const InspectArgs& a) {
  const auto movie = Movie::open(a.file);
  std::cout << header_json(movie.header()) << "\n";
  if (!a.dump.empty()) {
    const auto frames = movie.read_all();
    std::ofstream out(a.dump, std::ios::binary);
    out.write(reinterpret_cast<const char*>(frames.data().data()), static_cast<std::streamsize>(frames.size()));
    if (!out.flush()) throw IoError("cannot write " + a.dump);
  }
}

struct SynthArgs {
  std::string kind = "slot_pattern", shape = "288,3,32,32", city = "synth", start_date = "2019-01-07", out;
  std::uint64_t seed = 0;
  int days = 1;
  int noise = 0;
  int value = 0;
};

void run_synth(const SynthArgs& a) {
  const Shape s = parse_shape(a.shape);
  if (a.days < 1) throw RangeError("--days must be >= 1");
  if (a.value < 0 || a.value > 255) throw RangeError("--value must lie in 0-255");
  fs::create_directories(a.out);
  for (int d = 0; d < a.days; ++d) {
    SynthOptions o;
    o.kind = parse_synth_kind(a.kind);
    o.seed = a.seed;
    o.day = static_cast<std::uint64_t>(d);
    o.noise = a.noise;
    o.constant_value = static_cast<std::uint8_t>(a.value);
    const auto date = add_days(a.start_date, d);
    ingest(synth_movie(o, s.t, s.c, s.h, s.w), a.city, date, fs::path(a.out) / (a.city + "__" + date + ".tmm"));
  }
  std::cout << "wrote " << a.days << " movie(s) to " << a.out << "\n";
}

struct TrainArgs {
  std::string config, data, out, resume;
};

void run_train(const TrainArgs& a, unsigned threads, bool threads_set) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (threads_set) cfg.threads = threads;
  const auto store = MovieStore::scan(a.data);
  const auto plan = plan_run(cfg, store);

  TrainOptions opts;
  opts.model = plan.model;
  opts.sgd = cfg.sgd;
  opts.threads = cfg.threads;
  opts.max_steps = cfg.max_steps;
  opts.on_epoch = [](const EpochLog& r) {
    std::cout << "epoch " << r.epoch << " lr " << r.lr << " train_mse " << r.train_mse << " val_mse " << r.val_mse
              << " val_test_slots_mse " << r.val_test_slots_mse << std::endl;
  };
  opts.on_warning = [](const std::string& w) { std::cerr << "warning: " << w << "\n"; };

  std::optional<TrainState> resume;
  if (!a.resume.empty()) resume = load_train_state(a.resume);
  std::cout << "city " << plan.city << ": " << plan.train_clips.size() << " training clips, "
            << plan.val_clips.size() << " validation clips" << std::endl;
  const auto result = train(opts, store, plan.train_clips, plan.val_clips, plan.test_slots, std::move(resume));

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(result.log.empty() ? result.state.params : result.best, out);
  write_epoch_csv(result.log, fs::path(a.out + ".epochs.csv"));
  save_train_state(result.state, fs::path(a.out + ".state"));
  cfg.model = plan.model;
  write_text(a.out + ".config.json", run_config_json(cfg));
  std::cout << "best val_mse " << result.best_val_mse << "; checkpoint " << a.out << std::endl;
}

struct PredictArgs {
  std::string ckpt, data, slots, out, city, mask;
  std::size_t stride = 1;
  std::size_t batch = 8;
};

Mask maybe_mask(const std::string& path) { return path.empty() ? Mask{} : load_mask(path); }

Frames masked(Frames f, const Mask& m) { return m.active.empty() ? f : apply_mask(f, m); }

void run_predict(const PredictArgs& a, unsigned threads) {
  nn::set_num_threads(threads);
  const auto params = load_checkpoint(a.ckpt);
  const auto store = MovieStore::scan(a.data);
  const auto city = pick_city(store, a.city);
  const auto specs = clips_for(store, city, a.slots, a.stride);
  const auto mask = maybe_mask(a.mask);
  fs::create_directories(a.out);
  const std::size_t batch = std::max<std::size_t>(a.batch, 1);
  for (std::size_t i = 0; i < specs.size(); i += batch) {
    std::vector<Clip> clips;
    for (std::size_t j = i; j < std::min(specs.size(), i + batch); ++j) clips.push_back(load_clip(specs[j], store));
    std::vector<const Clip*> ptrs;
    for (const auto& c : clips) ptrs.push_back(&c);
    const auto preds = predict_batch(params, ptrs);
    for (std::size_t j = 0; j < clips.size(); ++j) write_prediction(masked(preds[j], mask), clips[j].spec, a.out);
  }
  std::cout << "wrote " << specs.size() << " prediction(s) to " << a.out << "\n";
}

struct BaselineArgs {
  std::string kind, data, train, slots, out, city, mask, model_out;
  std::size_t stride = 1;
};

void run_baseline(const BaselineArgs& a, unsigned threads) {
  const auto store = MovieStore::scan(a.data);
  const auto city = pick_city(store, a.city);
  const auto specs = clips_for(store, city, a.slots, a.stride);
  const auto mask = maybe_mask(a.mask);
  fs::create_directories(a.out);

  std::optional<SlotAverageModel> model;
  if (a.kind == "slot_avg") {
    if (a.train.empty()) throw RangeError("--kind slot_avg needs --train <dir>");
    const auto train_store = MovieStore::scan(a.train);
    std::set<std::size_t> slots;
    for (const auto& s : specs)
      for (std::size_t j = 0; j < kTargetFrames; ++j) slots.insert(s.target_slot() + j);
    model = time_slot_average(train_store, city, slots, threads);
    if (!a.model_out.empty()) save_slot_average(*model, city, a.model_out);
  } else if (a.kind != "persistence" && a.kind != "zero") {
    throw RangeError("unknown baseline kind '" + a.kind + "'");
  }

  for (const auto& spec : specs) {
    Frames pred;
    if (model) {
      pred = predict_slot_average(*model, spec);
    } else {
      const auto clip = load_clip(spec, store);
      pred = a.kind == "persistence" ? persistence(clip) : zero_baseline(clip);
    }
    write_prediction(masked(std::move(pred), mask), spec, a.out);
  }
  std::cout << "wrote " << specs.size() << " " << a.kind << " prediction(s) to " << a.out << "\n";
}

struct EvaluateArgs {
  std::string pred, truth, report;
};

void run_evaluate(const EvaluateArgs& a, unsigned threads) {
  if (!fs::is_directory(a.pred)) throw IoError("prediction directory not found: " + a.pred);
  if (!fs::is_directory(a.truth)) throw IoError("truth directory not found: " + a.truth);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.pred))
    if (e.is_regular_file() && e.path().extension() == ".tmm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw RangeError("no prediction files in " + a.pred);

  // Truth is either a same-named 3-frame file or the day movie it came from.
  std::optional<MovieStore> days;
  MetricsAccumulator acc;
  for (const auto& f : files) {
    const auto key = parse_prediction_name(f);
    const auto pred = Movie::open(f).read_all();
    Frames truth;
    const fs::path twin = fs::path(a.truth) / f.filename();
    if (fs::exists(twin)) {
      truth = Movie::open(twin).read_all();
    } else {
      if (!days) days = MovieStore::scan(a.truth);
      const auto& movie = days->get(key.city, key.date);
      if (key.slot + kTargetFrames > movie.header().t) throw RangeError("slot out of range for " + f.string());
      truth = movie.read_frames(key.slot, kTargetFrames);
      if (!truth.same_shape(pred)) {
        throw ShapeError("prediction " + f.string() + " does not match the truth grid; region predictions need a "
                         "same-named truth file");
      }
    }
    acc.add(key.city, pred, truth);
  }
  const auto m = acc.result();
  const auto text = metrics_json(m, threads);
  if (fs::path(a.report).has_parent_path()) fs::create_directories(fs::path(a.report).parent_path());
  write_text(a.report, text);
  std::cout << "overall MSE " << m.overall << " over " << m.clips << " clip(s); report " << a.report << "\n";
}

struct MaskArgs {
  std::string data, city, out;
  int threshold = 0;
};

void run_mask(const MaskArgs& a) {
  if (a.threshold < 0 || a.threshold > 255) throw RangeError("--threshold must lie in 0-255");
  const auto store = MovieStore::scan(a.data);
  const auto city = pick_city(store, a.city);
  std::vector<Frames> movies;
  for (const auto* m : store.movies())
    if (m->header().city == city) movies.push_back(m->read_all());
  const auto mask = build_mask(movies, static_cast<std::uint8_t>(a.threshold));
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_mask(mask, city, a.out);
  std::cout << mask.active_count() << " of " << mask.h * mask.w << " cells active; mask " << a.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traffic map-movie forecasting: storage, baselines, U-Net training and evaluation"};
  app.require_subcommand(1);
  unsigned threads = 1;
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads")->check(CLI::Range(1u, 256u));

  IngestArgs ing;
  auto* c_ing = app.add_subcommand("ingest", "Convert a headerless uint8 buffer into a TMM1 movie");
  c_ing->add_option("--input", ing.input, "Raw (t, c, h, w) uint8 file")->required();
  c_ing->add_option("--shape", ing.shape, "t,c,h,w (default: 3x495x436 frames, t from the file size)");
  c_ing->add_option("--city", ing.city)->required();
  c_ing->add_option("--date", ing.date, "ISO date")->required();
  c_ing->add_option("--out", ing.out, "Destination .tmm")->required();

  InspectArgs ins;
  auto* c_ins = app.add_subcommand("inspect", "Print a TMM1 header");
  c_ins->add_option("file", ins.file)->required();
  c_ins->add_option("--dump", ins.dump, "Write the payload as raw bytes to this file");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Generate synthetic day movies");
  c_syn->add_option("--kind", syn.kind, "constant | time_ramp | slot_pattern | random")->capture_default_str();
  c_syn->add_option("--seed", syn.seed)->capture_default_str();
  c_syn->add_option("--shape", syn.shape, "t,c,h,w")->capture_default_str();
  c_syn->add_option("--city", syn.city)->capture_default_str();
  c_syn->add_option("--start-date", syn.start_date)->capture_default_str();
  c_syn->add_option("--days", syn.days)->capture_default_str();
  c_syn->add_option("--noise", syn.noise, "slot_pattern noise amplitude")->capture_default_str();
  c_syn->add_option("--value", syn.value, "Cell value for --kind constant")->capture_default_str();
  c_syn->add_option("--out", syn.out, "Output directory")->required();

  TrainArgs trn;
  auto* c_trn = app.add_subcommand("train", "Train one U-Net for one city");
  c_trn->add_option("--config", trn.config, "Run config JSON (defaults if omitted)");
  c_trn->add_option("--data", trn.data, "Directory of day movies")->required();
  c_trn->add_option("--out", trn.out, "Checkpoint path; the epoch CSV, state and config go next to it")->required();
  c_trn->add_option("--resume", trn.resume, "Optimizer state file to continue from");

  PredictArgs prd;
  auto* c_prd = app.add_subcommand("predict", "Write U-Net predictions as 3-frame TMM1 files");
  c_prd->add_option("--ckpt", prd.ckpt)->required();
  c_prd->add_option("--data", prd.data)->required();
  c_prd->add_option("--slots", prd.slots, "Test-slot file (first predicted slot per line)");
  c_prd->add_option("--out", prd.out)->required();
  c_prd->add_option("--city", prd.city);
  c_prd->add_option("--stride", prd.stride)->capture_default_str();
  c_prd->add_option("--mask", prd.mask, "Zero cells outside this mask");
  c_prd->add_option("--batch", prd.batch)->capture_default_str();

  BaselineArgs bas;
  auto* c_bas = app.add_subcommand("baseline", "Write baseline predictions as 3-frame TMM1 files");
  c_bas->add_option("--kind", bas.kind)->required()->check(CLI::IsMember({"slot_avg", "persistence", "zero"}));
  c_bas->add_option("--data", bas.data, "Day movies to predict")->required();
  c_bas->add_option("--train", bas.train, "Training day movies (slot_avg)");
  c_bas->add_option("--slots", bas.slots);
  c_bas->add_option("--out", bas.out)->required();
  c_bas->add_option("--city", bas.city);
  c_bas->add_option("--stride", bas.stride)->capture_default_str();
  c_bas->add_option("--mask", bas.mask);
  c_bas->add_option("--model-out", bas.model_out, "Save the slot-average model here");

  EvaluateArgs evl;
  auto* c_evl = app.add_subcommand("evaluate", "MSE report for a prediction directory");
  c_evl->add_option("--pred", evl.pred)->required();
  c_evl->add_option("--truth", evl.truth, "Same-named 3-frame files or the day movies")->required();
  c_evl->add_option("--report", evl.report)->required();

  MaskArgs msk;
  auto* c_msk = app.add_subcommand("mask", "Build an activity mask over a city's movies");
  c_msk->add_option("--data", msk.data)->required();
  c_msk->add_option("--threshold", msk.threshold)->capture_default_str();
  c_msk->add_option("--city", msk.city);
  c_msk->add_option("--out", msk.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_ing->parsed()) run_ingest(ing);
    if (c_ins->parsed()) run_inspect(ins);
    if (c_syn->parsed()) run_synth(syn);
    if (c_trn->parsed()) run_train(trn, threads, threads_opt->count() > 0);
    if (c_prd->parsed()) run_predict(prd, threads);
    if (c_bas->parsed()) run_baseline(bas, threads);
    if (c_evl->parsed()) run_evaluate(evl, threads);
    if (c_msk->parsed()) run_mask(msk);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
