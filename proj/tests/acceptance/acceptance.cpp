// Acceptance suite: one PASS/FAIL line per criterion, each with its own time
// budget. Exit status is non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "t4c/baselines.hpp"
#include "t4c/dataset.hpp"
#include "t4c/evaluate.hpp"
#include "t4c/masks.hpp"
#include "t4c/movie_store.hpp"
#include "t4c/trainer.hpp"
#include "test_support.hpp"

using namespace t4c;
using namespace t4c::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs >= budget_s) o.require(false, "runtime over budget");
  if (!o.pass) ++failures;
  std::printf("%s  %-22s %7.2fs / %4.0fs  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, budget_s,
              o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

std::string file_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------- storage

Outcome storage_round_trip() {
  Outcome o;
  TempDir dir("acc-store");
  std::mt19937_64 rng(2024);
  auto dim = [&](std::size_t hi) { return std::uniform_int_distribution<std::size_t>(1, hi)(rng); };
  std::size_t checked_reads = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t t = dim(16), c = dim(3), h = dim(64), w = dim(64);
    const auto frames = random_frames(rng, t, c, h, w);
    const auto path = dir / ("m" + std::to_string(i) + ".tmm");
    ingest(frames, "city" + std::to_string(i % 4), "2019-01-0" + std::to_string(1 + i % 9), path);

    ReadStats stats;
    const auto movie = Movie::open(path, &stats);
    o.require(fs::file_size(path) == movie.header().encoded_size() + frames.size(), "file size mismatch");
    o.require(movie.read_all() == frames, "movie " + std::to_string(i) + " differs after round trip");
    for (int k = 0; k < 3; ++k) {
      const std::size_t t0 = std::uniform_int_distribution<std::size_t>(0, t - 1)(rng);
      const std::size_t n = std::uniform_int_distribution<std::size_t>(1, t - t0)(rng);
      const auto before = stats.payload_bytes.load();
      const auto calls = stats.read_calls.load();
      const auto part = movie.read_frames(t0, n);
      o.require(stats.payload_bytes.load() - before == n * c * h * w, "payload accounting off");
      o.require(stats.read_calls.load() - calls == 1, "more than one read per request");
      o.require(part == frames.slice(t0, n), "partial read differs");
      ++checked_reads;
    }
  }
  o.detail = o.pass ? "100 movies byte-exact, " + std::to_string(checked_reads) + " ranged reads accounted" : o.detail;
  return o;
}

// ---------------------------------------------------------------- collapse

Outcome collapse_correctness() {
  Outcome o;
  std::mt19937_64 rng(77);
  for (int i = 0; i < 50; ++i) {
    const std::size_t h = std::uniform_int_distribution<std::size_t>(1, 48)(rng);
    const std::size_t w = std::uniform_int_distribution<std::size_t>(1, 48)(rng);
    const auto f = random_frames(rng, 12, 3, h, w);
    const auto s = collapse_time(f);
    bool same = s.channels() == 36 && s.data.size() == 36 * h * w;
    for (std::size_t t = 0; same && t < 12; ++t)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) same = same && s.data[((t * 3 + c) * h + y) * w + x] == f.at(t, c, y, x);
    o.require(same, "collapse differs from reshape oracle on tensor " + std::to_string(i));
    o.require(expand_time(s) == f, "expand(collapse(x)) != x on tensor " + std::to_string(i));
  }
  if (o.pass) o.detail = "50 tensors match the reshape oracle; expand is its inverse";
  return o;
}

// ---------------------------------------------------------------- baseline oracle

Outcome baseline_oracle() {
  Outcome o;
  const std::size_t t = 288, c = 3, h = 16, w = 16;
  std::vector<Frames> days;
  for (std::uint64_t d = 0; d < 5; ++d) {
    SynthOptions s;
    s.kind = SynthKind::random;
    s.seed = 99;
    s.day = d;
    days.push_back(synth_movie(s, t, c, h, w));
  }
  std::set<std::size_t> slots;
  for (std::size_t i = 0; i < t; ++i) slots.insert(i);
  const auto model = time_slot_average(days, slots);

  double worst = 0.0;
  for (std::size_t s = 0; s < t; ++s) {
    const auto mean = model.mean(s);
    for (std::size_t i = 0; i < c * h * w; ++i) {
      double sum = 0.0;
      for (const auto& d : days) sum += static_cast<double>(d.frame(s)[i]);
      worst = std::max(worst, std::abs(mean[i] - sum / static_cast<double>(days.size())));
    }
  }
  o.require(worst <= 1e-9, "max deviation " + fmt(worst));

  std::mt19937_64 rng(5);
  for (int p = 0; p < 5; ++p) {
    auto shuffled = days;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    o.require(time_slot_average(shuffled, slots) == model, "result changes under day permutation");
  }
  o.require(time_slot_average(days, slots, 4) == model, "threaded result differs");
  if (o.pass) o.detail = "max |mean - oracle| = " + fmt(worst) + ", invariant under 5 permutations";
  return o;
}

// ---------------------------------------------------------------- gradients

constexpr double kNetStep = 1e-6;

Outcome gradient_checks() {
  Outcome o;
  const int seeds = 20;
  double conv = 0, up = 0, pool = 0, relu = 0, mse = 0, net = 0;
  for (int seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);

    auto x = random_tensor<double>(rng, {2, 3, 5, 6});
    auto k = random_tensor<double>(rng, {4, 3, 3, 3});
    auto b = random_tensor<double>(rng, {4});
    const auto wc = random_tensor<double>(rng, {2, 4, 5, 6});
    const auto gc = nn::conv2d_backward(x, k, wc);
    auto fc = [&] { return dot(wc, nn::conv2d_forward(x, k, b)); };
    conv = std::max({conv, gradient_error(x, gc.grad_x, fc), gradient_error(k, gc.grad_k, fc),
                     gradient_error(b, gc.grad_bias, fc)});

    auto ux = random_tensor<double>(rng, {2, 3, 3, 4});
    auto uk = random_tensor<double>(rng, {3, 2, 2, 2});
    auto ub = random_tensor<double>(rng, {2});
    const auto wu = random_tensor<double>(rng, {2, 2, 6, 8});
    const auto gu = nn::upconv2d_backward(ux, uk, wu);
    auto fu = [&] { return dot(wu, nn::upconv2d_forward(ux, uk, ub)); };
    up = std::max({up, gradient_error(ux, gu.grad_x, fu), gradient_error(uk, gu.grad_k, fu),
                   gradient_error(ub, gu.grad_bias, fu)});

    // Distinct values spaced well beyond the finite-difference step: no ties.
    Tensor<double> px({2, 2, 4, 6});
    std::vector<double> vals(px.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i) - 0.5;
    std::shuffle(vals.begin(), vals.end(), rng);
    px.values() = vals;
    const auto wp = random_tensor<double>(rng, {2, 2, 2, 3});
    const auto pr = nn::maxpool2d_forward(px);
    pool = std::max(pool, gradient_error(px, nn::maxpool2d_backward(wp, pr.argmax, px.shape()),
                                         [&] { return dot(wp, nn::maxpool2d_forward(px).out); }));

    auto rx = random_tensor<double>(rng, {2, 3, 4, 4});
    for (std::size_t i = 0; i < rx.size(); ++i) rx[i] += rx[i] >= 0 ? 0.05 : -0.05;
    const auto wr = random_tensor<double>(rng, rx.shape());
    relu = std::max(relu, gradient_error(rx, nn::relu_backward(rx, wr), [&] { return dot(wr, nn::relu_forward(rx)); }));

    auto mp = random_tensor<double>(rng, {2, 3, 4, 4});
    const auto mt = random_tensor<double>(rng, mp.shape());
    mse = std::max(mse, gradient_error(mp, nn::mse_loss(mp, mt).grad, [&] { return nn::mse_loss(mp, mt).loss; }));

    const UNetConfig cfg{2, 2, 2, 3, false};
    auto params = UNetParams<float>::he_init(cfg, static_cast<std::uint64_t>(seed)).cast<double>();
    std::uniform_real_distribution<double> bias(-0.1, 0.1);
    for (auto& [name, t] : params.named())
      if (t->rank() == 1)
        for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = bias(rng);
    auto nx = random_tensor<double>(rng, {2, 2, 8, 8});
    const auto wn = random_tensor<double>(rng, {2, 2, 8, 8});
    UNetTape<double> tape;
    unet_forward(params, nx, &tape);
    const auto g = unet_backward(params, tape, wn);
    auto fn = [&] { return dot(wn, unet_forward(params, nx)); };
    auto pn = params.named();
    auto gn = g.params.named();
    // A small step keeps perturbations from crossing ReLU or pooling kinks.
    for (std::size_t i = 0; i < pn.size(); ++i)
      net = std::max(net, gradient_error(*pn[i].second, *gn[i].second, fn, kNetStep));
    net = std::max(net, gradient_error(nx, g.grad_x, fn, kNetStep));
  }
  o.require(conv < 1e-5, "conv2d " + fmt(conv));
  o.require(up < 1e-5, "upconv2d " + fmt(up));
  o.require(pool < 1e-5, "maxpool " + fmt(pool));
  o.require(relu < 1e-5, "relu " + fmt(relu));
  o.require(mse < 1e-5, "mse " + fmt(mse));
  o.require(net < 1e-4, "unet " + fmt(net));
  if (o.pass) {
    o.detail = std::to_string(seeds) + " seeds; worst rel err conv " + fmt(conv) + " up " + fmt(up) + " pool " +
               fmt(pool) + " relu " + fmt(relu) + " mse " + fmt(mse) + " unet " + fmt(net);
  }
  return o;
}

// ---------------------------------------------------------------- optimizer

Outcome optimizer_hand_check() {
  Outcome o;
  auto step = [](double g, double lr, double mu, bool nesterov, double& v) {
    Tensor<double> p({1}, 0.0), vel({1}, v);
    const Tensor<double> grad({1}, g);
    Tensor<double>* ps[] = {&p};
    Tensor<double>* vs[] = {&vel};
    const Tensor<double>* gs[] = {&grad};
    sgd_update<double>(ps, vs, gs, lr, mu, nesterov);
    v = vel[0];
    return p[0];
  };
  double v = 0.0;
  const double moved = step(1.0, 0.02, 0.9, true, v);
  o.require(std::abs(moved + 0.038) <= 1e-15, "Nesterov step moved " + fmt(moved));
  for (bool nesterov : {false, true}) {
    double v0 = 0.0;
    const double plain = step(0.7, 0.05, 0.0, nesterov, v0);
    o.require(plain == -0.05 * 0.7, "momentum 0 is not vanilla SGD");
  }
  SGDConfig c;
  o.require(lr_schedule(4, c) == 0.02 && lr_schedule(5, c) == 0.001, "lr schedule");
  if (o.pass) o.detail = "step " + fmt(moved) + "; mu=0 is vanilla; lr(4)=0.02 lr(5)=0.001";
  return o;
}

// ---------------------------------------------------------------- overfit

Outcome overfit_sanity() {
  Outcome o;
  TempDir dir("acc-overfit");
  SynthOptions s;
  s.kind = SynthKind::time_ramp;
  ingest(synth_movie(s, 60, 3, 32, 32), "a", "2019-01-07", dir / "a.tmm");
  const auto store = MovieStore::scan(dir.path());
  const std::vector<ClipSpec> one{ClipSpec{"a", "2019-01-07", 30, Region{8, 8, 16, 16}}};

  TrainOptions opts;
  opts.model = {2, 36, 9, 4, true};
  opts.sgd.epochs = 500;  // one clip, batch 1: one step per epoch
  opts.sgd.drop_epoch = 500;
  opts.sgd.batch_size = 1;
  double best = INFINITY;
  std::size_t reached = 0;
  opts.on_epoch = [&](const EpochLog& r) {
    if (r.train_mse < 1.0 && reached == 0) reached = r.epoch + 1;
    best = std::min(best, r.train_mse);
  };
  const auto result = train(opts, store, one, one, {});
  const auto clip = load_clip(one[0], store);
  const double final_loss = train_loss(result.state.params, {&clip});
  o.require(reached > 0, "best train MSE " + fmt(best) + " in 500 steps");
  if (o.pass) o.detail = "train MSE < 1.0 at step " + std::to_string(reached);
  o.detail += "; after 500 steps " + fmt(final_loss);
  return o;
}

// ---------------------------------------------------------------- learning property

Outcome learning_property() {
  Outcome o;
  TempDir dir("acc-learn");
  const std::size_t days = 8, size = 32;
  for (std::size_t d = 0; d < days; ++d) {
    SynthOptions s;
    s.kind = SynthKind::slot_pattern;
    s.seed = 1;
    s.day = d;
    s.noise = 20;
    ingest(synth_movie(s, kSlotsPerDay, 3, size, size), "synth", add_days("2019-01-07", static_cast<int>(d)),
           dir / ("d" + std::to_string(d) + ".tmm"));
  }
  const auto store = MovieStore::scan(dir.path());
  const auto headers = store.headers();
  const std::vector<MovieHeader> train_days(headers.begin(), headers.end() - 1);
  const std::vector<MovieHeader> val_days(headers.end() - 1, headers.end());
  const auto train_clips = enumerate_clips(train_days, {});
  const auto val_clips = enumerate_clips(val_days, {});

  std::set<std::size_t> slots;
  for (std::size_t i = 0; i < kSlotsPerDay; ++i) slots.insert(i);
  std::vector<Frames> train_movies;
  for (const auto& h : train_days) train_movies.push_back(store.get(h.city, h.date).read_all());
  const auto model = time_slot_average(train_movies, slots);
  MetricsAccumulator slot_avg, persist;
  for (const auto& spec : val_clips) {
    const auto clip = load_clip(spec, store);
    slot_avg.add(spec.city, predict_slot_average(model, spec), clip.target);
    persist.add(spec.city, persistence(clip), clip.target);
  }
  const double sa = slot_avg.result().overall, pe = persist.result().overall;

  TrainOptions opts;
  opts.model = {2, 36, 9, 8, true};
  opts.sgd.epochs = 36;
  opts.sgd.drop_epoch = 32;
  const auto result = train(opts, store, train_clips, val_clips, {});
  const auto& first = result.log.front();
  const auto& last = result.log.back();
  o.require(last.val_mse < pe, "val MSE not below persistence");
  o.require(last.val_mse <= 1.1 * sa, "val MSE more than 10% above slot average");
  o.require(last.train_mse <= first.train_mse, "final train loss above epoch-1 train loss");
  o.detail += (o.detail.empty() ? "" : "; ") + std::string("val MSE ") + fmt(last.val_mse) + " (best " +
              fmt(result.best_val_mse) + "), slot-avg " + fmt(sa) + " (bound " + fmt(1.1 * sa) + "), persistence " +
              fmt(pe) + "; train MSE epoch 1 " + fmt(first.train_mse) + " -> final " + fmt(last.train_mse);
  return o;
}

// ---------------------------------------------------------------- masks

Outcome mask_correctness() {
  Outcome o;
  std::mt19937_64 rng(31);
  for (int i = 0; i < 20; ++i) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    const std::size_t h = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
    const std::size_t w = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
    // Sparse activity so that masks are neither empty nor full.
    Frames movie(t, 3, h, w);
    std::bernoulli_distribution on(0.02);
    std::uniform_int_distribution<int> val(1, 255);
    for (auto& v : movie.data())
      if (on(rng)) v = static_cast<std::uint8_t>(val(rng));

    Mask prev;
    for (int thr : {0, 1, 64, 128, 200, 254, 255}) {
      const auto m = build_mask({movie}, static_cast<std::uint8_t>(thr));
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          int mx = 0;
          for (std::size_t f = 0; f < t; ++f)
            for (std::size_t c = 0; c < 3; ++c) mx = std::max(mx, int{movie.at(f, c, y, x)});
          if (m.at(y, x) != (mx > thr)) o.require(false, "mask differs from brute force (movie " + std::to_string(i) + ")");
          if (!prev.active.empty() && m.at(y, x) && !prev.at(y, x)) o.require(false, "mask not monotone in threshold");
        }
      const auto pred = random_frames(rng, 3, 3, h, w);
      const auto once = apply_mask(pred, m);
      o.require(apply_mask(once, m) == once, "apply_mask not idempotent");
      prev = m;
    }
  }
  if (o.pass) o.detail = "20 movies x 7 thresholds match brute force; monotone; idempotent";
  return o;
}

// ---------------------------------------------------------------- clamp

Outcome clamp_contract() {
  Outcome o;
  std::mt19937_64 rng(12);
  const auto clip = split_clip(random_frames(rng, 15, 3, 6, 10), ClipSpec{"a", "2019-01-07", 0, {}});
  for (bool normalize : {false, true}) {
    auto p = UNetParams<float>::zeros({2, 36, 9, 2, normalize});
    auto force = [&](double value) {
      const double raw = normalize ? (value - 127.5) / 127.5 : value;
      for (std::size_t i = 0; i < 9; ++i) p.head.bias[i] = static_cast<float>(raw);
      return predict(p, clip);
    };
    const auto low = force(-10.0);
    const auto high = force(300.0);
    o.require(std::all_of(low.data().begin(), low.data().end(), [](auto v) { return v == 0; }), "-10 does not map to 0");
    o.require(std::all_of(high.data().begin(), high.data().end(), [](auto v) { return v == 255; }),
              "+300 does not map to 255");
    o.require(low.t() == 3 && low.c() == 3 && low.h() == 6 && low.w() == 10, "prediction shape");
  }
  const auto c = nn::clamp_255(Tensor<double>({4}, std::vector<double>{-10, 0.4, 254.6, 300}));
  o.require(c.values() == std::vector<double>{0, 0.4, 254.6, 255}, "clamp_255");
  o.require(round_to_u8(254.5) == 255 && round_to_u8(0.49) == 0 && round_to_u8(-3) == 0, "round half-up");
  if (o.pass) o.detail = "-10 -> 0, +300 -> 255 (raw and normalized); outputs are uint8 frames";
  return o;
}

// ---------------------------------------------------------------- determinism

struct PipelineFiles {
  std::string checkpoint, predictions, report;
};

PipelineFiles run_pipeline(const fs::path& root) {
  fs::create_directories(root / "data");
  for (int d = 0; d < 3; ++d) {
    SynthOptions s;
    s.kind = SynthKind::slot_pattern;
    s.seed = 3;
    s.day = static_cast<std::uint64_t>(d);
    s.noise = 15;
    ingest(synth_movie(s, 60, 3, 24, 20), "synth", add_days("2019-01-07", d), root / "data" / ("d" + std::to_string(d) + ".tmm"));
  }
  const auto store = MovieStore::scan(root / "data");
  const auto hs = store.headers();
  EnumerateOptions eo;
  eo.stride = 3;
  const auto train_clips = enumerate_clips({hs[0], hs[1]}, eo);
  const auto val_clips = enumerate_clips({hs[2]}, eo);
  TrainOptions opts;
  opts.model = {2, 36, 9, 4, true};
  opts.sgd.epochs = 3;
  opts.sgd.drop_epoch = 2;
  opts.sgd.seed = 17;
  opts.threads = 2;
  const auto result = train(opts, store, train_clips, val_clips, {24, 36});
  save_checkpoint(result.best, root / "model.unp");
  write_epoch_csv(result.log, root / "epochs.csv");

  const auto params = load_checkpoint(root / "model.unp");
  PipelineFiles out;
  std::vector<Frames> preds, truths;
  std::vector<std::string> cities;
  for (const auto& spec : val_clips) {
    const auto clip = load_clip(spec, store);
    preds.push_back(predict(params, clip));
    truths.push_back(clip.target);
    cities.push_back(spec.city);
    const auto name = root / ("p" + std::to_string(spec.t_start) + ".tmm");
    ingest(preds.back(), spec.city, spec.day, name);
    out.predictions += file_text(name);
  }
  out.checkpoint = file_text(root / "model.unp") + file_text(root / "epochs.csv");
  out.report = metrics_json(evaluate(preds, truths, cities), opts.threads);
  return out;
}

Outcome determinism() {
  Outcome o;
  TempDir a("acc-det-a"), b("acc-det-b");
  const auto ra = run_pipeline(a.path());
  const auto rb = run_pipeline(b.path());
  o.require(ra.checkpoint == rb.checkpoint, "checkpoints differ");
  o.require(ra.predictions == rb.predictions, "predictions differ");
  o.require(ra.report == rb.report, "reports differ");
  if (o.pass) {
    o.detail = "checkpoint " + std::to_string(ra.checkpoint.size()) + " B, predictions " +
               std::to_string(ra.predictions.size()) + " B, report identical across two runs";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  // Optional substring filter on criterion names, for local runs.
  const std::string only = argc > 1 ? argv[1] : "";
  auto run = [&](const std::string& name, double budget, const std::function<Outcome()>& body) {
    if (only.empty() || name.find(only) != std::string::npos) criterion(name, budget, body);
  };
  run("storage-round-trip", 10, storage_round_trip);
  run("collapse-correctness", 5, collapse_correctness);
  run("baseline-oracle", 10, baseline_oracle);
  run("gradient-checks", 60, gradient_checks);
  run("optimizer-hand-check", 5, optimizer_hand_check);
  run("overfit-sanity", 120, overfit_sanity);
  run("mask-correctness", 10, mask_correctness);
  run("clamp-round-contract", 5, clamp_contract);
  run("determinism", 120, determinism);
  run("learning-property", 600, learning_property);
  std::printf("%s: %d criterion(s) failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
  return failures == 0 ? 0 : 1;
}
