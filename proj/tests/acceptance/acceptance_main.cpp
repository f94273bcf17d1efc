// Prints one PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "evdeblur/deffe.hpp"
#include "evdeblur/dlefnet.hpp"
#include "evdeblur/events.hpp"
#include "evdeblur/io.hpp"
#include "evdeblur/metrics.hpp"
#include "evdeblur/ops.hpp"
#include "evdeblur/synth.hpp"
#include "evdeblur/training.hpp"
#include "evdeblur/verification.hpp"

using namespace evdeblur;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 6) {
  std::ostringstream o;
  o.precision(prec);
  o << v;
  return o.str();
}

// 1 ---------------------------------------------------------------------------
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto results = run_gradient_suite(7);
  const double secs = since(t0);
  const char* required[] = {"conv2d", "deformable_conv2d", "cell_step_literal", "cell_step_standard",
                            "hidden_attention", "res_fft_block", "eica_fuse", "dlefnet_full"};
  bool ok = secs < 120.0;
  double worst = 0;
  std::string failed;
  for (const char* name : required) {
    auto it = std::find_if(results.begin(), results.end(), [&](const CheckResult& r) { return r.name == name; });
    if (it == results.end()) {
      ok = false;
      failed += std::string(" missing:") + name;
      continue;
    }
    worst = std::max(worst, it->max_rel_error);
    if (!(it->max_rel_error <= 1e-4)) {
      ok = false;
      failed += " " + it->name + "=" + fmt(it->max_rel_error);
    }
  }
  for (const auto& r : results) {
    if (!r.passed) {
      ok = false;
      failed += " " + r.name + "(" + fmt(r.max_rel_error) + ">" + fmt(r.tolerance) + ")";
    }
  }
  return {ok, std::to_string(results.size()) + " checks, worst required rel err " + fmt(worst, 3) + ", " +
                  fmt(secs, 3) + " s" + failed};
}

// 2 ---------------------------------------------------------------------------
Outcome zero_offset() {
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> dim(3, 8), ch(1, 4), st(1, 2), kk(0, 1);
    const int k = 2 * kk(rng) + 1, H = dim(rng), W = dim(rng), cin = ch(rng), cout = ch(rng);
    ConvParams<double> p;
    p.weight = random_tensor({cout, cin, k, k}, rng());
    p.bias = random_tensor({cout}, rng());
    p.stride = st(rng);
    const Tensor<double> x = random_tensor({cin, H, W}, rng());
    const Tensor<double> ref = conv2d(x, p);
    const OffsetField<double> off{Tensor<double>({2 * k * k, ref.height(), ref.width()})};
    worst = std::max(worst, max_abs_diff(deformable_conv2d(x, p, off), ref));
  }
  return {worst <= 1e-6, "100 cases, max abs diff " + fmt(worst, 3)};
}

// 3 ---------------------------------------------------------------------------
Outcome variable_n() {
  DlefNet<float> net(NetworkConfig::desk());
  InitOptions init;
  init.seed = 3;
  net.params().initialize(init);
  const std::size_t count = net.params().scalar_count();
  Rng rng(4);
  const int H = 32, W = 24;
  Tensor<float> B({3, H, W});
  for (auto& v : B.storage()) v = static_cast<float>(rng.uniform());
  bool ok = true;
  for (int n = 7; n <= 13; ++n) {
    EventFrameStack st;
    st.bin_us = 1000;
    st.frames = Tensor<float>({n, H, W});
    for (auto& v : st.frames.storage()) v = static_cast<float>(rng.uniform_int(-1, 1));
    const auto outs = net.forward(B, st);
    ok = ok && outs.size() == 3;
    for (int k = 0; k < 3 && ok; ++k) {
      const int f = 1 << (2 - k);
      ok = ok && outs[static_cast<std::size_t>(k)].shape() == Shape({3, H / f, W / f}) &&
           all_finite(outs[static_cast<std::size_t>(k)].value());
    }
    ok = ok && net.params().scalar_count() == count;
  }
  return {ok, "n = 7..13 on 3x" + std::to_string(H) + "x" + std::to_string(W) + " with " + std::to_string(count) +
                  " parameters; outputs (3,8,6) (3,16,12) (3,32,24)"};
}

// 4 ---------------------------------------------------------------------------
Outcome literal_cell() {
  ParamStore<double> store;
  DeffeConfig cfg;
  const auto p = CellParams<double>::make(store, "cell", cfg);
  InitOptions z;
  z.mode = InitMode::zeros;
  store.initialize(z);
  Tensor<double> e({1, 4, 4});
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = static_cast<double>(static_cast<int>(i % 3) - 1);
  const auto out = cell_step_with_image(Var<double>::constant(e), LSTMState<double>::zeros(16, 4, 4),
                                        Var<double>::constant(random_tensor({3, 4, 4}, 1, 0, 1)), p,
                                        LSTMVariant::literal);
  double worst = 0;
  for (double h : out.state.hidden.value().storage()) worst = std::max(worst, std::abs(h - 0.113516));
  return {worst <= 1e-6, "H_t = " + fmt(out.state.hidden.value()[0], 9) + ", max |H_t - 0.113516| = " + fmt(worst, 3)};
}

// 5 ---------------------------------------------------------------------------
Outcome accumulator_oracle() {
  std::mt19937_64 rng(5);
  std::size_t mismatches = 0, non_ternary = 0, events = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    EventStream s;
    s.width = std::uniform_int_distribution<int>(1, 8)(rng);
    s.height = std::uniform_int_distribution<int>(1, 8)(rng);
    s.exposure_us = std::uniform_int_distribution<std::int64_t>(1, 50000)(rng);
    const std::int64_t dt = std::uniform_int_distribution<std::int64_t>(1, 10000)(rng);
    const int count = std::uniform_int_distribution<int>(0, 200)(rng);
    for (int i = 0; i < count; ++i) {
      Event e;
      e.x = static_cast<std::uint16_t>(std::uniform_int_distribution<int>(0, s.width - 1)(rng));
      e.y = static_cast<std::uint16_t>(std::uniform_int_distribution<int>(0, s.height - 1)(rng));
      e.t = std::uniform_int_distribution<std::int64_t>(0, s.exposure_us)(rng);
      e.polarity = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
      s.events.push_back(e);
    }
    std::sort(s.events.begin(), s.events.end(), event_before);
    events += s.events.size();
    // Brute force: integer bin arithmetic per event.
    const std::int64_t n = (s.exposure_us + dt - 1) / dt;
    std::vector<int> sums(static_cast<std::size_t>(n * s.height * s.width), 0);
    for (const Event& e : s.events) {
      const std::int64_t b = e.t == 0 ? 0 : (e.t + dt - 1) / dt - 1;
      sums[static_cast<std::size_t>((b * s.height + e.y) * s.width + e.x)] += e.polarity;
    }
    const auto st = accumulate(s, static_cast<double>(dt));
    if (st.count() != n) {
      ++mismatches;
      continue;
    }
    for (std::size_t i = 0; i < sums.size(); ++i) {
      const float v = st.frames[i];
      if (v != -1.0f && v != 0.0f && v != 1.0f) ++non_ternary;
      if (v != static_cast<float>((sums[i] > 0) - (sums[i] < 0))) ++mismatches;
    }
  }
  return {mismatches == 0 && non_ternary == 0, "1000 streams, " + std::to_string(events) + " events, " +
                                                   std::to_string(mismatches) + " mismatches, " +
                                                   std::to_string(non_ternary) + " non-ternary values"};
}

// 6 ---------------------------------------------------------------------------
Outcome simulator_ramps() {
  std::mt19937_64 rng(6);
  double worst_ratio = 0;
  int trials = 0;
  for (; trials < 500; ++trials) {
    const double thr = std::uniform_real_distribution<double>(0.05, 0.8)(rng);
    const int len = std::uniform_int_distribution<int>(2, 40)(rng);
    const bool up = std::bernoulli_distribution(0.5)(rng);
    std::vector<Tensor<double>> frames;
    std::vector<std::int64_t> ts;
    double v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (int i = 0; i < len; ++i) {
      frames.emplace_back(Shape{1, 1, 1}, v);
      ts.push_back(i * 1000);
      const double step = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
      v = up ? v + step : std::max(0.0, v - step);
    }
    SimConfig cfg;
    cfg.threshold = thr;
    const auto s = simulate_events(frames, ts, cfg);
    long net = 0;
    for (const Event& e : s.events) net += e.polarity;
    const double change = std::log((frames.back()[0] + cfg.floor) / (frames.front()[0] + cfg.floor));
    worst_ratio = std::max(worst_ratio, std::abs(static_cast<double>(net) * thr - change) / thr);
  }
  return {worst_ratio <= 1.0, std::to_string(trials) + " ramps, worst |count*thr - dlogI| = " + fmt(worst_ratio, 4) +
                                  " thr"};
}

// 7 ---------------------------------------------------------------------------
Outcome scheduler() {
  ScheduleConfig cfg;
  cfg.total_steps = 1000;
  const double a = cosine_lr(0, cfg), b = cosine_lr(1000, cfg), m = cosine_lr(500, cfg);
  const bool ok = a == 1e-3 && b == 1e-7 && std::abs(m - 5.00050e-4) <= 1e-9;
  return {ok, "lr(0) = " + fmt(a, 17) + ", lr(total) = " + fmt(b, 17) + ", lr(total/2) = " + fmt(m, 10)};
}

// 8 ---------------------------------------------------------------------------
Outcome metrics() {
  LossConfig cfg;
  const Tensor<double> x = random_tensor({3, 24, 24}, 8, 0, 1);
  const double s = ssim(x, x, cfg);
  const double p = psnr(Tensor<double>({3, 8, 8}), Tensor<double>({3, 8, 8}, 0.1));
  const std::vector<Var<double>> gts{Var<double>::constant(random_tensor({3, 12, 12}, 9, 0, 1)),
                                     Var<double>::constant(random_tensor({3, 24, 24}, 10, 0, 1))};
  const double h = hybrid_loss(gts, gts, cfg).value()[0];
  const bool ok = std::abs(s - 1.0) <= 1e-9 && std::abs(p - 20.0) <= 1e-6 && h == 0.0;
  return {ok, "ssim(x,x) = " + fmt(s, 15) + ", psnr(MSE 0.01) = " + fmt(p, 12) + " dB, hybrid(gt,gt) = " + fmt(h)};
}

// 9 ---------------------------------------------------------------------------
constexpr long kOverfitSteps = 2000;
constexpr double kOverfitPsnr = 28.0;

Outcome overfit() {
  SceneConfig sc;
  sc.width = sc.height = 48;
  sc.seed = 9;
  SampleOptions opt;
  opt.frames_averaged = 8;
  const Sample sample = make_sample(sc, opt);
  TrainConfig cfg;
  cfg.seed = 9;
  long reached = -1;
  const auto rep = overfit_harness(sample, kOverfitSteps, cfg, [&](const StepResult& r) {
    if (reached < 0 && r.psnr >= kOverfitPsnr) reached = r.step;
  });
  const double blurry = psnr(sample.blurry, sample.sharp);
  const bool ok = !rep.diverged && rep.final_psnr >= kOverfitPsnr && rep.seconds <= 600.0 &&
                  rep.losses.back() < rep.losses.front();
  std::string detail = "48x48, n = " + std::to_string(sample.stack.count()) + ", desk config, " +
                       std::to_string(rep.losses.size()) + " steps in " + fmt(rep.seconds, 4) + " s: PSNR " +
                       fmt(rep.initial_psnr, 4) + " -> " + fmt(rep.final_psnr, 4) + " dB (blurry input " +
                       fmt(blurry, 4) + " dB), loss " + fmt(rep.losses.front(), 4) + " -> " +
                       fmt(rep.losses.back(), 4);
  if (reached >= 0) detail += ", first >= 28 dB at step " + std::to_string(reached);
  if (rep.diverged) detail += ", diverged: " + rep.failure;
  return {ok, detail};
}

// 10 --------------------------------------------------------------------------
Outcome parameter_count() {
  const ParamReport r = param_count(NetworkConfig::full());
  std::size_t sum = 0;
  std::string parts;
  for (const auto& [k, v] : r.breakdown) {
    sum += v;
    parts += "\n      " + k + ": " + std::to_string(v);
  }
  const bool ok = r.total >= 8'000'000 && r.total <= 16'000'000 && sum == r.total && !r.breakdown.empty();
  return {ok, "full configuration: " + std::to_string(r.total) + " parameters" + parts};
}

// 11 --------------------------------------------------------------------------
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("evdeblur_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string("\"") + EVDEBLUR_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  };
  const std::string d = (dir / "data").string();
  bool ok = run("synth --out \"" + d + "\" --samples 2 --width 24 --height 24 --seed 11") == 0;
  std::string a, b;
  for (const char* which : {"a", "b"}) {
    const std::string out = (dir / which).string();
    ok = ok && run("train --manifest \"" + d + "/manifest.json\" --out \"" + out +
                   "\" --preset desk --steps 12 --seed 13") == 0;
    if (ok) {
      const Bytes log = read_file(dir / which / "train_log.jsonl");
      (std::string(which) == "a" ? a : b).assign(log.begin(), log.end());
    }
  }
  const std::size_t lines = static_cast<std::size_t>(std::count(a.begin(), a.end(), '\n'));
  ok = ok && !a.empty() && a == b && lines == 12;
  fs::remove_all(dir);
  return {ok, "two 12-step train runs, seed 13: " + std::to_string(lines) + " log lines, traces " +
                  (a == b && !a.empty() ? "identical" : "differ")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"zero-offset reduction", zero_offset},
      {"variable-n contract", variable_n},
      {"literal-equation fidelity", literal_cell},
      {"quantizer/accumulator oracle", accumulator_oracle},
      {"simulator consistency", simulator_ramps},
      {"scheduler endpoints", scheduler},
      {"metric sanity", metrics},
      {"overfit regression", overfit},
      {"parameter-count report", parameter_count},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
