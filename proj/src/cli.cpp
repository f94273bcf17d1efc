#include "evdeblur/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "evdeblur/checkpoint.hpp"
#include "evdeblur/io.hpp"
#include "evdeblur/ops.hpp"
#include "evdeblur/synth.hpp"
#include "evdeblur/training.hpp"
#include "evdeblur/verification.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace evdeblur {

namespace fs = std::filesystem;

namespace {

// Thrown when a command ran but a check it performs did not pass.
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("EVDEBLUR_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument("trailing characters");
    return s;
  } catch (const std::exception&) {
    throw ContractViolation(std::string("EVDEBLUR_SEED is not an unsigned integer: '") + v + "'");
  }
}

/// Explicit flag, then EVDEBLUR_SEED, then the fallback (e.g. a manifest's seed).
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (auto e = env_seed()) return *e;
  return fallback;
}

NetworkConfig preset(const std::string& name) {
  if (name == "full") return NetworkConfig::full();
  if (name == "desk") return NetworkConfig::desk();
  if (name == "tiny") return NetworkConfig::tiny();
  throw ContractViolation("unknown preset '" + name + "' (expected full|desk|tiny)");
}

Json load_json_file(const fs::path& p) {
  const Bytes raw = read_file(p);
  return parse_json(std::string(raw.begin(), raw.end()), p.string());
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t i) {
  Rng r(seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
  return r.next();
}

// Pads B and the frames to the network's divisor; returns the cropped reconstruction.
Tensor<float> run_padded(const DlefNet<float>& net, const Tensor<float>& blurry, const EventFrameStack& stack) {
  const int div = net.config().divisor();
  const int H = blurry.height();
  const int W = blurry.width();
  const int ph = (div - H % div) % div;
  const int pw = (div - W % div) % div;
  Var<float> b = reflect_pad(Var<float>::constant(blurry), ph, pw);
  std::vector<Var<float>> frames;
  for (const auto& f : frame_vars<float>(stack)) frames.push_back(reflect_pad(f, ph, pw));
  return crop(net.forward(b, frames).back(), H, W).value();
}

Image8 side_by_side(const Image8& a, const Image8& b) {
  Image8 out;
  out.channels = a.channels;
  out.height = a.height;
  out.width = a.width + b.width;
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  for (int y = 0; y < a.height; ++y) {
    auto row = out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * out.width * out.channels;
    std::copy_n(a.pixels.begin() + static_cast<std::ptrdiff_t>(y) * a.width * a.channels, a.width * a.channels, row);
    std::copy_n(b.pixels.begin() + static_cast<std::ptrdiff_t>(y) * b.width * b.channels, b.width * b.channels,
                row + a.width * a.channels);
  }
  return out;
}

void emit_json(const Json& j, const std::string& out_path) {
  std::cout << dump_json(j);
  if (!out_path.empty()) write_text_atomic(out_path, dump_json(j));
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int samples = 4;
  SceneConfig scene;
  std::optional<std::uint64_t> seed;
  int m_min = 7;
  int m_max = 13;
  double threshold = 0.2;
  std::optional<double> bin_us;
};

int cmd_synth(const SynthArgs& a) {
  require(a.samples >= 1, "synth: --samples must be >= 1");
  require(a.m_min <= a.m_max, "synth: --m-min must be <= --m-max");
  DatasetManifest m;
  m.seed = resolve_seed(a.seed, 0);
  m.threshold = a.threshold;
  SceneConfig base = a.scene;
  base.seed = m.seed;
  m.scene = scene_to_json(base);
  const fs::path dir = a.out;
  for (int i = 0; i < a.samples; ++i) {
    SceneConfig sc = base;
    sc.seed = sample_seed(m.seed, static_cast<std::size_t>(i));
    SampleOptions opt;
    opt.frames_averaged = a.m_min + i % (a.m_max - a.m_min + 1);
    opt.bin_us = a.bin_us;
    opt.protocol = !a.bin_us.has_value();
    opt.sim.threshold = a.threshold;
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04d", i);
    m.samples.push_back(build_sample(sc, opt, dir, name));
  }
  write_manifest(dir / "manifest.json", m);
  std::cout << "wrote " << m.samples.size() << " samples to " << (dir / "manifest.json").string() << "\n";
  return 0;
}

// --- events / frames -----------------------------------------------------------

struct EventsArgs {
  std::vector<std::string> inputs;
  std::string csv;
  std::string out;
  std::int64_t interval_us = 1000;
  SimConfig sim;
  int width = 0;
  int height = 0;
  std::int64_t exposure_us = -1;
};

int cmd_events(const EventsArgs& a) {
  EventStream s;
  if (!a.csv.empty()) {
    require(a.inputs.empty(), "events: give either frame images or --csv, not both");
    require(a.width > 0 && a.height > 0 && a.exposure_us >= 0,
            "events: --csv needs --width, --height and --exposure-us");
    const Bytes raw = read_file(a.csv);
    s = parse_events_csv(std::string(raw.begin(), raw.end()), a.width, a.height, a.exposure_us);
  } else {
    require(a.inputs.size() >= 2, "events: need at least 2 frame images");
    std::vector<Tensor<double>> frames;
    std::vector<std::int64_t> times;
    for (std::size_t i = 0; i < a.inputs.size(); ++i) {
      const Tensor<float> img = tensor_from_image(read_image(a.inputs[i]));
      frames.push_back(img.channels() == 3 ? luma(img) : img.cast<double>());
      times.push_back(static_cast<std::int64_t>(i) * a.interval_us);
    }
    s = simulate_events(frames, times, a.sim);
  }
  write_events(a.out, s);
  const StreamStats st = stream_stats(s, std::max<double>(1.0, static_cast<double>(s.exposure_us)));
  Json j;
  j["events"] = st.count;
  j["positive"] = st.positive;
  j["negative"] = st.negative;
  j["exposure_us"] = s.exposure_us;
  std::cout << j.dump() << "\n";
  return 0;
}

struct FramesArgs {
  std::string events;
  std::string out;
  std::optional<double> bin_us;
  std::optional<int> count;
};

int cmd_frames(const FramesArgs& a) {
  const EventStream s = read_events(a.events);
  require(a.bin_us.has_value() != a.count.has_value(), "frames: give exactly one of --bin-us or --count");
  const double bin = a.bin_us ? *a.bin_us : static_cast<double>(s.exposure_us) / static_cast<double>(*a.count);
  const EventFrameStack stack = accumulate(s, bin);
  if (!a.out.empty()) write_tensor(a.out, stack.frames);
  const StreamStats st = stream_stats(s, bin);
  Json j;
  j["frames"] = stack.count();
  j["bin_us"] = bin;
  j["events"] = st.count;
  j["positive"] = st.positive;
  j["negative"] = st.negative;
  j["per_bin"] = st.per_bin;
  std::cout << j.dump() << "\n";
  return 0;
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out;
  std::string config;
  std::string preset = "desk";
  std::string init = "standard";
  double init_scale = 1.0;
  long steps = 200;
  int batch = 1;
  double lr_start = 1e-3;
  double lr_end = 1e-7;
  std::optional<std::uint64_t> seed;
  std::string log;
  long checkpoint_every = 0;
};

int cmd_train(const TrainArgs& a) {
  require(a.steps >= 0, "train: --steps must be >= 0");
  require(a.batch >= 1, "train: --batch must be >= 1");
  DatasetManifest manifest;
  fs::path mdir;
  if (!a.manifest.empty()) {
    manifest = read_manifest(a.manifest);
    mdir = fs::path(a.manifest).parent_path();
  }
  TrainConfig cfg;
  if (!a.config.empty()) {
    const Json j = load_json_file(a.config);
    cfg = j.contains("network") ? train_config_from_json(j) : TrainConfig{config_from_json(j), {}, {}, 0};
  } else {
    cfg.network = preset(a.preset);
    cfg.init.mode = parse_init_mode(a.init);
    cfg.init.scale = a.init_scale;
    cfg.schedule.lr_start = a.lr_start;
    cfg.schedule.lr_end = a.lr_end;
  }
  cfg.schedule.total_steps = std::max(1L, a.steps);
  cfg.seed = resolve_seed(a.seed, manifest.seed);

  TrainState state(cfg);
  const fs::path out = a.out;
  if (a.steps > 0) {
    require(!manifest.samples.empty(), "train: --manifest with at least one sample is required when --steps > 0");
    std::vector<Sample> samples;
    for (const auto& e : manifest.samples) samples.push_back(load_sample(mdir, e));
    std::ofstream log;
    const fs::path log_path = a.log.empty() ? out / "train_log.jsonl" : fs::path(a.log);
    if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
    log.open(log_path, std::ios::trunc);
    require(static_cast<bool>(log), "train: cannot open log file '" + log_path.string() + "'");
    std::size_t cursor = 0;
    for (long s = 0; s < a.steps; ++s) {
      std::vector<const Sample*> batch;
      for (int b = 0; b < a.batch; ++b) batch.push_back(&samples[cursor++ % samples.size()]);
      const StepResult r = train_step(state, batch);
      log << step_log_line(r) << "\n";
      log.flush();
      if (a.checkpoint_every > 0 && (s + 1) % a.checkpoint_every == 0 && s + 1 < a.steps) {
        save_checkpoint(out / ("step_" + std::to_string(s + 1)), state.net, state.step, cfg.seed);
      }
    }
  }
  save_checkpoint(out, state.net, state.step, cfg.seed);
  std::cout << "checkpoint written to " << out.string() << " (" << state.net.params().scalar_count()
            << " parameters, step " << state.step << ")\n";
  return 0;
}

// --- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string manifest;
  std::string pred_dir;
  std::string checkpoint;
  std::string out;
  std::optional<double> min_psnr;
};

int cmd_eval(const EvalArgs& a) {
  require(a.pred_dir.empty() || a.checkpoint.empty(), "eval: --pred-dir and --checkpoint are exclusive");
  const DatasetManifest m = read_manifest(a.manifest);
  const fs::path mdir = fs::path(a.manifest).parent_path();
  std::optional<DlefNet<float>> net;
  if (!a.checkpoint.empty()) net.emplace(load_checkpoint(a.checkpoint));
  const LossConfig loss_cfg = net ? net->config().loss : LossConfig{};
  Json rows = Json::array();
  double sum_psnr = 0.0;
  double sum_ssim = 0.0;
  for (const auto& e : m.samples) {
    const Sample s = load_sample(mdir, e);
    Tensor<float> pred;
    std::string source;
    if (!a.pred_dir.empty()) {
      pred = tensor_from_image(read_image(fs::path(a.pred_dir) / (e.name + ".ppm")));
      source = "prediction";
    } else if (net) {
      pred = run_padded(*net, s.blurry, s.stack);
      source = "checkpoint";
    } else {
      pred = s.blurry;
      source = "blurry";
    }
    require(pred.shape() == s.sharp.shape(), "eval: prediction for '" + e.name + "' has shape " +
                                                 shape_str(pred.shape()) + ", expected " + shape_str(s.sharp.shape()));
    const double p = psnr(pred, s.sharp);
    const double q = ssim(pred, s.sharp, loss_cfg);
    sum_psnr += p;
    sum_ssim += q;
    Json r;
    r["name"] = e.name;
    r["source"] = source;
    r["psnr"] = p;
    r["ssim"] = q;
    rows.push_back(r);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, m.samples.size()));
  Json j;
  j["samples"] = rows;
  j["mean_psnr"] = sum_psnr / n;
  j["mean_ssim"] = sum_ssim / n;
  emit_json(j, a.out);
  if (a.min_psnr && sum_psnr / n < *a.min_psnr) {
    throw CheckFailed("mean PSNR " + std::to_string(sum_psnr / n) + " dB below --min-psnr " +
                      std::to_string(*a.min_psnr));
  }
  return 0;
}

// --- infer -----------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string blurry;
  std::string events;
  std::string stack;
  std::optional<double> bin_us;
  std::optional<int> count;
  std::string out;
  std::string side_by_side;
};

int cmd_infer(const InferArgs& a) {
  const DlefNet<float> net = load_checkpoint(a.checkpoint);
  const Image8 in = read_image(a.blurry);
  require(in.channels == 3, "infer: blurry input must be an RGB (P6) image");
  const Tensor<float> blurry = tensor_from_image(in);
  EventFrameStack stack;
  if (!a.stack.empty()) {
    require(a.events.empty(), "infer: give either --stack or --events");
    stack.frames = read_tensor<float>(a.stack);
  } else {
    require(!a.events.empty(), "infer: --events or --stack is required");
    const EventStream s = read_events(a.events);
    require(a.bin_us.has_value() != a.count.has_value(), "infer: give exactly one of --bin-us or --count");
    stack = accumulate(s, a.bin_us ? *a.bin_us : static_cast<double>(s.exposure_us) / static_cast<double>(*a.count));
  }
  require(stack.frames.ndim() == 3 && stack.height() == blurry.height() && stack.width() == blurry.width(),
          "infer: event frames " + shape_str(stack.frames.shape()) + " do not match image " +
              shape_str(blurry.shape()));
  const Tensor<float> out = run_padded(net, blurry, stack);
  const Image8 img = image_from_tensor(out);
  write_image(a.out, img);
  if (!a.side_by_side.empty()) write_image(a.side_by_side, side_by_side(in, img));
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

// --- gradcheck / params ------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed, const std::string& out) {
  const auto results = run_gradient_suite(seed);
  Json checks = Json::array();
  bool all = true;
  for (const auto& r : results) {
    Json c;
    c["name"] = r.name;
    c["max_rel_error"] = r.max_rel_error;
    c["tolerance"] = r.tolerance;
    c["coordinates"] = r.coordinates;
    c["seconds"] = r.seconds;
    c["passed"] = r.passed;
    if (!r.passed) c["detail"] = r.detail;
    checks.push_back(c);
    all = all && r.passed;
  }
  Json j;
  j["checks"] = checks;
  j["passed"] = all;
  emit_json(j, out);
  if (!all) throw CheckFailed("gradient check failed");
  return 0;
}

int cmd_params(const std::string& preset_name, const std::string& config) {
  const NetworkConfig cfg = config.empty() ? preset(preset_name) : config_from_json(load_json_file(config));
  const ParamReport r = param_count(cfg);
  Json j;
  j["config"] = config_to_json(cfg);
  j["total"] = r.total;
  j["breakdown"] = r.breakdown;
  std::cout << dump_json(j);
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Event-assisted motion deblurring toolkit"};
  app.name("evdeblur");
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Cap the number of worker threads")->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Build a synthetic dataset (blurry/sharp/events/stack per sample)");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--samples", synth.samples, "Number of samples");
  c_synth->add_option("--width", synth.scene.width, "Canvas width (multiple of 4)");
  c_synth->add_option("--height", synth.scene.height, "Canvas height (multiple of 4)");
  c_synth->add_option("--frames", synth.scene.frames, "High-rate frames per scene (>= 14)");
  c_synth->add_option("--shapes", synth.scene.shapes, "Moving shapes per scene");
  c_synth->add_option("--min-speed", synth.scene.min_speed, "Minimum speed, px/frame");
  c_synth->add_option("--max-speed", synth.scene.max_speed, "Maximum speed, px/frame");
  c_synth->add_option("--interval-us", synth.scene.frame_interval_us, "Frame interval in microseconds");
  c_synth->add_option("--m-min", synth.m_min, "Smallest averaged frame count");
  c_synth->add_option("--m-max", synth.m_max, "Largest averaged frame count");
  c_synth->add_option("--threshold", synth.threshold, "Contrast threshold");
  c_synth->add_option("--bin-us", synth.bin_us, "Fixed bin width (free mode); default ΔT = T/M");
  c_synth->add_option("--seed", synth.seed, "Seed (overrides EVDEBLUR_SEED)");

  EventsArgs events;
  auto* c_events = app.add_subcommand("events", "Simulate events from frame images, or convert CSV, to EVT1");
  c_events->add_option("frames", events.inputs, "Frame images (PPM/PGM) in time order");
  c_events->add_option("--csv", events.csv, "CSV input with header x,y,t,p");
  c_events->add_option("--out", events.out, "Output EVT1 file")->required();
  c_events->add_option("--interval-us", events.interval_us, "Frame interval in microseconds");
  c_events->add_option("--threshold", events.sim.threshold, "Contrast threshold");
  c_events->add_option("--floor", events.sim.floor, "Intensity floor added before the log");
  c_events->add_option("--width", events.width, "Sensor width (CSV input)");
  c_events->add_option("--height", events.height, "Sensor height (CSV input)");
  c_events->add_option("--exposure-us", events.exposure_us, "Exposure in microseconds (CSV input)");

  FramesArgs frames;
  auto* c_frames = app.add_subcommand("frames", "Accumulate an EVT1 stream into ternary frames (TEN1)");
  c_frames->add_option("--events", frames.events, "Input EVT1 file")->required();
  c_frames->add_option("--out", frames.out, "Output TEN1 stack");
  c_frames->add_option("--bin-us", frames.bin_us, "Bin width ΔT in microseconds");
  c_frames->add_option("--count", frames.count, "Number of frames (ΔT = T/count)");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a network on a dataset manifest");
  c_train->add_option("--manifest", train.manifest, "Dataset manifest.json");
  c_train->add_option("--out", train.out, "Checkpoint directory")->required();
  c_train->add_option("--config", train.config, "Network or training config JSON");
  c_train->add_option("--preset", train.preset, "full|desk|tiny");
  c_train->add_option("--init", train.init, "zeros|standard|random");
  c_train->add_option("--init-scale", train.init_scale, "Multiplier on the initialization bound");
  c_train->add_option("--steps", train.steps, "Optimizer steps");
  c_train->add_option("--batch", train.batch, "Samples per step");
  c_train->add_option("--lr-start", train.lr_start, "Initial learning rate");
  c_train->add_option("--lr-end", train.lr_end, "Final learning rate");
  c_train->add_option("--seed", train.seed, "Seed (overrides EVDEBLUR_SEED and the manifest seed)");
  c_train->add_option("--log", train.log, "JSON-lines log path (default <out>/train_log.jsonl)");
  c_train->add_option("--checkpoint-every", train.checkpoint_every, "Write <out>/step_N every N steps");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM over a manifest");
  c_eval->add_option("--manifest", eval.manifest, "Dataset manifest.json")->required();
  c_eval->add_option("--pred-dir", eval.pred_dir, "Directory of <sample>.ppm predictions");
  c_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint to run on each sample");
  c_eval->add_option("--out", eval.out, "Also write the JSON report here");
  c_eval->add_option("--min-psnr", eval.min_psnr, "Fail (exit 1) below this mean PSNR");

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Deblur one image with its events");
  c_infer->add_option("--checkpoint", infer.checkpoint, "Checkpoint directory")->required();
  c_infer->add_option("--blurry", infer.blurry, "Blurry RGB PPM")->required();
  c_infer->add_option("--events", infer.events, "EVT1 events");
  c_infer->add_option("--stack", infer.stack, "TEN1 event frames (instead of --events)");
  c_infer->add_option("--bin-us", infer.bin_us, "Bin width for --events");
  c_infer->add_option("--count", infer.count, "Frame count for --events (ΔT = T/count)");
  c_infer->add_option("--out", infer.out, "Output PPM")->required();
  c_infer->add_option("--side-by-side", infer.side_by_side, "Also write blurry|deblurred comparison PPM");

  std::optional<std::uint64_t> gc_seed;
  std::string gc_out;
  auto* c_grad = app.add_subcommand("gradcheck", "Run the finite-difference verification suite");
  c_grad->add_option("--seed", gc_seed, "Seed for the random probes");
  c_grad->add_option("--out", gc_out, "Also write the JSON report here");

  std::string p_preset = "full";
  std::string p_config;
  auto* c_params = app.add_subcommand("params", "Report learnable parameter counts");
  c_params->add_option("--preset", p_preset, "full|desk|tiny");
  c_params->add_option("--config", p_config, "Network config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif

  try {
    if (*c_synth) return cmd_synth(synth);
    if (*c_events) return cmd_events(events);
    if (*c_frames) return cmd_frames(frames);
    if (*c_train) return cmd_train(train);
    if (*c_eval) return cmd_eval(eval);
    if (*c_infer) return cmd_infer(infer);
    if (*c_grad) return cmd_gradcheck(resolve_seed(gc_seed, 7), gc_out);
    if (*c_params) return cmd_params(p_preset, p_config);
  } catch (const CheckFailed& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace evdeblur
