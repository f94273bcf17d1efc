#include "evdeblur/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "evdeblur/io.hpp"
#include "evdeblur/params.hpp"

namespace evdeblur {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
  require(width >= 4 && height >= 4 && width % 4 == 0 && height % 4 == 0,
          "SceneConfig: dims must be positive multiples of 4");
  require(frames >= 14, "SceneConfig: frame count must be >= 14");
  require(shapes >= 0, "SceneConfig: shapes must be >= 0");
  require(min_speed >= 0.0 && max_speed >= min_speed, "SceneConfig: need 0 <= min_speed <= max_speed");
  require(frame_interval_us >= 1, "SceneConfig: frame interval must be >= 1 µs");
}

namespace {

struct Shape2D {
  bool disc = true;
  double x0 = 0, y0 = 0, vx = 0, vy = 0;
  double radius = 0, half_w = 0, half_h = 0;
  float color[3] = {0, 0, 0};
};

// Triangle wave: moving centres bounce between lo and hi so motion never leaves the view.
double bounce(double v, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0.0) return lo;
  double t = std::fmod(v - lo, 2.0 * span);
  if (t < 0.0) t += 2.0 * span;
  return lo + (t <= span ? t : 2.0 * span - t);
}

double coverage(const Shape2D& s, double px, double py, double f, int W, int H) {
  const double cx = bounce(s.x0 + s.vx * f, 0.15 * W, 0.85 * W);
  const double cy = bounce(s.y0 + s.vy * f, 0.15 * H, 0.85 * H);
  if (s.disc) {
    const double d = std::hypot(px - cx, py - cy);
    return std::clamp(s.radius - d + 0.5, 0.0, 1.0);
  }
  const double ax = std::clamp(s.half_w - std::abs(px - cx) + 0.5, 0.0, 1.0);
  const double ay = std::clamp(s.half_h - std::abs(py - cy) + 0.5, 0.0, 1.0);
  return ax * ay;
}

}  // namespace

std::vector<Tensor<float>> synth_scene(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int W = cfg.width;
  const int H = cfg.height;
  constexpr double kTau = 2.0 * std::numbers::pi;

  // Background: per channel a mix of two oriented sinusoids.
  Tensor<float> background({3, H, W});
  for (int c = 0; c < 3; ++c) {
    double fx[2], fy[2], ph[2];
    for (int k = 0; k < 2; ++k) {
      fx[k] = rng.uniform(0.02, 0.15);
      fy[k] = rng.uniform(0.02, 0.15);
      ph[k] = rng.uniform(0.0, kTau);
    }
    const double base = rng.uniform(0.35, 0.65);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double v = base;
        for (int k = 0; k < 2; ++k) v += 0.12 * std::sin(kTau * (fx[k] * x + fy[k] * y) + ph[k]);
        background.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  std::vector<Shape2D> shapes(static_cast<std::size_t>(cfg.shapes));
  const double extent = std::min(W, H);
  for (auto& s : shapes) {
    s.disc = rng.uniform() < 0.5;
    s.x0 = rng.uniform(0.15 * W, 0.85 * W);
    s.y0 = rng.uniform(0.15 * H, 0.85 * H);
    const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    const double dir = rng.uniform(0.0, kTau);
    s.vx = speed * std::cos(dir);
    s.vy = speed * std::sin(dir);
    s.radius = rng.uniform(0.08, 0.18) * extent;
    s.half_w = rng.uniform(0.06, 0.16) * extent;
    s.half_h = rng.uniform(0.06, 0.16) * extent;
    for (float& c : s.color) c = static_cast<float>(rng.uniform(0.0, 1.0));
  }

  std::vector<Tensor<float>> frames(static_cast<std::size_t>(cfg.frames), background);
#pragma omp parallel for schedule(static)
  for (int f = 0; f < cfg.frames; ++f) {
    Tensor<float>& img = frames[static_cast<std::size_t>(f)];
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        for (const auto& s : shapes) {
          const double a = coverage(s, x, y, f, W, H);
          if (a <= 0.0) continue;
          for (int c = 0; c < 3; ++c) {
            float& v = img.at(c, y, x);
            v = static_cast<float>((1.0 - a) * v + a * s.color[c]);
          }
        }
      }
    }
  }
  return frames;
}

BlurResult make_blur(const std::vector<Tensor<float>>& frames, int M, std::int64_t frame_interval_us, bool protocol,
                     int start) {
  if (protocol) {
    require(M >= 7 && M <= 13, "make_blur: averaged frame count M must lie in [7, 13], got " + std::to_string(M));
  }
  require(M >= 2, "make_blur: M must be >= 2");
  require(start >= 0 && static_cast<std::size_t>(start) + M <= frames.size(),
          "make_blur: window of " + std::to_string(M) + " frames exceeds the " + std::to_string(frames.size()) +
              "-frame sequence");
  require(frame_interval_us >= 1, "make_blur: frame interval must be >= 1 µs");
  const Shape& shape = frames[static_cast<std::size_t>(start)].shape();
  BlurResult r;
  r.frames_averaged = M;
  r.exposure_us = static_cast<std::int64_t>(M - 1) * frame_interval_us;
  std::vector<double> acc(shape_numel(shape), 0.0);
  for (int k = start; k < start + M; ++k) {
    const auto& f = frames[static_cast<std::size_t>(k)];
    require(f.shape() == shape, "make_blur: frame shape mismatch");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f[i];
  }
  r.blurry = Tensor<float>(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) r.blurry[i] = static_cast<float>(acc[i] / M);
  r.sharp = frames[static_cast<std::size_t>(start + (M - 1) / 2)];
  return r;
}

Tensor<double> luma(const Tensor<float>& rgb) {
  require(rgb.ndim() == 3 && rgb.channels() == 3, "luma: expected 3×H×W, got " + shape_str(rgb.shape()));
  Tensor<double> y({1, rgb.height(), rgb.width()});
  for (int h = 0; h < rgb.height(); ++h) {
    for (int w = 0; w < rgb.width(); ++w) {
      y.at(0, h, w) = 0.299 * rgb.at(0, h, w) + 0.587 * rgb.at(1, h, w) + 0.114 * rgb.at(2, h, w);
    }
  }
  return y;
}

// Manifests --------------------------------------------------------------------

Json scene_to_json(const SceneConfig& cfg) {
  Json j;
  j["width"] = cfg.width;
  j["height"] = cfg.height;
  j["shapes"] = cfg.shapes;
  j["min_speed"] = cfg.min_speed;
  j["max_speed"] = cfg.max_speed;
  j["frames"] = cfg.frames;
  j["frame_interval_us"] = cfg.frame_interval_us;
  j["seed"] = cfg.seed;
  return j;
}

SceneConfig scene_from_json(const Json& j) {
  SceneConfig c;
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.shapes = j.value("shapes", c.shapes);
  c.min_speed = j.value("min_speed", c.min_speed);
  c.max_speed = j.value("max_speed", c.max_speed);
  c.frames = j.value("frames", c.frames);
  c.frame_interval_us = j.value("frame_interval_us", c.frame_interval_us);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Json manifest_to_json(const DatasetManifest& m) {
  Json samples = Json::array();
  for (const auto& e : m.samples) {
    Json s;
    s["name"] = e.name;
    s["blurry"] = e.blurry;
    s["sharp"] = e.sharp;
    s["events"] = e.events;
    s["stack"] = e.stack;
    s["frames_averaged"] = e.frames_averaged;
    s["bin_us"] = e.bin_us;
    s["exposure_us"] = e.exposure_us;
    s["frame_count"] = e.frame_count;
    s["width"] = e.width;
    s["height"] = e.height;
    samples.push_back(s);
  }
  Json j;
  j["format"] = "evdeblur-dataset-1";
  j["seed"] = m.seed;
  j["threshold"] = m.threshold;
  j["scene"] = m.scene;
  j["samples"] = samples;
  return j;
}

DatasetManifest manifest_from_json(const Json& j) {
  require(j.is_object() && j.value("format", "") == "evdeblur-dataset-1", "dataset manifest: unrecognized format");
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.threshold = j.at("threshold").get<double>();
    m.scene = j.at("scene");
    for (const auto& s : j.at("samples")) {
      ManifestEntry e;
      e.name = s.at("name").get<std::string>();
      e.blurry = s.at("blurry").get<std::string>();
      e.sharp = s.at("sharp").get<std::string>();
      e.events = s.at("events").get<std::string>();
      e.stack = s.at("stack").get<std::string>();
      e.frames_averaged = s.at("frames_averaged").get<int>();
      e.bin_us = s.at("bin_us").get<double>();
      e.exposure_us = s.at("exposure_us").get<std::int64_t>();
      e.frame_count = s.at("frame_count").get<int>();
      e.width = s.at("width").get<int>();
      e.height = s.at("height").get<int>();
      m.samples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ContractViolation(std::string("dataset manifest: ") + ex.what());
  }
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  write_text_atomic(path, dump_json(manifest_to_json(m)));
}

DatasetManifest read_manifest(const fs::path& path) {
  const Bytes raw = read_file(path);
  return manifest_from_json(parse_json(std::string(raw.begin(), raw.end()), path.string()));
}

// Samples ------------------------------------------------------------------------

Sample make_sample(const SceneConfig& scene, const SampleOptions& opt, EventStream* events_out) {
  const auto frames = synth_scene(scene);
  const BlurResult blur = make_blur(frames, opt.frames_averaged, scene.frame_interval_us, opt.protocol);
  std::vector<Tensor<double>> gray;
  std::vector<std::int64_t> times;
  for (int k = 0; k < opt.frames_averaged; ++k) {
    gray.push_back(luma(frames[static_cast<std::size_t>(k)]));
    times.push_back(static_cast<std::int64_t>(k) * scene.frame_interval_us);
  }
  EventStream events = simulate_events(gray, times, opt.sim);
  const double bin = opt.bin_us ? *opt.bin_us
                                : static_cast<double>(blur.exposure_us) / static_cast<double>(opt.frames_averaged);
  Sample s;
  s.blurry = blur.blurry;
  s.sharp = blur.sharp;
  s.stack = accumulate(events, bin);
  if (events_out) *events_out = std::move(events);
  return s;
}

ManifestEntry build_sample(const SceneConfig& scene, const SampleOptions& opt, const fs::path& dir,
                           const std::string& name) {
  EventStream events;
  const Sample s = make_sample(scene, opt, &events);
  ManifestEntry e;
  e.name = name;
  e.blurry = name + "/blurry.ppm";
  e.sharp = name + "/sharp.ppm";
  e.events = name + "/events.evt1";
  e.stack = name + "/stack.ten1";
  e.frames_averaged = opt.frames_averaged;
  e.bin_us = s.stack.bin_us;
  e.exposure_us = events.exposure_us;
  e.frame_count = s.stack.count();
  e.width = scene.width;
  e.height = scene.height;
  write_image(dir / e.blurry, image_from_tensor(s.blurry));
  write_image(dir / e.sharp, image_from_tensor(s.sharp));
  write_events(dir / e.events, events);
  write_tensor(dir / e.stack, s.stack.frames);
  return e;
}

Sample load_sample(const fs::path& manifest_dir, const ManifestEntry& e) {
  const std::string what = "sample '" + e.name + "': ";
  Sample s;
  s.name = e.name;
  s.blurry = tensor_from_image(read_image(manifest_dir / e.blurry));
  s.sharp = tensor_from_image(read_image(manifest_dir / e.sharp));
  const EventStream events = read_events(manifest_dir / e.events);
  s.stack.bin_us = e.bin_us;
  s.stack.frames = read_tensor<float>(manifest_dir / e.stack);
  require(s.blurry.channels() == 3, what + "blurry image must be RGB");
  require(s.blurry.shape() == s.sharp.shape(), what + "blurry and sharp dims differ");
  require(s.blurry.height() == e.height && s.blurry.width() == e.width, what + "image dims disagree with manifest");
  require(events.width == e.width && events.height == e.height, what + "event sensor dims disagree with manifest");
  require(events.exposure_us == e.exposure_us, what + "event exposure disagrees with manifest");
  const Shape want{e.frame_count, e.height, e.width};
  require(s.stack.frames.shape() == want, what + "stack shape " + shape_str(s.stack.frames.shape()) + " expected " +
                                              shape_str(want));
  require(e.frame_count == frame_count(static_cast<double>(e.exposure_us), e.bin_us),
          what + "frame count inconsistent with exposure and bin width");
  for (float v : s.stack.frames.storage()) require(v == -1.0f || v == 0.0f || v == 1.0f, what + "stack not ternary");
  return s;
}

}  // namespace evdeblur
