#include "evdeblur/checkpoint.hpp"

#include <cstdio>
#include <set>

#include "evdeblur/io.hpp"

namespace evdeblur {

namespace fs = std::filesystem;

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(what + ": " + e.what(), e.byte);
  }
}

namespace {

void require_keys(const Json& j, const std::set<std::string>& keys, const std::string& what) {
  require(j.is_object(), what + ": expected a JSON object");
  for (const auto& k : keys) require(j.contains(k), what + ": missing field '" + k + "'");
  for (const auto& [k, v] : j.items()) require(keys.count(k) == 1, what + ": unknown field '" + k + "'");
}

template <typename U>
U get(const Json& j, const std::string& key, const std::string& what) {
  try {
    return j.at(key).get<U>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(what + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

}  // namespace

Json config_to_json(const NetworkConfig& cfg) {
  Json loss;
  loss["ssim_weight"] = cfg.loss.ssim_weight;
  loss["window"] = cfg.loss.window;
  loss["sigma"] = cfg.loss.sigma;
  loss["range"] = cfg.loss.range;
  Json j;
  j["levels"] = cfg.levels;
  j["encoder_channels"] = cfg.encoder_channels;
  j["decoder_channels"] = cfg.decoder_channels;
  j["kernel"] = cfg.kernel;
  j["res_blocks"] = cfg.res_blocks;
  j["event_channels"] = cfg.event_channels;
  j["attention_hidden"] = cfg.attention_hidden;
  j["eica_reduction"] = cfg.eica_reduction;
  j["image_channels"] = cfg.image_channels;
  j["lstm_variant"] = lstm_variant_name(cfg.lstm_variant);
  j["loss"] = loss;
  return j;
}

NetworkConfig config_from_json(const Json& j) {
  const std::string what = "network config";
  require_keys(j,
               {"levels", "encoder_channels", "decoder_channels", "kernel", "res_blocks", "event_channels",
                "attention_hidden", "eica_reduction", "image_channels", "lstm_variant", "loss"},
               what);
  NetworkConfig c;
  c.levels = get<int>(j, "levels", what);
  c.encoder_channels = get<std::vector<int>>(j, "encoder_channels", what);
  c.decoder_channels = get<std::vector<int>>(j, "decoder_channels", what);
  c.kernel = get<int>(j, "kernel", what);
  c.res_blocks = get<int>(j, "res_blocks", what);
  c.event_channels = get<int>(j, "event_channels", what);
  c.attention_hidden = get<int>(j, "attention_hidden", what);
  c.eica_reduction = get<int>(j, "eica_reduction", what);
  c.image_channels = get<int>(j, "image_channels", what);
  c.lstm_variant = parse_lstm_variant(get<std::string>(j, "lstm_variant", what));
  const Json& loss = j.at("loss");
  require_keys(loss, {"ssim_weight", "window", "sigma", "range"}, "loss config");
  c.loss.ssim_weight = get<double>(loss, "ssim_weight", "loss config");
  c.loss.window = get<int>(loss, "window", "loss config");
  c.loss.sigma = get<double>(loss, "sigma", "loss config");
  c.loss.range = get<double>(loss, "range", "loss config");
  c.validate();
  return c;
}

Json train_config_to_json(const TrainConfig& cfg) {
  Json schedule;
  schedule["lr_start"] = cfg.schedule.lr_start;
  schedule["lr_end"] = cfg.schedule.lr_end;
  schedule["total_steps"] = cfg.schedule.total_steps;
  Json init;
  init["mode"] = init_mode_name(cfg.init.mode);
  init["scale"] = cfg.init.scale;
  Json j;
  j["network"] = config_to_json(cfg.network);
  j["schedule"] = schedule;
  j["init"] = init;
  j["seed"] = cfg.seed;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  const std::string what = "train config";
  require_keys(j, {"network", "schedule", "init", "seed"}, what);
  TrainConfig c;
  c.network = config_from_json(j.at("network"));
  const Json& s = j.at("schedule");
  require_keys(s, {"lr_start", "lr_end", "total_steps"}, "schedule config");
  c.schedule.lr_start = get<double>(s, "lr_start", "schedule config");
  c.schedule.lr_end = get<double>(s, "lr_end", "schedule config");
  c.schedule.total_steps = get<long>(s, "total_steps", "schedule config");
  c.schedule.validate();
  const Json& i = j.at("init");
  require_keys(i, {"mode", "scale"}, "init config");
  c.init.mode = parse_init_mode(get<std::string>(i, "mode", "init config"));
  c.init.scale = get<double>(i, "scale", "init config");
  c.seed = get<std::uint64_t>(j, "seed", what);
  return c;
}

void save_checkpoint(const fs::path& dir, const DlefNet<float>& net, long step, std::uint64_t seed) {
  fs::create_directories(dir / "params");
  Json params = Json::array();
  std::size_t index = 0;
  for (const auto& e : net.params().entries()) {
    char file[32];
    std::snprintf(file, sizeof file, "params/%05zu.ten1", index++);
    write_tensor(dir / file, e.var.value());
    Json p;
    p["name"] = e.name;
    p["shape"] = e.var.shape();
    p["file"] = file;
    params.push_back(p);
  }
  Json m;
  m["format"] = "evdeblur-checkpoint-1";
  m["config"] = config_to_json(net.config());
  m["step"] = step;
  m["seed"] = seed;
  m["parameter_count"] = net.params().scalar_count();
  m["parameters"] = params;
  write_text_atomic(dir / "manifest.json", dump_json(m));
}

namespace {

Json read_manifest(const fs::path& dir) {
  const Bytes raw = read_file(dir / "manifest.json");
  Json m = parse_json(std::string(raw.begin(), raw.end()), (dir / "manifest.json").string());
  require(m.is_object() && m.value("format", "") == "evdeblur-checkpoint-1",
          "checkpoint '" + dir.string() + "': unrecognized manifest format");
  return m;
}

CheckpointInfo info_from(const Json& m) {
  CheckpointInfo info;
  info.config = config_from_json(m.at("config"));
  info.step = m.at("step").get<long>();
  info.seed = m.at("seed").get<std::uint64_t>();
  return info;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const fs::path& dir) { return info_from(read_manifest(dir)); }

DlefNet<float> load_checkpoint(const fs::path& dir, CheckpointInfo* info) {
  const Json m = read_manifest(dir);
  CheckpointInfo meta = info_from(m);
  DlefNet<float> net(meta.config);
  auto& entries = net.params().entries();
  const Json& params = m.at("parameters");
  require(params.is_array() && params.size() == entries.size(),
          "checkpoint '" + dir.string() + "': parameter list does not match the configured network");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Json& p = params[i];
    require(p.at("name").get<std::string>() == entries[i].name,
            "checkpoint: parameter " + std::to_string(i) + " is '" + p.at("name").get<std::string>() +
                "', expected '" + entries[i].name + "'");
    Tensor<float> t = read_tensor<float>(dir / p.at("file").get<std::string>());
    require(t.shape() == entries[i].var.shape(), "checkpoint: shape mismatch for '" + entries[i].name + "': " +
                                                     shape_str(t.shape()) + " vs " +
                                                     shape_str(entries[i].var.shape()));
    require_finite(t, "checkpoint parameter " + entries[i].name);
    entries[i].var.mutable_value() = std::move(t);
  }
  if (info) *info = meta;
  return net;
}

}  // namespace evdeblur
