#include "evdeblur/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace evdeblur {

void ScheduleConfig::validate() const {
  require(lr_start > lr_end && lr_end > 0.0, "ScheduleConfig: need lr_start > lr_end > 0");
  require(total_steps >= 1, "ScheduleConfig: total_steps must be >= 1");
}

double cosine_lr(long step, const ScheduleConfig& cfg) {
  cfg.validate();
  if (step <= 0) return cfg.lr_start;
  if (step >= cfg.total_steps) return cfg.lr_end;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(phase));
}

template <typename T>
Adam<T>::Adam(const ParamStore<T>& store, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& e : store.entries()) {
    m_.emplace_back(e.var.shape());
    v_.emplace_back(e.var.shape());
  }
}

template <typename T>
void Adam<T>::step(ParamStore<T>& store, double lr) {
  auto& entries = store.entries();
  require(entries.size() == m_.size(), "Adam: parameter store changed since construction");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg_.eps);
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Var<T>& var = entries[p].var;
    if (var.grad().empty()) continue;
    const Tensor<T>& g = var.grad();
    Tensor<T>& w = var.mutable_value();
    Tensor<T>& m = m_[p];
    Tensor<T>& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

namespace {
DlefNet<float> initialized_net(const TrainConfig& cfg) {
  DlefNet<float> net(cfg.network);
  InitOptions init = cfg.init;
  init.seed = cfg.seed;
  net.params().initialize(init);
  return net;
}
}  // namespace

TrainState::TrainState(const TrainConfig& cfg)
    : config(cfg), net(initialized_net(cfg)), optimizer(net.params()) {
  config.schedule.validate();
}

Tensor<float> reconstruct(const DlefNet<float>& net, const Sample& sample) {
  return net.forward(sample.blurry, sample.stack).back().value();
}

StepResult train_step(TrainState& state, const std::vector<const Sample*>& batch) {
  require(!batch.empty(), "train_step: empty batch");
  const int levels = state.net.config().levels;
  const LossConfig& loss_cfg = state.net.config().loss;
  state.net.params().zero_grad();
  StepResult r;
  r.step = state.step;
  r.lr = cosine_lr(state.step, state.config.schedule);
  const float share = 1.0f / static_cast<float>(batch.size());
  for (const Sample* s : batch) {
    std::vector<Var<float>> outputs = state.net.forward(s->blurry, s->stack);
    std::vector<Var<float>> targets;
    for (auto& t : image_pyramid(s->sharp, levels)) targets.push_back(Var<float>::constant(std::move(t)));
    Var<float> loss = hybrid_loss(outputs, targets, loss_cfg);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
      throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(state.step) + " on sample '" +
                               s->name + "'");
    }
    r.loss += value / static_cast<double>(batch.size());
    r.psnr += psnr(outputs.back().value(), s->sharp) / static_cast<double>(batch.size());
    backward(loss, Tensor<float>({1}, share));
  }
  state.optimizer.step(state.net.params(), r.lr);
  ++state.step;
  return r;
}

StepResult train_step(TrainState& state, const Sample& sample) { return train_step(state, {&sample}); }

std::string step_log_line(const StepResult& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["loss"] = r.loss;
  j["psnr"] = r.psnr;
  return j.dump();
}

OverfitReport overfit_harness(const Sample& sample, long steps, const TrainConfig& cfg,
                              const std::function<void(const StepResult&)>& on_step) {
  require(steps >= 1, "overfit_harness: steps must be >= 1");
  TrainConfig c = cfg;
  c.schedule.total_steps = steps;
  TrainState state(c);
  OverfitReport report;
  const auto start = std::chrono::steady_clock::now();
  for (long i = 0; i < steps; ++i) {
    StepResult r;
    try {
      r = train_step(state, sample);
    } catch (const std::runtime_error& e) {
      report.diverged = true;
      report.failure = e.what();
      break;
    }
    if (i == 0) report.initial_psnr = r.psnr;
    report.losses.push_back(r.loss);
    if (on_step) on_step(r);
    if (r.loss > kDivergenceLoss) {
      report.diverged = true;
      report.failure = "loss " + std::to_string(r.loss) + " exceeded the divergence bound at step " +
                       std::to_string(r.step);
      break;
    }
  }
  report.reconstruction = reconstruct(state.net, sample);
  report.final_psnr = psnr(report.reconstruction, sample.sharp);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace evdeblur
