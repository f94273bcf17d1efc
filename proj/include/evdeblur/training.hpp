#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evdeblur/dlefnet.hpp"
#include "evdeblur/events.hpp"
#include "evdeblur/metrics.hpp"

namespace evdeblur {

struct ScheduleConfig {
  double lr_start = 1e-3;
  double lr_end = 1e-7;
  long total_steps = 1000;

  void validate() const;
};

/// Cosine decay from lr_start (step 0) to lr_end (step total); later steps stay at lr_end.
double cosine_lr(long step, const ScheduleConfig& cfg);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(const ParamStore<T>& store, AdamConfig cfg = {});
  /// One update of every parameter in `store` from its accumulated gradient.
  void step(ParamStore<T>& store, double lr);
  long steps() const { return t_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  long t_ = 0;
};

/// One training example: blurry RGB image, its event frames and the sharp target.
struct Sample {
  Tensor<float> blurry;  // 3×H×W in [0, 1]
  EventFrameStack stack;
  Tensor<float> sharp;  // 3×H×W
  std::string name;
};

struct TrainConfig {
  NetworkConfig network = NetworkConfig::desk();
  ScheduleConfig schedule;
  InitOptions init;
  std::uint64_t seed = 0;
};

struct TrainState {
  explicit TrainState(const TrainConfig& cfg);

  TrainConfig config;
  DlefNet<float> net;
  Adam<float> optimizer;
  long step = 0;
};

struct StepResult {
  long step = 0;  // step index the update used
  double lr = 0.0;
  double loss = 0.0;
  double psnr = 0.0;  // full-resolution output vs sharp, before the update
};

/// Forward + backward over `batch` (gradients averaged), then one Adam step at
/// cosine_lr(state.step). Throws std::runtime_error on a non-finite loss.
StepResult train_step(TrainState& state, const std::vector<const Sample*>& batch);
StepResult train_step(TrainState& state, const Sample& sample);

/// Forward pass returning the full-resolution reconstruction.
Tensor<float> reconstruct(const DlefNet<float>& net, const Sample& sample);

/// JSON-lines record of one step.
std::string step_log_line(const StepResult& r);

struct OverfitReport {
  std::vector<double> losses;
  double initial_psnr = 0.0;
  double final_psnr = 0.0;
  bool diverged = false;
  std::string failure;
  Tensor<float> reconstruction;
  double seconds = 0.0;
};

constexpr double kDivergenceLoss = 1e3;

/// Trains a fresh network on one sample for `steps` updates.
OverfitReport overfit_harness(const Sample& sample, long steps, const TrainConfig& cfg,
                              const std::function<void(const StepResult&)>& on_step = {});

}  // namespace evdeblur
