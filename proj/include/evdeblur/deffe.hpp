#pragma once

#include <string>
#include <utility>
#include <vector>

#include "evdeblur/params.hpp"

namespace evdeblur {

enum class LSTMVariant {
  literal,   // every gate σ, C_t = f_t ⊙ tanh(c_t)
  standard,  // candidate tanh, C_t = f_t ⊙ C_{t−1} + i_t ⊙ c_t
};

LSTMVariant parse_lstm_variant(const std::string& name);
std::string lstm_variant_name(LSTMVariant v);

struct DeffeConfig {
  int hidden_channels = 16;  // per direction
  int image_channels = 3;
  int attention_hidden = 2;
  LSTMVariant variant = LSTMVariant::literal;

  void validate() const;
};

/// One deformable term W⊗x: a plain 3×3 conv predicts the sampling offsets
/// from x, and a 3×3 deformable conv produces all four gate blocks at once.
template <typename T>
struct DeformTerm {
  Conv<T> offset;  // cin → 18
  Var<T> weight;   // 4·C_h × cin × 3 × 3, gate blocks stacked as i, f, o, c
  Var<T> bias;     // 4·C_h or empty

  static DeformTerm make(ParamStore<T>& store, const std::string& name, int cin, int hidden, bool with_bias);
  Var<T> operator()(const Var<T>& x) const;
};

/// Parameters of one direction's cell plus its hidden-state attention.
template <typename T>
struct CellParams {
  DeformTerm<T> event;   // W_E*
  DeformTerm<T> hidden;  // W_H*
  DeformTerm<T> image;   // W_B*, carries the gate biases b_*
  Dense<T> attention1;   // C_h → attention_hidden
  Dense<T> attention2;   // attention_hidden → 1
  int hidden_channels = 0;

  static CellParams make(ParamStore<T>& store, const std::string& name, const DeffeConfig& cfg);
};

template <typename T>
struct DeffeParams {
  DeffeConfig config;
  CellParams<T> forward;
  CellParams<T> backward;

  static DeffeParams make(ParamStore<T>& store, const std::string& name, const DeffeConfig& cfg);
};

template <typename T>
struct LSTMState {
  Var<T> hidden;  // C_h×H×W
  Var<T> cell;    // C_h×H×W (carried in standard mode)
  Var<T> fe_acc;  // C_h×H×W

  static LSTMState zeros(int channels, int height, int width);
};

template <typename T>
struct CellOutput {
  LSTMState<T> state;
  Var<T> gates;   // activated gate stack i, f, o, c (4·C_h×H×W)
  Var<T> weight;  // w_t, shape (1)
};

/// W_B*⊗B + b_*; constant across time steps, so callers may precompute it.
template <typename T>
Var<T> image_term(const Var<T>& image, const CellParams<T>& p);

template <typename T>
CellOutput<T> cell_step(const Var<T>& event_frame, const LSTMState<T>& state, const Var<T>& image_term_value,
                        const CellParams<T>& p, LSTMVariant variant);

/// Convenience overload computing the image term from B.
template <typename T>
CellOutput<T> cell_step_with_image(const Var<T>& event_frame, const LSTMState<T>& state, const Var<T>& image,
                                   const CellParams<T>& p, LSTMVariant variant);

/// σ(dense₂(relu(dense₁(GAP(H))))), shape (1).
template <typename T>
Var<T> hidden_attention(const Var<T>& hidden, const CellParams<T>& p);

/// Σ_t w_t·H_t over `frames` in the given order.
template <typename T>
Var<T> run_direction(const std::vector<Var<T>>& frames, const Var<T>& image, const CellParams<T>& p,
                     LSTMVariant variant);

/// 1-based frame indices consumed by the forward and backward cells.
std::pair<std::vector<int>, std::vector<int>> deffe_split(int n);

/// Bidirectional pass over n ≥ 2 frames (each 1×H×W); output 2·C_h×H×W.
template <typename T>
Var<T> deffe_forward(const std::vector<Var<T>>& frames, const Var<T>& image, const DeffeParams<T>& p);

}  // namespace evdeblur
