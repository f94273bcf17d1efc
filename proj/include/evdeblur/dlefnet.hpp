#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "evdeblur/deffe.hpp"
#include "evdeblur/events.hpp"
#include "evdeblur/metrics.hpp"
#include "evdeblur/params.hpp"

namespace evdeblur {

struct NetworkConfig {
  int levels = 3;
  std::vector<int> encoder_channels{32, 64, 128};
  std::vector<int> decoder_channels{128, 64, 32};
  int kernel = 3;
  int res_blocks = 8;
  int event_channels = 32;  // both directions together
  int attention_hidden = 2;
  int eica_reduction = 4;
  int image_channels = 3;
  LSTMVariant lstm_variant = LSTMVariant::literal;
  LossConfig loss;

  static NetworkConfig full();
  static NetworkConfig desk();  // 8/16/32 channels, 2 blocks, 4+4 event maps
  static NetworkConfig tiny();  // 4/8/16 channels, 1 block, 2+2 event maps

  void validate() const;
  /// Spatial dims must be multiples of this.
  int divisor() const { return 1 << (levels - 1); }
  DeffeConfig deffe() const;
};

template <typename T>
struct ResFftBlock {
  Conv<T> spatial1, spatial2;  // c → c, k×k
  Conv<T> freq1, freq2;        // 2c → 2c, 1×1 over packed real/imag channels

  static ResFftBlock make(ParamStore<T>& store, const std::string& name, int channels, int kernel);
  Var<T> operator()(const Var<T>& x) const;
};

template <typename T>
struct Eica {
  Dense<T> channel1, channel2;  // c → max(1, c/r) → c
  Conv<T> spatial;              // 2 → 1, 7×7

  static Eica make(ParamStore<T>& store, const std::string& name, int channels, int reduction);
  Var<T> operator()(const Var<T>& image_features, const Var<T>& event_features) const;
};

template <typename T>
struct Aff {
  Conv<T> mix;  // Σc → c_target, 1×1

  static Aff make(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels);
  Var<T> operator()(const std::vector<Var<T>>& features, int height, int width) const;
};

template <typename T>
struct EventEncoder {
  std::vector<Conv<T>> convs;

  static EventEncoder make(ParamStore<T>& store, const std::string& name, const NetworkConfig& cfg);
  std::vector<Var<T>> operator()(const Var<T>& fe) const;
};

template <typename T>
struct Encoder {
  std::vector<Conv<T>> lifts;
  std::vector<std::vector<ResFftBlock<T>>> blocks;
  std::vector<Eica<T>> fusions;

  static Encoder make(ParamStore<T>& store, const std::string& name, const NetworkConfig& cfg);
  std::vector<Var<T>> operator()(const Var<T>& image, const std::vector<Var<T>>& events) const;
};

template <typename T>
struct Decoder {
  std::vector<Aff<T>> affs;
  std::vector<Conv<T>> ups;     // level k < L−1: c_{k+1} → c_k
  std::vector<Conv<T>> merges;  // level k < L−1: 2c_k → c_k, 1×1
  std::vector<std::vector<ResFftBlock<T>>> blocks;
  std::vector<Conv<T>> heads;   // c_k → 3

  static Decoder make(ParamStore<T>& store, const std::string& name, const NetworkConfig& cfg);
  /// Reconstructions coarsest first.
  std::vector<Var<T>> operator()(const std::vector<Var<T>>& encoded, const Var<T>& image) const;
};

template <typename T>
class DlefNet {
 public:
  explicit DlefNet(const NetworkConfig& cfg);

  const NetworkConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const DeffeParams<T>& deffe() const { return deffe_; }
  const EventEncoder<T>& event_encoder() const { return event_encoder_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }

  /// image: 3×H×W; frames: n ≥ 2 maps of 1×H×W. Returns the pyramid coarsest first.
  std::vector<Var<T>> forward(const Var<T>& image, const std::vector<Var<T>>& frames) const;
  std::vector<Var<T>> forward(const Tensor<T>& image, const EventFrameStack& stack) const;

 private:
  NetworkConfig config_;
  ParamStore<T> store_;
  DeffeParams<T> deffe_;
  EventEncoder<T> event_encoder_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

template <typename T>
std::vector<Var<T>> frame_vars(const EventFrameStack& stack);

struct ParamReport {
  std::size_t total = 0;
  std::map<std::string, std::size_t> breakdown;  // keyed by submodule path
};

ParamReport param_count(const NetworkConfig& cfg);

}  // namespace evdeblur
