#include "evdeblur/dlefnet.hpp"

#include <algorithm>

namespace evdeblur {

namespace {
std::string level_name(const std::string& prefix, int k) { return prefix + ".level" + std::to_string(k + 1); }
}  // namespace

NetworkConfig NetworkConfig::full() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::desk() {
  NetworkConfig c;
  c.encoder_channels = {8, 16, 32};
  c.decoder_channels = {32, 16, 8};
  c.res_blocks = 2;
  c.event_channels = 8;
  return c;
}

NetworkConfig NetworkConfig::tiny() {
  NetworkConfig c;
  c.encoder_channels = {4, 8, 16};
  c.decoder_channels = {16, 8, 4};
  c.res_blocks = 1;
  c.event_channels = 4;
  return c;
}

void NetworkConfig::validate() const {
  require(levels >= 1 && levels <= 8, "NetworkConfig: levels must lie in [1, 8]");
  require(static_cast<int>(encoder_channels.size()) == levels,
          "NetworkConfig: encoder_channels needs one entry per level");
  require(static_cast<int>(decoder_channels.size()) == levels,
          "NetworkConfig: decoder_channels needs one entry per level");
  for (int k = 0; k < levels; ++k) {
    require(encoder_channels[static_cast<std::size_t>(k)] >= 1, "NetworkConfig: channel widths must be >= 1");
    require(decoder_channels[static_cast<std::size_t>(k)] ==
                encoder_channels[static_cast<std::size_t>(levels - 1 - k)],
            "NetworkConfig: decoder_channels must mirror encoder_channels");
  }
  require(kernel >= 1 && kernel % 2 == 1, "NetworkConfig: kernel must be odd");
  require(res_blocks >= 0, "NetworkConfig: res_blocks must be >= 0");
  require(event_channels >= 2 && event_channels % 2 == 0, "NetworkConfig: event_channels must be even and >= 2");
  require(attention_hidden >= 1, "NetworkConfig: attention_hidden must be >= 1");
  require(eica_reduction >= 1, "NetworkConfig: eica_reduction must be >= 1");
  require(image_channels >= 1, "NetworkConfig: image_channels must be >= 1");
  loss.validate();
}

DeffeConfig NetworkConfig::deffe() const {
  DeffeConfig d;
  d.hidden_channels = event_channels / 2;
  d.image_channels = image_channels;
  d.attention_hidden = attention_hidden;
  d.variant = lstm_variant;
  return d;
}

// ---------------------------------------------------------------------------

template <typename T>
ResFftBlock<T> ResFftBlock<T>::make(ParamStore<T>& store, const std::string& name, int channels, int kernel) {
  ResFftBlock b;
  b.spatial1 = Conv<T>::make(store, name + ".spatial1", channels, channels, kernel);
  b.spatial2 = Conv<T>::make(store, name + ".spatial2", channels, channels, kernel);
  b.freq1 = Conv<T>::make(store, name + ".freq1", 2 * channels, 2 * channels, 1);
  b.freq2 = Conv<T>::make(store, name + ".freq2", 2 * channels, 2 * channels, 1);
  return b;
}

template <typename T>
Var<T> ResFftBlock<T>::operator()(const Var<T>& x) const {
  require(x.value().ndim() == 3 && x.value().channels() == spatial1.weight.shape()[1],
          "res_fft_block: input must have " + std::to_string(spatial1.weight.shape()[1]) + " channels, got " +
              shape_str(x.shape()));
  Var<T> s = spatial2(relu(spatial1(x)));
  Var<T> f = irfft2(freq2(relu(freq1(rfft2(x)))), x.value().width());
  return add(add(x, s), f);
}

template <typename T>
Eica<T> Eica<T>::make(ParamStore<T>& store, const std::string& name, int channels, int reduction) {
  Eica e;
  const int mid = std::max(1, channels / reduction);
  e.channel1 = Dense<T>::make(store, name + ".channel1", channels, mid);
  e.channel2 = Dense<T>::make(store, name + ".channel2", mid, channels);
  e.spatial = Conv<T>::make(store, name + ".spatial", 2, 1, 7);
  return e;
}

template <typename T>
Var<T> Eica<T>::operator()(const Var<T>& image_features, const Var<T>& event_features) const {
  require(image_features.shape() == event_features.shape(),
          "eica_fuse: image features " + shape_str(image_features.shape()) + " vs event features " +
              shape_str(event_features.shape()));
  require(image_features.value().channels() == channel1.weight.shape()[1],
          "eica_fuse: channel dim " + std::to_string(image_features.value().channels()) + " != configured " +
              std::to_string(channel1.weight.shape()[1]));
  Var<T> a_c = sigmoid(channel2(relu(channel1(global_avg_pool(event_features)))));
  Var<T> a_s = sigmoid(spatial(channel_max_mean(event_features)));
  return add(spatial_mul(channel_mul(image_features, a_c), a_s), event_features);
}

template <typename T>
Aff<T> Aff<T>::make(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels) {
  Aff a;
  a.mix = Conv<T>::make(store, name + ".mix", in_channels, out_channels, 1);
  return a;
}

template <typename T>
Var<T> Aff<T>::operator()(const std::vector<Var<T>>& features, int height, int width) const {
  require(!features.empty(), "aff_fuse: no input features");
  std::vector<Var<T>> resized;
  resized.reserve(features.size());
  int channels = 0;
  for (const auto& f : features) {
    require(f.value().ndim() == 3, "aff_fuse: features must be C×H×W");
    resized.push_back(resize_bilinear(f, height, width));
    channels += f.value().channels();
  }
  require(channels == mix.weight.shape()[1], "aff_fuse: concatenated channel dim " + std::to_string(channels) +
                                                 " != configured " + std::to_string(mix.weight.shape()[1]));
  return mix(concat_channels(resized));
}

template <typename T>
EventEncoder<T> EventEncoder<T>::make(ParamStore<T>& store, const std::string& name, const NetworkConfig& cfg) {
  EventEncoder e;
  for (int k = 0; k < cfg.levels; ++k) {
    const int cout = cfg.encoder_channels[static_cast<std::size_t>(k)];
    const int cin = k == 0 ? cfg.event_channels : cfg.encoder_channels[static_cast<std::size_t>(k - 1)];
    e.convs.push_back(Conv<T>::make(store, level_name(name, k), cin, cout, cfg.kernel, k == 0 ? 1 : 2));
  }
  return e;
}

template <typename T>
std::vector<Var<T>> EventEncoder<T>::operator()(const Var<T>& fe) const {
  const int div = 1 << (static_cast<int>(convs.size()) - 1);
  require(fe.value().ndim() == 3 && fe.value().height() % div == 0 && fe.value().width() % div == 0,
          "event_encoder: spatial dims " + shape_str(fe.shape()) + " must be divisible by " + std::to_string(div));
  std::vector<Var<T>> out;
  Var<T> x = fe;
  for (const auto& c : convs) {
    x = relu(c(x));
    out.push_back(x);
  }
  return out;
}

template <typename T>
Encoder<T> Encoder<T>::make(ParamStore<T>& store, const std::string& name, const NetworkConfig& cfg) {
  Encoder e;
  for (int k = 0; k < cfg.levels; ++k) {
    const std::string lv = level_name(name, k);
    const int c = cfg.encoder_channels[static_cast<std::size_t>(k)];
    const int cin = k == 0 ? cfg.image_channels : cfg.encoder_channels[static_cast<std::size_t>(k - 1)];
    e.lifts.push_back(Conv<T>::make(store, lv + ".lift", cin, c, cfg.kernel, k == 0 ? 1 : 2));
    std::vector<ResFftBlock<T>> blocks;
    for (int b = 0; b < cfg.res_blocks; ++b) {
      blocks.push_back(ResFftBlock<T>::make(store, lv + ".block" + std::to_string(b + 1), c, cfg.kernel));
    }
    e.blocks.push_back(std::move(blocks));
    e.fusions.push_back(Eica<T>::make(store, lv + ".eica", c, cfg.eica_reduction));
  }
  return e;
}

template <typename T>
std::vector<Var<T>> Encoder<T>::operator()(const Var<T>& image, const std::vector<Var<T>>& events) const {
  require(events.size() == lifts.size(), "encoder_forward: expected " + std::to_string(lifts.size()) +
                                             " event feature levels, got " + std::to_string(events.size()));
  const int div = 1 << (static_cast<int>(lifts.size()) - 1);
  require(image.value().ndim() == 3 && image.value().height() % div == 0 && image.value().width() % div == 0,
          "encoder_forward: image dims " + shape_str(image.shape()) + " must be divisible by " + std::to_string(div));
  std::vector<Var<T>> out;
  Var<T> x = image;
  for (std::size_t k = 0; k < lifts.size(); ++k) {
    x = relu(lifts[k](x));
    for (const auto& b : blocks[k]) x = b(x);
    x = fusions[k](x, events[k]);
    out.push_back(x);
  }
  return out;
}

template <typename T>
Decoder<T> Decoder<T>::make(ParamStore<T>& store, const std::string& name, const NetworkConfig& cfg) {
  Decoder d;
  int total = 0;
  for (int c : cfg.encoder_channels) total += c;
  for (int k = 0; k < cfg.levels; ++k) {
    const std::string lv = level_name(name, k);
    const int c = cfg.encoder_channels[static_cast<std::size_t>(k)];
    d.affs.push_back(Aff<T>::make(store, lv + ".aff", total, c));
    if (k < cfg.levels - 1) {
      d.ups.push_back(Conv<T>::make(store, lv + ".up", cfg.encoder_channels[static_cast<std::size_t>(k + 1)], c,
                                    cfg.kernel));
      d.merges.push_back(Conv<T>::make(store, lv + ".merge", 2 * c, c, 1));
    }
    std::vector<ResFftBlock<T>> blocks;
    for (int b = 0; b < cfg.res_blocks; ++b) {
      blocks.push_back(ResFftBlock<T>::make(store, lv + ".block" + std::to_string(b + 1), c, cfg.kernel));
    }
    d.blocks.push_back(std::move(blocks));
    d.heads.push_back(Conv<T>::make(store, lv + ".head", c, cfg.image_channels, cfg.kernel));
  }
  return d;
}

template <typename T>
std::vector<Var<T>> Decoder<T>::operator()(const std::vector<Var<T>>& encoded, const Var<T>& image) const {
  const int L = static_cast<int>(affs.size());
  require(static_cast<int>(encoded.size()) == L, "decoder_forward: expected " + std::to_string(L) +
                                                     " encoder levels, got " + std::to_string(encoded.size()));
  const int H = image.value().height();
  const int W = image.value().width();
  for (int k = 0; k < L; ++k) {
    const auto& e = encoded[static_cast<std::size_t>(k)].value();
    require(e.ndim() == 3 && e.height() * (1 << k) == H && e.width() * (1 << k) == W,
            "decoder_forward: level " + std::to_string(k + 1) + " dims " + shape_str(e.shape()) +
                " inconsistent with the pyramid of " + shape_str(image.shape()));
  }
  std::vector<Var<T>> outputs;
  Var<T> z;
  for (int k = L - 1; k >= 0; --k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    const int hk = H >> k;
    const int wk = W >> k;
    Var<T> a = affs[ks](encoded, hk, wk);
    if (k == L - 1) {
      z = a;
    } else {
      Var<T> u = relu(ups[ks](resize_bilinear(z, hk, wk)));
      z = relu(merges[ks](concat_channels<T>({a, u})));
    }
    for (const auto& b : blocks[ks]) z = b(z);
    outputs.push_back(add(heads[ks](z), area_downsample(image, 1 << k)));
  }
  return outputs;
}

// ---------------------------------------------------------------------------

template <typename T>
DlefNet<T>::DlefNet(const NetworkConfig& cfg) : config_(cfg) {
  config_.validate();
  deffe_ = DeffeParams<T>::make(store_, "deffe", config_.deffe());
  event_encoder_ = EventEncoder<T>::make(store_, "event_encoder", config_);
  encoder_ = Encoder<T>::make(store_, "encoder", config_);
  decoder_ = Decoder<T>::make(store_, "decoder", config_);
}

template <typename T>
std::vector<Var<T>> DlefNet<T>::forward(const Var<T>& image, const std::vector<Var<T>>& frames) const {
  const Tensor<T>& b = image.value();
  require(b.ndim() == 3 && b.channels() == config_.image_channels,
          "dlefnet_forward: image must be " + std::to_string(config_.image_channels) + "×H×W, got " +
              shape_str(b.shape()));
  require(b.height() % config_.divisor() == 0 && b.width() % config_.divisor() == 0,
          "dlefnet_forward: image dims " + shape_str(b.shape()) + " must be divisible by " +
              std::to_string(config_.divisor()) + " (pad upstream)");
  require(frames.size() >= 2, "dlefnet_forward: need at least 2 event frames, got " + std::to_string(frames.size()));
  for (const auto& f : frames) {
    require(f.shape() == Shape({1, b.height(), b.width()}),
            "dlefnet_forward: event frame shape " + shape_str(f.shape()) + " does not match image " +
                shape_str(b.shape()));
  }
  require_finite(b, "dlefnet_forward image");
  Var<T> fe = deffe_forward(frames, image, deffe_);
  std::vector<Var<T>> events = event_encoder_(fe);
  std::vector<Var<T>> encoded = encoder_(image, events);
  return decoder_(encoded, image);
}

template <typename T>
std::vector<Var<T>> frame_vars(const EventFrameStack& stack) {
  std::vector<Var<T>> out;
  for (int i = 0; i < stack.count(); ++i) out.push_back(Var<T>::constant(stack.frame(i).template cast<T>()));
  return out;
}

template <typename T>
std::vector<Var<T>> DlefNet<T>::forward(const Tensor<T>& image, const EventFrameStack& stack) const {
  return forward(Var<T>::constant(image), frame_vars<T>(stack));
}

ParamReport param_count(const NetworkConfig& cfg) {
  const DlefNet<float> net(cfg);
  ParamReport r;
  r.total = net.params().scalar_count();
  r.breakdown = net.params().breakdown(2);
  return r;
}

#define EVDEBLUR_INSTANTIATE(T)                                   \
  template struct ResFftBlock<T>;                                 \
  template struct Eica<T>;                                        \
  template struct Aff<T>;                                         \
  template struct EventEncoder<T>;                                \
  template struct Encoder<T>;                                     \
  template struct Decoder<T>;                                     \
  template class DlefNet<T>;                                      \
  template std::vector<Var<T>> frame_vars<T>(const EventFrameStack&);

EVDEBLUR_INSTANTIATE(float)
EVDEBLUR_INSTANTIATE(double)
#undef EVDEBLUR_INSTANTIATE

}  // namespace evdeblur
