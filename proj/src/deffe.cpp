#include "evdeblur/deffe.hpp"

namespace evdeblur {

LSTMVariant parse_lstm_variant(const std::string& name) {
  if (name == "literal") return LSTMVariant::literal;
  if (name == "standard") return LSTMVariant::standard;
  throw ContractViolation("unknown LSTM variant '" + name + "' (expected literal|standard)");
}

std::string lstm_variant_name(LSTMVariant v) { return v == LSTMVariant::literal ? "literal" : "standard"; }

void DeffeConfig::validate() const {
  require(hidden_channels >= 1, "DeffeConfig: hidden_channels must be >= 1");
  require(image_channels >= 1, "DeffeConfig: image_channels must be >= 1");
  require(attention_hidden >= 1, "DeffeConfig: attention_hidden must be >= 1");
}

template <typename T>
DeformTerm<T> DeformTerm<T>::make(ParamStore<T>& store, const std::string& name, int cin, int hidden, bool with_bias) {
  DeformTerm t;
  t.offset = Conv<T>::make(store, name + ".offset", cin, 18, 3, 1, true, ParamRole::offset);
  t.weight = store.create(name + ".weight", {4 * hidden, cin, 3, 3}, cin * 9, ParamRole::weight);
  if (with_bias) t.bias = store.create(name + ".bias", {4 * hidden}, cin * 9, ParamRole::bias);
  return t;
}

template <typename T>
Var<T> DeformTerm<T>::operator()(const Var<T>& x) const {
  return deformable_conv2d(x, offset(x), weight, bias, 1, 1);
}

template <typename T>
CellParams<T> CellParams<T>::make(ParamStore<T>& store, const std::string& name, const DeffeConfig& cfg) {
  cfg.validate();
  CellParams p;
  p.hidden_channels = cfg.hidden_channels;
  p.event = DeformTerm<T>::make(store, name + ".event", 1, cfg.hidden_channels, false);
  p.hidden = DeformTerm<T>::make(store, name + ".hidden", cfg.hidden_channels, cfg.hidden_channels, false);
  p.image = DeformTerm<T>::make(store, name + ".image", cfg.image_channels, cfg.hidden_channels, true);
  p.attention1 = Dense<T>::make(store, name + ".attention1", cfg.hidden_channels, cfg.attention_hidden);
  p.attention2 = Dense<T>::make(store, name + ".attention2", cfg.attention_hidden, 1);
  return p;
}

template <typename T>
DeffeParams<T> DeffeParams<T>::make(ParamStore<T>& store, const std::string& name, const DeffeConfig& cfg) {
  DeffeParams p;
  p.config = cfg;
  p.forward = CellParams<T>::make(store, name + ".fwd", cfg);
  p.backward = CellParams<T>::make(store, name + ".bwd", cfg);
  return p;
}

template <typename T>
LSTMState<T> LSTMState<T>::zeros(int channels, int height, int width) {
  LSTMState s;
  s.hidden = Var<T>::constant(Tensor<T>({channels, height, width}));
  s.cell = s.hidden;
  s.fe_acc = s.hidden;
  return s;
}

template <typename T>
Var<T> image_term(const Var<T>& image, const CellParams<T>& p) {
  return p.image(image);
}

template <typename T>
Var<T> hidden_attention(const Var<T>& hidden, const CellParams<T>& p) {
  require(hidden.value().ndim() == 3 && hidden.value().channels() == p.hidden_channels,
          "hidden_attention: hidden state must have " + std::to_string(p.hidden_channels) + " channels, got " +
              shape_str(hidden.shape()));
  return sigmoid(p.attention2(relu(p.attention1(global_avg_pool(hidden)))));
}

template <typename T>
CellOutput<T> cell_step(const Var<T>& event_frame, const LSTMState<T>& state, const Var<T>& image_term_value,
                        const CellParams<T>& p, LSTMVariant variant) {
  const int ch = p.hidden_channels;
  const Shape& hs = state.hidden.shape();
  require(hs.size() == 3 && hs[0] == ch, "cell_step: hidden state must be " + std::to_string(ch) + "×H×W, got " +
                                             shape_str(hs));
  const Shape& es = event_frame.shape();
  require(es.size() == 3 && es[0] == 1 && es[1] == hs[1] && es[2] == hs[2],
          "cell_step: event frame must be 1×" + std::to_string(hs[1]) + "×" + std::to_string(hs[2]) + ", got " +
              shape_str(es));
  const Shape want{4 * ch, hs[1], hs[2]};
  require(image_term_value.shape() == want,
          "cell_step: image term shape " + shape_str(image_term_value.shape()) + " expected " + shape_str(want));

  Var<T> pre = add(add(p.event(event_frame), p.hidden(state.hidden)), image_term_value);

  CellOutput<T> out;
  LSTMState<T> next;
  if (variant == LSTMVariant::literal) {
    out.gates = sigmoid(pre);
    Var<T> f = slice_channels(out.gates, ch, ch);
    Var<T> o = slice_channels(out.gates, 2 * ch, ch);
    Var<T> c = slice_channels(out.gates, 3 * ch, ch);
    next.cell = mul(f, tanh(c));
    next.hidden = mul(o, tanh(next.cell));
  } else {
    Var<T> ifo = sigmoid(slice_channels(pre, 0, 3 * ch));
    Var<T> c = tanh(slice_channels(pre, 3 * ch, ch));
    out.gates = concat_channels<T>({ifo, c});
    Var<T> i = slice_channels(ifo, 0, ch);
    Var<T> f = slice_channels(ifo, ch, ch);
    Var<T> o = slice_channels(ifo, 2 * ch, ch);
    next.cell = add(mul(f, state.cell), mul(i, c));
    next.hidden = mul(o, tanh(next.cell));
  }
  out.weight = hidden_attention(next.hidden, p);
  next.fe_acc = add(state.fe_acc, scalar_mul(out.weight, next.hidden));
  out.state = std::move(next);
  return out;
}

template <typename T>
CellOutput<T> cell_step_with_image(const Var<T>& event_frame, const LSTMState<T>& state, const Var<T>& image,
                                   const CellParams<T>& p, LSTMVariant variant) {
  return cell_step(event_frame, state, image_term(image, p), p, variant);
}

template <typename T>
Var<T> run_direction(const std::vector<Var<T>>& frames, const Var<T>& image, const CellParams<T>& p,
                     LSTMVariant variant) {
  require(!frames.empty(), "run_direction: empty frame list");
  require(image.value().ndim() == 3, "run_direction: image must be C×H×W");
  const Var<T> bterm = image_term(image, p);
  LSTMState<T> state = LSTMState<T>::zeros(p.hidden_channels, image.value().height(), image.value().width());
  for (const auto& e : frames) state = cell_step(e, state, bterm, p, variant).state;
  return state.fe_acc;
}

std::pair<std::vector<int>, std::vector<int>> deffe_split(int n) {
  require(n >= 2, "deffe_forward: need at least 2 event frames, got " + std::to_string(n));
  const int half = (n + 1) / 2;
  std::pair<std::vector<int>, std::vector<int>> out;
  for (int i = 1; i <= half; ++i) out.first.push_back(i);
  for (int i = n; i > half; --i) out.second.push_back(i);
  return out;
}

template <typename T>
Var<T> deffe_forward(const std::vector<Var<T>>& frames, const Var<T>& image, const DeffeParams<T>& p) {
  const auto [fwd_idx, bwd_idx] = deffe_split(static_cast<int>(frames.size()));
  std::vector<Var<T>> fwd;
  std::vector<Var<T>> bwd;
  for (int i : fwd_idx) fwd.push_back(frames[static_cast<std::size_t>(i - 1)]);
  for (int i : bwd_idx) bwd.push_back(frames[static_cast<std::size_t>(i - 1)]);
  Var<T> a = run_direction(fwd, image, p.forward, p.config.variant);
  Var<T> b = run_direction(bwd, image, p.backward, p.config.variant);
  return concat_channels<T>({a, b});
}

#define EVDEBLUR_INSTANTIATE(T)                                                                              \
  template struct DeformTerm<T>;                                                                             \
  template struct CellParams<T>;                                                                             \
  template struct DeffeParams<T>;                                                                            \
  template struct LSTMState<T>;                                                                              \
  template Var<T> image_term<T>(const Var<T>&, const CellParams<T>&);                                        \
  template CellOutput<T> cell_step<T>(const Var<T>&, const LSTMState<T>&, const Var<T>&, const CellParams<T>&, \
                                      LSTMVariant);                                                          \
  template CellOutput<T> cell_step_with_image<T>(const Var<T>&, const LSTMState<T>&, const Var<T>&,          \
                                                 const CellParams<T>&, LSTMVariant);                         \
  template Var<T> hidden_attention<T>(const Var<T>&, const CellParams<T>&);                                  \
  template Var<T> run_direction<T>(const std::vector<Var<T>>&, const Var<T>&, const CellParams<T>&, LSTMVariant); \
  template Var<T> deffe_forward<T>(const std::vector<Var<T>>&, const Var<T>&, const DeffeParams<T>&);

EVDEBLUR_INSTANTIATE(float)
EVDEBLUR_INSTANTIATE(double)
#undef EVDEBLUR_INSTANTIATE

}  // namespace evdeblur
