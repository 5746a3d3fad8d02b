#include "autospeed/models.hpp"

#include "autospeed/rng.hpp"

namespace autospeed::models {

using nn::Graph;
using nn::ParamStore;

namespace {

nn::ConvGeometry stage_geom(const StageSpec& st) {
  nn::ConvGeometry g;
  g.kh = g.kw = st.kernel;
  g.stride_h = st.stride_h;
  g.stride_w = st.stride_w;
  g.padding = nn::Padding::same;
  return g;
}

std::size_t stage_in_channels(const AutoencoderSpec& s, std::size_t k) {
  return k == 0 ? s.input.at(0) : s.stages[k - 1].channels;
}

template <class T>
Var<T> param(Graph<T>& g, const ParamStore<T>& p, const std::string& name) {
  const auto it = p.find(name);
  if (it == p.end()) throw ConfigError("missing parameter '" + name + "'");
  return g.param(name, it->second);
}

Shape batch_shape(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

void require_batch(const Tensor& t, const Shape& item, const char* what) {
  if (t.ndim() != item.size() + 1 || !std::equal(item.begin(), item.end(), t.shape().begin() + 1)) {
    throw DimensionError(std::string(what) + ": expected [N" + shape_str(item).replace(0, 1, "x") + " batch, got " +
                         shape_str(t.shape()));
  }
}

}  // namespace

std::vector<nn::HW> AutoencoderSpec::extents() const {
  if (input.size() != 3) throw ConfigError(name + ": input shape must be {C, H, W}, got " + shape_str(input));
  std::vector<nn::HW> out{{input[1], input[2]}};
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const auto& st = stages[k];
    const auto [h, w] = out.back();
    if (st.stride_h == 0 || st.stride_w == 0 || st.kernel == 0 || st.channels == 0) {
      throw ConfigError(name + " stage " + std::to_string(k) + ": stride, kernel and channels must be positive");
    }
    if (h % st.stride_h != 0 || w % st.stride_w != 0) {
      throw ConfigError(name + " stage " + std::to_string(k) + ": input " + std::to_string(h) + "x" +
                        std::to_string(w) + " is not divisible by stride " + std::to_string(st.stride_h) + "x" +
                        std::to_string(st.stride_w));
    }
    out.emplace_back(h / st.stride_h, w / st.stride_w);
  }
  return out;
}

Shape AutoencoderSpec::derived_latent() const {
  if (stages.empty()) throw ConfigError(name + ": autoencoder needs at least one stage");
  const auto ext = extents();
  return {stages.back().channels, ext.back().first, ext.back().second};
}

void AutoencoderSpec::validate() const {
  if (name.empty()) throw ConfigError("autoencoder spec needs a name");
  if (!(scale != 0.0)) throw ConfigError(name + ": boundary scale must be non-zero");
  const auto d = derived_latent();
  if (!latent.empty() && latent != d) {
    throw ConfigError(name + ": declared latent " + shape_str(latent) + " but the stages produce " + shape_str(d));
  }
}

AutoencoderSpec AutoencoderSpec::desk_rf() {
  AutoencoderSpec s;
  s.name = "rf";
  s.input = {1, 48, 512};
  for (std::size_t c : {8, 16, 16, 16}) s.stages.push_back({c, 2, 2, 3});
  s.latent = {16, 3, 32};
  // Sets the weight of the RF term against the SoS terms in the unweighted sum.
  s.scale = 1.0 / 8192.0;
  return s;
}

AutoencoderSpec AutoencoderSpec::desk_sos() {
  AutoencoderSpec s;
  s.name = "sos";
  s.input = {1, 96, 96};
  for (std::size_t c : {8, 16, 32, 32, 16}) s.stages.push_back({c, 2, 2, 3});
  s.latent = {16, 3, 3};
  s.scale = 1.0 / 400.0;
  s.shift = 1300.0;
  return s;
}

std::string enc_name(const AutoencoderSpec& s, std::size_t k, const char* what) {
  return s.name + ".enc" + std::to_string(k) + "." + what;
}

std::string dec_name(const AutoencoderSpec& s, std::size_t k, const char* what) {
  return s.name + ".dec" + std::to_string(k) + "." + what;
}

void init_encoder(ParamStore<float>& params, const AutoencoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  for (std::size_t k = 0; k < spec.stages.size(); ++k) {
    auto l = nn::init_layer<float>(nn::LayerKind::conv, stage_in_channels(spec, k), spec.stages[k].channels,
                                   stage_geom(spec.stages[k]), derive_seed(seed, 1, k));
    params[enc_name(spec, k, "w")] = std::move(l.weights);
    params[enc_name(spec, k, "b")] = std::move(l.bias);
  }
}

void init_decoder(ParamStore<float>& params, const AutoencoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  for (std::size_t k = 0; k < spec.stages.size(); ++k) {
    // Mirror of encoder stage k: stage k's output channels back to its input channels.
    auto l = nn::init_layer<float>(nn::LayerKind::tconv, spec.stages[k].channels, stage_in_channels(spec, k),
                                   stage_geom(spec.stages[k]), derive_seed(seed, 2, k));
    params[dec_name(spec, k, "w")] = std::move(l.weights);
    params[dec_name(spec, k, "b")] = std::move(l.bias);
  }
}

void init_autoencoder(ParamStore<float>& params, const AutoencoderSpec& spec, std::uint64_t seed) {
  init_encoder(params, spec, seed);
  init_decoder(params, spec, seed);
}

void init_dense(ParamStore<float>& params, const std::string& name, std::size_t in, std::size_t out,
                std::uint64_t seed) {
  auto l = nn::init_layer<float>(nn::LayerKind::dense, in, out, {}, seed);
  params[name + ".w"] = std::move(l.weights);
  params[name + ".b"] = std::move(l.bias);
}

template <class T>
Var<T> to_scaled(Graph<T>& g, const AutoencoderSpec& s, Var<T> raw) {
  // Shift first so values at the offset map to exactly zero.
  if (s.shift != 0.0) raw = g.affine(raw, 1.0, -s.shift);
  return g.affine(raw, s.scale, 0.0);
}

template <class T>
Var<T> from_scaled(Graph<T>& g, const AutoencoderSpec& s, Var<T> scaled) {
  return g.affine(scaled, 1.0 / s.scale, s.shift);
}

template <class T>
Var<T> encode(Graph<T>& g, const AutoencoderSpec& s, const ParamStore<T>& p, Var<T> x) {
  const auto alpha = nn::Activation::leaky(s.leaky_alpha);
  for (std::size_t k = 0; k < s.stages.size(); ++k) {
    x = g.conv2d(x, param(g, p, enc_name(s, k, "w")), param(g, p, enc_name(s, k, "b")), stage_geom(s.stages[k]));
    if (k + 1 < s.stages.size()) x = g.act(x, alpha);
  }
  return x;
}

template <class T>
Var<T> decode(Graph<T>& g, const AutoencoderSpec& s, const ParamStore<T>& p, Var<T> z) {
  const auto alpha = nn::Activation::leaky(s.leaky_alpha);
  const auto ext = s.extents();
  for (std::size_t k = s.stages.size(); k-- > 0;) {
    z = g.tconv2d(z, param(g, p, dec_name(s, k, "w")), param(g, p, dec_name(s, k, "b")), stage_geom(s.stages[k]),
                  ext[k]);
    if (k > 0) z = g.act(z, alpha);
  }
  return z;
}

template <class T>
Var<T> latent_map(Graph<T>& g, const ParamStore<T>& p, const std::string& name, Var<T> m, const Shape& out_latent,
                  nn::Activation act) {
  const auto& v = g.value(m);
  const std::size_t n = v.dim(0);
  auto flat = g.reshape(m, {n, v.numel() / n});
  auto out = g.dense(flat, param(g, p, name + ".w"), param(g, p, name + ".b"));
  if (act.kind != nn::ActKind::linear) out = g.act(out, act);
  return g.reshape(out, batch_shape(n, out_latent));
}

LinkedModel LinkedModel::build(const AutoencoderSpec& rf, const AutoencoderSpec& sos, std::uint64_t seed) {
  LinkedModel m;
  m.rf = rf;
  m.sos = sos;
  init_autoencoder(m.params, rf, derive_seed(seed, 10, 0));
  init_autoencoder(m.params, sos, derive_seed(seed, 11, 0));
  init_dense(m.params, "link", rf.latent_size(), sos.latent_size(), derive_seed(seed, 12, 0));
  m.validate();
  return m;
}

void LinkedModel::validate() const {
  rf.validate();
  sos.validate();
  if (rf.name == sos.name) throw ConfigError("rf and sos autoencoders need distinct names");
  const auto it = params.find("link.w");
  if (it == params.end()) throw ConfigError("linked model has no link.w");
  const Shape want{rf.latent_size(), sos.latent_size()};
  if (it->second.shape() != want) {
    throw ConfigError("link maps " + shape_str(it->second.shape()) + " but rf latent " +
                      shape_str(rf.derived_latent()) + " -> sos latent " + shape_str(sos.derived_latent()) +
                      " needs " + shape_str(want));
  }
}

template <class T>
LaeGraph<T> lae_graph(Graph<T>& g, const LinkedModel& model, const ParamStore<T>& p, const BasicTensor<T>& x,
                      const BasicTensor<T>& y) {
  if (x.dim(0) != y.dim(0)) {
    throw DimensionError("lae batch sizes differ: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  const auto xs = to_scaled(g, model.rf, g.input(x));
  const auto ys = to_scaled(g, model.sos, g.input(y));
  const auto m = encode(g, model.rf, p, xs);
  const auto n = encode(g, model.sos, p, ys);
  const auto mp = latent_map(g, p, "link", m, model.sos.derived_latent(), model.link_act);
  if (g.value(mp).shape() != g.value(n).shape()) {
    throw ConfigError("link output " + shape_str(g.value(mp).shape()) + " does not match sos latent " +
                      shape_str(g.value(n).shape()));
  }
  LaeGraph<T> out;
  out.x = xs;
  out.y = ys;
  out.x_rec = decode(g, model.rf, p, m);
  out.y_rec = decode(g, model.sos, p, n);
  out.m_link = mp;
  out.n = n;
  out.rf = g.mse(out.x_rec, xs);
  out.sos = g.mse(out.y_rec, ys);
  out.latent = g.mse(mp, n);
  out.total = g.add(g.add(out.rf, out.sos), out.latent);
  return out;
}

LaeTerms lae_loss(const LinkedModel& model, const Tensor& x, const Tensor& y) {
  Graph<float> g;
  const auto l = lae_graph(g, model, model.params, x, y);
  LaeTerms t;
  t.rf = g.value(l.rf).item();
  t.sos = g.value(l.sos).item();
  t.latent = g.value(l.latent).item();
  return t;
}

IrmLayer IrmLayer::build(const Shape& in_latent, const Shape& out_latent, std::uint64_t seed, nn::Activation act) {
  IrmLayer l;
  l.act = act;
  l.in_latent = in_latent;
  l.out_latent = out_latent;
  init_dense(l.params, "irm", shape_numel(in_latent), shape_numel(out_latent), seed);
  return l;
}

IrmLayer IrmLayer::from_link(const LinkedModel& model) {
  IrmLayer l;
  l.in_latent = model.rf.derived_latent();
  l.out_latent = model.sos.derived_latent();
  l.act = model.link_act;
  l.params["irm.w"] = model.params.at("link.w");
  l.params["irm.b"] = model.params.at("link.b");
  l.validate();
  return l;
}

void IrmLayer::validate() const {
  const auto w = params.find("irm.w");
  const auto b = params.find("irm.b");
  if (w == params.end() || b == params.end()) throw ConfigError("IRM layer needs irm.w and irm.b");
  const Shape want{shape_numel(in_latent), shape_numel(out_latent)};
  if (w->second.shape() != want || b->second.shape() != Shape{want[1]}) {
    throw ConfigError("IRM weights " + shape_str(w->second.shape()) + " do not map " + shape_str(in_latent) + " to " +
                      shape_str(out_latent));
  }
}

template <class T>
Var<T> irm_graph(Graph<T>& g, const IrmLayer& irm, const ParamStore<T>& p, const BasicTensor<T>& m,
                 const BasicTensor<T>& n) {
  if (m.dim(0) != n.dim(0) || m.numel() / m.dim(0) != shape_numel(irm.in_latent) ||
      n.numel() / n.dim(0) != shape_numel(irm.out_latent)) {
    throw DimensionError("irm batch " + shape_str(m.shape()) + " -> " + shape_str(n.shape()) + " does not fit " +
                         shape_str(irm.in_latent) + " -> " + shape_str(irm.out_latent));
  }
  const auto out = latent_map(g, p, "irm", g.input(m), irm.out_latent, irm.act);
  const auto target = g.reshape(g.input(n), g.value(out).shape());
  return g.mse(target, out);
}

double irm_loss(const IrmLayer& irm, const Tensor& m, const Tensor& n) {
  Graph<float> g;
  return g.value(irm_graph(g, irm, irm.params, m, n)).item();
}

Tensor encode_rf(const LinkedModel& model, const Tensor& x) {
  require_batch(x, model.rf.input, "encode_rf");
  Graph<float> g;
  return g.value(encode(g, model.rf, model.params, to_scaled(g, model.rf, g.input(x))));
}

Tensor encode_sos(const LinkedModel& model, const Tensor& y) {
  require_batch(y, model.sos.input, "encode_sos");
  Graph<float> g;
  return g.value(encode(g, model.sos, model.params, to_scaled(g, model.sos, g.input(y))));
}

Tensor decode_sos(const AutoencoderSpec& sos, const ParamStore<float>& p, const Tensor& n) {
  Graph<float> g;
  const auto z = g.reshape(g.input(n), batch_shape(n.dim(0), sos.derived_latent()));
  return g.value(from_scaled(g, sos, decode(g, sos, p, z)));
}

Tensor apply_irm(const IrmLayer& irm, const Tensor& m) {
  Graph<float> g;
  return g.value(latent_map(g, irm.params, "irm", g.input(m), irm.out_latent, irm.act));
}

AutoSpeedModel::AutoSpeedModel(AutoencoderSpec rf, AutoencoderSpec sos, nn::Activation irm_act,
                               ParamStore<float> params)
    : rf_(std::move(rf)), sos_(std::move(sos)), irm_act_(irm_act), params_(std::move(params)) {
  rf_.validate();
  sos_.validate();
  const auto w = params_.find("irm.w");
  if (w == params_.end()) throw AssemblyError("AutoSpeed model has no irm.w");
  const Shape want{rf_.latent_size(), sos_.latent_size()};
  if (w->second.shape() != want) {
    throw AssemblyError("IRM weights " + shape_str(w->second.shape()) + " cannot connect rf latent " +
                        shape_str(rf_.derived_latent()) + " to sos latent " + shape_str(sos_.derived_latent()));
  }
}

Tensor AutoSpeedModel::infer(const Tensor& x) const {
  require_batch(x, rf_.input, "AutoSpeed input");
  Graph<float> g;
  const auto m = encode(g, rf_, params_, to_scaled(g, rf_, g.input(x)));
  const auto n = latent_map(g, params_, "irm", m, sos_.derived_latent(), irm_act_);
  return g.value(from_scaled(g, sos_, decode(g, sos_, params_, n)));
}

AutoSpeedModel assemble_autospeed(const LinkedModel& lae, const IrmLayer& irm) {
  if (lae.rf.derived_latent() != irm.in_latent || lae.sos.derived_latent() != irm.out_latent) {
    throw AssemblyError("latent shapes disagree: LAE " + shape_str(lae.rf.derived_latent()) + " -> " +
                        shape_str(lae.sos.derived_latent()) + ", IRM " + shape_str(irm.in_latent) + " -> " +
                        shape_str(irm.out_latent));
  }
  irm.validate();
  auto p = select_params(lae.params, {lae.rf.name + ".enc", lae.sos.name + ".dec"});
  for (const auto& [k, v] : irm.params) p.emplace(k, v);
  return AutoSpeedModel(lae.rf, lae.sos, irm.act, std::move(p));
}

EndeNet EndeNet::build(const AutoencoderSpec& rf, const AutoencoderSpec& sos, std::uint64_t seed) {
  EndeNet e;
  e.rf = rf;
  e.sos = sos;
  init_encoder(e.params, rf, derive_seed(seed, 20, 0));
  init_decoder(e.params, sos, derive_seed(seed, 21, 0));
  init_dense(e.params, "link", rf.latent_size(), sos.latent_size(), derive_seed(seed, 22, 0));
  e.validate();
  return e;
}

void EndeNet::validate() const {
  rf.validate();
  sos.validate();
  const auto it = params.find("link.w");
  if (it == params.end() || it->second.shape() != Shape{rf.latent_size(), sos.latent_size()}) {
    throw ConfigError("En-De-Net link does not map the rf latent onto the sos latent");
  }
}

template <class T>
Var<T> endenet_graph(Graph<T>& g, const EndeNet& net, const ParamStore<T>& p, const BasicTensor<T>& x,
                     const BasicTensor<T>& y) {
  if (x.dim(0) != y.dim(0)) throw DimensionError("En-De-Net batch sizes differ");
  const auto m = encode(g, net.rf, p, to_scaled(g, net.rf, g.input(x)));
  const auto n = latent_map(g, p, "link", m, net.sos.derived_latent(), net.link_act);
  const auto ys = to_scaled(g, net.sos, g.input(y));
  return g.mse(decode(g, net.sos, p, n), ys);
}

double endenet_loss(const EndeNet& net, const Tensor& x, const Tensor& y) {
  Graph<float> g;
  return g.value(endenet_graph(g, net, net.params, x, y)).item();
}

Tensor endenet_infer(const EndeNet& net, const Tensor& x) {
  require_batch(x, net.rf.input, "En-De-Net input");
  Graph<float> g;
  const auto m = encode(g, net.rf, net.params, to_scaled(g, net.rf, g.input(x)));
  const auto n = latent_map(g, net.params, "link", m, net.sos.derived_latent(), net.link_act);
  return g.value(from_scaled(g, net.sos, decode(g, net.sos, net.params, n)));
}

ParamStore<float> select_params(const ParamStore<float>& p, const std::vector<std::string>& prefixes) {
  ParamStore<float> out;
  for (const auto& [k, v] : p) {
    for (const auto& pre : prefixes) {
      if (k.compare(0, pre.size(), pre) == 0) {
        out.emplace(k, v);
        break;
      }
    }
  }
  return out;
}

#define AUTOSPEED_INSTANTIATE(T)                                                                          \
  template Var<T> to_scaled(Graph<T>&, const AutoencoderSpec&, Var<T>);                                  \
  template Var<T> from_scaled(Graph<T>&, const AutoencoderSpec&, Var<T>);                                \
  template Var<T> encode(Graph<T>&, const AutoencoderSpec&, const ParamStore<T>&, Var<T>);               \
  template Var<T> decode(Graph<T>&, const AutoencoderSpec&, const ParamStore<T>&, Var<T>);               \
  template Var<T> latent_map(Graph<T>&, const ParamStore<T>&, const std::string&, Var<T>, const Shape&,     \
                             nn::Activation);                                                            \
  template LaeGraph<T> lae_graph(Graph<T>&, const LinkedModel&, const ParamStore<T>&, const BasicTensor<T>&, \
                                 const BasicTensor<T>&);                                                 \
  template Var<T> irm_graph(Graph<T>&, const IrmLayer&, const ParamStore<T>&, const BasicTensor<T>&,    \
                            const BasicTensor<T>&);                                                      \
  template Var<T> endenet_graph(Graph<T>&, const EndeNet&, const ParamStore<T>&, const BasicTensor<T>&, \
                                const BasicTensor<T>&);

AUTOSPEED_INSTANTIATE(float)
AUTOSPEED_INSTANTIATE(double)

#undef AUTOSPEED_INSTANTIATE

}  // namespace autospeed::models
