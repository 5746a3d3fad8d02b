#include "autospeed/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "autospeed/rng.hpp"

namespace autospeed {

std::uint64_t tensor_hash(const Tensor& t, std::uint64_t h) {
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (auto e : t.shape()) {
    const auto e64 = static_cast<std::uint64_t>(e);
    mix(&e64, sizeof(e64));
  }
  mix(t.data(), t.numel() * sizeof(float));
  return h;
}

}  // namespace autospeed

namespace autospeed::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;


template <class T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, const ConvGeometry& g,
            std::size_t OH, std::size_t OW, std::size_t pt, std::size_t pl, T* col) {
  const std::size_t P = OH * OW;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        T* row = col + ((c * g.kh + u) * g.kw + v) * P;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + u) -
                          static_cast<std::ptrdiff_t>(pt);
          T* dst = row + oh * OW;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + OW, T(0));
            continue;
          }
          const T* src = x + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride_w + v) -
                            static_cast<std::ptrdiff_t>(pl);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W))
                          ? T(0)
                          : src[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

// Scatter-add of im2col's layout back into an image.
template <class T>
void col2im(const T* col, std::size_t C, std::size_t H, std::size_t W, const ConvGeometry& g,
            std::size_t OH, std::size_t OW, std::size_t pt, std::size_t pl, T* x) {
  const std::size_t P = OH * OW;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        const T* row = col + ((c * g.kh + u) * g.kw + v) * P;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + u) -
                          static_cast<std::ptrdiff_t>(pt);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          T* dst = x + (c * H + static_cast<std::size_t>(ih)) * W;
          const T* src = row + oh * OW;
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride_w + v) -
                            static_cast<std::ptrdiff_t>(pl);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
            dst[static_cast<std::size_t>(iw)] += src[ow];
          }
        }
      }
    }
  }
}

void check_geometry(const ConvGeometry& g) {
  if (g.kh == 0 || g.kw == 0) throw ConfigError("kernel extents must be positive");
  if (g.stride_h == 0 || g.stride_w == 0) throw ConfigError("stride must be >= 1");
}

template <class T>
void check_conv_weights(const BasicTensor<T>& w, const BasicTensor<T>& b, const ConvGeometry& g,
                        std::size_t bias_len, const char* what) {
  if (w.ndim() != 4) throw DimensionError(std::string(what) + ": weights must be 4-d, got " + shape_str(w.shape()));
  if (w.dim(2) != g.kh || w.dim(3) != g.kw) {
    throw DimensionError(std::string(what) + ": kernel extents " + shape_str(w.shape()) +
                         " do not match declared k=" + std::to_string(g.kh) + "x" +
                         std::to_string(g.kw));
  }
  if (b.numel() != bias_len) {
    throw DimensionError(std::string(what) + ": bias length " + std::to_string(b.numel()) +
                         " != output channels " + std::to_string(bias_len));
  }
}

// Row sums of a K x P block accumulated in double.
template <class T>
void add_row_sums(const T* m, std::size_t K, std::size_t P, T* out) {
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    const T* row = m + k * P;
    for (std::size_t p = 0; p < P; ++p) s += row[p];
    out[k] += static_cast<T>(s);
  }
}

template <class T>
BasicTensor<T> conv_fwd(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                        const ConvGeometry& g) {
  check_geometry(g);
  if (x.ndim() != 4) throw DimensionError("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  check_conv_weights(w, b, g, w.dim(0), "conv2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (w.dim(1) != C) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " has " + std::to_string(C) +
                         " channels but weights " + shape_str(w.shape()) + " expect " +
                         std::to_string(w.dim(1)));
  }
  const std::size_t K = w.dim(0);
  const std::size_t OH = conv_out_extent(H, g.kh, g.stride_h, g.padding);
  const std::size_t OW = conv_out_extent(W, g.kw, g.stride_w, g.padding);
  const std::size_t pt = conv_pad_before(H, g.kh, g.stride_h, g.padding);
  const std::size_t pl = conv_pad_before(W, g.kw, g.stride_w, g.padding);
  const std::size_t P = OH * OW, CKK = C * g.kh * g.kw;

  BasicTensor<T> out(Shape{N, K, OH, OW});
  std::vector<T> col(CKK * P);
  CMapMat<T> wm(w.data(), K, CKK);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(x.data() + n * C * H * W, C, H, W, g, OH, OW, pt, pl, col.data());
    MapMat<T> om(out.data() + n * K * P, K, P);
    om.noalias() = wm * CMapMat<T>(col.data(), CKK, P);
    for (std::size_t k = 0; k < K; ++k) om.row(k).array() += b[k];
  }
  return out;
}

template <class T>
ConvGrads<T> conv_bwd(const BasicTensor<T>& x, const BasicTensor<T>& w, const ConvGeometry& g,
                      const BasicTensor<T>& gy, bool need_input) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t K = w.dim(0);
  const std::size_t OH = gy.dim(2), OW = gy.dim(3);
  const std::size_t pt = conv_pad_before(H, g.kh, g.stride_h, g.padding);
  const std::size_t pl = conv_pad_before(W, g.kw, g.stride_w, g.padding);
  const std::size_t P = OH * OW, CKK = C * g.kh * g.kw;
  require_same_shape(gy.shape(), Shape{N, K, OH, OW}, "conv2d backward");

  ConvGrads<T> r{need_input ? BasicTensor<T>(x.shape()) : BasicTensor<T>(), BasicTensor<T>(w.shape()),
                 BasicTensor<T>(Shape{K})};
  std::vector<T> col(CKK * P);
  CMapMat<T> wm(w.data(), K, CKK);
  MapMat<T> gwm(r.weights.data(), K, CKK);
  for (std::size_t n = 0; n < N; ++n) {
    CMapMat<T> gym(gy.data() + n * K * P, K, P);
    im2col(x.data() + n * C * H * W, C, H, W, g, OH, OW, pt, pl, col.data());
    gwm.noalias() += gym * CMapMat<T>(col.data(), CKK, P).transpose();
    add_row_sums(gy.data() + n * K * P, K, P, r.bias.data());
    if (need_input) {
      MapMat<T>(col.data(), CKK, P).noalias() = wm.transpose() * gym;
      col2im(col.data(), C, H, W, g, OH, OW, pt, pl, r.input.data() + n * C * H * W);
    }
  }
  return r;
}

template <class T>
BasicTensor<T> tconv_fwd(const BasicTensor<T>& u, const BasicTensor<T>& w, const BasicTensor<T>& b,
                         const ConvGeometry& g, std::optional<HW> out_hw) {
  check_geometry(g);
  if (u.ndim() != 4) throw DimensionError("tconv2d: input must be [N,C,H,W], got " + shape_str(u.shape()));
  if (w.ndim() != 4) throw DimensionError("tconv2d: weights must be 4-d, got " + shape_str(w.shape()));
  check_conv_weights(w, b, g, w.dim(1), "tconv2d");
  const std::size_t N = u.dim(0), K = u.dim(1), HI = u.dim(2), WI = u.dim(3);
  if (w.dim(0) != K) {
    throw DimensionError("tconv2d: input " + shape_str(u.shape()) + " has " + std::to_string(K) +
                         " channels but weights " + shape_str(w.shape()) + " expect " +
                         std::to_string(w.dim(0)));
  }
  const std::size_t C = w.dim(1);
  const std::size_t H = out_hw ? out_hw->first : tconv_out_extent(HI, g.kh, g.stride_h, g.padding);
  const std::size_t W = out_hw ? out_hw->second : tconv_out_extent(WI, g.kw, g.stride_w, g.padding);
  if (conv_out_extent(H, g.kh, g.stride_h, g.padding) != HI ||
      conv_out_extent(W, g.kw, g.stride_w, g.padding) != WI) {
    throw DimensionError("tconv2d: requested output " + std::to_string(H) + "x" + std::to_string(W) +
                         " is not consistent with input " + shape_str(u.shape()));
  }
  const std::size_t pt = conv_pad_before(H, g.kh, g.stride_h, g.padding);
  const std::size_t pl = conv_pad_before(W, g.kw, g.stride_w, g.padding);
  const std::size_t P = HI * WI, CKK = C * g.kh * g.kw;

  BasicTensor<T> out(Shape{N, C, H, W});
  std::vector<T> col(CKK * P);
  CMapMat<T> wm(w.data(), K, CKK);
  for (std::size_t n = 0; n < N; ++n) {
    MapMat<T>(col.data(), CKK, P).noalias() = wm.transpose() * CMapMat<T>(u.data() + n * K * P, K, P);
    T* o = out.data() + n * C * H * W;
    col2im(col.data(), C, H, W, g, HI, WI, pt, pl, o);
    for (std::size_t c = 0; c < C; ++c) {
      T* plane = o + c * H * W;
      for (std::size_t i = 0; i < H * W; ++i) plane[i] += b[c];
    }
  }
  return out;
}

template <class T>
ConvGrads<T> tconv_bwd(const BasicTensor<T>& u, const BasicTensor<T>& w, const ConvGeometry& g,
                       const BasicTensor<T>& gy, bool need_input) {
  const std::size_t N = u.dim(0), K = u.dim(1), HI = u.dim(2), WI = u.dim(3);
  const std::size_t C = w.dim(1);
  if (gy.ndim() != 4 || gy.dim(0) != N || gy.dim(1) != C) {
    throw DimensionError("tconv2d backward: gradient " + shape_str(gy.shape()) +
                         " does not match input " + shape_str(u.shape()));
  }
  const std::size_t H = gy.dim(2), W = gy.dim(3);
  const std::size_t pt = conv_pad_before(H, g.kh, g.stride_h, g.padding);
  const std::size_t pl = conv_pad_before(W, g.kw, g.stride_w, g.padding);
  const std::size_t P = HI * WI, CKK = C * g.kh * g.kw;

  ConvGrads<T> r{need_input ? BasicTensor<T>(u.shape()) : BasicTensor<T>(), BasicTensor<T>(w.shape()),
                 BasicTensor<T>(Shape{C})};
  std::vector<T> col(CKK * P);
  CMapMat<T> wm(w.data(), K, CKK);
  MapMat<T> gwm(r.weights.data(), K, CKK);
  for (std::size_t n = 0; n < N; ++n) {
    const T* gyn = gy.data() + n * C * H * W;
    im2col(gyn, C, H, W, g, HI, WI, pt, pl, col.data());
    CMapMat<T> colm(col.data(), CKK, P);
    CMapMat<T> um(u.data() + n * K * P, K, P);
    gwm.noalias() += um * colm.transpose();
    add_row_sums(gyn, C, H * W, r.bias.data());
    if (need_input) MapMat<T>(r.input.data() + n * K * P, K, P).noalias() = wm * colm;
  }
  return r;
}

template <class T>
BasicTensor<T> dense_fwd(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  if (x.ndim() != 2) throw DimensionError("dense: input must be [N,D], got " + shape_str(x.shape()));
  if (w.ndim() != 2) throw DimensionError("dense: weights must be [D,E], got " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(0)) {
    throw DimensionError("dense: input " + shape_str(x.shape()) + " does not match weights " +
                         shape_str(w.shape()));
  }
  if (b.numel() != w.dim(1)) {
    throw DimensionError("dense: bias length " + std::to_string(b.numel()) + " != output features " +
                         std::to_string(w.dim(1)));
  }
  const std::size_t N = x.dim(0), D = x.dim(1), E = w.dim(1);
  BasicTensor<T> out(Shape{N, E});
  MapMat<T> om(out.data(), N, E);
  om.noalias() = CMapMat<T>(x.data(), N, D) * CMapMat<T>(w.data(), D, E);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t e = 0; e < E; ++e) om(n, e) += b[e];
  }
  return out;
}

template <class T>
ConvGrads<T> dense_bwd(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy,
                       bool need_input) {
  const std::size_t N = x.dim(0), D = x.dim(1), E = w.dim(1);
  require_same_shape(gy.shape(), Shape{N, E}, "dense backward");
  ConvGrads<T> r{need_input ? BasicTensor<T>(x.shape()) : BasicTensor<T>(), BasicTensor<T>(w.shape()),
                 BasicTensor<T>(Shape{E})};
  CMapMat<T> gym(gy.data(), N, E);
  MapMat<T>(r.weights.data(), D, E).noalias() = CMapMat<T>(x.data(), N, D).transpose() * gym;
  for (std::size_t e = 0; e < E; ++e) {
    double s = 0.0;
    for (std::size_t n = 0; n < N; ++n) s += gym(n, e);
    r.bias[e] = static_cast<T>(s);
  }
  if (need_input) {
    MapMat<T>(r.input.data(), N, D).noalias() = gym * CMapMat<T>(w.data(), D, E).transpose();
  }
  return r;
}

template <class T>
void accumulate(std::vector<BasicTensor<T>>& grads, std::size_t id, BasicTensor<T> g) {
  auto& dst = grads[id];
  if (dst.empty()) {
    dst = std::move(g);
    return;
  }
  require_same_shape(dst.shape(), g.shape(), "gradient accumulation");
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
}

}  // namespace

std::string to_string(ActKind k) {
  switch (k) {
    case ActKind::relu: return "relu";
    case ActKind::leaky_relu: return "leaky_relu";
    case ActKind::linear: return "linear";
  }
  return "linear";
}

ActKind act_kind_from_string(const std::string& s) {
  if (s == "relu") return ActKind::relu;
  if (s == "leaky_relu" || s == "leaky-relu") return ActKind::leaky_relu;
  if (s == "linear") return ActKind::linear;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::tconv: return "tconv";
    case LayerKind::dense: return "dense";
  }
  return "dense";
}

std::string to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }

Padding padding_from_string(const std::string& s) {
  if (s == "same") return Padding::same;
  if (s == "valid") return Padding::valid;
  throw ConfigError("unknown padding '" + s + "'");
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding p) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  if (p == Padding::same) return (in + stride - 1) / stride;
  if (in < k) {
    throw DimensionError("valid convolution: input extent " + std::to_string(in) +
                         " smaller than kernel " + std::to_string(k));
  }
  return (in - k) / stride + 1;
}

std::size_t conv_pad_before(std::size_t in, std::size_t k, std::size_t stride, Padding p) {
  if (p == Padding::valid) return 0;
  const std::size_t out = conv_out_extent(in, k, stride, p);
  const std::size_t need = (out - 1) * stride + k;
  return need > in ? (need - in) / 2 : 0;
}

std::size_t tconv_out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding p) {
  return p == Padding::same ? in * stride : (in - 1) * stride + k;
}

template <class T>
std::size_t LayerParams<T>::in_channels() const {
  switch (kind) {
    case LayerKind::conv: return weights.dim(1);
    case LayerKind::tconv: return weights.dim(0);
    case LayerKind::dense: return weights.dim(0);
  }
  return 0;
}

template <class T>
std::size_t LayerParams<T>::out_channels() const {
  switch (kind) {
    case LayerKind::conv: return weights.dim(0);
    case LayerKind::tconv: return weights.dim(1);
    case LayerKind::dense: return weights.dim(1);
  }
  return 0;
}

template <class T>
void LayerParams<T>::validate() const {
  if (kind == LayerKind::dense) {
    if (weights.ndim() != 2) throw DimensionError("dense weights must be 2-d, got " + shape_str(weights.shape()));
  } else {
    check_geometry(geom);
    check_conv_weights(weights, bias, geom, out_channels(), to_string(kind).c_str());
  }
  if (bias.numel() != out_channels()) {
    throw DimensionError("bias length " + std::to_string(bias.numel()) + " != output channels " +
                         std::to_string(out_channels()));
  }
}

template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const LayerParams<T>& p) {
  return conv_fwd(input, p.weights, p.bias, p.geom);
}

template <class T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const LayerParams<T>& p,
                             const BasicTensor<T>& grad_out) {
  return conv_bwd(input, p.weights, p.geom, grad_out, true);
}

template <class T>
BasicTensor<T> tconv2d_forward(const BasicTensor<T>& input, const LayerParams<T>& p,
                               std::optional<HW> out_hw) {
  return tconv_fwd(input, p.weights, p.bias, p.geom, out_hw);
}

template <class T>
ConvGrads<T> tconv2d_backward(const BasicTensor<T>& input, const LayerParams<T>& p,
                              const BasicTensor<T>& grad_out) {
  return tconv_bwd(input, p.weights, p.geom, grad_out, true);
}

template <class T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input, const LayerParams<T>& p) {
  return dense_fwd(input, p.weights, p.bias);
}

template <class T>
ConvGrads<T> dense_backward(const BasicTensor<T>& input, const LayerParams<T>& p,
                            const BasicTensor<T>& grad_out) {
  return dense_bwd(input, p.weights, grad_out, true);
}

template <class T>
BasicTensor<T> activation(const BasicTensor<T>& input, Activation act) {
  BasicTensor<T> out = input;
  if (act.kind == ActKind::linear) return out;
  const T slope = act.kind == ActKind::relu ? T(0) : static_cast<T>(act.alpha);
  for (auto& v : out.vec()) {
    if (v < T(0)) v *= slope;
  }
  return out;
}

template <class T>
BasicTensor<T> activation_backward(const BasicTensor<T>& input, Activation act,
                                   const BasicTensor<T>& grad_out) {
  require_same_shape(input.shape(), grad_out.shape(), "activation backward");
  BasicTensor<T> g = grad_out;
  if (act.kind == ActKind::linear) return g;
  const T slope = act.kind == ActKind::relu ? T(0) : static_cast<T>(act.alpha);
  for (std::size_t i = 0; i < g.numel(); ++i) {
    if (input[i] < T(0)) g[i] *= slope;
  }
  return g;
}

template <class T>
double mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mse_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

std::uint64_t params_hash(const ParamStore<float>& p) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : p) {
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h = tensor_hash(t, h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Graph

template <class T>
typename Graph<T>::Var Graph<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <class T>
bool Graph<T>::any_requires_grad(std::initializer_list<std::size_t> ids) const {
  return std::any_of(ids.begin(), ids.end(), [this](std::size_t i) { return nodes_[i].requires_grad; });
}

template <class T>
typename Graph<T>::Var Graph<T>::input(BasicTensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
typename Graph<T>::Var Graph<T>::param(const std::string& name, const BasicTensor<T>& value) {
  Node n;
  n.value = value;
  n.param_name = name;
  n.requires_grad = true;
  return push(std::move(n));
}

template <class T>
typename Graph<T>::Var Graph<T>::conv2d(Var x, Var w, Var b, const ConvGeometry& geom) {
  Node n;
  n.value = conv_fwd(value(x), value(w), value(b), geom);
  n.inputs = {x.id, w.id, b.id};
  n.requires_grad = any_requires_grad({x.id, w.id, b.id});
  n.backward = [geom](const Graph& g, std::size_t self, std::vector<BasicTensor<T>>& grads) {
    const auto& in = g.nodes_[self].inputs;
    const bool need_x = g.nodes_[in[0]].requires_grad;
    auto r = conv_bwd(g.nodes_[in[0]].value, g.nodes_[in[1]].value, geom, grads[self], need_x);
    if (need_x) accumulate(grads, in[0], std::move(r.input));
    if (g.nodes_[in[1]].requires_grad) accumulate(grads, in[1], std::move(r.weights));
    if (g.nodes_[in[2]].requires_grad) accumulate(grads, in[2], std::move(r.bias));
  };
  return push(std::move(n));
}

template <class T>
typename Graph<T>::Var Graph<T>::tconv2d(Var x, Var w, Var b, const ConvGeometry& geom,
                                         std::optional<HW> out_hw) {
  Node n;
  n.value = tconv_fwd(value(x), value(w), value(b), geom, out_hw);
  n.inputs = {x.id, w.id, b.id};
  n.requires_grad = any_requires_grad({x.id, w.id, b.id});
  n.backward = [geom](const Graph& g, std::size_t self, std::vector<BasicTensor<T>>& grads) {
    const auto& in = g.nodes_[self].inputs;
    const bool need_x = g.nodes_[in[0]].requires_grad;
    auto r = tconv_bwd(g.nodes_[in[0]].value, g.nodes_[in[1]].value, geom, grads[self], need_x);
    if (need_x) accumulate(grads, in[0], std::move(r.input));
    if (g.nodes_[in[1]].requires_grad) accumulate(grads, in[1], std::move(r.weights));
    if (g.nodes_[in[2]].requires_grad) accumulate(grads, in[2], std::move(r.bias));
  };
  return push(std::move(n));
}

template <class T>
typename Graph<T>::Var Graph<T>::dense(Var x, Var w, Var b) {
  Node n;
  n.value = dense_fwd(value(x), value(w), value(b));
  n.inputs = {x.id, w.id, b.id};
  n.requires_grad = any_requires_grad({x.id, w.id, b.id});
  n.backward = [](const Graph& g, std::size_t self, std::vector<BasicTensor<T>>& grads) {
    const auto& in = g.nodes_[self].inputs;
    const bool need_x = g.nodes_[in[0]].requires_grad;
    auto r = dense_bwd(g.nodes_[in[0]].value, g.nodes_[in[1]].value, grads[self], need_x);
    if (need_x) accumulate(grads, in[0], std::move(r.input));
    if (g.nodes_[in[1]].requires_grad) accumulate(grads, in[1], std::move(r.weights));
    if (g.nodes_[in[2]].requires_grad) accumulate(grads, in[2], std::move(r.bias));
  };
  return push(std::move(n));
}

template <class T>
typename Graph<T>::Var Graph<T>::act(Var x, Activation a) {
  Node n;
  n.value = activation(value(x), a);
  n.inputs = {x.id};
  n.requires_grad = nodes_[x.id].requires_grad;
  n.act = a;
  n.backward = [a](const Graph& g, std::size_t self, std::vector<BasicTensor<T>>& grads) {
    const auto in = g.nodes_[self].inputs[0];
    accumulate(grads, in, activation_backward(g.nodes_[in].value, a, grads[self]));
  };
  return push(std::move(n));
}

template <class T>
typename Graph<T>::Var Graph<T>::reshape(Var x, Shape shape) {
  Node n;
  n.value = value(x).reshaped(std::move(shape));
  n.inputs = {x.id};
  n.requires_grad = nodes_[x.id].requires_grad;
  n.backward = [](const Graph& g, std::size_t self, std::vector<BasicTensor<T>>& grads) {
    const auto in = g.nodes_[self].inputs[0];
    accumulate(grads, in, grads[self].reshaped(g.nodes_[in].value.shape()));
  };
  return push(std::move(n));
}

template <class T>
typename Graph<T>::Var Graph<T>::affine(Var x, double scale, double shift) {
  Node n;
  n.value = value(x);
  for (auto& v : n.value.vec()) v = static_cast<T>(static_cast<T>(scale) * v + static_cast<T>(shift));
  n.inputs = {x.id};
  n.requires_grad = nodes_[x.id].requires_grad;
  n.backward = [scale](const Graph& g, std::size_t self, std::vector<BasicTensor<T>>& grads) {
    BasicTensor<T> gx = grads[self];
    for (auto& v : gx.vec()) v *= static_cast<T>(scale);
    accumulate(grads, g.nodes_[self].inputs[0], std::move(gx));
  };
  return push(std::move(n));
}

template <class T>
typename Graph<T>::Var Graph<T>::add(Var a, Var b) {
  require_same_shape(value(a).shape(), value(b).shape(), "add");
  Node n;
  n.value = value(a);
  for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] += value(b)[i];
  n.inputs = {a.id, b.id};
  n.requires_grad = any_requires_grad({a.id, b.id});
  n.backward = [](const Graph& g, std::size_t self, std::vector<BasicTensor<T>>& grads) {
    const auto& in = g.nodes_[self].inputs;
    for (auto i : in) {
      if (g.nodes_[i].requires_grad) accumulate(grads, i, grads[self]);
    }
  };
  return push(std::move(n));
}

template <class T>
typename Graph<T>::Var Graph<T>::mse(Var a, Var b) {
  Node n;
  n.value = BasicTensor<T>::scalar(static_cast<T>(mse_loss(value(a), value(b))));
  n.inputs = {a.id, b.id};
  n.requires_grad = any_requires_grad({a.id, b.id});
  n.backward = [](const Graph& g, std::size_t self, std::vector<BasicTensor<T>>& grads) {
    const auto& in = g.nodes_[self].inputs;
    const auto& va = g.nodes_[in[0]].value;
    const auto& vb = g.nodes_[in[1]].value;
    const double k = 2.0 * static_cast<double>(grads[self][0]) / static_cast<double>(va.numel());
    BasicTensor<T> ga(va.shape());
    for (std::size_t i = 0; i < va.numel(); ++i) {
      ga[i] = static_cast<T>(k * (static_cast<double>(va[i]) - static_cast<double>(vb[i])));
    }
    if (g.nodes_[in[1]].requires_grad) {
      BasicTensor<T> gb = ga;
      for (auto& v : gb.vec()) v = -v;
      accumulate(grads, in[1], std::move(gb));
    }
    if (g.nodes_[in[0]].requires_grad) accumulate(grads, in[0], std::move(ga));
  };
  return push(std::move(n));
}

template <class T>
Gradients<T> Graph<T>::backward(Var loss) const {
  if (nodes_.empty() || loss.id >= nodes_.size()) {
    throw UsageError("backward called without a recorded forward pass");
  }
  if (nodes_[loss.id].value.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got " + shape_str(nodes_[loss.id].value.shape()));
  }
  std::vector<BasicTensor<T>> grads(nodes_.size());
  grads[loss.id] = BasicTensor<T>::scalar(T(1));
  Gradients<T> out;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.param_name.empty()) {
      BasicTensor<T> g = grads[i].empty() ? BasicTensor<T>(n.value.shape()) : std::move(grads[i]);
      auto it = out.find(n.param_name);
      if (it == out.end()) {
        out.emplace(n.param_name, std::move(g));
      } else {
        for (std::size_t j = 0; j < g.numel(); ++j) it->second[j] += g[j];
      }
      continue;
    }
    if (grads[i].empty() || !n.requires_grad || !n.backward) continue;
    n.backward(*this, i, grads);
    grads[i] = BasicTensor<T>();
  }
  for (std::size_t i = loss.id + 1; i < nodes_.size(); ++i) {
    if (!nodes_[i].param_name.empty() && !out.count(nodes_[i].param_name)) {
      out.emplace(nodes_[i].param_name, BasicTensor<T>(nodes_[i].value.shape()));
    }
  }
  return out;
}

template <class T>
std::uint64_t Graph<T>::activation_pattern() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& n : nodes_) {
    if (!n.act || n.act->kind == ActKind::linear) continue;
    const auto& in = nodes_[n.inputs[0]].value;
    for (std::size_t i = 0; i < in.numel(); ++i) {
      h ^= in[i] < T(0) ? 0x9eULL : 0x37ULL;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Optimizers

OptimizerState OptimizerState::sgd(double lr, double momentum) {
  OptimizerState s;
  s.kind = OptimizerKind::sgd;
  s.lr = lr;
  s.momentum = momentum;
  return s;
}

OptimizerState OptimizerState::adam(double lr, double beta1, double beta2, double eps) {
  OptimizerState s;
  s.kind = OptimizerKind::adam;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

void init_optimizer(OptimizerState& state, const ParamStore<float>& params) {
  state.m.clear();
  state.v.clear();
  for (const auto& [name, p] : params) {
    state.m.emplace(name, Tensor(p.shape()));
    if (state.kind == OptimizerKind::adam) state.v.emplace(name, Tensor(p.shape()));
  }
  state.t = 0;
  state.initialized = true;
}

namespace {

Tensor& param_for(ParamStore<float>& params, const std::string& name, const Tensor& g) {
  auto it = params.find(name);
  if (it == params.end()) throw UsageError("gradient for unknown parameter '" + name + "'");
  require_same_shape(it->second.shape(), g.shape(), ("optimizer step on " + name).c_str());
  return it->second;
}

}  // namespace

void sgd_step(ParamStore<float>& params, const Gradients<float>& grads, OptimizerState& state) {
  if (!(state.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (state.momentum > 0.0 && !state.initialized) init_optimizer(state, params);
  ++state.t;
  for (const auto& [name, g] : grads) {
    Tensor& w = param_for(params, name, g);
    if (state.momentum > 0.0) {
      Tensor& vel = state.m.at(name);
      for (std::size_t i = 0; i < w.numel(); ++i) {
        vel[i] = static_cast<float>(state.momentum * vel[i] + g[i]);
        w[i] = static_cast<float>(w[i] - state.lr * vel[i]);
      }
    } else {
      for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(w[i] - state.lr * g[i]);
    }
  }
}

void adam_step(ParamStore<float>& params, const Gradients<float>& grads, OptimizerState& state) {
  if (state.kind != OptimizerKind::adam || !state.initialized) {
    throw UsageError("adam_step requires an initialized adam optimizer state");
  }
  if (!(state.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(state.beta1 > 0.0 && state.beta1 < 1.0 && state.beta2 > 0.0 && state.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in (0,1)");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    Tensor& w = param_for(params, name, g);
    auto mit = state.m.find(name);
    auto vit = state.v.find(name);
    if (mit == state.m.end() || vit == state.v.end()) {
      throw UsageError("adam state has no moments for parameter '" + name + "'");
    }
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      w[i] = static_cast<float>(w[i] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

void optimizer_step(ParamStore<float>& params, const Gradients<float>& grads, OptimizerState& state) {
  if (state.kind == OptimizerKind::adam) {
    adam_step(params, grads, state);
  } else {
    sgd_step(params, grads, state);
  }
}

template <class T>
LayerParams<T> init_layer(LayerKind kind, std::size_t in, std::size_t out, const ConvGeometry& geom,
                          std::uint64_t seed) {
  LayerParams<T> p;
  p.kind = kind;
  p.geom = geom;
  std::size_t fan_in = in, fan_out = out;
  Shape wshape;
  switch (kind) {
    case LayerKind::conv:
      wshape = {out, in, geom.kh, geom.kw};
      fan_in *= geom.kh * geom.kw;
      fan_out *= geom.kh * geom.kw;
      break;
    case LayerKind::tconv:
      wshape = {in, out, geom.kh, geom.kw};
      fan_in *= geom.kh * geom.kw;
      fan_out *= geom.kh * geom.kw;
      break;
    case LayerKind::dense:
      wshape = {in, out};
      break;
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  p.weights = BasicTensor<T>(wshape);
  for (auto& w : p.weights.vec()) w = static_cast<T>(rng.uniform(-limit, limit));
  p.bias = BasicTensor<T>(Shape{out});
  return p;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(const ParamStore<double>& params, const LossBuilder& build,
                           const GradCheckOptions& opts) {
  ParamStore<double> p = params;
  Graph<double> base;
  const auto loss = build(base, p);
  const auto analytic = base.backward(loss);
  const auto pattern = base.activation_pattern();

  auto eval = [&](std::uint64_t& pat) {
    Graph<double> g;
    const auto l = build(g, p);
    pat = g.activation_pattern();
    return g.value(l).item();
  };

  GradCheckResult res;
  Rng rng(opts.seed);
  for (auto& [name, tensor] : p) {
    auto ait = analytic.find(name);
    if (ait == analytic.end()) continue;
    std::vector<std::size_t> idx(tensor.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_coords_per_tensor > 0 && idx.size() > opts.max_coords_per_tensor) {
      for (std::size_t i = 0; i < opts.max_coords_per_tensor; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                static_cast<std::int64_t>(idx.size() - 1)));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(opts.max_coords_per_tensor);
    }
    for (auto i : idx) {
      const double orig = tensor[i];
      double step = opts.eps;
      bool ok = false;
      double numeric = 0.0;
      for (int attempt = 0; attempt < 4 && !ok; ++attempt, step /= 10.0) {
        std::uint64_t pp = 0, pm = 0;
        tensor[i] = orig + step;
        const double lp = eval(pp);
        tensor[i] = orig - step;
        const double lm = eval(pm);
        tensor[i] = orig;
        if (pp == pattern && pm == pattern) {
          numeric = (lp - lm) / (2.0 * step);
          ok = true;
        }
      }
      if (!ok) {
        ++res.coords_skipped;
        continue;
      }
      const double a = ait->second[i] * opts.analytic_scale;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++res.coords_checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

#define AUTOSPEED_INSTANTIATE(T)                                                                  \
  template struct LayerParams<T>;                                                                 \
  template class Graph<T>;                                                                        \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const LayerParams<T>&);           \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const LayerParams<T>&,             \
                                        const BasicTensor<T>&);                                   \
  template BasicTensor<T> tconv2d_forward(const BasicTensor<T>&, const LayerParams<T>&,           \
                                          std::optional<HW>);                                     \
  template ConvGrads<T> tconv2d_backward(const BasicTensor<T>&, const LayerParams<T>&,            \
                                         const BasicTensor<T>&);                                  \
  template BasicTensor<T> dense_forward(const BasicTensor<T>&, const LayerParams<T>&);            \
  template ConvGrads<T> dense_backward(const BasicTensor<T>&, const LayerParams<T>&,              \
                                       const BasicTensor<T>&);                                    \
  template BasicTensor<T> activation(const BasicTensor<T>&, Activation);                          \
  template BasicTensor<T> activation_backward(const BasicTensor<T>&, Activation,                  \
                                              const BasicTensor<T>&);                             \
  template double mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template LayerParams<T> init_layer<T>(LayerKind, std::size_t, std::size_t, const ConvGeometry&, \
                                        std::uint64_t);

AUTOSPEED_INSTANTIATE(float)
AUTOSPEED_INSTANTIATE(double)

#undef AUTOSPEED_INSTANTIATE

}  // namespace autospeed::nn
