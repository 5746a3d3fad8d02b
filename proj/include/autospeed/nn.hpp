#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "autospeed/tensor.hpp"

namespace autospeed::nn {

enum class LayerKind { conv, tconv, dense };
enum class Padding { valid, same };
enum class ActKind { relu, leaky_relu, linear };

struct Activation {
  ActKind kind = ActKind::linear;
  double alpha = 0.1;  // leaky-relu slope for x < 0

  static Activation relu() { return {ActKind::relu, 0.0}; }
  static Activation leaky(double a = 0.1) { return {ActKind::leaky_relu, a}; }
  static Activation linear() { return {ActKind::linear, 0.0}; }
};

std::string to_string(ActKind k);
ActKind act_kind_from_string(const std::string& s);
std::string to_string(LayerKind k);
std::string to_string(Padding p);
Padding padding_from_string(const std::string& s);

struct ConvGeometry {
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  Padding padding = Padding::same;
};

// Output extent of a convolution along one axis; throws for valid padding
// with input smaller than the kernel.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding p);
// Leading pad for "same" convolution (TensorFlow convention: the extra pad
// cell, if any, goes to the trailing side).
std::size_t conv_pad_before(std::size_t in, std::size_t k, std::size_t stride, Padding p);
// Default output extent of a transposed convolution.
std::size_t tconv_out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding p);

// Weights layouts:
//   conv   [out_ch, in_ch, kh, kw]
//   tconv  [in_ch, out_ch, kh, kw]  (the weight of the convolution it is the adjoint of)
//   dense  [in_features, out_features]
template <class T>
struct LayerParams {
  LayerKind kind = LayerKind::dense;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
  ConvGeometry geom;

  std::size_t in_channels() const;
  std::size_t out_channels() const;
  void validate() const;
};

template <class T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

using HW = std::pair<std::size_t, std::size_t>;

// Cross-correlation (no kernel flip). input [N,C,H,W] -> [N,K,H',W'].
template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const LayerParams<T>& params);
template <class T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const LayerParams<T>& params,
                             const BasicTensor<T>& grad_out);

// Adjoint of conv2d_forward with the same weights and geometry, plus bias.
// out_hw selects the output extent when several inputs map to the same
// convolution output size (stride > 1).
template <class T>
BasicTensor<T> tconv2d_forward(const BasicTensor<T>& input, const LayerParams<T>& params,
                               std::optional<HW> out_hw = std::nullopt);
template <class T>
ConvGrads<T> tconv2d_backward(const BasicTensor<T>& input, const LayerParams<T>& params,
                              const BasicTensor<T>& grad_out);

// input [N,D] -> input * W + b, [N,E].
template <class T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input, const LayerParams<T>& params);
template <class T>
ConvGrads<T> dense_backward(const BasicTensor<T>& input, const LayerParams<T>& params,
                            const BasicTensor<T>& grad_out);

template <class T>
BasicTensor<T> activation(const BasicTensor<T>& input, Activation act);
template <class T>
BasicTensor<T> activation_backward(const BasicTensor<T>& input, Activation act,
                                   const BasicTensor<T>& grad_out);

// Mean of squared differences over all elements, accumulated in double.
template <class T>
double mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
using ParamStore = std::map<std::string, BasicTensor<T>>;
template <class T>
using Gradients = std::map<std::string, BasicTensor<T>>;

template <class U, class T>
ParamStore<U> cast_params(const ParamStore<T>& p) {
  ParamStore<U> out;
  for (const auto& [k, v] : p) out.emplace(k, v.template cast<U>());
  return out;
}

std::uint64_t params_hash(const ParamStore<float>& p);

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// iteration is a valid topological order for the backward sweep.
template <class T>
class Graph {
 public:
  struct Var {
    std::size_t id = 0;
  };

  Var input(BasicTensor<T> value);
  Var param(const std::string& name, const BasicTensor<T>& value);

  Var conv2d(Var x, Var w, Var b, const ConvGeometry& geom);
  Var tconv2d(Var x, Var w, Var b, const ConvGeometry& geom, std::optional<HW> out_hw = {});
  Var dense(Var x, Var w, Var b);
  Var act(Var x, Activation a);
  Var reshape(Var x, Shape shape);
  Var affine(Var x, double scale, double shift);
  Var add(Var a, Var b);
  Var mse(Var a, Var b);

  const BasicTensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients of a scalar node with respect to every reachable parameter.
  Gradients<T> backward(Var loss) const;

  // Fingerprint of the sign pattern of every rectifier input. Changes when a
  // perturbation crosses a kink of a piecewise-linear activation.
  std::uint64_t activation_pattern() const;

 private:
  using BackwardFn = std::function<void(const Graph&, std::size_t self,
                                        std::vector<BasicTensor<T>>& grads)>;
  struct Node {
    BasicTensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string param_name;
    bool requires_grad = false;
    std::optional<Activation> act;
  };

  Var push(Node n);
  bool any_requires_grad(std::initializer_list<std::size_t> ids) const;

  std::vector<Node> nodes_;
};

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 1e-3;
  double momentum = 0.0;  // sgd only; 0 gives the plain w <- w - lr*g update
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  bool initialized = false;
  ParamStore<float> m;  // adam first moment / sgd velocity
  ParamStore<float> v;  // adam second moment

  static OptimizerState sgd(double lr, double momentum = 0.0);
  static OptimizerState adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                             double eps = 1e-8);
};

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

// Allocates moment buffers matching the parameter shapes.
void init_optimizer(OptimizerState& state, const ParamStore<float>& params);

void sgd_step(ParamStore<float>& params, const Gradients<float>& grads, OptimizerState& state);
void adam_step(ParamStore<float>& params, const Gradients<float>& grads, OptimizerState& state);
void optimizer_step(ParamStore<float>& params, const Gradients<float>& grads,
                    OptimizerState& state);

// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero bias.
template <class T>
LayerParams<T> init_layer(LayerKind kind, std::size_t in, std::size_t out,
                          const ConvGeometry& geom, std::uint64_t seed);

struct GradCheckOptions {
  double eps = 1e-3;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  // Test hook: multiplies the analytic gradient before comparison.
  double analytic_scale = 1.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
  // Coordinates where a rectifier kink was crossed even at the smallest step.
  std::size_t coords_skipped = 0;
};

using LossBuilder = std::function<Graph<double>::Var(Graph<double>&, const ParamStore<double>&)>;

// Central finite differences in double precision against the reverse-mode
// gradient. Relative error per coordinate is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(const ParamStore<double>& params, const LossBuilder& build,
                           const GradCheckOptions& opts = {});

}  // namespace autospeed::nn
