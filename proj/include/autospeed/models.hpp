#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autospeed/nn.hpp"
#include "autospeed/tensor.hpp"

namespace autospeed::models {

struct StageSpec {
  std::size_t channels = 8;
  std::size_t stride_h = 2;
  std::size_t stride_w = 2;
  std::size_t kernel = 3;
};

// Convolutional autoencoder. Encoder stages are same-padded convolutions;
// the decoder mirrors them with transposed convolutions. Hidden layers use
// leaky-relu, the latent and the reconstruction are linear.
struct AutoencoderSpec {
  std::string name;  // parameter prefix
  Shape input;       // {C, H, W}
  std::vector<StageSpec> stages;
  Shape latent;      // declared {C, H, W}; must match what the stages produce
  double leaky_alpha = 0.1;
  // Boundary transform applied to inputs, (x - shift) * scale, and inverted
  // on reconstructions.
  double scale = 1.0;
  double shift = 0.0;

  // Spatial extent entering each stage, followed by the latent extent.
  std::vector<nn::HW> extents() const;
  Shape derived_latent() const;
  std::size_t latent_size() const { return shape_numel(derived_latent()); }
  // ConfigError naming the stage whose input is not divisible by its stride,
  // or a declared latent that disagrees with the stages.
  void validate() const;

  static AutoencoderSpec desk_rf();
  static AutoencoderSpec desk_sos();
};

std::string enc_name(const AutoencoderSpec& s, std::size_t k, const char* what);
std::string dec_name(const AutoencoderSpec& s, std::size_t k, const char* what);

// Adds Glorot-initialized parameters for both halves of an autoencoder.
void init_autoencoder(nn::ParamStore<float>& params, const AutoencoderSpec& spec, std::uint64_t seed);
void init_encoder(nn::ParamStore<float>& params, const AutoencoderSpec& spec, std::uint64_t seed);
void init_decoder(nn::ParamStore<float>& params, const AutoencoderSpec& spec, std::uint64_t seed);
// Dense map between flattened latents, "<name>.w" [in, out] and "<name>.b".
void init_dense(nn::ParamStore<float>& params, const std::string& name, std::size_t in, std::size_t out,
                std::uint64_t seed);

template <class T>
using Var = typename nn::Graph<T>::Var;

// Graph fragments. `x` is in raw units for encode; decode returns the
// reconstruction in the scaled domain.
template <class T>
Var<T> to_scaled(nn::Graph<T>& g, const AutoencoderSpec& s, Var<T> raw);
template <class T>
Var<T> from_scaled(nn::Graph<T>& g, const AutoencoderSpec& s, Var<T> scaled);
template <class T>
Var<T> encode(nn::Graph<T>& g, const AutoencoderSpec& s, const nn::ParamStore<T>& p, Var<T> scaled);
template <class T>
Var<T> decode(nn::Graph<T>& g, const AutoencoderSpec& s, const nn::ParamStore<T>& p, Var<T> latent);
// Flatten, dense, activation, reshape to the target latent shape.
template <class T>
Var<T> latent_map(nn::Graph<T>& g, const nn::ParamStore<T>& p, const std::string& name, Var<T> m,
                  const Shape& out_latent, nn::Activation act);

// Batches: x [N, C, H, W] in raw units.
struct LinkedModel {
  AutoencoderSpec rf = AutoencoderSpec::desk_rf();
  AutoencoderSpec sos = AutoencoderSpec::desk_sos();
  nn::Activation link_act = nn::Activation::leaky(0.1);
  nn::ParamStore<float> params;  // rf.*, sos.*, link.*

  static LinkedModel build(const AutoencoderSpec& rf, const AutoencoderSpec& sos, std::uint64_t seed);
  // ConfigError when the link does not map the rf latent onto the sos latent.
  void validate() const;
};

struct LaeTerms {
  double rf = 0, sos = 0, latent = 0;
  double total() const { return rf + sos + latent; }
};

template <class T>
struct LaeGraph {
  Var<T> rf, sos, latent, total;
  // Scaled inputs, reconstructions and the two latents, for metrics.
  Var<T> x, x_rec, y, y_rec, m_link, n;
};

// Linked-autoencoder objective: mse(x, x') + mse(y, y') + mse(m', n), each a
// mean over the batch and elements, measured in the scaled domains.
template <class T>
LaeGraph<T> lae_graph(nn::Graph<T>& g, const LinkedModel& model, const nn::ParamStore<T>& p,
                      const BasicTensor<T>& x, const BasicTensor<T>& y);
LaeTerms lae_loss(const LinkedModel& model, const Tensor& x, const Tensor& y);

struct IrmLayer {
  Shape in_latent, out_latent;
  nn::Activation act = nn::Activation::leaky(0.1);
  nn::ParamStore<float> params;  // irm.w [in, out], irm.b [out]

  static IrmLayer build(const Shape& in_latent, const Shape& out_latent, std::uint64_t seed,
                        nn::Activation act = nn::Activation::leaky(0.1));
  // Copies the trained link as the starting point.
  static IrmLayer from_link(const LinkedModel& model);
  void validate() const;
};

// mse(n, f4(m)) over a batch of latents m [N, ...] and n [N, ...].
template <class T>
Var<T> irm_graph(nn::Graph<T>& g, const IrmLayer& irm, const nn::ParamStore<T>& p, const BasicTensor<T>& m,
                 const BasicTensor<T>& n);
double irm_loss(const IrmLayer& irm, const Tensor& m, const Tensor& n);

// Latents of the frozen encoders, [N, C, H, W].
Tensor encode_rf(const LinkedModel& model, const Tensor& x);
Tensor encode_sos(const LinkedModel& model, const Tensor& y);
Tensor decode_sos(const AutoencoderSpec& sos, const nn::ParamStore<float>& p, const Tensor& n);  // raw units
Tensor apply_irm(const IrmLayer& irm, const Tensor& m);

// Frozen inference network y' = g2(f4(f1(x))). Holds copies of exactly the
// tensors it needs and exposes no mutable access.
class AutoSpeedModel {
 public:
  AutoSpeedModel(AutoencoderSpec rf, AutoencoderSpec sos, nn::Activation irm_act, nn::ParamStore<float> params);
  // x [N, 1, channels, samples] raw RF, returns SoS maps [N, 1, H, W] in m/s.
  Tensor infer(const Tensor& x) const;
  const nn::ParamStore<float>& params() const { return params_; }
  const AutoencoderSpec& rf() const { return rf_; }
  const AutoencoderSpec& sos() const { return sos_; }
  nn::Activation irm_act() const { return irm_act_; }

 private:
  AutoencoderSpec rf_, sos_;
  nn::Activation irm_act_;
  nn::ParamStore<float> params_;
};

// Picks f1 and g2 from the linked model and f4 from the IRM layer.
AutoSpeedModel assemble_autospeed(const LinkedModel& lae, const IrmLayer& irm);

// Baseline with the same f1 + dense + g2 stack, trained end to end.
struct EndeNet {
  AutoencoderSpec rf = AutoencoderSpec::desk_rf();
  AutoencoderSpec sos = AutoencoderSpec::desk_sos();
  nn::Activation link_act = nn::Activation::leaky(0.1);
  nn::ParamStore<float> params;  // rf.enc*, link.*, sos.dec*

  static EndeNet build(const AutoencoderSpec& rf, const AutoencoderSpec& sos, std::uint64_t seed);
  void validate() const;
};

// mse(y, y') in the scaled SoS domain.
template <class T>
Var<T> endenet_graph(nn::Graph<T>& g, const EndeNet& net, const nn::ParamStore<T>& p, const BasicTensor<T>& x,
                     const BasicTensor<T>& y);
double endenet_loss(const EndeNet& net, const Tensor& x, const Tensor& y);
Tensor endenet_infer(const EndeNet& net, const Tensor& x);

// Subset of a parameter store by name prefix.
nn::ParamStore<float> select_params(const nn::ParamStore<float>& p, const std::vector<std::string>& prefixes);

}  // namespace autospeed::models
