#include "autospeed/gradsuite.hpp"

#include <algorithm>

#include "autospeed/models.hpp"
#include "autospeed/rng.hpp"

namespace autospeed::checks {

namespace {

using nn::Activation;
using nn::ConvGeometry;
using nn::Graph;
using nn::Padding;
using DParams = nn::ParamStore<double>;
using DTensor = BasicTensor<double>;

DTensor rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  DTensor t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

models::AutoencoderSpec small_spec(const std::string& name, std::size_t h, std::size_t w, std::size_t stages) {
  models::AutoencoderSpec s;
  s.name = name;
  s.input = {1, h, w};
  for (std::size_t k = 0; k < stages; ++k) s.stages.push_back({k + 1 == stages ? std::size_t{2} : std::size_t{3}, 2, 2, 3});
  const std::size_t f = std::size_t{1} << stages;
  s.latent = {2, h / f, w / f};
  if (name == "sos") {
    s.scale = 1.0 / 400.0;
    s.shift = 1300.0;
  } else {
    s.scale = 1.0 / 1024.0;
  }
  return s;
}

}  // namespace

std::vector<GradSuiteEntry> gradient_suite(std::uint64_t seed, double eps) {
  std::vector<GradSuiteEntry> out;
  Rng rng(seed);
  nn::GradCheckOptions all;
  all.eps = eps;
  all.seed = seed;
  nn::GradCheckOptions sampled = all;
  sampled.max_coords_per_tensor = 16;

  const std::pair<std::string, Activation> acts[] = {
      {"leaky_relu", Activation::leaky(0.1)}, {"relu", Activation::relu()}, {"linear", Activation::linear()}};

  struct ConvCase {
    std::string tag;
    ConvGeometry geom;
  };
  const ConvCase convs[] = {{"same_s1", {3, 3, 1, 1, Padding::same}},
                            {"same_s2", {3, 3, 2, 2, Padding::same}},
                            {"valid_s2x1", {3, 3, 2, 1, Padding::valid}}};

  for (const auto& [aname, act] : acts) {
    for (const auto& c : convs) {
      DParams p{{"w", rand_t({3, 2, 3, 3}, rng)}, {"b", rand_t({3}, rng)}, {"x", rand_t({2, 2, 7, 6}, rng)}};
      Graph<double> probe;
      const auto shape =
          probe.value(probe.conv2d(probe.input(p.at("x")), probe.input(p.at("w")), probe.input(p.at("b")), c.geom))
              .shape();
      const auto target = rand_t(shape, rng);
      out.push_back({"conv2d_" + c.tag + "_" + aname,
                     nn::grad_check(p, [&](Graph<double>& g, const DParams& ps) {
                       auto y = g.conv2d(g.param("x", ps.at("x")), g.param("w", ps.at("w")),
                                         g.param("b", ps.at("b")), c.geom);
                       return g.mse(g.act(y, act), g.input(target));
                     }, all)});

      DParams q{{"w", rand_t({3, 2, 3, 3}, rng)}, {"b", rand_t({2}, rng)}, {"x", rand_t({2, 3, 4, 3}, rng)}};
      Graph<double> probe2;
      const auto tshape =
          probe2.value(probe2.tconv2d(probe2.input(q.at("x")), probe2.input(q.at("w")), probe2.input(q.at("b")), c.geom))
              .shape();
      const auto ttarget = rand_t(tshape, rng);
      out.push_back({"tconv2d_" + c.tag + "_" + aname,
                     nn::grad_check(q, [&](Graph<double>& g, const DParams& ps) {
                       auto y = g.tconv2d(g.param("x", ps.at("x")), g.param("w", ps.at("w")),
                                          g.param("b", ps.at("b")), c.geom);
                       return g.mse(g.act(y, act), g.input(ttarget));
                     }, all)});
    }

    DParams d{{"w", rand_t({12, 5}, rng)}, {"b", rand_t({5}, rng)}, {"x", rand_t({3, 2, 3, 2}, rng)}};
    const auto dtarget = rand_t({3, 5}, rng);
    out.push_back({"dense_reshape_affine_" + aname, nn::grad_check(d, [&](Graph<double>& g, const DParams& ps) {
                     auto x = g.affine(g.reshape(g.param("x", ps.at("x")), {3, 12}), 0.7, -0.2);
                     auto y = g.dense(x, g.param("w", ps.at("w")), g.param("b", ps.at("b")));
                     return g.mse(g.act(y, act), g.input(dtarget));
                   }, all)});
  }

  DParams s{{"a", rand_t({2, 3, 4}, rng)}, {"b", rand_t({2, 3, 4}, rng)}};
  out.push_back({"add_mse", nn::grad_check(s, [&](Graph<double>& g, const DParams& ps) {
                   auto a = g.param("a", ps.at("a"));
                   return g.add(g.mse(a, g.param("b", ps.at("b"))), g.mse(g.add(a, a), g.input(DTensor(Shape{2, 3, 4}))));
                 }, all)});

  // Training objectives on small linked models.
  for (std::size_t stages : {1, 2}) {
    const auto rf = small_spec("rf", 8, 16, stages);
    const auto sos = small_spec("sos", 8, 8, stages);
    const auto tag = std::to_string(stages) + "stage";
    const auto x = rand_t({2, 1, 8, 16}, rng, -1024, 1024);
    const auto y = rand_t({2, 1, 8, 8}, rng, 1300, 1700);

    const auto lae = models::LinkedModel::build(rf, sos, derive_seed(seed, 1, stages));
    out.push_back({"lae_objective_" + tag,
                   nn::grad_check(nn::cast_params<double>(lae.params), [&](Graph<double>& g, const DParams& ps) {
                     return models::lae_graph(g, lae, ps, x, y).total;
                   }, sampled)});

    const auto irm = models::IrmLayer::from_link(lae);
    const auto m = models::encode_rf(lae, x.cast<float>()).cast<double>();
    const auto n = models::encode_sos(lae, y.cast<float>()).cast<double>();
    out.push_back({"irm_objective_" + tag,
                   nn::grad_check(nn::cast_params<double>(irm.params), [&](Graph<double>& g, const DParams& ps) {
                     return models::irm_graph(g, irm, ps, m, n);
                   }, sampled)});

    const auto net = models::EndeNet::build(rf, sos, derive_seed(seed, 2, stages));
    out.push_back({"endenet_objective_" + tag,
                   nn::grad_check(nn::cast_params<double>(net.params), [&](Graph<double>& g, const DParams& ps) {
                     return models::endenet_graph(g, net, ps, x, y);
                   }, sampled)});
  }
  return out;
}

double worst(const std::vector<GradSuiteEntry>& entries) {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.result.max_rel_error);
  return w;
}

}  // namespace autospeed::checks
