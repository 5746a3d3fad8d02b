#include "autospeed/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "autospeed/errors.hpp"
#include "autospeed/rng.hpp"

namespace autospeed::train {

using models::AutoencoderSpec;
using nn::Graph;
using nn::ParamStore;

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;

// Running sums over a pass. Each batch loss is a mean over its elements, so
// weighting by batch size gives the mean over the whole pass.
struct Accum {
  std::size_t samples = 0;
  double loss = 0, rf = 0, sos = 0, latent = 0;
  double x_sq = 0, x_abs = 0, y_sq = 0, y_abs = 0, y_pct = 0, l_sq = 0, l_abs = 0;
  std::size_t x_n = 0, y_n = 0, l_n = 0;

  void add_loss(double v, std::size_t b) { loss += v * static_cast<double>(b); }
};

// Raw-unit error sums between two scaled tensors.
void add_errors(const Tensor& rec, const Tensor& ref, double scale, double shift, double& sq, double& ab,
                std::size_t& n, double* pct = nullptr) {
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    const double d = (static_cast<double>(rec[i]) - ref[i]) / scale;
    sq += d * d;
    ab += std::abs(d);
    if (pct) *pct += std::abs(d) / (static_cast<double>(ref[i]) / scale + shift);
  }
  n += ref.numel();
}

EpochRecord finish(const Accum& a, std::size_t epoch, const std::string& split) {
  EpochRecord r;
  r.epoch = epoch;
  r.split = split;
  const double n = static_cast<double>(std::max<std::size_t>(a.samples, 1));
  r.loss = a.loss / n;
  if (a.x_n) {
    r.rf_term = a.rf / n;
    r.sos_term = a.sos / n;
    r.latent_term = a.latent / n;
    r.x_rmse = std::sqrt(a.x_sq / static_cast<double>(a.x_n));
    r.x_mae = a.x_abs / static_cast<double>(a.x_n);
  }
  if (a.y_n) {
    r.y_rmse = std::sqrt(a.y_sq / static_cast<double>(a.y_n));
    r.y_mae = a.y_abs / static_cast<double>(a.y_n);
    r.y_mape = 100.0 * a.y_pct / static_cast<double>(a.y_n);
  }
  if (a.l_n) {
    r.latent_rmse = std::sqrt(a.l_sq / static_cast<double>(a.l_n));
    r.latent_mae = a.l_abs / static_cast<double>(a.l_n);
  }
  return r;
}

std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& idx, std::size_t b) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < idx.size(); i += b) {
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), i + b)));
  }
  return out;
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> idx, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

Tensor stack(const std::vector<const Tensor*>& items) {
  if (items.empty()) throw ValidationError("cannot stack an empty batch");
  const auto& s0 = items.front()->shape();
  Shape shape{items.size(), 1};
  shape.insert(shape.end(), s0.begin(), s0.end());
  Tensor out(shape);
  auto it = out.vec().begin();
  for (const auto* t : items) {
    require_same_shape(t->shape(), s0, "batch item");
    it = std::copy(t->vec().begin(), t->vec().end(), it);
  }
  return out;
}

// One pass over `idx`. `step` runs a batch, adds to the accumulator and
// returns gradients when asked.
using BatchFn = std::function<nn::Gradients<float>(const std::vector<std::size_t>&, bool, Accum&)>;

struct LoopSpec {
  std::string stage;
  const TrainConfig* tc = nullptr;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train_idx, val_idx;
  BatchFn batch;
  std::function<io::Checkpoint(const json& info)> checkpoint;
};

bool finite_record(const EpochRecord& r) { return std::isfinite(r.loss); }

void save_ckpt(const LoopSpec& L, const TrainOptions& opts, const std::string& name, const json& info) {
  if (opts.out.empty()) return;
  io::save_checkpoint(L.checkpoint(info), opts.out / name);
}

// Shared loop: shuffled minibatches, validation pass, best-val tracking,
// plateau schedule and divergence guard. Leaves the best parameters in
// `params`.
TrainHistory run_loop(const LoopSpec& L, ParamStore<float>& params, const TrainOptions& opts) {
  const auto& tc = *L.tc;
  tc.validate(L.stage);
  if (L.train_idx.empty()) throw ValidationError(L.stage + ": no training samples");
  const auto t0 = std::chrono::steady_clock::now();
  TrainHistory h;
  h.stage = L.stage;
  h.config_hash = opts.config_hash;

  auto opt = tc.optimizer == "adam" ? nn::OptimizerState::adam(tc.lr) : nn::OptimizerState::sgd(tc.lr, tc.momentum);
  nn::init_optimizer(opt, params);
  // Without a validation split, select on the training loss.
  const auto& sel_idx = L.val_idx.empty() ? L.train_idx : L.val_idx;

  ParamStore<float> best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  auto diverged = [&](std::size_t epoch, const std::string& where) {
    h.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string msg = L.stage + ": loss became non-finite in epoch " + std::to_string(epoch) + " (" + where + ")";
    if (h.best_epoch > 0 && !opts.out.empty()) {
      msg += "; last good checkpoint from epoch " + std::to_string(h.best_epoch) + " kept at " +
             (opts.out / "best").string();
    }
    params = best;
    throw DivergenceError(msg);
  };

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    Accum tr;
    const auto order = shuffled(L.train_idx, derive_seed(L.seed, kShuffleStream, epoch));
    for (const auto& b : batches(order, tc.batch_size)) {
      const std::size_t before = tr.samples;
      const double loss_before = tr.loss;
      auto grads = L.batch(b, true, tr);
      if (!std::isfinite((tr.loss - loss_before) / static_cast<double>(tr.samples - before))) {
        diverged(epoch, "training batch");
      }
      nn::optimizer_step(params, grads, opt);
    }
    auto tr_rec = finish(tr, epoch, "train");
    tr_rec.lr = opt.lr;

    Accum va;
    for (const auto& b : batches(sel_idx, tc.batch_size)) L.batch(b, false, va);
    auto va_rec = finish(va, epoch, "val");
    va_rec.lr = opt.lr;
    h.rows.push_back(tr_rec);
    h.rows.push_back(va_rec);
    if (opts.on_epoch) {
      opts.on_epoch(tr_rec);
      opts.on_epoch(va_rec);
    }
    if (!finite_record(va_rec)) diverged(epoch, "validation");

    if (va_rec.loss < best_loss) {
      best_loss = va_rec.loss;
      best = params;
      h.best_epoch = epoch;
      h.best_val_loss = best_loss;
      since_best = 0;
      save_ckpt(L, opts, "best", {{"epoch", epoch}, {"val_loss", best_loss}});
    } else if (tc.plateau_patience > 0 && ++since_best >= tc.plateau_patience) {
      opt.lr *= tc.plateau_factor;
      since_best = 0;
    }
    if (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu", epoch);
      save_ckpt(L, opts, name, {{"epoch", epoch}, {"val_loss", va_rec.loss}});
    }
  }
  params = best;
  h.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return h;
}

void lae_batch_stats(const Graph<float>& g, const models::LaeGraph<float>& l, const models::LinkedModel& m,
                     std::size_t b, Accum& a) {
  a.samples += b;
  const auto bd = static_cast<double>(b);
  a.loss += g.value(l.total).item() * bd;
  a.rf += g.value(l.rf).item() * bd;
  a.sos += g.value(l.sos).item() * bd;
  a.latent += g.value(l.latent).item() * bd;
  add_errors(g.value(l.x_rec), g.value(l.x), m.rf.scale, m.rf.shift, a.x_sq, a.x_abs, a.x_n);
  add_errors(g.value(l.y_rec), g.value(l.y), m.sos.scale, m.sos.shift, a.y_sq, a.y_abs, a.y_n, &a.y_pct);
  add_errors(g.value(l.m_link), g.value(l.n), 1.0, 0.0, a.l_sq, a.l_abs, a.l_n);
}

// Loss plus raw-unit map metrics for one En-De-Net batch.
void endenet_eval_batch(const models::EndeNet& net, const data::Dataset& ds, const std::vector<std::size_t>& b,
                        Accum& a) {
  Graph<float> g;
  const auto x = stack_rf(ds, b);
  const auto y = stack_sos(ds, b);
  const auto loss = models::endenet_graph(g, net, net.params, x, y);
  a.samples += b.size();
  a.add_loss(g.value(loss).item(), b.size());
  const auto pred = models::endenet_infer(net, x);
  add_errors(pred, y, 1.0, 0.0, a.y_sq, a.y_abs, a.y_n);
  for (std::size_t i = 0; i < y.numel(); ++i) a.y_pct += std::abs((static_cast<double>(pred[i]) - y[i]) / y[i]);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

json topo_pair(const AutoencoderSpec& rf, const AutoencoderSpec& sos, nn::Activation act) {
  return {{"rf", topology_json(rf)},
          {"sos", topology_json(sos)},
          {"link_activation", nn::to_string(act.kind)},
          {"link_alpha", act.alpha}};
}

nn::Activation act_from(const json& t) {
  try {
    return {nn::act_kind_from_string(t.at("link_activation").get<std::string>()), t.at("link_alpha").get<double>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint topology: ") + e.what());
  }
}

void expect_stage(const io::Checkpoint& c, const std::string& stage) {
  if (c.stage != stage) throw FormatError("expected a '" + stage + "' checkpoint, got '" + c.stage + "'");
}

const json& topo_at(const json& t, const char* key) {
  const auto it = t.find(key);
  if (it == t.end()) throw FormatError(std::string("checkpoint topology lacks '") + key + "'");
  return *it;
}

Shape shape_from(const json& t, const char* key) {
  try {
    return topo_at(t, key).get<Shape>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint topology: ") + e.what());
  }
}

}  // namespace

std::string TrainHistory::csv() const {
  std::ostringstream os;
  os << "epoch,split,loss,rf_term,sos_term,latent_term,x_rmse,x_mae,y_rmse,y_mae,y_mape,latent_rmse,latent_mae,lr\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.split << ',' << fmt(r.loss) << ',' << fmt(r.rf_term) << ',' << fmt(r.sos_term) << ','
       << fmt(r.latent_term) << ',' << fmt(r.x_rmse) << ',' << fmt(r.x_mae) << ',' << fmt(r.y_rmse) << ','
       << fmt(r.y_mae) << ',' << fmt(r.y_mape) << ',' << fmt(r.latent_rmse) << ',' << fmt(r.latent_mae) << ','
       << fmt(r.lr) << '\n';
  }
  return os.str();
}

json TrainHistory::summary() const {
  json j = {{"stage", stage}, {"epochs", rows.size() / 2}, {"best_epoch", best_epoch}, {"config_hash", config_hash}};
  j["best_val_loss"] = std::isfinite(best_val_loss) ? json(best_val_loss) : json(nullptr);
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->split == "val" && it->epoch == best_epoch) {
      json m;
      for (const auto& [k, v] : {std::pair{"loss", it->loss}, {"x_rmse", it->x_rmse}, {"x_mae", it->x_mae},
                                 {"y_rmse", it->y_rmse}, {"y_mae", it->y_mae}, {"y_mape", it->y_mape},
                                 {"latent_rmse", it->latent_rmse}, {"latent_mae", it->latent_mae}}) {
        if (std::isfinite(v)) m[k] = v;
      }
      j["best_val"] = m;
      break;
    }
  }
  return j;
}

Tensor stack_rf(const data::Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<const Tensor*> items;
  for (auto i : idx) items.push_back(&ds.samples.at(i).rf);
  return stack(items);
}

Tensor stack_sos(const data::Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<const Tensor*> items;
  for (auto i : idx) items.push_back(&ds.samples.at(i).sos);
  return stack(items);
}

EpochRecord evaluate_lae(const models::LinkedModel& model, const data::Dataset& ds,
                         const std::vector<std::size_t>& idx, std::size_t batch) {
  Accum a;
  for (const auto& b : batches(idx, std::max<std::size_t>(1, batch))) {
    Graph<float> g;
    const auto l = models::lae_graph(g, model, model.params, stack_rf(ds, b), stack_sos(ds, b));
    lae_batch_stats(g, l, model, b.size(), a);
  }
  return finish(a, 0, "eval");
}

EpochRecord evaluate_endenet(const models::EndeNet& net, const data::Dataset& ds,
                             const std::vector<std::size_t>& idx, std::size_t batch) {
  Accum a;
  for (const auto& b : batches(idx, std::max<std::size_t>(1, batch))) endenet_eval_batch(net, ds, b, a);
  return finish(a, 0, "eval");
}

LaeResult train_lae(const data::Dataset& ds, const ExperimentConfig& cfg, const TrainOptions& opts,
                    const models::LinkedModel* init) {
  const auto seed = cfg.stage_seed("lae");
  LaeResult r;
  if (init) {
    r.model = *init;
  } else {
    r.model = models::LinkedModel::build(cfg.rf, cfg.sos, derive_seed(seed, kInitStream, 0));
    r.model.link_act = cfg.link_act();
  }
  r.model.validate();
  auto& model = r.model;

  LoopSpec L;
  L.stage = "lae";
  L.tc = &cfg.lae;
  L.seed = seed;
  L.train_idx = ds.train;
  L.val_idx = ds.val;
  L.batch = [&](const std::vector<std::size_t>& b, bool grads, Accum& a) -> nn::Gradients<float> {
    Graph<float> g;
    const auto l = models::lae_graph(g, model, model.params, stack_rf(ds, b), stack_sos(ds, b));
    lae_batch_stats(g, l, model, b.size(), a);
    return grads ? g.backward(l.total) : nn::Gradients<float>{};
  };
  L.checkpoint = [&](const json& info) { return to_checkpoint(model, opts.config_hash, info); };
  r.history = run_loop(L, model.params, opts);
  return r;
}

LatentSet compute_latents(const models::LinkedModel& lae, const data::Dataset& ds, std::size_t batch) {
  LatentSet s;
  std::vector<std::size_t> all(ds.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (const auto& b : batches(all, std::max<std::size_t>(1, batch))) {
    const auto m = models::encode_rf(lae, stack_rf(ds, b));
    const auto n = models::encode_sos(lae, stack_sos(ds, b));
    const std::size_t pm = m.numel() / b.size(), pn = n.numel() / b.size();
    for (std::size_t k = 0; k < b.size(); ++k) {
      s.m.emplace_back(Shape{pm}, std::vector<float>(m.vec().begin() + static_cast<std::ptrdiff_t>(k * pm),
                                                     m.vec().begin() + static_cast<std::ptrdiff_t>((k + 1) * pm)));
      s.n.emplace_back(Shape{pn}, std::vector<float>(n.vec().begin() + static_cast<std::ptrdiff_t>(k * pn),
                                                     n.vec().begin() + static_cast<std::ptrdiff_t>((k + 1) * pn)));
    }
  }
  return s;
}

IrmResult train_irm_latents(models::IrmLayer init, const LatentSet& lat, const std::vector<std::size_t>& train_idx,
                            const std::vector<std::size_t>& val_idx, const TrainConfig& tc, std::uint64_t seed,
                            const TrainOptions& opts) {
  init.validate();
  IrmResult r;
  r.irm = std::move(init);
  auto& irm = r.irm;
  const auto in = shape_numel(irm.in_latent), out = shape_numel(irm.out_latent);
  for (std::size_t i = 0; i < lat.m.size(); ++i) {
    if (lat.m[i].numel() != in || lat.n[i].numel() != out) {
      throw DimensionError("irm: latent pair " + std::to_string(i) + " has " + std::to_string(lat.m[i].numel()) +
                           " -> " + std::to_string(lat.n[i].numel()) + " values, layer maps " + std::to_string(in) +
                           " -> " + std::to_string(out));
    }
  }
  LoopSpec L;
  L.stage = "irm";
  L.tc = &tc;
  L.seed = seed;
  L.train_idx = train_idx;
  L.val_idx = val_idx;
  L.batch = [&](const std::vector<std::size_t>& b, bool grads, Accum& a) -> nn::Gradients<float> {
    Tensor m(Shape{b.size(), in}), n(Shape{b.size(), out});
    for (std::size_t k = 0; k < b.size(); ++k) {
      std::copy(lat.m[b[k]].vec().begin(), lat.m[b[k]].vec().end(), m.vec().begin() + static_cast<std::ptrdiff_t>(k * in));
      std::copy(lat.n[b[k]].vec().begin(), lat.n[b[k]].vec().end(), n.vec().begin() + static_cast<std::ptrdiff_t>(k * out));
    }
    Graph<float> g;
    const auto loss = models::irm_graph(g, irm, irm.params, m, n);
    a.samples += b.size();
    a.add_loss(g.value(loss).item(), b.size());
    if (!grads) add_errors(models::apply_irm(irm, m), n, 1.0, 0.0, a.l_sq, a.l_abs, a.l_n);
    return grads ? g.backward(loss) : nn::Gradients<float>{};
  };
  L.checkpoint = [&](const json& info) { return to_checkpoint(irm, opts.config_hash, info); };
  r.history = run_loop(L, irm.params, opts);
  return r;
}

IrmResult train_irm(const data::Dataset& ds, const models::LinkedModel& lae, const ExperimentConfig& cfg,
                    const TrainOptions& opts) {
  lae.validate();
  const auto seed = cfg.stage_seed("irm");
  auto init = cfg.irm.warm_start
                  ? models::IrmLayer::from_link(lae)
                  : models::IrmLayer::build(lae.rf.derived_latent(), lae.sos.derived_latent(),
                                            derive_seed(seed, kInitStream, 0), lae.link_act);
  const auto lat = compute_latents(lae, ds, cfg.irm.batch_size);
  auto r = train_irm_latents(std::move(init), lat, ds.train, ds.val, cfg.irm, seed, opts);
  return r;
}

EndeNetResult train_endenet(const data::Dataset& ds, const ExperimentConfig& cfg, const TrainOptions& opts) {
  const auto seed = cfg.stage_seed("endenet");
  EndeNetResult r;
  r.net = models::EndeNet::build(cfg.rf, cfg.sos, derive_seed(seed, kInitStream, 0));
  r.net.link_act = cfg.link_act();
  auto& net = r.net;
  LoopSpec L;
  L.stage = "endenet";
  L.tc = &cfg.endenet;
  L.seed = seed;
  L.train_idx = ds.train;
  L.val_idx = ds.val;
  L.batch = [&](const std::vector<std::size_t>& b, bool grads, Accum& a) -> nn::Gradients<float> {
    if (!grads) {
      endenet_eval_batch(net, ds, b, a);
      return {};
    }
    Graph<float> g;
    const auto loss = models::endenet_graph(g, net, net.params, stack_rf(ds, b), stack_sos(ds, b));
    a.samples += b.size();
    a.add_loss(g.value(loss).item(), b.size());
    return grads ? g.backward(loss) : nn::Gradients<float>{};
  };
  L.checkpoint = [&](const json& info) { return to_checkpoint(net, opts.config_hash, info); };
  r.history = run_loop(L, net.params, opts);
  return r;
}

bool MultiRunReport::partial() const {
  return std::any_of(errors.begin(), errors.end(), [](const std::string& e) { return !e.empty(); });
}

json MultiRunReport::to_json() const {
  json runs_j = json::array();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    json r = {{"seed", seeds[i]}};
    if (!errors[i].empty()) {
      r["error"] = errors[i];
    } else {
      r["metrics"] = runs[i];
    }
    runs_j.push_back(r);
  }
  json st = json::object();
  for (const auto& [k, v] : stats) st[k] = {{"mean", v.first}, {"sd", v.second}};
  return {{"runs", runs_j}, {"stats", st}, {"partial", partial()}};
}

MultiRunReport multi_run(std::size_t k, std::uint64_t seed,
                         const std::function<std::map<std::string, double>(std::uint64_t)>& run) {
  if (k < 2) throw ConfigError("multi-run needs at least 2 runs");
  MultiRunReport r;
  for (std::size_t i = 0; i < k; ++i) {
    r.seeds.push_back(seed + i);
    try {
      r.runs.push_back(run(seed + i));
      r.errors.emplace_back();
    } catch (const std::exception& e) {
      r.runs.emplace_back();
      r.errors.emplace_back(e.what());
    }
  }
  std::map<std::string, std::vector<double>> cols;
  for (std::size_t i = 0; i < k; ++i) {
    if (!r.errors[i].empty()) continue;
    for (const auto& [name, v] : r.runs[i]) cols[name].push_back(v);
  }
  for (const auto& [name, v] : cols) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    r.stats[name] = {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
  }
  if (cols.empty()) throw RuntimeFailure("multi-run: every run failed; first error: " + r.errors.front());
  return r;
}

io::Checkpoint to_checkpoint(const models::LinkedModel& m, const std::string& config_hash, const json& info) {
  return {"lae", topo_pair(m.rf, m.sos, m.link_act), config_hash, info, m.params};
}

io::Checkpoint to_checkpoint(const models::IrmLayer& m, const std::string& config_hash, const json& info) {
  json t = {{"in_latent", m.in_latent},
            {"out_latent", m.out_latent},
            {"link_activation", nn::to_string(m.act.kind)},
            {"link_alpha", m.act.alpha}};
  return {"irm", t, config_hash, info, m.params};
}

io::Checkpoint to_checkpoint(const models::EndeNet& m, const std::string& config_hash, const json& info) {
  return {"endenet", topo_pair(m.rf, m.sos, m.link_act), config_hash, info, m.params};
}

io::Checkpoint to_checkpoint(const models::AutoSpeedModel& m, const std::string& config_hash, const json& info) {
  return {"autospeed", topo_pair(m.rf(), m.sos(), m.irm_act()), config_hash, info, m.params()};
}

models::LinkedModel linked_from_checkpoint(const io::Checkpoint& c) {
  expect_stage(c, "lae");
  models::LinkedModel m;
  m.rf = spec_from_topology(topo_at(c.topology, "rf"));
  m.sos = spec_from_topology(topo_at(c.topology, "sos"));
  m.link_act = act_from(c.topology);
  m.params = c.tensors;
  m.validate();
  return m;
}

models::IrmLayer irm_from_checkpoint(const io::Checkpoint& c) {
  expect_stage(c, "irm");
  models::IrmLayer l;
  l.in_latent = shape_from(c.topology, "in_latent");
  l.out_latent = shape_from(c.topology, "out_latent");
  l.act = act_from(c.topology);
  l.params = c.tensors;
  l.validate();
  return l;
}

models::EndeNet endenet_from_checkpoint(const io::Checkpoint& c) {
  expect_stage(c, "endenet");
  models::EndeNet e;
  e.rf = spec_from_topology(topo_at(c.topology, "rf"));
  e.sos = spec_from_topology(topo_at(c.topology, "sos"));
  e.link_act = act_from(c.topology);
  e.params = c.tensors;
  e.validate();
  return e;
}

models::AutoSpeedModel autospeed_from_checkpoint(const io::Checkpoint& c) {
  expect_stage(c, "autospeed");
  return models::AutoSpeedModel(spec_from_topology(topo_at(c.topology, "rf")), spec_from_topology(topo_at(c.topology, "sos")),
                                act_from(c.topology), c.tensors);
}

}  // namespace autospeed::train
