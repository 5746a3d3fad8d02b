// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit status is 0 only if all pass.
//
// AUTOSPEED_ACCEPT_DIR sets the work directory (default: a temp directory).
// Generated datasets in it are reused when their recipe matches; models are
// always retrained.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "autospeed/config.hpp"
#include "autospeed/dataset.hpp"
#include "autospeed/errors.hpp"
#include "autospeed/eval.hpp"
#include "autospeed/gradsuite.hpp"
#include "autospeed/io.hpp"
#include "autospeed/rng.hpp"
#include "autospeed/sim.hpp"
#include "autospeed/training.hpp"

#ifndef AUTOSPEED_CLI_PATH
#error "AUTOSPEED_CLI_PATH must point at the CLI binary"
#endif

namespace fs = std::filesystem;
using namespace autospeed;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::map<int, Outcome> results;

void note(const std::string& s) {
  std::cout << "    " << s << std::endl;
}

void run_criterion(int id, const std::string& name, const std::function<Outcome()>& fn) {
  std::cout << "... " << id << ". " << name << std::endl;
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  results[id] = o;
  char buf[64];
  std::snprintf(buf, sizeof buf, " [%.1f s]", seconds_since(t0));
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << ". " << name << ": " << o.detail << buf << std::endl;
}

std::string f(double v, const char* spec = "%.4g") {
  char b[64];
  std::snprintf(b, sizeof b, spec, v);
  return b;
}

// ---- 1. gradient suite ----

Outcome gradients() {
  const auto t0 = Clock::now();
  const auto entries = checks::gradient_suite(1, 1e-3);
  const double secs = seconds_since(t0);
  const double w = checks::worst(entries);
  std::string worst_name;
  std::size_t coords = 0;
  for (const auto& e : entries) {
    coords += e.result.coords_checked;
    if (e.result.max_rel_error == w) worst_name = e.name;
  }
  return {w < 1e-4 && secs < 60.0, std::to_string(entries.size()) + " checks, " + std::to_string(coords) +
                                      " coords, worst rel err " + f(w, "%.2e") + " (" + worst_name + ", limit 1e-4), " +
                                      f(secs, "%.1f") + " s (limit 60 s)"};
}

// ---- 2. conv/tconv adjointness ----

Outcome adjointness() {
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cin = 1 + rng.uniform_int(0, 3), cout = 1 + rng.uniform_int(0, 3);
    const std::size_t k = 1 + rng.uniform_int(0, 4);
    const std::size_t sh = 1 + rng.uniform_int(0, 2), sw = 1 + rng.uniform_int(0, 2);
    const bool same = rng.uniform() < 0.5;
    const std::size_t h = k + rng.uniform_int(0, 9), w = k + rng.uniform_int(0, 9);
    nn::ConvGeometry g{k, k, sh, sw, same ? nn::Padding::same : nn::Padding::valid};
    BasicTensor<double> wt(Shape{cout, cin, k, k});
    for (auto& v : wt.vec()) v = rng.uniform(-1, 1);
    nn::LayerParams<double> conv{nn::LayerKind::conv, wt, BasicTensor<double>(Shape{cout}), g};
    nn::LayerParams<double> tconv{nn::LayerKind::tconv, wt, BasicTensor<double>(Shape{cin}), g};
    BasicTensor<double> x(Shape{2, cin, h, w});
    for (auto& v : x.vec()) v = rng.uniform(-1, 1);
    const auto cx = nn::conv2d_forward(x, conv);
    BasicTensor<double> u(cx.shape());
    for (auto& v : u.vec()) v = rng.uniform(-1, 1);
    const auto tu = nn::tconv2d_forward(u, tconv, nn::HW{h, w});
    if (tu.shape() != x.shape()) return {false, "tconv output shape mismatch in trial " + std::to_string(trial)};
    long double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < cx.numel(); ++i) lhs += static_cast<long double>(cx.vec()[i]) * u.vec()[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += static_cast<long double>(x.vec()[i]) * tu.vec()[i];
    const double rel = static_cast<double>(std::fabs(lhs - rhs) / std::max(std::fabs(lhs), 1e-12L));
    worst = std::max(worst, rel);
  }
  return {worst < 1e-5, "100 random cases, worst rel err " + f(worst, "%.2e") + " (limit 1e-5)"};
}

// ---- 3. simulator physics ----

std::vector<double> channel_sum(const Tensor& rf) {
  std::vector<double> s(rf.dim(1), 0.0);
  for (std::size_t e = 0; e < rf.dim(0); ++e) {
    for (std::size_t k = 0; k < rf.dim(1); ++k) s[k] += rf.at(e, k);
  }
  return s;
}

std::vector<double> minus(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

std::size_t argmax_abs(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  return best;
}

double envelope_peak(const std::vector<double>& v, std::size_t half_window) {
  std::vector<double> e(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t lo = i >= half_window ? i - half_window : 0;
    const std::size_t hi = std::min(v.size() - 1, i + half_window);
    for (std::size_t k = lo; k <= hi; ++k) e[i] += v[k] * v[k];
  }
  const std::size_t m = argmax_abs(e);
  if (m == 0 || m + 1 >= e.size()) return static_cast<double>(m);
  const double a = e[m - 1], b = e[m], c = e[m + 1];
  const double den = a - 2 * b + c;
  return static_cast<double>(m) + (den != 0.0 ? 0.5 * (a - c) / den : 0.0);
}

void scale_density_below(sim::MediumMap& m, std::size_t row, float factor) {
  for (std::size_t i = row; i < m.nz; ++i) {
    for (std::size_t j = 0; j < m.nx; ++j) m.rho(i, j) *= factor;
  }
}

// Plane pulse against a density step in a closed lossless box; the reflected
// to incident amplitude ratio at a probe row above the interface.
double plane_wave_reflection(float rho2) {
  using namespace sim;
  const double dx = 5e-5, c = 1500.0, dt = 0.4 * dx / c;
  const std::size_t nz = 400, nx = 801, mid = nx / 2, iface = 250, src = 150, probe = 200;
  auto m = MediumMap::homogeneous(nz, nx, dx, static_cast<float>(c), 1000.0f);
  for (std::size_t i = iface; i < nz; ++i) {
    for (std::size_t j = 0; j < nx; ++j) m.rho(i, j) = rho2;
  }
  SimOptions o;
  o.layer.cells = 0;
  o.layer.top = o.layer.bottom = o.layer.left = o.layer.right = false;
  const auto fm = FdtdMedium::build(m, dt, o.layer, false, 5e6);
  FdtdState s(fm);
  const double sig = 4.0, z1 = 1000.0 * c;
  for (std::size_t i = 0; i < nz; ++i) {
    const double pz = std::exp(-std::pow(double(i) + 0.5 - src, 2) / (2 * sig * sig));
    const double shift = 0.5 * c * dt / dx;
    const double vzv = std::exp(-std::pow(double(i) - src + shift, 2) / (2 * sig * sig)) / z1;
    for (std::size_t j = 0; j < nx; ++j) {
      s.pressure(i, j) = static_cast<float>(pz);
      s.vz[(i + FdtdState::ghost) * (nx + 2 * FdtdState::ghost) + j + FdtdState::ghost] = static_cast<float>(vzv);
    }
  }
  std::vector<double> trace;
  for (int n = 0; n < 520; ++n) {
    step_fdtd(s, fm);
    trace.push_back(s.pressure(probe, mid));
  }
  const std::size_t split = static_cast<std::size_t>((probe - src + (iface - probe)) * dx / (c * dt));
  double inc = 0.0, refl = 0.0;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    double& slot = k < split ? inc : refl;
    if (std::abs(trace[k]) > std::abs(slot)) slot = trace[k];
  }
  return refl / inc;
}

Outcome physics() {
  using namespace sim;
  const auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream d;

  // Flat reflector echo time.
  ProbeSpec probe;
  probe.samples = 1024;
  SimOptions o;
  const double pulse_width = probe.sampling_freq * o.pulse.cycles / probe.center_freq;
  const std::size_t row = 300;
  d << "echo offset (samples, limit " << f(pulse_width, "%.1f") << "):";
  for (float c : {1400.0f, 1500.0f, 1600.0f}) {
    auto m = MediumMap::homogeneous(360, 384, 5e-5, c, 1020.0f);
    const auto g = make_sim_grid(m.dx, c, probe, o);
    const auto base = channel_sum(simulate_raw(m, probe, g, o));
    scale_density_below(m, row, 3.0f);
    const auto tr = channel_sum(simulate_raw(m, probe, g, o));
    const double expect = 2.0 * (static_cast<double>(row) - 0.5) * m.dx / c * probe.sampling_freq;
    const double err = std::abs(envelope_peak(minus(tr, base), 4) - expect);
    ok = ok && err <= pulse_width;
    d << " c=" << c << ":" << f(err, "%.2f");
  }

  // Interface reflection coefficient.
  d << "; R rel err (limit 5%):";
  for (float rho2 : {2000.0f, 500.0f, 3000.0f}) {
    const double z1 = 1000.0 * 1500.0, z2 = rho2 * 1500.0;
    const double expect = (z2 - z1) / (z2 + z1);
    const double rel = std::abs(plane_wave_reflection(rho2) / expect - 1.0);
    ok = ok && rel <= 0.05;
    d << " " << f(100 * rel, "%.2f") << "%";
  }

  // Domain edge echoes against a mid-field reflector.
  ProbeSpec dp;
  auto m = MediumMap::homogeneous(192, 384, 5e-5, 1500.0f, 1020.0f);
  const auto g = make_sim_grid(m.dx, 1500.0, dp, o);
  const auto homo = simulate_raw(m, dp, g, o);
  const std::size_t ext = 260;
  auto big = MediumMap::homogeneous(m.nz + 2 * ext, m.nx + 2 * ext, m.dx, 1500.0f, 1020.0f);
  auto ob = o;
  ob.probe_row = ext;
  const auto edge = minus(channel_sum(homo), channel_sum(simulate_raw(big, dp, g, ob)));
  auto mr = m;
  scale_density_below(mr, 96, 2.0f);
  const auto echo = minus(channel_sum(simulate_raw(mr, dp, g, o)), channel_sum(homo));
  const double db = 20.0 * std::log10(std::abs(edge[argmax_abs(edge)]) / std::abs(echo[argmax_abs(echo)]));
  ok = ok && db <= -30.0;
  d << "; edge echo " << f(db, "%.1f") << " dB (limit -30)";

  const double secs = seconds_since(t0);
  ok = ok && secs < 120.0;
  d << "; " << f(secs, "%.1f") << " s (limit 120 s)";
  return {ok, d.str()};
}

// ---- 9. metric oracles ----

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

Outcome metric_oracles() {
  Rng rng(909);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const Shape s{static_cast<std::size_t>(2 + rng.uniform_int(0, 30)), static_cast<std::size_t>(2 + rng.uniform_int(0, 30))};
    Tensor g(s), p(s), labels(s);
    for (auto& v : g.vec()) v = static_cast<float>(rng.uniform(1300, 1700));
    for (auto& v : p.vec()) v = static_cast<float>(rng.uniform(1250, 1750));
    long double se = 0, ae = 0, pe = 0;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const long double dd = static_cast<long double>(p[i]) - g[i];
      se += dd * dd;
      ae += std::fabs(dd);
      pe += std::fabs(dd) / g[i];
    }
    const auto n = static_cast<long double>(g.numel());
    worst = std::max({worst, rel(eval::rmse(p, g), static_cast<double>(std::sqrt(se / n))),
                      rel(eval::mae(p, g), static_cast<double>(ae / n)), rel(eval::mape(p, g), static_cast<double>(100 * pe / n))});

    const std::size_t k = 1 + rng.uniform_int(0, 3);
    for (std::size_t i = 0; i < labels.numel(); ++i) labels[i] = static_cast<float>(i < k ? i : rng.uniform_int(0, k - 1));
    const auto r = eval::roi_stats(p, labels, k);
    for (std::size_t region = 0; region < k; ++region) {
      long double sum = 0, cnt = 0;
      for (std::size_t i = 0; i < p.numel(); ++i) {
        if (labels[i] == static_cast<float>(region)) {
          sum += p[i];
          cnt += 1;
        }
      }
      const long double mean = sum / cnt;
      long double ss = 0;
      for (std::size_t i = 0; i < p.numel(); ++i) {
        if (labels[i] == static_cast<float>(region)) ss += (p[i] - mean) * (p[i] - mean);
      }
      worst = std::max(worst, rel(r.regions[region].mean, static_cast<double>(mean)));
      // An SD of exactly zero (single-pixel region) must match exactly.
      const double sd = static_cast<double>(std::sqrt(ss / cnt));
      worst = std::max(worst, sd == 0.0 ? std::abs(r.regions[region].sd) : rel(r.regions[region].sd, sd));
    }
  }
  return {worst < 1e-6, "100 random cases, worst rel err " + f(worst, "%.2e") + " (limit 1e-6)"};
}

// ---- 8. CLI reproducibility ----

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = io::read_file(e.path());
  }
  return out;
}

int sh(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome reproducibility(const fs::path& work) {
  const fs::path root = work / "repro";
  fs::remove_all(root);
  fs::create_directories(root);
  io::write_json(root / "small.json", {{"lae", {{"epochs", 2}}},
                                       {"irm", {{"epochs", 2}}},
                                       {"endenet", {{"epochs", 2}}},
                                       {"data", {{"stability_frames", 2}}}});
  const std::string cli = AUTOSPEED_CLI_PATH;
  const std::vector<std::string> steps = {
      "gen-data --n 6 --out {r}/data",
      "gen-data --n 3 --kind test --gain-from {r}/data --out {r}/test",
      "train-lae --data {r}/data --out {r}/lae",
      "train-irm --data {r}/data --lae {r}/lae --out {r}/irm",
      "train-endenet --data {r}/data --out {r}/endenet",
      "assemble --lae {r}/lae --irm {r}/irm --out {r}/model",
      "infer --model {r}/model --input {r}/test/samples/000000.rf.ustt --out {r}/infer",
      "eval --model {r}/model --model {r}/endenet --data {r}/test --baseline {r}/data --detect {r}/test --out {r}/eval",
      "stability --model {r}/model --model {r}/endenet --data {r}/data --frames 2 --out {r}/stability",
      "gradcheck --out {r}/gradcheck",
      "multi-run --k 2 --data {r}/data --test {r}/test --out {r}/multi",
  };
  for (const char* run : {"a", "b"}) {
    const auto r = (root / run).string();
    for (auto step : steps) {
      for (auto pos = step.find("{r}"); pos != std::string::npos; pos = step.find("{r}")) step.replace(pos, 3, r);
      const std::string cmd = "'" + cli + "' --config '" + (root / "small.json").string() + "' --seed 11 --deterministic " +
                              step + " > '" + r + ".log' 2>&1";
      fs::create_directories(r);
      if (const int rc = sh(cmd); rc != 0) {
        return {false, "'" + step.substr(0, step.find(' ')) + "' exited " + std::to_string(rc) + " (log " + r + ".log)"};
      }
    }
  }
  const auto a = tree_bytes(root / "a"), b = tree_bytes(root / "b");
  std::size_t differ = 0;
  std::string first;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    if (it == b.end() || it->second != v) {
      if (!differ++) first = k;
    }
  }
  if (a.size() != b.size() && !differ) {
    differ = 1;
    first = "(file sets differ)";
  }
  return {differ == 0 && !a.empty(), std::to_string(steps.size()) + " commands run twice, " + std::to_string(a.size()) +
                                         " files compared, " + std::to_string(differ) + " differ" +
                                         (differ ? " (first: " + first + ")" : "")};
}

// ---- desk pipeline shared by 4-7 ----

data::Dataset ensure_dataset(const data::DatasetSpec& spec, const fs::path& dir, const std::string& what) {
  if (fs::exists(dir / "manifest.json")) {
    try {
      auto ds = data::load_dataset(dir);
      if (ds.manifest.at("config_hash").get<std::string>() == io::json_hash(spec.config_json())) {
        note("reusing " + what + " dataset at " + dir.string());
        return ds;
      }
    } catch (const std::exception&) {
    }
    fs::remove_all(dir);
  }
  const auto t0 = Clock::now();
  data::gen_dataset(spec, dir);
  note("generated " + what + " dataset (" + std::to_string(spec.n) + " samples) in " + f(seconds_since(t0), "%.0f") + " s");
  return data::load_dataset(dir);
}

std::vector<std::size_t> all_of(const data::Dataset& ds) {
  std::vector<std::size_t> v(ds.samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

struct Desk {
  ExperimentConfig cfg;
  std::optional<data::Dataset> train, test;
  std::optional<models::LinkedModel> lae;
  std::optional<models::IrmLayer> irm;
  std::optional<models::AutoSpeedModel> autospeed;
  std::optional<models::EndeNet> endenet;
};

Outcome desk_end_to_end(Desk& d, const fs::path& work) {
  const auto t0 = Clock::now();
  auto& cfg = d.cfg;
  d.train = ensure_dataset(cfg.train_set(), work / "desk_train", "training");
  d.test = ensure_dataset(cfg.test_set(d.train->gain), work / "desk_test", "test");
  note("split " + std::to_string(d.train->train.size()) + "/" + std::to_string(d.train->val.size()) + ", test " +
       std::to_string(d.test->samples.size()));

  train::TrainOptions o;
  o.on_epoch = [](const train::EpochRecord& r) {
    if (r.split == "val" && (r.epoch % 10 == 0 || r.epoch == 1)) {
      note("  epoch " + std::to_string(r.epoch) + " val loss " + f(r.loss, "%.5g"));
    }
  };
  auto t = Clock::now();
  auto lae = train::train_lae(*d.train, cfg, o);
  note("train-lae: best epoch " + std::to_string(lae.history.best_epoch) + ", " + f(seconds_since(t), "%.0f") + " s");
  t = Clock::now();
  auto irm = train::train_irm(*d.train, lae.model, cfg, o);
  note("train-irm: best epoch " + std::to_string(irm.history.best_epoch) + ", " + f(seconds_since(t), "%.0f") + " s");
  d.lae = lae.model;
  d.irm = irm.irm;
  d.autospeed = models::assemble_autospeed(*d.lae, *d.irm);
  t = Clock::now();
  auto ende = train::train_endenet(*d.train, cfg, o);
  note("train-endenet: best epoch " + std::to_string(ende.history.best_epoch) + ", " + f(seconds_since(t), "%.0f") + " s");
  d.endenet = ende.net;

  const auto idx = all_of(*d.test);
  std::vector<Tensor> gts;
  for (auto i : idx) gts.push_back(d.test->samples[i].sos);
  const auto& as = *d.autospeed;
  const auto& en = *d.endenet;
  const auto ra = eval::metric_report(eval::predict_samples([&](const Tensor& x) { return as.infer(x); }, *d.test, idx), gts);
  const auto re = eval::metric_report(
      eval::predict_samples([&](const Tensor& x) { return models::endenet_infer(en, x); }, *d.test, idx), gts);
  const auto rc = eval::metric_report(eval::constant_predictions(*d.train, d.train->train, *d.test, idx), gts);
  const auto line = [](const std::string& n, const eval::MetricReport& r) {
    return n + " MAPE " + f(r.mape_agg().mean, "%.3f") + "+-" + f(r.mape_agg().sd, "%.3f") + "% RMSE " +
           f(r.rmse_agg().mean, "%.2f") + " MAE " + f(r.mae_agg().mean, "%.2f") + " m/s";
  };
  note(line("autospeed", ra));
  note(line("endenet  ", re));
  note(line("constant ", rc));
  const double secs = seconds_since(t0);
  const double m = ra.mape_mean();
  const bool ok = m < 5.0 && m < rc.mape_mean() && secs < 3600.0;
  return {ok, "AutoSpeed test MAPE " + f(m, "%.3f") + "% (limit < 5%, constant baseline " + f(rc.mape_mean(), "%.3f") +
                  "%), En-De-Net " + f(re.mape_mean(), "%.3f") + "%, " + f(secs / 60, "%.1f") + " min (limit 60)"};
}

Outcome assembly(const Desk& d) {
  if (!d.autospeed) return {false, "no trained model (desk pipeline failed)"};
  const auto& m = *d.autospeed;
  Rng rng(404);
  std::size_t exact = 0;
  for (int i = 0; i < 10; ++i) {
    Tensor x(Shape{1 + static_cast<std::size_t>(i % 3), 1, d.cfg.rf.input[1], d.cfg.rf.input[2]});
    for (auto& v : x.vec()) v = static_cast<float>(rng.uniform(-1000, 1000));
    const auto manual = models::decode_sos(d.cfg.sos, d.lae->params, models::apply_irm(*d.irm, models::encode_rf(*d.lae, x)));
    const auto got = m.infer(x);
    if (got.shape() == manual.shape() && got.vec() == manual.vec()) ++exact;
  }
  const auto h0 = nn::params_hash(m.params());
  Tensor x(Shape{1, 1, d.cfg.rf.input[1], d.cfg.rf.input[2]});
  for (auto& v : x.vec()) v = static_cast<float>(rng.uniform(-1000, 1000));
  const auto first = m.infer(x);
  bool stable = true;
  for (int i = 0; i < 100; ++i) stable = stable && m.infer(x).vec() == first.vec();
  const bool same_hash = nn::params_hash(m.params()) == h0;
  return {exact == 10 && same_hash && stable, std::to_string(exact) + "/10 inputs bit-exact vs manual composition; " +
                                                  "parameter hash " + (same_hash ? "unchanged" : "CHANGED") +
                                                  " over 100 inferences" + (stable ? "" : "; outputs drifted")};
}

Outcome stability(const Desk& d) {
  if (!d.autospeed || !d.endenet) return {false, "no trained models (desk pipeline failed)"};
  const auto& as = *d.autospeed;
  const auto& en = *d.endenet;
  const std::vector<eval::NamedModel> models = {{"autospeed", [&](const Tensor& x) { return as.infer(x); }},
                                                {"endenet", [&](const Tensor& x) { return models::endenet_infer(en, x); }}};
  eval::StabilitySetup setup;
  setup.phantom_cfg = d.cfg.phantom;
  setup.phantom_cfg.count_min = setup.phantom_cfg.count_max = 1;
  setup.phantom_cfg.min_contrast = static_cast<float>(d.cfg.data.detect_min_contrast);
  setup.phantom = phantom::gen_ellipsoid_medium(derive_seed(d.cfg.seed, 0x5b, 0), setup.phantom_cfg);
  setup.probe = d.cfg.probe;
  setup.sim = d.cfg.sim;
  setup.gain = d.train->gain;
  const std::size_t frames = d.cfg.data.stability_frames;

  eval::FrameNoise quiet;
  quiet.snr_db = std::numeric_limits<double>::infinity();
  const auto r0 = eval::stability_report(models, setup, frames, quiet);
  bool zero = true;
  for (const auto& m : r0.models) zero = zero && m.inc_mean_sd == 0.0 && m.bg_mean_sd == 0.0;

  eval::FrameNoise noisy;
  noisy.snr_db = d.cfg.eval.snr_db;
  noisy.seed = derive_seed(d.cfg.seed, 0x5c, 0);
  const auto r1 = eval::stability_report(models, setup, frames, noisy);
  bool series = r1.models.size() == 2;
  std::ostringstream s;
  for (const auto& m : r1.models) {
    series = series && m.frames.size() == frames;
    for (const auto& row : m.frames) {
      series = series && std::isfinite(row.inc_mean) && std::isfinite(row.inc_sd) && std::isfinite(row.bg_mean) &&
               std::isfinite(row.bg_sd);
    }
    s << "; " << m.name << " cross-frame SD incl " << f(m.inc_mean_sd, "%.3f") << " bg " << f(m.bg_mean_sd, "%.3f");
  }
  return {zero && series, std::to_string(frames) + " frames; noiseless cross-frame SD " + (zero ? "exactly 0" : "NONZERO") +
                              "; noisy report " + (series ? "has" : "MISSING") + " 4 series per model" + s.str()};
}

Outcome detection(Desk& d, const fs::path& work) {
  if (!d.autospeed) return {false, "no trained model (desk pipeline failed)"};
  const auto det = ensure_dataset(d.cfg.detect_set(d.train->gain), work / "desk_detect", "detection");
  const auto idx = all_of(det);
  const auto& as = *d.autospeed;
  const auto& en = *d.endenet;
  const auto rate = [&](const eval::Predictor& p) {
    const auto preds = eval::predict_samples(p, det, idx);
    std::vector<eval::ContrastCase> cases;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& s = det.samples[idx[i]];
      for (const auto& c : eval::contrast_cases(preds[i], s.labels, s.background, s.inclusion_sos)) cases.push_back(c);
    }
    return eval::detection_rate(cases, d.cfg.eval.detect_threshold);
  };
  const double ra = rate([&](const Tensor& x) { return as.infer(x); });
  const double re = rate([&](const Tensor& x) { return models::endenet_infer(en, x); });
  return {ra >= 0.7, std::to_string(det.samples.size()) + " phantoms, AutoSpeed rate " + f(ra, "%.3f") +
                         " (limit >= 0.7 at " + f(d.cfg.eval.detect_threshold, "%.0f") + " m/s), En-De-Net " + f(re, "%.3f")};
}

}  // namespace

int main() {
  const char* env = std::getenv("AUTOSPEED_ACCEPT_DIR");
  const fs::path work = env && *env ? fs::path(env) : fs::temp_directory_path() / "autospeed_acceptance";
  fs::create_directories(work);
  std::cout << "work directory: " << work << std::endl;

  run_criterion(1, "gradient suite", gradients);
  run_criterion(2, "conv/tconv adjointness", adjointness);
  run_criterion(3, "simulator physics", physics);
  run_criterion(9, "metric oracles", metric_oracles);
  run_criterion(8, "reproducibility", [&] { return reproducibility(work); });

  Desk desk;
  run_criterion(5, "desk-scale end-to-end", [&] { return desk_end_to_end(desk, work); });
  run_criterion(4, "AutoSpeed assembly", [&] { return assembly(desk); });
  run_criterion(6, "stability protocol", [&] { return stability(desk); });
  run_criterion(7, "detection", [&] { return detection(desk, work); });

  std::size_t passed = 0;
  std::cout << "\nsummary:\n";
  for (const auto& [id, o] : results) {
    passed += o.pass;
    std::cout << "  " << id << ": " << (o.pass ? "PASS" : "FAIL") << '\n';
  }
  std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
  return passed == results.size() ? 0 : 1;
}
