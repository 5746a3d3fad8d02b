#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "autospeed/config.hpp"
#include "autospeed/dataset.hpp"
#include "autospeed/errors.hpp"
#include "autospeed/eval.hpp"
#include "autospeed/gradsuite.hpp"
#include "autospeed/io.hpp"
#include "autospeed/rng.hpp"
#include "autospeed/training.hpp"

namespace fs = std::filesystem;
using namespace autospeed;
using json = nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
  std::optional<std::size_t> threads;
};

struct Ctx {
  ExperimentConfig cfg;
  fs::path out;
  std::string config_hash;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  void write_snapshot() const {
    fs::create_directories(out);
    io::write_json(out / "resolved_config.json", to_json_config(cfg));
  }

  // Wall-clock never goes into files compared under the determinism flag.
  void write_timing(json extra = json::object()) const {
    if (cfg.deterministic) return;
    extra["wall_seconds"] = elapsed();
    io::write_json(out / "timing.json", extra);
  }
};

Ctx make_ctx(const Globals& g, bool need_out) {
  Ctx c;
  if (!g.config.empty()) c.cfg = load_config(g.config);
  if (g.seed) c.cfg.seed = *g.seed;
  if (g.deterministic) c.cfg.deterministic = true;
  if (g.threads) c.cfg.threads = *g.threads;
  c.cfg.validate();
  if (need_out && g.out.empty()) throw UsageError("--out is required");
  c.out = g.out;
  c.config_hash = io::json_hash(to_json_config(c.cfg));
  return c;
}

fs::path checkpoint_dir(const fs::path& p) {
  if (fs::exists(p / "manifest.json")) return p;
  if (fs::exists(p / "best" / "manifest.json")) return p / "best";
  throw IoError("no checkpoint at " + p.string());
}

std::vector<std::size_t> all_indices(const data::Dataset& ds) {
  std::vector<std::size_t> v(ds.samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

std::vector<Tensor> ground_truth(const data::Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<Tensor> v;
  for (auto i : idx) v.push_back(ds.samples[i].sos);
  return v;
}

eval::NamedModel load_model(const fs::path& path) {
  const auto ck = io::load_checkpoint(checkpoint_dir(path));
  if (ck.stage == "autospeed") {
    auto m = std::make_shared<models::AutoSpeedModel>(train::autospeed_from_checkpoint(ck));
    return {"autospeed", [m](const Tensor& x) { return m->infer(x); }};
  }
  if (ck.stage == "endenet") {
    auto m = std::make_shared<models::EndeNet>(train::endenet_from_checkpoint(ck));
    return {"endenet", [m](const Tensor& x) { return models::endenet_infer(*m, x); }};
  }
  throw UsageError(path.string() + ": expected an autospeed or endenet checkpoint, got stage '" + ck.stage + "'");
}

std::vector<eval::NamedModel> load_models(const std::vector<std::string>& paths) {
  std::vector<eval::NamedModel> ms;
  std::map<std::string, int> seen;
  for (const auto& p : paths) {
    auto m = load_model(p);
    if (seen[m.name]++) m.name += "_" + std::to_string(seen[m.name] - 1);
    ms.push_back(std::move(m));
  }
  return ms;
}

train::TrainOptions train_options(const Ctx& c) {
  train::TrainOptions o;
  o.out = c.out;
  o.config_hash = c.config_hash;
  o.on_epoch = [](const train::EpochRecord& r) {
    if (r.split != "val") return;
    std::printf("epoch %4zu  val loss %.6g  lr %.3g\n", r.epoch, r.loss, r.lr);
    std::fflush(stdout);
  };
  return o;
}

void write_history(const Ctx& c, const train::TrainHistory& h) {
  io::write_file(c.out / "history.csv", h.csv());
  io::write_json(c.out / "summary.json", h.summary());
  c.write_timing({{"stage", h.stage}});
  std::printf("best epoch %zu, val loss %.6g -> %s\n", h.best_epoch, h.best_val_loss, (c.out / "best").c_str());
}

// Accepts [C, S], [N, C, S] or [N, 1, C, S].
Tensor as_batch(const Tensor& t) {
  if (t.ndim() == 2) return t.reshaped({1, 1, t.dim(0), t.dim(1)});
  if (t.ndim() == 3) return t.reshaped({t.dim(0), 1, t.dim(1), t.dim(2)});
  if (t.ndim() == 4 && t.dim(1) == 1) return t;
  throw DimensionError("input frame has shape " + shape_str(t.shape()) + ", expected [C,S], [N,C,S] or [N,1,C,S]");
}

std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.9g", v);
  return b;
}

// ---- subcommands ----

int cmd_gen_data(const Globals& g, std::optional<std::size_t> n, std::optional<double> val_fraction,
                 const std::string& kind, const std::string& gain_from) {
  auto c = make_ctx(g, true);
  double gain = 0.0;
  if (!gain_from.empty()) gain = data::load_dataset(gain_from).gain;
  if (kind != "train" && gain <= 0.0) throw UsageError("gen-data --kind " + kind + " needs --gain-from <train dataset>");
  auto spec = kind == "train" ? c.cfg.train_set() : kind == "test" ? c.cfg.test_set(gain) : c.cfg.detect_set(gain);
  if (kind == "train") spec.gain = gain;
  if (n) spec.n = *n;
  if (val_fraction) spec.val_fraction = *val_fraction;
  const auto manifest = data::gen_dataset(spec, c.out);
  c.write_snapshot();
  c.write_timing({{"samples", spec.n}});
  std::printf("%zu samples (%s) -> %s\n", spec.n, kind.c_str(), c.out.c_str());
  return 0;
}

int cmd_train_lae(const Globals& g, const std::string& data_dir, const std::string& init) {
  auto c = make_ctx(g, true);
  const auto ds = data::load_dataset(data_dir);
  c.write_snapshot();
  std::optional<models::LinkedModel> start;
  if (!init.empty()) start = train::linked_from_checkpoint(io::load_checkpoint(checkpoint_dir(init)));
  const auto r = train::train_lae(ds, c.cfg, train_options(c), start ? &*start : nullptr);
  write_history(c, r.history);
  return 0;
}

int cmd_train_irm(const Globals& g, const std::string& data_dir, const std::string& lae_dir) {
  auto c = make_ctx(g, true);
  const auto ds = data::load_dataset(data_dir);
  const auto lae = train::linked_from_checkpoint(io::load_checkpoint(checkpoint_dir(lae_dir)));
  c.write_snapshot();
  const auto r = train::train_irm(ds, lae, c.cfg, train_options(c));
  write_history(c, r.history);
  return 0;
}

int cmd_train_endenet(const Globals& g, const std::string& data_dir) {
  auto c = make_ctx(g, true);
  const auto ds = data::load_dataset(data_dir);
  c.write_snapshot();
  const auto r = train::train_endenet(ds, c.cfg, train_options(c));
  write_history(c, r.history);
  return 0;
}

int cmd_assemble(const Globals& g, const std::string& lae_dir, const std::string& irm_dir) {
  auto c = make_ctx(g, true);
  const auto lae_ck = io::load_checkpoint(checkpoint_dir(lae_dir));
  const auto irm_ck = io::load_checkpoint(checkpoint_dir(irm_dir));
  const auto model = models::assemble_autospeed(train::linked_from_checkpoint(lae_ck), train::irm_from_checkpoint(irm_ck));
  json info = {{"lae_config_hash", lae_ck.config_hash}, {"irm_config_hash", irm_ck.config_hash}};
  io::save_checkpoint(train::to_checkpoint(model, c.config_hash, info), c.out);
  c.write_snapshot();
  std::printf("autospeed model (%zu tensors, hash %s) -> %s\n", model.params().size(),
              io::hex64(nn::params_hash(model.params())).c_str(), c.out.c_str());
  return 0;
}

int cmd_infer(const Globals& g, const std::string& model_dir, const std::string& input) {
  auto c = make_ctx(g, true);
  const auto model = load_model(model_dir);
  const auto x = as_batch(io::load_tensor(input));
  const auto y = model.predict(x);  // [N, 1, H, W]
  const std::size_t n = y.dim(0), h = y.dim(2), w = y.dim(3);
  fs::create_directories(c.out);
  if (n == 1) {
    const auto map = y.reshaped({h, w});
    io::save_tensor(map, c.out / "sos.ustt");
    io::export_pgm(map, c.out / "sos.pgm");
  } else {
    io::save_tensor(y.reshaped({n, h, w}), c.out / "sos.ustt");
    for (std::size_t i = 0; i < n; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "sos_%04zu.pgm", i);
      Tensor map(Shape{h, w}, std::vector<float>(y.vec().begin() + i * h * w, y.vec().begin() + (i + 1) * h * w));
      io::export_pgm(map, c.out / name);
    }
  }
  c.write_snapshot();
  std::printf("%s: %zu map(s) %zux%zu -> %s\n", model.name.c_str(), n, h, w, (c.out / "sos.ustt").c_str());
  return 0;
}

int cmd_eval(const Globals& g, const std::vector<std::string>& model_dirs, const std::string& data_dir,
             const std::string& baseline_dir, const std::string& detect_dir, std::optional<double> threshold) {
  auto c = make_ctx(g, true);
  if (model_dirs.empty() && baseline_dir.empty()) throw UsageError("eval needs at least one --model or --baseline");
  const double thr = threshold.value_or(c.cfg.eval.detect_threshold);
  const auto models = load_models(model_dirs);
  const auto test = data::load_dataset(data_dir);
  const auto idx = all_indices(test);
  const auto gts = ground_truth(test, idx);
  fs::create_directories(c.out);

  std::vector<std::string> names;
  std::vector<eval::MetricReport> reports;
  std::vector<std::vector<Tensor>> preds;
  for (const auto& m : models) {
    names.push_back(m.name);
    preds.push_back(eval::predict_samples(m.predict, test, idx));
  }
  if (!baseline_dir.empty()) {
    const auto tr = data::load_dataset(baseline_dir);
    names.push_back("constant_mean");
    preds.push_back(eval::constant_predictions(tr, tr.train, test, idx));
  }
  json summary = json::object();
  std::ostringstream per_sample, roi;
  per_sample << "model,sample,rmse,mae,mape\n";
  roi << "model,sample,region,pixels,mean,sd,gt,gt_within_2sd\n";
  for (std::size_t k = 0; k < names.size(); ++k) {
    reports.push_back(eval::metric_report(preds[k], gts));
    const auto& r = reports.back();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& s = test.samples[idx[i]];
      per_sample << names[k] << ',' << s.id << ',' << fmt(r.rmse[i]) << ',' << fmt(r.mae[i]) << ',' << fmt(r.mape[i])
                 << '\n';
      std::vector<double> gtv{s.background};
      for (float v : s.inclusion_sos) gtv.push_back(v);
      const auto rep = eval::roi_stats(preds[k][i], s.labels, gtv.size(), gtv);
      for (const auto& reg : rep.regions) {
        roi << names[k] << ',' << s.id << ',' << reg.label << ',' << reg.count << ',' << fmt(reg.mean) << ','
            << fmt(reg.sd) << ',' << fmt(reg.gt) << ',' << (reg.gt_within_2sd ? 1 : 0) << '\n';
      }
    }
    const auto a = r.rmse_agg(), b = r.mae_agg(), m = r.mape_agg();
    summary[names[k]] = {{"rmse", {a.mean, a.sd}}, {"mae", {b.mean, b.sd}}, {"mape", {m.mean, m.sd}}};
    std::printf("%-14s MAPE %.3f +- %.3f %%  RMSE %.2f  MAE %.2f m/s\n", names[k].c_str(), m.mean, m.sd, a.mean, b.mean);
    if (!preds[k].empty()) io::export_pgm(preds[k][0], c.out / (names[k] + "_sample0.pgm"));
  }
  if (!gts.empty()) io::export_pgm(gts[0], c.out / "gt_sample0.pgm");

  if (!detect_dir.empty()) {
    const auto det = data::load_dataset(detect_dir);
    const auto didx = all_indices(det);
    for (const auto& m : models) {
      const auto p = eval::predict_samples(m.predict, det, didx);
      std::vector<eval::ContrastCase> cases;
      for (std::size_t i = 0; i < didx.size(); ++i) {
        const auto& s = det.samples[didx[i]];
        for (const auto& cc : eval::contrast_cases(p[i], s.labels, s.background, s.inclusion_sos)) cases.push_back(cc);
      }
      const double rate = eval::detection_rate(cases, thr);
      summary[m.name]["detection_rate"] = rate;
      summary[m.name]["detection_cases"] = cases.size();
      std::printf("%-14s detection rate %.3f over %zu cases at %.1f m/s\n", m.name.c_str(), rate, cases.size(), thr);
    }
    summary["detection_threshold"] = thr;
  }
  eval::write_metrics_csv(c.out / "metrics.csv", names, reports);
  io::write_file(c.out / "metrics_per_sample.csv", per_sample.str());
  io::write_file(c.out / "roi.csv", roi.str());
  io::write_json(c.out / "summary.json", summary);
  c.write_snapshot();
  c.write_timing();
  return 0;
}

int cmd_stability(const Globals& g, const std::vector<std::string>& model_dirs, const std::string& data_dir,
                  std::optional<std::size_t> frames, std::optional<double> snr, bool no_noise, bool texture,
                  std::optional<std::uint64_t> phantom_seed) {
  auto c = make_ctx(g, true);
  if (model_dirs.empty()) throw UsageError("stability needs at least one --model");
  const auto models = load_models(model_dirs);
  const auto ds = data::load_dataset(data_dir);
  const auto spec = data::spec_from_manifest(ds.manifest);

  eval::StabilitySetup setup;
  setup.phantom_cfg = spec.phantom;
  setup.phantom_cfg.count_min = setup.phantom_cfg.count_max = 1;
  setup.phantom_cfg.min_contrast = static_cast<float>(c.cfg.data.detect_min_contrast);
  setup.phantom = phantom::gen_ellipsoid_medium(phantom_seed.value_or(derive_seed(c.cfg.seed, 0x5b, 0)), setup.phantom_cfg);
  setup.probe = spec.probe;
  setup.sim = spec.sim;
  setup.gain = ds.gain;

  eval::FrameNoise noise;
  noise.snr_db = no_noise ? std::numeric_limits<double>::infinity() : snr.value_or(c.cfg.eval.snr_db);
  noise.texture_redraw = texture || c.cfg.eval.texture_redraw;
  noise.seed = derive_seed(c.cfg.seed, 0x5c, 0);
  const auto n = frames.value_or(c.cfg.data.stability_frames);
  const auto rep = eval::stability_report(models, setup, n, noise);
  fs::create_directories(c.out);
  eval::write_stability(rep, c.out);
  io::export_pgm(setup.phantom.sos_map, c.out / "gt.pgm");
  json s = {{"frames", n},
            {"snr_db", no_noise ? json(nullptr) : json(noise.snr_db)},
            {"texture_redraw", noise.texture_redraw},
            {"gt_inclusion", rep.gt_inclusion},
            {"gt_background", rep.gt_background}};
  for (const auto& m : rep.models) {
    s["models"][m.name] = {{"inclusion_mean_sd", m.inc_mean_sd}, {"background_mean_sd", m.bg_mean_sd}};
    std::printf("%-14s cross-frame SD of means: inclusion %.4f  background %.4f m/s\n", m.name.c_str(), m.inc_mean_sd,
                m.bg_mean_sd);
  }
  io::write_json(c.out / "summary.json", s);
  c.write_snapshot();
  c.write_timing();
  return 0;
}

int cmd_gradcheck(const Globals& g, double eps) {
  auto c = make_ctx(g, false);
  const auto entries = checks::gradient_suite(c.cfg.seed, eps);
  json j = json::array();
  for (const auto& e : entries) {
    std::printf("%-36s max rel err %.3e  (%zu coords, %zu skipped)\n", e.name.c_str(), e.result.max_rel_error,
                e.result.coords_checked, e.result.coords_skipped);
    j.push_back({{"name", e.name},
                 {"max_rel_error", e.result.max_rel_error},
                 {"coords_checked", e.result.coords_checked},
                 {"coords_skipped", e.result.coords_skipped}});
  }
  const double w = checks::worst(entries);
  const bool ok = w < 1e-4;
  std::printf("worst %.3e: %s\n", w, ok ? "PASS" : "FAIL");
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    io::write_json(c.out / "gradcheck.json", {{"entries", j}, {"worst", w}, {"pass", ok}, {"eps", eps}});
    c.write_snapshot();
  }
  return ok ? 0 : 2;
}

int cmd_multi_run(const Globals& g, std::size_t k, const std::string& data_dir, const std::string& test_dir,
                  const std::string& stage) {
  auto c = make_ctx(g, true);
  if (stage != "autospeed" && stage != "endenet" && stage != "both") {
    throw UsageError("--stage must be autospeed, endenet or both");
  }
  const auto ds = data::load_dataset(data_dir);
  const auto test = data::load_dataset(test_dir);
  const auto idx = all_indices(test);
  const auto gts = ground_truth(test, idx);
  const auto add = [](std::map<std::string, double>& out, const std::string& name, const eval::MetricReport& r) {
    out[name + "_rmse"] = r.rmse_agg().mean;
    out[name + "_mae"] = r.mae_agg().mean;
    out[name + "_mape"] = r.mape_mean();
  };
  const auto report = train::multi_run(k, c.cfg.seed, [&](std::uint64_t seed) {
    auto cfg = c.cfg;
    cfg.seed = seed;
    cfg.lae.seed = cfg.irm.seed = cfg.endenet.seed = 0;
    std::map<std::string, double> out;
    std::printf("run seed %llu\n", static_cast<unsigned long long>(seed));
    if (stage != "endenet") {
      const auto lae = train::train_lae(ds, cfg);
      const auto irm = train::train_irm(ds, lae.model, cfg);
      const auto m = models::assemble_autospeed(lae.model, irm.irm);
      add(out, "autospeed", eval::metric_report(eval::predict_samples([&](const Tensor& x) { return m.infer(x); }, test, idx), gts));
    }
    if (stage != "autospeed") {
      const auto e = train::train_endenet(ds, cfg);
      add(out, "endenet",
          eval::metric_report(eval::predict_samples([&](const Tensor& x) { return models::endenet_infer(e.net, x); },
                                                    test, idx),
                              gts));
    }
    for (const auto& [name, v] : out) std::printf("  %-16s %.4f\n", name.c_str(), v);
    return out;
  });
  fs::create_directories(c.out);
  io::write_json(c.out / "multi_run.json", report.to_json());
  c.write_snapshot();
  c.write_timing();
  for (const auto& [name, ms] : report.stats) std::printf("%-16s %.4f +- %.4f\n", name.c_str(), ms.first, ms.second);
  if (report.partial()) {
    std::fprintf(stderr, "warning: some runs failed; statistics cover the successful runs only\n");
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linked-autoencoder speed-of-sound reconstruction from ultrasound RF data"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON); missing keys keep their defaults");
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--deterministic", g.deterministic, "Byte-reproducible outputs (no wall-clock files)");
  app.add_option("--threads", g.threads, "Worker threads (0: AUTOSPEED_THREADS or hardware)");

  std::function<int()> run;

  auto* gen = app.add_subcommand("gen-data", "Simulate a dataset of phantoms and RF frames");
  std::optional<std::size_t> n;
  std::optional<double> vf;
  std::string kind = "train", gain_from;
  gen->add_option("--n", n, "Number of samples");
  gen->add_option("--val-fraction", vf, "Validation fraction");
  gen->add_option("--kind", kind, "train | test | detect")->check(CLI::IsMember({"train", "test", "detect"}));
  gen->add_option("--gain-from", gain_from, "Reuse the RF gain of this dataset");
  gen->callback([&] { run = [&] { return cmd_gen_data(g, n, vf, kind, gain_from); }; });

  std::string data_dir, init, lae_dir, irm_dir, model_dir, input, baseline, detect, test_dir;
  auto* tl = app.add_subcommand("train-lae", "Train the linked autoencoders");
  tl->add_option("--data", data_dir, "Training dataset")->required();
  tl->add_option("--init", init, "Start from this LAE checkpoint");
  tl->callback([&] { run = [&] { return cmd_train_lae(g, data_dir, init); }; });

  auto* ti = app.add_subcommand("train-irm", "Train the latent mapping on frozen encoders");
  ti->add_option("--data", data_dir, "Training dataset")->required();
  ti->add_option("--lae", lae_dir, "Trained LAE checkpoint")->required();
  ti->callback([&] { run = [&] { return cmd_train_irm(g, data_dir, lae_dir); }; });

  auto* te = app.add_subcommand("train-endenet", "Train the end-to-end encoder-decoder baseline");
  te->add_option("--data", data_dir, "Training dataset")->required();
  te->callback([&] { run = [&] { return cmd_train_endenet(g, data_dir); }; });

  auto* as = app.add_subcommand("assemble", "Build the inference model from LAE and IRM checkpoints");
  as->add_option("--lae", lae_dir, "LAE checkpoint")->required();
  as->add_option("--irm", irm_dir, "IRM checkpoint")->required();
  as->callback([&] { run = [&] { return cmd_assemble(g, lae_dir, irm_dir); }; });

  auto* inf = app.add_subcommand("infer", "Predict SoS maps from RF frames");
  inf->add_option("--model", model_dir, "AutoSpeed or En-De-Net checkpoint")->required();
  inf->add_option("--input", input, "RF frame tensor (USTT)")->required();
  inf->callback([&] { run = [&] { return cmd_infer(g, model_dir, input); }; });

  std::vector<std::string> model_dirs;
  std::optional<double> threshold;
  auto* ev = app.add_subcommand("eval", "Metrics, ROI statistics and detection rate on a dataset");
  ev->add_option("--model", model_dirs, "Model checkpoint (repeatable)");
  ev->add_option("--data", data_dir, "Test dataset")->required();
  ev->add_option("--baseline", baseline, "Training dataset for the constant-mean baseline");
  ev->add_option("--detect", detect, "Dataset for the detection rate");
  ev->add_option("--threshold", threshold, "Detection contrast threshold (m/s)");
  ev->callback([&] { run = [&] { return cmd_eval(g, model_dirs, data_dir, baseline, detect, threshold); }; });

  std::optional<std::size_t> frames;
  std::optional<double> snr;
  std::optional<std::uint64_t> phantom_seed;
  bool no_noise = false, texture = false;
  auto* st = app.add_subcommand("stability", "Repeated noisy acquisitions of one fixed phantom");
  st->add_option("--model", model_dirs, "Model checkpoint (repeatable)")->required();
  st->add_option("--data", data_dir, "Dataset supplying probe, simulation settings and gain")->required();
  st->add_option("--frames", frames, "Number of frames");
  st->add_option("--snr", snr, "Frame noise SNR (dB)");
  st->add_flag("--no-noise", no_noise, "Disable frame noise");
  st->add_flag("--texture-redraw", texture, "Redraw scatterer texture per frame");
  st->add_option("--phantom-seed", phantom_seed, "Seed of the fixed phantom");
  st->callback([&] {
    run = [&] { return cmd_stability(g, model_dirs, data_dir, frames, snr, no_noise, texture, phantom_seed); };
  });

  double eps = 1e-3;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite; exit 0 iff all errors < 1e-4");
  gc->add_option("--eps", eps, "Central-difference step");
  gc->callback([&] { run = [&] { return cmd_gradcheck(g, eps); }; });

  std::size_t k = 3;
  std::string stage = "both";
  auto* mr = app.add_subcommand("multi-run", "Repeat training over k seeds and report mean and SD");
  mr->add_option("--k", k, "Number of runs");
  mr->add_option("--data", data_dir, "Training dataset")->required();
  mr->add_option("--test", test_dir, "Test dataset")->required();
  mr->add_option("--stage", stage, "autospeed | endenet | both");
  mr->callback([&] { run = [&] { return cmd_multi_run(g, k, data_dir, test_dir, stage); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  try {
    return run();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
