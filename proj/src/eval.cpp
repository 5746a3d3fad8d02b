#include "autospeed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "autospeed/errors.hpp"
#include "autospeed/io.hpp"
#include "autospeed/parallel.hpp"
#include "autospeed/rng.hpp"

namespace autospeed::eval {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* what) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError(std::string(what) + ": prediction " + shape_str(pred.shape()) + " vs ground truth " +
                         shape_str(gt.shape()));
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

double rmse(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - gt[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(gt.numel()));
}

double mae(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < gt.numel(); ++i) s += std::abs(static_cast<double>(pred[i]) - gt[i]);
  return s / static_cast<double>(gt.numel());
}

double mape(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "mape");
  double s = 0.0;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    if (gt[i] == 0.0f) throw ValidationError("mape: zero ground truth at index " + std::to_string(i));
    s += std::abs((static_cast<double>(pred[i]) - gt[i]) / gt[i]);
  }
  return 100.0 * s / static_cast<double>(gt.numel());
}

MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd r;
  if (v.empty()) return r;
  // Deviations from the first value: a constant series gives exactly 0 SD.
  const double x0 = v[0];
  double s = 0.0, ss = 0.0;
  for (double x : v) {
    s += x - x0;
    ss += (x - x0) * (x - x0);
  }
  const auto n = static_cast<double>(v.size());
  r.mean = x0 + s / n;
  if (v.size() < 2) return r;
  r.sd = std::sqrt(std::max(0.0, (ss - s * s / n) / (n - 1.0)));
  return r;
}

MetricReport metric_report(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
  if (preds.size() != gts.size()) {
    throw DimensionError("metric_report: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(gts.size()) + " ground truths");
  }
  MetricReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.rmse.push_back(rmse(preds[i], gts[i]));
    r.mae.push_back(mae(preds[i], gts[i]));
    r.mape.push_back(mape(preds[i], gts[i]));
  }
  return r;
}

RoiReport roi_stats(const Tensor& map, const Tensor& labels, std::size_t region_count,
                    const std::vector<double>& gt_values) {
  check_pair(map, labels, "roi_stats");
  if (!gt_values.empty() && gt_values.size() != region_count) {
    throw DimensionError("roi_stats: " + std::to_string(gt_values.size()) + " ground-truth values for " +
                         std::to_string(region_count) + " regions");
  }
  std::vector<double> sum(region_count, 0.0);
  std::vector<std::size_t> count(region_count, 0);
  for (std::size_t i = 0; i < map.numel(); ++i) {
    const float l = labels[i];
    if (l < 0.0f || l != std::floor(l) || static_cast<std::size_t>(l) >= region_count) {
      throw ValidationError("roi_stats: label " + std::to_string(l) + " at index " + std::to_string(i) +
                            " outside 0.." + std::to_string(region_count - 1));
    }
    const auto k = static_cast<std::size_t>(l);
    sum[k] += map[i];
    ++count[k];
  }
  RoiReport r;
  r.regions.resize(region_count);
  for (std::size_t k = 0; k < region_count; ++k) {
    if (count[k] == 0) throw ValidationError("roi_stats: region " + std::to_string(k) + " has no pixels");
    r.regions[k].label = k;
    r.regions[k].count = count[k];
    r.regions[k].mean = sum[k] / static_cast<double>(count[k]);
  }
  // Second pass keeps the variance free of cancellation.
  std::vector<double> ss(region_count, 0.0);
  for (std::size_t i = 0; i < map.numel(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    const double d = map[i] - r.regions[k].mean;
    ss[k] += d * d;
  }
  for (std::size_t k = 0; k < region_count; ++k) {
    auto& reg = r.regions[k];
    reg.sd = std::sqrt(ss[k] / static_cast<double>(reg.count));
    if (!gt_values.empty()) {
      reg.gt = gt_values[k];
      reg.gt_within_2sd = std::abs(reg.gt - reg.mean) <= 2.0 * reg.sd;
    }
  }
  return r;
}

double detection_rate(const std::vector<ContrastCase>& cases, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("detection threshold must be positive");
  if (cases.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& c : cases) {
    const double gt = c.gt_inclusion - c.gt_background;
    const double pred = c.pred_inclusion - c.pred_background;
    if (gt != 0.0 && std::copysign(1.0, gt) * pred > threshold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(cases.size());
}

std::vector<ContrastCase> contrast_cases(const Tensor& pred, const Tensor& labels, float background,
                                         const std::vector<float>& inclusion_sos) {
  std::vector<double> gt{background};
  gt.insert(gt.end(), inclusion_sos.begin(), inclusion_sos.end());
  const auto roi = roi_stats(pred, labels, gt.size(), gt);
  std::vector<ContrastCase> out;
  for (std::size_t k = 1; k < gt.size(); ++k) {
    out.push_back({roi.regions[k].mean, roi.regions[0].mean, gt[k], gt[0]});
  }
  return out;
}

std::vector<Tensor> predict_samples(const Predictor& model, const data::Dataset& ds,
                                    const std::vector<std::size_t>& indices, std::size_t batch) {
  std::vector<Tensor> out;
  out.reserve(indices.size());
  batch = std::max<std::size_t>(1, batch);
  for (std::size_t b0 = 0; b0 < indices.size(); b0 += batch) {
    const std::size_t nb = std::min(batch, indices.size() - b0);
    const auto& first = ds.samples.at(indices[b0]).rf;
    Tensor x(Shape{nb, 1, first.dim(0), first.dim(1)});
    for (std::size_t k = 0; k < nb; ++k) {
      const auto& rf = ds.samples.at(indices[b0 + k]).rf;
      require_same_shape(rf.shape(), first.shape(), "predict_samples");
      std::copy(rf.vec().begin(), rf.vec().end(), x.vec().begin() + static_cast<std::ptrdiff_t>(k * rf.numel()));
    }
    const auto y = model(x);
    const std::size_t per = y.numel() / nb;
    const Shape map_shape{y.dim(2), y.dim(3)};
    for (std::size_t k = 0; k < nb; ++k) {
      out.emplace_back(map_shape, std::vector<float>(y.vec().begin() + static_cast<std::ptrdiff_t>(k * per),
                                                     y.vec().begin() + static_cast<std::ptrdiff_t>((k + 1) * per)));
    }
  }
  return out;
}

std::vector<Tensor> constant_predictions(const data::Dataset& train_set, const std::vector<std::size_t>& train_idx,
                                         const data::Dataset& ds, const std::vector<std::size_t>& indices) {
  if (train_idx.empty()) throw ValidationError("constant baseline needs at least one training sample");
  double s = 0.0;
  std::size_t n = 0;
  for (auto i : train_idx) {
    for (float v : train_set.samples.at(i).sos.vec()) s += v;
    n += train_set.samples.at(i).sos.numel();
  }
  const auto mean = static_cast<float>(s / static_cast<double>(n));
  std::vector<Tensor> out;
  for (auto i : indices) out.emplace_back(ds.samples.at(i).sos.shape(), mean);
  return out;
}

void add_awgn(Tensor& rf, double snr_db, std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0) return;
  double p = 0.0;
  for (float v : rf.vec()) p += static_cast<double>(v) * v;
  p /= static_cast<double>(rf.numel());
  const double sigma = std::sqrt(p / std::pow(10.0, snr_db / 10.0));
  Rng rng(seed);
  for (auto& v : rf.vec()) v = static_cast<float>(v + sigma * rng.normal());
}

StabilityReport stability_report(const std::vector<NamedModel>& models, const StabilitySetup& setup,
                                 std::size_t n_frames, const FrameNoise& noise) {
  if (n_frames < 2) throw ConfigError("stability_report needs at least 2 frames");
  if (models.empty()) throw ConfigError("stability_report needs at least one model");
  const auto& ph = setup.phantom;
  if (ph.medium.sos.empty()) throw ConfigError("stability_report needs the phantom's full medium");

  const double c_max = std::max(setup.phantom_cfg.bg_max, setup.phantom_cfg.inc_max);
  const auto grid = sim::make_sim_grid(setup.phantom_cfg.dx, c_max, setup.probe, setup.sim);

  // Clean frames: one simulation, or one per frame when the texture changes.
  std::vector<Tensor> clean(noise.texture_redraw ? n_frames : 1);
  parallel_for(clean.size(), worker_count(), [&](std::size_t f) {
    auto medium = ph.medium;
    if (noise.texture_redraw) phantom::redraw_texture(medium, setup.phantom_cfg, derive_seed(noise.seed, 0x54, f));
    clean[f] = sim::apply_gain(sim::simulate_raw(medium, setup.probe, grid, setup.sim), setup.gain);
  });

  StabilityReport r;
  r.gt_background = ph.background;
  double inc = 0.0;
  for (float v : ph.inclusion_sos) inc += v;
  r.gt_inclusion = ph.inclusion_sos.empty() ? ph.background : inc / static_cast<double>(ph.inclusion_sos.size());

  // Pooled inclusion mask: label 1 for any inclusion.
  Tensor pooled(ph.labels.shape());
  bool any_inclusion = false;
  for (std::size_t i = 0; i < pooled.numel(); ++i) {
    pooled[i] = ph.labels[i] > 0.0f ? 1.0f : 0.0f;
    any_inclusion |= pooled[i] > 0.0f;
  }
  if (!any_inclusion) throw ValidationError("stability phantom has no inclusion pixels");

  r.models.resize(models.size());
  r.first_predictions.resize(models.size());
  for (std::size_t m = 0; m < models.size(); ++m) r.models[m].name = models[m].name;
  for (std::size_t f = 0; f < n_frames; ++f) {
    Tensor rf = clean[noise.texture_redraw ? f : 0];
    add_awgn(rf, noise.snr_db, derive_seed(noise.seed, 0x57, f));
    const Tensor x(Shape{1, 1, rf.dim(0), rf.dim(1)}, rf.vec());
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto y = models[m].predict(x);
      const Tensor map(Shape{y.dim(2), y.dim(3)}, y.vec());
      const auto roi = roi_stats(map, pooled, 2);
      r.models[m].frames.push_back({f, roi.regions[1].mean, roi.regions[1].sd, roi.regions[0].mean, roi.regions[0].sd});
      if (f == 0) r.first_predictions[m] = map;
    }
  }
  for (auto& ms : r.models) {
    std::vector<double> im, bm;
    for (const auto& row : ms.frames) {
      im.push_back(row.inc_mean);
      bm.push_back(row.bg_mean);
    }
    ms.inc_mean_sd = mean_sd(im).sd;
    ms.bg_mean_sd = mean_sd(bm).sd;
  }
  return r;
}

void write_stability(const StabilityReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream rows;
  rows << "model,frame,inc_mean,inc_sd,bg_mean,bg_sd\n";
  for (const auto& m : r.models) {
    for (const auto& f : m.frames) {
      rows << m.name << ',' << f.frame << ',' << fmt(f.inc_mean) << ',' << fmt(f.inc_sd) << ',' << fmt(f.bg_mean)
           << ',' << fmt(f.bg_sd) << '\n';
    }
  }
  io::write_file(dir / "stability.csv", rows.str());
  std::ostringstream sum;
  sum << "model,frames,inc_mean_sd,bg_mean_sd,gt_inclusion,gt_background\n";
  for (const auto& m : r.models) {
    sum << m.name << ',' << m.frames.size() << ',' << fmt(m.inc_mean_sd) << ',' << fmt(m.bg_mean_sd) << ','
        << fmt(r.gt_inclusion) << ',' << fmt(r.gt_background) << '\n';
  }
  io::write_file(dir / "stability_summary.csv", sum.str());
  for (std::size_t m = 0; m < r.models.size(); ++m) {
    if (r.first_predictions[m].numel() > 0) {
      io::export_pgm(r.first_predictions[m], dir / (r.models[m].name + "_frame0.pgm"));
    }
  }
}

void write_metrics_csv(const fs::path& path, const std::vector<std::string>& names,
                       const std::vector<MetricReport>& reports) {
  if (names.size() != reports.size()) throw DimensionError("write_metrics_csv: names and reports differ in length");
  std::ostringstream os;
  os << "model,samples,rmse_mean,rmse_sd,mae_mean,mae_sd,mape_mean,mape_sd\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& r = reports[i];
    const auto a = r.rmse_agg(), b = r.mae_agg(), c = r.mape_agg();
    os << names[i] << ',' << r.rmse.size() << ',' << fmt(a.mean) << ',' << fmt(a.sd) << ',' << fmt(b.mean) << ','
       << fmt(b.sd) << ',' << fmt(c.mean) << ',' << fmt(c.sd) << '\n';
  }
  io::write_file(path, os.str());
}

}  // namespace autospeed::eval
