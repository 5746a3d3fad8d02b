#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "autospeed/dataset.hpp"
#include "autospeed/phantom.hpp"
#include "autospeed/sim.hpp"
#include "autospeed/tensor.hpp"

namespace autospeed::eval {

namespace fs = std::filesystem;

// Scalar metrics in m/s and percent. Shapes must match.
double rmse(const Tensor& pred, const Tensor& gt);
double mae(const Tensor& pred, const Tensor& gt);
double mape(const Tensor& pred, const Tensor& gt);

struct MeanSd {
  double mean = 0, sd = 0;  // sample SD (n - 1); 0 for a single value
};
MeanSd mean_sd(const std::vector<double>& v);

struct MetricReport {
  std::vector<double> rmse, mae, mape;  // per sample
  MeanSd rmse_agg() const { return mean_sd(rmse); }
  MeanSd mae_agg() const { return mean_sd(mae); }
  MeanSd mape_agg() const { return mean_sd(mape); }
  double mape_mean() const { return mape_agg().mean; }
};

MetricReport metric_report(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts);

struct RegionStats {
  std::size_t label = 0;  // 0 background, k inclusion k
  std::size_t count = 0;
  double mean = 0, sd = 0;  // population SD over the region's pixels
  double gt = std::numeric_limits<double>::quiet_NaN();
  bool gt_within_2sd = false;
};

struct RoiReport {
  std::vector<RegionStats> regions;
};

// Masked statistics per label of `labels` (same shape as the map, values
// 0..region_count-1). `gt_values`, if given, holds the true SoS per region.
// An empty region is a ValidationError.
RoiReport roi_stats(const Tensor& map, const Tensor& labels, std::size_t region_count,
                    const std::vector<double>& gt_values = {});

// One inclusion against its background, predicted and true.
struct ContrastCase {
  double pred_inclusion = 0, pred_background = 0;
  double gt_inclusion = 0, gt_background = 0;
};

// Fraction of cases whose predicted contrast exceeds `threshold` in the
// direction of the true contrast.
double detection_rate(const std::vector<ContrastCase>& cases, double threshold);

// Contrast cases of one prediction, one per inclusion of the phantom.
std::vector<ContrastCase> contrast_cases(const Tensor& pred, const Tensor& labels, float background,
                                         const std::vector<float>& inclusion_sos);

// Batched model: RF [N, 1, channels, samples] -> SoS [N, 1, H, W].
using Predictor = std::function<Tensor(const Tensor&)>;

struct NamedModel {
  std::string name;
  Predictor predict;
};

// Runs `model` over dataset samples in batches; returns [H, W] maps.
std::vector<Tensor> predict_samples(const Predictor& model, const data::Dataset& ds,
                                    const std::vector<std::size_t>& indices, std::size_t batch = 8);

// Predicts the mean SoS of the given training samples everywhere.
std::vector<Tensor> constant_predictions(const data::Dataset& train_set, const std::vector<std::size_t>& train_idx,
                                         const data::Dataset& ds, const std::vector<std::size_t>& indices);

struct FrameNoise {
  // Additive white Gaussian noise relative to the frame's RMS; infinity
  // disables it.
  double snr_db = 30.0;
  // Independent scatterer texture per frame (re-simulates every frame).
  bool texture_redraw = false;
  std::uint64_t seed = 0;
};

struct FrameRow {
  std::size_t frame = 0;
  double inc_mean = 0, inc_sd = 0, bg_mean = 0, bg_sd = 0;
};

struct ModelStability {
  std::string name;
  std::vector<FrameRow> frames;
  double inc_mean_sd = 0, bg_mean_sd = 0;  // cross-frame sample SD of the per-frame means
};

struct StabilityReport {
  double gt_inclusion = 0, gt_background = 0;
  std::vector<ModelStability> models;
  std::vector<Tensor> first_predictions;  // per model, frame 0
};

struct StabilitySetup {
  phantom::PhantomSample phantom;
  phantom::EllipsePhantomConfig phantom_cfg;
  sim::ProbeSpec probe;
  sim::SimOptions sim;
  double gain = 1.0;
};

// Repeated acquisitions of one fixed field of view. Inclusion rows pool all
// inclusion labels.
StabilityReport stability_report(const std::vector<NamedModel>& models, const StabilitySetup& setup,
                                 std::size_t n_frames, const FrameNoise& noise);

void add_awgn(Tensor& rf, double snr_db, std::uint64_t seed);

// stability.csv (per-frame rows), stability_summary.csv and one PGM per model.
void write_stability(const StabilityReport& r, const fs::path& dir);

void write_metrics_csv(const fs::path& path, const std::vector<std::string>& names,
                       const std::vector<MetricReport>& reports);

}  // namespace autospeed::eval
