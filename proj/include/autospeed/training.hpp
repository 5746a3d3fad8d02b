#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "autospeed/config.hpp"
#include "autospeed/dataset.hpp"
#include "autospeed/io.hpp"
#include "autospeed/models.hpp"

namespace autospeed::train {

namespace fs = std::filesystem;

inline constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

// One row per epoch and split. Reconstruction metrics are in raw units
// (RF counts, m/s); latent metrics in latent units. Unused columns stay NaN.
struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::string split;      // train | val
  double loss = kUnset;
  double rf_term = kUnset, sos_term = kUnset, latent_term = kUnset;
  double x_rmse = kUnset, x_mae = kUnset;
  double y_rmse = kUnset, y_mae = kUnset, y_mape = kUnset;
  double latent_rmse = kUnset, latent_mae = kUnset;
  double lr = kUnset;
};

struct TrainHistory {
  std::string stage;
  std::vector<EpochRecord> rows;
  std::size_t best_epoch = 0;
  double best_val_loss = kUnset;
  double wall_seconds = 0;
  std::string config_hash;

  std::string csv() const;
  json summary() const;  // no wall-clock, safe for byte comparisons
};

struct TrainOptions {
  // Checkpoints go to <out>/best and <out>/epoch_NNNN; empty disables them.
  fs::path out;
  std::string config_hash;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Batches stacked from dataset samples.
Tensor stack_rf(const data::Dataset& ds, const std::vector<std::size_t>& idx);
Tensor stack_sos(const data::Dataset& ds, const std::vector<std::size_t>& idx);

// Evaluation passes; they never touch the parameters.
EpochRecord evaluate_lae(const models::LinkedModel& model, const data::Dataset& ds,
                         const std::vector<std::size_t>& idx, std::size_t batch = 8);
EpochRecord evaluate_endenet(const models::EndeNet& net, const data::Dataset& ds,
                             const std::vector<std::size_t>& idx, std::size_t batch = 8);

struct LaeResult {
  models::LinkedModel model;  // best-validation parameters
  TrainHistory history;
};

// Minimizes the linked-autoencoder objective. `init`, if given, replaces the
// seeded initialization.
LaeResult train_lae(const data::Dataset& ds, const ExperimentConfig& cfg, const TrainOptions& opts = {},
                    const models::LinkedModel* init = nullptr);

// Frozen-encoder latents for every sample of the dataset, flattened.
struct LatentSet {
  std::vector<Tensor> m, n;
};
LatentSet compute_latents(const models::LinkedModel& lae, const data::Dataset& ds, std::size_t batch = 8);

struct IrmResult {
  models::IrmLayer irm;
  TrainHistory history;
};

// Fits the IRM layer on precomputed latents.
IrmResult train_irm_latents(models::IrmLayer init, const LatentSet& lat, const std::vector<std::size_t>& train_idx,
                            const std::vector<std::size_t>& val_idx, const TrainConfig& tc, std::uint64_t seed,
                            const TrainOptions& opts = {});
// Warm start from the link (or a seeded layer when warm_start is off).
IrmResult train_irm(const data::Dataset& ds, const models::LinkedModel& lae, const ExperimentConfig& cfg,
                    const TrainOptions& opts = {});

struct EndeNetResult {
  models::EndeNet net;
  TrainHistory history;
};
EndeNetResult train_endenet(const data::Dataset& ds, const ExperimentConfig& cfg, const TrainOptions& opts = {});

// Repeated runs with seeds seed+0..k-1. A failing run is recorded with its
// error and left out of the statistics.
struct MultiRunReport {
  std::vector<std::uint64_t> seeds;
  std::vector<std::map<std::string, double>> runs;
  std::vector<std::string> errors;  // empty string for successful runs
  std::map<std::string, std::pair<double, double>> stats;  // mean, sample SD
  bool partial() const;
  json to_json() const;
};
MultiRunReport multi_run(std::size_t k, std::uint64_t seed,
                         const std::function<std::map<std::string, double>(std::uint64_t)>& run);

// Checkpoint conversion.
io::Checkpoint to_checkpoint(const models::LinkedModel& m, const std::string& config_hash, const json& info = {});
io::Checkpoint to_checkpoint(const models::IrmLayer& m, const std::string& config_hash, const json& info = {});
io::Checkpoint to_checkpoint(const models::EndeNet& m, const std::string& config_hash, const json& info = {});
io::Checkpoint to_checkpoint(const models::AutoSpeedModel& m, const std::string& config_hash, const json& info = {});
models::LinkedModel linked_from_checkpoint(const io::Checkpoint& c);
models::IrmLayer irm_from_checkpoint(const io::Checkpoint& c);
models::EndeNet endenet_from_checkpoint(const io::Checkpoint& c);
models::AutoSpeedModel autospeed_from_checkpoint(const io::Checkpoint& c);

}  // namespace autospeed::train
