#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>

#include "autospeed/dataset.hpp"
#include "autospeed/models.hpp"
#include "autospeed/phantom.hpp"
#include "autospeed/sim.hpp"
#include "json.hpp"

namespace autospeed {

using json = nlohmann::json;

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 8;
  std::string optimizer = "adam";  // sgd | adam
  double lr = 1e-3;
  double momentum = 0.9;           // sgd only
  // Learning rate is multiplied by plateau_factor after plateau_patience
  // epochs without a new best validation loss; 0 patience disables it.
  std::size_t plateau_patience = 10;
  double plateau_factor = 0.5;
  std::size_t checkpoint_every = 0;  // extra checkpoints every k epochs
  bool warm_start = true;            // irm: start from the trained link
  std::uint64_t seed = 0;            // 0: derived from the experiment seed

  void validate(const std::string& stage) const;
};

struct DataConfig {
  std::size_t n = 600;
  double val_fraction = 0.2;
  std::size_t test_n = 60;
  std::size_t detect_n = 30;
  double detect_min_contrast = 40.0;
  std::size_t stability_frames = 50;
};

struct EvalConfig {
  bool noise = true;  // additive frame noise for the stability protocol
  double snr_db = 30.0;
  bool texture_redraw = false;
  double detect_threshold = 20.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  bool deterministic = false;
  std::size_t threads = 0;
  DataConfig data;
  phantom::EllipsePhantomConfig phantom;
  sim::ProbeSpec probe;
  sim::SimOptions sim;
  models::AutoencoderSpec rf = models::AutoencoderSpec::desk_rf();
  models::AutoencoderSpec sos = models::AutoencoderSpec::desk_sos();
  std::string link_activation = "leaky_relu";
  TrainConfig lae;
  TrainConfig irm;
  TrainConfig endenet;
  EvalConfig eval;

  ExperimentConfig();
  void validate() const;
  nn::Activation link_act() const;
  std::uint64_t stage_seed(const std::string& stage) const;

  // Dataset recipes. The test and detection sets reuse the training gain.
  data::DatasetSpec train_set() const;
  data::DatasetSpec test_set(double gain) const;
  data::DatasetSpec detect_set(double gain) const;
};

json to_json_config(const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

json topology_json(const models::AutoencoderSpec& s);
models::AutoencoderSpec spec_from_topology(const json& j);

}  // namespace autospeed
