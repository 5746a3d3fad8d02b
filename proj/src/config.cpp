#include "autospeed/config.hpp"

#include "autospeed/errors.hpp"
#include "autospeed/io.hpp"
#include "autospeed/json_types.hpp"
#include "autospeed/rng.hpp"

namespace autospeed {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, epochs, batch_size, optimizer, lr, momentum,
                                                plateau_patience, plateau_factor, checkpoint_every, warm_start, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, n, val_fraction, test_n, detect_n, detect_min_contrast,
                                                stability_frames)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, noise, snr_db, texture_redraw, detect_threshold)

namespace models {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StageSpec, channels, stride_h, stride_w, kernel)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AutoencoderSpec, name, input, stages, latent, leaky_alpha, scale,
                                                shift)
}  // namespace models

namespace {

constexpr std::uint64_t kStageStream = 0x7a;
constexpr std::uint64_t kTestStream = 0x7e;
constexpr std::uint64_t kDetectStream = 0xde;

// Every key of `j` must exist in the reference serialization of the defaults.
void reject_unknown(const json& j, const json& ref, const std::string& where) {
  if (!j.is_object() || !ref.is_object()) return;
  for (const auto& [k, v] : j.items()) {
    const auto it = ref.find(k);
    if (it == ref.end()) throw ConfigError("unknown config key '" + where + k + "'");
    // Stage lists have no fixed length; compare each entry to the first default.
    if (v.is_array() && it->is_array() && !it->empty()) {
      for (const auto& e : v) reject_unknown(e, it->front(), where + k + "[].");
    } else {
      reject_unknown(v, *it, where + k + ".");
    }
  }
}

}  // namespace

void TrainConfig::validate(const std::string& stage) const {
  if (epochs < 1) throw ConfigError(stage + ": epochs must be at least 1");
  if (batch_size < 1) throw ConfigError(stage + ": batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError(stage + ": lr must be positive");
  if (optimizer != "sgd" && optimizer != "adam") {
    throw ConfigError(stage + ": optimizer must be sgd or adam, got '" + optimizer + "'");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError(stage + ": momentum must lie in [0, 1)");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw ConfigError(stage + ": plateau_factor must lie in (0, 1]");
}

ExperimentConfig::ExperimentConfig() {
  lae.epochs = 60;
  irm.epochs = 40;
  endenet.epochs = 60;
}

void ExperimentConfig::validate() const {
  phantom.validate();
  probe.validate();
  rf.validate();
  sos.validate();
  if (rf.name == sos.name) throw ConfigError("rf and sos autoencoders need distinct names");
  if (rf.input != Shape{1, probe.elements, probe.samples}) {
    throw ConfigError("rf autoencoder input " + shape_str(rf.input) + " does not match the probe's " +
                      std::to_string(probe.elements) + " channels x " + std::to_string(probe.samples) + " samples");
  }
  if (sos.input != Shape{1, phantom.gt_h, phantom.gt_w}) {
    throw ConfigError("sos autoencoder input " + shape_str(sos.input) + " does not match the " +
                      std::to_string(phantom.gt_h) + "x" + std::to_string(phantom.gt_w) + " ground-truth map");
  }
  (void)link_act();
  lae.validate("lae");
  irm.validate("irm");
  endenet.validate("endenet");
  if (data.n < 2 || data.val_fraction <= 0.0 || data.val_fraction >= 1.0) {
    throw ConfigError("data: need n >= 2 and val_fraction in (0, 1)");
  }
  if (data.test_n < 1 || data.detect_n < 1) throw ConfigError("data: test_n and detect_n must be at least 1");
  if (data.stability_frames < 2) throw ConfigError("data: stability_frames must be at least 2");
  if (!(eval.detect_threshold > 0.0)) throw ConfigError("eval: detect_threshold must be positive");
  if (!(eval.snr_db > 0.0)) throw ConfigError("eval: snr_db must be positive");
}

nn::Activation ExperimentConfig::link_act() const {
  const auto k = nn::act_kind_from_string(link_activation);
  return {k, k == nn::ActKind::leaky_relu ? rf.leaky_alpha : 0.0};
}

std::uint64_t ExperimentConfig::stage_seed(const std::string& stage) const {
  const TrainConfig& t = stage == "lae" ? lae : stage == "irm" ? irm : endenet;
  if (t.seed != 0) return t.seed;
  return derive_seed(seed, kStageStream, io::fnv1a64(stage));
}

data::DatasetSpec ExperimentConfig::train_set() const {
  data::DatasetSpec s;
  s.n = data.n;
  s.seed = seed;
  s.val_fraction = data.val_fraction;
  s.phantom = phantom;
  s.probe = probe;
  s.sim = sim;
  s.threads = threads;
  return s;
}

data::DatasetSpec ExperimentConfig::test_set(double gain) const {
  auto s = train_set();
  s.n = data.test_n;
  s.seed = derive_seed(seed, kTestStream, 0);
  s.val_fraction = 0.0;
  s.gain = gain;
  return s;
}

data::DatasetSpec ExperimentConfig::detect_set(double gain) const {
  auto s = test_set(gain);
  s.n = data.detect_n;
  s.seed = derive_seed(seed, kDetectStream, 0);
  s.phantom.count_min = s.phantom.count_max = 1;
  s.phantom.min_contrast = static_cast<float>(data.detect_min_contrast);
  return s;
}

json to_json_config(const ExperimentConfig& c) {
  return {{"seed", c.seed},
          {"deterministic", c.deterministic},
          {"threads", c.threads},
          {"data", c.data},
          {"phantom", c.phantom},
          {"probe", c.probe},
          {"sim", c.sim},
          {"rf", c.rf},
          {"sos", c.sos},
          {"link_activation", c.link_activation},
          {"lae", c.lae},
          {"irm", c.irm},
          {"endenet", c.endenet},
          {"eval", c.eval}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, to_json_config(c), "");
  try {
    c.seed = j.value("seed", c.seed);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.threads = j.value("threads", c.threads);
    c.link_activation = j.value("link_activation", c.link_activation);
    // Merge into the defaults so partial sub-objects keep unspecified values.
    auto merged = to_json_config(c);
    merged.merge_patch(j);
    c.data = merged.at("data").get<DataConfig>();
    c.phantom = merged.at("phantom").get<phantom::EllipsePhantomConfig>();
    c.probe = merged.at("probe").get<sim::ProbeSpec>();
    c.sim = merged.at("sim").get<sim::SimOptions>();
    // Stage lists replace wholesale rather than merge.
    c.rf = merged.at("rf").get<models::AutoencoderSpec>();
    c.sos = merged.at("sos").get<models::AutoencoderSpec>();
    c.lae = merged.at("lae").get<TrainConfig>();
    c.irm = merged.at("irm").get<TrainConfig>();
    c.endenet = merged.at("endenet").get<TrainConfig>();
    c.eval = merged.at("eval").get<EvalConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = io::read_json(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j);
}

json topology_json(const models::AutoencoderSpec& s) { return s; }

models::AutoencoderSpec spec_from_topology(const json& j) {
  try {
    auto s = j.get<models::AutoencoderSpec>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint topology: ") + e.what());
  }
}

}  // namespace autospeed
