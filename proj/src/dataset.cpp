#include "autospeed/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "autospeed/json_types.hpp"
#include "autospeed/parallel.hpp"
#include "autospeed/rng.hpp"

namespace autospeed::data {

namespace {

constexpr std::uint64_t kSampleStream = 0x5a;
constexpr std::uint64_t kSplitStream = 0x5b;

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

}  // namespace

json DatasetSpec::config_json() const {
  return {{"n", n},
          {"seed", seed},
          {"val_fraction", val_fraction},
          {"phantom", phantom},
          {"probe", probe},
          {"sim", sim},
          {"fixed_gain", gain}};
}

void DatasetSpec::validate() const {
  if (n == 0) throw ConfigError("dataset size n must be at least 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must lie in [0, 1)");
  if (gain < 0.0) throw ConfigError("fixed gain must be non-negative");
  phantom.validate();
  probe.validate();
}

std::uint64_t sample_seed(std::uint64_t master, std::size_t index) {
  return derive_seed(master, kSampleStream, index);
}

void split_indices(std::size_t n, double val_fraction, std::uint64_t seed, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& val) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kSplitStream, 0));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(idx[i - 1], idx[j]);
  }
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction + 0.5));
  val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
}

json gen_dataset(const DatasetSpec& spec, const fs::path& out) {
  spec.validate();
  const double c_max = std::max(spec.phantom.bg_max, spec.phantom.inc_max);
  const auto grid = sim::make_sim_grid(spec.phantom.dx, c_max, spec.probe, spec.sim);

  std::vector<Tensor> raw(spec.n);
  std::vector<phantom::PhantomSample> ph(spec.n);
  parallel_for(spec.n, worker_count(spec.threads), [&](std::size_t i) {
    ph[i] = phantom::gen_ellipsoid_medium(sample_seed(spec.seed, i), spec.phantom);
    raw[i] = sim::simulate_raw(ph[i].medium, spec.probe, grid, spec.sim);
    ph[i].medium = {};  // keep only the GT view
  });

  double gain = spec.gain;
  if (gain <= 0.0) {
    std::vector<const Tensor*> frames;
    for (const auto& r : raw) frames.push_back(&r);
    gain = sim::percentile_gain(frames);
  }

  std::vector<std::size_t> train, val;
  split_indices(spec.n, spec.val_fraction, spec.seed, train, val);
  std::vector<std::string> split(spec.n, "train");
  for (auto v : val) split[v] = "val";

  json samples = json::array();
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto name = sample_name(i);
    const std::string rf = "samples/" + name + ".rf.ustt";
    const std::string sos = "samples/" + name + ".sos.ustt";
    const std::string labels = "samples/" + name + ".labels.ustt";
    io::save_tensor(sim::apply_gain(raw[i], gain), out / rf);
    io::save_tensor(ph[i].sos_map, out / sos);
    io::save_tensor(ph[i].labels, out / labels);
    samples.push_back({{"index", i},
                       {"id", name},
                       {"seed", ph[i].seed},
                       {"split", split[i]},
                       {"rf", rf},
                       {"sos", sos},
                       {"labels", labels},
                       {"background", ph[i].background},
                       {"inclusions", ph[i].inclusion_sos}});
  }
  const json config = spec.config_json();
  json manifest = {{"format", "autospeed-dataset"},
                   {"version", 1},
                   {"config", config},
                   {"config_hash", io::json_hash(config)},
                   {"gain", gain},
                   {"grid", {{"dt", grid.dt}, {"substeps", grid.substeps}, {"steps", grid.steps}}},
                   {"split", {{"train", train}, {"val", val}}},
                   {"samples", samples}};
  io::write_json(out / "manifest.json", manifest);
  return manifest;
}

DatasetSpec spec_from_manifest(const json& manifest) {
  const auto& c = manifest.at("config");
  DatasetSpec s;
  s.n = c.at("n").get<std::size_t>();
  s.seed = c.at("seed").get<std::uint64_t>();
  s.val_fraction = c.at("val_fraction").get<double>();
  s.phantom = c.at("phantom").get<phantom::EllipsePhantomConfig>();
  s.probe = c.at("probe").get<sim::ProbeSpec>();
  s.sim = c.at("sim").get<sim::SimOptions>();
  s.gain = manifest.at("gain").get<double>();
  return s;
}

Dataset load_dataset(const fs::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("dataset manifest not found: " + mpath.string());
  Dataset d;
  d.dir = dir;
  d.manifest = io::read_json(mpath);
  const auto& m = d.manifest;
  if (m.value("format", "") != "autospeed-dataset") throw FormatError(mpath.string() + ": not a dataset manifest");
  if (m.value("version", 0) != 1) throw FormatError(mpath.string() + ": unsupported dataset version");
  if (io::json_hash(m.at("config")) != m.at("config_hash").get<std::string>()) {
    throw FormatError(mpath.string() + ": config hash does not verify");
  }
  d.gain = m.at("gain").get<double>();
  const auto& list = m.at("samples");
  const auto n = m.at("config").at("n").get<std::size_t>();
  if (list.size() != n) {
    throw FormatError(mpath.string() + ": manifest lists " + std::to_string(list.size()) + " samples, config says " +
                      std::to_string(n));
  }
  d.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = list[i];
    auto& s = d.samples[i];
    s.id = e.at("id").get<std::string>();
    s.seed = e.at("seed").get<std::uint64_t>();
    for (const char* key : {"rf", "sos", "labels"}) {
      const auto p = dir / e.at(key).get<std::string>();
      if (!fs::exists(p)) throw IoError("dataset file missing: " + p.string());
    }
    s.rf = io::load_tensor(dir / e.at("rf").get<std::string>());
    s.sos = io::load_tensor(dir / e.at("sos").get<std::string>());
    s.labels = io::load_tensor(dir / e.at("labels").get<std::string>());
    s.background = e.at("background").get<float>();
    s.inclusion_sos = e.at("inclusions").get<std::vector<float>>();
  }
  d.train = m.at("split").at("train").get<std::vector<std::size_t>>();
  d.val = m.at("split").at("val").get<std::vector<std::size_t>>();
  return d;
}

}  // namespace autospeed::data
