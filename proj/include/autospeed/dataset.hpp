#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "autospeed/io.hpp"
#include "autospeed/phantom.hpp"
#include "autospeed/sim.hpp"

namespace autospeed::data {

namespace fs = std::filesystem;
using io::json;

struct DatasetSpec {
  std::size_t n = 600;
  std::uint64_t seed = 1;
  double val_fraction = 0.2;
  phantom::EllipsePhantomConfig phantom;
  sim::ProbeSpec probe;
  sim::SimOptions sim;
  // Fixed RF gain, e.g. taken over from a training set. 0 calibrates on the
  // generated frames (99.9th percentile of |RF| to 1000).
  double gain = 0.0;
  std::size_t threads = 0;  // 0: worker_count()

  json config_json() const;
  void validate() const;
};

// Per-sample seed from the master seed (splittable counter).
std::uint64_t sample_seed(std::uint64_t master, std::size_t index);

// Deterministic split: shuffled indices, the first round(n * val_fraction)
// form the validation set.
void split_indices(std::size_t n, double val_fraction, std::uint64_t seed, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& val);

// Simulates n phantoms and writes the container. Returns the manifest.
json gen_dataset(const DatasetSpec& spec, const fs::path& out);

struct Sample {
  std::string id;
  std::uint64_t seed = 0;
  Tensor rf;      // [channels, samples]
  Tensor sos;     // [H, W]
  Tensor labels;  // [H, W]
  float background = 0;
  std::vector<float> inclusion_sos;
};

struct Dataset {
  fs::path dir;
  json manifest;
  double gain = 1.0;
  std::vector<Sample> samples;
  std::vector<std::size_t> train, val;
};

// Loads every sample; verifies the config hash and that all files resolve.
Dataset load_dataset(const fs::path& dir);

// Medium and probe reconstructed from a manifest (for re-simulation).
DatasetSpec spec_from_manifest(const json& manifest);

}  // namespace autospeed::data
