#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "autospeed/nn.hpp"
#include "autospeed/tensor.hpp"
#include "json.hpp"

namespace autospeed::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// USTT tensor files: "USTT", u32 version, u32 dtype (1 = f32), u32 ndim,
// u32 dims..., row-major payload. Everything little-endian.
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;

std::string encode_tensor(const Tensor& t);
// `what` names the source in error messages.
Tensor decode_tensor(std::string_view bytes, const std::string& what = "tensor");

void save_tensor(const Tensor& t, const fs::path& path);
Tensor load_tensor(const fs::path& path);

std::string read_file(const fs::path& path);
// Writes through a temporary file in the same directory and renames it into place.
void write_file(const fs::path& path, std::string_view bytes);

json read_json(const fs::path& path);
// Sorted keys, two-space indent, trailing newline.
void write_json(const fs::path& path, const json& j);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);
// Hash of the canonical serialization.
std::string json_hash(const json& j);

// 16-bit binary PGM of a 2D map, linear from [lo, hi] to [0, 65535], clamped,
// rounded half up.
std::uint16_t pgm_level(double v, double lo = 1300.0, double hi = 1700.0);
void export_pgm(const Tensor& map, const fs::path& path, double lo = 1300.0, double hi = 1700.0);

// Model checkpoint directory: manifest.json plus one tensor file per parameter.
struct Checkpoint {
  std::string stage;      // lae, irm, endenet, autospeed
  json topology;          // model specs needed to rebuild the graph
  std::string config_hash;
  json info;              // free-form: epoch, metrics, flags
  nn::ParamStore<float> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir);
Checkpoint load_checkpoint(const fs::path& dir);

}  // namespace autospeed::io
