#include "autospeed/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace autospeed::io {

static_assert(std::endian::native == std::endian::little, "USTT I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'U', 'S', 'T', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset, const std::string& what, const char* field) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(what + ": truncated " + field + " at offset " + std::to_string(offset) + " (file has " +
                      std::to_string(bytes.size()) + " bytes)");
  }
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + offset, 4);
  return v;
}

bool valid_tensor_name(const std::string& name) {
  if (name.empty() || name == "manifest" || name.front() == '.') return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '.' || c == '-';
    if (!ok) return false;
  }
  return true;
}

}  // namespace

std::string encode_tensor(const Tensor& t) {
  if (t.ndim() == 0) throw DimensionError("cannot encode an empty tensor");
  std::string out;
  out.reserve(16 + 4 * t.ndim() + 4 * t.numel());
  out.append(kMagic, 4);
  put_u32(out, kTensorVersion);
  put_u32(out, kDtypeF32);
  put_u32(out, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) {
    if (d > 0xffffffffULL) throw DimensionError("tensor extent exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.append(reinterpret_cast<const char*>(t.data()), 4 * t.numel());
  return out;
}

Tensor decode_tensor(std::string_view bytes, const std::string& what) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(what + ": bad magic at offset 0 (expected \"USTT\")");
  }
  const auto version = get_u32(bytes, 4, what, "version");
  if (version != kTensorVersion) {
    throw FormatError(what + ": unsupported format version " + std::to_string(version) + " at offset 4");
  }
  const auto dtype = get_u32(bytes, 8, what, "dtype");
  if (dtype != kDtypeF32) throw FormatError(what + ": unsupported dtype code " + std::to_string(dtype) + " at offset 8");
  const auto ndim = get_u32(bytes, 12, what, "ndim");
  if (ndim == 0 || ndim > 16) throw FormatError(what + ": invalid ndim " + std::to_string(ndim) + " at offset 12");
  Shape shape(ndim);
  std::size_t offset = 16;
  for (std::uint32_t i = 0; i < ndim; ++i, offset += 4) {
    shape[i] = get_u32(bytes, offset, what, "dims");
    if (shape[i] == 0) throw FormatError(what + ": zero extent at offset " + std::to_string(offset));
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t payload = bytes.size() - offset;
  if (payload != 4 * n) {
    throw FormatError(what + ": payload of " + std::to_string(payload) + " bytes at offset " + std::to_string(offset) +
                      ", expected " + std::to_string(4 * n) + " for shape " + shape_str(shape));
  }
  std::vector<float> data(n);
  std::memcpy(data.data(), bytes.data() + offset, 4 * n);
  return Tensor(std::move(shape), std::move(data));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void save_tensor(const Tensor& t, const fs::path& path) { write_file(path, encode_tensor(t)); }

Tensor load_tensor(const fs::path& path) { return decode_tensor(read_file(path), path.string()); }

json read_json(const fs::path& path) {
  const auto text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string json_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

std::uint16_t pgm_level(double v, double lo, double hi) {
  if (!(hi > lo)) throw ValidationError("pgm range must have hi > lo");
  if (std::isnan(v)) return 0;
  const double x = std::floor((v - lo) / (hi - lo) * 65535.0 + 0.5);
  return static_cast<std::uint16_t>(std::clamp(x, 0.0, 65535.0));
}

void export_pgm(const Tensor& map, const fs::path& path, double lo, double hi) {
  if (map.ndim() != 2) throw DimensionError("export_pgm expects a 2D map, got " + shape_str(map.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
  out.reserve(out.size() + 2 * h * w);
  for (float v : map.vec()) {
    const auto q = pgm_level(v, lo, hi);
    out.push_back(static_cast<char>(q >> 8));  // PGM samples are big-endian
    out.push_back(static_cast<char>(q & 0xff));
  }
  write_file(path, out);
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  json index = json::object();
  for (const auto& [name, t] : ckpt.tensors) {
    if (!valid_tensor_name(name)) throw ValidationError("invalid checkpoint tensor name '" + name + "'");
    const std::string file = name + ".ustt";
    save_tensor(t, dir / file);
    index[name] = {{"file", file}, {"shape", t.shape()}, {"hash", hex64(tensor_hash(t))}};
  }
  json manifest = {{"format", "autospeed-checkpoint"},
                   {"version", 1},
                   {"stage", ckpt.stage},
                   {"topology", ckpt.topology},
                   {"config_hash", ckpt.config_hash},
                   {"info", ckpt.info},
                   {"tensors", index}};
  write_json(dir / "manifest.json", manifest);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("checkpoint manifest not found: " + mpath.string());
  const json m = read_json(mpath);
  if (m.value("format", "") != "autospeed-checkpoint") throw FormatError(mpath.string() + ": not a checkpoint manifest");
  if (m.value("version", 0) != 1) throw FormatError(mpath.string() + ": unsupported checkpoint version");
  Checkpoint c;
  c.stage = m.at("stage").get<std::string>();
  c.topology = m.at("topology");
  c.config_hash = m.value("config_hash", "");
  c.info = m.value("info", json::object());
  for (const auto& [name, entry] : m.at("tensors").items()) {
    if (!valid_tensor_name(name)) throw FormatError(mpath.string() + ": invalid tensor name '" + name + "'");
    const auto file = dir / entry.at("file").get<std::string>();
    if (!fs::exists(file)) throw IoError("checkpoint entry '" + name + "' does not resolve: " + file.string());
    Tensor t = load_tensor(file);
    if (t.shape() != entry.at("shape").get<Shape>()) {
      throw FormatError(file.string() + ": shape " + shape_str(t.shape()) + " disagrees with the manifest");
    }
    if (entry.contains("hash") && entry.at("hash").get<std::string>() != hex64(tensor_hash(t))) {
      throw FormatError(file.string() + ": content hash disagrees with the manifest");
    }
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

}  // namespace autospeed::io
