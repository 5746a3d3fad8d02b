#include "autospeed/phantom.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "autospeed/rng.hpp"

namespace autospeed::phantom {

namespace {

constexpr std::uint64_t kGeometryStream = 1;
constexpr std::uint64_t kTextureStream = 2;

void check_sos_range(float lo, float hi, const char* what) {
  if (!(lo >= 1300.0f && hi <= 1700.0f && lo <= hi)) {
    throw ConfigError(std::string(what) + " SoS range must lie within [1300, 1700] m/s with min <= max");
  }
}

}  // namespace

void EllipsePhantomConfig::validate() const {
  check_sos_range(bg_min, bg_max, "background");
  check_sos_range(inc_min, inc_max, "inclusion");
  if (count_min > count_max) throw ConfigError("ellipse count_min exceeds count_max");
  if (!(axis_min > 0.0) || axis_min > axis_max) throw ConfigError("ellipse axis range must be positive and ordered");
  if (texture < 0.0 || texture >= 1.0) throw ConfigError("texture amplitude must lie in [0, 1)");
  if (!(density > 0.0f)) throw ConfigError("density must be positive");
  if (min_contrast < 0.0f) throw ConfigError("min_contrast must be non-negative");
  if (nz == 0 || nx == 0 || !(dx > 0.0)) throw ConfigError("medium grid must be non-empty");
  if (gt_h == 0 || gt_w == 0 || gt_step == 0) throw ConfigError("ground-truth grid must be non-empty");
  if ((gt_h - 1) * gt_step >= nz || gt_col0 + (gt_w - 1) * gt_step >= nx) {
    throw ConfigError("ground-truth view " + std::to_string(gt_h) + "x" + std::to_string(gt_w) + " (step " +
                      std::to_string(gt_step) + ") does not fit the medium");
  }
  // Any inclusion draw must be able to satisfy the contrast rule.
  if (count_max > 0 && std::max(std::abs(inc_max - bg_min), std::abs(bg_max - inc_min)) < min_contrast) {
    throw ConfigError("min_contrast cannot be met by the configured SoS ranges");
  }
}

bool Ellipse::contains(double z, double x) const {
  const double dz = z - cz, dxl = x - cx;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = dz * c + dxl * s;
  const double v = -dz * s + dxl * c;
  return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
}

std::vector<bool> PhantomSample::mask(std::size_t label) const {
  if (label >= region_count()) throw ValidationError("region label " + std::to_string(label) + " out of range");
  std::vector<bool> m(labels.numel());
  for (std::size_t i = 0; i < labels.numel(); ++i) m[i] = static_cast<std::size_t>(labels[i]) == label;
  return m;
}

void redraw_texture(sim::MediumMap& medium, const EllipsePhantomConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kTextureStream, 0));
  medium.density.resize(medium.nz * medium.nx);
  for (auto& r : medium.density) {
    r = static_cast<float>(cfg.density * (1.0 + cfg.texture * rng.uniform(-1.0, 1.0)));
  }
}

PhantomSample gen_ellipsoid_medium(std::uint64_t seed, const EllipsePhantomConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(seed, kGeometryStream, 0));
  PhantomSample out;
  out.seed = seed;
  out.background = static_cast<float>(rng.uniform(cfg.bg_min, cfg.bg_max));

  const double z_hi = static_cast<double>(cfg.gt_h * cfg.gt_step) * cfg.dx;
  const double x_lo = static_cast<double>(cfg.gt_col0) * cfg.dx;
  const double x_hi = static_cast<double>(cfg.gt_col0 + cfg.gt_w * cfg.gt_step) * cfg.dx;
  const auto count = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.count_min), static_cast<std::int64_t>(cfg.count_max)));

  for (std::size_t k = 0; k < count; ++k) {
    Ellipse e;
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      e.cz = rng.uniform(0.0, z_hi);
      e.cx = rng.uniform(x_lo, x_hi);
      e.a = rng.uniform(cfg.axis_min, cfg.axis_max);
      e.b = rng.uniform(cfg.axis_min, cfg.axis_max);
      e.angle = rng.uniform(0.0, std::numbers::pi);
      placed = true;
      if (!cfg.allow_overlap) {
        // Bounding circles keep the test conservative.
        for (const auto& o : out.ellipses) {
          const double d = std::hypot(e.cz - o.cz, e.cx - o.cx);
          if (d <= std::max(e.a, e.b) + std::max(o.a, o.b)) {
            placed = false;
            break;
          }
        }
      }
    }
    if (!placed) {
      throw GenerationError("could not place ellipse " + std::to_string(k + 1) + " without overlap after " +
                            std::to_string(cfg.max_retries) + " attempts (seed " + std::to_string(seed) + ")");
    }
    bool drawn = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries && !drawn; ++attempt) {
      e.sos = static_cast<float>(rng.uniform(cfg.inc_min, cfg.inc_max));
      drawn = std::abs(e.sos - out.background) >= cfg.min_contrast;
    }
    if (!drawn) throw GenerationError("could not draw an inclusion SoS meeting min_contrast");
    out.ellipses.push_back(e);
  }

  auto& m = out.medium;
  m = sim::MediumMap::homogeneous(cfg.nz, cfg.nx, cfg.dx, out.background, cfg.density);
  m.attenuation_db_mhz_cm = cfg.attenuation_db_mhz_cm;
  m.id = "ellipse-" + std::to_string(seed);
  std::vector<std::uint16_t> cell_label(cfg.nz * cfg.nx, 0);
  for (std::size_t k = 0; k < out.ellipses.size(); ++k) {
    const auto& e = out.ellipses[k];
    const double r = std::max(e.a, e.b);
    const auto i0 = static_cast<std::size_t>(std::max(0.0, std::floor((e.cz - r) / cfg.dx)));
    const auto i1 = std::min(cfg.nz, static_cast<std::size_t>(std::max(0.0, std::ceil((e.cz + r) / cfg.dx))) + 1);
    const auto j0 = static_cast<std::size_t>(std::max(0.0, std::floor((e.cx - r) / cfg.dx)));
    const auto j1 = std::min(cfg.nx, static_cast<std::size_t>(std::max(0.0, std::ceil((e.cx + r) / cfg.dx))) + 1);
    for (std::size_t i = i0; i < i1; ++i) {
      for (std::size_t j = j0; j < j1; ++j) {
        if (e.contains((static_cast<double>(i) + 0.5) * cfg.dx, (static_cast<double>(j) + 0.5) * cfg.dx)) {
          m.c(i, j) = e.sos;
          cell_label[i * cfg.nx + j] = static_cast<std::uint16_t>(k + 1);
        }
      }
    }
  }
  redraw_texture(m, cfg, seed);

  // GT view; inclusions that leave no GT pixel (fully painted over or outside
  // the view) are dropped and the rest renumbered in painting order.
  out.sos_map = Tensor(Shape{cfg.gt_h, cfg.gt_w});
  out.labels = Tensor(Shape{cfg.gt_h, cfg.gt_w});
  std::vector<std::size_t> remap(out.ellipses.size() + 1, 0);
  std::vector<std::size_t> raw(cfg.gt_h * cfg.gt_w);
  for (std::size_t i = 0; i < cfg.gt_h; ++i) {
    for (std::size_t j = 0; j < cfg.gt_w; ++j) {
      const std::size_t mi = i * cfg.gt_step, mj = cfg.gt_col0 + j * cfg.gt_step;
      out.sos_map.at(i, j) = m.c(mi, mj);
      raw[i * cfg.gt_w + j] = cell_label[mi * cfg.nx + mj];
      remap[raw[i * cfg.gt_w + j]] = 1;
    }
  }
  for (std::size_t k = 1; k < remap.size(); ++k) {
    if (remap[k]) {
      out.inclusion_sos.push_back(out.ellipses[k - 1].sos);
      remap[k] = out.inclusion_sos.size();
    }
  }
  remap[0] = 0;
  for (std::size_t p = 0; p < raw.size(); ++p) out.labels[p] = static_cast<float>(remap[raw[p]]);
  return out;
}

}  // namespace autospeed::phantom
