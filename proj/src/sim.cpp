#include "autospeed/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace autospeed::sim {

namespace {

constexpr float kC1 = 9.0f / 8.0f;
constexpr float kC2 = -1.0f / 24.0f;
constexpr std::size_t kGhost = FdtdState::ghost;

// With zero ghosts the discrete divergence is exactly the negative adjoint of
// the gradient, so the lossless closed scheme conserves energy.
struct Layout {
  std::size_t nz, nx;
  std::size_t sp() const { return nx + 2 * kGhost; }       // p and vz row stride
  std::size_t svx() const { return nx + 1 + 2 * kGhost; }  // vx row stride
  std::size_t p_size() const { return (nz + 2 * kGhost) * sp(); }
  std::size_t vx_size() const { return (nz + 2 * kGhost) * svx(); }
  std::size_t vz_size() const { return (nz + 1 + 2 * kGhost) * sp(); }
  std::size_t p_at(std::size_t i, std::size_t j) const { return (i + kGhost) * sp() + j + kGhost; }
  std::size_t vx_at(std::size_t i, std::size_t j) const { return (i + kGhost) * svx() + j + kGhost; }
  std::size_t vz_at(std::size_t i, std::size_t j) const { return (i + kGhost) * sp() + j + kGhost; }
};

double att_np_per_m(double db_mhz_cm, double freq_hz) {
  return db_mhz_cm * (freq_hz / 1e6) * 100.0 / (20.0 / std::numbers::ln10);
}

}  // namespace

MediumMap MediumMap::homogeneous(std::size_t nz, std::size_t nx, double dx, float c, float rho) {
  MediumMap m;
  m.nz = nz;
  m.nx = nx;
  m.dx = dx;
  m.sos.assign(nz * nx, c);
  m.density.assign(nz * nx, rho);
  return m;
}

double MediumMap::c_min() const { return sos.empty() ? 0.0 : *std::min_element(sos.begin(), sos.end()); }
double MediumMap::c_max() const { return sos.empty() ? 0.0 : *std::max_element(sos.begin(), sos.end()); }

void MediumMap::validate(bool phantom_range) const {
  if (nz == 0 || nx == 0) throw GeometryError("medium extents must be positive");
  if (!(dx > 0.0)) throw GeometryError("medium grid spacing must be positive");
  if (sos.size() != nz * nx || density.size() != nz * nx) {
    throw GeometryError("medium field sizes do not match extents " + std::to_string(nz) + "x" +
                        std::to_string(nx));
  }
  for (std::size_t i = 0; i < sos.size(); ++i) {
    if (!std::isfinite(sos[i]) || sos[i] <= 0.0f) throw ValidationError("non-positive SoS at cell " + std::to_string(i));
    if (!std::isfinite(density[i]) || density[i] <= 0.0f) {
      throw ValidationError("non-positive density at cell " + std::to_string(i));
    }
    if (phantom_range && (sos[i] < 1300.0f || sos[i] > 1700.0f)) {
      throw ValidationError("phantom SoS " + std::to_string(sos[i]) + " outside [1300,1700] m/s");
    }
  }
  if (attenuation_db_mhz_cm < 0.0) throw ValidationError("attenuation must be non-negative");
}

void ProbeSpec::validate() const {
  if (elements == 0 || samples == 0) throw ConfigError("probe needs at least one element and one sample");
  if (!(pitch > 0.0) || !(center_freq > 0.0)) throw ConfigError("probe pitch and center frequency must be positive");
  if (sampling_freq < 4.0 * center_freq) {
    throw ConfigError("sampling frequency must be at least 4x the center frequency");
  }
}

double cfl_timestep(double dx, double c_max, double cfl) {
  if (!(dx > 0.0) || !(c_max > 0.0)) throw ConfigError("cfl_timestep: dx and c_max must be positive");
  if (!(cfl > 0.0) || cfl > 0.5) throw ConfigError("cfl_timestep: cfl must lie in (0, 0.5]");
  return cfl * dx / c_max;
}

double stability_limit() { return 1.0 / (std::sqrt(2.0) * (9.0 / 8.0 + 1.0 / 24.0)); }

double pulse_half_duration(double center_freq, const PulseSpec& pulse) {
  return 0.5 * pulse.cycles / center_freq;
}

double pulse_waveform(double t, double center_freq, const PulseSpec& pulse) {
  const double half = pulse_half_duration(center_freq, pulse);
  if (std::abs(t) > half) return 0.0;
  const double sigma = half / 3.0;
  return pulse.amplitude * std::cos(2.0 * std::numbers::pi * center_freq * t) *
         std::exp(-0.5 * (t / sigma) * (t / sigma));
}

SimGrid make_sim_grid(double dx, double c_max, const ProbeSpec& probe, const SimOptions& opts) {
  probe.validate();
  const double dt_max = cfl_timestep(dx, c_max, opts.cfl);
  const double ts = 1.0 / probe.sampling_freq;
  SimGrid g;
  g.dx = dx;
  g.cfl = opts.cfl;
  g.layer = opts.layer;
  g.substeps = static_cast<std::size_t>(std::ceil(ts / dt_max * (1.0 - 1e-12)));
  g.dt = ts / static_cast<double>(g.substeps);
  const auto pre_samples =
      static_cast<std::size_t>(std::ceil(pulse_half_duration(probe.center_freq, opts.pulse) * probe.sampling_freq));
  g.pre_steps = pre_samples * g.substeps;
  g.steps = g.pre_steps + (probe.samples - 1) * g.substeps + 1;
  return g;
}

FdtdMedium FdtdMedium::build(const MediumMap& m, double dt, const AbsorbingLayer& layer, bool attenuation,
                             double center_freq) {
  m.validate();
  FdtdMedium f;
  const std::size_t L = layer.cells;
  f.pad_top = layer.top ? L : 0;
  f.pad_left = layer.left ? L : 0;
  f.nz = m.nz + f.pad_top + (layer.bottom ? L : 0);
  f.nx = m.nx + f.pad_left + (layer.right ? L : 0);
  f.dx = m.dx;
  f.dt = dt;
  const Layout lay{f.nz, f.nx};

  auto clamp_idx = [](std::ptrdiff_t v, std::size_t pad, std::size_t n) {
    const auto r = v - static_cast<std::ptrdiff_t>(pad);
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(r, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  auto cell_c = [&](std::size_t i, std::size_t j) {
    return static_cast<double>(m.c(clamp_idx(static_cast<std::ptrdiff_t>(i), f.pad_top, m.nz),
                                   clamp_idx(static_cast<std::ptrdiff_t>(j), f.pad_left, m.nx)));
  };
  auto cell_rho = [&](std::size_t i, std::size_t j) {
    return static_cast<double>(m.rho(clamp_idx(static_cast<std::ptrdiff_t>(i), f.pad_top, m.nz),
                                     clamp_idx(static_cast<std::ptrdiff_t>(j), f.pad_left, m.nx)));
  };

  // Depth into the absorbing layer (0..1) for a coordinate measured in cells.
  const double Ld = static_cast<double>(L);
  auto depth_z = [&](double y) {
    double d = 0.0;
    if (L == 0) return d;
    if (layer.top) d = std::max(d, (static_cast<double>(f.pad_top) - y) / Ld);
    if (layer.bottom) d = std::max(d, (y - static_cast<double>(f.pad_top + m.nz)) / Ld);
    return std::clamp(d, 0.0, 1.0);
  };
  auto depth_x = [&](double x) {
    double d = 0.0;
    if (L == 0) return d;
    if (layer.left) d = std::max(d, (static_cast<double>(f.pad_left) - x) / Ld);
    if (layer.right) d = std::max(d, (x - static_cast<double>(f.pad_left + m.nx)) / Ld);
    return std::clamp(d, 0.0, 1.0);
  };
  const double alpha = attenuation ? att_np_per_m(m.attenuation_db_mhz_cm, center_freq) : 0.0;
  auto damping = [&](double y, double x, double c) {
    double sigma = alpha * c;
    if (L > 0) {
      const double smax = 3.0 * layer.strength_np * c / (Ld * m.dx);
      const double dz = depth_z(y), dxl = depth_x(x);
      sigma += smax * (dz * dz + dxl * dxl);
    }
    return static_cast<float>(std::exp(-sigma * dt));
  };

  f.kdt.assign(lay.p_size(), 0.0f);
  f.ap.assign(lay.p_size(), 0.0f);
  for (std::size_t i = 0; i < f.nz; ++i) {
    for (std::size_t j = 0; j < f.nx; ++j) {
      const double c = cell_c(i, j), rho = cell_rho(i, j);
      f.kdt[lay.p_at(i, j)] = static_cast<float>(rho * c * c * dt / m.dx);
      f.ap[lay.p_at(i, j)] = damping(i + 0.5, j + 0.5, c);
    }
  }
  // Faces on the outer walls keep zero coefficients: rigid, v = 0.
  f.bx.assign(lay.vx_size(), 0.0f);
  f.avx.assign(lay.vx_size(), 0.0f);
  for (std::size_t i = 0; i < f.nz; ++i) {
    for (std::size_t j = 1; j < f.nx; ++j) {
      const double rho = 0.5 * (cell_rho(i, j - 1) + cell_rho(i, j));
      const double c = 0.5 * (cell_c(i, j - 1) + cell_c(i, j));
      f.bx[lay.vx_at(i, j)] = static_cast<float>(dt / (rho * m.dx));
      f.avx[lay.vx_at(i, j)] = damping(i + 0.5, static_cast<double>(j), c);
    }
  }
  f.bz.assign(lay.vz_size(), 0.0f);
  f.avz.assign(lay.vz_size(), 0.0f);
  for (std::size_t i = 1; i < f.nz; ++i) {
    for (std::size_t j = 0; j < f.nx; ++j) {
      const double rho = 0.5 * (cell_rho(i - 1, j) + cell_rho(i, j));
      const double c = 0.5 * (cell_c(i - 1, j) + cell_c(i, j));
      f.bz[lay.vz_at(i, j)] = static_cast<float>(dt / (rho * m.dx));
      f.avz[lay.vz_at(i, j)] = damping(static_cast<double>(i), j + 0.5, c);
    }
  }
  return f;
}

FdtdState::FdtdState(const FdtdMedium& m) : nz(m.nz), nx(m.nx) {
  const Layout lay{nz, nx};
  p.assign(lay.p_size(), 0.0f);
  vx.assign(lay.vx_size(), 0.0f);
  vz.assign(lay.vz_size(), 0.0f);
}

void step_fdtd(FdtdState& s, const FdtdMedium& m) {
  if (s.nz != m.nz || s.nx != m.nx) throw DimensionError("FDTD state does not match medium extents");
  const Layout lay{m.nz, m.nx};
  const std::size_t SP = lay.sp();
  float* __restrict p = s.p.data();
  float* __restrict vx = s.vx.data();
  float* __restrict vz = s.vz.data();

  // vx at faces j = 1..nx-1: gradient of p along x.
  for (std::size_t i = 0; i < m.nz; ++i) {
    const float* __restrict pr = p + lay.p_at(i, 0);
    float* __restrict vr = vx + lay.vx_at(i, 0);
    const float* __restrict br = m.bx.data() + lay.vx_at(i, 0);
    const float* __restrict ar = m.avx.data() + lay.vx_at(i, 0);
    for (std::size_t j = 1; j < m.nx; ++j) {
      const float g = kC1 * (pr[j] - pr[j - 1]) + kC2 * (pr[j + 1] - pr[static_cast<std::ptrdiff_t>(j) - 2]);
      vr[j] = ar[j] * (vr[j] - br[j] * g);
    }
  }
  // vz at faces i = 1..nz-1.
  for (std::size_t i = 1; i < m.nz; ++i) {
    const float* __restrict p0 = p + lay.p_at(i, 0);
    const float* __restrict pm1 = p0 - SP;
    const float* __restrict pp1 = p0 + SP;
    const float* __restrict pm2 = p0 - 2 * SP;
    float* __restrict vr = vz + lay.vz_at(i, 0);
    const float* __restrict br = m.bz.data() + lay.vz_at(i, 0);
    const float* __restrict ar = m.avz.data() + lay.vz_at(i, 0);
    for (std::size_t j = 0; j < m.nx; ++j) {
      const float g = kC1 * (p0[j] - pm1[j]) + kC2 * (pp1[j] - pm2[j]);
      vr[j] = ar[j] * (vr[j] - br[j] * g);
    }
  }
  // p at cells from the divergence.
  for (std::size_t i = 0; i < m.nz; ++i) {
    float* __restrict pr = p + lay.p_at(i, 0);
    const float* __restrict vxr = vx + lay.vx_at(i, 0);
    const float* __restrict vz0 = vz + lay.vz_at(i, 0);
    const float* __restrict vz1 = vz0 + SP;
    const float* __restrict vz2 = vz0 + 2 * SP;
    const float* __restrict vzm = vz0 - SP;
    const float* __restrict kr = m.kdt.data() + lay.p_at(i, 0);
    const float* __restrict ar = m.ap.data() + lay.p_at(i, 0);
    for (std::size_t j = 0; j < m.nx; ++j) {
      const float divx = kC1 * (vxr[j + 1] - vxr[j]) + kC2 * (vxr[j + 2] - vxr[static_cast<std::ptrdiff_t>(j) - 1]);
      const float divz = kC1 * (vz1[j] - vz0[j]) + kC2 * (vz2[j] - vzm[j]);
      pr[j] = ar[j] * (pr[j] - kr[j] * (divx + divz));
    }
  }

  ++s.step;
  if (s.check_interval > 0 && s.step % s.check_interval == 0) {
    double sum = 0.0;
    for (std::size_t i = 0; i < m.nz; ++i) {
      const float* pr = p + lay.p_at(i, 0);
      for (std::size_t j = 0; j < m.nx; ++j) sum += std::abs(pr[j]);
    }
    if (!std::isfinite(sum)) {
      throw NumericalError("FDTD blow-up: non-finite pressure detected at step " + std::to_string(s.step));
    }
  }
}

double acoustic_energy(const FdtdState& s, const FdtdMedium& m) {
  // Leapfrog invariant: the kinetic term pairs the stored velocities with the
  // ones the next step would produce, which makes it exact for the lossless
  // closed scheme instead of oscillating with the staggering.
  const Layout lay{m.nz, m.nx};
  const std::size_t SP = lay.sp();
  // kdt = rho c^2 dt/dx and b = dt/(rho dx) give 1/(rho c^2) = dt/(dx kdt), rho = dt/(dx b).
  const double r = m.dt / m.dx;
  double e = 0.0;
  for (std::size_t i = 0; i < m.nz; ++i) {
    const float* pr = s.p.data() + lay.p_at(i, 0);
    for (std::size_t j = 0; j < m.nx; ++j) {
      const double p = pr[j];
      e += 0.5 * p * p * r / m.kdt[lay.p_at(i, j)];
    }
    for (std::size_t j = 1; j < m.nx; ++j) {
      const auto k = lay.vx_at(i, j);
      const double g = kC1 * (pr[j] - pr[j - 1]) + kC2 * (pr[j + 1] - pr[static_cast<std::ptrdiff_t>(j) - 2]);
      const double v = s.vx[k];
      const double vn = m.avx[k] * (v - m.bx[k] * g);
      e += 0.5 * v * vn * r / m.bx[k];
    }
  }
  for (std::size_t i = 1; i < m.nz; ++i) {
    const float* p0 = s.p.data() + lay.p_at(i, 0);
    for (std::size_t j = 0; j < m.nx; ++j) {
      const auto k = lay.vz_at(i, j);
      const double g = kC1 * (p0[j] - (p0 - SP)[j]) + kC2 * ((p0 + SP)[j] - (p0 - 2 * SP)[j]);
      const double v = s.vz[k];
      const double vn = m.avz[k] * (v - m.bz[k] * g);
      e += 0.5 * v * vn * r / m.bz[k];
    }
  }
  return e * m.dx * m.dx;
}

Tensor simulate_raw(const MediumMap& medium, const ProbeSpec& probe, const SimGrid& grid,
                    const SimOptions& opts) {
  medium.validate();
  probe.validate();
  if (std::abs(grid.dx - medium.dx) > 1e-9 * medium.dx) {
    throw ConfigError("simulation grid spacing does not match the medium");
  }
  const double courant = medium.c_max() * grid.dt / medium.dx;
  if (courant > grid.cfl * (1.0 + 1e-9) || courant > stability_limit()) {
    throw StabilityError("CFL violation: c_max*dt/dx = " + std::to_string(courant) + " exceeds " +
                         std::to_string(std::min(grid.cfl, stability_limit())));
  }
  if (medium.c_min() / (probe.center_freq * medium.dx) < 3.0) {
    throw ConfigError("grid spacing resolves fewer than 3 points per wavelength at c_min");
  }
  const double cells_per_el = probe.pitch / medium.dx;
  const auto cpe = static_cast<std::size_t>(std::llround(cells_per_el));
  if (cpe == 0 || std::abs(cells_per_el - static_cast<double>(cpe)) > 1e-6) {
    throw GeometryError("probe pitch must be an integer multiple of the grid spacing");
  }
  const std::size_t aperture_cells = cpe * probe.elements;
  if (aperture_cells > medium.nx) {
    throw GeometryError("probe aperture (" + std::to_string(aperture_cells) + " cells) wider than medium (" +
                        std::to_string(medium.nx) + " cells)");
  }

  const auto fm = FdtdMedium::build(medium, grid.dt, grid.layer, opts.attenuation, probe.center_freq);
  FdtdState state(fm);
  state.check_interval = 64;
  const Layout lay{fm.nz, fm.nx};
  if (opts.probe_row >= medium.nz) throw GeometryError("probe row lies below the medium");
  const std::size_t row = fm.pad_top + opts.probe_row;
  const std::size_t col0 = fm.pad_left + (medium.nx - aperture_cells) / 2;

  if (opts.tx_taper < 0.0 || opts.tx_taper > 1.0) throw ConfigError("tx_taper must lie in [0, 1]");
  std::vector<float> apod(aperture_cells);
  for (std::size_t j = 0; j < aperture_cells; ++j) {
    const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(aperture_cells);
    const double edge = std::min(u, 1.0 - u);
    const double half = 0.5 * opts.tx_taper;
    const double w = edge >= half ? 1.0 : 0.5 * (1.0 - std::cos(std::numbers::pi * edge / half));
    apod[j] = static_cast<float>(w);
  }

  Tensor out(Shape{probe.elements, probe.samples});
  for (std::size_t n = 0; n < grid.steps; ++n) {
    step_fdtd(state, fm);
    const double t = (static_cast<double>(n) - static_cast<double>(grid.pre_steps)) * grid.dt;
    const double q = pulse_waveform(t, probe.center_freq, opts.pulse);
    if (q != 0.0) {
      for (std::size_t j = 0; j < aperture_cells; ++j) {
        const auto k = lay.p_at(row, col0 + j);
        state.p[k] += static_cast<float>(fm.kdt[k] * q) * apod[j];
      }
    }
    if (n >= grid.pre_steps && (n - grid.pre_steps) % grid.substeps == 0) {
      const std::size_t s = (n - grid.pre_steps) / grid.substeps;
      if (s >= probe.samples) break;
      for (std::size_t e = 0; e < probe.elements; ++e) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cpe; ++c) acc += state.p[lay.p_at(row, col0 + e * cpe + c)];
        out.at(e, s) = static_cast<float>(acc / static_cast<double>(cpe));
      }
    }
  }
  if (!out.all_finite()) throw NumericalError("simulation produced non-finite RF samples");

  // Blank the transmit pulse with a short raised-cosine ramp.
  const auto blank = static_cast<std::size_t>(
                         std::ceil(pulse_half_duration(probe.center_freq, opts.pulse) * probe.sampling_freq)) +
                     opts.blank_margin;
  constexpr std::size_t ramp = 4;
  for (std::size_t e = 0; e < probe.elements; ++e) {
    for (std::size_t s = 0; s < std::min(probe.samples, blank + ramp); ++s) {
      const double w = s < blank ? 0.0
                                 : 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(s - blank + 1) /
                                                         static_cast<double>(ramp + 1)));
      out.at(e, s) = static_cast<float>(out.at(e, s) * w);
    }
  }
  return out;
}

double percentile_gain(const std::vector<const Tensor*>& frames, double quantile, double target) {
  std::vector<float> mags;
  for (const auto* f : frames) {
    for (float v : f->vec()) mags.push_back(std::abs(v));
  }
  if (mags.empty()) throw ValidationError("percentile_gain: no samples");
  const auto k = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(mags.size() - 1)));
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
  const double ref = mags[k];
  if (!(ref > 0.0)) throw NumericalError("percentile_gain: reference amplitude is zero");
  return target / ref;
}

Tensor apply_gain(const Tensor& raw, double gain) {
  Tensor out = raw;
  for (auto& v : out.vec()) v = static_cast<float>(std::clamp(v * gain, -1024.0, 1024.0));
  return out;
}

RFFrame simulate_rf(const MediumMap& medium, const ProbeSpec& probe, const SimGrid& grid,
                    const SimOptions& opts, double gain, std::uint64_t seed) {
  RFFrame f;
  const Tensor raw = simulate_raw(medium, probe, grid, opts);
  f.gain = gain > 0.0 ? gain : percentile_gain({&raw});
  f.data = apply_gain(raw, f.gain);
  f.probe = probe;
  f.seed = seed;
  f.medium_id = medium.id;
  return f;
}

}  // namespace autospeed::sim
