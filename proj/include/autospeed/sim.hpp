#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autospeed/tensor.hpp"

namespace autospeed::sim {

// Heterogeneous 2D medium. Row index is depth (z), column index is lateral (x).
struct MediumMap {
  std::size_t nz = 0;
  std::size_t nx = 0;
  double dx = 5e-5;                       // grid spacing (m), isotropic
  std::vector<float> sos;                 // m/s, nz*nx
  std::vector<float> density;             // kg/m^3, nz*nx
  double attenuation_db_mhz_cm = 0.75;    // dB/(MHz*cm)
  std::string id;

  static MediumMap homogeneous(std::size_t nz, std::size_t nx, double dx, float c, float rho);

  float& c(std::size_t i, std::size_t j) { return sos[i * nx + j]; }
  float c(std::size_t i, std::size_t j) const { return sos[i * nx + j]; }
  float& rho(std::size_t i, std::size_t j) { return density[i * nx + j]; }
  float rho(std::size_t i, std::size_t j) const { return density[i * nx + j]; }

  double c_min() const;
  double c_max() const;
  // Throws GeometryError / ValidationError. With phantom_range set, every SoS
  // value must lie in [1300, 1700] m/s.
  void validate(bool phantom_range = false) const;
};

struct ProbeSpec {
  std::size_t elements = 48;
  double pitch = 2e-4;            // m
  double center_freq = 5e6;       // Hz
  double sampling_freq = 40e6;    // Hz
  std::size_t samples = 512;

  double aperture() const { return static_cast<double>(elements) * pitch; }
  void validate() const;
};

struct PulseSpec {
  double cycles = 3.0;     // Gaussian-windowed toneburst length
  double amplitude = 1.0;  // source volume velocity (arbitrary units, removed by the gain)
};

struct AbsorbingLayer {
  std::size_t cells = 20;
  double strength_np = 8.0;  // one-way amplitude attenuation across the layer (nepers)
  bool top = true, bottom = true, left = true, right = true;
};

struct SimGrid {
  double dx = 5e-5;
  double dt = 0.0;
  std::size_t steps = 0;
  std::size_t substeps = 1;     // solver steps per RF sample
  std::size_t pre_steps = 0;    // steps before the pulse centre (time zero)
  double cfl = 0.45;
  AbsorbingLayer layer;
};

struct SimOptions {
  double cfl = 0.45;
  AbsorbingLayer layer;
  bool attenuation = true;
  PulseSpec pulse;
  // Extra blanked samples after the transmit pulse.
  std::size_t blank_margin = 4;
  // Tukey taper fraction of the transmit apodization; softens the edge waves
  // radiated by the aperture ends. 0 transmits uniformly.
  double tx_taper = 0.25;
  // Probe depth below the top medium row (cells).
  std::size_t probe_row = 0;
};

struct RFFrame {
  Tensor data;  // [channels, samples]
  ProbeSpec probe;
  std::uint64_t seed = 0;
  std::string medium_id;
  double gain = 1.0;
};

// dt = cfl * dx / c_max.
double cfl_timestep(double dx, double c_max, double cfl);

// Largest stable Courant number of the 4th-order staggered scheme in 2D.
double stability_limit();

// Time grid for a probe: dt is the CFL step snapped down to an integer
// divisor of the sampling period, and time zero sits on a sample boundary at
// the pulse centre.
SimGrid make_sim_grid(double dx, double c_max, const ProbeSpec& probe, const SimOptions& opts);

// Precomputed per-point update coefficients on the padded computational grid.
struct FdtdMedium {
  std::size_t nz = 0, nx = 0;  // padded extents
  std::size_t pad_top = 0, pad_left = 0;
  double dx = 0.0, dt = 0.0;
  // Arrays use the ghost-padded layouts of FdtdState.
  std::vector<float> kdt;  // rho c^2 dt / dx at cells
  std::vector<float> bx;   // dt / (rho dx) at x faces
  std::vector<float> bz;   // dt / (rho dx) at z faces
  std::vector<float> ap, avx, avz;  // multiplicative damping per step

  static FdtdMedium build(const MediumMap& m, double dt, const AbsorbingLayer& layer, bool attenuation,
                          double center_freq);
};

// Fields carry two rings of zero ghost cells so the stencils need no
// boundary branches. Faces on the outer walls are rigid (v = 0).
struct FdtdState {
  static constexpr std::size_t ghost = 2;
  std::size_t nz = 0, nx = 0;
  std::vector<float> p;   // (nz+4) x (nx+4)
  std::vector<float> vx;  // (nz+4) x (nx+5)
  std::vector<float> vz;  // (nz+5) x (nx+4)
  std::size_t step = 0;
  std::size_t check_interval = 1;  // non-finite scan cadence (steps)

  explicit FdtdState(const FdtdMedium& m);
  std::size_t p_index(std::size_t i, std::size_t j) const { return (i + ghost) * (nx + 2 * ghost) + j + ghost; }
  float& pressure(std::size_t i, std::size_t j) { return p[p_index(i, j)]; }
  float pressure(std::size_t i, std::size_t j) const { return p[p_index(i, j)]; }
};

// One leapfrog update: velocities from the pressure gradient, then pressure
// from the velocity divergence. Throws NumericalError on non-finite values.
void step_fdtd(FdtdState& state, const FdtdMedium& medium);

// Acoustic energy 1/2 sum(p^2/(rho c^2) + rho v^2) dx^2 on the grid, with the
// staggered velocities averaged in time (the discrete invariant).
double acoustic_energy(const FdtdState& state, const FdtdMedium& medium);

// Transmit waveform (volume velocity) at time t relative to the pulse centre.
double pulse_waveform(double t, double center_freq, const PulseSpec& pulse);
// Half duration of the transmit waveform (s).
double pulse_half_duration(double center_freq, const PulseSpec& pulse);

// Zero-degree plane-wave transmit from every element, pressure recorded at the
// element positions, unscaled. [channels, samples]; the transmit pulse is
// blanked.
Tensor simulate_raw(const MediumMap& medium, const ProbeSpec& probe, const SimGrid& grid,
                    const SimOptions& opts);

// Amplitude such that the 99.9th percentile of |values| over all frames maps to 1000.
double percentile_gain(const std::vector<const Tensor*>& frames, double quantile = 0.999,
                       double target = 1000.0);
// Scales by gain and clips into [-1024, 1024].
Tensor apply_gain(const Tensor& raw, double gain);

// simulate_raw followed by gain scaling. A non-positive gain calibrates the
// gain on this frame alone.
RFFrame simulate_rf(const MediumMap& medium, const ProbeSpec& probe, const SimGrid& grid,
                    const SimOptions& opts, double gain = 0.0, std::uint64_t seed = 0);

}  // namespace autospeed::sim
