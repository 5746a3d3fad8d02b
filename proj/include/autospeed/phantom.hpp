#pragma once

#include <cstdint>
#include <vector>

#include "autospeed/sim.hpp"
#include "autospeed/tensor.hpp"

namespace autospeed::phantom {

struct EllipsePhantomConfig {
  float bg_min = 1300.0f, bg_max = 1700.0f;
  float inc_min = 1300.0f, inc_max = 1700.0f;
  std::size_t count_min = 1, count_max = 5;
  double axis_min = 0.8e-3, axis_max = 2.5e-3;  // semi-axis lengths (m)
  bool allow_overlap = true;
  // Inclusion SoS is redrawn until |inc - bg| reaches this (m/s).
  float min_contrast = 1.0f;
  double texture = 0.02;  // relative density perturbation amplitude
  float density = 1020.0f;
  double attenuation_db_mhz_cm = 0.75;
  std::size_t max_retries = 200;

  // Medium grid and the ground-truth view over the probe aperture.
  std::size_t nz = 192, nx = 384;
  double dx = 5e-5;
  std::size_t gt_h = 96, gt_w = 96;
  std::size_t gt_col0 = 96;  // first medium column covered by the GT map
  std::size_t gt_step = 2;   // medium cells per GT pixel

  void validate() const;
};

struct Ellipse {
  double cz = 0, cx = 0;  // centre (m), depth and lateral in medium coordinates
  double a = 0, b = 0;    // semi-axes (m)
  double angle = 0;       // rotation (rad)
  float sos = 0;

  bool contains(double z, double x) const;
};

struct PhantomSample {
  Tensor sos_map;  // [gt_h, gt_w]
  // Region label per GT pixel: 0 background, k for inclusion k (1-based).
  // Labels are disjoint by construction.
  Tensor labels;
  sim::MediumMap medium;
  float background = 0;
  std::vector<float> inclusion_sos;  // indexed by label - 1
  std::vector<Ellipse> ellipses;     // as drawn, in painting order
  std::uint64_t seed = 0;

  std::size_t region_count() const { return inclusion_sos.size() + 1; }
  // Binary mask for a region label.
  std::vector<bool> mask(std::size_t label) const;
};

PhantomSample gen_ellipsoid_medium(std::uint64_t seed, const EllipsePhantomConfig& cfg);

// Redraws the density texture of a medium with a new seed, leaving SoS alone.
void redraw_texture(sim::MediumMap& medium, const EllipsePhantomConfig& cfg, std::uint64_t seed);

}  // namespace autospeed::phantom
