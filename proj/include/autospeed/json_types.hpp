#pragma once

// JSON mappings for configuration structs. Missing keys keep their defaults,
// so partial config files are valid.

#include "autospeed/phantom.hpp"
#include "autospeed/sim.hpp"
#include "json.hpp"

namespace autospeed::sim {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProbeSpec, elements, pitch, center_freq, sampling_freq, samples)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PulseSpec, cycles, amplitude)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AbsorbingLayer, cells, strength_np, top, bottom, left, right)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SimOptions, cfl, layer, attenuation, pulse, blank_margin, tx_taper,
                                                probe_row)

}  // namespace autospeed::sim

namespace autospeed::phantom {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EllipsePhantomConfig, bg_min, bg_max, inc_min, inc_max, count_min,
                                                count_max, axis_min, axis_max, allow_overlap, min_contrast, texture,
                                                density, attenuation_db_mhz_cm, max_retries, nz, nx, dx, gt_h, gt_w,
                                                gt_col0, gt_step)

}  // namespace autospeed::phantom
