#pragma once

#include <vector>

#include "maxtomo/common.hpp"
#include "maxtomo/forward.hpp"

namespace maxtomo {

struct CalibrationOptions {
  int max_iterations = 500;
  double pgtol = 1e-14;
};

struct CalibrationResult {
  std::vector<cplx> q;  // gauge-fixed: q[0] real and positive
  double residual = 0.0;  // data-consistency f_d of q * measured against simulated
  int iterations = 0;
  std::string stop_reason;
};

/// Applies per-channel complex weights to the measured maps.
B1Set apply_calibration(const B1Set& measured, const std::vector<cplx>& q);

/// f_d between q-weighted measured maps and simulated maps.
double calibration_residual(const B1Set& measured, const B1Set& simulated, const std::vector<RVec>& weights,
                            const std::vector<cplx>& q);

/// Fits q so that q_l * measured_l matches simulated_l in the data-consistency sense.
/// `weights` are per-channel full-grid voxel weights (zero outside the mask).
CalibrationResult calibrate(const B1Set& measured, const B1Set& simulated, const std::vector<RVec>& weights,
                            const CalibrationOptions& opts = {});

/// q * v_target / v_ref
std::vector<cplx> cross_calibration_scale(const std::vector<cplx>& q, double v_target, double v_ref);

}  // namespace maxtomo
