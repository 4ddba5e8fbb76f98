#pragma once

// Small reference instances shared by `maxtomo gradcheck` and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <vector>

#include "maxtomo/coil.hpp"
#include "maxtomo/forward.hpp"
#include "maxtomo/gmt.hpp"
#include "maxtomo/grid.hpp"

namespace maxtomo::oracle {

/// size^3 fully masked block at 1 cm, two compartments split at x = 0, inside 12-segment loops.
struct GradInstance {
  EPMap ep;
  Scene scene;
  Measurements meas;
  std::vector<IncidentFields> incident;  // from the data-generating coil currents
  RVec eps_r, sigma;                     // evaluation point
};

inline GradInstance grad_instance(int size, int channels, double loop_span_rad = 1.0) {
  const double omega = angular(kLarmor7T);
  const VoxelGrid g = centered_grid({size, size, size}, 0.01);
  EPMap ep(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const bool inner = g.center(i).x() < 0.0;
    ep.set(i, inner ? 75.0 : 59.0, inner ? 1.87 : 0.7);
  }
  LoopArraySpec s;
  s.channels = channels;
  s.former_radius_m = 0.0125 * size;
  s.loop_length_m = 0.015 * size;
  s.loop_span_rad = loop_span_rad;
  s.segments_per_loop = 12;
  s.capacitors_per_loop = 2;
  s.capacitance_f = 10e-12;
  s.capacitor_esr_ohm = 0.5;
  const WireCoil coil = make_loop_array(s, mask_bounding_box(ep));

  GradInstance c{ep, make_scene(ep, coil, omega), {}, {}, {}, {}};
  const auto field = complex_permittivity(ep, omega);
  std::vector<cplx> eps;
  for (auto v : c.scene.masked) eps.push_back(field.eps[v]);
  SolverConfig tight;
  tight.tolerance = 1e-13;
  tight.max_iterations = 2000;
  const auto truth = simulate_vsie(c.scene, eps, tight);
  std::vector<CVec> currents;
  for (const auto& t : truth) currents.push_back(t.jc);
  c.incident = incident_from_currents(c.scene, currents);
  c.meas = make_measurements(to_b1set(c.scene, truth), ep.mask, WeightMode::Sqrt);
  const auto n = static_cast<Eigen::Index>(c.scene.masked.size());
  c.eps_r = RVec::Constant(n, 21.1);
  c.sigma = RVec::Constant(n, 0.2);
  return c;
}

inline GmtConfig grad_config(ForwardMode mode) {
  GmtConfig cfg;
  cfg.mode = mode;
  cfg.solver.tolerance = 1e-14;
  cfg.solver.max_iterations = 2000;
  return cfg;
}

/// Largest componentwise relative error of the analytic f_d gradient against central
/// differences with relative step 1e-4, over every masked voxel and both parameters.
inline double fd_gradient_error(GradInstance& c, const GmtConfig& cfg) {
  GmtObjective obj(c.scene, c.meas, cfg, c.incident);
  const auto v = obj.evaluate(c.eps_r, c.sigma, true);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < c.eps_r.size(); ++k) {
    for (int which = 0; which < 2; ++which) {
      RVec e = c.eps_r, s = c.sigma;
      RVec& x = which == 0 ? e : s;
      const double h = 1e-4 * x[k];
      x[k] += h;
      const double fp = obj.evaluate(e, s, false).fd;
      x[k] -= 2 * h;
      const double fm = obj.evaluate(e, s, false).fd;
      const double fdiff = (fp - fm) / (2 * h);
      const double an = which == 0 ? v.d_eps_r[k] : v.d_sigma[k];
      worst = std::max(worst, std::abs(an - fdiff) / std::abs(fdiff));
    }
  }
  return worst;
}

}  // namespace maxtomo::oracle
