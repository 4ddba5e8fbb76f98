#pragma once

#include <vector>

#include "maxtomo/coil.hpp"
#include "maxtomo/forward.hpp"
#include "maxtomo/grid.hpp"

namespace testprob {

using namespace maxtomo;

inline const double kOmega = angular(kLarmor7T);

// 4x4x4 fully masked two-compartment block inside 12-segment loops.
struct Small {
  EPMap ep;
  WireCoil coil;
  Scene scene;
  std::vector<cplx> eps;
};

inline Small small_problem(int channels = 1) {
  const VoxelGrid g = centered_grid({4, 4, 4}, 0.01);
  EPMap ep(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const bool inner = g.center(i).x() < 0.0;
    ep.set(i, inner ? 75.0 : 59.0, inner ? 1.87 : 0.7);
  }
  LoopArraySpec s;
  s.channels = channels;
  s.former_radius_m = 0.05;
  s.loop_length_m = 0.06;
  s.loop_span_rad = 1.0;
  s.segments_per_loop = 12;
  s.capacitors_per_loop = 2;
  s.capacitance_f = 10e-12;
  s.capacitor_esr_ohm = 0.5;
  Small p{ep, make_loop_array(s, mask_bounding_box(ep)), {}, {}};
  p.scene = make_scene(p.ep, p.coil, kOmega);
  const auto field = complex_permittivity(p.ep, kOmega);
  for (auto v : p.scene.masked) p.eps.push_back(field.eps[v]);
  return p;
}

}  // namespace testprob
