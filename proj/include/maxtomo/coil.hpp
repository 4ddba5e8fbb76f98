#pragma once

#include <array>
#include <optional>
#include <vector>

#include "maxtomo/common.hpp"
#include "maxtomo/grid.hpp"

namespace maxtomo {

/// Axis-aligned box, used as a keep-out region for coil conductors.
struct Box {
  Vec3 lo;
  Vec3 hi;
  bool intersects_segment(const Vec3& a, const Vec3& b) const;
};

/// Extent (voxel faces, not centres) of the masked voxels; nullopt for an empty mask.
std::optional<Box> mask_bounding_box(const EPMap& ep);

/// Thin-wire coil with triangular (hat) current basis functions.
///
/// Basis n peaks at node `node`; it ramps up along `seg_in` (which ends at the node)
/// and down along `seg_out` (which starts there). Coefficients are currents in A.
struct WireCoil {
  struct Basis {
    int node;
    int seg_in;
    int seg_out;
  };
  struct Port {
    int basis;
    cplx voltage;
    int channel;
  };
  /// Series R-L-C element in the gap at a basis node; capacitance 0 means no capacitor.
  struct Lumped {
    int basis;
    double resistance = 0.0;
    double inductance = 0.0;
    double capacitance = 0.0;
    cplx impedance(double omega) const;
  };

  std::vector<Vec3> nodes;
  std::vector<std::array<int, 2>> segments;
  double wire_radius = 1e-3;
  std::vector<Basis> basis;
  std::vector<Port> ports;
  std::vector<Lumped> lumped;

  std::size_t basis_count() const { return basis.size(); }
  int channel_count() const;
  double segment_length(int s) const { return (nodes[segments[s][1]] - nodes[segments[s][0]]).norm(); }
  void validate() const;
  /// Delta-gap excitation vector with the drive voltage of `channel` and zeros elsewhere.
  CVec excitation(int channel) const;
};

enum class LoopShape { Circle, Rectangle };

/// Loops placed around a z-aligned cylindrical former, one loop and one port per channel.
struct LoopArraySpec {
  int channels = 1;
  LoopShape shape = LoopShape::Rectangle;
  Vec3 axis_center{0, 0, 0};
  double former_radius_m = 0.1;
  double first_azimuth_rad = 0.0;
  /// Rectangle: axial length and angular span. Circle: loop radius.
  double loop_length_m = 0.1;
  double loop_span_rad = 0.6;
  double loop_radius_m = 0.03;
  int segments_per_loop = 12;
  double wire_radius_m = 1e-3;
  double drive_voltage = 1.0;
  /// Series termination of every port (source impedance).
  double port_resistance_ohm = 50.0;
  int capacitors_per_loop = 0;
  double capacitance_f = 0.0;
  double capacitor_esr_ohm = 0.0;
};

/// Builds the array. Throws InvalidArgument when a conductor crosses `keep_out`.
WireCoil make_loop_array(const LoopArraySpec& spec, const std::optional<Box>& keep_out = std::nullopt);

/// Thin-wire EFIE Galerkin matrix (reduced kernel); lumped impedances added on
/// the diagonal when `with_lumped`.
CMat assemble_Zcc(const WireCoil& coil, double omega, bool with_lumped = true);

/// Coil <-> body coupling blocks restricted to masked voxels (component-major rows).
///
/// `Zcb` is the block of the coupled coil/body system, i.e. minus the voxel-tested
/// electric field radiated by each coil basis function. `Kcb` is the voxel-tested
/// magnetic field.
struct CouplingOperators {
  CMat Zcb;
  CMat Kcb;
};

struct CouplingOptions {
  /// Gauss-Legendre panels per segment (4 points each); 0 picks ceil(length / resolution).
  int panels_per_segment = 0;
};

CouplingOperators assemble_coupling(const WireCoil& coil, const VoxelGrid& grid,
                                    const std::vector<std::size_t>& masked, double omega,
                                    const CouplingOptions& opts = {});

/// Tested fields on the masked voxels (component-major).
struct IncidentFields {
  CVec e_inc;
  CVec h_inc;
};

/// e_inc = -Zcb jc, h_inc = Kcb jc.
IncidentFields incident_fields(const CouplingOperators& ops, const CVec& jc);

}  // namespace maxtomo
