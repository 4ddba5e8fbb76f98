#pragma once

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "maxtomo/common.hpp"
#include "maxtomo/grid.hpp"

namespace maxtomo {

using Mat3c = Eigen::Matrix3cd;

/// Free-space Green's function exp(-i k0 r) / (4 pi r).
cplx scalar_green(double r, double k0);

/// Integral of the scalar Green's function over the sphere of volume `voxel_volume`
/// centred on the observation point.
cplx self_term_scalar(double voxel_volume, double k0);

/// Galerkin block of the electric-field operator between two voxels separated by
/// `offset` (field voxel minus source voxel). Maps current density (A/m^2) to the
/// voxel-tested electric field. Zero offset returns the singular self block.
Mat3c electric_block(const Vec3& offset, double omega, double voxel_volume);

/// Electric block with the dyadic integrated over the source voxel of edge
/// `edge` (static part in closed form, remainder by Gauss quadrature) and
/// tested at the field-voxel centre, times the voxel volume.
Mat3c electric_block_integrated(const Vec3& offset, double omega, double edge);

/// Gauss-Legendre nodes/weights on [0, 1].
void gauss_legendre_unit(int n, std::vector<double>& x, std::vector<double>& w);

/// Same for the curl (magnetic-field) operator. Self block is zero.
Mat3c magnetic_block(const Vec3& offset, double k0, double voxel_volume);

/// Translation-invariant 3x3 block operator on a voxel grid, applied by
/// zero-padded circular convolution. Fields are component-major:
/// x[c * grid.size() + voxel].
class ToeplitzKernel {
 public:
  enum class Kind { Electric, Magnetic };

  ToeplitzKernel(Kind kind, const VoxelGrid& grid, double omega);

  Kind kind() const { return kind_; }
  const VoxelGrid& grid() const { return grid_; }
  double omega() const { return omega_; }
  double k0() const { return wavenumber(omega_); }

  /// Electric offsets with Chebyshev distance up to this many voxels use
  /// electric_block_integrated; farther ones use the midpoint form.
  static constexpr int near_reach() { return 1; }

  /// Block for a voxel offset in index units.
  Mat3c block(int di, int dj, int dk) const;

  /// y = K x over the whole grid. Sizes must be 3 * grid.size().
  void apply(std::span<const cplx> x, std::span<cplx> y) const;
  CVec apply(const CVec& x) const;

 private:
  struct Plans;
  Kind kind_;
  VoxelGrid grid_;
  double omega_;
  std::array<int, 3> ext_;  // embedded (circulant) dims
  std::size_t ext_size_;
  // Spectra of the unique component tables, ordered by pair_slot().
  std::vector<std::vector<cplx>> spectra_;
  std::shared_ptr<Plans> plans_;
};

ToeplitzKernel assemble_electric_kernel(const VoxelGrid& grid, double omega);
ToeplitzKernel assemble_magnetic_kernel(const VoxelGrid& grid, double omega);

/// Free function form of ToeplitzKernel::apply; throws on size mismatch.
CVec apply_kernel(const ToeplitzKernel& kernel, const CVec& x);

}  // namespace maxtomo
