#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "maxtomo/common.hpp"

namespace maxtomo {

using Vec3 = Eigen::Vector3d;

/// Regular isotropic voxel grid; x is the fastest-varying index.
struct VoxelGrid {
  std::array<int, 3> dims{1, 1, 1};
  double resolution = 1.0;              // m, voxel edge
  std::array<double, 3> origin{0, 0, 0};  // m, corner of voxel (0,0,0)

  VoxelGrid() = default;
  VoxelGrid(std::array<int, 3> d, double res, std::array<double, 3> o = {0, 0, 0});

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(dims[0]) * (j + static_cast<std::size_t>(dims[1]) * k);
  }
  std::array<int, 3> ijk(std::size_t idx) const;
  Vec3 center(int i, int j, int k) const;
  Vec3 center(std::size_t idx) const;
  double voxel_volume() const { return resolution * resolution * resolution; }
  Vec3 lower() const { return {origin[0], origin[1], origin[2]}; }
  Vec3 upper() const;

  bool operator==(const VoxelGrid&) const = default;
};

/// Voxel grid centred on the coordinate origin.
VoxelGrid centered_grid(std::array<int, 3> dims, double resolution);

/// Per-voxel relative permittivity, conductivity (S/m) and sample mask.
struct EPMap {
  VoxelGrid grid;
  std::vector<double> eps_r;
  std::vector<double> sigma;
  std::vector<std::uint8_t> mask;

  explicit EPMap(const VoxelGrid& g = {});

  /// Indices of masked voxels in ascending order.
  std::vector<std::size_t> masked_indices() const;
  std::size_t masked_count() const;
  /// Checks eps_r >= 1, sigma >= 0 inside and exact vacuum outside the mask.
  void validate() const;
  void set(std::size_t idx, double er, double sig);

  bool operator==(const EPMap&) const = default;
};

struct ComplexPermittivityField {
  VoxelGrid grid;
  std::vector<cplx> eps;
  std::vector<std::uint8_t> mask;
  double omega = 0.0;
};

/// eps = eps_r + sigma / (i omega eps0); exactly 1 outside the mask.
ComplexPermittivityField complex_permittivity(const EPMap& ep, double omega);
cplx complex_permittivity(double eps_r, double sigma, double omega);

enum class PhantomShape { Cylinder, TwoCompartmentCylinder, LayeredSphere };

struct Compartment {
  double eps_r = 1.0;
  double sigma = 0.0;
  bool operator==(const Compartment&) const = default;
};

/// Analytic phantom geometry. Cylinders are z-aligned.
///
/// radii_m / compartments are listed outermost first:
///   Cylinder:               one radius, one compartment
///   TwoCompartmentCylinder: {outer, inner}; the inner axis is shifted by inner_offset_m
///   LayeredSphere:          strictly decreasing radii, any count (zero = empty)
struct PhantomSpec {
  PhantomShape shape = PhantomShape::Cylinder;
  std::optional<Vec3> center;  // defaults to the grid centre
  double length_m = 0.0;
  std::vector<double> radii_m;
  std::vector<Compartment> compartments;
  std::array<double, 2> inner_offset_m{0.0, 0.0};

  /// Throws InvalidArgument on inconsistent geometry.
  void validate() const;
  /// Compartment index containing point p (0 = outermost), or -1.
  int compartment_of(const Vec3& p, const Vec3& centre) const;
};

EPMap build_cylinder_phantom(const PhantomSpec& spec, const VoxelGrid& grid);
EPMap build_layered_sphere_phantom(const PhantomSpec& spec, const VoxelGrid& grid);
/// Dispatches on spec.shape.
EPMap build_phantom(const PhantomSpec& spec, const VoxelGrid& grid);

/// Per-voxel compartment label (-1 outside) using the same membership test as the builders.
std::vector<int> compartment_labels(const PhantomSpec& spec, const VoxelGrid& grid);

}  // namespace maxtomo
