#include "maxtomo/grid.hpp"

#include <algorithm>
#include <cmath>

namespace maxtomo {

VoxelGrid::VoxelGrid(std::array<int, 3> d, double res, std::array<double, 3> o)
    : dims(d), resolution(res), origin(o) {
  if (!(res > 0.0)) throw InvalidArgument("grid resolution must be positive");
  for (int n : d)
    if (n < 1) throw InvalidArgument("grid dimensions must be >= 1");
}

std::array<int, 3> VoxelGrid::ijk(std::size_t idx) const {
  const int i = static_cast<int>(idx % dims[0]);
  idx /= dims[0];
  const int j = static_cast<int>(idx % dims[1]);
  const int k = static_cast<int>(idx / dims[1]);
  return {i, j, k};
}

Vec3 VoxelGrid::center(int i, int j, int k) const {
  return {origin[0] + resolution * (i + 0.5), origin[1] + resolution * (j + 0.5),
          origin[2] + resolution * (k + 0.5)};
}

Vec3 VoxelGrid::center(std::size_t idx) const {
  const auto [i, j, k] = ijk(idx);
  return center(i, j, k);
}

Vec3 VoxelGrid::upper() const {
  return {origin[0] + resolution * dims[0], origin[1] + resolution * dims[1],
          origin[2] + resolution * dims[2]};
}

VoxelGrid centered_grid(std::array<int, 3> dims, double resolution) {
  return VoxelGrid(dims, resolution,
                   {-0.5 * dims[0] * resolution, -0.5 * dims[1] * resolution,
                    -0.5 * dims[2] * resolution});
}

EPMap::EPMap(const VoxelGrid& g)
    : grid(g), eps_r(g.size(), 1.0), sigma(g.size(), 0.0), mask(g.size(), 0) {}

std::vector<std::size_t> EPMap::masked_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

std::size_t EPMap::masked_count() const {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
}

void EPMap::validate() const {
  const std::size_t n = grid.size();
  if (eps_r.size() != n || sigma.size() != n || mask.size() != n)
    throw InvalidArgument("EP map field sizes do not match the grid");
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) {
      if (!(eps_r[i] >= 1.0) || !(sigma[i] >= 0.0))
        throw InvalidArgument("masked voxel with eps_r < 1 or sigma < 0");
    } else if (eps_r[i] != 1.0 || sigma[i] != 0.0) {
      throw InvalidArgument("unmasked voxel is not vacuum");
    }
  }
}

void EPMap::set(std::size_t idx, double er, double sig) {
  eps_r[idx] = er;
  sigma[idx] = sig;
  mask[idx] = 1;
}

cplx complex_permittivity(double eps_r, double sigma, double omega) {
  if (!(omega > 0.0)) throw InvalidArgument("omega must be positive");
  return cplx(eps_r, 0.0) + sigma / cplx(0.0, omega * kEps0);
}

ComplexPermittivityField complex_permittivity(const EPMap& ep, double omega) {
  if (!(omega > 0.0)) throw InvalidArgument("omega must be positive");
  ComplexPermittivityField out{ep.grid, std::vector<cplx>(ep.grid.size(), cplx(1.0, 0.0)), ep.mask, omega};
  for (std::size_t i = 0; i < out.eps.size(); ++i)
    if (ep.mask[i]) out.eps[i] = complex_permittivity(ep.eps_r[i], ep.sigma[i], omega);
  return out;
}

void PhantomSpec::validate() const {
  if (radii_m.size() != compartments.size())
    throw InvalidArgument("phantom needs one compartment per radius");
  for (const auto& c : compartments)
    if (!(c.eps_r >= 1.0) || !(c.sigma >= 0.0))
      throw InvalidArgument("compartment needs eps_r >= 1 and sigma >= 0");
  for (double r : radii_m)
    if (!(r > 0.0)) throw InvalidArgument("phantom radii must be positive");
  switch (shape) {
    case PhantomShape::Cylinder:
      if (radii_m.size() != 1) throw InvalidArgument("cylinder phantom takes exactly one radius");
      if (!(length_m > 0.0)) throw InvalidArgument("cylinder length must be positive");
      break;
    case PhantomShape::TwoCompartmentCylinder: {
      if (radii_m.size() != 2) throw InvalidArgument("two-compartment phantom takes {outer, inner} radii");
      if (!(length_m > 0.0)) throw InvalidArgument("cylinder length must be positive");
      const double off = std::hypot(inner_offset_m[0], inner_offset_m[1]);
      if (!(radii_m[1] + off < radii_m[0]))
        throw InvalidArgument("inner compartment must lie strictly inside the outer one");
      break;
    }
    case PhantomShape::LayeredSphere:
      for (std::size_t i = 1; i < radii_m.size(); ++i)
        if (!(radii_m[i] < radii_m[i - 1]))
          throw InvalidArgument("layered sphere radii must be strictly decreasing");
      break;
  }
}

int PhantomSpec::compartment_of(const Vec3& p, const Vec3& c) const {
  const Vec3 d = p - c;
  switch (shape) {
    case PhantomShape::Cylinder:
    case PhantomShape::TwoCompartmentCylinder: {
      if (std::abs(d.z()) > 0.5 * length_m) return -1;
      if (d.x() * d.x() + d.y() * d.y() > radii_m[0] * radii_m[0]) return -1;
      if (shape == PhantomShape::TwoCompartmentCylinder) {
        const double dx = d.x() - inner_offset_m[0], dy = d.y() - inner_offset_m[1];
        if (dx * dx + dy * dy <= radii_m[1] * radii_m[1]) return 1;
      }
      return 0;
    }
    case PhantomShape::LayeredSphere: {
      int label = -1;
      const double r2 = d.squaredNorm();
      for (std::size_t i = 0; i < radii_m.size(); ++i)
        if (r2 <= radii_m[i] * radii_m[i]) label = static_cast<int>(i);
      return label;
    }
  }
  return -1;
}

namespace {

Vec3 grid_centre(const VoxelGrid& g) { return 0.5 * (g.lower() + g.upper()); }

EPMap fill(const PhantomSpec& spec, const VoxelGrid& grid) {
  EPMap ep(grid);
  const auto labels = compartment_labels(spec, grid);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) ep.set(i, spec.compartments[labels[i]].eps_r, spec.compartments[labels[i]].sigma);
  return ep;
}

}  // namespace

std::vector<int> compartment_labels(const PhantomSpec& spec, const VoxelGrid& grid) {
  const Vec3 c = spec.center.value_or(grid_centre(grid));
  std::vector<int> labels(grid.size(), -1);
  for (std::size_t i = 0; i < grid.size(); ++i) labels[i] = spec.compartment_of(grid.center(i), c);
  return labels;
}

EPMap build_cylinder_phantom(const PhantomSpec& spec, const VoxelGrid& grid) {
  if (spec.shape == PhantomShape::LayeredSphere)
    throw InvalidArgument("build_cylinder_phantom called with a sphere spec");
  spec.validate();
  const Vec3 c = spec.center.value_or(grid_centre(grid));
  const Vec3 lo = grid.lower(), hi = grid.upper();
  const double r = spec.radii_m[0], h = 0.5 * spec.length_m;
  constexpr double slack = 1e-12;
  if (c.x() - r < lo.x() - slack || c.x() + r > hi.x() + slack || c.y() - r < lo.y() - slack ||
      c.y() + r > hi.y() + slack || c.z() - h < lo.z() - slack || c.z() + h > hi.z() + slack)
    throw InvalidArgument("cylinder exceeds the grid bounds");
  return fill(spec, grid);
}

EPMap build_layered_sphere_phantom(const PhantomSpec& spec, const VoxelGrid& grid) {
  if (spec.shape != PhantomShape::LayeredSphere)
    throw InvalidArgument("build_layered_sphere_phantom called with a cylinder spec");
  spec.validate();
  return fill(spec, grid);
}

EPMap build_phantom(const PhantomSpec& spec, const VoxelGrid& grid) {
  return spec.shape == PhantomShape::LayeredSphere ? build_layered_sphere_phantom(spec, grid)
                                                   : build_cylinder_phantom(spec, grid);
}

}  // namespace maxtomo
