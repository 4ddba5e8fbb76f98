#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "maxtomo/metrics.hpp"

using namespace maxtomo;
using Catch::Approx;

namespace {

// Direct summation over each 7^3 window, no separability.
double ssim_direct(const std::array<int, 3>& n, const std::vector<double>& x, const std::vector<double>& y,
                   const std::vector<std::uint8_t>& mask) {
  double L = -1e300;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (mask[i]) L = std::max(L, x[i]);
  const double C1 = std::pow(0.01 * L, 2), C2 = std::pow(0.03 * L, 2);
  double wsum = 0.0;
  for (int a = -3; a <= 3; ++a)
    for (int b = -3; b <= 3; ++b)
      for (int c = -3; c <= 3; ++c) wsum += std::exp(-(a * a + b * b + c * c) / (2 * 2.25));
  auto at = [&](const std::vector<double>& f, int i, int j, int k) { return f[i + n[0] * (j + n[1] * k)]; };
  double total = 0.0;
  int count = 0;
  for (int k = 3; k < n[2] - 3; ++k)
    for (int j = 3; j < n[1] - 3; ++j)
      for (int i = 3; i < n[0] - 3; ++i) {
        if (!mask[i + n[0] * (j + n[1] * k)]) continue;
        double mx = 0, my = 0;
        for (int a = -3; a <= 3; ++a)
          for (int b = -3; b <= 3; ++b)
            for (int c = -3; c <= 3; ++c) {
              const double w = std::exp(-(a * a + b * b + c * c) / (2 * 2.25)) / wsum;
              mx += w * at(x, i + a, j + b, k + c);
              my += w * at(y, i + a, j + b, k + c);
            }
        double vx = 0, vy = 0, cxy = 0;
        for (int a = -3; a <= 3; ++a)
          for (int b = -3; b <= 3; ++b)
            for (int c = -3; c <= 3; ++c) {
              const double w = std::exp(-(a * a + b * b + c * c) / (2 * 2.25)) / wsum;
              const double dx = at(x, i + a, j + b, k + c) - mx, dy = at(y, i + a, j + b, k + c) - my;
              vx += w * dx * dx;
              vy += w * dy * dy;
              cxy += w * dx * dy;
            }
        total += (2 * mx * my + C1) * (2 * cxy + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        ++count;
      }
  return total / count;
}

}  // namespace

TEST_CASE("pnae examples", "[metrics]") {
  const std::vector<std::uint8_t> m{1, 1, 1};
  const auto p = pnae({1, 2, 4}, {1, 3, 4}, m);
  CHECK(p.per_voxel[0] == 0.0);
  CHECK(p.per_voxel[1] == Approx(0.25));
  CHECK(p.per_voxel[2] == 0.0);
  CHECK(p.mean == Approx(1.0 / 12.0));
  CHECK(p.max == Approx(0.25));
  CHECK(pnae({1, 2, 4}, {1, 2, 4}, m).mean == 0.0);
  CHECK_THROWS_AS(pnae({0, 0, 0}, {1, 2, 3}, m), InvalidArgument);
  // Scale covariance.
  CHECK(pnae({3, 6, 12}, {3, 9, 12}, m).mean == Approx(1.0 / 12.0));
  // Unmasked voxels do not count.
  const auto q = pnae({1, 2, 100}, {1, 3, 0}, {1, 1, 0});
  CHECK(q.mean == Approx(0.25));
  CHECK(q.per_voxel[2] == 0.0);
}

TEST_CASE("ssim identities and direct-summation agreement", "[metrics]") {
  const std::array<int, 3> n{8, 8, 8};
  std::mt19937 gen(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(512), y(512);
  std::vector<std::uint8_t> mask(512, 1);
  for (int i = 0; i < 512; ++i) {
    x[i] = 10 + 70 * u(gen);
    y[i] = x[i] + 20 * (u(gen) - 0.5);
    mask[i] = u(gen) < 0.8;
  }
  CHECK(ssim3d(n, x, x, mask) == 1.0);
  const double s = ssim3d(n, x, y, mask);
  CHECK(s < 1.0);
  CHECK(std::abs(s - ssim_direct(n, x, y, mask)) < 1e-10);

  std::vector<double> flat(512, 40.0);
  CHECK(ssim3d(n, x, flat, mask) < 1.0);

  CHECK_THROWS_AS(ssim3d({6, 6, 6}, std::vector<double>(216, 1.0), std::vector<double>(216, 1.0),
                         std::vector<std::uint8_t>(216, 1)),
                  InvalidArgument);
  CHECK_THROWS_AS(ssim3d(n, x, y, std::vector<std::uint8_t>(512, 0)), InvalidArgument);
  CHECK(ssim_window_fits(n, mask));
  CHECK(!ssim_window_fits({6, 6, 6}, std::vector<std::uint8_t>(216, 1)));
}

TEST_CASE("coil current error", "[metrics]") {
  CVec r(3);
  r << cplx(1, 2), cplx(-0.5, 0.1), cplx(0, 3);
  CHECK(coil_current_error(r, r) == 0.0);
  CHECK(coil_current_error(2.0 * r, r) == Approx(1.0));
  const cplx u = std::polar(1.0, 0.7);
  const CVec a = r * 1.3;
  CHECK(coil_current_error(u * a, u * r) == Approx(coil_current_error(a, r)).epsilon(1e-14));
  CHECK_THROWS_AS(coil_current_error(r, CVec::Zero(3)), InvalidArgument);
  CHECK_THROWS_AS(coil_current_error(r, CVec::Zero(2)), InvalidArgument);
}

TEST_CASE("reconstruction report with compartments", "[metrics]") {
  const VoxelGrid g = centered_grid({8, 8, 8}, 0.01);
  PhantomSpec spec;
  spec.shape = PhantomShape::TwoCompartmentCylinder;
  spec.length_m = 0.08;
  spec.radii_m = {0.04, 0.02};
  spec.compartments = {{60, 0.7}, {80, 1.5}};
  const EPMap truth = build_phantom(spec, g);
  const auto labels = compartment_labels(spec, g);
  const auto same = evaluate_reconstruction(truth, truth, &labels);
  CHECK(same.eps_r.pnae_mean == 0.0);
  CHECK(same.eps_r.ssim == 1.0);
  CHECK(same.sigma.ssim.has_value());
  CHECK(same.sigma.ssim == 1.0);
  REQUIRE(same.compartments.size() == 2);
  CHECK(same.compartments[0].eps_r_mean == Approx(60));
  CHECK(same.compartments[1].sigma_mean == Approx(1.5));
  CHECK(same.compartments[1].sigma_std == Approx(0.0).margin(1e-12));

  EPMap flat = truth;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (truth.mask[i]) flat.set(i, 70, 1.0);
  const auto rep = evaluate_reconstruction(truth, flat, &labels);
  CHECK(rep.eps_r.pnae_mean > 0.0);
  CHECK(rep.compartments[0].eps_r_pnae == Approx(10.0 / 80.0));
}
