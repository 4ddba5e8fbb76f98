#include <catch_amalgamated.hpp>

#include <cmath>

#include "maxtomo/coil.hpp"

using namespace maxtomo;
using Catch::Approx;

namespace {

const double kOmega = angular(kLarmor7T);

LoopArraySpec single_circle(int segments, double radius) {
  LoopArraySpec s;
  s.channels = 1;
  s.shape = LoopShape::Circle;
  s.former_radius_m = 0.0;
  s.loop_radius_m = radius;
  s.segments_per_loop = segments;
  s.wire_radius_m = 5e-4;
  s.port_resistance_ohm = 0.0;
  return s;
}

// Field of a straight filament A -> B carrying current I, at P.
Vec3 biot_savart_segment(const Vec3& A, const Vec3& B, const Vec3& P, double I) {
  const Vec3 L = B - A, ra = P - A, rb = P - B;
  const Vec3 c = L.cross(ra);
  return I / (4.0 * kPi) * c / c.squaredNorm() * (L.dot(ra) / ra.norm() - L.dot(rb) / rb.norm());
}

}  // namespace

TEST_CASE("loop array counts and determinism", "[coil]") {
  const WireCoil one = make_loop_array(single_circle(12, 0.03));
  CHECK(one.nodes.size() == 12);
  CHECK(one.segments.size() == 12);
  CHECK(one.basis_count() == 12);
  CHECK(one.channel_count() == 1);

  LoopArraySpec s;
  s.channels = 8;
  s.segments_per_loop = 16;
  s.former_radius_m = 0.12;
  s.loop_length_m = 0.1;
  s.loop_span_rad = 0.5;
  const WireCoil eight = make_loop_array(s);
  CHECK(eight.basis_count() == 128);
  CHECK(eight.channel_count() == 8);
  for (int ch = 0; ch < 8; ++ch) {
    const CVec v = eight.excitation(ch);
    CHECK(v.cwiseAbs().sum() == Approx(1.0));
    // The port lies on channel ch's loop.
    CHECK(eight.ports[ch].basis / 16 == ch);
  }
  const WireCoil again = make_loop_array(s);
  for (std::size_t i = 0; i < eight.nodes.size(); ++i) CHECK((eight.nodes[i] - again.nodes[i]).norm() == 0.0);
  CHECK_THROWS_AS(eight.excitation(9), InvalidArgument);
}

TEST_CASE("loops must clear the sample bounding box", "[coil]") {
  const VoxelGrid g = centered_grid({10, 10, 10}, 0.01);
  EPMap ep(g);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.center(i).norm() < 0.04) ep.set(i, 50.0, 0.5);
  const auto box = mask_bounding_box(ep);
  REQUIRE(box);
  LoopArraySpec s;
  s.channels = 4;
  s.former_radius_m = 0.035;
  s.loop_length_m = 0.06;
  CHECK_THROWS_AS(make_loop_array(s, box), InvalidArgument);
  s.former_radius_m = 0.09;
  CHECK_NOTHROW(make_loop_array(s, box));
}

TEST_CASE("Zcc of a circular loop is symmetric and circulant", "[coil]") {
  const WireCoil loop = make_loop_array(single_circle(16, 0.04));
  const CMat Z = assemble_Zcc(loop, kOmega, false);
  CHECK((Z - Z.transpose()).norm() <= 1e-10 * Z.norm());
  const int m = 16;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) CHECK(std::abs(Z(i, j) - Z(0, (j - i + m) % m)) <= 1e-8 * std::abs(Z(0, 0)));
}

TEST_CASE("lumped elements touch only their diagonal entry", "[coil]") {
  auto spec = single_circle(12, 0.04);
  WireCoil loop = make_loop_array(spec);
  const CMat bare = assemble_Zcc(loop, kOmega, true);
  const double C = 4.7e-12;
  loop.lumped.push_back({5, 0.0, 0.0, C});
  const CMat with = assemble_Zcc(loop, kOmega, true);
  CMat diff = with - bare;
  CHECK(std::abs(diff(5, 5) - 1.0 / cplx(0.0, kOmega * C)) <= 1e-9 * std::abs(diff(5, 5)));
  diff(5, 5) = 0.0;
  CHECK(diff.norm() == 0.0);
  // Port termination lands on the port's basis.
  spec.port_resistance_ohm = 50.0;
  const WireCoil term = make_loop_array(spec);
  CHECK(assemble_Zcc(term, kOmega)(0, 0) - assemble_Zcc(term, kOmega, false)(0, 0) == cplx(50.0, 0.0));
}

TEST_CASE("isolated loop has positive radiation resistance", "[coil]") {
  for (double radius : {0.03, 0.08}) {
    const WireCoil loop = make_loop_array(single_circle(24, radius));
    const CMat Z = assemble_Zcc(loop, kOmega, false);
    const CVec I = Z.partialPivLu().solve(loop.excitation(0));
    const cplx zin = 1.0 / I[0];
    CHECK(zin.real() > 0.0);
  }
}

TEST_CASE("static Kcb reproduces finite-segment Biot-Savart", "[coil]") {
  // Uniform 1 A around a closed loop: every hat coefficient equal to one.
  LoopArraySpec s;
  s.channels = 1;
  s.former_radius_m = 0.06;
  s.loop_length_m = 0.05;
  s.loop_span_rad = 0.8;
  s.segments_per_loop = 8;
  s.port_resistance_ohm = 0.0;
  const WireCoil loop = make_loop_array(s);
  const VoxelGrid g = centered_grid({6, 6, 6}, 0.01);
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < g.size(); ++i) masked.push_back(i);
  const double omega_static = 1e-3;  // k0 ~ 3e-12 rad/m
  CouplingOptions opts;
  opts.panels_per_segment = 24;
  const auto ops = assemble_coupling(loop, g, masked, omega_static, opts);
  const CVec ones = CVec::Ones(static_cast<Eigen::Index>(loop.basis_count()));
  const CVec h = ops.Kcb * ones;
  const std::size_t n = masked.size();
  double worst = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    Vec3 ref = Vec3::Zero();
    for (const auto& seg : loop.segments)
      ref += biot_savart_segment(loop.nodes[seg[0]], loop.nodes[seg[1]], g.center(masked[v]), 1.0);
    const Eigen::Vector3cd got(h[v], h[n + v], h[2 * n + v]);
    worst = std::max(worst, (got / g.voxel_volume() - ref.cast<cplx>()).norm() / ref.norm());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("on-axis field of a circular loop", "[coil]") {
  const double radius = 0.05;
  auto spec = single_circle(128, radius);
  spec.wire_radius_m = 1e-4;
  const WireCoil loop = make_loop_array(spec);
  // Loop normal is x; voxel centres along the x axis.
  const double h = 0.01;
  const VoxelGrid g({8, 1, 1}, h, {0.0, -0.5 * h, -0.5 * h});
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < g.size(); ++i) masked.push_back(i);
  const auto ops = assemble_coupling(loop, g, masked, 1e-3);
  const CVec hx = ops.Kcb.topRows(static_cast<Eigen::Index>(masked.size())) *
                  CVec::Ones(static_cast<Eigen::Index>(loop.basis_count()));
  for (std::size_t v = 0; v < masked.size(); ++v) {
    const double x = g.center(masked[v]).x();
    const double ref = radius * radius / (2.0 * std::pow(radius * radius + x * x, 1.5));
    CHECK(std::abs(hx[v].real() / g.voxel_volume()) == Approx(ref).epsilon(0.01));
  }
}

TEST_CASE("coupling quadrature is converged and linear", "[coil]") {
  LoopArraySpec s;
  s.channels = 2;
  s.former_radius_m = 0.07;
  s.loop_length_m = 0.06;
  s.segments_per_loop = 12;
  const WireCoil coil = make_loop_array(s);
  const VoxelGrid g = centered_grid({6, 6, 6}, 0.01);
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.center(i).norm() < 0.03) masked.push_back(i);
  CouplingOptions base, doubled;
  base.panels_per_segment = 4;
  doubled.panels_per_segment = 8;
  const auto a = assemble_coupling(coil, g, masked, kOmega, base);
  const auto b = assemble_coupling(coil, g, masked, kOmega, doubled);
  CHECK((a.Zcb - b.Zcb).norm() / b.Zcb.norm() < 1e-3);
  CHECK((a.Kcb - b.Kcb).norm() / b.Kcb.norm() < 1e-3);

  const CVec jc = coil.excitation(0) + cplx(0.3, 0.2) * coil.excitation(1);
  const auto f1 = incident_fields(a, jc);
  const auto f2 = incident_fields(a, CVec(2.0 * jc));
  CHECK((f2.e_inc - 2.0 * f1.e_inc).norm() <= 1e-14 * f2.e_inc.norm());
  CHECK((f2.h_inc - 2.0 * f1.h_inc).norm() <= 1e-14 * f2.h_inc.norm());
  CHECK((f1.e_inc + a.Zcb * jc).norm() == 0.0);
  CHECK_THROWS_AS(incident_fields(a, CVec::Zero(3)), InvalidArgument);
}

TEST_CASE("coupling decays as 1/r in the radiation zone", "[coil]") {
  const WireCoil loop = make_loop_array(single_circle(12, 0.05));
  std::vector<double> scaled;
  for (double dist : {20.0, 40.0, 80.0}) {
    // One voxel far along y, broadside to the loop's electric field.
    const VoxelGrid g({1, 1, 1}, 0.01, {-0.005, dist - 0.005, -0.005});
    const auto ops = assemble_coupling(loop, g, {0}, kOmega);
    scaled.push_back(ops.Zcb.norm() * dist);
  }
  CHECK(scaled[1] == Approx(scaled[0]).epsilon(0.02));
  CHECK(scaled[2] == Approx(scaled[1]).epsilon(0.01));
}

TEST_CASE("wire coil validation", "[coil]") {
  WireCoil bad = make_loop_array(single_circle(12, 0.03));
  bad.wire_radius = 0.01;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  WireCoil dup = make_loop_array(single_circle(12, 0.03));
  dup.ports.push_back({3, 1.0, 0});
  CHECK_THROWS_AS(dup.validate(), InvalidArgument);
  WireCoil coincident = make_loop_array(single_circle(12, 0.03));
  coincident.nodes.push_back(coincident.nodes[0]);
  coincident.nodes.push_back(coincident.nodes[1]);
  coincident.segments.push_back({12, 13});
  CHECK_THROWS_AS(assemble_Zcc(coincident, kOmega), InvalidArgument);
}
