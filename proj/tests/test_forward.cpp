#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "maxtomo/forward.hpp"
#include "support/mie.hpp"
#include "support/problems.hpp"

using namespace maxtomo;
using Catch::Approx;

namespace {

using testprob::kOmega;
using testprob::small_problem;

CMat dense(const std::function<CVec(const CVec&)>& apply, Eigen::Index n) {
  CMat A(n, n);
  for (Eigen::Index j = 0; j < n; ++j) A.col(j) = apply(CVec::Unit(n, j));
  return A;
}

CVec random_vec(Eigen::Index n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> d;
  CVec x(n);
  for (auto& v : x) v = cplx(d(gen), d(gen));
  return x;
}

}  // namespace

TEST_CASE("Z_bb and the Schur operator are complex symmetric", "[forward]") {
  auto p = small_problem();
  BodyOperator body(p.scene.electric, p.scene.masked);
  body.set_permittivity(p.eps);
  const auto n = static_cast<Eigen::Index>(body.unknowns());
  const CMat Z = dense([&](const CVec& x) { return body.apply(x); }, n);
  CHECK((Z - Z.transpose()).norm() <= 1e-10 * Z.norm());
  const VsieSystem sys(body, p.coil, p.scene.Zcc, p.scene.coupling);
  const CMat S = dense([&](const CVec& x) { return sys.schur_apply(x); }, n);
  CHECK((S - S.transpose()).norm() <= 1e-10 * S.norm());
}

TEST_CASE("Schur-complement VSIE matches a dense block solve", "[forward]") {
  auto p = small_problem();
  BodyOperator body(p.scene.electric, p.scene.masked);
  body.set_permittivity(p.eps);
  const VsieSystem sys(body, p.coil, p.scene.Zcc, p.scene.coupling);
  const auto n = static_cast<Eigen::Index>(body.unknowns());
  const auto m = static_cast<Eigen::Index>(p.coil.basis_count());
  REQUIRE(m <= 32);
  REQUIRE(n / 3 <= 64);

  CMat A(m + n, m + n);
  A.topLeftCorner(m, m) = p.scene.Zcc;
  A.topRightCorner(m, n) = p.scene.coupling.Zcb.transpose();
  A.bottomLeftCorner(n, m) = p.scene.coupling.Zcb;
  A.bottomRightCorner(n, n) = dense([&](const CVec& x) { return body.apply(x); }, n);
  CVec rhs = CVec::Zero(m + n);
  rhs.head(m) = p.coil.excitation(0);
  const CVec ref = A.fullPivLu().solve(rhs);

  SolverConfig cfg;
  cfg.tolerance = 1e-12;
  const auto sol = solve_vsie(sys, 0, cfg);
  CHECK((sol.jc - ref.head(m)).norm() / ref.head(m).norm() < 1e-8);
  CHECK((sol.jb - ref.tail(n)).norm() / ref.tail(n).norm() < 1e-8);
}

TEST_CASE("VSIE residual and decoupled limits", "[forward]") {
  auto p = small_problem();
  BodyOperator body(p.scene.electric, p.scene.masked);
  body.set_permittivity(p.eps);
  const VsieSystem sys(body, p.coil, p.scene.Zcc, p.scene.coupling);
  const auto sol = solve_vsie(sys, 0, SolverConfig{});
  CHECK(sol.residual < 1e-5);

  // Empty mask: free-space coil currents.
  EPMap empty(p.ep.grid);
  const Scene free = make_scene(empty, p.coil, kOmega);
  const auto ch = simulate_vsie(free, {}, SolverConfig{});
  REQUIRE(ch.size() == 1);
  const CVec ref = p.scene.Zcc.partialPivLu().solve(p.coil.excitation(0));
  CHECK((ch[0].jc - ref).norm() <= 1e-12 * ref.norm());
  CHECK(ch[0].jb.size() == 0);
}

TEST_CASE("singular coil matrix is reported", "[forward]") {
  auto p = small_problem();
  BodyOperator body(p.scene.electric, p.scene.masked);
  body.set_permittivity(p.eps);
  CMat Z = p.scene.Zcc;
  Z.row(3).setZero();
  Z.col(3).setZero();
  CHECK_THROWS_AS(VsieSystem(body, p.coil, Z, p.scene.coupling), SolverFailure);
}

TEST_CASE("VIE with VSIE incident fields reproduces the VSIE body currents", "[forward]") {
  auto p = small_problem();
  SolverConfig cfg;
  cfg.tolerance = 1e-10;
  const auto vsie = simulate_vsie(p.scene, p.eps, cfg);
  const auto inc = incident_from_currents(p.scene, {vsie[0].jc});
  const auto vie = simulate_vie(p.scene, p.eps, inc, cfg);
  CHECK((vie[0].jb - vsie[0].jb).norm() <= 1e-8 * vsie[0].jb.norm());
  // Eq. (3) and Eq. (5) paths agree when h_inc = Kcb jc.
  CHECK((vie[0].b1 - vsie[0].b1).norm() <= 1e-8 * vsie[0].b1.norm());
  const VsieSolution s{vsie[0].jc, vsie[0].jb, 0.0};
  CHECK((b1plus_vsie(*p.scene.magnetic, p.scene.masked, p.scene.coupling.Kcb, s) - vsie[0].b1).norm() == 0.0);
}

TEST_CASE("VIE solve basics", "[forward]") {
  auto p = small_problem();
  BodyOperator body(p.scene.electric, p.scene.masked);
  body.set_permittivity(p.eps);
  const auto n = static_cast<Eigen::Index>(body.unknowns());
  SolverConfig cfg;
  cfg.tolerance = 1e-12;
  CHECK(solve_vie(body, CVec::Zero(n), cfg).jb.norm() == 0.0);
  const CVec a = random_vec(n, 1), b = random_vec(n, 2);
  const cplx s(0.5, -2.0);
  const CVec ja = solve_vie(body, a, cfg).jb, jb = solve_vie(body, b, cfg).jb;
  const CVec jab = solve_vie(body, CVec(s * a + b), cfg).jb;
  CHECK((jab - (s * ja + jb)).norm() <= 1e-9 * jab.norm());
  const auto r = solve_vie(body, a, cfg);
  CHECK((body.apply(r.jb) - a).norm() / a.norm() <= 1e-12);

  SolverConfig tight;
  tight.tolerance = 1e-14;
  tight.max_iterations = 2;
  CHECK_THROWS_AS(solve_vie(body, a, tight), SolverFailure);
  CHECK_THROWS_AS(body.set_permittivity(std::vector<cplx>(body.masked_count(), cplx(1.0, 0.0))), InvalidArgument);
}

TEST_CASE("low-contrast sphere agrees with the Mie series", "[forward][mie]") {
  // eps_r = 1.5 keeps the staircase error small; the high-contrast case is an acceptance criterion.
  const cplx eps = complex_permittivity(1.5, 0.01, kOmega);
  const double k0 = wavenumber(kOmega);
  const double a = 2.0 * kPi / (k0 * std::sqrt(eps).real()) / 8.0;
  const double h = 0.005;
  const int n = 2 * static_cast<int>(std::ceil(a / h));
  const VoxelGrid g = centered_grid({n, n, n}, h);
  std::vector<std::size_t> masked;
  for (std::size_t v = 0; v < g.size(); ++v)
    if (g.center(v).norm() <= a) masked.push_back(v);
  BodyOperator body(std::make_shared<ToeplitzKernel>(ToeplitzKernel::Kind::Electric, g, kOmega), masked);
  body.set_permittivity(std::vector<cplx>(masked.size(), eps));
  const std::size_t nm = masked.size();
  CVec einc = CVec::Zero(static_cast<Eigen::Index>(3 * nm));
  for (std::size_t k = 0; k < nm; ++k) einc[k] = g.voxel_volume() * std::exp(cplx(0.0, -k0 * g.center(masked[k]).z()));
  SolverConfig cfg;
  cfg.tolerance = 1e-8;
  const CVec jb = solve_vie(body, einc, cfg).jb;
  const mie::Sphere sphere(a, eps, k0);
  const cplx scale = cplx(0.0, kOmega * kEps0) * (eps - 1.0);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < nm; ++k) {
    const auto ref = sphere.internal_field(g.center(masked[k]));
    for (int c = 0; c < 3; ++c) {
      num += std::norm(jb[c * nm + k] / scale - ref[c]);
      den += std::norm(ref[c]);
    }
  }
  INFO("relative L2 error " << std::sqrt(num / den));
  CHECK(std::sqrt(num / den) < 0.03);
}

TEST_CASE("Mie oracle reduces to the quasi-static sphere", "[mie]") {
  const cplx eps(10.0, -6.0);
  const mie::Sphere tiny(1e-5, eps, wavenumber(kOmega));
  const auto e = tiny.internal_field(Eigen::Vector3d(2e-6, -3e-6, 1e-6));
  // Leading corrections are O(k0 |m| r) ~ 1e-4.
  CHECK(std::abs(e[0] - 3.0 / (eps + 2.0)) < 1e-4);
  CHECK(std::abs(e[1]) < 1e-4);
  CHECK(std::abs(e[2]) < 1e-4);
}

TEST_CASE("B1+ projection", "[forward]") {
  const double dv = 1e-6;
  const auto tested = [&](cplx hx, cplx hy, cplx hz) {
    CVec h(3);
    h << hx * dv, hy * dv, hz * dv;
    return b1plus_from_tested_field(h, dv)[0];
  };
  CHECK(std::abs(tested(1.0, 0.0, 0.0) - kMu0) < 1e-20);
  CHECK(tested(0.0, 0.0, 1.0) == cplx(0.0, 0.0));
  CHECK(std::abs(tested(0.5, cplx(0.0, -0.5), 0.0) - kMu0) < 1e-20);
}

TEST_CASE("channel superposition is linear in drive voltage", "[forward]") {
  auto p = small_problem();
  SolverConfig cfg;
  cfg.tolerance = 1e-10;
  const auto base = simulate_vsie(p.scene, p.eps, cfg);
  Scene doubled = p.scene;
  doubled.coil.ports[0].voltage *= cplx(2.0, 1.0);
  const auto twice = simulate_vsie(doubled, p.eps, cfg);
  CHECK((twice[0].b1 - cplx(2.0, 1.0) * base[0].b1).norm() <= 1e-8 * twice[0].b1.norm());
}

TEST_CASE("peak-SNR noise", "[forward][noise]") {
  const VoxelGrid g({100, 100, 1}, 0.01);
  B1Set b{g, {CVec::Zero(static_cast<Eigen::Index>(g.size()))}};
  b.channels[0][17] = cplx(0.0, 3e-6);  // peak
  const B1Set n1 = add_peak_snr_noise(b, 200.0, 42), n2 = add_peak_snr_noise(b, 200.0, 42);
  CHECK(n1 == n2);
  CHECK(!(add_peak_snr_noise(b, 200.0, 43) == n1));
  const CVec noise = n1.channels[0] - b.channels[0];
  const double sd = std::sqrt(noise.squaredNorm() / static_cast<double>(noise.size()));
  CHECK(sd == Approx(3e-6 / 200.0).epsilon(0.05));
  double re = 0.0, im = 0.0;
  for (auto v : noise) {
    re += v.real() * v.real();
    im += v.imag() * v.imag();
  }
  CHECK(re / im == Approx(1.0).epsilon(0.1));
  CHECK(add_peak_snr_noise(b, std::numeric_limits<double>::infinity(), 1) == b);
  CHECK_THROWS_AS(add_peak_snr_noise(b, 0.0, 1), InvalidArgument);
}

TEST_CASE("zero-phase shim", "[forward][shim]") {
  const CVec b = random_vec(50, 9);
  const CVec s = shim_zero_phase(b, 7);
  CHECK(s[7].imag() == 0.0);
  CHECK(s[7].real() > 0.0);
  CHECK((s.cwiseAbs() - b.cwiseAbs()).norm() <= 1e-14 * b.norm());
  const CVec twice = shim_zero_phase(s, 7);
  CHECK((twice - s).norm() <= 1e-15 * s.norm());
  CVec z = b;
  z[3] = 0.0;
  CHECK_THROWS_AS(shim_zero_phase(z, 3), InvalidArgument);
}
