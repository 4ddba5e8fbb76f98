#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "maxtomo/kernels.hpp"

using namespace maxtomo;
using Catch::Approx;

namespace {

const double kOmega = angular(kLarmor7T);

CVec random_field(std::size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> d;
  CVec x(static_cast<Eigen::Index>(n));
  for (auto& v : x) v = cplx(d(gen), d(gen));
  return x;
}

// Dense reference y = sum over all voxel pairs of block(offset) x.
CVec dense_apply(const ToeplitzKernel& K, const CVec& x) {
  const auto& g = K.grid();
  const std::size_t nv = g.size();
  CVec y = CVec::Zero(x.size());
  for (std::size_t a = 0; a < nv; ++a) {
    const auto ia = g.ijk(a);
    for (std::size_t b = 0; b < nv; ++b) {
      const auto ib = g.ijk(b);
      const Mat3c B = K.block(ia[0] - ib[0], ia[1] - ib[1], ia[2] - ib[2]);
      for (int p = 0; p < 3; ++p)
        for (int q = 0; q < 3; ++q) y[p * nv + a] += B(p, q) * x[q * nv + b];
    }
  }
  return y;
}

double rel(const CVec& a, const CVec& b) { return (a - b).norm() / b.norm(); }

// (k^2 + grad grad) g by central differences, as an independent dyadic oracle.
Mat3c dyadic_fd(const Vec3& r, double k0) {
  const double h = 1e-4 * r.norm();
  auto g = [&](const Vec3& p) { return scalar_green(p.norm(), k0); };
  Mat3c m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Vec3 ei = Vec3::Zero(), ej = Vec3::Zero();
      ei[i] = h;
      ej[j] = h;
      m(i, j) = (g(r + ei + ej) - g(r + ei - ej) - g(r - ei + ej) + g(r - ei - ej)) / (4.0 * h * h);
    }
  m.diagonal().array() += k0 * k0 * g(r);
  return m;
}

}  // namespace

TEST_CASE("scalar Green's function", "[kernels]") {
  const double k0 = wavenumber(kOmega);
  CHECK(k0 == Approx(6.2289).epsilon(1e-4));
  const cplx g = scalar_green(0.1, k0);
  CHECK(std::abs(g) == Approx(1.0 / (4.0 * kPi * 0.1)));
  CHECK(std::arg(g) == Approx(-k0 * 0.1));
  CHECK(scalar_green(0.05, 0.0) == cplx(1.0 / (4.0 * kPi * 0.05), 0.0));
  CHECK_THROWS(scalar_green(0.0, k0));
}

TEST_CASE("self term integrates g over the equal-volume sphere", "[kernels]") {
  const double dv = 0.005 * 0.005 * 0.005;
  const double a = std::cbrt(3.0 * dv / (4.0 * kPi));
  // Static limit a^2 / 2.
  const cplx s0 = self_term_scalar(dv, 0.0);
  CHECK(s0.real() == Approx(4.812e-6).epsilon(1e-3));
  CHECK(s0.imag() == 0.0);

  // Radial quadrature of int_0^a r exp(-i k r) dr, midpoint rule with many panels.
  for (double k0 : {wavenumber(kOmega), 50.0, 500.0}) {
    const int n = 20000;
    cplx acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = (i + 0.5) * a / n;
      acc += r * std::exp(cplx(0.0, -k0 * r));
    }
    acc *= a / n;
    const cplx s = self_term_scalar(dv, k0);
    CHECK(std::abs(s - acc) / std::abs(acc) < 1e-7);
  }
  // Series and closed-form branches agree near the switch.
  const double kswitch = 1e-4 / a;
  CHECK(std::abs(self_term_scalar(dv, kswitch * 0.999) - self_term_scalar(dv, kswitch * 1.001)) <
        1e-5 * std::abs(s0));
  CHECK_THROWS_AS(self_term_scalar(0.0, 1.0), InvalidArgument);
}

TEST_CASE("electric block matches a finite-difference dyadic", "[kernels]") {
  const double dv = 1e-6;
  const double k0 = wavenumber(kOmega);
  const cplx pref = 1.0 / cplx(0.0, kOmega * kEps0);
  for (const Vec3& r : {Vec3(0.01, 0.0, 0.0), Vec3(0.02, -0.01, 0.03), Vec3(0.3, 0.2, -0.1)}) {
    const Mat3c ref = pref * dv * dv * dyadic_fd(r, k0);
    const Mat3c got = electric_block(r, kOmega, dv);
    CHECK((got - ref).norm() / ref.norm() < 1e-6);
    // Symmetric, even in the offset.
    CHECK((got - got.transpose()).norm() <= 1e-15 * got.norm());
    CHECK((got - electric_block(-r, kOmega, dv)).norm() <= 1e-14 * got.norm());
  }
}

// Source-voxel integral of the dyadic by an s^3 midpoint subdivision.
Mat3c subdivided_block(const Vec3& offset, double edge, int s) {
  const double dv = edge * edge * edge;
  const double sub = edge / s;
  Mat3c acc = Mat3c::Zero();
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      for (int l = 0; l < s; ++l) {
        const Vec3 c = offset + sub * Vec3(i + 0.5 - 0.5 * s, j + 0.5 - 0.5 * s, l + 0.5 - 0.5 * s);
        acc += electric_block(c, kOmega, 1.0) * (sub * sub * sub);
      }
  return acc * dv;
}

TEST_CASE("integrated near blocks converge to the subdivided integral", "[kernels]") {
  const double h = 0.005;
  for (const Vec3& off : {Vec3(h, 0, 0), Vec3(h, h, 0), Vec3(h, -h, h), Vec3(2 * h, h, 0)}) {
    const Mat3c got = electric_block_integrated(off, kOmega, h);
    const Mat3c coarse = subdivided_block(off, h, 20), fine = subdivided_block(off, h, 40);
    // Midpoint subdivision converges at second order; extrapolate.
    const Mat3c ref = (4.0 * fine - coarse) / 3.0;
    CHECK((got - ref).norm() / ref.norm() < 1e-4);
    CHECK((got - electric_block_integrated(-off, kOmega, h)).norm() <= 1e-12 * got.norm());
  }
  // Far away the integrated block approaches the midpoint block.
  const Vec3 far(12 * h, -7 * h, 5 * h);
  const Mat3c a = electric_block_integrated(far, kOmega, h), b = electric_block(far, kOmega, h * h * h);
  CHECK((a - b).norm() / b.norm() < 5e-3);
  CHECK_THROWS_AS(electric_block_integrated(Vec3(0.2 * h, 0, 0), kOmega, h), InvalidArgument);
}

TEST_CASE("electric blocks vanish off-diagonal on coordinate axes", "[kernels]") {
  const VoxelGrid g({8, 8, 8}, 0.005);
  const ToeplitzKernel K(ToeplitzKernel::Kind::Electric, g, kOmega);
  for (int d : {1, 3}) {
    const Mat3c b = K.block(d, 0, 0);
    CHECK(std::abs(b(0, 1)) <= 1e-12 * b.norm());
    CHECK(std::abs(b(0, 2)) <= 1e-12 * b.norm());
    CHECK(std::abs(b(1, 2)) <= 1e-12 * b.norm());
  }
}

TEST_CASE("electric self block", "[kernels]") {
  const double dv = 1e-6;
  const double k0 = wavenumber(kOmega);
  const Mat3c b = electric_block(Vec3::Zero(), kOmega, dv);
  const cplx expected = dv / cplx(0.0, kOmega * kEps0) * ((2.0 / 3.0) * k0 * k0 * self_term_scalar(dv, k0) - 1.0 / 3.0);
  CHECK(std::abs(b(0, 0) - expected) < 1e-14 * std::abs(expected));
  CHECK(b(0, 1) == cplx(0.0));
  CHECK(b(1, 1) == b(2, 2));
}

TEST_CASE("magnetic block reduces to Biot-Savart in the static limit", "[kernels]") {
  const double dv = 1e-6;
  const Vec3 r(0.03, -0.02, 0.01);
  const Vec3 J(0.3, 1.0, -0.4);
  // Tested field dv * H, with H = J dv x R / (4 pi R^3).
  const Vec3 h_ref = dv * dv * J.cross(r) / (4.0 * kPi * std::pow(r.norm(), 3));
  const Eigen::Vector3cd got = magnetic_block(r, 0.0, dv) * J.cast<cplx>();
  CHECK((got.real() - h_ref).norm() < 1e-12 * h_ref.norm());
  CHECK(got.imag().norm() == 0.0);

  const double k0 = wavenumber(kOmega);
  const Mat3c m = magnetic_block(r, k0, dv);
  CHECK((m + m.transpose()).norm() == 0.0);
  CHECK((m + magnetic_block(-r, k0, dv)).norm() <= 1e-14 * m.norm());
  CHECK(magnetic_block(Vec3::Zero(), k0, dv).norm() == 0.0);
}

TEST_CASE("FFT application matches dense summation", "[kernels][fft]") {
  for (const auto& dims : {std::array<int, 3>{1, 1, 1}, std::array<int, 3>{3, 2, 4}, std::array<int, 3>{5, 5, 5},
                           std::array<int, 3>{6, 6, 6}}) {
    const VoxelGrid g(dims, 0.01, {0.0, 0.0, 0.0});
    const CVec x = random_field(3 * g.size(), 7);
    for (auto kind : {ToeplitzKernel::Kind::Electric, ToeplitzKernel::Kind::Magnetic}) {
      const ToeplitzKernel K(kind, g, kOmega);
      const CVec ref = dense_apply(K, x);
      CHECK((K.apply(x) - ref).norm() <= 1e-12 * std::max(ref.norm(), x.norm() * K.block(0, 0, 1).norm()));
    }
  }
}

TEST_CASE("kernel operators are linear and symmetric", "[kernels]") {
  const VoxelGrid g({4, 3, 5}, 0.005);
  const auto E = assemble_electric_kernel(g, kOmega);
  const auto H = assemble_magnetic_kernel(g, kOmega);
  const CVec x = random_field(3 * g.size(), 1), y = random_field(3 * g.size(), 2);
  const cplx a(0.3, -1.2);
  for (const ToeplitzKernel* K : {&E, &H}) {
    CHECK(rel(K->apply(CVec(a * x + y)), CVec(a * K->apply(x) + K->apply(y))) < 1e-12);
    // Complex symmetric: y^T K x == x^T K y.
    const cplx lhs = y.transpose() * K->apply(x), rhs = x.transpose() * K->apply(y);
    CHECK(std::abs(lhs - rhs) < 1e-12 * std::abs(lhs));
  }
  CHECK_THROWS_AS(apply_kernel(E, CVec::Zero(5)), InvalidArgument);
}

TEST_CASE("kernel depends only on voxel offsets", "[kernels]") {
  const VoxelGrid a({4, 4, 4}, 0.01, {0.0, 0.0, 0.0});
  const VoxelGrid b({4, 4, 4}, 0.01, {1.3, -0.7, 2.0});
  const CVec x = random_field(3 * a.size(), 3);
  for (auto kind : {ToeplitzKernel::Kind::Electric, ToeplitzKernel::Kind::Magnetic}) {
    const ToeplitzKernel ka(kind, a, kOmega), kb(kind, b, kOmega);
    CHECK(rel(ka.apply(x), kb.apply(x)) < 1e-14);
    CHECK((ka.block(1, -2, 3) - ka.block(1, -2, 3)).norm() == 0.0);
  }
}
