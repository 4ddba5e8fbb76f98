#pragma once

// Internal electric field of a homogeneous sphere under plane-wave illumination,
// from the classical Mie series (Bohren & Huffman, ch. 4). Test oracle only.
//
// Incident field x_hat * exp(-i k z) with exp(+i w t) time dependence. The
// series is evaluated in the exp(-i w t) convention with conj(eps) and the
// result conjugated back.

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace mie {

using cplx = std::complex<double>;

// Spherical Bessel j_n(z), n = 0..nmax, by power series (|z| up to a few units).
inline std::vector<cplx> sph_j(int nmax, cplx z) {
  std::vector<cplx> out(nmax + 1);
  const cplx q = -z * z / 2.0;
  cplx zn = 1.0;
  double dfact = 1.0;  // (2n+1)!!
  for (int n = 0; n <= nmax; ++n) {
    if (n > 0) {
      zn *= z;
      dfact *= (2.0 * n + 1.0);
    }
    cplx term = 1.0, sum = 1.0;
    for (int k = 1; k < 80; ++k) {
      term *= q / (k * (2.0 * n + 2.0 * k + 1.0));
      sum += term;
      if (std::abs(term) < 1e-18 * std::abs(sum)) break;
    }
    out[n] = zn / dfact * sum;
  }
  return out;
}

// Spherical Neumann y_n(x), real argument, upward recurrence.
inline std::vector<double> sph_y(int nmax, double x) {
  std::vector<double> y(nmax + 1);
  y[0] = -std::cos(x) / x;
  if (nmax > 0) y[1] = -std::cos(x) / (x * x) - std::sin(x) / x;
  for (int n = 1; n < nmax; ++n) y[n + 1] = (2.0 * n + 1.0) / x * y[n] - y[n - 1];
  return y;
}

// [z f_n(z)]' = z f_{n-1}(z) - n f_n(z)
inline cplx riccati_deriv(const std::vector<cplx>& f, int n, cplx z, cplx f_nm1) {
  return z * f_nm1 - static_cast<double>(n) * f[n];
}

class Sphere {
 public:
  Sphere(double radius, std::complex<double> eps, double k0, int nmax = 0) : a_(radius), k_(k0) {
    m_ = std::sqrt(std::conj(eps));
    const double x = k0 * radius;
    nmax_ = nmax > 0 ? nmax : static_cast<int>(std::ceil(x + 4.0 * std::cbrt(x) + 2.0)) + 4;
    const cplx mx = m_ * x;

    // Need n-1 at n = 1: j_0, and j_{-1}(z) = cos z / z, y_{-1}(x) = sin x / x.
    const auto jx = sph_j(nmax_, cplx(x, 0.0));
    const auto jmx = sph_j(nmax_, mx);
    const auto yx = sph_y(nmax_, x);
    std::vector<cplx> hx(nmax_ + 1);
    for (int n = 0; n <= nmax_; ++n) hx[n] = jx[n] + cplx(0.0, 1.0) * yx[n];

    c_.assign(nmax_ + 1, 0.0);
    d_.assign(nmax_ + 1, 0.0);
    for (int n = 1; n <= nmax_; ++n) {
      const cplx dxj = riccati_deriv(jx, n, x, jx[n - 1]);
      const cplx dxh = riccati_deriv(hx, n, x, hx[n - 1]);
      const cplx dmxj = riccati_deriv(jmx, n, mx, jmx[n - 1]);
      c_[n] = (jx[n] * dxh - hx[n] * dxj) / (jmx[n] * dxh - hx[n] * dmxj);
      d_[n] = (m_ * jx[n] * dxh - m_ * hx[n] * dxj) / (m_ * m_ * jmx[n] * dxh - hx[n] * dmxj);
    }
  }

  int terms() const { return nmax_; }

  // Internal total field at a point inside the sphere, cartesian, for unit incident amplitude.
  Eigen::Vector3cd internal_field(const Eigen::Vector3d& p) const {
    const double r = p.norm();
    if (r == 0.0) {
      // The series is regular at the origin; evaluate just off it.
      return internal_field(Eigen::Vector3d(1e-9 * a_, 0.0, 0.0));
    }
    const double ct = p.z() / r;
    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    const double phi = std::atan2(p.y(), p.x());
    const double cp = std::cos(phi), sp = std::sin(phi);
    const cplx rho = m_ * k_ * r;
    const auto j = sph_j(nmax_, rho);

    std::vector<double> pi(nmax_ + 1, 0.0), tau(nmax_ + 1, 0.0);
    pi[1] = 1.0;
    if (nmax_ >= 2) pi[2] = 3.0 * ct;
    for (int n = 3; n <= nmax_; ++n) pi[n] = (2.0 * n - 1.0) / (n - 1.0) * ct * pi[n - 1] - n / (n - 1.0) * pi[n - 2];
    for (int n = 1; n <= nmax_; ++n) tau[n] = n * ct * pi[n] - (n + 1.0) * pi[n - 1];

    cplx er = 0.0, et = 0.0, ep = 0.0;
    const cplx I(0.0, 1.0);
    cplx in = 1.0;
    for (int n = 1; n <= nmax_; ++n) {
      in *= I;
      const cplx En = in * (2.0 * n + 1.0) / (n * (n + 1.0));
      const cplx zn = j[n];
      const cplx dz = (rho * j[n - 1] - static_cast<double>(n) * j[n]) / rho;  // [rho z_n]' / rho
      // M_o1n
      const cplx mt = cp * pi[n] * zn, mp = -sp * tau[n] * zn;
      // N_e1n
      const cplx nr = cp * n * (n + 1.0) * st * pi[n] * zn / rho;
      const cplx nt = cp * tau[n] * dz, np = -sp * pi[n] * dz;
      er += En * (-I * d_[n] * nr);
      et += En * (c_[n] * mt - I * d_[n] * nt);
      ep += En * (c_[n] * mp - I * d_[n] * np);
    }
    const Eigen::Vector3d rh(st * cp, st * sp, ct), th(ct * cp, ct * sp, -st), ph(-sp, cp, 0.0);
    Eigen::Vector3cd e = er * rh.cast<cplx>() + et * th.cast<cplx>() + ep * ph.cast<cplx>();
    return e.conjugate();
  }

 private:
  double a_;
  double k_;
  cplx m_;
  int nmax_;
  std::vector<cplx> c_, d_;
};

}  // namespace mie
