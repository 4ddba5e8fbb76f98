#pragma once

#include <cmath>
#include <vector>

#include "maxtomo/common.hpp"

namespace maxtomo {

struct SolverConfig {
  double tolerance = 1e-6;  // relative residual target
  int max_iterations = 1000;
  int restart = 50;

  void validate() const {
    if (!(tolerance > 0.0 && tolerance < 1.0)) throw InvalidArgument("solver tolerance must lie in (0, 1)");
    if (max_iterations < 1 || restart < 1) throw InvalidArgument("solver iteration caps must be positive");
  }
};

struct KrylovResult {
  bool converged = false;
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Right-preconditioned restarted GMRES for a complex linear operator.
///
/// `apply(x)` returns A x; `precond(x)` returns an approximation of A^-1 x.
/// `x` holds the initial guess on entry. The reported residual is the true
/// residual ||b - A x|| / ||b|| recomputed at every restart.
template <class Apply, class Precond>
KrylovResult gmres(Apply&& apply, Precond&& precond, const CVec& b, CVec& x, const SolverConfig& cfg) {
  cfg.validate();
  KrylovResult res;
  const double bnorm = b.norm();
  if (x.size() != b.size()) x = CVec::Zero(b.size());
  if (bnorm == 0.0) {
    x.setZero();
    res.converged = true;
    return res;
  }
  const int m = cfg.restart;
  std::vector<CVec> V(m + 1);
  CMat H = CMat::Zero(m + 1, m);
  std::vector<double> cs(m);
  std::vector<cplx> sn(m);
  CVec g(m + 1);

  CVec r = b - apply(x);
  double rnorm = r.norm();
  res.relative_residual = rnorm / bnorm;
  while (res.iterations < cfg.max_iterations) {
    if (res.relative_residual <= cfg.tolerance) {
      res.converged = true;
      return res;
    }
    V[0] = r / rnorm;
    g.setZero();
    g[0] = rnorm;
    int k = 0;
    for (; k < m && res.iterations < cfg.max_iterations; ++k) {
      ++res.iterations;
      CVec w = apply(precond(V[k]));
      for (int i = 0; i <= k; ++i) {
        H(i, k) = V[i].dot(w);  // conjugates V[i]
        w -= H(i, k) * V[i];
      }
      const double hnext = w.norm();
      H(k + 1, k) = hnext;
      if (hnext > 0.0) V[k + 1] = w / hnext;
      for (int i = 0; i < k; ++i) {
        const cplx t = cs[i] * H(i, k) + sn[i] * H(i + 1, k);
        H(i + 1, k) = -std::conj(sn[i]) * H(i, k) + cs[i] * H(i + 1, k);
        H(i, k) = t;
      }
      const cplx a = H(k, k), bb = H(k + 1, k);
      const double rho = std::sqrt(std::norm(a) + std::norm(bb));
      if (std::abs(a) == 0.0) {
        cs[k] = 0.0;
        sn[k] = 1.0;
        H(k, k) = bb;
      } else {
        const cplx phase = a / std::abs(a);
        cs[k] = std::abs(a) / rho;
        sn[k] = phase * std::conj(bb) / rho;
        H(k, k) = phase * rho;
      }
      H(k + 1, k) = 0.0;
      g[k + 1] = -std::conj(sn[k]) * g[k];
      g[k] = cs[k] * g[k];
      if (std::abs(g[k + 1]) / bnorm <= cfg.tolerance || hnext == 0.0) {
        ++k;
        break;
      }
    }
    // Back substitution for the k Arnoldi steps just taken.
    CVec y = H.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
    CVec update = CVec::Zero(b.size());
    for (int i = 0; i < k; ++i) update += y[i] * V[i];
    x += precond(update);
    r = b - apply(x);
    rnorm = r.norm();
    res.relative_residual = rnorm / bnorm;
  }
  res.converged = res.relative_residual <= cfg.tolerance;
  return res;
}

}  // namespace maxtomo
