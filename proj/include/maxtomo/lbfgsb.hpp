#pragma once

// Limited-memory BFGS for simple bounds (Byrd, Lu, Nocedal, Zhu 1995):
// generalized Cauchy point along the projected steepest-descent path, direct
// primal subspace minimization over the free variables, and a strong-Wolfe
// line search that never leaves the box.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace maxtomo {

struct LbfgsbOptions {
  int memory = 10;
  int max_iterations = 500;
  /// Stop when the projected gradient's infinity norm falls below this.
  double pgtol = 1e-10;
  /// Stop when (f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|) falls below this.
  double ftol = 1e-14;
  int max_line_search = 20;
  double c1 = 1e-4;  // sufficient decrease
  double c2 = 0.9;   // curvature
};

struct LbfgsbResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  std::string stop_reason;
};

struct LbfgsbIterate {
  int iteration;
  const Eigen::VectorXd& x;
  double f;
  const Eigen::VectorXd& g;
  double projected_gradient;
};

/// Objective: double f(const VectorXd& x, VectorXd& grad).
/// Callback: bool cb(const LbfgsbIterate&), called at x0 (iteration 0) and after
/// every accepted step; returning false stops the run.
template <class Objective>
LbfgsbResult lbfgsb_minimize(Objective&& objective, Eigen::VectorXd x0, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi, const LbfgsbOptions& opt,
                             const std::function<bool(const LbfgsbIterate&)>& callback = {});

namespace lbfgsb_detail {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline double projected_gradient_norm(const Vec& x, const Vec& g, const Vec& lo, const Vec& hi) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double p = std::clamp(x[i] - g[i], lo[i], hi[i]) - x[i];
    m = std::max(m, std::abs(p));
  }
  return m;
}

class Memory {
 public:
  explicit Memory(int m) : cap_(m) {}

  bool empty() const { return s_.empty(); }
  int size() const { return static_cast<int>(s_.size()); }
  double theta() const { return theta_; }
  void clear() {
    s_.clear();
    y_.clear();
    theta_ = 1.0;
  }

  void push(const Vec& s, const Vec& y) {
    if (static_cast<int>(s_.size()) == cap_) {
      s_.pop_front();
      y_.pop_front();
    }
    s_.push_back(s);
    y_.push_back(y);
    theta_ = y.squaredNorm() / s.dot(y);
    rebuild();
  }

  // W = [Y, theta S] (n x 2k)
  const Mat& W() const { return W_; }
  // M = [[-D, L^T], [L, theta S^T S]]^{-1}
  const Mat& M() const { return M_; }

 private:
  void rebuild() {
    const int k = size();
    const Eigen::Index n = s_.front().size();
    Mat S(n, k), Y(n, k);
    for (int i = 0; i < k; ++i) {
      S.col(i) = s_[i];
      Y.col(i) = y_[i];
    }
    W_.resize(n, 2 * k);
    W_ << Y, theta_ * S;
    const Mat SY = S.transpose() * Y;
    Mat A = Mat::Zero(2 * k, 2 * k);
    for (int i = 0; i < k; ++i) A(i, i) = -SY(i, i);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < i; ++j) {
        A(k + i, j) = SY(i, j);
        A(j, k + i) = SY(i, j);
      }
    A.bottomRightCorner(k, k) = theta_ * S.transpose() * S;
    M_ = A.fullPivLu().inverse();
  }

  int cap_;
  std::deque<Vec> s_, y_;
  double theta_ = 1.0;
  Mat W_, M_;
};

// Generalized Cauchy point. Returns x_cp and c = W^T (x_cp - x).
inline void cauchy_point(const Vec& x, const Vec& g, const Vec& lo, const Vec& hi, const Memory& mem,
                         Vec& xcp, Vec& c) {
  const Eigen::Index n = x.size();
  const double theta = mem.theta();
  const bool has_mem = !mem.empty();
  const Eigen::Index m2 = has_mem ? mem.W().cols() : 0;

  Vec t(n);
  Vec d = -g;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g[i] < 0.0)
      t[i] = (x[i] - hi[i]) / g[i];
    else if (g[i] > 0.0)
      t[i] = (x[i] - lo[i]) / g[i];
    else
      t[i] = std::numeric_limits<double>::infinity();
    if (t[i] <= 0.0) d[i] = 0.0;
  }
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < n; ++i)
    if (t[i] > 0.0 && std::isfinite(t[i])) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return t[a] < t[b]; });

  xcp = x;
  Vec p = has_mem ? Vec(mem.W().transpose() * d) : Vec();
  c = Vec::Zero(m2);
  double fp = -d.squaredNorm();
  double fpp = -theta * fp - (has_mem ? p.dot(mem.M() * p) : 0.0);
  const double fpp0 = fpp;
  double dt_min = fpp > 0.0 ? -fp / fpp : std::numeric_limits<double>::infinity();
  double t_old = 0.0;

  std::size_t b = 0;
  for (; b < order.size(); ++b) {
    const Eigen::Index i = order[b];
    const double dt = t[i] - t_old;
    if (dt_min < dt) break;
    xcp[i] = d[i] > 0.0 ? hi[i] : lo[i];
    const double zb = xcp[i] - x[i];
    const double gb = g[i];
    if (has_mem) {
      c += dt * p;
      const Vec wb = mem.W().row(i).transpose();
      const Vec Mc = mem.M() * c, Mp = mem.M() * p, Mw = mem.M() * wb;
      fp += dt * fpp + gb * gb + theta * gb * zb - gb * wb.dot(Mc);
      fpp += -theta * gb * gb - 2.0 * gb * wb.dot(Mp) - gb * gb * wb.dot(Mw);
      p += gb * wb;
    } else {
      fp += dt * fpp + gb * gb + theta * gb * zb;
      fpp += -theta * gb * gb;
    }
    fpp = std::max(fpp, std::numeric_limits<double>::epsilon() * fpp0);
    d[i] = 0.0;
    dt_min = -fp / fpp;
    t_old = t[i];
  }
  dt_min = std::max(dt_min, 0.0);
  if (!std::isfinite(dt_min)) dt_min = 0.0;
  t_old += dt_min;
  for (std::size_t r = b; r < order.size(); ++r) {
    const Eigen::Index i = order[r];
    xcp[i] = x[i] + t_old * d[i];
  }
  // Unbounded directions never hit a breakpoint.
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(t[i]) && d[i] != 0.0) xcp[i] = x[i] + t_old * d[i];
  if (has_mem) c += dt_min * p;
}

// Direct primal subspace minimization; returns the new trial point x_bar.
inline Vec subspace_min(const Vec& x, const Vec& g, const Vec& lo, const Vec& hi, const Memory& mem, const Vec& xcp,
                        const Vec& c) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i)
    if (xcp[i] > lo[i] && xcp[i] < hi[i]) free.push_back(i);
  if (free.empty() || mem.empty()) return xcp;

  const double theta = mem.theta();
  const Mat& W = mem.W();
  const Mat& M = mem.M();
  const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
  const Vec Mc = M * c;
  Vec r(nf);
  Mat WF(nf, W.cols());
  for (Eigen::Index k = 0; k < nf; ++k) {
    const Eigen::Index i = free[k];
    WF.row(k) = W.row(i);
    r[k] = g[i] + theta * (xcp[i] - x[i]) - W.row(i).dot(Mc);
  }
  Vec v = M * (WF.transpose() * r);
  const Mat N = Mat::Identity(W.cols(), W.cols()) - (1.0 / theta) * M * (WF.transpose() * WF);
  v = N.fullPivLu().solve(v);
  const Vec du = -(1.0 / theta) * r - (1.0 / (theta * theta)) * (WF * v);

  // Largest step in [0, 1] keeping the free variables feasible.
  double alpha = 1.0;
  for (Eigen::Index k = 0; k < nf; ++k) {
    const Eigen::Index i = free[k];
    if (du[k] > 0.0)
      alpha = std::min(alpha, (hi[i] - xcp[i]) / du[k]);
    else if (du[k] < 0.0)
      alpha = std::min(alpha, (lo[i] - xcp[i]) / du[k]);
  }
  Vec xbar = xcp;
  for (Eigen::Index k = 0; k < nf; ++k) xbar[free[k]] += alpha * du[k];
  return xbar;
}

// Cubic minimizer of the interpolant through (a, fa, ga), (b, fb, gb), safeguarded into the interval.
inline double cubic_step(double a, double fa, double ga, double b, double fb, double gb) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  double t;
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
  } else {
    t = 0.5 * (a + b);
  }
  const double lo = std::min(a, b), hi = std::max(a, b), w = hi - lo;
  if (!std::isfinite(t) || t < lo + 0.1 * w || t > hi - 0.1 * w) t = 0.5 * (a + b);
  return t;
}

// Strong-Wolfe search for phi on (0, step_max]. phi(a, dphi) must leave the evaluated
// point as the caller's current trial. Returns the accepted step, or the best
// sufficient-decrease step seen, or 0 on failure.
template <class Phi>
double strong_wolfe(Phi&& phi, double f0, double g0, double step, double step_max, const LbfgsbOptions& opt) {
  double a_prev = 0.0, f_prev = f0, g_prev = g0;
  double best = 0.0, f_best = f0;
  auto armijo = [&](double a, double fa) { return std::isfinite(fa) && fa <= f0 + opt.c1 * a * g0; };
  auto note = [&](double a, double fa) {
    if (armijo(a, fa) && fa < f_best) {
      best = a;
      f_best = fa;
    }
  };

  auto zoom = [&](double alo, double flo, double glo, double ahi, double fhi, double ghi, int budget) {
    for (int it = 0; it < budget; ++it) {
      const double a = std::isfinite(fhi) ? cubic_step(alo, flo, glo, ahi, fhi, ghi) : 0.5 * (alo + ahi);
      double ga;
      const double fa = phi(a, ga);
      note(a, fa);
      if (!armijo(a, fa) || fa >= flo) {
        ahi = a;
        fhi = fa;
        ghi = ga;
      } else {
        if (std::abs(ga) <= -opt.c2 * g0) return a;
        if (ga * (ahi - alo) >= 0.0) {
          ahi = alo;
          fhi = flo;
          ghi = glo;
        }
        alo = a;
        flo = fa;
        glo = ga;
      }
      if (std::abs(ahi - alo) <= 1e-14 * std::max(1.0, std::abs(ahi))) break;
    }
    return -1.0;
  };

  for (int it = 0; it < opt.max_line_search; ++it) {
    double ga;
    const double fa = phi(step, ga);
    note(step, fa);
    const int left = opt.max_line_search - it - 1;
    if (!armijo(step, fa) || (it > 0 && fa >= f_prev)) {
      const double a = zoom(a_prev, f_prev, g_prev, step, fa, ga, left);
      return a > 0.0 ? a : best;
    }
    if (std::abs(ga) <= -opt.c2 * g0) return step;
    if (ga >= 0.0) {
      const double a = zoom(step, fa, ga, a_prev, f_prev, g_prev, left);
      return a > 0.0 ? a : best;
    }
    // Still descending at the cap: take it.
    if (step >= step_max) return step;
    a_prev = step;
    f_prev = fa;
    g_prev = ga;
    step = std::min(step_max, 4.0 * step);
  }
  return best;
}

}  // namespace lbfgsb_detail

template <class Objective>
LbfgsbResult lbfgsb_minimize(Objective&& objective, Eigen::VectorXd x0, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi, const LbfgsbOptions& opt,
                             const std::function<bool(const LbfgsbIterate&)>& callback) {
  using namespace lbfgsb_detail;
  const Eigen::Index n = x0.size();
  if (lo.size() != n || hi.size() != n) throw std::invalid_argument("lbfgsb: bound vectors have the wrong length");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(lo[i] <= hi[i])) throw std::invalid_argument("lbfgsb: lower bound above upper bound");
    x0[i] = std::clamp(x0[i], lo[i], hi[i]);
  }

  LbfgsbResult res;
  Vec x = x0, g(n);
  double f = objective(x, g);
  ++res.evaluations;
  res.x = x;
  res.f = f;
  double pg = projected_gradient_norm(x, g, lo, hi);
  if (callback && !callback(LbfgsbIterate{0, x, f, g, pg})) {
    res.stop_reason = "stopped by callback";
    return res;
  }
  if (opt.max_iterations <= 0) {
    res.stop_reason = "iteration limit";
    return res;
  }

  Memory mem(opt.memory);
  Vec xcp, c, gnew(n);
  while (res.iterations < opt.max_iterations) {
    if (pg <= opt.pgtol) {
      res.stop_reason = "projected gradient below tolerance";
      break;
    }
    cauchy_point(x, g, lo, hi, mem, xcp, c);
    Vec d = subspace_min(x, g, lo, hi, mem, xcp, c) - x;
    double gd = g.dot(d);
    if (!(gd < 0.0)) {
      if (mem.empty()) {
        res.stop_reason = "no descent direction";
        break;
      }
      mem.clear();
      continue;
    }

    // x + step d stays in the box for step <= 1. Without curvature pairs the
    // direction carries the raw gradient scale, so the first trial moves a unit
    // distance and longer steps follow the projected path.
    Vec xnew(n);
    double fnew = f, last_step = -1.0;
    auto phi = [&](double a, double& dphi) {
      last_step = a;
      xnew = x + a * d;
      for (Eigen::Index i = 0; i < n; ++i) xnew[i] = std::clamp(xnew[i], lo[i], hi[i]);
      fnew = objective(xnew, gnew);
      ++res.evaluations;
      dphi = gnew.dot(d);
      return fnew;
    };
    const double step_max = mem.empty() ? std::numeric_limits<double>::max() : 1.0;
    const double step0 = mem.empty() ? 1.0 / d.norm() : 1.0;
    const double a_ok = strong_wolfe(phi, f, gd, step0, step_max, opt);
    if (a_ok <= 0.0) {
      if (!mem.empty()) {
        mem.clear();
        continue;
      }
      res.stop_reason = "line search failed";
      break;
    }
    if (last_step != a_ok) {
      double unused;
      phi(a_ok, unused);
    }

    const Vec s = xnew - x, y = gnew - g;
    const double fprev = f;
    x = xnew;
    f = fnew;
    g = gnew;
    ++res.iterations;
    if (s.dot(y) > std::numeric_limits<double>::epsilon() * y.squaredNorm()) mem.push(s, y);
    if (f < res.f) {
      res.f = f;
      res.x = x;
    }
    pg = projected_gradient_norm(x, g, lo, hi);
    if (callback && !callback(LbfgsbIterate{res.iterations, x, f, g, pg})) {
      res.stop_reason = "stopped by callback";
      break;
    }
    const double denom = std::max({std::abs(fprev), std::abs(f), std::numeric_limits<double>::min()});
    if ((fprev - f) / denom <= opt.ftol) {
      res.stop_reason = "relative reduction below tolerance";
      break;
    }
  }
  if (res.stop_reason.empty()) res.stop_reason = "iteration limit";
  return res;
}

}  // namespace maxtomo
