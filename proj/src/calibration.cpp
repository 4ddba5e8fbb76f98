#include "maxtomo/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "maxtomo/gmt.hpp"
#include "maxtomo/lbfgsb.hpp"

namespace maxtomo {

namespace {

void check_inputs(const B1Set& measured, const B1Set& simulated, const std::vector<RVec>& weights) {
  measured.validate();
  simulated.validate();
  if (!(measured.grid == simulated.grid)) throw InvalidArgument("calibration: grids differ");
  if (measured.channel_count() != simulated.channel_count() || weights.size() != measured.channel_count())
    throw InvalidArgument("calibration: channel counts differ");
  if (measured.channel_count() == 0) throw InvalidArgument("calibration: no channels");
  for (const auto& w : weights)
    if (static_cast<std::size_t>(w.size()) != measured.grid.size())
      throw InvalidArgument("calibration: weight volume does not match the grid");
}

std::vector<std::size_t> weighted_voxels(const std::vector<RVec>& weights) {
  std::vector<std::size_t> idx;
  for (Eigen::Index i = 0; i < weights[0].size(); ++i)
    for (const auto& w : weights)
      if (w[i] > 0.0) {
        idx.push_back(static_cast<std::size_t>(i));
        break;
      }
  return idx;
}

std::vector<CVec> gather_all(const std::vector<CVec>& channels, const std::vector<std::size_t>& idx) {
  std::vector<CVec> out;
  for (const auto& c : channels) out.push_back(gather_scalar(idx, c));
  return out;
}

std::vector<RVec> gather_all(const std::vector<RVec>& channels, const std::vector<std::size_t>& idx) {
  std::vector<RVec> out;
  for (const auto& c : channels) {
    RVec v(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) v[k] = c[idx[k]];
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

B1Set apply_calibration(const B1Set& measured, const std::vector<cplx>& q) {
  if (q.size() != measured.channel_count()) throw InvalidArgument("calibration weights do not match the channels");
  B1Set out = measured;
  for (std::size_t l = 0; l < q.size(); ++l) out.channels[l] *= q[l];
  return out;
}

double calibration_residual(const B1Set& measured, const B1Set& simulated, const std::vector<RVec>& weights,
                            const std::vector<cplx>& q) {
  check_inputs(measured, simulated, weights);
  const auto idx = weighted_voxels(weights);
  if (idx.empty()) throw InvalidArgument("calibration: all weights are zero");
  const B1Set scaled = apply_calibration(measured, q);
  return data_consistency(gather_all(scaled.channels, idx), gather_all(simulated.channels, idx),
                          gather_all(weights, idx))
      .fd;
}

CalibrationResult calibrate(const B1Set& measured, const B1Set& simulated, const std::vector<RVec>& weights,
                            const CalibrationOptions& opts) {
  check_inputs(measured, simulated, weights);
  const auto idx = weighted_voxels(weights);
  if (idx.empty()) throw InvalidArgument("calibration: all weights are zero");
  const auto meas = gather_all(measured.channels, idx);
  const auto sim = gather_all(simulated.channels, idx);
  const auto w = gather_all(weights, idx);
  const std::size_t L = meas.size();
  const auto n = static_cast<Eigen::Index>(idx.size());
  for (std::size_t l = 0; l < L; ++l) {
    if (!(meas[l].cwiseAbs().maxCoeff() > 0.0)) throw InvalidArgument("calibration: measured channel is all zero");
    if (!(sim[l].cwiseAbs().maxCoeff() > 0.0)) throw InvalidArgument("calibration: simulated channel is all zero");
  }

  double R = 0.0;  // eta^2 of the simulated maps; fixes the objective scale
  for (Eigen::Index v = 0; v < n; ++v)
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t l = 0; l < L; ++l)
        R += w[k][v] * w[k][v] * w[l][v] * w[l][v] * std::norm(sim[k][v] * std::conj(sim[l][v]));
  if (!(R > 0.0)) throw InvalidArgument("calibration: simulated maps vanish under the weights");

  // S(q) = sum_v sum_kl W |q_k conj(q_l) A_kl - C_kl|^2, dS/dconj(q_k) = 2 sum W r_kl q_l conj(A_kl).
  const auto Li = static_cast<Eigen::Index>(L);
  auto objective = [&](const RVec& x, RVec& g) {
    CVec q(Li);
    for (Eigen::Index k = 0; k < Li; ++k) q[k] = cplx(x[k], x[Li + k]);
    CVec grad = CVec::Zero(Li);
    double S = 0.0;
    for (Eigen::Index v = 0; v < n; ++v) {
      for (Eigen::Index k = 0; k < Li; ++k) {
        const double wk = w[k][v] * w[k][v];
        if (wk == 0.0) continue;
        const cplx mk = q[k] * meas[k][v];
        for (Eigen::Index l = 0; l < Li; ++l) {
          const double W = wk * w[l][v] * w[l][v];
          if (W == 0.0) continue;
          const cplx A = meas[k][v] * std::conj(meas[l][v]);
          const cplx r = mk * std::conj(q[l] * meas[l][v]) - sim[k][v] * std::conj(sim[l][v]);
          S += W * std::norm(r);
          grad[k] += 2.0 * W * r * q[l] * std::conj(A);
        }
      }
    }
    g.resize(2 * Li);
    g.head(Li) = 2.0 * grad.real() / R;
    g.tail(Li) = 2.0 * grad.imag() / R;
    return S / R;
  };

  RVec x0 = RVec::Zero(2 * Li);
  for (std::size_t l = 0; l < L; ++l) x0[l] = sim[l].cwiseAbs().maxCoeff() / meas[l].cwiseAbs().maxCoeff();
  const double inf = std::numeric_limits<double>::infinity();
  LbfgsbOptions lo;
  lo.max_iterations = opts.max_iterations;
  lo.pgtol = opts.pgtol;
  lo.ftol = 0.0;
  const auto res = lbfgsb_minimize(objective, x0, RVec::Constant(2 * Li, -inf), RVec::Constant(2 * Li, inf), lo);

  CalibrationResult out;
  out.q.resize(L);
  for (std::size_t l = 0; l < L; ++l) out.q[l] = cplx(res.x[l], res.x[Li + l]);
  const double m0 = std::abs(out.q[0]);
  if (m0 > 0.0) {
    const cplx gauge = std::conj(out.q[0]) / m0;
    for (auto& v : out.q) v *= gauge;
    out.q[0] = cplx(m0, 0.0);
  }
  out.iterations = res.iterations;
  out.stop_reason = res.stop_reason;
  std::vector<CVec> scaled = meas;
  for (std::size_t l = 0; l < L; ++l) scaled[l] *= out.q[l];
  out.residual = data_consistency(scaled, sim, w).fd;
  return out;
}

std::vector<cplx> cross_calibration_scale(const std::vector<cplx>& q, double v_target, double v_ref) {
  if (!(v_ref > 0.0)) throw InvalidArgument("reference voltage must be positive");
  std::vector<cplx> out = q;
  for (auto& v : out) v *= v_target / v_ref;
  return out;
}

}  // namespace maxtomo
