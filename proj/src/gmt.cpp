#include "maxtomo/gmt.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace maxtomo {

void GmtConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be non-negative");
  if (max_iterations < 0) throw InvalidArgument("max_iterations must be non-negative");
  if (!(delta_min > 0.0)) throw InvalidArgument("delta_min must be positive");
  if (!(eps_max > 1.0 + delta_min)) throw InvalidArgument("eps_max must exceed 1 + delta_min");
  if (!(sigma_max > 0.0)) throw InvalidArgument("sigma_max must be positive");
  if (!(eps_r0 >= 1.0 + delta_min && eps_r0 <= eps_max)) throw InvalidArgument("initial eps_r outside the bounds");
  if (!(sigma0 >= 0.0 && sigma0 <= sigma_max)) throw InvalidArgument("initial sigma outside the bounds");
  if (memory < 1) throw InvalidArgument("L-BFGS memory must be positive");
  if (!(tv_beta > 0.0)) throw InvalidArgument("tv_beta must be positive");
  solver.validate();
}

namespace {

std::vector<RVec> normalized_magnitudes(const B1Set& b1, const std::vector<std::uint8_t>& mask, bool root) {
  b1.validate();
  if (mask.size() != b1.grid.size()) throw InvalidArgument("mask does not match the B1 grid");
  std::vector<RVec> out;
  for (const auto& ch : b1.channels) {
    double peak = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) peak = std::max(peak, std::abs(ch[i]));
    if (!(peak > 0.0)) throw InvalidArgument("B1 channel is zero on the mask");
    RVec w = RVec::Zero(static_cast<Eigen::Index>(mask.size()));
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      const double r = std::abs(ch[i]) / peak;
      w[i] = root ? std::sqrt(r) : r;
    }
    out.push_back(std::move(w));
  }
  return out;
}

RVec gather_real(const std::vector<std::size_t>& masked, const RVec& full) {
  RVec out(static_cast<Eigen::Index>(masked.size()));
  for (std::size_t k = 0; k < masked.size(); ++k) out[k] = full[masked[k]];
  return out;
}

}  // namespace

std::vector<RVec> weights_sqrt(const B1Set& b1, const std::vector<std::uint8_t>& mask) {
  return normalized_magnitudes(b1, mask, true);
}

std::vector<RVec> weights_linear(const B1Set& b1, const std::vector<std::uint8_t>& mask) {
  return normalized_magnitudes(b1, mask, false);
}

Measurements make_measurements(B1Set b1, const std::vector<std::uint8_t>& mask, WeightMode mode) {
  Measurements m;
  m.weights = mode == WeightMode::Sqrt ? weights_sqrt(b1, mask) : weights_linear(b1, mask);
  m.b1 = std::move(b1);
  return m;
}

DataConsistency data_consistency(const std::vector<CVec>& measured, const std::vector<CVec>& model,
                                 const std::vector<RVec>& weights, bool with_sensitivities) {
  const std::size_t L = measured.size();
  if (model.size() != L || weights.size() != L) throw InvalidArgument("channel counts differ");
  if (L == 0) throw InvalidArgument("no channels");
  const Eigen::Index n = measured[0].size();
  for (std::size_t l = 0; l < L; ++l)
    if (measured[l].size() != n || model[l].size() != n || weights[l].size() != n)
      throw InvalidArgument("channel lengths differ");

  DataConsistency out;
  if (with_sensitivities) out.t.assign(L, CVec::Zero(n));
  double S = 0.0, E = 0.0;
  std::vector<double> w2(L);
  for (Eigen::Index p = 0; p < n; ++p) {
    for (std::size_t l = 0; l < L; ++l) w2[l] = weights[l][p] * weights[l][p];
    for (std::size_t l = 0; l < L; ++l) {
      if (w2[l] == 0.0) continue;
      for (std::size_t m = 0; m < L; ++m) {
        const double W = w2[l] * w2[m];
        if (W == 0.0) continue;
        const cplx meas = measured[l][p] * std::conj(measured[m][p]);
        const cplx delta = meas - model[l][p] * std::conj(model[m][p]);
        S += W * std::norm(delta);
        E += W * std::norm(meas);
        if (with_sensitivities) out.t[l][p] += W * std::conj(delta) * std::conj(model[m][p]);
      }
    }
  }
  if (!(E > 0.0)) throw InvalidArgument("data-consistency normalization is zero");
  out.eta = std::sqrt(E);
  out.fd = std::sqrt(S) / out.eta;
  return out;
}

Regularizer tv_regularizer(const VoxelGrid& grid, const std::vector<std::size_t>& masked, const RVec& eps_r,
                           const RVec& sigma, double sigma_max, double beta) {
  const std::size_t n = masked.size();
  if (static_cast<std::size_t>(eps_r.size()) != n || static_cast<std::size_t>(sigma.size()) != n)
    throw InvalidArgument("regularizer inputs do not match the mask");
  if (!(sigma_max > 0.0)) throw InvalidArgument("sigma_max must be positive");
  std::vector<std::ptrdiff_t> slot(grid.size(), -1);
  for (std::size_t k = 0; k < n; ++k) slot[masked[k]] = static_cast<std::ptrdiff_t>(k);

  Regularizer r;
  r.d_eps_r = RVec::Zero(static_cast<Eigen::Index>(n));
  r.d_sigma = RVec::Zero(static_cast<Eigen::Index>(n));
  const double b2 = beta * beta;
  for (std::size_t k = 0; k < n; ++k) {
    const auto ijk = grid.ijk(masked[k]);
    std::array<std::ptrdiff_t, 3> nb{-1, -1, -1};
    std::array<double, 3> de{}, ds{};
    double sum = b2;
    for (int a = 0; a < 3; ++a) {
      auto q = ijk;
      if (++q[a] >= grid.dims[a]) continue;
      nb[a] = slot[grid.index(q[0], q[1], q[2])];
      if (nb[a] < 0) continue;
      de[a] = eps_r[nb[a]] - eps_r[k];
      ds[a] = (sigma[nb[a]] - sigma[k]) / sigma_max;
      sum += de[a] * de[a] + ds[a] * ds[a];
    }
    const double t = std::sqrt(sum);
    r.value += t;
    for (int a = 0; a < 3; ++a) {
      if (nb[a] < 0) continue;
      r.d_eps_r[nb[a]] += de[a] / t;
      r.d_eps_r[k] -= de[a] / t;
      r.d_sigma[nb[a]] += ds[a] / (t * sigma_max);
      r.d_sigma[k] -= ds[a] / (t * sigma_max);
    }
  }
  return r;
}

ShimDerivative shim_derivatives(const CVec& b1, const CVec& db1, std::size_t v) {
  if (b1.size() != db1.size()) throw InvalidArgument("field and perturbation lengths differ");
  if (v >= static_cast<std::size_t>(b1.size())) throw InvalidArgument("shim voxel out of range");
  const cplx bv = b1[v];
  const double mag = std::abs(bv);
  if (!(mag > 0.0)) throw InvalidArgument("shim voxel has zero field");
  const cplx u = std::conj(bv) / mag;
  const cplx dbv = db1[v];
  ShimDerivative d;
  d.dbeta = u * (db1 - b1 * (dbv / (2.0 * bv)));
  d.dbeta_conj = b1.conjugate() * (dbv / (2.0 * mag));
  return d;
}

CVec shim_pullback(const CVec& t, const CVec& b1, std::size_t v) {
  if (t.size() != b1.size()) throw InvalidArgument("sensitivity and field lengths differ");
  if (v >= static_cast<std::size_t>(b1.size())) throw InvalidArgument("shim voxel out of range");
  const cplx bv = b1[v];
  const double mag = std::abs(bv);
  if (!(mag > 0.0)) throw InvalidArgument("shim voxel has zero field");
  const cplx u = std::conj(bv) / mag;
  const cplx tb = t.cwiseProduct(b1).sum();
  CVec out = u * t;
  out[v] += -u * tb / (2.0 * bv) + std::conj(tb) / (2.0 * mag);
  return out;
}

void wirtinger_to_real(const CVec& dfd_eps, double omega, RVec& d_eps_r, RVec& d_sigma) {
  if (!(omega > 0.0)) throw InvalidArgument("omega must be positive");
  d_eps_r = 2.0 * dfd_eps.real();
  d_sigma = 2.0 * dfd_eps.imag() / (omega * kEps0);
}

GmtObjective::GmtObjective(const Scene& scene, const Measurements& meas, const GmtConfig& cfg,
                           std::vector<IncidentFields> vie_incident)
    : scene_(&scene), cfg_(cfg), incident_(std::move(vie_incident)) {
  cfg_.validate();
  if (scene.masked.empty()) throw InvalidArgument("empty mask");
  meas.b1.validate();
  if (!(meas.b1.grid == scene.grid)) throw InvalidArgument("measurements are not on the solver grid");
  const std::size_t L = meas.b1.channel_count();
  if (static_cast<int>(L) != scene.channel_count()) throw InvalidArgument("channel count differs from the coil");
  if (meas.weights.size() != L) throw InvalidArgument("weights do not match the channels");
  if (cfg_.mode == ForwardMode::Vie) {
    if (incident_.size() != L) throw InvalidArgument("VIE mode needs one incident field per channel");
    for (const auto& inc : incident_)
      if (inc.e_inc.size() != static_cast<Eigen::Index>(scene.unknowns()) || inc.h_inc.size() != inc.e_inc.size())
        throw InvalidArgument("incident field length does not match the mask");
  }
  if (cfg_.shim_voxel) {
    const auto it = std::lower_bound(scene.masked.begin(), scene.masked.end(), *cfg_.shim_voxel);
    if (it == scene.masked.end() || *it != *cfg_.shim_voxel) throw InvalidArgument("shim voxel is not masked");
    shim_ = static_cast<std::size_t>(it - scene.masked.begin());
  }
  for (std::size_t l = 0; l < L; ++l) {
    CVec m = gather_scalar(scene.masked, meas.b1.channels[l]);
    if (shim_) m = shim_zero_phase(m, *shim_);
    measured_.push_back(std::move(m));
    if (static_cast<std::size_t>(meas.weights[l].size()) != scene.grid.size())
      throw InvalidArgument("weight volume does not match the grid");
    weights_.push_back(gather_real(scene.masked, meas.weights[l]));
  }
}

GmtObjective::Value GmtObjective::evaluate(const RVec& eps_r, const RVec& sigma, bool gradient) {
  const Scene& sc = *scene_;
  const std::size_t n = sc.masked.size();
  const auto nn = static_cast<Eigen::Index>(n);
  if (eps_r.size() != nn || sigma.size() != nn) throw InvalidArgument("parameter vectors do not match the mask");
  const double omega = sc.omega;
  std::vector<cplx> eps(n);
  for (std::size_t k = 0; k < n; ++k) eps[k] = complex_permittivity(eps_r[k], sigma[k], omega);

  Value val;
  const bool vsie = cfg_.mode == ForwardMode::Vsie;
  BodyOperator body(sc.electric, sc.masked);
  body.set_permittivity(eps);
  std::optional<VsieSystem> system;
  if (vsie) system.emplace(body, sc.coil, sc.Zcc, sc.coupling);

  const int L = static_cast<int>(measured_.size());
  val.fields.resize(L);
  warm_jb_.resize(L);
  warm_adj_.resize(L);
  const CVec zero_b = CVec::Zero(3 * nn);
  parallel_for(L, [&](int l) {
    const CVec* guess = warm_jb_[l].size() == 3 * nn ? &warm_jb_[l] : nullptr;
    ChannelSolution& c = val.fields[l];
    if (vsie) {
      auto s = system->solve(sc.coil.excitation(l), zero_b, cfg_.solver, guess);
      c.jc = std::move(s.jc);
      c.jb = std::move(s.jb);
      c.info = s.info;
      c.b1 = b1plus_vie(*sc.magnetic, sc.masked, c.jb, sc.coupling.Kcb * c.jc);
    } else {
      auto s = solve_vie(body, incident_[l].e_inc, cfg_.solver, guess);
      c.jb = std::move(s.jb);
      c.info = s.info;
      c.b1 = b1plus_vie(*sc.magnetic, sc.masked, c.jb, incident_[l].h_inc);
    }
    warm_jb_[l] = c.jb;
  });

  std::vector<CVec> model(L);
  for (int l = 0; l < L; ++l) model[l] = shim_ ? shim_zero_phase(val.fields[l].b1, *shim_) : val.fields[l].b1;
  const DataConsistency dc = data_consistency(measured_, model, weights_, gradient);
  val.fd = dc.fd;

  RVec reg_e = RVec::Zero(nn), reg_s = RVec::Zero(nn);
  if (cfg_.alpha > 0.0) {
    const Regularizer r = tv_regularizer(sc.grid, sc.masked, eps_r, sigma, cfg_.sigma_max, cfg_.tv_beta);
    val.fr = r.value;
    reg_e = r.d_eps_r;
    reg_s = r.d_sigma;
  }
  val.f = val.fd + cfg_.alpha * val.fr;
  if (!gradient) return val;

  val.dfd_eps = CVec::Zero(nn);
  if (val.fd >= 1e-14) {
    const std::size_t nv = sc.grid.size();
    const cplx i(0.0, 1.0);
    std::vector<CVec> contrib(L);
    parallel_for(L, [&](int l) {
      const ChannelSolution& c = val.fields[l];
      const CVec t = shim_ ? shim_pullback(dc.t[l], c.b1, *shim_) : dc.t[l];
      CVec pt = CVec::Zero(3 * nn);
      pt.segment(0, nn) = t;
      pt.segment(nn, nn) = i * t;
      const CVec rb = gather_components(sc.masked, nv, sc.magnetic->apply(scatter_components(sc.masked, nv, pt)));
      const CVec* guess = warm_adj_[l].size() == 3 * nn ? &warm_adj_[l] : nullptr;
      CVec lam;
      if (vsie) {
        const CVec rc = sc.coupling.Kcb.transpose() * pt;
        lam = system->solve(rc, rb, cfg_.solver, guess).jb;
      } else {
        auto s = solve_vie(body, rb, cfg_.solver, guess);
        lam = std::move(s.jb);
      }
      warm_adj_[l] = lam;
      CVec acc = CVec::Zero(nn);
      for (int p = 0; p < 3; ++p) acc += lam.segment(p * nn, nn).cwiseProduct(c.jb.segment(p * nn, nn));
      contrib[l] = std::move(acc);
    });
    for (int l = 0; l < L; ++l) val.dfd_eps += contrib[l];  // fixed order
    const double scale = -kMu0 / (dc.eta * dc.eta * val.fd);
    for (std::size_t k = 0; k < n; ++k) {
      const cplx chi = eps[k] - 1.0;
      val.dfd_eps[k] *= scale / (i * omega * kEps0 * chi * chi);
    }
  }
  wirtinger_to_real(val.dfd_eps, omega, val.d_eps_r, val.d_sigma);
  val.d_eps_r += cfg_.alpha * reg_e;
  val.d_sigma += cfg_.alpha * reg_s;
  return val;
}

namespace {

double stacked_error(const std::vector<ChannelSolution>& fields, const std::vector<CVec>& reference) {
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < reference.size() && l < fields.size(); ++l) {
    num += (fields[l].jc - reference[l]).squaredNorm();
    den += reference[l].squaredNorm();
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace

Reconstruction reconstruct(const Scene& scene, const Measurements& meas, const GmtConfig& cfg,
                           std::vector<IncidentFields> vie_incident, const std::vector<CVec>* reference_currents) {
  cfg.validate();
  GmtObjective objective(scene, meas, cfg, std::move(vie_incident));
  const std::size_t n = scene.masked.size();
  const auto nn = static_cast<Eigen::Index>(n);
  const double s_unit = scene.omega * kEps0;  // optimizer works with sigma / (omega eps0)
  if (reference_currents && reference_currents->size() != static_cast<std::size_t>(scene.channel_count()))
    throw InvalidArgument("reference currents do not match the channels");
  const bool track_coil = reference_currents && cfg.mode == ForwardMode::Vsie;

  RVec lo(2 * nn), hi(2 * nn), x0(2 * nn);
  lo.head(nn).setConstant(1.0 + cfg.delta_min);
  hi.head(nn).setConstant(cfg.eps_max);
  lo.tail(nn).setZero();
  hi.tail(nn).setConstant(cfg.sigma_max / s_unit);
  x0.head(nn).setConstant(cfg.eps_r0);
  x0.tail(nn).setConstant(cfg.sigma0 / s_unit);

  Reconstruction rec;
  struct Last {
    RVec x;
    GmtObjective::Value v;
  } last;
  int evaluations = 0;
  RVec best_x = x0;
  double best_f = std::numeric_limits<double>::infinity();

  auto fun = [&](const RVec& x, RVec& g) {
    const RVec er = x.head(nn);
    const RVec sg = x.tail(nn) * s_unit;
    last.v = objective.evaluate(er, sg, true);
    last.x = x;
    ++evaluations;
    g.resize(2 * nn);
    g.head(nn) = last.v.d_eps_r;
    g.tail(nn) = s_unit * last.v.d_sigma;
    return last.v.f;
  };
  auto callback = [&](const LbfgsbIterate& it) {
    TraceRow row;
    row.iteration = it.iteration;
    row.f = it.f;
    row.evaluations = evaluations;
    if (last.x.size() == it.x.size() && last.x == it.x) {
      row.fd = last.v.fd;
      row.fr = last.v.fr;
      row.grad_inf = std::max(last.v.d_eps_r.cwiseAbs().maxCoeff(), last.v.d_sigma.cwiseAbs().maxCoeff());
      if (track_coil) row.coil_error = stacked_error(last.v.fields, *reference_currents);
    }
    rec.trace.push_back(row);
    if (row.f < best_f) {
      best_f = row.f;
      best_x = it.x;
    }
    return true;
  };

  LbfgsbOptions opt;
  opt.memory = cfg.memory;
  opt.max_iterations = cfg.max_iterations;
  try {
    const LbfgsbResult res = lbfgsb_minimize(fun, x0, lo, hi, opt, callback);
    best_x = res.x;
    best_f = res.f;
    rec.stop_reason = res.stop_reason;
  } catch (const SolverFailure& e) {
    rec.stop_reason = std::string("solver failure: ") + e.what();
    rec.aborted = true;
  }

  rec.best_cost = best_f;
  rec.ep = EPMap(scene.grid);
  for (std::size_t k = 0; k < n; ++k) rec.ep.set(scene.masked[k], best_x[k], best_x[nn + k] * s_unit);
  return rec;
}

std::string trace_table(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "iteration\tf\tf_d\tf_r\tgrad_inf\tcoil_error\tevaluations\n";
  os << std::setprecision(10);
  for (const auto& r : trace) {
    os << r.iteration << '\t' << r.f << '\t' << r.fd << '\t' << r.fr << '\t' << r.grad_inf << '\t';
    if (r.coil_error) os << *r.coil_error;
    else os << "nan";
    os << '\t' << r.evaluations << '\n';
  }
  return os.str();
}

}  // namespace maxtomo
