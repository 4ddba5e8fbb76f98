#include "maxtomo/forward.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <limits>
#include <random>

namespace maxtomo {

CVec scatter_components(const std::vector<std::size_t>& masked, std::size_t nv, const CVec& x) {
  const std::size_t n = masked.size();
  if (static_cast<std::size_t>(x.size()) != 3 * n) throw InvalidArgument("masked field has the wrong length");
  CVec full = CVec::Zero(static_cast<Eigen::Index>(3 * nv));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < n; ++k) full[c * nv + masked[k]] = x[c * n + k];
  return full;
}

CVec gather_components(const std::vector<std::size_t>& masked, std::size_t nv, const CVec& full) {
  const std::size_t n = masked.size();
  if (static_cast<std::size_t>(full.size()) != 3 * nv) throw InvalidArgument("grid field has the wrong length");
  CVec x(static_cast<Eigen::Index>(3 * n));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < n; ++k) x[c * n + k] = full[c * nv + masked[k]];
  return x;
}

CVec scatter_scalar(const std::vector<std::size_t>& masked, std::size_t nv, const CVec& values) {
  if (static_cast<std::size_t>(values.size()) != masked.size()) throw InvalidArgument("masked values have the wrong length");
  CVec full = CVec::Zero(static_cast<Eigen::Index>(nv));
  for (std::size_t k = 0; k < masked.size(); ++k) full[masked[k]] = values[k];
  return full;
}

CVec gather_scalar(const std::vector<std::size_t>& masked, const CVec& volume) {
  CVec out(static_cast<Eigen::Index>(masked.size()));
  for (std::size_t k = 0; k < masked.size(); ++k) out[k] = volume[masked[k]];
  return out;
}

BodyOperator::BodyOperator(std::shared_ptr<const ToeplitzKernel> electric, std::vector<std::size_t> masked)
    : electric_(std::move(electric)), masked_(std::move(masked)) {
  if (!electric_ || electric_->kind() != ToeplitzKernel::Kind::Electric)
    throw InvalidArgument("body operator needs an electric kernel");
  self_l_ = electric_->block(0, 0, 0)(0, 0);
  eps_.assign(masked_.size(), cplx(2.0, 0.0));
  set_permittivity(eps_);
}

void BodyOperator::set_permittivity(const std::vector<cplx>& eps_masked) {
  if (eps_masked.size() != masked_.size()) throw InvalidArgument("permittivity vector has the wrong length");
  const double dv = grid().voxel_volume();
  const cplx iwe(0.0, omega() * kEps0);
  material_.resize(masked_.size());
  for (std::size_t k = 0; k < masked_.size(); ++k) {
    const cplx chi = eps_masked[k] - 1.0;
    if (chi == cplx(0.0, 0.0)) throw InvalidArgument("contrast eps - 1 vanishes on a masked voxel");
    material_[k] = dv / (iwe * chi);
  }
  eps_ = eps_masked;
}

void BodyOperator::set_permittivity(const ComplexPermittivityField& eps) {
  if (!(eps.grid == grid())) throw InvalidArgument("permittivity grid does not match the operator grid");
  std::vector<cplx> v(masked_.size());
  for (std::size_t k = 0; k < masked_.size(); ++k) v[k] = eps.eps[masked_[k]];
  set_permittivity(v);
}

CVec BodyOperator::apply(const CVec& x) const {
  const std::size_t n = masked_.size(), nv = grid().size();
  const CVec lx = gather_components(masked_, nv, electric_->apply(scatter_components(masked_, nv, x)));
  CVec y(x.size());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < n; ++k) y[c * n + k] = material_[k] * x[c * n + k] - lx[c * n + k];
  return y;
}

CVec BodyOperator::precondition(const CVec& x) const {
  const std::size_t n = masked_.size();
  CVec y(x.size());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < n; ++k) y[c * n + k] = x[c * n + k] / (material_[k] - self_l_);
  return y;
}

BodySolve solve_vie(const BodyOperator& body, const CVec& e_inc, const SolverConfig& cfg, const CVec* guess) {
  if (body.masked_count() == 0) throw InvalidArgument("solve_vie: empty mask");
  if (static_cast<std::size_t>(e_inc.size()) != body.unknowns()) throw InvalidArgument("solve_vie: e_inc has the wrong length");
  BodySolve out;
  out.jb = guess && guess->size() == e_inc.size() ? *guess : CVec::Zero(e_inc.size());
  out.info = gmres([&](const CVec& x) { return body.apply(x); },
                   [&](const CVec& x) { return body.precondition(x); }, e_inc, out.jb, cfg);
  if (!out.info.converged) throw SolverFailure("VIE solve did not converge", out.info.relative_residual);
  return out;
}

VsieSystem::VsieSystem(const BodyOperator& body, const WireCoil& coil, CMat Zcc, CouplingOperators coupling)
    : body_(&body), coil_(&coil), Zcc_(std::move(Zcc)), coupling_(std::move(coupling)) {
  const Eigen::Index m = static_cast<Eigen::Index>(coil.basis_count());
  if (Zcc_.rows() != m || Zcc_.cols() != m) throw InvalidArgument("Zcc has the wrong size");
  const Eigen::Index nb = static_cast<Eigen::Index>(body.unknowns());
  if (coupling_.Zcb.rows() != nb || coupling_.Zcb.cols() != m || coupling_.Kcb.rows() != nb ||
      coupling_.Kcb.cols() != m)
    throw InvalidArgument("coupling operators do not match the coil and the mask");
  lu_.compute(Zcc_);
  // rcond() misses exact zero pivots; check the pivot spread as well.
  const Eigen::VectorXd piv = lu_.matrixLU().diagonal().cwiseAbs();
  const double rc = m > 0 ? std::min(lu_.rcond(), piv.minCoeff() / piv.maxCoeff()) : 1.0;
  if (!(rc > 1e-13))
    throw SolverFailure("coil impedance matrix is singular (lossless resonance?); add lumped resistance", rc);
  coil_elim_ = lu_.solve(coupling_.Zcb.transpose());
}

CVec VsieSystem::schur_apply(const CVec& x) const {
  return body_->apply(x) - coupling_.Zcb * (coil_elim_ * x);
}

std::pair<CVec, CVec> VsieSystem::block_apply(const CVec& jc, const CVec& jb) const {
  CVec rc = Zcc_ * jc;
  CVec rb = coupling_.Zcb * jc;
  if (jb.size() > 0) {
    rc += coupling_.Zcb.transpose() * jb;
    rb += body_->apply(jb);
  }
  return {rc, rb};
}

VsieSystem::Solution VsieSystem::solve(const CVec& rc, const CVec& rb, const SolverConfig& cfg,
                                       const CVec* guess) const {
  Solution s;
  if (body_->masked_count() == 0) {
    s.jc = lu_.solve(rc);
    s.jb = CVec(0);
    s.info.converged = true;
    return s;
  }
  const CVec schur_rhs = rb - coupling_.Zcb * lu_.solve(rc);
  s.jb = guess && guess->size() == schur_rhs.size() ? *guess : CVec::Zero(schur_rhs.size());
  s.info = gmres([&](const CVec& x) { return schur_apply(x); },
                 [&](const CVec& x) { return body_->precondition(x); }, schur_rhs, s.jb, cfg);
  if (!s.info.converged) throw SolverFailure("VSIE solve did not converge", s.info.relative_residual);
  s.jc = lu_.solve(rc - coupling_.Zcb.transpose() * s.jb);
  return s;
}

double vsie_block_residual(const VsieSystem& system, const CVec& v, const CVec& jc, const CVec& jb) {
  auto [rc, rb] = system.block_apply(jc, jb);
  rc -= v;
  const double num = std::sqrt(rc.squaredNorm() + rb.squaredNorm());
  const double den = v.norm();
  return den > 0.0 ? num / den : num;
}

VsieSolution solve_vsie(const VsieSystem& system, int channel, const SolverConfig& cfg, const CVec* guess) {
  const CVec v = system.coil().excitation(channel);
  const CVec zero = CVec::Zero(static_cast<Eigen::Index>(system.body().unknowns()));
  auto s = system.solve(v, zero, cfg, guess);
  VsieSolution out{std::move(s.jc), std::move(s.jb), 0.0};
  out.residual = vsie_block_residual(system, v, out.jc, out.jb);
  return out;
}

CVec b1plus_from_tested_field(const CVec& h, double dv) {
  const Eigen::Index n = h.size() / 3;
  const cplx i(0.0, 1.0);
  return (kMu0 / dv) * (h.segment(0, n) + i * h.segment(n, n));
}

CVec b1plus_vie(const ToeplitzKernel& magnetic, const std::vector<std::size_t>& masked, const CVec& jb,
                const CVec& h_inc) {
  const std::size_t nv = magnetic.grid().size();
  CVec h = h_inc;
  if (jb.size() > 0) h += gather_components(masked, nv, magnetic.apply(scatter_components(masked, nv, jb)));
  return b1plus_from_tested_field(h, magnetic.grid().voxel_volume());
}

CVec b1plus_vsie(const ToeplitzKernel& magnetic, const std::vector<std::size_t>& masked, const CMat& Kcb,
                 const VsieSolution& sol) {
  return b1plus_vie(magnetic, masked, sol.jb, Kcb * sol.jc);
}

void B1Set::validate() const {
  for (const auto& c : channels) {
    if (static_cast<std::size_t>(c.size()) != grid.size()) throw InvalidArgument("B1 channel does not match the grid");
    if (!c.allFinite()) throw InvalidArgument("B1 channel has non-finite values");
  }
}

bool B1Set::operator==(const B1Set& o) const {
  if (!(grid == o.grid) || channels.size() != o.channels.size()) return false;
  for (std::size_t l = 0; l < channels.size(); ++l)
    if (channels[l].size() != o.channels[l].size() || !(channels[l].array() == o.channels[l].array()).all())
      return false;
  return true;
}

B1Set add_peak_snr_noise(const B1Set& b1, double snr, std::uint64_t seed) {
  if (!(snr > 0.0)) throw InvalidArgument("snr must be positive");
  B1Set out = b1;
  if (std::isinf(snr)) return out;
  std::mt19937_64 gen(seed);
  for (auto& ch : out.channels) {
    const double peak = ch.size() > 0 ? ch.cwiseAbs().maxCoeff() : 0.0;
    const double sd = peak / snr / std::sqrt(2.0);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Eigen::Index i = 0; i < ch.size(); ++i) {
      const double re = dist(gen), im = dist(gen);
      ch[i] += cplx(sd * re, sd * im);
    }
  }
  return out;
}

CVec shim_zero_phase(const CVec& b1, std::size_t v) {
  if (v >= static_cast<std::size_t>(b1.size())) throw InvalidArgument("shim voxel out of range");
  const double mag = std::abs(b1[v]);
  if (!(mag > 0.0)) throw InvalidArgument("shim voxel has zero field");
  CVec out = b1 * (std::conj(b1[v]) / mag);
  out[v] = cplx(mag, 0.0);
  return out;
}

int worker_count() {
  const char* env = std::getenv("MAXTOMO_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  if (n == 0) return std::max(1u, std::thread::hardware_concurrency());
  return n > 0 ? n : 1;
}

void parallel_for(int n, const std::function<void(int)>& f) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

Scene make_scene(const EPMap& ep, const WireCoil& coil, double omega, const CouplingOptions& opts) {
  ep.validate();
  if (!(omega > 0.0)) throw InvalidArgument("omega must be positive");
  if (const auto box = mask_bounding_box(ep))
    for (const auto& s : coil.segments)
      if (box->intersects_segment(coil.nodes[s[0]], coil.nodes[s[1]]))
        throw InvalidArgument("coil conductor intersects the sample bounding box");
  Scene sc;
  sc.grid = ep.grid;
  sc.omega = omega;
  sc.masked = ep.masked_indices();
  sc.electric = std::make_shared<ToeplitzKernel>(ToeplitzKernel::Kind::Electric, ep.grid, omega);
  sc.magnetic = std::make_shared<ToeplitzKernel>(ToeplitzKernel::Kind::Magnetic, ep.grid, omega);
  sc.coil = coil;
  sc.Zcc = assemble_Zcc(coil, omega, true);
  sc.coupling = assemble_coupling(coil, ep.grid, sc.masked, omega, opts);
  return sc;
}

std::vector<ChannelSolution> simulate_vsie(const Scene& scene, const std::vector<cplx>& eps_masked,
                                           const SolverConfig& cfg, const std::vector<CVec>* guesses) {
  BodyOperator body(scene.electric, scene.masked);
  if (!scene.masked.empty()) body.set_permittivity(eps_masked);
  const VsieSystem system(body, scene.coil, scene.Zcc, scene.coupling);
  const int L = scene.channel_count();
  std::vector<ChannelSolution> out(L);
  parallel_for(L, [&](int l) {
    const CVec* guess = guesses && static_cast<int>(guesses->size()) > l ? &(*guesses)[l] : nullptr;
    const CVec v = scene.coil.excitation(l);
    auto s = system.solve(v, CVec::Zero(static_cast<Eigen::Index>(scene.unknowns())), cfg, guess);
    ChannelSolution& c = out[l];
    c.jc = std::move(s.jc);
    c.jb = std::move(s.jb);
    c.info = s.info;
    c.b1 = b1plus_vie(*scene.magnetic, scene.masked, c.jb, scene.coupling.Kcb * c.jc);
  });
  return out;
}

std::vector<ChannelSolution> simulate_vie(const Scene& scene, const std::vector<cplx>& eps_masked,
                                          const std::vector<IncidentFields>& incident, const SolverConfig& cfg,
                                          const std::vector<CVec>* guesses) {
  BodyOperator body(scene.electric, scene.masked);
  body.set_permittivity(eps_masked);
  const int L = static_cast<int>(incident.size());
  std::vector<ChannelSolution> out(L);
  parallel_for(L, [&](int l) {
    const CVec* guess = guesses && static_cast<int>(guesses->size()) > l ? &(*guesses)[l] : nullptr;
    auto s = solve_vie(body, incident[l].e_inc, cfg, guess);
    ChannelSolution& c = out[l];
    c.jb = std::move(s.jb);
    c.info = s.info;
    c.b1 = b1plus_vie(*scene.magnetic, scene.masked, c.jb, incident[l].h_inc);
  });
  return out;
}

std::vector<IncidentFields> incident_from_currents(const Scene& scene, const std::vector<CVec>& jc) {
  std::vector<IncidentFields> out;
  for (const auto& j : jc) out.push_back(incident_fields(scene.coupling, j));
  return out;
}

B1Set to_b1set(const Scene& scene, const std::vector<ChannelSolution>& channels) {
  B1Set b{scene.grid, {}};
  for (const auto& c : channels) b.channels.push_back(scatter_scalar(scene.masked, scene.grid.size(), c.b1));
  return b;
}

}  // namespace maxtomo
