#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "maxtomo/coil.hpp"
#include "maxtomo/common.hpp"
#include "maxtomo/grid.hpp"
#include "maxtomo/kernels.hpp"
#include "maxtomo/krylov.hpp"

namespace maxtomo {

/// Moves a component-major field between the masked-voxel layout (3 * n_masked)
/// and the full-grid layout (3 * n_voxels).
CVec scatter_components(const std::vector<std::size_t>& masked, std::size_t n_voxels, const CVec& x);
CVec gather_components(const std::vector<std::size_t>& masked, std::size_t n_voxels, const CVec& full);

/// The body block Z_bb(eps) = D(1 / (i w eps0 chi)) G - L, restricted to masked voxels.
class BodyOperator {
 public:
  BodyOperator(std::shared_ptr<const ToeplitzKernel> electric, std::vector<std::size_t> masked);

  /// Sets the complex permittivity on the masked voxels (length n_masked). chi = eps - 1 must not vanish.
  void set_permittivity(const std::vector<cplx>& eps_masked);
  void set_permittivity(const ComplexPermittivityField& eps);

  std::size_t masked_count() const { return masked_.size(); }
  std::size_t unknowns() const { return 3 * masked_.size(); }
  const std::vector<std::size_t>& masked() const { return masked_; }
  const VoxelGrid& grid() const { return electric_->grid(); }
  double omega() const { return electric_->omega(); }
  const ToeplitzKernel& electric() const { return *electric_; }
  const std::vector<cplx>& permittivity() const { return eps_; }

  CVec apply(const CVec& x) const;
  /// Inverse of the operator diagonal (Jacobi).
  CVec precondition(const CVec& x) const;
  /// Diagonal entry of voxel k's Gram-weighted material term, dv / (i w eps0 chi_k).
  cplx material_diagonal(std::size_t k) const { return material_[k]; }

 private:
  std::shared_ptr<const ToeplitzKernel> electric_;
  std::vector<std::size_t> masked_;
  std::vector<cplx> eps_;
  std::vector<cplx> material_;
  cplx self_l_;
};

struct BodySolve {
  CVec jb;
  KrylovResult info;
};

/// Solves Z_bb j_b = e_inc (tested incident field on masked voxels). `guess` warm-starts.
BodySolve solve_vie(const BodyOperator& body, const CVec& e_inc, const SolverConfig& cfg,
                    const CVec* guess = nullptr);

/// Coupled coil/body system, solved by eliminating the coil block.
class VsieSystem {
 public:
  VsieSystem(const BodyOperator& body, const WireCoil& coil, CMat Zcc, CouplingOperators coupling);

  const BodyOperator& body() const { return *body_; }
  const WireCoil& coil() const { return *coil_; }
  const CMat& Zcc() const { return Zcc_; }
  const CouplingOperators& coupling() const { return coupling_; }

  /// (Z_bb - Zcb Zcc^-1 Zcb^T) x
  CVec schur_apply(const CVec& x) const;
  /// Full block product [Zcc Zcb^T; Zcb Z_bb] [jc; jb].
  std::pair<CVec, CVec> block_apply(const CVec& jc, const CVec& jb) const;
  CVec solve_coil(const CVec& rhs) const { return lu_.solve(rhs); }

  struct Solution {
    CVec jc;
    CVec jb;
    KrylovResult info;
  };
  /// Solves [Zcc Zcb^T; Zcb Z_bb] [jc; jb] = [rc; rb].
  Solution solve(const CVec& rc, const CVec& rb, const SolverConfig& cfg, const CVec* guess = nullptr) const;

 private:
  const BodyOperator* body_;
  const WireCoil* coil_;
  CMat Zcc_;
  CouplingOperators coupling_;
  Eigen::PartialPivLU<CMat> lu_;
  CMat coil_elim_;  // Zcc^-1 Zcb^T, m x 3n
};

/// One channel's VSIE solution.
struct VsieSolution {
  CVec jc;
  CVec jb;
  double residual = 0.0;
};

/// Solves the coupled system driven by `channel`'s port voltage.
VsieSolution solve_vsie(const VsieSystem& system, int channel, const SolverConfig& cfg,
                        const CVec* guess = nullptr);

/// Relative residual of [jc; jb] in the full block system with RHS [v; 0].
double vsie_block_residual(const VsieSystem& system, const CVec& v, const CVec& jc, const CVec& jb);

/// B1+ on the masked voxels from a tested magnetic field: mu0 (Hx + i Hy) / dv.
CVec b1plus_from_tested_field(const CVec& h_tested, double voxel_volume);

/// mu0 F (h_inc + K_bb j_b)
CVec b1plus_vie(const ToeplitzKernel& magnetic, const std::vector<std::size_t>& masked, const CVec& jb,
                const CVec& h_inc);

/// mu0 F (K_cb j_c + K_bb j_b)
CVec b1plus_vsie(const ToeplitzKernel& magnetic, const std::vector<std::size_t>& masked, const CMat& Kcb,
                 const VsieSolution& sol);

/// Per-channel complex B1+ volumes (tesla) on a full grid.
struct B1Set {
  VoxelGrid grid;
  std::vector<CVec> channels;

  std::size_t channel_count() const { return channels.size(); }
  void validate() const;
  bool operator==(const B1Set& o) const;
};

/// Full-grid volume from values on masked voxels (zeros elsewhere).
CVec scatter_scalar(const std::vector<std::size_t>& masked, std::size_t n_voxels, const CVec& values);
CVec gather_scalar(const std::vector<std::size_t>& masked, const CVec& volume);

/// Complex white Gaussian noise with per-channel std max|B1| / snr.
B1Set add_peak_snr_noise(const B1Set& b1, double snr, std::uint64_t seed);

/// beta = B1 conj(B1(v)) / |B1(v)|: zero phase at voxel v, magnitudes unchanged.
CVec shim_zero_phase(const CVec& b1, std::size_t v);

/// Everything about a forward problem that does not depend on the permittivity:
/// grid, mask, kernels and coil operators.
struct Scene {
  VoxelGrid grid;
  double omega = 0.0;
  std::vector<std::size_t> masked;
  std::shared_ptr<const ToeplitzKernel> electric;
  std::shared_ptr<const ToeplitzKernel> magnetic;
  WireCoil coil;
  CMat Zcc;
  CouplingOperators coupling;

  std::size_t unknowns() const { return 3 * masked.size(); }
  int channel_count() const { return coil.channel_count(); }
};

/// Assembles kernels and coil operators for the mask of `ep`. The coil must clear the mask.
Scene make_scene(const EPMap& ep, const WireCoil& coil, double omega, const CouplingOptions& opts = {});

/// One channel's forward solution.
struct ChannelSolution {
  CVec jc;         // coil currents (VSIE) or the fixed currents behind h_inc (VIE)
  CVec jb;         // body currents on masked voxels
  CVec b1;         // B1+ on masked voxels
  KrylovResult info;
};

/// VSIE forward solve of every channel. `guesses` (per channel j_b) warm-start GMRES.
std::vector<ChannelSolution> simulate_vsie(const Scene& scene, const std::vector<cplx>& eps_masked,
                                           const SolverConfig& cfg,
                                           const std::vector<CVec>* guesses = nullptr);

/// VIE forward solve of every channel with fixed incident fields.
std::vector<ChannelSolution> simulate_vie(const Scene& scene, const std::vector<cplx>& eps_masked,
                                          const std::vector<IncidentFields>& incident, const SolverConfig& cfg,
                                          const std::vector<CVec>* guesses = nullptr);

/// Incident fields of every channel from its VSIE coil currents.
std::vector<IncidentFields> incident_from_currents(const Scene& scene, const std::vector<CVec>& jc);

/// Scatters per-channel masked B1+ into a full-grid B1Set.
B1Set to_b1set(const Scene& scene, const std::vector<ChannelSolution>& channels);

/// Worker count for channel-parallel loops (MAXTOMO_THREADS, default 1; 0 = all hardware threads).
int worker_count();

/// Runs f(l) for l in [0, n) on up to worker_count() threads; rethrows the first exception.
void parallel_for(int n, const std::function<void(int)>& f);

}  // namespace maxtomo
