#pragma once

#include <optional>
#include <string>
#include <vector>

#include "maxtomo/common.hpp"
#include "maxtomo/forward.hpp"
#include "maxtomo/grid.hpp"
#include "maxtomo/lbfgsb.hpp"

namespace maxtomo {

enum class WeightMode { Sqrt, Linear };
enum class ForwardMode { Vie, Vsie };

struct GmtConfig {
  double alpha = 0.0;
  WeightMode weight_mode = WeightMode::Sqrt;
  int max_iterations = 500;
  double delta_min = 0.05;
  double eps_max = 100.0;
  double sigma_max = 3.0;  // S/m
  double eps_r0 = 21.1;
  double sigma0 = 0.2;
  ForwardMode mode = ForwardMode::Vsie;
  /// Zero-phase shim voxel (grid index); must be masked.
  std::optional<std::size_t> shim_voxel;
  int memory = 10;
  SolverConfig solver;
  double tv_beta = 1e-6;

  void validate() const;
};

/// Measured maps plus per-channel voxel weights (full grid, zero outside the mask).
struct Measurements {
  B1Set b1;
  std::vector<RVec> weights;
};

/// w_l = sqrt(|B_l| / max |B_l|) on the mask.
std::vector<RVec> weights_sqrt(const B1Set& b1, const std::vector<std::uint8_t>& mask);
/// w_l = |B_l| / max |B_l| on the mask.
std::vector<RVec> weights_linear(const B1Set& b1, const std::vector<std::uint8_t>& mask);
Measurements make_measurements(B1Set b1, const std::vector<std::uint8_t>& mask, WeightMode mode);

/// Data-consistency term over all ordered channel pairs, on vectors restricted to the mask.
struct DataConsistency {
  double fd = 0.0;
  double eta = 0.0;
  /// t_l = sum_l' w_l^2 w_l'^2 conj(delta_ll') conj(B_l'), the per-voxel sensitivity weights.
  std::vector<CVec> t;
};

DataConsistency data_consistency(const std::vector<CVec>& measured, const std::vector<CVec>& model,
                                 const std::vector<RVec>& weights, bool with_sensitivities = false);

/// Smoothed isotropic total variation of (eps_r, sigma / sigma_max) with forward
/// differences; differences toward unmasked or out-of-grid neighbours are zero.
struct Regularizer {
  double value = 0.0;
  RVec d_eps_r;
  RVec d_sigma;
};

Regularizer tv_regularizer(const VoxelGrid& grid, const std::vector<std::size_t>& masked, const RVec& eps_r,
                           const RVec& sigma, double sigma_max, double beta = 1e-6);

/// Derivatives of the zero-phase shim beta = B conj(B_v) / |B_v| along a holomorphic
/// perturbation dB of the field: (d beta / d eps, d conj(beta) / d eps).
struct ShimDerivative {
  CVec dbeta;
  CVec dbeta_conj;
};
ShimDerivative shim_derivatives(const CVec& b1, const CVec& db1, std::size_t v);

/// Pulls sensitivity weights t on beta back to weights on B:
/// sum(t dbeta + conj(t) dconj(beta)) = sum(t_B dB) for every dB.
CVec shim_pullback(const CVec& t, const CVec& b1, std::size_t v);

/// (d f / d eps_r, d f / d sigma) from the complex co-gradient d f / d eps.
void wirtinger_to_real(const CVec& dfd_eps, double omega, RVec& d_eps_r, RVec& d_sigma);

/// Cost and gradient evaluation for one permittivity state; keeps warm starts between calls.
class GmtObjective {
 public:
  /// `vie_incident` is required in VIE mode (one entry per channel) and ignored otherwise.
  GmtObjective(const Scene& scene, const Measurements& meas, const GmtConfig& cfg,
               std::vector<IncidentFields> vie_incident = {});

  struct Value {
    double f = 0.0;
    double fd = 0.0;
    double fr = 0.0;
    CVec dfd_eps;  // complex co-gradient of f_d per masked voxel
    RVec d_eps_r;  // total real gradient
    RVec d_sigma;
    std::vector<ChannelSolution> fields;
  };

  /// eps_r and sigma on the masked voxels.
  Value evaluate(const RVec& eps_r, const RVec& sigma, bool gradient = true);

  const Scene& scene() const { return *scene_; }
  std::size_t masked_count() const { return scene_->masked.size(); }

 private:
  const Scene* scene_;
  GmtConfig cfg_;
  std::vector<IncidentFields> incident_;
  std::vector<CVec> measured_;  // shimmed if enabled, masked
  std::vector<RVec> weights_;   // masked
  std::optional<std::size_t> shim_;  // index into the masked list
  std::vector<CVec> warm_jb_, warm_adj_;
};

struct TraceRow {
  int iteration = 0;
  double f = 0.0;
  double fd = 0.0;
  double fr = 0.0;
  double grad_inf = 0.0;
  std::optional<double> coil_error;
  int evaluations = 0;
};

struct Reconstruction {
  EPMap ep;
  std::vector<TraceRow> trace;
  std::string stop_reason;
  double best_cost = 0.0;
  /// True when a forward or adjoint solve failed; `ep` then holds the best iterate so far.
  bool aborted = false;
};

/// Bound-constrained L-BFGS-B reconstruction of (eps_r, sigma) on the scene mask.
/// `reference_currents` (per channel) enables the coil-current error column in VSIE mode.
Reconstruction reconstruct(const Scene& scene, const Measurements& meas, const GmtConfig& cfg,
                           std::vector<IncidentFields> vie_incident = {},
                           const std::vector<CVec>* reference_currents = nullptr);

/// Writes the trace as a tab-separated table with a header line.
std::string trace_table(const std::vector<TraceRow>& trace);

}  // namespace maxtomo
