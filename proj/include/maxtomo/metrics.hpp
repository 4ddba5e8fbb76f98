#pragma once

#include <array>
#include <optional>
#include <cstdint>
#include <vector>

#include "maxtomo/common.hpp"
#include "maxtomo/grid.hpp"

namespace maxtomo {

struct Pnae {
  std::vector<double> per_voxel;  // zero outside the mask
  double mean = 0.0;
  double max = 0.0;
};

/// Peak-normalized absolute error |y - x| / max_mask(x).
Pnae pnae(const std::vector<double>& truth, const std::vector<double>& recon, const std::vector<std::uint8_t>& mask);

/// Mean 3-D SSIM over masked window centres. Gaussian 7^3 window (sigma 1.5 voxels),
/// C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L = max_mask(truth). Only centres whose
/// window lies inside the grid are scored.
double ssim3d(const std::array<int, 3>& dims, const std::vector<double>& truth, const std::vector<double>& recon,
              const std::vector<std::uint8_t>& mask);

/// ||jc - ref|| / ||ref||
/// True when some masked voxel is at least 3 voxels from every grid face.
bool ssim_window_fits(const std::array<int, 3>& dims, const std::vector<std::uint8_t>& mask);

double coil_current_error(const CVec& jc, const CVec& ref);

struct PropertyMetrics {
  double pnae_mean = 0.0;
  double pnae_max = 0.0;
  std::optional<double> ssim;  // empty when no masked voxel has a full window
};

struct CompartmentStats {
  int label = 0;
  std::size_t voxels = 0;
  double eps_r_mean = 0.0, eps_r_std = 0.0;
  double sigma_mean = 0.0, sigma_std = 0.0;
  double eps_r_pnae = 0.0, sigma_pnae = 0.0;  // mean PNAE over the compartment
};

struct MetricReport {
  PropertyMetrics eps_r;
  PropertyMetrics sigma;
  std::vector<CompartmentStats> compartments;
};

/// Scores `recon` against `truth` on the truth mask. `labels` (per voxel, -1 outside)
/// adds per-compartment statistics of the reconstruction.
MetricReport evaluate_reconstruction(const EPMap& truth, const EPMap& recon,
                                     const std::vector<int>* labels = nullptr);

}  // namespace maxtomo
