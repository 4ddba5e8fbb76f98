#include "maxtomo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace maxtomo {

Pnae pnae(const std::vector<double>& truth, const std::vector<double>& recon, const std::vector<std::uint8_t>& mask) {
  if (truth.size() != recon.size() || truth.size() != mask.size()) throw InvalidArgument("pnae: size mismatch");
  double peak = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      peak = std::max(peak, truth[i]);
      ++count;
    }
  if (!(peak > 0.0)) throw InvalidArgument("pnae: truth maximum over the mask is not positive");
  Pnae out;
  out.per_voxel.assign(mask.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double e = std::abs(recon[i] - truth[i]) / peak;
    out.per_voxel[i] = e;
    sum += e;
    out.max = std::max(out.max, e);
  }
  out.mean = sum / static_cast<double>(count);
  return out;
}

namespace {

constexpr int kHalf = 3;

std::array<double, 2 * kHalf + 1> gaussian_taps() {
  std::array<double, 2 * kHalf + 1> w{};
  double s = 0.0;
  for (int d = -kHalf; d <= kHalf; ++d) {
    w[d + kHalf] = std::exp(-0.5 * d * d / (1.5 * 1.5));
    s += w[d + kHalf];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Separable "valid" Gaussian filter; entries without a full window are left at zero.
std::vector<double> blur(const std::array<int, 3>& n, const std::vector<double>& f) {
  const auto w = gaussian_taps();
  auto idx = [&](int i, int j, int k) { return i + static_cast<std::size_t>(n[0]) * (j + static_cast<std::size_t>(n[1]) * k); };
  std::vector<double> a(f.size(), 0.0), b(f.size(), 0.0);
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = kHalf; i < n[0] - kHalf; ++i) {
        double s = 0.0;
        for (int d = -kHalf; d <= kHalf; ++d) s += w[d + kHalf] * f[idx(i + d, j, k)];
        a[idx(i, j, k)] = s;
      }
  for (int k = 0; k < n[2]; ++k)
    for (int j = kHalf; j < n[1] - kHalf; ++j)
      for (int i = 0; i < n[0]; ++i) {
        double s = 0.0;
        for (int d = -kHalf; d <= kHalf; ++d) s += w[d + kHalf] * a[idx(i, j + d, k)];
        b[idx(i, j, k)] = s;
      }
  std::fill(a.begin(), a.end(), 0.0);
  for (int k = kHalf; k < n[2] - kHalf; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        double s = 0.0;
        for (int d = -kHalf; d <= kHalf; ++d) s += w[d + kHalf] * b[idx(i, j, k + d)];
        a[idx(i, j, k)] = s;
      }
  return a;
}

}  // namespace

double ssim3d(const std::array<int, 3>& dims, const std::vector<double>& truth, const std::vector<double>& recon,
              const std::vector<std::uint8_t>& mask) {
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (truth.size() != n || recon.size() != n || mask.size() != n) throw InvalidArgument("ssim3d: size mismatch");
  double L = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) {
      L = any ? std::max(L, truth[i]) : truth[i];
      any = true;
    }
  if (!any) throw InvalidArgument("ssim3d: empty mask");
  if (!(L > 0.0)) throw InvalidArgument("ssim3d: truth maximum over the mask is not positive");
  const double C1 = (0.01 * L) * (0.01 * L), C2 = (0.03 * L) * (0.03 * L);

  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = truth[i] * truth[i];
    yy[i] = recon[i] * recon[i];
    xy[i] = truth[i] * recon[i];
  }
  const auto mx = blur(dims, truth), my = blur(dims, recon);
  const auto sxx = blur(dims, xx), syy = blur(dims, yy), sxy = blur(dims, xy);

  double sum = 0.0;
  std::size_t count = 0;
  for (int k = kHalf; k < dims[2] - kHalf; ++k)
    for (int j = kHalf; j < dims[1] - kHalf; ++j)
      for (int i = kHalf; i < dims[0] - kHalf; ++i) {
        const std::size_t c = i + static_cast<std::size_t>(dims[0]) * (j + static_cast<std::size_t>(dims[1]) * k);
        if (!mask[c]) continue;
        const double vx = sxx[c] - mx[c] * mx[c];
        const double vy = syy[c] - my[c] * my[c];
        const double cxy = sxy[c] - mx[c] * my[c];
        const double num = (2.0 * mx[c] * my[c] + C1) * (2.0 * cxy + C2);
        const double den = (mx[c] * mx[c] + my[c] * my[c] + C1) * (vx + vy + C2);
        sum += num / den;
        ++count;
      }
  if (count == 0) throw InvalidArgument("ssim3d: no masked voxel has a full 7x7x7 window");
  return sum / static_cast<double>(count);
}

double coil_current_error(const CVec& jc, const CVec& ref) {
  if (jc.size() != ref.size()) throw InvalidArgument("coil_current_error: length mismatch");
  const double r = ref.norm();
  if (!(r > 0.0)) throw InvalidArgument("coil_current_error: zero reference");
  return (jc - ref).norm() / r;
}

bool ssim_window_fits(const std::array<int, 3>& dims, const std::vector<std::uint8_t>& mask) {
  for (int k = 3; k < dims[2] - 3; ++k)
    for (int j = 3; j < dims[1] - 3; ++j)
      for (int i = 3; i < dims[0] - 3; ++i)
        if (mask[i + static_cast<std::size_t>(dims[0]) * (j + static_cast<std::size_t>(dims[1]) * k)]) return true;
  return false;
}

MetricReport evaluate_reconstruction(const EPMap& truth, const EPMap& recon, const std::vector<int>* labels) {
  if (!(truth.grid == recon.grid)) throw InvalidArgument("evaluate: grids differ");
  MetricReport rep;
  const auto pe = pnae(truth.eps_r, recon.eps_r, truth.mask);
  const bool fits = ssim_window_fits(truth.grid.dims, truth.mask);
  rep.eps_r = {pe.mean, pe.max, std::nullopt};
  if (fits) rep.eps_r.ssim = ssim3d(truth.grid.dims, truth.eps_r, recon.eps_r, truth.mask);
  // Conductivity may be zero everywhere in a lossless truth; PNAE is undefined then.
  double smax = 0.0;
  for (std::size_t i = 0; i < truth.mask.size(); ++i)
    if (truth.mask[i]) smax = std::max(smax, truth.sigma[i]);
  Pnae ps;
  if (smax > 0.0) {
    ps = pnae(truth.sigma, recon.sigma, truth.mask);
    rep.sigma = {ps.mean, ps.max, std::nullopt};
    if (fits) rep.sigma.ssim = ssim3d(truth.grid.dims, truth.sigma, recon.sigma, truth.mask);
  }

  if (labels) {
    if (labels->size() != truth.grid.size()) throw InvalidArgument("evaluate: label volume does not match the grid");
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels->size(); ++i)
      if ((*labels)[i] >= 0 && truth.mask[i]) groups[(*labels)[i]].push_back(i);
    for (const auto& [label, idx] : groups) {
      CompartmentStats s;
      s.label = label;
      s.voxels = idx.size();
      const double m = static_cast<double>(idx.size());
      for (auto i : idx) {
        s.eps_r_mean += recon.eps_r[i] / m;
        s.sigma_mean += recon.sigma[i] / m;
        s.eps_r_pnae += pe.per_voxel[i] / m;
        if (smax > 0.0) s.sigma_pnae += ps.per_voxel[i] / m;
      }
      for (auto i : idx) {
        s.eps_r_std += (recon.eps_r[i] - s.eps_r_mean) * (recon.eps_r[i] - s.eps_r_mean) / m;
        s.sigma_std += (recon.sigma[i] - s.sigma_mean) * (recon.sigma[i] - s.sigma_mean) / m;
      }
      s.eps_r_std = std::sqrt(s.eps_r_std);
      s.sigma_std = std::sqrt(s.sigma_std);
      rep.compartments.push_back(s);
    }
  }
  return rep;
}

}  // namespace maxtomo
