#include "maxtomo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>

#include <fftw3.h>

namespace maxtomo {

namespace {

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n)
      : data(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))), size(n) {
    if (!data) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;

  cplx* begin() { return reinterpret_cast<cplx*>(data); }
  void zero() { std::fill(begin(), begin() + size, cplx(0.0, 0.0)); }

  fftw_complex* data;
  std::size_t size;
};

int wrap_offset(int e, int n) {
  // Embedded index e in [0, 2n) -> offset in (-n, n); the midpoint carries no entry.
  if (e < n) return e;
  if (e == n) return std::numeric_limits<int>::max();
  return e - 2 * n;
}

constexpr int kElectricSlot[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
constexpr int kMagneticSlot[3][3] = {{-1, 0, 1}, {0, -1, 2}, {1, 2, -1}};

}  // namespace

cplx scalar_green(double r, double k0) {
  if (!(r > 0.0)) throw std::domain_error("scalar_green: r must be positive (use self_term_scalar)");
  return std::exp(cplx(0.0, -k0 * r)) / (4.0 * kPi * r);
}

cplx self_term_scalar(double voxel_volume, double k0) {
  if (!(voxel_volume > 0.0)) throw InvalidArgument("voxel volume must be positive");
  const double a = std::cbrt(3.0 * voxel_volume / (4.0 * kPi));
  const double x = k0 * a;
  if (x == 0.0) return cplx(0.5 * a * a, 0.0);
  if (std::abs(x) < 1e-4) {
    // a^2 [1/2 - i x/3 - x^2/8]
    return a * a * cplx(0.5 - x * x / 8.0, -x / 3.0);
  }
  const cplx ikA(0.0, x);
  return ((1.0 + ikA) * std::exp(-ikA) - 1.0) / (k0 * k0);
}

Mat3c electric_block(const Vec3& offset, double omega, double dv) {
  const double k0 = wavenumber(omega);
  const cplx prefactor = 1.0 / cplx(0.0, omega * kEps0);
  const double r = offset.norm();
  if (r == 0.0) {
    const cplx s = self_term_scalar(dv, k0);
    const cplx diag = prefactor * dv * ((2.0 / 3.0) * k0 * k0 * s - 1.0 / 3.0);
    return Mat3c::Identity() * diag;
  }
  const Vec3 u = offset / r;
  const cplx g = scalar_green(r, k0);
  const cplx ikr(0.0, k0 * r);
  const double kr2 = k0 * k0 * r * r;
  const cplx a = (kr2 - 1.0 - ikr) * g / (r * r);
  const cplx b = (3.0 + 3.0 * ikr - kr2) * g / (r * r);
  Mat3c m = (b * (u * u.transpose())).cast<cplx>();
  m.diagonal().array() += a;
  return prefactor * dv * dv * m;
}

Mat3c magnetic_block(const Vec3& offset, double k0, double dv) {
  const double r = offset.norm();
  if (r == 0.0) return Mat3c::Zero();
  const Vec3 u = offset / r;
  const cplx dg = -(1.0 + cplx(0.0, k0 * r)) * std::exp(cplx(0.0, -k0 * r)) / (4.0 * kPi * r * r);
  Mat3c m;
  m << 0.0, -u.z(), u.y(),
       u.z(), 0.0, -u.x(),
       -u.y(), u.x(), 0.0;
  return dv * dv * dg * m;
}

struct ToeplitzKernel::Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  ~Plans() {
    std::lock_guard lock(fftw_planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
};

void gauss_legendre_unit(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = 0.5 * (1.0 - z);
    w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
  }
}

namespace {

// Integral over the box [lo, hi] of d_p d_q (1/|u|), origin outside the box.
Eigen::Matrix3d static_box_dyadic(const Vec3& lo, const Vec3& hi) {
  Eigen::Matrix3d t = Eigen::Matrix3d::Zero();
  for (int c = 0; c < 8; ++c) {
    const Vec3 u((c & 1) ? hi.x() : lo.x(), (c & 2) ? hi.y() : lo.y(), (c & 4) ? hi.z() : lo.z());
    const double s = ((c & 1) ? 1.0 : -1.0) * ((c & 2) ? 1.0 : -1.0) * ((c & 4) ? 1.0 : -1.0);
    const double r = u.norm();
    for (int p = 0; p < 3; ++p) {
      const int a = (p + 1) % 3, b = (p + 2) % 3;
      t(p, p) -= s * std::atan(u[a] * u[b] / (u[p] * r));
      t(std::min(a, b), std::max(a, b)) += s * std::log(u[p] + r);
    }
  }
  t(1, 0) = t(0, 1);
  t(2, 0) = t(0, 2);
  t(2, 1) = t(1, 2);
  return t;
}

}  // namespace

Mat3c electric_block_integrated(const Vec3& offset, double omega, double edge) {
  const double k0 = wavenumber(omega);
  const double dv = edge * edge * edge;
  const cplx prefactor = 1.0 / cplx(0.0, omega * kEps0);
  const Vec3 half = Vec3::Constant(0.5 * edge);
  if (offset.cwiseAbs().maxCoeff() < 0.5 * edge)
    throw InvalidArgument("electric_block_integrated: observation point inside the source voxel");
  const Mat3c stat = (static_box_dyadic(offset - half, offset + half) / (4.0 * kPi)).cast<cplx>();

  // The dynamic remainder (k^2 + grad grad)(g - g_static) is only weakly singular.
  constexpr int n = 6;
  static thread_local std::vector<double> x, w;
  if (x.size() != n) gauss_legendre_unit(n, x, w);
  Mat3c dyn = Mat3c::Zero();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < n; ++l) {
        const Vec3 u = offset - half + edge * Vec3(x[i], x[j], x[l]);
        const double r = u.norm();
        const Vec3 uh = u / r;
        const cplx g = scalar_green(r, k0);
        const cplx ikr(0.0, k0 * r);
        const double kr2 = k0 * k0 * r * r;
        const double g0 = 1.0 / (4.0 * kPi * r);
        const cplx a = ((kr2 - 1.0 - ikr) * g + g0) / (r * r);
        const cplx b = ((3.0 + 3.0 * ikr - kr2) * g - 3.0 * g0) / (r * r);
        Mat3c m = (b * (uh * uh.transpose())).cast<cplx>();
        m.diagonal().array() += a;
        dyn += (w[i] * w[j] * w[l] * dv) * m;
      }
  Mat3c out = prefactor * dv * (stat + dyn);
  for (int p = 0; p < 3; ++p)
    for (int q = p + 1; q < 3; ++q) out(q, p) = out(p, q);
  return out;
}

ToeplitzKernel::ToeplitzKernel(Kind kind, const VoxelGrid& grid, double omega)
    : kind_(kind), grid_(grid), omega_(omega) {
  if (!(omega > 0.0)) throw InvalidArgument("omega must be positive");
  for (int a = 0; a < 3; ++a) ext_[a] = 2 * grid.dims[a];
  ext_size_ = static_cast<std::size_t>(ext_[0]) * ext_[1] * ext_[2];

  plans_ = std::make_shared<Plans>();
  {
    FftwBuffer scratch(ext_size_);
    std::lock_guard lock(fftw_planner_mutex());
    plans_->forward = fftw_plan_dft_3d(ext_[2], ext_[1], ext_[0], scratch.data, scratch.data,
                                       FFTW_FORWARD, FFTW_MEASURE);
    plans_->backward = fftw_plan_dft_3d(ext_[2], ext_[1], ext_[0], scratch.data, scratch.data,
                                        FFTW_BACKWARD, FFTW_MEASURE);
  }

  const std::size_t slots = kind == Kind::Electric ? 6 : 3;
  spectra_.assign(slots, std::vector<cplx>(ext_size_));
  FftwBuffer table(ext_size_);
  std::vector<Mat3c> blocks(ext_size_);
  for (int ek = 0; ek < ext_[2]; ++ek)
    for (int ej = 0; ej < ext_[1]; ++ej)
      for (int ei = 0; ei < ext_[0]; ++ei) {
        const std::size_t e = ei + static_cast<std::size_t>(ext_[0]) * (ej + static_cast<std::size_t>(ext_[1]) * ek);
        const int di = wrap_offset(ei, grid.dims[0]);
        const int dj = wrap_offset(ej, grid.dims[1]);
        const int dk = wrap_offset(ek, grid.dims[2]);
        constexpr int none = std::numeric_limits<int>::max();
        blocks[e] = (di == none || dj == none || dk == none) ? Mat3c::Zero() : block(di, dj, dk);
      }
  for (int p = 0; p < 3; ++p)
    for (int q = p; q < 3; ++q) {
      const int slot = kind == Kind::Electric ? kElectricSlot[p][q] : kMagneticSlot[p][q];
      if (slot < 0) continue;
      cplx* t = table.begin();
      for (std::size_t e = 0; e < ext_size_; ++e) t[e] = blocks[e](p, q);
      fftw_execute_dft(plans_->forward, table.data, table.data);
      std::copy(t, t + ext_size_, spectra_[slot].begin());
    }
}

Mat3c ToeplitzKernel::block(int di, int dj, int dk) const {
  const Vec3 offset(di * grid_.resolution, dj * grid_.resolution, dk * grid_.resolution);
  const double dv = grid_.voxel_volume();
  if (kind_ == Kind::Magnetic) return magnetic_block(offset, wavenumber(omega_), dv);
  const int reach = std::max({std::abs(di), std::abs(dj), std::abs(dk)});
  if (reach > 0 && reach <= near_reach())
    return electric_block_integrated(offset, omega_, grid_.resolution);
  return electric_block(offset, omega_, dv);
}

void ToeplitzKernel::apply(std::span<const cplx> x, std::span<cplx> y) const {
  const std::size_t nv = grid_.size();
  if (x.size() != 3 * nv || y.size() != 3 * nv)
    throw InvalidArgument("apply_kernel: field size does not match the kernel grid");
  const auto [nx, ny, nz] = grid_.dims;
  const int ex = ext_[0], ey = ext_[1];

  auto embedded = [&](int i, int j, int k) {
    return i + static_cast<std::size_t>(ex) * (j + static_cast<std::size_t>(ey) * k);
  };

  std::array<std::unique_ptr<FftwBuffer>, 3> in;
  for (int q = 0; q < 3; ++q) {
    in[q] = std::make_unique<FftwBuffer>(ext_size_);
    in[q]->zero();
    cplx* buf = in[q]->begin();
    const cplx* src = x.data() + q * nv;
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) buf[embedded(i, j, k)] = src[grid_.index(i, j, k)];
    fftw_execute_dft(plans_->forward, in[q]->data, in[q]->data);
  }

  FftwBuffer out(ext_size_);
  const double scale = 1.0 / static_cast<double>(ext_size_);
  for (int p = 0; p < 3; ++p) {
    cplx* o = out.begin();
    out.zero();
    for (int q = 0; q < 3; ++q) {
      int slot;
      double sign = 1.0;
      if (kind_ == Kind::Electric) {
        slot = kElectricSlot[p][q];
      } else {
        slot = kMagneticSlot[p][q];
        if (slot < 0) continue;
        if (q < p) sign = -1.0;
      }
      const cplx* s = spectra_[slot].data();
      const cplx* xin = in[q]->begin();
      if (sign > 0)
        for (std::size_t e = 0; e < ext_size_; ++e) o[e] += s[e] * xin[e];
      else
        for (std::size_t e = 0; e < ext_size_; ++e) o[e] -= s[e] * xin[e];
    }
    fftw_execute_dft(plans_->backward, out.data, out.data);
    cplx* dst = y.data() + p * nv;
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) dst[grid_.index(i, j, k)] = o[embedded(i, j, k)] * scale;
  }
}

CVec ToeplitzKernel::apply(const CVec& x) const {
  CVec y(x.size());
  apply(std::span<const cplx>(x.data(), x.size()), std::span<cplx>(y.data(), y.size()));
  return y;
}

ToeplitzKernel assemble_electric_kernel(const VoxelGrid& grid, double omega) {
  return ToeplitzKernel(ToeplitzKernel::Kind::Electric, grid, omega);
}

ToeplitzKernel assemble_magnetic_kernel(const VoxelGrid& grid, double omega) {
  return ToeplitzKernel(ToeplitzKernel::Kind::Magnetic, grid, omega);
}

CVec apply_kernel(const ToeplitzKernel& kernel, const CVec& x) { return kernel.apply(x); }

}  // namespace maxtomo
