#include "maxtomo/coil.hpp"
#include "maxtomo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

namespace maxtomo {

bool Box::intersects_segment(const Vec3& a, const Vec3& b) const {
  // Slab clipping of the parametric segment a + t (b - a), t in [0, 1].
  double t0 = 0.0, t1 = 1.0;
  const Vec3 d = b - a;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-300) {
      if (a[i] < lo[i] || a[i] > hi[i]) return false;
      continue;
    }
    double ta = (lo[i] - a[i]) / d[i], tb = (hi[i] - a[i]) / d[i];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

std::optional<Box> mask_bounding_box(const EPMap& ep) {
  std::optional<Box> box;
  const double h = 0.5 * ep.grid.resolution;
  for (std::size_t i = 0; i < ep.mask.size(); ++i) {
    if (!ep.mask[i]) continue;
    const Vec3 c = ep.grid.center(i);
    const Vec3 lo = c.array() - h, hi = c.array() + h;
    if (!box) {
      box = Box{lo, hi};
    } else {
      box->lo = box->lo.cwiseMin(lo);
      box->hi = box->hi.cwiseMax(hi);
    }
  }
  return box;
}

int WireCoil::channel_count() const {
  std::set<int> ch;
  for (const auto& p : ports) ch.insert(p.channel);
  return static_cast<int>(ch.size());
}

void WireCoil::validate() const {
  if (!(wire_radius > 0.0)) throw InvalidArgument("wire radius must be positive");
  for (const auto& s : segments) {
    if (s[0] < 0 || s[1] < 0 || s[0] >= static_cast<int>(nodes.size()) || s[1] >= static_cast<int>(nodes.size()))
      throw InvalidArgument("segment references a missing node");
  }
  for (std::size_t s = 0; s < segments.size(); ++s)
    if (!(segment_length(static_cast<int>(s)) > 10.0 * wire_radius))
      throw InvalidArgument("wire radius is not small compared to the segment length");
  for (const auto& b : basis) {
    if (segments[b.seg_in][1] != b.node || segments[b.seg_out][0] != b.node)
      throw InvalidArgument("basis function segments do not meet at its node");
  }
  std::map<int, int> per_channel;
  for (const auto& p : ports) {
    if (p.basis < 0 || p.basis >= static_cast<int>(basis.size())) throw InvalidArgument("port basis out of range");
    ++per_channel[p.channel];
  }
  for (const auto& [ch, n] : per_channel)
    if (n != 1) throw InvalidArgument("each channel needs exactly one port");
  if (basis.size() < per_channel.size()) throw InvalidArgument("fewer basis functions than channels");
  for (const auto& l : lumped)
    if (l.basis < 0 || l.basis >= static_cast<int>(basis.size())) throw InvalidArgument("lumped element basis out of range");
}

cplx WireCoil::Lumped::impedance(double omega) const {
  cplx z(resistance, omega * inductance);
  if (capacitance > 0.0) z += 1.0 / cplx(0.0, omega * capacitance);
  return z;
}

CVec WireCoil::excitation(int channel) const {
  CVec v = CVec::Zero(static_cast<Eigen::Index>(basis.size()));
  bool found = false;
  for (const auto& p : ports)
    if (p.channel == channel) {
      v[p.basis] += p.voltage;
      found = true;
    }
  if (!found) throw InvalidArgument("channel " + std::to_string(channel) + " has no port");
  return v;
}

namespace {

std::vector<Vec3> rectangle_loop(const LoopArraySpec& s, double azimuth) {
  const int n = s.segments_per_loop;
  const double arc = s.former_radius_m * s.loop_span_rad;
  const double perimeter = 2.0 * (arc + s.loop_length_m);
  int n_arc = std::max(1, static_cast<int>(std::lround(n * arc / perimeter)));
  int n_ax = std::max(1, n / 2 - n_arc);
  // Distribute any odd remainder onto the first axial side.
  const int extra = n - 2 * (n_arc + n_ax);
  auto on_former = [&](double phi, double z) {
    return Vec3(s.axis_center.x() + s.former_radius_m * std::cos(phi),
                s.axis_center.y() + s.former_radius_m * std::sin(phi), s.axis_center.z() + z);
  };
  const double p1 = azimuth - 0.5 * s.loop_span_rad, p2 = azimuth + 0.5 * s.loop_span_rad;
  const double zb = -0.5 * s.loop_length_m, zt = 0.5 * s.loop_length_m;
  std::vector<Vec3> pts;
  for (int i = 0; i < n_arc; ++i) pts.push_back(on_former(p1 + (p2 - p1) * i / n_arc, zb));
  const int n_up = n_ax + extra;
  if (n_up < 1) throw InvalidArgument("too few segments for the rectangular loop proportions");
  for (int i = 0; i < n_up; ++i) pts.push_back(on_former(p2, zb + (zt - zb) * i / n_up));
  for (int i = 0; i < n_arc; ++i) pts.push_back(on_former(p2 + (p1 - p2) * i / n_arc, zt));
  for (int i = 0; i < n_ax; ++i) pts.push_back(on_former(p1, zt + (zb - zt) * i / n_ax));
  return pts;
}

std::vector<Vec3> circle_loop(const LoopArraySpec& s, double azimuth) {
  const Vec3 radial(std::cos(azimuth), std::sin(azimuth), 0.0);
  const Vec3 tangent(-std::sin(azimuth), std::cos(azimuth), 0.0);
  const Vec3 centre = s.axis_center + s.former_radius_m * radial;
  std::vector<Vec3> pts;
  for (int i = 0; i < s.segments_per_loop; ++i) {
    const double t = 2.0 * kPi * i / s.segments_per_loop;
    pts.push_back(centre + s.loop_radius_m * (-std::sin(t) * Vec3::UnitZ() + std::cos(t) * tangent));
  }
  return pts;
}

}  // namespace

WireCoil make_loop_array(const LoopArraySpec& spec, const std::optional<Box>& keep_out) {
  if (spec.channels < 1) throw InvalidArgument("loop array needs at least one channel");
  if (spec.segments_per_loop < 3) throw InvalidArgument("a loop needs at least 3 segments");
  if (spec.shape == LoopShape::Rectangle && spec.segments_per_loop < 4)
    throw InvalidArgument("a rectangular loop needs at least 4 segments");
  if (spec.capacitors_per_loop > 0 && !(spec.capacitance_f > 0.0))
    throw InvalidArgument("capacitance must be positive when capacitors are requested");

  WireCoil coil;
  coil.wire_radius = spec.wire_radius_m;
  for (int ch = 0; ch < spec.channels; ++ch) {
    const double az = spec.first_azimuth_rad + 2.0 * kPi * ch / spec.channels;
    const auto pts = spec.shape == LoopShape::Rectangle ? rectangle_loop(spec, az) : circle_loop(spec, az);
    const int n = static_cast<int>(pts.size());
    const int base_node = static_cast<int>(coil.nodes.size());
    const int base_seg = static_cast<int>(coil.segments.size());
    const int base_basis = static_cast<int>(coil.basis.size());
    for (const auto& p : pts) coil.nodes.push_back(p);
    for (int i = 0; i < n; ++i) coil.segments.push_back({base_node + i, base_node + (i + 1) % n});
    for (int i = 0; i < n; ++i)
      coil.basis.push_back({base_node + i, base_seg + (i + n - 1) % n, base_seg + i});
    coil.ports.push_back({base_basis, cplx(spec.drive_voltage, 0.0), ch});
    if (spec.port_resistance_ohm != 0.0) coil.lumped.push_back({base_basis, spec.port_resistance_ohm, 0.0, 0.0});
    for (int c = 0; c < spec.capacitors_per_loop; ++c) {
      const int node = static_cast<int>(std::lround((c + 0.5) * n / spec.capacitors_per_loop)) % n;
      coil.lumped.push_back({base_basis + node, spec.capacitor_esr_ohm, 0.0, spec.capacitance_f});
    }
  }
  coil.validate();
  if (keep_out)
    for (const auto& s : coil.segments)
      if (keep_out->intersects_segment(coil.nodes[s[0]], coil.nodes[s[1]]))
        throw InvalidArgument("coil conductor intersects the sample bounding box");
  return coil;
}

namespace {

struct SegmentGeom {
  Vec3 p0;
  Vec3 u;
  double length;
};

struct Rule {
  std::vector<double> t;  // parameter in [0, 1]
  std::vector<double> w;  // weights summing to 1
};

Rule composite_rule(int panels, int order) {
  std::vector<double> x, w;
  gauss_legendre_unit(order, x, w);
  Rule r;
  for (int p = 0; p < panels; ++p)
    for (int i = 0; i < order; ++i) {
      r.t.push_back((p + x[i]) / panels);
      r.w.push_back(w[i] / panels);
    }
  return r;
}

std::vector<SegmentGeom> segment_geometry(const WireCoil& coil) {
  std::vector<SegmentGeom> out;
  for (const auto& s : coil.segments) {
    const Vec3 a = coil.nodes[s[0]], b = coil.nodes[s[1]];
    const double len = (b - a).norm();
    out.push_back({a, (b - a) / len, len});
  }
  return out;
}

// J[a][b] = int_A int_B phi_a(t) phi_b(s) g(R_reduced) ds dt with phi_0 = 1, phi_1 = normalised arclength.
using PairIntegrals = Eigen::Matrix2cd;

PairIntegrals far_pair(const SegmentGeom& A, const SegmentGeom& B, double k0, double a2, const Rule& rule) {
  PairIntegrals J = PairIntegrals::Zero();
  for (std::size_t i = 0; i < rule.t.size(); ++i) {
    const Vec3 r = A.p0 + rule.t[i] * A.length * A.u;
    for (std::size_t j = 0; j < rule.t.size(); ++j) {
      const Vec3 rp = B.p0 + rule.t[j] * B.length * B.u;
      const double R = std::sqrt((r - rp).squaredNorm() + a2);
      const cplx g = std::exp(cplx(0.0, -k0 * R)) / (4.0 * kPi * R) * (rule.w[i] * rule.w[j] * A.length * B.length);
      J(0, 0) += g;
      J(1, 0) += rule.t[i] * g;
      J(0, 1) += rule.t[j] * g;
      J(1, 1) += rule.t[i] * rule.t[j] * g;
    }
  }
  return J;
}

PairIntegrals near_pair(const SegmentGeom& A, const SegmentGeom& B, double k0, double a2, const Rule& outer,
                        const Rule& inner) {
  PairIntegrals J = PairIntegrals::Zero();
  const double LB = B.length;
  for (std::size_t i = 0; i < outer.t.size(); ++i) {
    const Vec3 r = A.p0 + outer.t[i] * A.length * A.u;
    const Vec3 rel = r - B.p0;
    const double t0 = rel.dot(B.u);
    const double d2 = std::max(rel.squaredNorm() - t0 * t0, 0.0) + a2;
    const double d = std::sqrt(d2);
    // Static 1/(4 pi R) part in closed form along B.
    const double i0 = std::asinh((LB - t0) / d) + std::asinh(t0 / d);
    const double rL = std::sqrt((LB - t0) * (LB - t0) + d2), r0 = std::sqrt(t0 * t0 + d2);
    const double i1 = (rL - r0) + t0 * i0;
    cplx c0 = i0 / (4.0 * kPi), c1 = i1 / (4.0 * kPi * LB);
    // Smooth remainder (exp(-ikR) - 1) / (4 pi R).
    for (std::size_t j = 0; j < inner.t.size(); ++j) {
      const Vec3 rp = B.p0 + inner.t[j] * LB * B.u;
      const double R = std::sqrt((r - rp).squaredNorm() + a2);
      const cplx h = (std::exp(cplx(0.0, -k0 * R)) - 1.0) / (4.0 * kPi * R) * (inner.w[j] * LB);
      c0 += h;
      c1 += inner.t[j] * h;
    }
    const double wt = outer.w[i] * A.length;
    J(0, 0) += wt * c0;
    J(0, 1) += wt * c1;
    J(1, 0) += wt * outer.t[i] * c0;
    J(1, 1) += wt * outer.t[i] * c1;
  }
  return J;
}

// Coefficients of a hat restricted to one segment in the (1, t) basis.
constexpr double kInCoeff[2] = {0.0, 1.0};
constexpr double kOutCoeff[2] = {1.0, -1.0};

struct SegmentUse {
  int basis;
  bool incoming;
};

std::vector<std::vector<SegmentUse>> segment_uses(const WireCoil& coil) {
  std::vector<std::vector<SegmentUse>> uses(coil.segments.size());
  for (std::size_t n = 0; n < coil.basis.size(); ++n) {
    uses[coil.basis[n].seg_in].push_back({static_cast<int>(n), true});
    uses[coil.basis[n].seg_out].push_back({static_cast<int>(n), false});
  }
  return uses;
}

}  // namespace

CMat assemble_Zcc(const WireCoil& coil, double omega, bool with_lumped) {
  coil.validate();
  const double k0 = wavenumber(omega);
  const double a2 = coil.wire_radius * coil.wire_radius;
  const auto geom = segment_geometry(coil);
  const auto uses = segment_uses(coil);
  const std::size_t ns = geom.size();

  for (std::size_t a = 0; a < ns; ++a)
    for (std::size_t b = a + 1; b < ns; ++b) {
      const auto& sa = coil.segments[a];
      const auto& sb = coil.segments[b];
      const bool same_ends = ((coil.nodes[sa[0]] - coil.nodes[sb[0]]).norm() < 1e-12 &&
                              (coil.nodes[sa[1]] - coil.nodes[sb[1]]).norm() < 1e-12) ||
                             ((coil.nodes[sa[0]] - coil.nodes[sb[1]]).norm() < 1e-12 &&
                              (coil.nodes[sa[1]] - coil.nodes[sb[0]]).norm() < 1e-12);
      if (same_ends) throw InvalidArgument("coincident distinct wire segments");
    }

  const Rule far = composite_rule(1, 4);
  const Rule outer = composite_rule(4, 8);
  const Rule inner = composite_rule(2, 8);
  const cplx vec_factor(0.0, omega * kMu0);
  const cplx scal_factor = 1.0 / cplx(0.0, omega * kEps0);

  const Eigen::Index m = static_cast<Eigen::Index>(coil.basis.size());
  CMat Z = CMat::Zero(m, m);
  // Segment pairs a <= b only; the transposed pair reuses J^T so Z is exactly symmetric.
  for (std::size_t a = 0; a < ns; ++a)
    for (std::size_t b = a; b < ns; ++b) {
      if (uses[a].empty() || uses[b].empty()) continue;
      const auto& A = geom[a];
      const auto& B = geom[b];
      const Vec3 ma = A.p0 + 0.5 * A.length * A.u, mb = B.p0 + 0.5 * B.length * B.u;
      const bool near = (ma - mb).norm() < 2.0 * std::max(A.length, B.length);
      PairIntegrals J = near ? near_pair(A, B, k0, a2, outer, inner) : far_pair(A, B, k0, a2, far);
      if (a == b) J = (0.5 * (J + J.transpose())).eval();
      const double udot = A.u.dot(B.u);
      for (const auto& ua : uses[a])
        for (const auto& ub : uses[b]) {
          const double* ca = ua.incoming ? kInCoeff : kOutCoeff;
          const double* cb = ub.incoming ? kInCoeff : kOutCoeff;
          cplx vec(0.0, 0.0);
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) vec += ca[i] * cb[j] * J(i, j);
          const double da = (ua.incoming ? 1.0 : -1.0) / A.length;
          const double db = (ub.incoming ? 1.0 : -1.0) / B.length;
          const cplx z = vec_factor * udot * vec + scal_factor * da * db * J(0, 0);
          Z(ua.basis, ub.basis) += z;
          if (a != b) Z(ub.basis, ua.basis) += z;
        }
    }
  if (with_lumped)
    for (const auto& l : coil.lumped) Z(l.basis, l.basis) += l.impedance(omega);
  return Z;
}

CouplingOperators assemble_coupling(const WireCoil& coil, const VoxelGrid& grid,
                                    const std::vector<std::size_t>& masked, double omega,
                                    const CouplingOptions& opts) {
  coil.validate();
  const double k0 = wavenumber(omega);
  const double dv = grid.voxel_volume();
  const cplx pref = 1.0 / cplx(0.0, omega * kEps0);
  const auto geom = segment_geometry(coil);
  const auto uses = segment_uses(coil);
  const Eigen::Index nm = static_cast<Eigen::Index>(masked.size());
  const Eigen::Index m = static_cast<Eigen::Index>(coil.basis.size());

  CouplingOperators ops{CMat::Zero(3 * nm, m), CMat::Zero(3 * nm, m)};
  std::vector<Rule> rules;
  for (const auto& s : geom) {
    const int panels = opts.panels_per_segment > 0
                           ? opts.panels_per_segment
                           : std::max(1, static_cast<int>(std::ceil(s.length / grid.resolution)));
    rules.push_back(composite_rule(panels, 4));
  }

  bool warned = false;
  const double min_dist = 1e-9 * grid.resolution;
  for (Eigen::Index v = 0; v < nm; ++v) {
    const Vec3 rv = grid.center(masked[v]);
    for (std::size_t s = 0; s < geom.size(); ++s) {
      if (uses[s].empty()) continue;
      const auto& S = geom[s];
      const Rule& rule = rules[s];
      Eigen::Vector3cd e0 = Eigen::Vector3cd::Zero(), e1 = Eigen::Vector3cd::Zero();
      Eigen::Vector3cd grad = Eigen::Vector3cd::Zero();
      Eigen::Vector3cd h0 = Eigen::Vector3cd::Zero(), h1 = Eigen::Vector3cd::Zero();
      for (std::size_t q = 0; q < rule.t.size(); ++q) {
        const Vec3 rp = S.p0 + rule.t[q] * S.length * S.u;
        Vec3 d = rv - rp;
        double R = d.norm();
        if (R < min_dist) {
          if (!warned) {
            std::cerr << "maxtomo: coil quadrature point at a voxel centre; perturbing by 1e-9 resolution\n";
            warned = true;
          }
          d.x() += min_dist;
          R = d.norm();
        }
        const double w = rule.w[q] * S.length;
        const cplx g = std::exp(cplx(0.0, -k0 * R)) / (4.0 * kPi * R);
        const cplx dg = -(1.0 + cplx(0.0, k0 * R)) * g / R;
        const Eigen::Vector3cd grad_g = (dg / R) * d.cast<cplx>();
        const Eigen::Vector3cd curl = grad_g.cross(S.u.cast<cplx>());
        e0 += (w * g) * S.u.cast<cplx>();
        e1 += (w * g * rule.t[q]) * S.u.cast<cplx>();
        grad += w * grad_g;
        h0 += w * curl;
        h1 += (w * rule.t[q]) * curl;
      }
      for (const auto& use : uses[s]) {
        Eigen::Vector3cd e, h;
        if (use.incoming) {
          e = pref * (k0 * k0 * e1 + grad / S.length);
          h = h1;
        } else {
          e = pref * (k0 * k0 * (e0 - e1) - grad / S.length);
          h = h0 - h1;
        }
        for (int c = 0; c < 3; ++c) {
          ops.Zcb(c * nm + v, use.basis) -= dv * e[c];
          ops.Kcb(c * nm + v, use.basis) += dv * h[c];
        }
      }
    }
  }
  return ops;
}

IncidentFields incident_fields(const CouplingOperators& ops, const CVec& jc) {
  if (jc.size() != ops.Zcb.cols()) throw InvalidArgument("coil current vector has the wrong length");
  return {-(ops.Zcb * jc), ops.Kcb * jc};
}

}  // namespace maxtomo
