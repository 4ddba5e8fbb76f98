#include "maxtomo/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace maxtomo {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "MAXTOMO1";
constexpr const char* kOrder = "x-fastest little-endian";

const char* kind_name(VolumeKind k) {
  switch (k) {
    case VolumeKind::EpMap: return "epmap";
    case VolumeKind::B1Set: return "b1set";
    case VolumeKind::Field: return "field";
  }
  return "field";
}

VolumeKind kind_from(const std::string& s) {
  if (s == "epmap") return VolumeKind::EpMap;
  if (s == "b1set") return VolumeKind::B1Set;
  if (s == "field") return VolumeKind::Field;
  throw FormatError("unknown volume kind '" + s + "'");
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char b[8];
  std::memcpy(b, &bits, 8);
  out.append(b, 8);
}

double get_f64(const char* p) {
  std::uint64_t bits;
  std::memcpy(&bits, p, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

json header_json(const VolumeHeader& h) {
  json j;
  j["magic"] = kMagic;
  j["kind"] = kind_name(h.kind);
  j["dims"] = h.grid.dims;
  j["resolution_m"] = h.grid.resolution;
  j["origin_m"] = h.grid.origin;
  j["channels"] = h.channels;
  j["dtype"] = h.complex ? "c128" : "f64";
  j["order"] = kOrder;
  return j;
}

VolumeHeader parse_header(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("volume header is not JSON: ") + e.what());
  }
  try {
    if (j.at("magic").get<std::string>() != kMagic) throw FormatError("bad magic in volume header");
    if (j.at("order").get<std::string>() != kOrder) throw FormatError("unsupported payload order");
    VolumeHeader h;
    h.kind = kind_from(j.at("kind").get<std::string>());
    const auto dims = j.at("dims").get<std::array<int, 3>>();
    const double res = j.at("resolution_m").get<double>();
    std::array<double, 3> origin{0, 0, 0};
    if (j.contains("origin_m")) origin = j.at("origin_m").get<std::array<double, 3>>();
    for (int d : dims)
      if (d < 1) throw FormatError("volume dims must be positive");
    if (!(res > 0.0)) throw FormatError("volume resolution must be positive");
    h.grid = VoxelGrid(dims, res, origin);
    h.channels = j.at("channels").get<int>();
    if (h.channels < 0) throw FormatError("negative channel count");
    const auto dtype = j.at("dtype").get<std::string>();
    if (dtype != "f64" && dtype != "c128") throw FormatError("unknown dtype '" + dtype + "'");
    h.complex = dtype == "c128";
    return h;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed volume header: ") + e.what());
  }
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return in;
}

}  // namespace

void write_volume(const std::string& path, const Volume& v) {
  const auto& h = v.header;
  const std::size_t n = h.grid.size();
  if (h.complex) {
    if (v.complex_channels.size() != static_cast<std::size_t>(h.channels) || !v.real.empty())
      throw InvalidArgument("volume channel data does not match the header");
    for (const auto& c : v.complex_channels)
      if (static_cast<std::size_t>(c.size()) != n) throw InvalidArgument("volume channel has the wrong length");
  } else {
    if (v.real.size() != static_cast<std::size_t>(h.channels) || !v.complex_channels.empty())
      throw InvalidArgument("volume channel data does not match the header");
    for (const auto& c : v.real)
      if (c.size() != n) throw InvalidArgument("volume channel has the wrong length");
  }
  std::string buf = header_json(h).dump();
  buf.push_back('\n');
  buf.reserve(buf.size() + n * h.channels * (h.complex ? 16 : 8));
  if (h.complex) {
    for (const auto& c : v.complex_channels)
      for (Eigen::Index i = 0; i < c.size(); ++i) {
        put_f64(buf, c[i].real());
        put_f64(buf, c[i].imag());
      }
  } else {
    for (const auto& c : v.real)
      for (double x : c) put_f64(buf, x);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("write failed for '" + path + "'");
}

VolumeHeader read_volume_header(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");
  return parse_header(line);
}

Volume read_volume(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");
  Volume v;
  v.header = parse_header(line);
  const auto& h = v.header;
  const std::size_t n = h.grid.size();
  const std::size_t bytes = n * h.channels * (h.complex ? 16 : 8);
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (payload.size() != bytes)
    throw FormatError("'" + path + "': payload is " + std::to_string(payload.size()) + " bytes, expected " +
                      std::to_string(bytes));
  const char* p = payload.data();
  for (int c = 0; c < h.channels; ++c) {
    if (h.complex) {
      CVec ch(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i, p += 16) ch[i] = cplx(get_f64(p), get_f64(p + 8));
      v.complex_channels.push_back(std::move(ch));
    } else {
      std::vector<double> ch(n);
      for (std::size_t i = 0; i < n; ++i, p += 8) ch[i] = get_f64(p);
      v.real.push_back(std::move(ch));
    }
  }
  return v;
}

void write_epmap(const std::string& path, const EPMap& ep) {
  ep.validate();
  Volume v;
  v.header = {VolumeKind::EpMap, ep.grid, 3, false};
  std::vector<double> mask(ep.mask.begin(), ep.mask.end());
  v.real = {ep.eps_r, ep.sigma, std::move(mask)};
  write_volume(path, v);
}

EPMap read_epmap(const std::string& path) {
  const Volume v = read_volume(path);
  if (v.header.kind != VolumeKind::EpMap || v.header.channels != 3 || v.header.complex)
    throw FormatError("'" + path + "' is not an EPMap volume");
  EPMap ep(v.header.grid);
  ep.eps_r = v.real[0];
  ep.sigma = v.real[1];
  for (std::size_t i = 0; i < ep.mask.size(); ++i) {
    const double m = v.real[2][i];
    if (m != 0.0 && m != 1.0) throw FormatError("'" + path + "': mask values must be 0 or 1");
    ep.mask[i] = m == 1.0;
  }
  try {
    ep.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  return ep;
}

void write_b1set(const std::string& path, const B1Set& b1) {
  b1.validate();
  Volume v;
  v.header = {VolumeKind::B1Set, b1.grid, static_cast<int>(b1.channel_count()), true};
  v.complex_channels = b1.channels;
  write_volume(path, v);
}

B1Set read_b1set(const std::string& path) {
  Volume v = read_volume(path);
  if (v.header.kind != VolumeKind::B1Set || !v.header.complex)
    throw FormatError("'" + path + "' is not a B1Set volume");
  return B1Set{v.header.grid, std::move(v.complex_channels)};
}

// ---- run configuration --------------------------------------------------

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw FormatError("config section '" + section + "' must be an object");
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw FormatError("unknown key '" + k + "' in config section '" + section + "'");
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError("config key '" + section + "." + key + "' has the wrong type");
  }
}

Vec3 to_vec3(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
std::array<double, 3> from_vec3(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

PhantomShape phantom_shape(const std::string& s) {
  if (s == "cylinder") return PhantomShape::Cylinder;
  if (s == "two_compartment_cylinder") return PhantomShape::TwoCompartmentCylinder;
  if (s == "layered_sphere") return PhantomShape::LayeredSphere;
  throw FormatError("unknown phantom shape '" + s + "'");
}

const char* phantom_shape_name(PhantomShape s) {
  switch (s) {
    case PhantomShape::Cylinder: return "cylinder";
    case PhantomShape::TwoCompartmentCylinder: return "two_compartment_cylinder";
    case PhantomShape::LayeredSphere: return "layered_sphere";
  }
  return "cylinder";
}

PhantomSpec parse_phantom(const json& j) {
  check_keys(j, {"shape", "center_m", "length_m", "radii_m", "compartments", "inner_offset_m"}, "phantom");
  PhantomSpec p;
  std::string shape = "cylinder";
  read(j, "shape", shape, "phantom");
  p.shape = phantom_shape(shape);
  if (j.contains("center_m")) {
    std::array<double, 3> c{};
    read(j, "center_m", c, "phantom");
    p.center = to_vec3(c);
  }
  read(j, "length_m", p.length_m, "phantom");
  read(j, "radii_m", p.radii_m, "phantom");
  read(j, "inner_offset_m", p.inner_offset_m, "phantom");
  if (j.contains("compartments")) {
    if (!j["compartments"].is_array()) throw FormatError("phantom.compartments must be an array");
    for (const auto& c : j["compartments"]) {
      check_keys(c, {"eps_r", "sigma_s_per_m"}, "phantom.compartments");
      Compartment comp;
      read(c, "eps_r", comp.eps_r, "phantom.compartments");
      read(c, "sigma_s_per_m", comp.sigma, "phantom.compartments");
      p.compartments.push_back(comp);
    }
  }
  return p;
}

json phantom_json(const PhantomSpec& p) {
  json j;
  j["shape"] = phantom_shape_name(p.shape);
  if (p.center) j["center_m"] = from_vec3(*p.center);
  j["length_m"] = p.length_m;
  j["radii_m"] = p.radii_m;
  j["inner_offset_m"] = p.inner_offset_m;
  j["compartments"] = json::array();
  for (const auto& c : p.compartments) j["compartments"].push_back({{"eps_r", c.eps_r}, {"sigma_s_per_m", c.sigma}});
  return j;
}

void parse_coil(const json& j, LoopArraySpec& c, CouplingOptions& coupling) {
  check_keys(j,
             {"channels", "shape", "axis_center_m", "former_radius_m", "first_azimuth_rad", "loop_length_m",
              "loop_span_rad", "loop_radius_m", "segments_per_loop", "wire_radius_m", "drive_voltage_v",
              "port_resistance_ohm", "capacitors_per_loop", "capacitance_f", "capacitor_esr_ohm",
              "panels_per_segment"},
             "coil");
  const std::string s = "coil";
  read(j, "channels", c.channels, s);
  if (j.contains("shape")) {
    std::string shape;
    read(j, "shape", shape, s);
    if (shape == "rectangle") c.shape = LoopShape::Rectangle;
    else if (shape == "circle") c.shape = LoopShape::Circle;
    else throw FormatError("unknown coil shape '" + shape + "'");
  }
  if (j.contains("axis_center_m")) {
    std::array<double, 3> a{};
    read(j, "axis_center_m", a, s);
    c.axis_center = to_vec3(a);
  }
  read(j, "former_radius_m", c.former_radius_m, s);
  read(j, "first_azimuth_rad", c.first_azimuth_rad, s);
  read(j, "loop_length_m", c.loop_length_m, s);
  read(j, "loop_span_rad", c.loop_span_rad, s);
  read(j, "loop_radius_m", c.loop_radius_m, s);
  read(j, "segments_per_loop", c.segments_per_loop, s);
  read(j, "wire_radius_m", c.wire_radius_m, s);
  read(j, "drive_voltage_v", c.drive_voltage, s);
  read(j, "port_resistance_ohm", c.port_resistance_ohm, s);
  read(j, "capacitors_per_loop", c.capacitors_per_loop, s);
  read(j, "capacitance_f", c.capacitance_f, s);
  read(j, "capacitor_esr_ohm", c.capacitor_esr_ohm, s);
  read(j, "panels_per_segment", coupling.panels_per_segment, s);
}

json coil_json(const LoopArraySpec& c, const CouplingOptions& coupling) {
  return {{"channels", c.channels},
          {"shape", c.shape == LoopShape::Rectangle ? "rectangle" : "circle"},
          {"axis_center_m", from_vec3(c.axis_center)},
          {"former_radius_m", c.former_radius_m},
          {"first_azimuth_rad", c.first_azimuth_rad},
          {"loop_length_m", c.loop_length_m},
          {"loop_span_rad", c.loop_span_rad},
          {"loop_radius_m", c.loop_radius_m},
          {"segments_per_loop", c.segments_per_loop},
          {"wire_radius_m", c.wire_radius_m},
          {"drive_voltage_v", c.drive_voltage},
          {"port_resistance_ohm", c.port_resistance_ohm},
          {"capacitors_per_loop", c.capacitors_per_loop},
          {"capacitance_f", c.capacitance_f},
          {"capacitor_esr_ohm", c.capacitor_esr_ohm},
          {"panels_per_segment", coupling.panels_per_segment}};
}

void parse_solver(const json& j, SolverConfig& s) {
  check_keys(j, {"tolerance", "max_iterations", "restart"}, "solver");
  read(j, "tolerance", s.tolerance, "solver");
  read(j, "max_iterations", s.max_iterations, "solver");
  read(j, "restart", s.restart, "solver");
}

void parse_gmt(const json& j, GmtConfig& g) {
  check_keys(j,
             {"alpha", "weight_mode", "max_iterations", "delta_min", "eps_max", "sigma_max_s_per_m", "eps_r0",
              "sigma0_s_per_m", "mode", "shim_voxel", "memory", "tv_beta"},
             "gmt");
  const std::string s = "gmt";
  read(j, "alpha", g.alpha, s);
  if (j.contains("weight_mode")) {
    std::string w;
    read(j, "weight_mode", w, s);
    if (w == "sqrt") g.weight_mode = WeightMode::Sqrt;
    else if (w == "linear") g.weight_mode = WeightMode::Linear;
    else throw FormatError("unknown weight mode '" + w + "'");
  }
  read(j, "max_iterations", g.max_iterations, s);
  read(j, "delta_min", g.delta_min, s);
  read(j, "eps_max", g.eps_max, s);
  read(j, "sigma_max_s_per_m", g.sigma_max, s);
  read(j, "eps_r0", g.eps_r0, s);
  read(j, "sigma0_s_per_m", g.sigma0, s);
  if (j.contains("mode")) {
    std::string m;
    read(j, "mode", m, s);
    if (m == "vsie") g.mode = ForwardMode::Vsie;
    else if (m == "vie") g.mode = ForwardMode::Vie;
    else throw FormatError("unknown forward mode '" + m + "'");
  }
  if (j.contains("shim_voxel") && !j["shim_voxel"].is_null()) {
    std::size_t v = 0;
    read(j, "shim_voxel", v, s);
    g.shim_voxel = v;
  }
  read(j, "memory", g.memory, s);
  read(j, "tv_beta", g.tv_beta, s);
}

json gmt_json(const GmtConfig& g) {
  json j = {{"alpha", g.alpha},
            {"weight_mode", g.weight_mode == WeightMode::Sqrt ? "sqrt" : "linear"},
            {"max_iterations", g.max_iterations},
            {"delta_min", g.delta_min},
            {"eps_max", g.eps_max},
            {"sigma_max_s_per_m", g.sigma_max},
            {"eps_r0", g.eps_r0},
            {"sigma0_s_per_m", g.sigma0},
            {"mode", g.mode == ForwardMode::Vsie ? "vsie" : "vie"},
            {"memory", g.memory},
            {"tv_beta", g.tv_beta}};
  j["shim_voxel"] = g.shim_voxel ? json(*g.shim_voxel) : json(nullptr);
  return j;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"frequency_hz", "grid", "phantom", "epmap_path", "coil", "solver", "gmt", "noise", "calibration",
              "outputs"},
             "top level");
  RunConfig cfg;
  read(j, "frequency_hz", cfg.frequency_hz, "top level");
  if (!(cfg.frequency_hz > 0.0)) throw FormatError("frequency_hz must be positive");
  if (j.contains("grid")) {
    check_keys(j["grid"], {"dims", "resolution_m"}, "grid");
    read(j["grid"], "dims", cfg.grid.dims, "grid");
    read(j["grid"], "resolution_m", cfg.grid.resolution_m, "grid");
  }
  for (int d : cfg.grid.dims)
    if (d < 1) throw FormatError("grid.dims must be positive");
  if (!(cfg.grid.resolution_m > 0.0)) throw FormatError("grid.resolution_m must be positive");
  if (j.contains("phantom") && j.contains("epmap_path"))
    throw FormatError("config gives both 'phantom' and 'epmap_path'");
  if (j.contains("phantom")) cfg.phantom = parse_phantom(j["phantom"]);
  if (j.contains("epmap_path")) {
    std::string p;
    read(j, "epmap_path", p, "top level");
    cfg.epmap_path = p;
  }
  if (j.contains("coil")) parse_coil(j["coil"], cfg.coil, cfg.coupling);
  if (j.contains("solver")) parse_solver(j["solver"], cfg.solver);
  if (j.contains("gmt")) parse_gmt(j["gmt"], cfg.gmt);
  cfg.gmt.solver = cfg.solver;
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    check_keys(n, {"snr", "seed"}, "noise");
    if (n.contains("snr") && !n["snr"].is_null()) {
      double snr = 0.0;
      read(n, "snr", snr, "noise");
      if (!(snr > 0.0)) throw FormatError("noise.snr must be positive");
      cfg.noise.snr = snr;
    }
    read(n, "seed", cfg.noise.seed, "noise");
  }
  if (j.contains("calibration")) {
    const auto& c = j["calibration"];
    check_keys(c, {"max_iterations", "v_target_v", "v_ref_v"}, "calibration");
    read(c, "max_iterations", cfg.calibration.max_iterations, "calibration");
    read(c, "v_target_v", cfg.calibration.v_target_v, "calibration");
    read(c, "v_ref_v", cfg.calibration.v_ref_v, "calibration");
  }
  if (j.contains("outputs")) {
    const auto& o = j["outputs"];
    check_keys(o, {"directory", "trace_file"}, "outputs");
    read(o, "directory", cfg.outputs.directory, "outputs");
    read(o, "trace_file", cfg.outputs.trace_file, "outputs");
  }
  try {
    cfg.solver.validate();
    cfg.gmt.validate();
    if (cfg.phantom) cfg.phantom->validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  json j;
  j["frequency_hz"] = cfg.frequency_hz;
  j["grid"] = {{"dims", cfg.grid.dims}, {"resolution_m", cfg.grid.resolution_m}};
  if (cfg.phantom) j["phantom"] = phantom_json(*cfg.phantom);
  if (cfg.epmap_path) j["epmap_path"] = *cfg.epmap_path;
  j["coil"] = coil_json(cfg.coil, cfg.coupling);
  j["solver"] = {{"tolerance", cfg.solver.tolerance},
                 {"max_iterations", cfg.solver.max_iterations},
                 {"restart", cfg.solver.restart}};
  j["gmt"] = gmt_json(cfg.gmt);
  j["noise"] = {{"snr", cfg.noise.snr ? json(*cfg.noise.snr) : json(nullptr)}, {"seed", cfg.noise.seed}};
  j["calibration"] = {{"max_iterations", cfg.calibration.max_iterations},
                      {"v_target_v", cfg.calibration.v_target_v},
                      {"v_ref_v", cfg.calibration.v_ref_v}};
  j["outputs"] = {{"directory", cfg.outputs.directory}, {"trace_file", cfg.outputs.trace_file}};
  return j.dump(2);
}

EPMap resolve_epmap(const RunConfig& cfg, const std::string& base_dir) {
  if (cfg.phantom) return build_phantom(*cfg.phantom, cfg.make_grid());
  if (cfg.epmap_path) {
    std::filesystem::path p(*cfg.epmap_path);
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    return read_epmap(p.string());
  }
  throw FormatError("config names neither a phantom nor an epmap_path");
}

// ---- small JSON documents -----------------------------------------------

std::string calibration_to_json(const std::vector<cplx>& q) {
  json j = json::object();
  for (std::size_t l = 0; l < q.size(); ++l) j[std::to_string(l)] = {q[l].real(), q[l].imag()};
  return j.dump(2);
}

std::vector<cplx> calibration_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("calibration weights are not JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("calibration weights must be a JSON object");
  std::vector<cplx> q(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [k, v] : j.items()) {
    std::size_t l = 0;
    try {
      std::size_t used = 0;
      l = std::stoul(k, &used);
      if (used != k.size()) throw std::invalid_argument(k);
    } catch (const std::exception&) {
      throw FormatError("calibration channel id '" + k + "' is not an integer");
    }
    if (l >= q.size() || seen[l]) throw FormatError("calibration channel ids must be 0..L-1 without gaps");
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw FormatError("calibration weight " + k + " must be [re, im]");
    q[l] = cplx(v[0].get<double>(), v[1].get<double>());
    seen[l] = true;
  }
  return q;
}

std::string metric_report_to_json(const MetricReport& rep) {
  auto prop = [](const PropertyMetrics& p) {
    return json{{"pnae_mean", p.pnae_mean}, {"pnae_max", p.pnae_max}, {"ssim", p.ssim ? nlohmann::json(*p.ssim) : nlohmann::json(nullptr)}};
  };
  json j;
  j["eps_r"] = prop(rep.eps_r);
  j["sigma"] = prop(rep.sigma);
  j["compartments"] = json::array();
  for (const auto& c : rep.compartments)
    j["compartments"].push_back({{"label", c.label},
                                 {"voxels", c.voxels},
                                 {"eps_r_mean", c.eps_r_mean},
                                 {"eps_r_std", c.eps_r_std},
                                 {"sigma_s_per_m_mean", c.sigma_mean},
                                 {"sigma_s_per_m_std", c.sigma_std},
                                 {"eps_r_pnae", c.eps_r_pnae},
                                 {"sigma_pnae", c.sigma_pnae}});
  return j.dump(2);
}

// ---- slice export -------------------------------------------------------

namespace {

std::vector<double> take_slice(const VoxelGrid& g, const std::vector<double>& vol, int axis, int index, int& w,
                               int& h) {
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  const int u = std::min(a, b), v = std::max(a, b);  // image columns follow the lower axis
  w = g.dims[u];
  h = g.dims[v];
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      std::array<int, 3> ijk{};
      ijk[axis] = index;
      ijk[u] = c;
      ijk[v] = r;
      out[static_cast<std::size_t>(r) * w + c] = vol[g.index(ijk[0], ijk[1], ijk[2])];
    }
  return out;
}

void write_pgm(const std::string& path, const std::vector<double>& img, int w, int h, double lo, double hi) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << "P5\n" << w << ' ' << h << "\n65535\n";
  const double span = hi - lo;
  // PGM rows run top to bottom; flip so the second slice axis points up.
  for (int r = h - 1; r >= 0; --r)
    for (int c = 0; c < w; ++c) {
      const double x = img[static_cast<std::size_t>(r) * w + c];
      const double t = span > 0.0 ? (x - lo) / span : 0.0;
      const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(t, 0.0, 1.0) * 65535.0));
      const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
      out.write(bytes, 2);
    }
  if (!out) throw FormatError("write failed for '" + path + "'");
}

}  // namespace

std::vector<SliceImage> export_slices(const Volume& v, int axis, int index, const std::string& prefix) {
  if (axis < 0 || axis > 2) throw InvalidArgument("slice axis must be 0, 1 or 2");
  const auto& g = v.header.grid;
  if (index < 0 || index >= g.dims[axis]) throw InvalidArgument("slice index outside the grid");

  std::vector<std::pair<std::string, std::vector<double>>> planes;
  if (v.header.complex) {
    for (std::size_t c = 0; c < v.complex_channels.size(); ++c) {
      const auto& ch = v.complex_channels[c];
      std::vector<double> mag(g.size()), ph(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        mag[i] = std::abs(ch[i]);
        ph[i] = std::arg(ch[i]);
      }
      planes.emplace_back("ch" + std::to_string(c) + "_magnitude", std::move(mag));
      planes.emplace_back("ch" + std::to_string(c) + "_phase", std::move(ph));
    }
  } else {
    for (std::size_t c = 0; c < v.real.size(); ++c) {
      std::string name = "ch" + std::to_string(c);
      if (v.header.kind == VolumeKind::EpMap) name = c == 0 ? "eps_r" : c == 1 ? "sigma" : "mask";
      planes.emplace_back(name, v.real[c]);
    }
  }

  std::vector<SliceImage> images;
  json side;
  side["source_kind"] = kind_name(v.header.kind);
  side["axis"] = axis;
  side["index"] = index;
  side["images"] = json::array();
  const std::string stem = std::filesystem::path(prefix).filename().string();
  for (const auto& [name, vol] : planes) {
    int w = 0, h = 0;
    const auto img = take_slice(g, vol, axis, index, w, h);
    const auto [mn, mx] = std::minmax_element(img.begin(), img.end());
    SliceImage s{name, prefix + "_" + name + ".pgm", *mn, *mx};
    write_pgm(s.file, img, w, h, s.min, s.max);
    side["images"].push_back({{"name", name},
                              {"file", stem + "_" + name + ".pgm"},
                              {"width", w},
                              {"height", h},
                              {"min", s.min},
                              {"max", s.max}});
    images.push_back(std::move(s));
  }
  std::ofstream out(prefix + ".json", std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + prefix + ".json'");
  out << side.dump(2) << '\n';
  return images;
}

}  // namespace maxtomo
