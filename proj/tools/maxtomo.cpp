// maxtomo: command-line pipeline for phantoms, forward simulation, GMT reconstruction,
// calibration, evaluation and slice export.
//
// Exit codes: 0 success, 1 usage or config error, 2 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "maxtomo/calibration.hpp"
#include "maxtomo/io.hpp"
#include "maxtomo/metrics.hpp"
#include "oracles.hpp"

using namespace maxtomo;
namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 1;
constexpr int kNumerical = 2;

/// Raised for failed numerical checks that are not solver exceptions.
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << text;
}

void ensure_parent(const std::string& path) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
}

std::string config_dir(const std::string& config_path) {
  const auto dir = fs::path(config_path).parent_path();
  return dir.empty() ? "." : dir.string();
}

std::vector<cplx> masked_permittivity(const Scene& scene, const EPMap& ep) {
  const auto field = complex_permittivity(ep, scene.omega);
  std::vector<cplx> eps;
  eps.reserve(scene.masked.size());
  for (auto v : scene.masked) eps.push_back(field.eps[v]);
  return eps;
}

Scene scene_for(const RunConfig& cfg, const EPMap& ep) {
  const WireCoil coil = make_loop_array(cfg.coil, mask_bounding_box(ep));
  return make_scene(ep, coil, cfg.omega(), cfg.coupling);
}

std::string currents_to_json(const std::vector<CVec>& jc) {
  nlohmann::json j;
  j["channels"] = nlohmann::json::array();
  for (const auto& c : jc) {
    nlohmann::json ch = nlohmann::json::array();
    for (Eigen::Index i = 0; i < c.size(); ++i) ch.push_back({c[i].real(), c[i].imag()});
    j["channels"].push_back(ch);
  }
  return j.dump();
}

std::vector<CVec> currents_from_json(const std::string& text) {
  std::vector<CVec> out;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& ch : j.at("channels")) {
      CVec c(static_cast<Eigen::Index>(ch.size()));
      for (std::size_t i = 0; i < ch.size(); ++i) c[i] = cplx(ch[i].at(0).get<double>(), ch[i].at(1).get<double>());
      out.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed currents file: ") + e.what());
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- subcommands --------------------------------------------------------

struct PhantomArgs {
  std::string config, out;
};

int run_phantom(const PhantomArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  const EPMap ep = resolve_epmap(cfg, config_dir(a.config));
  ensure_parent(a.out);
  write_epmap(a.out, ep);
  std::cerr << "phantom: " << ep.masked_count() << " masked voxels -> " << a.out << '\n';
  return 0;
}

struct ForwardArgs {
  std::string config, epmap, out, mode = "vsie", currents_out;
  std::optional<double> snr;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> shim_voxel;
};

int run_forward(const ForwardArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  const EPMap ep = a.epmap.empty() ? resolve_epmap(cfg, config_dir(a.config)) : read_epmap(a.epmap);
  if (a.mode != "vie" && a.mode != "vsie") throw FormatError("--mode must be vie or vsie");
  const auto t0 = std::chrono::steady_clock::now();
  const Scene scene = scene_for(cfg, ep);
  const auto eps = masked_permittivity(scene, ep);

  std::vector<ChannelSolution> sol;
  if (a.mode == "vsie") {
    sol = simulate_vsie(scene, eps, cfg.solver);
  } else {
    // Coil currents of the unloaded array drive the fixed incident fields.
    const auto lu = scene.Zcc.partialPivLu();
    std::vector<CVec> jc;
    for (int l = 0; l < scene.channel_count(); ++l) jc.push_back(lu.solve(scene.coil.excitation(l)));
    sol = simulate_vie(scene, eps, incident_from_currents(scene, jc), cfg.solver);
  }
  for (std::size_t l = 0; l < sol.size(); ++l)
    std::cerr << "forward: channel " << l << " converged in " << sol[l].info.iterations << " iterations\n";

  B1Set b1 = to_b1set(scene, sol);
  const std::optional<double> snr = a.snr ? a.snr : cfg.noise.snr;
  if (snr) b1 = add_peak_snr_noise(b1, *snr, a.seed.value_or(cfg.noise.seed));
  const auto shim = a.shim_voxel ? a.shim_voxel : cfg.gmt.shim_voxel;
  if (shim) {
    if (*shim >= ep.grid.size() || !ep.mask[*shim]) throw FormatError("shim voxel must be a masked voxel");
    for (auto& ch : b1.channels) ch = shim_zero_phase(ch, *shim);
  }
  ensure_parent(a.out);
  write_b1set(a.out, b1);
  if (!a.currents_out.empty()) {
    std::vector<CVec> jc;
    for (const auto& s : sol) jc.push_back(s.jc);
    write_text(a.currents_out, currents_to_json(jc));
  }
  std::cerr << "forward: " << b1.channel_count() << " channels in " << seconds_since(t0) << " s -> " << a.out << '\n';
  return 0;
}

struct ReconstructArgs {
  std::string config, b1, out, trace, mask, mode, reference_currents;
  std::optional<int> max_iterations;
};

int run_reconstruct(const ReconstructArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.mode.empty()) {
    if (a.mode == "vie") cfg.gmt.mode = ForwardMode::Vie;
    else if (a.mode == "vsie") cfg.gmt.mode = ForwardMode::Vsie;
    else throw FormatError("--mode must be vie or vsie");
  }
  if (a.max_iterations) cfg.gmt.max_iterations = *a.max_iterations;
  cfg.gmt.validate();

  // Only the mask of this map is used.
  const EPMap support = a.mask.empty() ? resolve_epmap(cfg, config_dir(a.config)) : read_epmap(a.mask);
  B1Set b1 = read_b1set(a.b1);
  if (!(b1.grid == support.grid)) throw FormatError("B1 maps and mask use different grids");
  if (b1.channel_count() != static_cast<std::size_t>(cfg.coil.channels))
    throw FormatError("B1 file has " + std::to_string(b1.channel_count()) + " channels, the coil has " +
                      std::to_string(cfg.coil.channels));

  const auto t0 = std::chrono::steady_clock::now();
  const Scene scene = scene_for(cfg, support);
  const Measurements meas = make_measurements(std::move(b1), support.mask, cfg.gmt.weight_mode);

  std::vector<IncidentFields> incident;
  if (cfg.gmt.mode == ForwardMode::Vie) {
    // Incident fields from the coil currents at the homogeneous initial guess.
    const std::vector<cplx> eps0(scene.masked.size(),
                                 complex_permittivity(cfg.gmt.eps_r0, cfg.gmt.sigma0, scene.omega));
    const auto guess = simulate_vsie(scene, eps0, cfg.solver);
    std::vector<CVec> jc;
    for (const auto& g : guess) jc.push_back(g.jc);
    incident = incident_from_currents(scene, jc);
  }
  std::vector<CVec> reference;
  if (!a.reference_currents.empty()) {
    reference = currents_from_json(read_text(a.reference_currents));
    if (reference.size() != static_cast<std::size_t>(scene.channel_count()))
      throw FormatError("reference currents do not match the channel count");
  }

  const Reconstruction rec =
      reconstruct(scene, meas, cfg.gmt, incident, reference.empty() ? nullptr : &reference);
  const std::string trace_path =
      a.trace.empty() ? (fs::path(cfg.outputs.directory) / cfg.outputs.trace_file).string() : a.trace;
  write_text(trace_path, trace_table(rec.trace));
  ensure_parent(a.out);
  write_epmap(a.out, rec.ep);
  std::cerr << "reconstruct: " << (rec.trace.empty() ? 0 : rec.trace.back().iteration) << " iterations, f "
            << rec.best_cost << ", " << rec.stop_reason << ", " << seconds_since(t0) << " s -> " << a.out << '\n';
  if (rec.aborted) throw NumericalFailure("reconstruction aborted: " + rec.stop_reason);
  return 0;
}

struct CalibrateArgs {
  std::string measured, simulated, mask, out, weight_mode = "sqrt";
  double v_target = 1.0, v_ref = 1.0;
  int max_iterations = 500;
};

int run_calibrate(const CalibrateArgs& a) {
  const B1Set measured = read_b1set(a.measured);
  const B1Set simulated = read_b1set(a.simulated);
  std::vector<std::uint8_t> mask;
  if (!a.mask.empty()) {
    mask = read_epmap(a.mask).mask;
  } else {
    // Voxels where every simulated channel is nonzero.
    mask.assign(simulated.grid.size(), 1);
    for (const auto& ch : simulated.channels)
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (ch[i] == cplx(0.0)) mask[i] = 0;
  }
  if (mask.size() != measured.grid.size()) throw FormatError("mask and B1 maps use different grids");
  if (a.weight_mode != "sqrt" && a.weight_mode != "linear") throw FormatError("--weight-mode must be sqrt or linear");
  const auto w = a.weight_mode == "sqrt" ? weights_sqrt(measured, mask) : weights_linear(measured, mask);
  CalibrationOptions opts;
  opts.max_iterations = a.max_iterations;
  const auto res = calibrate(measured, simulated, w, opts);
  const auto q = cross_calibration_scale(res.q, a.v_target, a.v_ref);
  write_text(a.out, calibration_to_json(q) + "\n");
  std::cerr << "calibrate: residual " << res.residual << " after " << res.iterations << " iterations ("
            << res.stop_reason << ") -> " << a.out << '\n';
  return 0;
}

struct EvaluateArgs {
  std::string truth, recon, out, config;
};

int run_evaluate(const EvaluateArgs& a) {
  const EPMap truth = read_epmap(a.truth);
  const EPMap recon = read_epmap(a.recon);
  std::vector<int> labels;
  if (!a.config.empty()) {
    const RunConfig cfg = load_run_config(a.config);
    if (cfg.phantom) labels = compartment_labels(*cfg.phantom, truth.grid);
  }
  const auto rep = evaluate_reconstruction(truth, recon, labels.empty() ? nullptr : &labels);
  const std::string js = metric_report_to_json(rep) + "\n";
  if (a.out.empty()) std::cout << js;
  else write_text(a.out, js);
  return 0;
}

struct ExportArgs {
  std::string volume, axis = "z", prefix;
  int index = -1;
};

int run_export(const ExportArgs& a) {
  const Volume v = read_volume(a.volume);
  int axis = -1;
  if (a.axis == "x" || a.axis == "0") axis = 0;
  else if (a.axis == "y" || a.axis == "1") axis = 1;
  else if (a.axis == "z" || a.axis == "2") axis = 2;
  else throw FormatError("--axis must be x, y or z");
  const int index = a.index >= 0 ? a.index : v.header.grid.dims[axis] / 2;
  ensure_parent(a.prefix);
  for (const auto& img : export_slices(v, axis, index, a.prefix))
    std::cerr << "export-slices: " << img.name << " [" << img.min << ", " << img.max << "] -> " << img.file << '\n';
  return 0;
}

struct GradcheckArgs {
  int size = 4, channels = 2;
  std::string mode = "both";
};

int run_gradcheck(const GradcheckArgs& a) {
  if (a.size < 2 || a.size > 8) throw FormatError("--size must lie in [2, 8]");
  if (a.channels < 1) throw FormatError("--channels must be positive");
  if (a.mode != "both" && a.mode != "vie" && a.mode != "vsie") throw FormatError("--mode must be vie, vsie or both");
  auto inst = oracle::grad_instance(a.size, a.channels);
  double worst = 0.0;
  for (auto mode : {ForwardMode::Vie, ForwardMode::Vsie}) {
    if (a.mode == "vie" && mode != ForwardMode::Vie) continue;
    if (a.mode == "vsie" && mode != ForwardMode::Vsie) continue;
    const double e = oracle::fd_gradient_error(inst, oracle::grad_config(mode));
    std::printf("%s max relative error %.3e\n", mode == ForwardMode::Vie ? "vie" : "vsie", e);
    worst = std::max(worst, e);
  }
  std::printf("max relative error %.3e\n", worst);
  if (!(worst < 1e-5)) throw NumericalFailure("gradient check exceeds 1e-5");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global Maxwell Tomography toolkit"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Write the EPMap described by a run config");
  phantom->add_option("-c,--config", pa.config, "Run config JSON")->required();
  phantom->add_option("-o,--out", pa.out, "Output EPMap volume")->required();

  ForwardArgs fa;
  auto* forward = app.add_subcommand("forward", "Simulate B1+ maps of every coil channel");
  forward->add_option("-c,--config", fa.config, "Run config JSON")->required();
  forward->add_option("--epmap", fa.epmap, "EPMap volume (default: the config phantom)");
  forward->add_option("-o,--out", fa.out, "Output B1Set volume")->required();
  forward->add_option("--mode", fa.mode, "vie or vsie")->check(CLI::IsMember({"vie", "vsie"}));
  forward->add_option("--noise-snr", fa.snr, "Peak SNR of added complex Gaussian noise");
  forward->add_option("--seed", fa.seed, "Noise seed");
  forward->add_option("--shim-voxel", fa.shim_voxel, "Zero-phase shim voxel (grid index)");
  forward->add_option("--currents-out", fa.currents_out, "Write coil currents as JSON");

  ReconstructArgs ra;
  auto* recon = app.add_subcommand("reconstruct", "GMT reconstruction of eps_r and sigma");
  recon->add_option("-c,--config", ra.config, "Run config JSON")->required();
  recon->add_option("--b1", ra.b1, "Measured B1Set volume")->required();
  recon->add_option("-o,--out", ra.out, "Output EPMap volume")->required();
  recon->add_option("--trace", ra.trace, "Trace TSV (default: outputs.directory/outputs.trace_file)");
  recon->add_option("--mask", ra.mask, "EPMap whose mask defines the unknowns (default: the config phantom)");
  recon->add_option("--mode", ra.mode, "vie or vsie (overrides gmt.mode)")->check(CLI::IsMember({"vie", "vsie"}));
  recon->add_option("--max-iterations", ra.max_iterations, "Overrides gmt.max_iterations");
  recon->add_option("--reference-currents", ra.reference_currents, "Coil currents JSON for the coil-error column");

  CalibrateArgs ca;
  auto* calib = app.add_subcommand("calibrate", "Estimate per-channel complex weights");
  calib->add_option("--measured", ca.measured, "Measured B1Set volume")->required();
  calib->add_option("--simulated", ca.simulated, "Simulated B1Set volume")->required();
  calib->add_option("--mask", ca.mask, "EPMap whose mask selects voxels");
  calib->add_option("-o,--out", ca.out, "Output weights JSON")->required();
  calib->add_option("--weight-mode", ca.weight_mode, "sqrt or linear")->check(CLI::IsMember({"sqrt", "linear"}));
  calib->add_option("--v-target", ca.v_target, "Drive voltage of the target scan (V)");
  calib->add_option("--v-ref", ca.v_ref, "Drive voltage of the reference scan (V)");
  calib->add_option("--max-iterations", ca.max_iterations, "Optimizer iteration cap");

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Score a reconstruction against the truth");
  eval->add_option("truth", ea.truth, "Truth EPMap volume")->required();
  eval->add_option("recon", ea.recon, "Reconstructed EPMap volume")->required();
  eval->add_option("-o,--out", ea.out, "Write the report here instead of stdout");
  eval->add_option("-c,--config", ea.config, "Run config with the phantom for per-compartment statistics");

  ExportArgs xa;
  auto* exp = app.add_subcommand("export-slices", "Write 16-bit PGM slices of a volume");
  exp->add_option("volume", xa.volume, "Input volume")->required();
  exp->add_option("--axis", xa.axis, "x, y or z");
  exp->add_option("--index", xa.index, "Slice index (default: middle)");
  exp->add_option("--prefix", xa.prefix, "Output path prefix")->required();

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradient");
  grad->add_option("--size", ga.size, "Grid edge in voxels");
  grad->add_option("--channels", ga.channels, "Coil channels");
  grad->add_option("--mode", ga.mode, "vie, vsie or both")->check(CLI::IsMember({"vie", "vsie", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*phantom) return run_phantom(pa);
    if (*forward) return run_forward(fa);
    if (*recon) return run_reconstruct(ra);
    if (*calib) return run_calibrate(ca);
    if (*eval) return run_evaluate(ea);
    if (*exp) return run_export(xa);
    if (*grad) return run_gradcheck(ga);
  } catch (const SolverFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
