#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "maxtomo/calibration.hpp"
#include "maxtomo/coil.hpp"
#include "maxtomo/forward.hpp"
#include "maxtomo/gmt.hpp"
#include "maxtomo/grid.hpp"
#include "maxtomo/metrics.hpp"

namespace maxtomo {

/// Raised for unreadable, malformed or inconsistent files and configs.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- volume files -------------------------------------------------------
//
// One JSON header line, then the raw payload:
//   {"magic":"MAXTOMO1","kind":...,"dims":[nx,ny,nz],"resolution_m":...,"origin_m":[...],
//    "channels":C,"dtype":"f64"|"c128","order":"x-fastest little-endian"}
// Channels are stored one after another; complex values as interleaved (re, im).

enum class VolumeKind { EpMap, B1Set, Field };

struct VolumeHeader {
  VolumeKind kind = VolumeKind::Field;
  VoxelGrid grid;
  int channels = 0;
  bool complex = false;
};

/// Generic volume: exactly one of `real` and `complex_channels` is populated.
struct Volume {
  VolumeHeader header;
  std::vector<std::vector<double>> real;
  std::vector<CVec> complex_channels;
};

void write_volume(const std::string& path, const Volume& v);
Volume read_volume(const std::string& path);
VolumeHeader read_volume_header(const std::string& path);

/// EPMap as three f64 channels: eps_r, sigma, mask (0 or 1).
void write_epmap(const std::string& path, const EPMap& ep);
EPMap read_epmap(const std::string& path);
void write_b1set(const std::string& path, const B1Set& b1);
B1Set read_b1set(const std::string& path);

// ---- run configuration --------------------------------------------------

struct GridConfig {
  std::array<int, 3> dims{12, 12, 12};
  double resolution_m = 0.01;
};

struct NoiseConfig {
  std::optional<double> snr;  // none = noiseless
  std::uint64_t seed = 1;
};

struct CalibrationConfig {
  int max_iterations = 500;
  double v_target_v = 1.0;
  double v_ref_v = 1.0;
};

struct OutputConfig {
  std::string directory = ".";
  std::string trace_file = "trace.tsv";
};

struct RunConfig {
  double frequency_hz = kLarmor7T;
  GridConfig grid;
  std::optional<PhantomSpec> phantom;
  std::optional<std::string> epmap_path;
  LoopArraySpec coil;
  CouplingOptions coupling;
  SolverConfig solver;
  GmtConfig gmt;  // gmt.solver mirrors `solver`
  NoiseConfig noise;
  CalibrationConfig calibration;
  OutputConfig outputs;

  double omega() const { return angular(frequency_hz); }
  VoxelGrid make_grid() const { return centered_grid(grid.dims, grid.resolution_m); }
};

/// Parses a JSON run configuration; unknown keys and wrong types raise FormatError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string dump_run_config(const RunConfig& cfg);

/// The truth EPMap named by the config (phantom spec or epmap_path).
EPMap resolve_epmap(const RunConfig& cfg, const std::string& base_dir = ".");

// ---- small JSON documents -----------------------------------------------

std::string calibration_to_json(const std::vector<cplx>& q);
std::vector<cplx> calibration_from_json(const std::string& text);
std::string metric_report_to_json(const MetricReport& rep);

// ---- slice export -------------------------------------------------------

struct SliceImage {
  std::string name;
  std::string file;
  double min = 0.0;
  double max = 0.0;
};

/// Writes one 16-bit binary PGM per channel (complex channels as magnitude and phase)
/// for the slice `index` along `axis` (0 = x, 1 = y, 2 = z), plus `<prefix>.json`
/// recording the linear value window of every image.
std::vector<SliceImage> export_slices(const Volume& v, int axis, int index, const std::string& prefix);

}  // namespace maxtomo
