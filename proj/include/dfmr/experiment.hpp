#pragma once
// End-to-end experiment plumbing: a single flat config describes phantom,
// acquisition, and reconstruction; the stages exchange data through named
// array containers so every step can be rerun or inspected in isolation.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "dfmr/coils.hpp"
#include "dfmr/config.hpp"
#include "dfmr/container.hpp"
#include "dfmr/dfm.hpp"
#include "dfmr/encoding.hpp"
#include "dfmr/errors.hpp"
#include "dfmr/lowrank.hpp"
#include "dfmr/metrics.hpp"
#include "dfmr/phantom.hpp"
#include "dfmr/sequence.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

struct ExperimentConfig {
  // Phantom and hardware.
  int64_t grid = 64;
  int64_t n_coils = 4;
  CoilProfile coil_profile = CoilProfile::Poly;
  uint64_t seed = 1;

  // Acquisition.
  SequenceTiming timing;  // desk defaults: 8 segments x 100 spokes
  AngleMode angle_mode = AngleMode::Golden;
  int64_t tiny_n = 7;
  int64_t n_readout = 101;
  double k_max = M_PI;
  bool center_out = false;
  bool cartesian = false;
  int64_t n_bins = 8;
  TauSampling tau_sampling = TauSampling::PerSpoke;
  double noise_sigma = 0.0;

  // Optional per-segment rigid motion applied during simulation.
  bool with_motion = false;
  MotionTrack motion;

  // Reconstruction.
  std::string method = "dfm";  // dfm | dfm_mc | lowrank
  int64_t rank = 4;
  TrainOptions train;
  MotionOptions motion_reg;
  NetworkDescriptor net;

  AcquisitionSpec acquisition() const {
    AcquisitionSpec acq;
    acq.timing = timing;
    acq.angle_mode = angle_mode;
    acq.tiny_n = tiny_n;
    acq.n_readout = n_readout;
    acq.k_max = k_max;
    acq.center_out = center_out;
    acq.cartesian = cartesian;
    acq.cartesian_h = grid;
    return acq;
  }
};

// Reads every supported key; callers should follow with cfg.reject_unused().
inline ExperimentConfig parse_experiment(ConfigMap& cfg) {
  ExperimentConfig ec;
  ec.grid = cfg.get_int("grid", ec.grid);
  ec.n_coils = cfg.get_int("n_coils", ec.n_coils);
  std::string profile = cfg.get_string("coil_profile", "poly");
  if (profile == "poly")
    ec.coil_profile = CoilProfile::Poly;
  else if (profile == "uniform")
    ec.coil_profile = CoilProfile::Uniform;
  else
    throw ConfigError("config: coil_profile must be poly or uniform, got '" +
                      profile + "'");
  ec.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));

  ec.timing.n_segments = cfg.get_int("n_segments", ec.timing.n_segments);
  ec.timing.spokes_per_segment =
      cfg.get_int("spokes_per_segment", ec.timing.spokes_per_segment);
  ec.timing.tr_ms = cfg.get_double("tr_ms", ec.timing.tr_ms);
  ec.timing.recovery_delay_ms =
      cfg.get_double("recovery_delay_ms", ec.timing.recovery_delay_ms);

  std::string mode = cfg.get_string("angle_mode", "golden");
  if (mode == "golden")
    ec.angle_mode = AngleMode::Golden;
  else if (mode == "tiny")
    ec.angle_mode = AngleMode::TinyGolden;
  else
    throw ConfigError("config: angle_mode must be golden or tiny, got '" +
                      mode + "'");
  ec.tiny_n = cfg.get_int("tiny_n", ec.tiny_n);
  ec.n_readout = cfg.get_int("n_readout", ec.n_readout);
  ec.k_max = cfg.get_double("k_max", ec.k_max);
  ec.center_out = cfg.get_bool("center_out", ec.center_out);
  ec.cartesian = cfg.get_bool("cartesian", ec.cartesian);
  ec.n_bins = cfg.get_int("n_bins", ec.n_bins);

  std::string tau = cfg.get_string("tau_sampling", "spoke");
  if (tau == "spoke")
    ec.tau_sampling = TauSampling::PerSpoke;
  else if (tau == "bin")
    ec.tau_sampling = TauSampling::BinCenter;
  else
    throw ConfigError("config: tau_sampling must be spoke or bin, got '" +
                      tau + "'");
  ec.noise_sigma = cfg.get_double("noise_sigma", 0.0);

  // Motion: either explicit per-segment lists, or a single step transform
  // switched on from an onset segment onward.
  bool has_lists = cfg.has("motion_nu_deg") || cfg.has("motion_dx") ||
                   cfg.has("motion_dy");
  bool has_step = cfg.has("motion_step_deg") || cfg.has("motion_step_dx") ||
                  cfg.has("motion_step_dy") || cfg.has("motion_onset_segment");
  if (has_lists && has_step)
    throw ConfigError(
        "config: give motion as per-segment lists or as a step, not both");
  int64_t ns = ec.timing.n_segments;
  if (has_lists) {
    std::vector<double> nu = cfg.get_double_list("motion_nu_deg", {});
    std::vector<double> dx = cfg.get_double_list("motion_dx", {});
    std::vector<double> dy = cfg.get_double_list("motion_dy", {});
    size_t n = static_cast<size_t>(ns);
    if (nu.size() != n || dx.size() != n || dy.size() != n)
      throw ConfigError(
          "config: motion lists must have one entry per segment");
    ec.with_motion = true;
    ec.motion = MotionTrack::zero(ns);
    for (int64_t s = 0; s < ns; ++s) {
      ec.motion.nu_rad[static_cast<size_t>(s)] =
          nu[static_cast<size_t>(s)] * M_PI / 180.0;
      ec.motion.delta[static_cast<size_t>(2 * s)] = dx[static_cast<size_t>(s)];
      ec.motion.delta[static_cast<size_t>(2 * s + 1)] =
          dy[static_cast<size_t>(s)];
    }
  } else if (has_step) {
    double deg = cfg.get_double("motion_step_deg", 0.0);
    double dx = cfg.get_double("motion_step_dx", 0.0);
    double dy = cfg.get_double("motion_step_dy", 0.0);
    int64_t onset = cfg.get_int("motion_onset_segment", ns / 2);
    if (onset < 0 || onset > ns)
      throw ConfigError("config: motion_onset_segment out of range");
    ec.with_motion = true;
    ec.motion = MotionTrack::zero(ns);
    for (int64_t s = onset; s < ns; ++s) {
      ec.motion.nu_rad[static_cast<size_t>(s)] = deg * M_PI / 180.0;
      ec.motion.delta[static_cast<size_t>(2 * s)] = dx;
      ec.motion.delta[static_cast<size_t>(2 * s + 1)] = dy;
    }
  }

  ec.method = cfg.get_string("method", ec.method);
  if (ec.method != "dfm" && ec.method != "dfm_mc" && ec.method != "lowrank")
    throw ConfigError("config: method must be dfm, dfm_mc, or lowrank, got '" +
                      ec.method + "'");
  ec.rank = cfg.get_int("rank", ec.rank);
  ec.train.epochs = cfg.get_int("epochs", ec.train.epochs);
  ec.train.lr = cfg.get_double("lr", ec.train.lr);
  ec.train.plateau_rel = cfg.get_double("plateau_rel", ec.train.plateau_rel);
  ec.train.plateau_steps =
      cfg.get_int("plateau_steps", ec.train.plateau_steps);
  ec.train.seed = static_cast<uint64_t>(
      cfg.get_int("train_seed", static_cast<int64_t>(ec.seed)));
  ec.motion_reg.lambda_nu =
      cfg.get_double("lambda_nu", ec.motion_reg.lambda_nu);
  ec.motion_reg.lambda_delta =
      cfg.get_double("lambda_delta", ec.motion_reg.lambda_delta);

  ec.net.n_bins = ec.n_bins;
  ec.net.conv_channels =
      cfg.get_int_list("conv_channels", ec.net.conv_channels);
  ec.net.kernel = cfg.get_int("kernel", ec.net.kernel);
  ec.net.dense_hidden = cfg.get_int("dense_hidden", ec.net.dense_hidden);
  ec.net.tau_scale_ms = ec.timing.readout_window_ms();
  return ec;
}

// Everything one simulated scan produces, in memory.
struct SimulationBundle {
  TissueMap map;
  CoilSet coils;
  AcquisitionSpec acq;
  std::vector<SpokeInfo> schedule;
  BinAssignment bins;
  KSpaceDataset data;
  Tensor truth;  // complex [n_bins, h, w], rendered at the bin delays
};

inline SimulationBundle run_simulation(const ExperimentConfig& ec) {
  SimulationBundle b;
  b.map = make_phantom(ec.grid, ec.grid, default_geometry(),
                       default_tissues());
  b.coils = simulate_coils(ec.n_coils, ec.grid, ec.grid, ec.seed,
                           ec.coil_profile);
  b.acq = ec.acquisition();
  b.schedule = generate_schedule(ec.timing, ec.angle_mode, ec.tiny_n);
  b.bins = bin_by_delay(b.schedule, ec.n_bins, ec.timing);
  b.data = simulate_acquisition(b.map, b.coils, b.acq, ec.tau_sampling,
                                b.bins, ec.with_motion ? &ec.motion : nullptr,
                                ec.noise_sigma, ec.seed);
  b.truth = Tensor::zeros_complex({ec.n_bins, ec.grid, ec.grid});
  int64_t hw = ec.grid * ec.grid;
  for (int64_t bi = 0; bi < ec.n_bins; ++bi) {
    Tensor img = render(b.map, b.bins.rep_tau_ms[static_cast<size_t>(bi)]);
    for (int64_t i = 0; i < 2 * hw; ++i)
      b.truth.data[static_cast<size_t>(2 * bi * hw + i)] =
          img.data[static_cast<size_t>(i)];
  }
  return b;
}

namespace detail {

inline Tensor labels_as_tensor(const TissueMap& map) {
  Tensor t = Tensor::zeros_real({map.h, map.w});
  for (size_t i = 0; i < map.labels.size(); ++i)
    t.data[i] = static_cast<double>(map.labels[i]);
  return t;
}

inline Tensor doubles_as_tensor(const std::vector<double>& v) {
  Tensor t = Tensor::zeros_real({static_cast<int64_t>(v.size())});
  t.data = v;
  return t;
}

inline Tensor string_as_tensor(const std::string& s) {
  Tensor t = Tensor::zeros_real({static_cast<int64_t>(s.size())});
  for (size_t i = 0; i < s.size(); ++i)
    t.data[i] = static_cast<double>(static_cast<unsigned char>(s[i]));
  return t;
}

inline std::string tensor_as_string(const Tensor& t) {
  std::string s;
  for (double v : t.data) s.push_back(static_cast<char>(v));
  return s;
}

}  // namespace detail

inline void save_dataset(const std::string& path, const SimulationBundle& b,
                         const ExperimentConfig& ec) {
  std::vector<NamedTensor> arrays;
  arrays.push_back({"samples", b.data.samples});
  arrays.push_back({"coil_maps", b.coils.maps});
  arrays.push_back({"truth", b.truth});
  arrays.push_back({"labels", detail::labels_as_tensor(b.map)});
  arrays.push_back({"rep_tau_ms", detail::doubles_as_tensor(b.bins.rep_tau_ms)});
  Tensor noise = Tensor::zeros_real({2});
  noise.data = {b.data.noise_sigma, b.data.noise_energy};
  arrays.push_back({"noise", std::move(noise)});
  if (ec.with_motion) {
    arrays.push_back(
        {"motion_nu", detail::doubles_as_tensor(ec.motion.nu_rad)});
    Tensor d = Tensor::zeros_real({ec.timing.n_segments, 2});
    d.data = ec.motion.delta;
    arrays.push_back({"motion_delta", std::move(d)});
  }
  write_container(path, arrays);
}

// Rebuilds the deterministic parts (phantom, schedule, bins, trajectory)
// from the config and takes the sampled data from the container, verifying
// that the two actually describe the same scan.
inline SimulationBundle load_dataset(const std::string& path,
                                     const ExperimentConfig& ec) {
  auto arrays = read_container(path);
  SimulationBundle b;
  b.map = make_phantom(ec.grid, ec.grid, default_geometry(),
                       default_tissues());
  b.acq = ec.acquisition();
  b.schedule = generate_schedule(ec.timing, ec.angle_mode, ec.tiny_n);
  b.bins = bin_by_delay(b.schedule, ec.n_bins, ec.timing);

  const Tensor& samples = require_array(arrays, "samples", path);
  int64_t n_spokes = ec.timing.total_spokes();
  if (samples.rank() != 3 || samples.size(0) != n_spokes ||
      samples.size(1) != ec.n_coils || samples.size(2) != ec.n_readout ||
      !samples.is_complex())
    throw ConfigError("load_dataset: '" + path +
                      "' sample shape does not match the config");
  const Tensor& maps = require_array(arrays, "coil_maps", path);
  if (maps.rank() != 3 || maps.size(0) != ec.n_coils ||
      maps.size(1) != ec.grid || maps.size(2) != ec.grid || !maps.is_complex())
    throw ConfigError("load_dataset: '" + path +
                      "' coil maps do not match the config");

  b.coils.maps = maps;
  b.data.timing = ec.timing;
  b.data.schedule = b.schedule;
  b.data.n_coils = ec.n_coils;
  b.data.n_readout = ec.n_readout;
  b.data.cartesian = ec.cartesian;
  b.data.coords = build_trajectory(b.schedule, b.acq);
  b.data.samples = samples;
  const Tensor& noise = require_array(arrays, "noise", path);
  if (noise.numel() != 2)
    throw ConfigError("load_dataset: '" + path + "' has a malformed noise record");
  b.data.noise_sigma = noise.data[0];
  b.data.noise_energy = noise.data[1];
  b.truth = require_array(arrays, "truth", path);
  if (b.truth.rank() != 3 || b.truth.size(0) != ec.n_bins ||
      b.truth.size(1) != ec.grid)
    throw ConfigError("load_dataset: '" + path +
                      "' truth series does not match the config");
  return b;
}

struct ReconResult {
  std::string method;
  Tensor images;  // complex [n_bins, h, w]
  TrainTrace trace;
  bool has_motion = false;
  MotionTrack motion;  // estimated track (dfm_mc only)
};

inline ReconResult run_recon(const SimulationBundle& b,
                             const ExperimentConfig& ec) {
  ReconResult r;
  r.method = ec.method;
  if (ec.method == "lowrank") {
    LowRankModel m =
        fit_lowrank(b.data, b.bins, b.coils, ec.rank, ec.train, &r.trace);
    r.images = m.images();
    r.method = "lowrank" + std::to_string(ec.rank);
    return r;
  }
  Tensor gamma = gamma_from_bins(gridded_init(b.data, b.bins, b.coils));
  NetworkDescriptor desc = ec.net;
  desc.n_bins = b.bins.n_bins;
  desc.tau_scale_ms = ec.timing.readout_window_ms();
  DfmModel m = build_dfm(desc, std::move(gamma), ec.train.seed);
  if (ec.method == "dfm") {
    train_dfm(m, b.data, b.bins, b.coils, ec.train, &r.trace);
  } else {
    r.motion = train_dfm_mc(m, b.data, b.bins, b.coils, ec.train,
                            ec.motion_reg, &r.trace);
    r.has_motion = true;
  }
  r.images = dfm_images(m, b.bins);
  return r;
}

inline void save_recon(const std::string& path, const ReconResult& r) {
  std::vector<NamedTensor> arrays;
  arrays.push_back({"method", detail::string_as_tensor(r.method)});
  arrays.push_back({"images", r.images});
  arrays.push_back({"epoch_loss", detail::doubles_as_tensor(r.trace.epoch_loss)});
  arrays.push_back(
      {"final_bin_loss", detail::doubles_as_tensor(r.trace.final_bin_loss)});
  if (r.has_motion) {
    arrays.push_back({"motion_nu", detail::doubles_as_tensor(r.motion.nu_rad)});
    Tensor d = Tensor::zeros_real({r.motion.segments(), 2});
    d.data = r.motion.delta;
    arrays.push_back({"motion_delta", std::move(d)});
  }
  write_container(path, arrays);
}

inline ReconResult load_recon(const std::string& path) {
  auto arrays = read_container(path);
  ReconResult r;
  r.method = detail::tensor_as_string(require_array(arrays, "method", path));
  r.images = require_array(arrays, "images", path);
  if (r.images.rank() != 3 || !r.images.is_complex())
    throw IoError("load_recon: '" + path + "' images must be complex rank 3");
  const Tensor* el = find_array(arrays, "epoch_loss");
  if (el != nullptr) r.trace.epoch_loss = el->data;
  const Tensor* bl = find_array(arrays, "final_bin_loss");
  if (bl != nullptr) r.trace.final_bin_loss = bl->data;
  const Tensor* nu = find_array(arrays, "motion_nu");
  if (nu != nullptr) {
    const Tensor& d = require_array(arrays, "motion_delta", path);
    if (d.numel() != 2 * nu->numel())
      throw IoError("load_recon: '" + path + "' motion arrays disagree");
    r.has_motion = true;
    r.motion.nu_rad = nu->data;
    r.motion.delta = d.data;
  }
  return r;
}

// ---- text outputs ----

namespace detail {

// Shortest round-trip formatting keeps the CSVs byte-stable across reruns.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_metrics_csv(const std::string& path,
                              const std::vector<std::pair<
                                  std::string, std::vector<BinMetric>>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("metrics: cannot open '" + path + "' for writing");
  os << "method,bin,tau_ms,nrmse\n";
  for (const auto& [method, metrics] : rows)
    for (const BinMetric& m : metrics)
      os << method << ',' << m.bin << ',' << detail::format_double(m.tau_ms)
         << ',' << detail::format_double(m.nrmse) << '\n';
  if (!os) throw IoError("metrics: write failed for '" + path + "'");
}

inline void write_curves_csv(const std::string& path,
                             const std::vector<CurvePoint>& curves) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("curves: cannot open '" + path + "' for writing");
  os << "voxel,label,tau_ms,value\n";
  for (const CurvePoint& p : curves)
    os << p.voxel << ',' << p.label << ','
       << detail::format_double(p.tau_ms) << ','
       << detail::format_double(p.value) << '\n';
  if (!os) throw IoError("curves: write failed for '" + path + "'");
}

// Magnitude snapshots as 8-bit PGM, one file per bin, plus a sidecar CSV
// recording the magnitude each full-scale pixel stands for.
inline void write_pgm_snapshots(const std::string& prefix,
                                const Tensor& series,
                                const std::string& sidecar_path) {
  if (series.rank() != 3 || !series.is_complex())
    throw NumericError("snapshots: complex [n_bins, h, w] series expected");
  int64_t nb = series.size(0), h = series.size(1), w = series.size(2);
  std::ofstream sc(sidecar_path, std::ios::trunc);
  if (!sc)
    throw IoError("snapshots: cannot open '" + sidecar_path + "' for writing");
  sc << "file,scale\n";
  for (int64_t b = 0; b < nb; ++b) {
    double peak = 0.0;
    for (int64_t i = 0; i < h * w; ++i)
      peak = std::max(peak, std::abs(series.c(b * h * w + i)));
    std::string file = prefix + "_bin" + std::to_string(b) + ".pgm";
    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("snapshots: cannot open '" + file + "' for writing");
    os << "P5\n" << w << ' ' << h << "\n255\n";
    for (int64_t i = 0; i < h * w; ++i) {
      double mag = std::abs(series.c(b * h * w + i));
      double unit = peak > 0.0 ? mag / peak : 0.0;
      os.put(static_cast<char>(
          static_cast<unsigned char>(std::lround(255.0 * unit))));
    }
    if (!os) throw IoError("snapshots: write failed for '" + file + "'");
    sc << file << ',' << detail::format_double(peak) << '\n';
  }
  if (!sc) throw IoError("snapshots: write failed for '" + sidecar_path + "'");
}

}  // namespace dfmr
