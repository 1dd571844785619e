#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "dfmr/experiment.hpp"
#include "test_helpers.hpp"

using namespace dfmr;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "dfmr_eval_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  REQUIRE(os);
  os << content;
}

ExperimentConfig small_config() {
  ExperimentConfig ec;
  ec.grid = 16;
  ec.n_coils = 2;
  ec.seed = 5;
  ec.timing.n_segments = 2;
  ec.timing.spokes_per_segment = 6;
  ec.timing.tr_ms = 100.0;
  ec.timing.recovery_delay_ms = 50.0;
  ec.n_readout = 17;
  ec.n_bins = 3;
  ec.tau_sampling = TauSampling::BinCenter;
  ec.net.conv_channels = {8, 2};
  ec.net.dense_hidden = 8;
  return ec;
}

}  // namespace

TEST_CASE("scale-fitted error measure", "[eval]") {
  Rng rng(51);
  Tensor truth = testutil::random_tensor(rng, DType::Complex128, {6, 5});

  // Any global complex scale is forgiven.
  Tensor scaled = truth;
  std::complex<double> alpha(2.0, -3.0);
  for (int64_t i = 0; i < scaled.numel(); ++i)
    scaled.set_c(i, truth.c(i) * alpha);
  CHECK(nrmse(scaled, truth) < 1e-12);

  // A zero reconstruction explains nothing.
  CHECK(nrmse(Tensor::zeros_complex({6, 5}), truth) == 1.0);

  // Orthogonal reconstruction: the best scale is zero, the error is full.
  Tensor t2 = Tensor::zeros_complex({2});
  Tensor r2 = Tensor::zeros_complex({2});
  t2.set_c(0, {1.0, 0.0});
  r2.set_c(1, {1.0, 0.0});
  CHECK(testutil::rel_err(nrmse(r2, t2), 1.0) < 1e-12);

  // Hand-checked value: truth (1,0), recon (1,1) -> alpha 1/2, error
  // sqrt(1/2).
  Tensor r3 = Tensor::zeros_complex({2});
  r3.set_c(0, {1.0, 0.0});
  r3.set_c(1, {1.0, 0.0});
  CHECK(testutil::rel_err(nrmse(r3, t2), std::sqrt(0.5)) < 1e-12);

  CHECK_THROWS_AS(nrmse(t2, Tensor::zeros_complex({2})), NumericError);
  CHECK_THROWS_AS(nrmse(Tensor::zeros_complex({3}), t2), NumericError);
}

TEST_CASE("per-bin series errors and their mean", "[eval]") {
  Rng rng(52);
  Tensor truth = testutil::random_tensor(rng, DType::Complex128, {2, 4, 4});
  Tensor recon = truth;
  // Bin 0 exact up to scale; bin 1 perturbed.
  for (int64_t i = 0; i < 16; ++i) recon.set_c(i, truth.c(i) * 3.0);
  for (int64_t i = 16; i < 32; ++i)
    recon.set_c(i, truth.c(i) + std::complex<double>(0.3, -0.2));

  BinAssignment bins;
  bins.n_bins = 2;
  bins.rep_tau_ms = {110.0, 330.0};
  auto ms = series_nrmse(recon, truth, bins);
  REQUIRE(ms.size() == 2);
  CHECK(ms[0].bin == 0);
  CHECK(ms[0].tau_ms == 110.0);
  CHECK(ms[0].nrmse < 1e-12);
  CHECK(ms[1].nrmse > 0.01);

  // The mean is the plain average of the per-bin values.
  CHECK(testutil::rel_err(mean_nrmse(ms), (ms[0].nrmse + ms[1].nrmse) / 2.0) <
        1e-15);

  Tensor bad = Tensor::zeros_complex({3, 4, 4});
  CHECK_THROWS_AS(series_nrmse(bad, truth, bins), NumericError);
}

TEST_CASE("tissue mean magnitude probes one label", "[eval]") {
  TissueMap map;
  map.h = 2;
  map.w = 3;
  map.labels = {0, 1, 1, 0, 2, 1};
  map.classes = default_tissues();

  Tensor series = Tensor::zeros_complex({2, 2, 3});
  // Bin 1: distinct magnitudes per voxel.
  for (int64_t i = 0; i < 6; ++i)
    series.set_c(6 + i, {0.0, static_cast<double>(i)});  // |.| = i

  // Label 1 sits at voxels 1, 2, 5 -> mean of 1, 2, 5.
  CHECK(testutil::rel_err(mean_abs_over_label(series, 1, map, 1),
                          (1.0 + 2.0 + 5.0) / 3.0) < 1e-15);
  CHECK(mean_abs_over_label(series, 0, map, 1) == 0.0);
  CHECK_THROWS_AS(mean_abs_over_label(series, 1, map, 3), NumericError);
  CHECK_THROWS_AS(mean_abs_over_label(series, 2, map, 1), NumericError);
}

TEST_CASE("recovery curves remove the reconstruction's global phase",
          "[eval]") {
  TissueMap map;
  map.h = 2;
  map.w = 2;
  map.labels = {0, 2, 1, 0};
  map.classes = default_tissues();

  BinAssignment bins;
  bins.n_bins = 2;
  bins.rep_tau_ms = {100.0, 500.0};

  double phi = 0.7;
  std::complex<double> ph(std::cos(phi), std::sin(phi));
  Tensor series = Tensor::zeros_complex({2, 2, 2});
  series.set_c(0 * 4 + 1, -0.5 * ph);  // voxel (0,1), early bin: negative
  series.set_c(1 * 4 + 1, 1.25 * ph);  // voxel (0,1), late bin

  auto curves = extract_curves(series, bins, map, {{0, 1}});
  REQUIRE(curves.size() == 2);
  CHECK(curves[0].voxel == "0x1");
  CHECK(curves[0].label == 2);
  CHECK(curves[0].tau_ms == 100.0);
  CHECK(testutil::rel_err(curves[0].value, -0.5) < 1e-12);
  CHECK(testutil::rel_err(curves[1].value, 1.25) < 1e-12);

  // A voxel that is zero at the last bin falls back to the real axis.
  auto flat = extract_curves(series, bins, map, {{1, 0}});
  CHECK(flat[0].value == 0.0);

  CHECK_THROWS_AS(extract_curves(series, bins, map, {{5, 0}}), ConfigError);
}

TEST_CASE("representative voxels sit inside their tissue", "[eval]") {
  TissueMap map = make_phantom(64, 64, default_geometry(), default_tissues());
  auto picks = representative_voxels(map);
  REQUIRE(picks.size() == 3);
  for (size_t i = 0; i < picks.size(); ++i) {
    auto [row, col] = picks[i];
    CHECK(map.label_at(row, col) == static_cast<uint8_t>(i + 1));
  }
  // Deterministic: same map, same picks.
  CHECK(representative_voxels(map) == picks);
}

TEST_CASE("container round trip preserves arrays exactly", "[eval]") {
  auto dir = temp_dir();
  std::string path = (dir / "roundtrip.dfmr").string();

  Rng rng(53);
  std::vector<NamedTensor> arrays;
  arrays.push_back({"alpha", testutil::random_tensor(rng, DType::Real64,
                                                     {3, 4})});
  arrays.push_back({"beta/cplx", testutil::random_tensor(
                                     rng, DType::Complex128, {2, 3, 2})});
  arrays.push_back({"gamma", testutil::random_tensor(rng, DType::Real64, {7})});
  write_container(path, arrays);

  auto got = read_container(path);
  REQUIRE(got.size() == 3);
  for (size_t i = 0; i < arrays.size(); ++i) {
    CHECK(got[i].name == arrays[i].name);
    CHECK(got[i].tensor.dtype == arrays[i].tensor.dtype);
    CHECK(got[i].tensor.shape == arrays[i].tensor.shape);
    CHECK(got[i].tensor.data == arrays[i].tensor.data);
  }

  CHECK(find_array(got, "alpha") != nullptr);
  CHECK(find_array(got, "missing") == nullptr);
  CHECK_THROWS_AS(require_array(got, "missing", path), IoError);
}

TEST_CASE("container rejects damaged files", "[eval]") {
  auto dir = temp_dir();
  std::string path = (dir / "damaged.dfmr").string();
  std::vector<NamedTensor> arrays;
  arrays.push_back({"x", Tensor::zeros_real({4})});
  write_container(path, arrays);
  std::string good = slurp(path);

  // Wrong magic.
  std::string bad = good;
  bad[0] = 'X';
  spit(path, bad);
  CHECK_THROWS_AS(read_container(path), IoError);

  // Unsupported version.
  bad = good;
  bad[4] = 9;
  spit(path, bad);
  CHECK_THROWS_WITH(read_container(path),
                    Catch::Matchers::ContainsSubstring("version"));

  // Unknown dtype code. Layout: 4 magic + 2 version + 8 count + 8 name_len
  // + 1 name byte -> dtype at offset 23.
  bad = good;
  bad[23] = 7;
  spit(path, bad);
  CHECK_THROWS_WITH(read_container(path),
                    Catch::Matchers::ContainsSubstring("dtype"));

  // Truncated payload.
  bad = good.substr(0, good.size() - 9);
  spit(path, bad);
  CHECK_THROWS_AS(read_container(path), IoError);

  CHECK_THROWS_AS(read_container((dir / "does_not_exist.dfmr").string()),
                  IoError);
}

TEST_CASE("config files parse into typed values", "[eval]") {
  auto dir = temp_dir();
  std::string path = (dir / "exp.cfg").string();
  spit(path,
       "# comment line\n"
       "grid = 32\n"
       "lr = 5e-3   # trailing comment\n"
       "cartesian = true\n"
       "\n"
       "conv_channels = 8, 4, 2\n"
       "label = radial sweep\n");

  ConfigMap cfg = ConfigMap::from_file(path);
  CHECK(cfg.get_int("grid", 0) == 32);
  CHECK(cfg.get_double("lr", 0.0) == 5e-3);
  CHECK(cfg.get_bool("cartesian", false));
  CHECK(cfg.get_int_list("conv_channels", {}) ==
        std::vector<int64_t>{8, 4, 2});
  CHECK(cfg.get_string("label", "") == "radial sweep");
  CHECK(cfg.get_int("missing", 42) == 42);

  // All keys consumed: nothing left over.
  CHECK(cfg.unused_keys().empty());
  cfg.reject_unused();

  // Overrides replace file values.
  cfg.set_override("grid=64");
  CHECK(cfg.get_int("grid", 0) == 64);

  // Type errors name the key.
  ConfigMap bad = ConfigMap::from_file(path);
  CHECK_THROWS_WITH(bad.get_int("label", 0),
                    Catch::Matchers::ContainsSubstring("label"));
  CHECK_THROWS_WITH(bad.get_double("label", 0.0),
                    Catch::Matchers::ContainsSubstring("label"));
  CHECK_THROWS_WITH(bad.get_bool("grid", false),
                    Catch::Matchers::ContainsSubstring("grid"));

  // Unused keys are called out by name.
  ConfigMap partial = ConfigMap::from_file(path);
  partial.get_int("grid", 0);
  CHECK_THROWS_WITH(partial.reject_unused(),
                    Catch::Matchers::ContainsSubstring("conv_channels"));

  // Malformed files fail loudly.
  spit(path, "this line has no equals\n");
  CHECK_THROWS_AS(ConfigMap::from_file(path), ConfigError);
  spit(path, "a = 1\na = 2\n");
  CHECK_THROWS_WITH(ConfigMap::from_file(path),
                    Catch::Matchers::ContainsSubstring("duplicate"));
  spit(path, "= 3\n");
  CHECK_THROWS_AS(ConfigMap::from_file(path), ConfigError);
  CHECK_THROWS_AS(ConfigMap::from_file((dir / "nope.cfg").string()), IoError);
}

TEST_CASE("experiment config covers the acquisition and both motion forms",
          "[eval]") {
  auto dir = temp_dir();
  std::string path = (dir / "desk.cfg").string();

  // Empty config: desk-scale defaults.
  spit(path, "\n");
  ConfigMap cfg = ConfigMap::from_file(path);
  ExperimentConfig ec = parse_experiment(cfg);
  CHECK(ec.grid == 64);
  CHECK(ec.n_coils == 4);
  CHECK(ec.timing.n_segments == 8);
  CHECK(ec.timing.spokes_per_segment == 100);
  CHECK(ec.timing.tr_ms == 35.2);
  CHECK(ec.timing.recovery_delay_ms == 500.0);
  CHECK(ec.n_readout == 101);
  CHECK(ec.n_bins == 8);
  CHECK(ec.tau_sampling == TauSampling::PerSpoke);
  CHECK(!ec.with_motion);
  CHECK(testutil::rel_err(ec.net.tau_scale_ms, 3520.0) < 1e-15);
  CHECK(ec.method == "dfm");

  // Step motion switches on at the onset segment.
  spit(path,
       "n_segments = 4\n"
       "motion_step_deg = 10\n"
       "motion_step_dx = 1.5\n"
       "motion_step_dy = -2\n"
       "motion_onset_segment = 2\n");
  ConfigMap cfg2 = ConfigMap::from_file(path);
  ExperimentConfig e2 = parse_experiment(cfg2);
  cfg2.reject_unused();
  REQUIRE(e2.with_motion);
  CHECK(e2.motion.nu_rad[0] == 0.0);
  CHECK(e2.motion.nu_rad[1] == 0.0);
  CHECK(testutil::rel_err(e2.motion.nu_rad[2], 10.0 * M_PI / 180.0) < 1e-15);
  CHECK(e2.motion.delta[2 * 3] == 1.5);
  CHECK(e2.motion.delta[2 * 3 + 1] == -2.0);

  // Explicit per-segment lists.
  spit(path,
       "n_segments = 2\n"
       "spokes_per_segment = 6\n"
       "motion_nu_deg = 0, 5\n"
       "motion_dx = 0, 1\n"
       "motion_dy = 0, -0.5\n");
  ConfigMap cfg3 = ConfigMap::from_file(path);
  ExperimentConfig e3 = parse_experiment(cfg3);
  REQUIRE(e3.with_motion);
  CHECK(testutil::rel_err(e3.motion.nu_rad[1], 5.0 * M_PI / 180.0) < 1e-15);
  CHECK(e3.motion.delta[2] == 1.0);

  // Both motion forms at once is a contradiction.
  spit(path,
       "motion_nu_deg = 0\n"
       "motion_step_deg = 5\n");
  ConfigMap cfg4 = ConfigMap::from_file(path);
  CHECK_THROWS_AS(parse_experiment(cfg4), ConfigError);

  // Wrong list length, bad method, bad enum strings.
  spit(path, "n_segments = 3\nmotion_nu_deg = 0, 1\nmotion_dx = 0, 0\n"
             "motion_dy = 0, 0\n");
  ConfigMap cfg5 = ConfigMap::from_file(path);
  CHECK_THROWS_AS(parse_experiment(cfg5), ConfigError);
  spit(path, "method = magic\n");
  ConfigMap cfg6 = ConfigMap::from_file(path);
  CHECK_THROWS_AS(parse_experiment(cfg6), ConfigError);
  spit(path, "angle_mode = spiral\n");
  ConfigMap cfg7 = ConfigMap::from_file(path);
  CHECK_THROWS_AS(parse_experiment(cfg7), ConfigError);
  spit(path, "tau_sampling = never\n");
  ConfigMap cfg8 = ConfigMap::from_file(path);
  CHECK_THROWS_AS(parse_experiment(cfg8), ConfigError);
}

TEST_CASE("dataset containers round trip against their config", "[eval]") {
  auto dir = temp_dir();
  std::string path = (dir / "dataset.dfmr").string();

  ExperimentConfig ec = small_config();
  SimulationBundle b = run_simulation(ec);
  save_dataset(path, b, ec);

  SimulationBundle got = load_dataset(path, ec);
  CHECK(got.data.samples.data == b.data.samples.data);
  CHECK(got.coils.maps.data == b.coils.maps.data);
  CHECK(got.truth.data == b.truth.data);
  CHECK(got.bins.rep_tau_ms == b.bins.rep_tau_ms);
  CHECK(got.data.coords.data == b.data.coords.data);
  CHECK(got.data.noise_sigma == b.data.noise_sigma);

  // A config describing a different scan must be refused.
  ExperimentConfig other = ec;
  other.n_readout = 21;
  CHECK_THROWS_AS(load_dataset(path, other), ConfigError);
  other = ec;
  other.n_coils = 3;
  CHECK_THROWS_AS(load_dataset(path, other), ConfigError);
}

TEST_CASE("reconstruction containers round trip including motion", "[eval]") {
  auto dir = temp_dir();
  std::string path = (dir / "recon.dfmr").string();

  Rng rng(54);
  ReconResult r;
  r.method = "dfm_mc";
  r.images = testutil::random_tensor(rng, DType::Complex128, {3, 4, 4});
  r.trace.epoch_loss = {10.0, 5.0, 2.5};
  r.trace.final_bin_loss = {1.0, 0.5, 0.25};
  r.has_motion = true;
  r.motion = MotionTrack::zero(2);
  r.motion.nu_rad = {0.0, 0.1};
  r.motion.delta = {0.0, 0.0, 1.0, -0.5};
  save_recon(path, r);

  ReconResult got = load_recon(path);
  CHECK(got.method == "dfm_mc");
  CHECK(got.images.data == r.images.data);
  CHECK(got.trace.epoch_loss == r.trace.epoch_loss);
  CHECK(got.trace.final_bin_loss == r.trace.final_bin_loss);
  REQUIRE(got.has_motion);
  CHECK(got.motion.nu_rad == r.motion.nu_rad);
  CHECK(got.motion.delta == r.motion.delta);

  // Motion arrays must come as a pair.
  std::vector<NamedTensor> broken;
  broken.push_back({"method", detail::string_as_tensor(r.method)});
  broken.push_back({"images", r.images});
  Tensor nu = Tensor::zeros_real({2});
  broken.push_back({"motion_nu", std::move(nu)});
  std::string bad = (dir / "broken.dfmr").string();
  write_container(bad, broken);
  CHECK_THROWS_AS(load_recon(bad), IoError);
}

TEST_CASE("CSV and snapshot outputs are byte-stable", "[eval]") {
  auto dir = temp_dir();
  std::vector<std::pair<std::string, std::vector<BinMetric>>> rows;
  rows.push_back({"dfm", {{0, 220.0, 0.05231}, {1, 660.0, 0.0417}}});
  rows.push_back({"lowrank4", {{0, 220.0, 0.09}, {1, 660.0, 1.0 / 3.0}}});

  std::string m1 = (dir / "metrics1.csv").string();
  std::string m2 = (dir / "metrics2.csv").string();
  write_metrics_csv(m1, rows);
  write_metrics_csv(m2, rows);
  std::string text = slurp(m1);
  CHECK(text == slurp(m2));
  CHECK(text.rfind("method,bin,tau_ms,nrmse\n", 0) == 0);
  CHECK(text.find("dfm,0,220,0.05231") != std::string::npos);
  CHECK(text.find("lowrank4,1,660,0.33333333333333331") != std::string::npos);

  std::vector<CurvePoint> curves = {{"12x20", 2, 220.0, -0.5},
                                    {"12x20", 2, 660.0, 0.125}};
  std::string c1 = (dir / "curves.csv").string();
  write_curves_csv(c1, curves);
  std::string ctext = slurp(c1);
  CHECK(ctext.rfind("voxel,label,tau_ms,value\n", 0) == 0);
  CHECK(ctext.find("12x20,2,220,-0.5\n") != std::string::npos);
  CHECK(ctext.find("12x20,2,660,0.125\n") != std::string::npos);

  // PGM snapshots: P5 header, one byte per pixel, full-scale at the peak.
  Tensor series = Tensor::zeros_complex({2, 2, 3});
  series.set_c(0, {3.0, 4.0});   // |.| = 5, the peak of bin 0
  series.set_c(1, {0.0, 2.5});   // half scale
  std::string prefix = (dir / "snap").string();
  std::string sidecar = (dir / "snap_scale.csv").string();
  write_pgm_snapshots(prefix, series, sidecar);

  std::string pgm = slurp(prefix + "_bin0.pgm");
  std::string header = "P5\n3 2\n255\n";
  CHECK(pgm.rfind(header, 0) == 0);
  size_t off = header.size();
  REQUIRE(pgm.size() == off + 6);
  CHECK(static_cast<unsigned char>(pgm[off]) == 255);
  CHECK(static_cast<unsigned char>(pgm[off + 1]) == 128);  // round(255 * 0.5)
  CHECK(static_cast<unsigned char>(pgm[off + 2]) == 0);

  // All-zero bin: zero scale, zero pixels.
  std::string pgm1 = slurp(prefix + "_bin1.pgm");
  REQUIRE(pgm1.size() == off + 6);
  for (size_t i = off; i < pgm1.size(); ++i) CHECK(pgm1[i] == 0);
  std::string sc = slurp(sidecar);
  CHECK(sc.rfind("file,scale\n", 0) == 0);
  CHECK(sc.find("_bin0.pgm,5") != std::string::npos);
  CHECK(sc.find("_bin1.pgm,0") != std::string::npos);
}

TEST_CASE("miniature experiment runs through the file interfaces", "[eval]") {
  auto dir = temp_dir();
  std::string data_path = (dir / "mini_data.dfmr").string();
  std::string recon_path = (dir / "mini_recon.dfmr").string();

  // Fully sampled Cartesian bins (rows cycle with the spoke counter, so 48
  // spokes over 16 rows cover every bin completely) make the per-bin fit
  // uniquely determined; the truth series has tissue rank 3, so a converged
  // rank-3 fit must land on it.
  ExperimentConfig ec = small_config();
  ec.timing.n_segments = 1;
  ec.timing.spokes_per_segment = 48;
  ec.n_readout = 16;
  ec.cartesian = true;
  ec.method = "lowrank";
  ec.rank = 3;
  ec.train.epochs = 800;
  ec.train.lr = 2e-2;

  SimulationBundle b = run_simulation(ec);
  save_dataset(data_path, b, ec);
  SimulationBundle loaded = load_dataset(data_path, ec);

  ReconResult r = run_recon(loaded, ec);
  CHECK(r.method == "lowrank3");
  save_recon(recon_path, r);
  ReconResult back = load_recon(recon_path);

  auto ms = series_nrmse(back.images, loaded.truth, loaded.bins);
  REQUIRE(ms.size() == 3);
  for (const BinMetric& m : ms) {
    CHECK(std::isfinite(m.nrmse));
    CHECK(m.nrmse < 0.05);
  }

  // The factor-model path exercises the same plumbing.
  ExperimentConfig ed = small_config();
  ed.method = "dfm";
  ed.train.epochs = 40;
  ed.train.lr = 1e-2;
  ReconResult rd = run_recon(loaded, ed);
  CHECK(rd.method == "dfm");
  CHECK(rd.images.size(0) == 3);
  CHECK(!rd.trace.epoch_loss.empty());
}
