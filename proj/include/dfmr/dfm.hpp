#pragma once
// Deep factor model: a small convolutional network maps the fixed gridded
// bin stack gamma to a complex image, while a two-layer dense network maps
// the normalized inversion delay to per-channel modulation factors. The
// image at delay tau is
//
//   rho(tau) = pack_complex(conv_N(...conv_1(gamma) * v_1(tau)...) * v_N(tau))
//
// with channel-wise modulation after every convolution, tanh after the first
// block, leaky ReLU after the middle blocks, and a linear (but still
// modulated) final block with two output channels (re, im).
//
// The motion-compensated variant keeps the same image model and adds one
// rigid transform per acquisition segment, estimated jointly with the
// network from the k-space data.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dfmr/adam.hpp"
#include "dfmr/autodiff.hpp"
#include "dfmr/coils.hpp"
#include "dfmr/encoding.hpp"
#include "dfmr/errors.hpp"
#include "dfmr/lowrank.hpp"
#include "dfmr/nn.hpp"
#include "dfmr/recon_ops.hpp"
#include "dfmr/rng.hpp"
#include "dfmr/tensor.hpp"
#include "dfmr/toeplitz.hpp"

namespace dfmr {

struct NetworkDescriptor {
  int64_t n_bins = 8;  // gamma carries 2 * n_bins real channels
  std::vector<int64_t> conv_channels = {16, 16, 2};
  int64_t kernel = 3;
  int64_t dense_hidden = 32;
  double tau_scale_ms = 3520.0;  // dense input is tau / tau_scale_ms
  // Reduction mode: hidden blocks skip their activation, so with a single
  // hidden block the image is a sum of per-channel spatial maps scaled by
  // the temporal factors, i.e. a factor model of that rank.
  bool linear_hidden = false;

  int64_t modulation_width() const {
    int64_t s = 0;
    for (int64_t c : conv_channels) s += c;
    return s;
  }

  void validate() const {
    if (n_bins < 1) throw ConfigError("network: n_bins must be >= 1");
    if (conv_channels.size() < 2 || conv_channels.back() != 2)
      throw ConfigError(
          "network: need at least two conv blocks ending in 2 channels");
    for (int64_t c : conv_channels)
      if (c < 1) throw ConfigError("network: conv channels must be >= 1");
    if (kernel < 1 || kernel % 2 == 0)
      throw ConfigError("network: kernel size must be odd");
    if (dense_hidden < 1) throw ConfigError("network: dense_hidden must be >= 1");
    if (tau_scale_ms <= 0.0)
      throw ConfigError("network: tau_scale_ms must be > 0");
  }
};

// Bin-major real channel stack (Re b0, Im b0, Re b1, ...) from a complex
// [n_bins, h, w] series; this is the fixed network input.
inline Tensor gamma_from_bins(const Tensor& images) {
  if (images.rank() != 3 || !images.is_complex())
    throw NumericError("gamma_from_bins: complex [n_bins, h, w] expected");
  int64_t nb = images.size(0), h = images.size(1), w = images.size(2);
  int64_t hw = h * w;
  Tensor gamma = Tensor::zeros_real({2 * nb, h, w});
  for (int64_t b = 0; b < nb; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      gamma.data[static_cast<size_t>(2 * b * hw + i)] =
          images.data[static_cast<size_t>(2 * (b * hw + i))];
      gamma.data[static_cast<size_t>((2 * b + 1) * hw + i)] =
          images.data[static_cast<size_t>(2 * (b * hw + i) + 1)];
    }
  return gamma;
}

struct DfmModel {
  NetworkDescriptor desc;
  int64_t h = 0, w = 0;
  Tensor gamma;  // real [2 * n_bins, h, w]
  std::vector<Parameter> conv_k, conv_b;
  Parameter dense_w1, dense_b1, dense_w2, dense_b2;

  std::vector<Parameter*> params() {
    std::vector<Parameter*> ps;
    for (size_t i = 0; i < conv_k.size(); ++i) {
      ps.push_back(&conv_k[i]);
      ps.push_back(&conv_b[i]);
    }
    ps.push_back(&dense_w1);
    ps.push_back(&dense_b1);
    ps.push_back(&dense_w2);
    ps.push_back(&dense_b2);
    return ps;
  }

  int64_t param_count() {
    int64_t n = 0;
    for (Parameter* p : params()) n += p->value.numel();
    return n;
  }
};

// Fresh network around a fixed gamma stack. Modulation biases start at one
// so every block begins as a plain convolution; all other biases start at
// zero and weights are scaled by fan-in.
inline DfmModel build_dfm(const NetworkDescriptor& desc, Tensor gamma,
                          uint64_t seed) {
  desc.validate();
  if (gamma.rank() != 3 || gamma.is_complex() ||
      gamma.size(0) != 2 * desc.n_bins)
    throw ConfigError("build_dfm: gamma must be real [2 * n_bins, h, w]");
  DfmModel m;
  m.desc = desc;
  m.h = gamma.size(1);
  m.w = gamma.size(2);
  m.gamma = std::move(gamma);

  Rng root(seed);
  int64_t cin = 2 * desc.n_bins;
  for (size_t i = 0; i < desc.conv_channels.size(); ++i) {
    int64_t cout = desc.conv_channels[i];
    std::string base = "conv" + std::to_string(i);
    Parameter k(base + ".k",
                Tensor::zeros_real({cout, cin, desc.kernel, desc.kernel}));
    Rng rk = root.substream(k.name);
    rk.fill_normal(k.value, 1.0 / std::sqrt(static_cast<double>(
                                cin * desc.kernel * desc.kernel)));
    m.conv_k.push_back(std::move(k));
    m.conv_b.emplace_back(base + ".b", Tensor::zeros_real({cout}));
    cin = cout;
  }

  int64_t width = desc.modulation_width();
  m.dense_w1 = Parameter("dense0.w", Tensor::zeros_real({desc.dense_hidden, 1}));
  m.dense_b1 = Parameter("dense0.b", Tensor::zeros_real({desc.dense_hidden}));
  m.dense_w2 =
      Parameter("dense1.w", Tensor::zeros_real({width, desc.dense_hidden}));
  m.dense_b2 = Parameter("dense1.b", Tensor::zeros_real({width}));
  Rng r1 = root.substream(m.dense_w1.name);
  r1.fill_normal(m.dense_w1.value);
  Rng r2 = root.substream(m.dense_w2.name);
  r2.fill_normal(m.dense_w2.value,
                 1.0 / std::sqrt(static_cast<double>(desc.dense_hidden)));
  m.dense_b2.value.fill(1.0);
  return m;
}

// Modulation vector v(tau), real [modulation_width].
inline Var temporal_factors(DfmModel& m, Graph& g, double tau_ms) {
  Tensor t = Tensor::zeros_real({1});
  t.data[0] = tau_ms / m.desc.tau_scale_ms;
  Var x = g.constant(std::move(t));
  Var hid = activate(dense(x, g.leaf(m.dense_w1), g.leaf(m.dense_b1)),
                     Act::LeakyRelu);
  return dense(hid, g.leaf(m.dense_w2), g.leaf(m.dense_b2));
}

// Complex [h, w] image at delay tau.
inline Var forward_dfm(DfmModel& m, Graph& g, double tau_ms) {
  Var v = temporal_factors(m, g, tau_ms);
  Var x = g.constant(m.gamma);
  int64_t off = 0;
  size_t n = m.conv_k.size();
  for (size_t i = 0; i < n; ++i) {
    int64_t cout = m.desc.conv_channels[i];
    x = conv2d(x, g.leaf(m.conv_k[i]), g.leaf(m.conv_b[i]));
    x = channel_modulate(x, slice1d(v, off, cout));
    off += cout;
    if (i + 1 < n && !m.desc.linear_hidden)
      x = activate(x, i == 0 ? Act::Tanh : Act::LeakyRelu);
  }
  return pack_complex(x);
}

// Image series at the given delays, complex [n_taus, h, w]. The network
// synthesizes a contrast at any delay, not just the training bins.
inline Tensor dfm_images_at(DfmModel& m, const std::vector<double>& taus_ms) {
  int64_t nt = static_cast<int64_t>(taus_ms.size());
  Tensor out = Tensor::zeros_complex({nt, m.h, m.w});
  for (int64_t b = 0; b < nt; ++b) {
    Graph g;
    Var rho = forward_dfm(m, g, taus_ms[static_cast<size_t>(b)]);
    const Tensor& rv = g.value(rho);
    for (int64_t i = 0; i < 2 * m.h * m.w; ++i)
      out.data[static_cast<size_t>(2 * b * m.h * m.w + i)] =
          rv.data[static_cast<size_t>(i)];
  }
  return out;
}

// Bin series snapshot of the current parameters, complex [n_bins, h, w].
inline Tensor dfm_images(DfmModel& m, const BinAssignment& bins) {
  return dfm_images_at(m, bins.rep_tau_ms);
}

// Static-anatomy training against the per-bin residual power, one bin per
// step through the precomputed normal equations.
inline void train_dfm(DfmModel& m, const KSpaceDataset& ds,
                      const BinAssignment& bins, const CoilSet& coils,
                      const TrainOptions& opt, TrainTrace* trace = nullptr) {
  int64_t nb = bins.n_bins;
  std::vector<BinNormalEquations> ne;
  ne.reserve(static_cast<size_t>(nb));
  for (int64_t b = 0; b < nb; ++b)
    ne.emplace_back(collect_bin(ds, bins, b), coils);

  Adam adam({.lr = opt.lr});
  adam.attach_all(m.params());

  detail::PlateauWatch watch(opt.plateau_rel, opt.plateau_steps, nb);
  int64_t steps = 0;
  bool early = false;
  std::vector<double> epoch_loss;
  std::vector<double> bin_loss(static_cast<size_t>(nb), 0.0);

  for (int64_t e = 0; e < opt.epochs && !early; ++e) {
    double sum = 0.0;
    for (int64_t b = 0; b < nb; ++b) {
      Graph g;
      Var rho = forward_dfm(m, g, bins.rep_tau_ms[static_cast<size_t>(b)]);
      Var loss = normal_eq_loss(rho, ne[static_cast<size_t>(b)]);
      adam.zero_grad();
      g.backward(loss);
      adam.step();
      double l = g.scalar(loss);
      sum += l;
      bin_loss[static_cast<size_t>(b)] = l;
      steps += 1;
    }
    epoch_loss.push_back(sum / static_cast<double>(nb));
    early = watch.update(epoch_loss.back());
  }

  if (trace != nullptr) {
    for (int64_t b = 0; b < nb; ++b) {
      Graph g;
      Var rho = forward_dfm(m, g, bins.rep_tau_ms[static_cast<size_t>(b)]);
      bin_loss[static_cast<size_t>(b)] =
          ne[static_cast<size_t>(b)].loss(g.value(rho));
    }
    trace->epoch_loss = std::move(epoch_loss);
    trace->final_bin_loss = std::move(bin_loss);
    trace->steps = steps;
    trace->stopped_early = early;
  }
}

struct MotionOptions {
  double lambda_nu = 0.01;     // weight on squared rotation increments
  double lambda_delta = 0.01;  // weight on squared translation increments
};

// Joint image and motion estimation: same cycling schedule, but the data
// term is evaluated sample-wise with per-segment rigid transforms, and the
// motion track is smoothed by first-difference penalties (scaled per step so
// one epoch applies the nominal weight once). Returns the estimated track;
// compare tracks gauge-aligned (relative_to_first) since a rigid transform
// can be traded between the image and all segments at once.
inline MotionTrack train_dfm_mc(DfmModel& m, const KSpaceDataset& ds,
                                const BinAssignment& bins,
                                const CoilSet& coils, const TrainOptions& opt,
                                const MotionOptions& mopt,
                                TrainTrace* trace = nullptr) {
  int64_t nb = bins.n_bins;
  int64_t ns = ds.timing.n_segments;
  std::vector<BinContext> ctx;
  ctx.reserve(static_cast<size_t>(nb));
  for (int64_t b = 0; b < nb; ++b)
    ctx.push_back(BinContext::from(collect_bin(ds, bins, b), coils));

  Parameter nu("motion.nu", Tensor::zeros_real({ns}));
  Parameter delta("motion.delta", Tensor::zeros_real({ns, 2}));

  Adam adam({.lr = opt.lr});
  adam.attach_all(m.params());
  adam.attach(&nu);
  adam.attach(&delta);

  double lam_nu = mopt.lambda_nu / static_cast<double>(nb);
  double lam_delta = mopt.lambda_delta / static_cast<double>(nb);

  detail::PlateauWatch watch(opt.plateau_rel, opt.plateau_steps, nb);
  int64_t steps = 0;
  bool early = false;
  std::vector<double> epoch_loss;
  std::vector<double> bin_loss(static_cast<size_t>(nb), 0.0);

  for (int64_t e = 0; e < opt.epochs && !early; ++e) {
    double sum = 0.0;
    for (int64_t b = 0; b < nb; ++b) {
      Graph g;
      Var nv = g.leaf(nu);
      Var dv = g.leaf(delta);
      Var rho = forward_dfm(m, g, bins.rep_tau_ms[static_cast<size_t>(b)]);
      Var data = sample_loss(rho, ctx[static_cast<size_t>(b)], nv, dv);
      Var loss = add(data, add(first_diff_penalty(nv, lam_nu),
                               first_diff_penalty(dv, lam_delta)));
      adam.zero_grad();
      g.backward(loss);
      adam.step();
      double l = g.scalar(data);
      sum += l;
      bin_loss[static_cast<size_t>(b)] = l;
      steps += 1;
    }
    epoch_loss.push_back(sum / static_cast<double>(nb));
    early = watch.update(epoch_loss.back());
  }

  if (trace != nullptr) {
    for (int64_t b = 0; b < nb; ++b) {
      Graph g;
      Var nv = g.leaf(nu);
      Var dv = g.leaf(delta);
      Var rho = forward_dfm(m, g, bins.rep_tau_ms[static_cast<size_t>(b)]);
      bin_loss[static_cast<size_t>(b)] =
          g.scalar(sample_loss(rho, ctx[static_cast<size_t>(b)], nv, dv));
    }
    trace->epoch_loss = std::move(epoch_loss);
    trace->final_bin_loss = std::move(bin_loss);
    trace->steps = steps;
    trace->stopped_early = early;
  }

  MotionTrack track = MotionTrack::zero(ns);
  for (int64_t s = 0; s < ns; ++s) {
    track.nu_rad[static_cast<size_t>(s)] = nu.value.data[static_cast<size_t>(s)];
    track.delta[static_cast<size_t>(2 * s)] =
        delta.value.data[static_cast<size_t>(2 * s)];
    track.delta[static_cast<size_t>(2 * s + 1)] =
        delta.value.data[static_cast<size_t>(2 * s + 1)];
  }
  return track;
}

}  // namespace dfmr
