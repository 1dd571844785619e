#pragma once
// Globally low-rank baseline: every bin image is a mix of `rank` shared
// spatial components, rho_b = reshape(U V[:, b]). Both factors are trained
// jointly by Adam against the per-bin data-consistency loss. This is the
// reference the factor-model reconstructions are compared against.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dfmr/adam.hpp"
#include "dfmr/autodiff.hpp"
#include "dfmr/coils.hpp"
#include "dfmr/encoding.hpp"
#include "dfmr/errors.hpp"
#include "dfmr/recon_ops.hpp"
#include "dfmr/rng.hpp"
#include "dfmr/tensor.hpp"
#include "dfmr/toeplitz.hpp"

namespace dfmr {

struct TrainOptions {
  int64_t epochs = 2000;        // full passes over the bins
  double lr = 1e-2;
  double plateau_rel = 1e-6;    // relative improvement that still counts
  int64_t plateau_steps = 100;  // bin updates without improvement -> stop
  uint64_t seed = 1;
};

// Per-epoch mean data loss plus where training actually stopped.
struct TrainTrace {
  std::vector<double> epoch_loss;
  std::vector<double> final_bin_loss;  // data term per bin after training
  int64_t steps = 0;
  bool stopped_early = false;
};

namespace detail {

// Plateau detector shared by the trainers: stop once the best running epoch
// mean has not improved by plateau_rel for plateau_steps bin updates.
class PlateauWatch {
 public:
  PlateauWatch(double rel, int64_t patience_steps, int64_t steps_per_epoch)
      : rel_(rel),
        patience_(std::max<int64_t>(
            1, (patience_steps + steps_per_epoch - 1) / steps_per_epoch)) {}

  // Feed one epoch mean; returns true when training should stop.
  bool update(double epoch_mean) {
    if (epoch_mean < best_ * (1.0 - rel_)) {
      best_ = epoch_mean;
      stale_ = 0;
      return false;
    }
    stale_ += 1;
    return stale_ >= patience_;
  }

 private:
  double rel_;
  int64_t patience_;  // in epochs
  double best_ = std::numeric_limits<double>::infinity();
  int64_t stale_ = 0;
};

}  // namespace detail

struct LowRankModel {
  int64_t h = 0, w = 0, rank = 0, n_bins = 0;
  Parameter u;  // complex [h*w, rank]
  Parameter v;  // complex [rank, n_bins]

  // Synthesized bin series, complex [n_bins, h, w].
  Tensor images() const {
    Tensor out = Tensor::zeros_complex({n_bins, h, w});
    for (int64_t b = 0; b < n_bins; ++b)
      for (int64_t p = 0; p < h * w; ++p) {
        std::complex<double> acc(0.0, 0.0);
        for (int64_t k = 0; k < rank; ++k)
          acc += u.value.c(p * rank + k) * v.value.c(k * n_bins + b);
        out.set_c(b * h * w + p, acc);
      }
    return out;
  }
};

inline LowRankModel init_lowrank(int64_t h, int64_t w, int64_t rank,
                                 int64_t n_bins, uint64_t seed) {
  if (rank < 1 || rank > n_bins)
    throw ConfigError("lowrank: rank must be in [1, n_bins]");
  LowRankModel m;
  m.h = h;
  m.w = w;
  m.rank = rank;
  m.n_bins = n_bins;
  m.u = Parameter("lowrank.u", Tensor::zeros_complex({h * w, rank}));
  m.v = Parameter("lowrank.v", Tensor::zeros_complex({rank, n_bins}));
  Rng rng(seed);
  Rng ru = rng.substream("lowrank.u");
  Rng rv = rng.substream("lowrank.v");
  ru.fill_normal(m.u.value, 1.0 / std::sqrt(static_cast<double>(rank)));
  rv.fill_normal(m.v.value, 1.0 / std::sqrt(static_cast<double>(n_bins)));
  return m;
}

// Joint factor fit against the per-bin residual power, one bin per step.
inline LowRankModel fit_lowrank(const KSpaceDataset& ds,
                                const BinAssignment& bins, const CoilSet& coils,
                                int64_t rank, const TrainOptions& opt,
                                TrainTrace* trace = nullptr) {
  int64_t h = coils.h(), w = coils.w(), nb = bins.n_bins;
  LowRankModel m = init_lowrank(h, w, rank, nb, opt.seed);

  std::vector<BinNormalEquations> ne;
  ne.reserve(static_cast<size_t>(nb));
  for (int64_t b = 0; b < nb; ++b)
    ne.emplace_back(collect_bin(ds, bins, b), coils);

  Adam adam({.lr = opt.lr});
  adam.attach(&m.u);
  adam.attach(&m.v);

  detail::PlateauWatch watch(opt.plateau_rel, opt.plateau_steps, nb);
  int64_t steps = 0;
  bool early = false;
  std::vector<double> epoch_loss;
  std::vector<double> bin_loss(static_cast<size_t>(nb), 0.0);

  for (int64_t e = 0; e < opt.epochs && !early; ++e) {
    double sum = 0.0;
    for (int64_t b = 0; b < nb; ++b) {
      Graph g;
      Var rho = column_mix(g.leaf(m.u), g.leaf(m.v), b, h, w);
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
    // Re-evaluate the data term at the final iterate so the reported bin
    // losses all describe the same parameters.
    for (int64_t b = 0; b < nb; ++b) {
      Tensor rho = Tensor::zeros_complex({h, w});
      for (int64_t p = 0; p < h * w; ++p) {
        std::complex<double> acc(0.0, 0.0);
        for (int64_t k = 0; k < rank; ++k)
          acc += m.u.value.c(p * rank + k) * m.v.value.c(k * nb + b);
        rho.set_c(p, acc);
      }
      bin_loss[static_cast<size_t>(b)] = ne[static_cast<size_t>(b)].loss(rho);
    }
    trace->epoch_loss = std::move(epoch_loss);
    trace->final_bin_loss = std::move(bin_loss);
    trace->steps = steps;
    trace->stopped_early = early;
  }
  return m;
}

}  // namespace dfmr
