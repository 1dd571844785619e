#pragma once
// Adam with bias-corrected first and second moments. Complex parameters are
// updated per stored scalar (re and im independently), the usual convention
// when gradients are packed as (dL/dRe, dL/dIm).

#include <cmath>
#include <cstdint>
#include <vector>

#include "dfmr/autodiff.hpp"
#include "dfmr/errors.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m, v;  // first/second moment, same layout as the parameter
  int64_t step = 0;
};

inline void adam_step(Parameter& p, AdamState& st, const AdamConfig& cfg) {
  if (!st.m.same_layout(p.value)) {
    st.m = Tensor(p.value.dtype, p.value.shape);
    st.v = Tensor(p.value.dtype, p.value.shape);
    st.step = 0;
  }
  st.step += 1;
  double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (size_t k = 0; k < p.value.data.size(); ++k) {
    double g = p.grad.data[k];
    if (!std::isfinite(g))
      throw NumericError("adam_step: non-finite gradient in parameter '" +
                         p.name + "'");
    double m = cfg.beta1 * st.m.data[k] + (1.0 - cfg.beta1) * g;
    double v = cfg.beta2 * st.v.data[k] + (1.0 - cfg.beta2) * g * g;
    st.m.data[k] = m;
    st.v.data[k] = v;
    p.value.data[k] -= cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
  }
}

// Convenience wrapper stepping a fixed parameter list in registration order.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void attach(Parameter* p) {
    params_.push_back(p);
    states_.emplace_back();
  }

  void attach_all(std::vector<Parameter*> ps) {
    for (Parameter* p : ps) attach(p);
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i)
      adam_step(*params_[i], states_[i], cfg_);
  }

  AdamConfig& config() { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Parameter*> params_;
  std::vector<AdamState> states_;
};

}  // namespace dfmr
