#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "advart/binio.hpp"
#include "advart/error.hpp"

namespace advart {

// Standard Adam with bias correction. The step count and moments are part of
// crafting checkpoints, so the whole state round-trips through BinWriter.
class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    require(params.size() == m_.size() && grad.size() == m_.size(),
            "adam: parameter/gradient size mismatch");
    for (double g : grad)
      require(std::isfinite(g), "adam: non-finite gradient");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::uint64_t steps() const { return t_; }

  void serialize(BinWriter& wr) const {
    wr.u64(t_);
    wr.f64(lr_);
    wr.f64(beta1_);
    wr.f64(beta2_);
    wr.f64(eps_);
    wr.u64(m_.size());
    wr.f64_array(m_);
    wr.f64_array(v_);
  }

  static AdamState deserialize(BinReader& rd) {
    AdamState s;
    s.t_ = rd.u64();
    s.lr_ = rd.f64();
    s.beta1_ = rd.f64();
    s.beta2_ = rd.f64();
    s.eps_ = rd.f64();
    const std::size_t n = rd.u64();
    s.m_ = rd.f64_array(n);
    s.v_ = rd.f64_array(n);
    return s;
  }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

// Adam update followed by the [0,1] pixel clamp the patch lives under.
inline void adam_step(AdamState& state, std::vector<double>& patch_pixels,
                      const std::vector<double>& grad) {
  state.step(patch_pixels, grad);
  for (auto& v : patch_pixels) v = std::min(1.0, std::max(0.0, v));
}

}  // namespace advart
