#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "advart/error.hpp"
#include "advart/tensor.hpp"

namespace advart {

enum class SimMetric { Mse, Cosine };

inline const char* sim_metric_name(SimMetric m) {
  return m == SimMetric::Mse ? "mse" : "cosine";
}

inline SimMetric sim_metric_from(const std::string& s) {
  if (s == "mse") return SimMetric::Mse;
  if (s == "cosine") return SimMetric::Cosine;
  fail("unknown similarity metric '" + s + "' (expected mse or cosine)");
}

struct LossWeights {
  double alpha = 1.0;
  double beta = 8.0;
  double gamma = 0.5;
  SimMetric sim_metric = SimMetric::Cosine;
};

struct LossBreakdown {
  double det = 0.0;
  double sim_raw = 0.0;
  double sim_effective = 0.0;
  double tv = 0.0;
  double total = 0.0;
};

// Mean over the batch of per-image attack scores (each already the max of
// objectness*class over the image's detections).
inline Tensor detection_loss(const std::vector<Tensor>& attack_scores) {
  require(!attack_scores.empty(), "detection_loss: empty batch");
  Tensor acc = attack_scores[0];
  for (std::size_t i = 1; i < attack_scores.size(); ++i) acc = add(acc, attack_scores[i]);
  return mul(acc, 1.0 / static_cast<double>(attack_scores.size()));
}

// (1/n) * sum((P - N)^2)
inline Tensor similarity_mse(const Tensor& patch, const Tensor& target) {
  require(patch.shape() == target.shape(),
          "similarity_mse: shape mismatch (" + shape_str(patch.shape()) + " vs " +
              shape_str(target.shape()) + ")");
  return mean(square(sub(patch, target)));
}

// -dot(P,N)/(|P||N|), flattened over all elements; in [-1,0] for images.
inline Tensor similarity_cosine(const Tensor& patch, const Tensor& target) {
  require(patch.shape() == target.shape(),
          "similarity_cosine: shape mismatch (" + shape_str(patch.shape()) + " vs " +
              shape_str(target.shape()) + ")");
  Tensor dot = sum(mul(patch, target));
  Tensor np = sqrt(sum(square(patch)));
  Tensor nt = sqrt(sum(square(target)));
  require(np.item() > 1e-8 && nt.item() > 1e-8,
          "similarity_cosine: near-zero norm (|P|=" + std::to_string(np.item()) +
              ", |N|=" + std::to_string(nt.item()) + ")");
  return mul(div(dot, mul(np, nt)), -1.0);
}

inline Tensor similarity_loss(SimMetric metric, const Tensor& patch, const Tensor& target) {
  return metric == SimMetric::Mse ? similarity_mse(patch, target)
                                  : similarity_cosine(patch, target);
}

// Total variation, sum over channels of sqrt(dv^2 + dh^2 + eps) per pixel;
// differences missing at the last row/column contribute zero.
inline Tensor tv_loss(const Tensor& patch) {
  const auto& sh = patch.shape();
  require(sh.size() == 3 && sh[1] >= 2 && sh[2] >= 2,
          "tv_loss: patch must be CHW and at least 2x2, got " + shape_str(sh));
  const int c = sh[0], h = sh[1], w = sh[2];
  Tensor dv = sub(slice(patch, {0, 1, 0}, {c, h - 1, w}), slice(patch, {0, 0, 0}, {c, h - 1, w}));
  Tensor dh = sub(slice(patch, {0, 0, 1}, {c, h, w - 1}), slice(patch, {0, 0, 0}, {c, h, w - 1}));
  Tensor dv2 = pad_zero(square(dv), {0, 0, 0}, {0, 1, 0});
  Tensor dh2 = pad_zero(square(dh), {0, 0, 0}, {0, 0, 1});
  return sum(sqrt(add(add(dv2, dh2), 1e-8)));
}

// Sign-preserving square: the raw similarity term keeps a fixed sign per
// metric (mse >= 0, cosine <= 0), so sign(x)*x^2 reduces to +/- square.
inline Tensor sim_effective_node(const Tensor& sim_raw, SimMetric metric) {
  Tensor sq = square(sim_raw);
  return metric == SimMetric::Cosine ? mul(sq, -1.0) : sq;
}

inline double sim_effective_value(double sim_raw) {
  return (sim_raw < 0 ? -1.0 : 1.0) * sim_raw * sim_raw;
}

// total = alpha*det + beta*sign(sim)*sim^2 + gamma*tv
inline LossBreakdown total_loss(double det, double sim_raw, double tv, const LossWeights& w) {
  require(std::isfinite(det) && std::isfinite(sim_raw) && std::isfinite(tv),
          "total_loss: non-finite loss term");
  LossBreakdown b;
  b.det = det;
  b.sim_raw = sim_raw;
  b.sim_effective = sim_effective_value(sim_raw);
  b.tv = tv;
  b.total = w.alpha * det + w.beta * b.sim_effective + w.gamma * tv;
  return b;
}

// graph-side composition matching total_loss()
inline Tensor total_loss_node(const Tensor& det, const Tensor& sim_raw, const Tensor& tv,
                              const LossWeights& w) {
  Tensor t = mul(det, w.alpha);
  t = add(t, mul(sim_effective_node(sim_raw, w.sim_metric), w.beta));
  return add(t, mul(tv, w.gamma));
}

}  // namespace advart
