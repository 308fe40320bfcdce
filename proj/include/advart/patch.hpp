#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "advart/box.hpp"
#include "advart/error.hpp"
#include "advart/image.hpp"
#include "advart/rng.hpp"
#include "advart/tensor.hpp"

namespace advart {

// Learnable S x S x 3 pixel field together with the target artwork it is
// pulled towards, both stored CHW in [0,1].
struct PatchCanvas {
  int size = 0;
  std::vector<double> pixels;
  std::vector<double> target;

  Tensor target_tensor() const { return Tensor::from({3, size, size}, target); }
};

enum class PatchInit { FromTarget, UniformRandom };

inline PatchCanvas init_patch(const ImageRGB& target, int size, PatchInit mode,
                              std::uint64_t seed = 0) {
  require(size >= 16, "init_patch: patch size must be >= 16, got " + std::to_string(size));
  PatchCanvas canvas;
  canvas.size = size;
  canvas.target = image_to_chw(resize_bilinear(target, size, size));
  if (mode == PatchInit::FromTarget) {
    canvas.pixels = canvas.target;
  } else {
    Rng rng = Rng::derive(seed, {0x70617463ULL});
    canvas.pixels.resize(canvas.target.size());
    for (auto& v : canvas.pixels) v = rng.uniform01();
  }
  return canvas;
}

// Which physical-world transformations the patch transformer samples.
// Ranges default to the attack's nominal values; they can only be narrowed.
struct EotConfig {
  bool scale = true;
  double scale_lo = 0.8, scale_hi = 1.2;
  bool rotation = true;
  double rotation_max_deg = 20.0;
  bool noise = true;
  double noise_amp = 0.1;
  bool contrast = true;
  double contrast_lo = 0.8, contrast_hi = 1.2;
  bool brightness = true;
  double brightness_amp = 0.1;

  static EotConfig none() {
    EotConfig c;
    c.scale = c.rotation = c.noise = c.contrast = c.brightness = false;
    return c;
  }
  static EotConfig all() { return EotConfig{}; }
};

// One sampled transformation. Identity values mean "component disabled".
struct TransformParams {
  double scale_jitter = 1.0;
  double angle_deg = 0.0;
  std::uint64_t noise_seed = 0;
  double noise_amp = 0.0;
  double contrast = 1.0;
  double brightness = 0.0;
  double anchor_dx = 0.0, anchor_dy = 0.0;  // placement offset, box-center units
};

inline TransformParams sample_transform(Rng& rng, const EotConfig& cfg) {
  TransformParams p;
  if (cfg.scale) p.scale_jitter = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  if (cfg.rotation) p.angle_deg = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg);
  if (cfg.noise) {
    p.noise_seed = rng.next_u64();
    p.noise_amp = cfg.noise_amp;
  }
  if (cfg.contrast) p.contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
  if (cfg.brightness) p.brightness = rng.uniform(-cfg.brightness_amp, cfg.brightness_amp);
  return p;
}

struct PlacedPatch {
  Tensor warped;  // (3,H,W), zero outside the patch footprint
  Tensor mask;    // (3,H,W) in [0,1], bilinear coverage of the footprint
};

// Scales the patch to side = ratio * sqrt(box pixel area) * scale_jitter,
// rotates it about the box center and renders it (plus its coverage mask)
// onto a full-image canvas. Both come out of the same differentiable warp,
// so gradients reach the patch pixels.
inline PlacedPatch place_patch(const Tensor& patch, const TransformParams& tp,
                               const BoundingBox& box, int img_h, int img_w, double ratio) {
  const auto& sh = patch.shape();
  require(sh.size() == 3 && sh[1] == sh[2],
          "place_patch: patch must be a square CHW tensor, got " + shape_str(sh));
  const int s = sh[1];
  const double box_area_px = box.w * box.h * img_w * img_h;
  require(box_area_px > 0.0, "place_patch: degenerate box");
  const double side = ratio * std::sqrt(box_area_px) * tp.scale_jitter;
  require(side > 1.0, "place_patch: patch footprint smaller than one pixel");
  const double scale = side / s;
  const double theta = tp.angle_deg * 3.14159265358979323846 / 180.0;
  const double ca = std::cos(theta) * scale, sa = std::sin(theta) * scale;
  // pixel-center coords of the box center
  const double bx = (box.cx + tp.anchor_dx * box.w) * img_w - 0.5;
  const double by = (box.cy + tp.anchor_dy * box.h) * img_h - 0.5;
  const double half = (s - 1) / 2.0;
  // src -> image: rotate/scale about the patch center, then translate
  const std::array<double, 6> affine = {ca, -sa, bx - (ca * half - sa * half),
                                        sa, ca,  by - (sa * half + ca * half)};

  // reject placements whose footprint misses the image entirely
  double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30;
  for (double py : {-0.5, s - 0.5})
    for (double px : {-0.5, s - 0.5}) {
      double x = affine[0] * px + affine[1] * py + affine[2];
      double y = affine[3] * px + affine[4] * py + affine[5];
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
  if (max_x < -0.5 || min_x > img_w - 0.5 || max_y < -0.5 || min_y > img_h - 0.5)
    fail("place_patch: patch support fully off-image for box (cx=" + std::to_string(box.cx) +
         ", cy=" + std::to_string(box.cy) + ")");

  PlacedPatch out;
  out.warped = bilinear_warp(patch, affine, img_h, img_w);
  out.mask = bilinear_warp(Tensor::full({3, s, s}, 1.0), affine, img_h, img_w);
  return out;
}

namespace detail {

// per-pixel photometric noise, uniform in [-amp, amp], counter-based
inline double pixel_noise(std::uint64_t seed, std::int64_t flat_index, double amp) {
  std::uint64_t h = mix64(seed ^ (0x6e6f6973ULL + static_cast<std::uint64_t>(flat_index) *
                                                      0x9e3779b97f4a7c15ULL));
  double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return amp * (2.0 * u - 1.0);
}

}  // namespace detail

// Photometric jitter: out = clamp(in*contrast + brightness + noise, 0, 1),
// with the additive terms confined to the mask support so pixels the patch
// does not cover stay zero. One fused graph node.
inline Tensor color_jitter(const Tensor& warped, const Tensor& mask, const TransformParams& tp) {
  require(warped.shape() == mask.shape(),
          "color_jitter: warped/mask shape mismatch (" + shape_str(warped.shape()) + " vs " +
              shape_str(mask.shape()) + ")");
  const std::int64_t n = warped.size();
  const double contrast = tp.contrast, brightness = tp.brightness, amp = tp.noise_amp;
  const std::uint64_t seed = tp.noise_seed;
  auto mk = mask.shared_values();
  std::vector<double> out(static_cast<std::size_t>(n));
  std::vector<double> pre(static_cast<std::size_t>(n));  // pre-clamp, for the subgradient
  const double* wv = warped.data();
  const double* mv = mk->data();
  for (std::int64_t i = 0; i < n; ++i) {
    double noise = amp != 0.0 ? detail::pixel_noise(seed, i, amp) : 0.0;
    double v = wv[i] * contrast + mv[i] * (brightness + noise);
    pre[static_cast<std::size_t>(i)] = v;
    out[static_cast<std::size_t>(i)] = std::min(1.0, std::max(0.0, v));
  }
  if (!detail::tracked(warped)) return Tensor::from(warped.shape(), std::move(out));
  auto pre_keep = std::make_shared<const std::vector<double>>(std::move(pre));
  return warped.graph()->record(
      warped.shape(), std::move(out), {warped.node()},
      [n, contrast, pre_keep](Graph& gr, int self, const std::vector<int>& par) {
        const auto& go = gr.grad_of(self);
        auto& gw = gr.accum(par[0], n);
        const double* pv = pre_keep->data();
        for (std::int64_t i = 0; i < n; ++i) {
          if (pv[i] >= 0.0 && pv[i] <= 1.0)
            gw[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * contrast;
        }
      });
}

// Patch compositing: out = (1 - m) * image + m * patch, elementwise. One
// fused graph node; differentiable w.r.t. both image and patch inputs.
inline Tensor apply_patch(const Tensor& image, const Tensor& warped, const Tensor& mask) {
  require(image.shape() == warped.shape() && image.shape() == mask.shape(),
          "apply_patch: shape mismatch (" + shape_str(image.shape()) + ", " +
              shape_str(warped.shape()) + ", " + shape_str(mask.shape()) + ")");
  const std::int64_t n = image.size();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* iv = image.data();
  const double* pv = warped.data();
  const double* mv = mask.data();
  for (std::int64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = (1.0 - mv[i]) * iv[i] + mv[i] * pv[i];

  Graph* g = detail::common_graph(image, warped);
  bool ti = detail::tracked(image), tp = detail::tracked(warped);
  if (!g || (!ti && !tp)) return Tensor::from(image.shape(), std::move(out));
  std::vector<int> parents;
  int i_at = -1, p_at = -1;
  if (ti) { i_at = static_cast<int>(parents.size()); parents.push_back(image.node()); }
  if (tp) { p_at = static_cast<int>(parents.size()); parents.push_back(warped.node()); }
  auto mk = mask.shared_values();
  return g->record(
      image.shape(), std::move(out), std::move(parents),
      [n, i_at, p_at, mk](Graph& gr, int self, const std::vector<int>& par) {
        const auto& go = gr.grad_of(self);
        const double* mv = mk->data();
        if (i_at >= 0) {
          auto& gi = gr.accum(par[static_cast<std::size_t>(i_at)], n);
          for (std::int64_t i = 0; i < n; ++i)
            gi[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * (1.0 - mv[i]);
        }
        if (p_at >= 0) {
          auto& gp = gr.accum(par[static_cast<std::size_t>(p_at)], n);
          for (std::int64_t i = 0; i < n; ++i)
            gp[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * mv[i];
        }
      });
}

// place -> jitter -> apply for every target-class box of a scene, in box order.
inline Tensor composite_scene(const Tensor& scene, const Tensor& patch,
                              const std::vector<BoundingBox>& boxes, int target_class,
                              double ratio, const std::vector<TransformParams>& transforms) {
  const auto& sh = scene.shape();
  Tensor current = scene;
  std::size_t t = 0;
  for (const auto& box : boxes) {
    if (box.class_id != target_class) continue;
    const TransformParams& tp =
        t < transforms.size() ? transforms[t] : TransformParams{};
    ++t;
    PlacedPatch placed = place_patch(patch, tp, box, sh[1], sh[2], ratio);
    Tensor jittered = color_jitter(placed.warped, placed.mask, tp);
    current = apply_patch(current, jittered, placed.mask);
  }
  return current;
}

}  // namespace advart
