#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "advart/binio.hpp"
#include "advart/box.hpp"
#include "advart/error.hpp"
#include "advart/rng.hpp"
#include "advart/tensor.hpp"

namespace advart {

inline constexpr const char* kDetectorMagic = "ADVART-DET v1\n";

// Single-scale, single-anchor grid detector. A stack of stride-2 3x3 convs
// (leaky-relu between them) maps the input to a G x G grid; each cell emits
// 4 box terms, 1 objectness logit and C class logits. Weights live in plain
// vectors and are wrapped as tensors per forward pass, so the model itself
// stays frozen unless a training loop explicitly asks for leaves.
struct GridDetector {
  struct Layer {
    int out_ch = 0, in_ch = 0, k = 3, stride = 2, pad = 1;
    bool leaky = true;
    std::vector<double> w, b;
  };

  int input_res = 160;
  int num_classes = 2;
  double anchor_w = 0.25, anchor_h = 0.5;
  std::vector<Layer> layers;

  int grid() const {
    int g = input_res;
    for (const auto& l : layers) g = (g + 2 * l.pad - l.k) / l.stride + 1;
    return g;
  }
  int out_channels() const { return 5 + num_classes; }

  // default stack: 3 -> 16 -> 32 -> 64 -> 64 -> 5+C
  static GridDetector make(Rng& rng, int input_res = 160, int num_classes = 2) {
    return make_custom(rng, {16, 32, 64, 64}, input_res, num_classes);
  }

  static GridDetector make_custom(Rng& rng, const std::vector<int>& hidden, int input_res,
                                  int num_classes) {
    GridDetector m;
    m.input_res = input_res;
    m.num_classes = num_classes;
    int in_ch = 3;
    std::vector<int> chans = hidden;
    chans.push_back(5 + num_classes);
    for (std::size_t i = 0; i < chans.size(); ++i) {
      Layer l;
      l.in_ch = in_ch;
      l.out_ch = chans[i];
      l.leaky = i + 1 < chans.size();
      const int fan_in = l.in_ch * l.k * l.k;
      const double bound = std::sqrt(2.0 / fan_in);  // kaiming-ish for leaky units
      l.w.resize(static_cast<std::size_t>(l.out_ch) * fan_in);
      for (auto& v : l.w) v = rng.uniform(-bound, bound);
      l.b.assign(static_cast<std::size_t>(l.out_ch), 0.0);
      if (!l.leaky) l.b[4] = -2.0;  // start detection head pessimistic on objectness
      m.layers.push_back(std::move(l));
      in_ch = chans[i];
    }
    require(m.grid() >= 1, "detector: input resolution too small for the conv stack");
    return m;
  }

  static GridDetector make_zero(int input_res = 160, int num_classes = 2) {
    Rng rng(0);
    GridDetector m = make(rng, input_res, num_classes);
    for (auto& l : m.layers) {
      std::fill(l.w.begin(), l.w.end(), 0.0);
      std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    return m;
  }
};

// Weight tensors for repeated forward passes. Frozen nets wrap the weights
// once as constants; training wraps them as graph leaves to receive grads.
struct NetTensors {
  std::vector<Tensor> w, b;

  static NetTensors frozen(const GridDetector& m) {
    NetTensors t;
    for (const auto& l : m.layers) {
      t.w.push_back(Tensor::from({l.out_ch, l.in_ch, l.k, l.k}, l.w));
      t.b.push_back(Tensor::from({l.out_ch}, l.b));
    }
    return t;
  }

  static NetTensors trainable(Graph& g, const GridDetector& m) {
    NetTensors t;
    for (const auto& l : m.layers) {
      t.w.push_back(g.leaf({l.out_ch, l.in_ch, l.k, l.k}, l.w));
      t.b.push_back(g.leaf({l.out_ch}, l.b));
    }
    return t;
  }
};

// Raw grid predictions for a batch, shape (N, 5+C, G, G). Graph-recorded
// whenever the input or the weights are, so gradients reach input pixels.
inline Tensor forward(const GridDetector& m, const NetTensors& net, const Tensor& images) {
  const auto& sh = images.shape();
  require(sh.size() == 4 && sh[1] == 3 && sh[2] == m.input_res && sh[3] == m.input_res,
          "forward: expected (N,3," + std::to_string(m.input_res) + "," +
              std::to_string(m.input_res) + ") input, got " + shape_str(sh));
  Tensor x = images;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    x = conv2d(x, net.w[i], &net.b[i], l.stride, l.pad, l.leaky);
  }
  return x;
}

inline Tensor forward(const GridDetector& m, const Tensor& images) {
  return forward(m, NetTensors::frozen(m), images);
}

// Per-image attack score: max over grid cells of
// sigmoid(objectness logit) * softmax(class logits)[target]. Differentiable.
inline Tensor extract_attack_scores(const GridDetector& m, const Tensor& raw, int image_index,
                                    int target_class) {
  require(target_class >= 0 && target_class < m.num_classes,
          "extract_attack_scores: target class " + std::to_string(target_class) +
              " out of range");
  const auto& sh = raw.shape();
  const int g = sh[2];
  Tensor obj = slice(raw, {image_index, 4, 0, 0}, {1, 1, g, g});
  Tensor cls = slice(raw, {image_index, 5, 0, 0}, {1, m.num_classes, g, g});
  Tensor probs = softmax_axis(cls, 1);
  Tensor target = slice(probs, {0, target_class, 0, 0}, {1, 1, g, g});
  return max_all(mul(sigmoid(obj), target));
}

inline std::vector<Tensor> extract_attack_scores(const GridDetector& m, const Tensor& raw,
                                                 int target_class) {
  std::vector<Tensor> out;
  for (int i = 0; i < raw.shape()[0]; ++i)
    out.push_back(extract_attack_scores(m, raw, i, target_class));
  return out;
}

struct Detection {
  BoundingBox box;
  double objectness = 0.0;
  std::vector<double> class_probs;
  double score = 0.0;  // objectness * class prob of box.class_id
};

namespace detail {

inline double sigmoid_d(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

}  // namespace detail

// All per-cell, per-class candidates for one image, before thresholding and
// NMS. Cell order is row-major, classes inner; index = (cell*C + class).
inline std::vector<Detection> decode_candidates(const GridDetector& m, const Tensor& raw,
                                                int image_index) {
  const auto& sh = raw.shape();
  require(sh.size() == 4 && sh[1] == m.out_channels() && sh[2] == sh[3],
          "decode: raw predictions have unexpected shape " + shape_str(sh));
  const int g = sh[2];
  const int C = m.num_classes;
  const double* p = raw.data();
  const std::int64_t plane = static_cast<std::int64_t>(g) * g;
  const std::int64_t img_off = static_cast<std::int64_t>(image_index) * m.out_channels() * plane;
  std::vector<Detection> out;
  out.reserve(static_cast<std::size_t>(plane) * C);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      const std::int64_t cell = static_cast<std::int64_t>(gy) * g + gx;
      auto ch = [&](int c) { return p[img_off + c * plane + cell]; };
      const double bx = (gx + detail::sigmoid_d(ch(0))) / g;
      const double by = (gy + detail::sigmoid_d(ch(1))) / g;
      const double bw = m.anchor_w * std::exp(ch(2));
      const double bh = m.anchor_h * std::exp(ch(3));
      const double obj = detail::sigmoid_d(ch(4));
      // softmax over class logits
      double mx = ch(5);
      for (int c = 1; c < C; ++c) mx = std::max(mx, ch(5 + c));
      std::vector<double> probs(static_cast<std::size_t>(C));
      double s = 0.0;
      for (int c = 0; c < C; ++c) {
        probs[static_cast<std::size_t>(c)] = std::exp(ch(5 + c) - mx);
        s += probs[static_cast<std::size_t>(c)];
      }
      for (auto& v : probs) v /= s;
      for (int c = 0; c < C; ++c) {
        Detection d;
        d.box = BoundingBox{bx, by, bw, bh, c};
        d.objectness = obj;
        d.class_probs = probs;
        d.score = obj * probs[static_cast<std::size_t>(c)];
        out.push_back(std::move(d));
      }
    }
  return out;
}

inline double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
  const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
  const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Confidence filter + per-class greedy NMS by descending score (ties broken
// by candidate order, which is deterministic).
inline std::vector<Detection> decode_image(const GridDetector& m, const Tensor& raw,
                                           int image_index, double conf_threshold = 0.5,
                                           double nms_iou = 0.45) {
  require(conf_threshold > 0.0 && conf_threshold < 1.0 && nms_iou > 0.0 && nms_iou < 1.0,
          "decode: thresholds must lie in (0,1)");
  auto cands = decode_candidates(m, raw, image_index);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (cands[i].score >= conf_threshold) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cands[a].score > cands[b].score;
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (k.box.class_id == cands[idx].box.class_id &&
          box_iou(k.box, cands[idx].box) >= nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(cands[idx]);
  }
  return kept;
}

inline std::vector<std::vector<Detection>> decode(const GridDetector& m, const Tensor& raw,
                                                  double conf_threshold = 0.5,
                                                  double nms_iou = 0.45) {
  std::vector<std::vector<Detection>> out;
  for (int i = 0; i < raw.shape()[0]; ++i)
    out.push_back(decode_image(m, raw, i, conf_threshold, nms_iou));
  return out;
}

// --- checkpoint container ---

inline void save_detector(const GridDetector& m, const std::string& path) {
  BinWriter wr(path);
  wr.magic(kDetectorMagic);
  wr.u32(static_cast<std::uint32_t>(m.layers.size()));
  wr.u32(static_cast<std::uint32_t>(m.input_res));
  wr.u32(static_cast<std::uint32_t>(m.num_classes));
  wr.f64(m.anchor_w);
  wr.f64(m.anchor_h);
  for (const auto& l : m.layers) {
    wr.u32(static_cast<std::uint32_t>(l.out_ch));
    wr.u32(static_cast<std::uint32_t>(l.in_ch));
    wr.u32(static_cast<std::uint32_t>(l.k));
    wr.u32(static_cast<std::uint32_t>(l.stride));
    wr.u32(static_cast<std::uint32_t>(l.pad));
    wr.u8(l.leaky ? 1 : 0);
  }
  for (const auto& l : m.layers) {
    wr.f64_array(l.w);
    wr.f64_array(l.b);
  }
}

inline GridDetector load_detector(const std::string& path) {
  BinReader rd(path);
  rd.expect_magic(kDetectorMagic);
  GridDetector m;
  const std::uint32_t n_layers = rd.u32();
  require(n_layers >= 1 && n_layers <= 64, path + ": implausible layer count");
  m.input_res = static_cast<int>(rd.u32());
  m.num_classes = static_cast<int>(rd.u32());
  m.anchor_w = rd.f64();
  m.anchor_h = rd.f64();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    GridDetector::Layer l;
    l.out_ch = static_cast<int>(rd.u32());
    l.in_ch = static_cast<int>(rd.u32());
    l.k = static_cast<int>(rd.u32());
    l.stride = static_cast<int>(rd.u32());
    l.pad = static_cast<int>(rd.u32());
    l.leaky = rd.u8() != 0;
    m.layers.push_back(std::move(l));
  }
  for (auto& l : m.layers) {
    l.w = rd.f64_array(static_cast<std::size_t>(l.out_ch) * l.in_ch * l.k * l.k);
    l.b = rd.f64_array(static_cast<std::size_t>(l.out_ch));
  }
  return m;
}

}  // namespace advart
