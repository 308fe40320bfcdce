#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "advart/adam.hpp"
#include "advart/dataset.hpp"
#include "advart/detector.hpp"
#include "advart/error.hpp"
#include "advart/eval.hpp"
#include "advart/rng.hpp"
#include "advart/tensor.hpp"

namespace advart {

struct TrainOptions {
  int epochs = 20;
  double lr = 1e-3;
  int batch = 16;
  std::uint64_t seed = 7;
  double target_map = 0.90;     // required held-out clean mAP at IoU 0.5
  double lambda_box = 5.0;
  double lambda_cls = 1.0;
  double lambda_noobj = 0.5;
  int input_res = 160;
  int num_classes = 2;
};

struct TrainCurvePoint {
  int epoch = 0;
  double train_loss = 0.0;
  double val_map = 0.0;  // percent
};

struct TrainResult {
  GridDetector model;
  std::vector<TrainCurvePoint> curve;
  double final_val_map = 0.0;  // percent
};

class TrainError : public Error {
 public:
  TrainError(const std::string& what, std::vector<TrainCurvePoint> curve)
      : Error(what), curve(std::move(curve)) {}
  std::vector<TrainCurvePoint> curve;
};

namespace detail {

inline std::vector<double> flatten_params(const GridDetector& m) {
  std::vector<double> out;
  for (const auto& l : m.layers) {
    out.insert(out.end(), l.w.begin(), l.w.end());
    out.insert(out.end(), l.b.begin(), l.b.end());
  }
  return out;
}

inline void unflatten_params(GridDetector& m, const std::vector<double>& flat) {
  std::size_t off = 0;
  for (auto& l : m.layers) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + l.w.size()), l.w.begin());
    off += l.w.size();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + l.b.size()), l.b.begin());
    off += l.b.size();
  }
}

// grid-cell targets for one batch, materialized as (B,1,G,G) masks/values
struct BatchTargets {
  std::vector<double> pos;                 // 1 at responsible cells
  std::vector<double> tx, ty, tw, th;      // box regression targets at pos cells
  std::vector<std::vector<double>> onehot; // per class, 1 at pos cells of that class
  int n_pos = 0;
};

inline BatchTargets make_targets(const GridDetector& m, const std::vector<const Scene*>& batch) {
  const int g = m.grid();
  const std::size_t plane = static_cast<std::size_t>(g) * g;
  const std::size_t n = batch.size() * plane;
  BatchTargets t;
  t.pos.assign(n, 0.0);
  t.tx.assign(n, 0.0);
  t.ty.assign(n, 0.0);
  t.tw.assign(n, 0.0);
  t.th.assign(n, 0.0);
  t.onehot.assign(static_cast<std::size_t>(m.num_classes), std::vector<double>(n, 0.0));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (const auto& box : batch[b]->boxes) {
      const int gx = std::min(g - 1, std::max(0, static_cast<int>(box.cx * g)));
      const int gy = std::min(g - 1, std::max(0, static_cast<int>(box.cy * g)));
      const std::size_t at = b * plane + static_cast<std::size_t>(gy) * g + gx;
      if (t.pos[at] == 0.0) ++t.n_pos;
      t.pos[at] = 1.0;
      t.tx[at] = box.cx * g - gx;
      t.ty[at] = box.cy * g - gy;
      t.tw[at] = std::log(box.w / m.anchor_w);
      t.th[at] = std::log(box.h / m.anchor_h);
      for (auto& oh : t.onehot) std::fill_n(&oh[at], 1, 0.0);
      t.onehot[static_cast<std::size_t>(box.class_id)][at] = 1.0;
    }
  }
  return t;
}

}  // namespace detail

// Composed batch loss: objectness BCE over all cells (down-weighted
// negatives), plus box L2 and class cross-entropy on responsible cells.
inline Tensor detector_train_loss(const GridDetector& m, const Tensor& raw,
                                  const detail::BatchTargets& t, const TrainOptions& opt) {
  const auto& sh = raw.shape();
  const int n = sh[0], g = sh[2];
  const Shape mshape{n, 1, g, g};
  const double cells = static_cast<double>(n) * g * g;
  const double n_pos = std::max(1, t.n_pos);
  Tensor pos = Tensor::from(mshape, t.pos);
  Tensor neg = sub(1.0, pos);

  Tensor p_obj = sigmoid(slice(raw, {0, 4, 0, 0}, {n, 1, g, g}));
  Tensor bce = mul(add(sum(mul(pos, log(add(p_obj, 1e-12)))),
                       mul(sum(mul(neg, log(add(sub(1.0, p_obj), 1e-12)))), opt.lambda_noobj)),
                   -1.0 / cells);

  Tensor px = sigmoid(slice(raw, {0, 0, 0, 0}, {n, 1, g, g}));
  Tensor py = sigmoid(slice(raw, {0, 1, 0, 0}, {n, 1, g, g}));
  Tensor pw = slice(raw, {0, 2, 0, 0}, {n, 1, g, g});
  Tensor ph = slice(raw, {0, 3, 0, 0}, {n, 1, g, g});
  Tensor box_loss = sum(mul(pos, square(sub(px, Tensor::from(mshape, t.tx)))));
  box_loss = add(box_loss, sum(mul(pos, square(sub(py, Tensor::from(mshape, t.ty))))));
  box_loss = add(box_loss, sum(mul(pos, square(sub(pw, Tensor::from(mshape, t.tw))))));
  box_loss = add(box_loss, sum(mul(pos, square(sub(ph, Tensor::from(mshape, t.th))))));
  box_loss = mul(box_loss, 1.0 / n_pos);

  Tensor probs = softmax_axis(slice(raw, {0, 5, 0, 0}, {n, m.num_classes, g, g}), 1);
  Tensor ce = Tensor::scalar(0.0);
  for (int c = 0; c < m.num_classes; ++c) {
    Tensor pc = slice(probs, {0, c, 0, 0}, {n, 1, g, g});
    Tensor oh = Tensor::from(mshape, t.onehot[static_cast<std::size_t>(c)]);
    ce = add(ce, sum(mul(oh, log(add(pc, 1e-12)))));
  }
  ce = mul(ce, -1.0 / n_pos);

  return add(add(bce, mul(box_loss, opt.lambda_box)), mul(ce, opt.lambda_cls));
}

// Clean mAP (percent) of the model against annotated person boxes.
inline double clean_map_vs_annotations(const GridDetector& m, const std::vector<Scene>& scenes,
                                       int target_class = kPersonClass) {
  ToySceneDetector det(m);
  std::vector<ImageRGB> images;
  for (const auto& s : scenes) images.push_back(s.image);
  auto dets = det.detect(images);
  std::vector<std::vector<BoundingBox>> truths(scenes.size());
  std::vector<DetRecord> candidates;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& b : scenes[i].boxes)
      if (b.class_id == target_class) truths[i].push_back(b);
    for (const auto& d : dets[i])
      if (d.box.class_id == target_class)
        candidates.push_back(DetRecord{static_cast<int>(i), d.score, d.box});
  }
  return 100.0 * compute_ap(truths, candidates).ap;
}

// Trains the toy grid detector and freezes it. Fails (with the training
// curve attached) if the held-out clean mAP target is not reached.
inline TrainResult train_toy_detector(const std::vector<Scene>& scenes, TrainOptions opt = {}) {
  std::vector<const Scene*> train, val;
  for (const auto& s : scenes) (s.split == "val" ? val : train).push_back(&s);
  require(!train.empty() && !val.empty(),
          "train_toy_detector: dataset needs both train and val splits");
  for (const auto* s : train)
    require(s->image.height == opt.input_res && s->image.width == opt.input_res,
            "train_toy_detector: scenes must match the input resolution " +
                std::to_string(opt.input_res));

  Rng init_rng = Rng::derive(opt.seed, {0x696e6974ULL});
  GridDetector model = GridDetector::make(init_rng, opt.input_res, opt.num_classes);
  std::vector<double> params = detail::flatten_params(model);
  AdamState adam(params.size(), opt.lr);

  // cache CHW copies once
  std::vector<std::vector<double>> chw(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) chw[i] = image_to_chw(train[i]->image);

  std::vector<Scene> val_scenes;
  for (const auto* s : val) val_scenes.push_back(*s);

  TrainResult result;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t plane = static_cast<std::size_t>(opt.input_res) * opt.input_res * 3;
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(opt.seed, {0x73687566ULL, static_cast<std::uint64_t>(epoch)});
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(opt.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch));
      const int bsz = static_cast<int>(end - start);
      std::vector<double> batch_px(static_cast<std::size_t>(bsz) * plane);
      std::vector<const Scene*> batch_scenes;
      for (std::size_t k = start; k < end; ++k) {
        std::copy(chw[order[k]].begin(), chw[order[k]].end(),
                  batch_px.begin() + static_cast<std::ptrdiff_t>((k - start) * plane));
        batch_scenes.push_back(train[order[k]]);
      }
      Graph g;
      NetTensors net = NetTensors::trainable(g, model);
      Tensor images = Tensor::from({bsz, 3, opt.input_res, opt.input_res}, std::move(batch_px));
      Tensor raw = forward(model, net, images);
      auto targets = detail::make_targets(model, batch_scenes);
      Tensor loss = detector_train_loss(model, raw, targets, opt);
      g.backward(loss);

      std::vector<double> flat_grad;
      flat_grad.reserve(params.size());
      for (std::size_t li = 0; li < net.w.size(); ++li) {
        auto gw = g.grad(net.w[li]);
        auto gb = g.grad(net.b[li]);
        flat_grad.insert(flat_grad.end(), gw.begin(), gw.end());
        flat_grad.insert(flat_grad.end(), gb.begin(), gb.end());
      }
      adam.step(params, flat_grad);
      detail::unflatten_params(model, params);
      loss_sum += loss.item();
      ++n_batches;
    }
    const double val_map = clean_map_vs_annotations(model, val_scenes);
    result.curve.push_back(TrainCurvePoint{epoch, loss_sum / n_batches, val_map});
  }

  result.final_val_map = result.curve.back().val_map;
  result.model = std::move(model);
  if (result.final_val_map < 100.0 * opt.target_map) {
    std::ostringstream os;
    os << "train_toy_detector: val mAP " << result.final_val_map << "% below target "
       << 100.0 * opt.target_map << "% after " << opt.epochs << " epochs; curve:";
    for (const auto& p : result.curve)
      os << " (" << p.epoch << ", loss " << p.train_loss << ", mAP " << p.val_map << "%)";
    throw TrainError(os.str(), result.curve);
  }
  return result;
}

}  // namespace advart
