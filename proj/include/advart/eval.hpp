#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advart/box.hpp"
#include "advart/dataset.hpp"
#include "advart/detector.hpp"
#include "advart/error.hpp"
#include "advart/image.hpp"
#include "advart/patch.hpp"
#include "advart/rng.hpp"

namespace advart {

inline double iou(const BoundingBox& a, const BoundingBox& b) { return box_iou(a, b); }

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct EvalReport {
  double map_percent = 0.0;
  std::vector<PrPoint> pr;
  double asr_percent = 0.0;
  std::vector<int> per_scene_detections;
  std::optional<double> ssim;
};

// One scored candidate for AP computation.
struct DetRecord {
  int scene = 0;
  double score = 0.0;
  BoundingBox box;
};

struct ApResult {
  double ap = 0.0;  // in [0,1]
  std::vector<PrPoint> pr;
};

// Single-class average precision: candidates sorted by descending score are
// matched greedily to the highest-IoU unmatched truth of their scene
// (IoU >= threshold); AP is the all-point interpolated area under the
// precision-recall curve. Ties in score keep insertion order.
inline ApResult compute_ap(const std::vector<std::vector<BoundingBox>>& truths,
                           const std::vector<DetRecord>& detections, double iou_thresh = 0.5) {
  std::size_t total_gt = 0;
  for (const auto& t : truths) total_gt += t.size();
  require(total_gt > 0, "compute_ap: no ground-truth boxes");

  std::vector<std::size_t> order(detections.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score > detections[b].score;
  });

  std::vector<std::vector<char>> used(truths.size());
  for (std::size_t s = 0; s < truths.size(); ++s) used[s].assign(truths[s].size(), 0);

  ApResult res;
  std::size_t tp = 0, fp = 0;
  std::vector<char> is_tp(order.size(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const DetRecord& d = detections[order[k]];
    const auto& gts = truths[static_cast<std::size_t>(d.scene)];
    double best = 0.0;
    int best_j = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[static_cast<std::size_t>(d.scene)][j]) continue;
      double v = iou(d.box, gts[j]);
      if (v > best) {
        best = v;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0 && best >= iou_thresh) {
      used[static_cast<std::size_t>(d.scene)][static_cast<std::size_t>(best_j)] = 1;
      ++tp;
      is_tp[k] = 1;
    } else {
      ++fp;
    }
    res.pr.push_back(PrPoint{static_cast<double>(tp) / static_cast<double>(total_gt),
                             static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }

  // all-point interpolation: integrate max precision at recall >= r
  double ap = 0.0, max_prec = 0.0, prev_recall = 0.0;
  std::vector<double> interp(res.pr.size());
  for (std::size_t k = res.pr.size(); k > 0; --k) {
    max_prec = std::max(max_prec, res.pr[k - 1].precision);
    interp[k - 1] = max_prec;
  }
  for (std::size_t k = 0; k < res.pr.size(); ++k) {
    ap += (res.pr[k].recall - prev_recall) * interp[k];
    prev_recall = res.pr[k].recall;
  }
  res.ap = ap;
  return res;
}

// Source of detections for evaluation; implementations wrap the toy model or
// an external child-process detector.
class SceneDetector {
 public:
  virtual ~SceneDetector() = default;
  virtual std::vector<std::vector<Detection>> detect(const std::vector<ImageRGB>& images) = 0;
};

class ToySceneDetector : public SceneDetector {
 public:
  explicit ToySceneDetector(const GridDetector& model, double conf = 0.5, double nms = 0.45)
      : model_(model), net_(NetTensors::frozen(model)), conf_(conf), nms_(nms) {}

  std::vector<std::vector<Detection>> detect(const std::vector<ImageRGB>& images) override {
    std::vector<std::vector<Detection>> out;
    out.reserve(images.size());
    for (const auto& img : images) {
      const ImageRGB* use = &img;
      ImageRGB resized;
      if (img.height != model_.input_res || img.width != model_.input_res) {
        resized = resize_bilinear(img, model_.input_res, model_.input_res);
        use = &resized;
      }
      Tensor t = reshape(image_tensor(*use), {1, 3, model_.input_res, model_.input_res});
      Tensor raw = forward(model_, net_, t);
      out.push_back(decode_image(model_, raw, 0, conf_, nms_));
    }
    return out;
  }

  const GridDetector& model() const { return model_; }

 private:
  GridDetector model_;
  NetTensors net_;
  double conf_, nms_;
};

struct EvalOptions {
  double ratio = 0.3;
  double conf = 0.5;
  double nms = 0.45;
  double iou_thresh = 0.5;
  int target_class = kPersonClass;
  // when set, patch placement at eval time samples these transforms instead
  // of the identity transform
  std::optional<EotConfig> eval_eot;
  std::uint64_t eot_seed = 0;
};

namespace detail {

inline ImageRGB patched_image(const Scene& scene, const std::vector<BoundingBox>& target_boxes,
                              const PatchCanvas& patch, const EvalOptions& opt, int scene_idx) {
  Tensor scene_t = image_tensor(scene.image);
  Tensor patch_t = Tensor::from({3, patch.size, patch.size}, patch.pixels);
  std::vector<TransformParams> transforms;
  for (std::size_t b = 0; b < target_boxes.size(); ++b) {
    if (opt.eval_eot) {
      Rng rng = Rng::derive(opt.eot_seed,
                            {0x6576616cULL, static_cast<std::uint64_t>(scene_idx), b});
      transforms.push_back(sample_transform(rng, *opt.eval_eot));
    } else {
      transforms.push_back(TransformParams{});
    }
  }
  Tensor composite = composite_scene(scene_t, patch_t, target_boxes, opt.target_class,
                                     opt.ratio, transforms);
  return chw_to_image(composite.values(), scene.image.height, scene.image.width);
}

}  // namespace detail

// The evaluation protocol: the detector's detections on the clean scenes are
// the ground truth (so without a patch the mAP is 100% by construction); the
// patch is then applied at those truth boxes and the scenes re-detected.
inline EvalReport map_eval(SceneDetector& detector, const std::vector<Scene>& scenes,
                           const PatchCanvas* patch, const EvalOptions& opt = {}) {
  require(!scenes.empty(), "map_eval: empty dataset");
  std::vector<ImageRGB> clean;
  clean.reserve(scenes.size());
  for (const auto& s : scenes) clean.push_back(s.image);
  const auto clean_dets = detector.detect(clean);

  std::vector<std::vector<BoundingBox>> truths(scenes.size());
  std::size_t total_gt = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& d : clean_dets[i])
      if (d.box.class_id == opt.target_class) {
        truths[i].push_back(d.box);
        ++total_gt;
      }
  }
  require(total_gt > 0,
          "map_eval: detector produced no clean detections of the target class; "
          "the clean-reference protocol needs a trained detector");

  std::vector<std::vector<Detection>> cand_dets;
  if (patch) {
    std::vector<ImageRGB> patched;
    patched.reserve(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i)
      patched.push_back(detail::patched_image(scenes[i], truths[i], *patch, opt,
                                              static_cast<int>(i)));
    cand_dets = detector.detect(patched);
  } else {
    cand_dets = clean_dets;
  }

  EvalReport report;
  std::vector<DetRecord> candidates;
  report.per_scene_detections.assign(scenes.size(), 0);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& d : cand_dets[i]) {
      if (d.box.class_id != opt.target_class) continue;
      candidates.push_back(DetRecord{static_cast<int>(i), d.score, d.box});
      ++report.per_scene_detections[i];
    }
  }
  ApResult ap = compute_ap(truths, candidates, opt.iou_thresh);
  report.map_percent = 100.0 * ap.ap;
  report.pr = std::move(ap.pr);

  // ASR: truth boxes not matched by any candidate at the IoU threshold
  std::size_t matched = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& t : truths[i]) {
      bool hit = false;
      for (const auto& d : cand_dets[i]) {
        if (d.box.class_id == opt.target_class && iou(d.box, t) >= opt.iou_thresh) {
          hit = true;
          break;
        }
      }
      if (hit) ++matched;
    }
  }
  report.asr_percent =
      100.0 * (1.0 - static_cast<double>(matched) / static_cast<double>(total_gt));
  return report;
}

inline double asr(SceneDetector& detector, const std::vector<Scene>& scenes,
                  const PatchCanvas& patch, const EvalOptions& opt = {}) {
  return map_eval(detector, scenes, &patch, opt).asr_percent;
}

}  // namespace advart
