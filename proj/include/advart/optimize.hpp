#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "advart/adam.hpp"
#include "advart/binio.hpp"
#include "advart/dataset.hpp"
#include "advart/detector.hpp"
#include "advart/error.hpp"
#include "advart/eval.hpp"
#include "advart/losses.hpp"
#include "advart/patch.hpp"
#include "advart/rng.hpp"
#include "advart/tensor.hpp"

namespace advart {

inline constexpr const char* kPatchMagic = "ADVART-PATCH v1\n";

struct CraftConfig {
  std::uint64_t seed = 1;
  int iters = 1000;
  int batch = 8;
  double lr = 0.03;
  double ratio = 0.3;
  LossWeights weights;
  EotConfig eot;
  int target_class = kPersonClass;
  int snapshot_every = 100;     // 0 disables periodic snapshots
  int map_probe_every = 100;    // 0 disables mAP probes
  int probe_scenes = 32;
  int plateau_window = 50;      // halve lr after this many iters without a new best
  double lr_min = 1e-4;
  double stop_map_below = -1.0; // early-stop once a probe drops below; <0 disables
  std::string out_dir;          // empty: no artifacts written
};

inline std::uint64_t hash_craft_config(const CraftConfig& c) {
  auto fold_f = [](std::uint64_t h, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    return mix64(h ^ bits);
  };
  std::uint64_t h = mix64(c.seed);
  h = mix64(h ^ static_cast<std::uint64_t>(c.iters));
  h = mix64(h ^ static_cast<std::uint64_t>(c.batch));
  h = fold_f(h, c.lr);
  h = fold_f(h, c.ratio);
  h = fold_f(h, c.weights.alpha);
  h = fold_f(h, c.weights.beta);
  h = fold_f(h, c.weights.gamma);
  h = mix64(h ^ static_cast<std::uint64_t>(c.weights.sim_metric == SimMetric::Cosine ? 1 : 0));
  for (bool fl : {c.eot.scale, c.eot.rotation, c.eot.noise, c.eot.contrast, c.eot.brightness})
    h = mix64(h ^ static_cast<std::uint64_t>(fl ? 0x11 : 0x7));
  for (double v : {c.eot.scale_lo, c.eot.scale_hi, c.eot.rotation_max_deg, c.eot.noise_amp,
                   c.eot.contrast_lo, c.eot.contrast_hi, c.eot.brightness_amp})
    h = fold_f(h, v);
  h = mix64(h ^ static_cast<std::uint64_t>(c.target_class));
  return h;
}

struct HistoryRow {
  int iter = 0;
  LossBreakdown loss;
  double map_probe = 0.0;
  bool has_probe = false;
};

// Everything mutated by the crafting loop; serializes to ADVART-PATCH v1 so
// a run can resume bit-exactly.
struct CraftState {
  PatchCanvas patch;
  AdamState adam;
  int iter = 0;
  double best_total = std::numeric_limits<double>::infinity();
  int best_iter = 0;
};

struct CraftRun {
  CraftState state;
  std::vector<HistoryRow> history;  // rows produced by this call
};

// --- patch checkpoint container ---

struct PatchSnapshot {
  CraftState state;
  double ratio = 0.3;
  SimMetric metric = SimMetric::Cosine;
  std::uint64_t config_hash = 0;
};

inline void save_patch_bin(const std::string& path, const CraftState& state, double ratio,
                           SimMetric metric, std::uint64_t config_hash) {
  BinWriter wr(path);
  wr.magic(kPatchMagic);
  wr.u32(static_cast<std::uint32_t>(state.patch.size));
  wr.u32(3);
  wr.f64(ratio);
  wr.u8(metric == SimMetric::Cosine ? 1 : 0);
  wr.u64(config_hash);
  wr.u32(static_cast<std::uint32_t>(state.iter));
  wr.f64(state.best_total);
  wr.u32(static_cast<std::uint32_t>(state.best_iter));
  state.adam.serialize(wr);
  wr.f64_array(state.patch.pixels);
  wr.f64_array(state.patch.target);
}

inline PatchSnapshot load_patch_bin(const std::string& path) {
  BinReader rd(path);
  rd.expect_magic(kPatchMagic);
  PatchSnapshot snap;
  snap.state.patch.size = static_cast<int>(rd.u32());
  const std::uint32_t channels = rd.u32();
  require(channels == 3, path + ": unsupported channel count");
  snap.ratio = rd.f64();
  snap.metric = rd.u8() ? SimMetric::Cosine : SimMetric::Mse;
  snap.config_hash = rd.u64();
  snap.state.iter = static_cast<int>(rd.u32());
  snap.state.best_total = rd.f64();
  snap.state.best_iter = static_cast<int>(rd.u32());
  snap.state.adam = AdamState::deserialize(rd);
  const std::size_t n = static_cast<std::size_t>(snap.state.patch.size) *
                        snap.state.patch.size * 3;
  snap.state.patch.pixels = rd.f64_array(n);
  snap.state.patch.target = rd.f64_array(n);
  return snap;
}

// --- history CSV ---

inline std::string history_csv_header() {
  return "iteration,det,sim_raw,sim_effective,tv,total,map_probe";
}

inline std::string history_csv_row(const HistoryRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,", r.iter, r.loss.det,
                r.loss.sim_raw, r.loss.sim_effective, r.loss.tv, r.loss.total);
  std::string line(buf);
  if (r.has_probe) {
    std::snprintf(buf, sizeof buf, "%.17g", r.map_probe);
    line += buf;
  }
  return line;
}

namespace detail {

inline void write_snapshot_files(const CraftConfig& cfg, const CraftState& state, bool final) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  char name[64];
  if (final)
    std::snprintf(name, sizeof name, "patch");
  else
    std::snprintf(name, sizeof name, "patch_%06d", state.iter);
  const std::string base = (fs::path(cfg.out_dir) / name).string();
  save_patch_bin(base + ".bin", state, cfg.ratio, cfg.weights.sim_metric,
                 hash_craft_config(cfg));
  save_image(chw_to_image(state.patch.pixels, state.patch.size, state.patch.size),
             base + ".png");
}

}  // namespace detail

// The crafting loop: per iteration draw a batch of scenes, place/jitter/apply
// the patch on every target-class box, run the frozen detector, combine the
// detection, similarity and TV losses, backprop to the patch pixels and take
// one clamped Adam step. Only the patch changes; the model and dataset are
// read-only throughout.
inline CraftRun craft_patch(const GridDetector& model, const std::vector<Scene>& scenes,
                            const PatchCanvas& initial, const CraftConfig& cfg,
                            const CraftState* resume = nullptr) {
  require(!scenes.empty(), "craft_patch: empty dataset");
  require(cfg.iters >= 1 && cfg.batch >= 1, "craft_patch: iters and batch must be >= 1");

  std::vector<int> pool, probe_pool;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    (scenes[i].split == "val" ? probe_pool : pool).push_back(static_cast<int>(i));
  if (pool.empty()) pool = probe_pool;
  if (probe_pool.empty()) probe_pool = pool;
  if (static_cast<int>(probe_pool.size()) > cfg.probe_scenes)
    probe_pool.resize(static_cast<std::size_t>(cfg.probe_scenes));

  CraftRun run;
  if (resume) {
    run.state = *resume;
  } else {
    run.state.patch = initial;
    run.state.adam = AdamState(initial.pixels.size(), cfg.lr);
  }
  CraftState& st = run.state;
  const int s = st.patch.size;
  Tensor target_const = st.patch.target_tensor();

  NetTensors net = NetTensors::frozen(model);
  ToySceneDetector probe_detector(model);
  std::vector<Scene> probe_scenes;
  for (int i : probe_pool) probe_scenes.push_back(scenes[static_cast<std::size_t>(i)]);
  EvalOptions probe_opt;
  probe_opt.ratio = cfg.ratio;
  probe_opt.target_class = cfg.target_class;

  std::ofstream history_file;
  if (!cfg.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto path = fs::path(cfg.out_dir) / "history.csv";
    const bool append = resume != nullptr && fs::exists(path);
    history_file.open(path, append ? std::ios::app : std::ios::trunc);
    require(history_file.good(), "craft_patch: cannot write " + path.string());
    if (!append) history_file << history_csv_header() << "\n";
  }

  const bool use_detector = cfg.weights.alpha != 0.0;
  const int batch = std::min<int>(cfg.batch, static_cast<int>(pool.size()));

  for (int iter = st.iter + 1; iter <= cfg.iters; ++iter) {
    // deterministic batch draw without replacement
    Rng batch_rng = Rng::derive(cfg.seed, {0x62617463ULL, static_cast<std::uint64_t>(iter)});
    std::vector<int> draw = pool;
    for (int k = 0; k < batch; ++k) {
      const std::size_t j =
          static_cast<std::size_t>(k) +
          static_cast<std::size_t>(batch_rng.below(draw.size() - static_cast<std::size_t>(k)));
      std::swap(draw[static_cast<std::size_t>(k)], draw[j]);
    }

    Graph g;
    Tensor patch_leaf = g.leaf({3, s, s}, st.patch.pixels);

    Tensor det_t = Tensor::scalar(0.0);
    if (use_detector) {
      std::vector<Tensor> attack_scores;
      for (int k = 0; k < batch; ++k) {
        const Scene& scene = scenes[static_cast<std::size_t>(draw[static_cast<std::size_t>(k)])];
        Rng scene_rng = Rng::derive(
            cfg.seed, {static_cast<std::uint64_t>(draw[static_cast<std::size_t>(k)]),
                       static_cast<std::uint64_t>(iter)});
        std::vector<TransformParams> transforms;
        for (const auto& b : scene.boxes)
          if (b.class_id == cfg.target_class)
            transforms.push_back(sample_transform(scene_rng, cfg.eot));
        Tensor scene_t = image_tensor(scene.image);
        Tensor composite = composite_scene(scene_t, patch_leaf, scene.boxes, cfg.target_class,
                                           cfg.ratio, transforms);
        if (scene.image.height != model.input_res || scene.image.width != model.input_res) {
          const double ax = static_cast<double>(model.input_res) / scene.image.width;
          const double ay = static_cast<double>(model.input_res) / scene.image.height;
          composite = bilinear_warp(
              composite, {ax, 0.0, 0.5 * ax - 0.5, 0.0, ay, 0.5 * ay - 0.5},
              model.input_res, model.input_res);
        }
        Tensor raw = forward(model, net,
                             reshape(composite, {1, 3, model.input_res, model.input_res}));
        attack_scores.push_back(extract_attack_scores(model, raw, 0, cfg.target_class));
      }
      det_t = detection_loss(attack_scores);
    }

    Tensor sim_t = similarity_loss(cfg.weights.sim_metric, patch_leaf, target_const);
    Tensor tv_t = tv_loss(patch_leaf);
    Tensor total_t = total_loss_node(det_t, sim_t, tv_t, cfg.weights);
    g.backward(total_t);
    std::vector<double> grad = g.grad(patch_leaf);

    try {
      adam_step(st.adam, st.patch.pixels, grad);
    } catch (const Error& e) {
      fail("craft_patch: aborted at iteration " + std::to_string(iter) + ": " + e.what());
    }

    HistoryRow row;
    row.iter = iter;
    row.loss = total_loss(det_t.item(), sim_t.item(), tv_t.item(), cfg.weights);

    // halve the learning rate when the total loss plateaus
    if (row.loss.total < st.best_total - 1e-12) {
      st.best_total = row.loss.total;
      st.best_iter = iter;
    } else if (iter - st.best_iter >= cfg.plateau_window) {
      st.adam.set_lr(std::max(cfg.lr_min, st.adam.lr() * 0.5));
      st.best_iter = iter;
    }

    st.iter = iter;
    if (cfg.map_probe_every > 0 && iter % cfg.map_probe_every == 0) {
      row.map_probe =
          map_eval(probe_detector, probe_scenes, &st.patch, probe_opt).map_percent;
      row.has_probe = true;
    }
    run.history.push_back(row);
    if (history_file.is_open()) history_file << history_csv_row(row) << "\n";

    const bool last = iter == cfg.iters;
    if (!cfg.out_dir.empty() && cfg.snapshot_every > 0 &&
        (iter % cfg.snapshot_every == 0 || last))
      detail::write_snapshot_files(cfg, st, /*final=*/last);
    if (row.has_probe && cfg.stop_map_below >= 0.0 && row.map_probe < cfg.stop_map_below) {
      if (!cfg.out_dir.empty()) detail::write_snapshot_files(cfg, st, /*final=*/true);
      break;
    }
  }
  return run;
}

}  // namespace advart
