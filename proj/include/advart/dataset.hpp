#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advart/box.hpp"
#include "advart/error.hpp"
#include "advart/image.hpp"
#include "advart/rng.hpp"

namespace advart {

inline constexpr int kPersonClass = 0;
inline constexpr int kPropClass = 1;

// Annotated image. Split is "train" or "val".
struct Scene {
  ImageRGB image;
  std::vector<BoundingBox> boxes;
  std::string split = "train";
};

// Rejection rule used for every foreground color: at least 0.2 separation
// from the background base color in some channel (sampled with margin 0.25).
inline std::array<double, 3> sample_separated_color(Rng& rng, const std::array<double, 3>& bg) {
  for (;;) {
    std::array<double, 3> c = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
    for (int i = 0; i < 3; ++i)
      if (std::abs(c[static_cast<std::size_t>(i)] - bg[static_cast<std::size_t>(i)]) >= 0.25)
        return c;
  }
}

namespace detail {

struct Figure {
  double cx, cy;        // pixels
  double fig_h, body_w, head_r;
  std::array<double, 3> color;
  bool is_person;
  double prop_w, prop_h;  // for props

  BoundingBox box(int dims) const {
    double w = is_person ? std::max(body_w, 2.0 * head_r) : prop_w;
    double h = is_person ? fig_h : prop_h;
    return BoundingBox{cx / dims, cy / dims, w / dims, h / dims,
                       is_person ? kPersonClass : kPropClass};
  }
};

inline bool inside_person(const Figure& f, double x, double y) {
  const double y0 = f.cy - f.fig_h / 2.0;
  // head disc
  const double hx = x - f.cx, hy = y - (y0 + f.head_r);
  if (hx * hx + hy * hy <= f.head_r * f.head_r) return true;
  // rounded-rectangle body below the head
  const double by0 = y0 + 2.0 * f.head_r;
  const double by1 = f.cy + f.fig_h / 2.0;
  if (y < by0 || y > by1) return false;
  const double half_w = f.body_w / 2.0;
  const double rr = 0.3 * f.body_w;
  const double dx = std::max(0.0, std::abs(x - f.cx) - (half_w - rr));
  const double cy0 = by0 + rr, cy1 = by1 - rr;
  const double dy = y < cy0 ? cy0 - y : (y > cy1 ? y - cy1 : 0.0);
  return dx * dx + dy * dy <= rr * rr;
}

inline bool inside_prop(const Figure& f, double x, double y) {
  if (f.prop_h == f.prop_w) {  // disc
    const double dx = x - f.cx, dy = y - f.cy;
    return dx * dx + dy * dy <= (f.prop_w / 2.0) * (f.prop_w / 2.0);
  }
  return std::abs(x - f.cx) <= f.prop_w / 2.0 && std::abs(y - f.cy) <= f.prop_h / 2.0;
}

}  // namespace detail

// Procedural scene: textured background, 1-3 person figures (rounded body +
// head disc) and 0-2 props of a second class, with exact boxes recorded.
// Deterministic for a given (seed, index, dims).
inline Scene synth_scene(std::uint64_t seed, int index, int dims) {
  Rng rng = Rng::derive(seed, {0x7363656eULL, static_cast<std::uint64_t>(index)});
  Scene scene;
  scene.image = ImageRGB::filled(dims, dims);

  const std::array<double, 3> bg = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
  // low-frequency waves per channel + pixel noise
  std::array<double, 3> amp, fx, fy, ph;
  for (int c = 0; c < 3; ++c) {
    amp[static_cast<std::size_t>(c)] = rng.uniform(0.04, 0.14);
    fx[static_cast<std::size_t>(c)] = rng.uniform(0.5, 2.5);
    fy[static_cast<std::size_t>(c)] = rng.uniform(0.5, 2.5);
    ph[static_cast<std::size_t>(c)] = rng.uniform(0.0, 6.28318);
  }

  const int n_persons = 1 + static_cast<int>(rng.below(3));
  const int n_props = static_cast<int>(rng.below(3));
  std::vector<detail::Figure> figures;
  // > cell diagonal of the default 5x5 grid, so box centers land in
  // distinct responsible cells
  const double min_sep = 0.30 * dims;
  for (int i = 0; i < n_persons + n_props; ++i) {
    const bool person = i < n_persons;
    detail::Figure f{};
    f.is_person = person;
    f.color = sample_separated_color(rng, bg);
    bool placed = false;
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      if (person) {
        f.fig_h = rng.uniform(0.38, 0.62) * dims;
        f.body_w = f.fig_h * rng.uniform(0.34, 0.46);
        f.head_r = f.body_w * rng.uniform(0.30, 0.38);
        const double bw = std::max(f.body_w, 2.0 * f.head_r);
        f.cx = rng.uniform(bw / 2 + 2, dims - bw / 2 - 2);
        f.cy = rng.uniform(f.fig_h / 2 + 2, dims - f.fig_h / 2 - 2);
      } else {
        if (rng.below(2) == 0) {
          f.prop_w = f.prop_h = rng.uniform(0.08, 0.16) * dims;  // disc
        } else {
          f.prop_w = rng.uniform(0.14, 0.26) * dims;
          f.prop_h = rng.uniform(0.05, 0.10) * dims;
        }
        f.cx = rng.uniform(f.prop_w / 2 + 2, dims - f.prop_w / 2 - 2);
        f.cy = rng.uniform(f.prop_h / 2 + 2, dims - f.prop_h / 2 - 2);
      }
      placed = true;
      for (const auto& other : figures) {
        const double dx = other.cx - f.cx, dy = other.cy - f.cy;
        if (dx * dx + dy * dy < min_sep * min_sep) {
          placed = false;
          break;
        }
      }
    }
    if (!placed && !person) continue;  // props are optional
    if (!placed && !figures.empty()) continue;
    figures.push_back(f);
    scene.boxes.push_back(f.box(dims));
  }

  for (int y = 0; y < dims; ++y) {
    for (int x = 0; x < dims; ++x) {
      const double nx = static_cast<double>(x) / dims, ny = static_cast<double>(y) / dims;
      for (int c = 0; c < 3; ++c) {
        double v = bg[static_cast<std::size_t>(c)] +
                   amp[static_cast<std::size_t>(c)] *
                       std::sin(6.28318 * (fx[static_cast<std::size_t>(c)] * nx +
                                           fy[static_cast<std::size_t>(c)] * ny) +
                                ph[static_cast<std::size_t>(c)]);
        scene.image.at(y, x, c) = v;
      }
      for (const auto& f : figures) {
        const bool hit = f.is_person ? detail::inside_person(f, x, y)
                                     : detail::inside_prop(f, x, y);
        if (!hit) continue;
        const double shade =
            f.is_person ? 1.06 - 0.22 * ((y - (f.cy - f.fig_h / 2)) / f.fig_h) : 1.0;
        for (int c = 0; c < 3; ++c)
          scene.image.at(y, x, c) = f.color[static_cast<std::size_t>(c)] * shade;
        break;
      }
      // per-pixel texture noise
      std::uint64_t h = mix64(seed ^ (static_cast<std::uint64_t>(index) << 32 ^
                                      (static_cast<std::uint64_t>(y) * dims + x)));
      for (int c = 0; c < 3; ++c) {
        double u = static_cast<double>(mix64(h + static_cast<std::uint64_t>(c)) >> 11) * 0x1.0p-53;
        double v = scene.image.at(y, x, c) + 0.02 * (2.0 * u - 1.0);
        scene.image.at(y, x, c) = std::min(1.0, std::max(0.0, v));
      }
    }
  }
  return scene;
}

// First 80% of the scenes are tagged "train", the rest "val".
inline std::vector<Scene> synth_dataset(std::uint64_t seed, int count, int dims = 160) {
  require(count >= 1, "synth_dataset: count must be >= 1");
  require(dims >= 32, "synth_dataset: dims must be >= 32");
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  const int n_train = count - count / 5;
  for (int i = 0; i < count; ++i) {
    Scene s = synth_scene(seed, i, dims);
    s.split = i < n_train ? "train" : "val";
    scenes.push_back(std::move(s));
  }
  return scenes;
}

// --- manifest I/O (JSON lines, one object per scene) ---

inline void write_dataset(const std::vector<Scene>& scenes, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
  require(manifest.good(), "cannot write manifest in " + dir);
  char name[64];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::snprintf(name, sizeof name, "images/scene_%05zu.png", i);
    save_image(scenes[i].image, (fs::path(dir) / name).string());
    nlohmann::ordered_json j;
    j["image"] = name;
    auto boxes = nlohmann::ordered_json::array();
    for (const auto& b : scenes[i].boxes) {
      nlohmann::ordered_json jb;
      jb["cx"] = b.cx;
      jb["cy"] = b.cy;
      jb["w"] = b.w;
      jb["h"] = b.h;
      jb["class"] = b.class_id;
      boxes.push_back(jb);
    }
    j["boxes"] = boxes;
    j["split"] = scenes[i].split;
    manifest << j.dump() << "\n";
  }
}

inline std::vector<Scene> load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  require(in.good(), "cannot open dataset manifest " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<Scene> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      fail(manifest_path + ":" + std::to_string(line_no) + ": invalid json: " + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it)
      require(it.key() == "image" || it.key() == "boxes" || it.key() == "split",
              manifest_path + ":" + std::to_string(line_no) + ": unknown key \"" + it.key() +
                  "\"");
    require(j.contains("image") && j.contains("boxes"),
            manifest_path + ":" + std::to_string(line_no) + ": missing image/boxes");
    Scene s;
    s.image = load_image((base / j["image"].get<std::string>()).string());
    for (const auto& jb : j["boxes"]) {
      for (auto it = jb.begin(); it != jb.end(); ++it)
        require(it.key() == "cx" || it.key() == "cy" || it.key() == "w" || it.key() == "h" ||
                    it.key() == "class" || it.key() == "score",
                manifest_path + ":" + std::to_string(line_no) + ": unknown box key \"" +
                    it.key() + "\"");
      BoundingBox b;
      b.cx = jb.at("cx").get<double>();
      b.cy = jb.at("cy").get<double>();
      b.w = jb.at("w").get<double>();
      b.h = jb.at("h").get<double>();
      b.class_id = jb.value("class", 0);
      s.boxes.push_back(b);
    }
    if (j.contains("split")) s.split = j["split"].get<std::string>();
    scenes.push_back(std::move(s));
  }
  require(!scenes.empty(), manifest_path + ": manifest contains no scenes");
  return scenes;
}

}  // namespace advart
