#include <catch2/catch_amalgamated.hpp>

#include "advart/patch.hpp"
#include "advart/ssim.hpp"
#include "support/test_util.hpp"

using namespace advart;
using testutil::grad_check;
using testutil::random_values;

namespace {

ImageRGB random_image(Rng& rng, int h, int w) {
  ImageRGB img = ImageRGB::filled(h, w);
  for (auto& v : img.values) v = rng.uniform01();
  return img;
}

}  // namespace

TEST_CASE("init_patch modes", "[patch]") {
  Rng rng(3);
  ImageRGB art = random_image(rng, 24, 24);

  PatchCanvas canvas = init_patch(art, 24, PatchInit::FromTarget);
  CHECK(canvas.pixels == image_to_chw(art));  // identity resample
  CHECK(canvas.pixels == canvas.target);
  CHECK(ssim(chw_to_image(canvas.pixels, 24, 24), chw_to_image(canvas.target, 24, 24)) ==
        Catch::Approx(1.0).margin(1e-12));

  PatchCanvas r1 = init_patch(art, 32, PatchInit::UniformRandom, 42);
  PatchCanvas r2 = init_patch(art, 32, PatchInit::UniformRandom, 42);
  CHECK(r1.pixels == r2.pixels);
  PatchCanvas r3 = init_patch(art, 32, PatchInit::UniformRandom, 43);
  CHECK(r1.pixels != r3.pixels);
  for (double v : r1.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  CHECK_THROWS_WITH(init_patch(art, 15, PatchInit::FromTarget),
                    Catch::Matchers::ContainsSubstring(">= 16"));
}

TEST_CASE("sample_transform ranges and determinism", "[patch]") {
  Rng rng(1);
  TransformParams ident = sample_transform(rng, EotConfig::none());
  CHECK(ident.scale_jitter == 1.0);
  CHECK(ident.angle_deg == 0.0);
  CHECK(ident.noise_amp == 0.0);
  CHECK(ident.contrast == 1.0);
  CHECK(ident.brightness == 0.0);

  // uniform-distribution statistics over 1e5 draws
  Rng stat_rng(77);
  double mn = 1e9, mx = -1e9, mean = 0.0;
  const int n = 100000;
  EotConfig cfg;
  for (int i = 0; i < n; ++i) {
    TransformParams p = sample_transform(stat_rng, cfg);
    mn = std::min(mn, p.angle_deg);
    mx = std::max(mx, p.angle_deg);
    mean += p.angle_deg;
    CHECK(std::abs(p.angle_deg) <= 20.0);
    CHECK(p.contrast >= 0.8);
    CHECK(p.contrast <= 1.2);
    CHECK(std::abs(p.brightness) <= 0.1);
  }
  mean /= n;
  CHECK(mn <= -19.0);
  CHECK(mx >= 19.0);
  CHECK(std::abs(mean) < 0.5);

  Rng a = Rng::derive(9, {1, 2});
  Rng b = Rng::derive(9, {1, 2});
  TransformParams pa = sample_transform(a, cfg);
  TransformParams pb = sample_transform(b, cfg);
  CHECK(pa.scale_jitter == pb.scale_jitter);
  CHECK(pa.angle_deg == pb.angle_deg);
  CHECK(pa.noise_seed == pb.noise_seed);
  CHECK(pa.contrast == pb.contrast);
  CHECK(pa.brightness == pb.brightness);
}

TEST_CASE("place_patch identity rendering", "[patch]") {
  Rng rng(17);
  const int s = 24, dims = 96;
  Tensor patch = Tensor::from({3, s, s}, random_values(rng, 3 * s * s, 0.0, 1.0));
  // box area in pixels = 0.25*96*96 -> sqrt = 48; ratio 0.5 gives side = 24 = S
  BoundingBox box{0.5, 0.5, 0.5, 0.5, 0};
  PlacedPatch placed = place_patch(patch, TransformParams{}, box, dims, dims, 0.5);

  const int off = 36;  // 47.5 - 11.5
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < dims; ++y)
      for (int x = 0; x < dims; ++x) {
        const double m = placed.mask[(static_cast<std::int64_t>(c) * dims + y) * dims + x];
        const double w = placed.warped[(static_cast<std::int64_t>(c) * dims + y) * dims + x];
        const bool inside = y >= off && y < off + s && x >= off && x < off + s;
        if (inside) {
          CHECK(m == 1.0);
          CHECK(w == patch[(static_cast<std::int64_t>(c) * s + (y - off)) * s + (x - off)]);
        } else {
          CHECK(m == 0.0);
        }
      }
}

TEST_CASE("place_patch mask area and disjointness", "[patch]") {
  Rng rng(18);
  const int s = 32, dims = 200;
  Tensor patch = Tensor::from({3, s, s}, random_values(rng, 3 * s * s, 0.0, 1.0));

  // area ~ (ratio^2 * box area px) * jitter^2 within 2% at angle 0
  BoundingBox box{0.5, 0.5, 0.5, 0.5, 0};  // 100x100 px -> sqrt area 100
  for (double jitter : {1.0, 1.1}) {
    TransformParams tp;
    tp.scale_jitter = jitter;
    PlacedPatch placed = place_patch(patch, tp, box, dims, dims, 0.64);
    double area = 0.0;
    for (std::int64_t i = 0; i < placed.mask.size() / 3; ++i) area += placed.mask[i];
    const double expected = 0.64 * 0.64 * 100.0 * 100.0 * jitter * jitter;
    CHECK(area == Catch::Approx(expected).epsilon(0.02));
  }

  // masks of boxes >= 2 patch sides apart do not overlap
  BoundingBox b1{0.25, 0.25, 0.2, 0.2, 0};
  BoundingBox b2{0.75, 0.75, 0.2, 0.2, 0};
  PlacedPatch p1 = place_patch(patch, TransformParams{}, b1, dims, dims, 0.3);
  PlacedPatch p2 = place_patch(patch, TransformParams{}, b2, dims, dims, 0.3);
  double overlap = 0.0;
  for (std::int64_t i = 0; i < p1.mask.size(); ++i)
    overlap += std::min(p1.mask[i], p2.mask[i]);
  CHECK(overlap == 0.0);

  // fully off-image placement is rejected, naming the box
  BoundingBox off{3.0, 3.0, 0.2, 0.2, 0};
  CHECK_THROWS_WITH(place_patch(patch, TransformParams{}, off, dims, dims, 0.3),
                    Catch::Matchers::ContainsSubstring("off-image") &&
                        Catch::Matchers::ContainsSubstring("3.0"));
}

TEST_CASE("color_jitter arithmetic", "[patch]") {
  Tensor warped = Tensor::full({3, 4, 4}, 0.5);
  Tensor mask = Tensor::full({3, 4, 4}, 1.0);

  TransformParams ident;
  Tensor same = color_jitter(warped, mask, ident);
  CHECK(same.values() == warped.values());

  TransformParams tp;
  tp.contrast = 1.2;
  tp.brightness = 0.1;
  Tensor out = color_jitter(warped, mask, tp);
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == Catch::Approx(0.7).margin(1e-15));

  Tensor bright = color_jitter(Tensor::full({3, 4, 4}, 0.95), mask, tp);
  for (std::int64_t i = 0; i < bright.size(); ++i) CHECK(bright[i] == 1.0);  // clamped

  // additive terms only act inside the mask support
  Tensor zero_mask = Tensor::full({3, 4, 4}, 0.0);
  Tensor outside = color_jitter(Tensor::full({3, 4, 4}, 0.0), zero_mask, tp);
  for (std::int64_t i = 0; i < outside.size(); ++i) CHECK(outside[i] == 0.0);
}

TEST_CASE("apply_patch blending", "[patch]") {
  Rng rng(21);
  Tensor image = Tensor::from({3, 5, 5}, random_values(rng, 75, 0.0, 1.0));
  Tensor warped = Tensor::from({3, 5, 5}, random_values(rng, 75, 0.0, 1.0));

  Tensor keep = apply_patch(image, warped, Tensor::full({3, 5, 5}, 0.0));
  CHECK(keep.values() == image.values());

  Tensor replace = apply_patch(image, warped, Tensor::full({3, 5, 5}, 1.0));
  CHECK(replace.values() == warped.values());

  Tensor blend = apply_patch(Tensor::full({3, 5, 5}, 0.0), Tensor::full({3, 5, 5}, 1.0),
                             Tensor::full({3, 5, 5}, 0.5));
  for (std::int64_t i = 0; i < blend.size(); ++i) CHECK(blend[i] == 0.5);
}

TEST_CASE("fused patch ops match finite differences", "[patch]") {
  Rng rng(31);
  const int s = 6, dims = 24;
  auto pvals = random_values(rng, 3 * s * s, 0.25, 0.75);
  BoundingBox box{0.5, 0.55, 0.6, 0.7, 0};
  TransformParams tp;
  tp.scale_jitter = 1.07;
  tp.angle_deg = 13.0;
  tp.contrast = 1.1;
  tp.brightness = 0.03;
  Tensor scene = Tensor::from({3, dims, dims}, random_values(rng, 3 * dims * dims, 0.0, 1.0));
  Tensor w = Tensor::from({3, dims, dims}, random_values(rng, 3 * dims * dims, -1.0, 1.0));

  double err = grad_check({3, s, s}, pvals, [&](Graph&, const Tensor& leaf) {
    PlacedPatch placed = place_patch(leaf, tp, box, dims, dims, 0.55);
    Tensor jit = color_jitter(placed.warped, placed.mask, tp);
    Tensor composite = apply_patch(scene, jit, placed.mask);
    return sum(mul(composite, w));
  });
  CHECK(err < 1e-5);

  // jitter alone, with noise enabled, inputs away from the clamp kinks
  TransformParams tpn = tp;
  tpn.noise_seed = 99;
  tpn.noise_amp = 0.1;
  Tensor mask = Tensor::from({3, 4, 4}, random_values(rng, 48, 0.0, 1.0));
  Tensor w2 = Tensor::from({3, 4, 4}, random_values(rng, 48, -1.0, 1.0));
  err = grad_check({3, 4, 4}, random_values(rng, 48, 0.3, 0.7),
                   [&](Graph&, const Tensor& leaf) {
                     return sum(mul(color_jitter(leaf, mask, tpn), w2));
                   });
  CHECK(err < 1e-5);
}

TEST_CASE("gradient locality: zero gradient where the mask is zero", "[patch]") {
  Rng rng(41);
  const int s = 16, dims = 64;
  BoundingBox box{0.5, 0.5, 0.5, 0.5, 0};  // side = 0.5*sqrt(1024) = 16 = S
  Graph g;
  Tensor patch = g.leaf({3, s, s}, random_values(rng, 3 * s * s, 0.1, 0.9));
  Tensor scene = Tensor::from({3, dims, dims}, random_values(rng, 3 * dims * dims, 0.0, 1.0));
  PlacedPatch placed = place_patch(patch, TransformParams{}, box, dims, dims, 0.5);
  Tensor composite = apply_patch(scene, placed.warped, placed.mask);

  // weight only the pixels outside the mask support
  std::vector<double> wv(static_cast<std::size_t>(composite.size()));
  for (std::int64_t i = 0; i < composite.size(); ++i)
    wv[static_cast<std::size_t>(i)] = placed.mask[i] == 0.0 ? rng.uniform(0.5, 1.0) : 0.0;
  g.backward(sum(mul(composite, Tensor::from({3, dims, dims}, wv))));
  for (double gv : g.grad(patch)) CHECK(gv == 0.0);
}

TEST_CASE("identity pipeline reproduces the patch inside the mask", "[patch]") {
  Rng rng(51);
  const int s = 20, dims = 80;
  BoundingBox box{0.5, 0.5, 0.5, 0.5, 0};  // side = 0.5*sqrt(1600) = 20 = S
  Tensor patch = Tensor::from({3, s, s}, random_values(rng, 3 * s * s, 0.0, 1.0));
  Tensor scene = Tensor::from({3, dims, dims}, random_values(rng, 3 * dims * dims, 0.0, 1.0));
  Tensor composite =
      composite_scene(scene, patch, {box}, 0, 0.5, {sample_transform(rng, EotConfig::none())});

  PlacedPatch placed = place_patch(patch, TransformParams{}, box, dims, dims, 0.5);
  for (std::int64_t i = 0; i < composite.size(); ++i) {
    if (placed.mask[i] == 1.0) {
      CHECK(std::abs(composite[i] - placed.warped[i]) < 1e-10);
    }
  }
}

TEST_CASE("compositing is a convex combination per pixel", "[patch]") {
  Rng rng(61);
  const int s = 12, dims = 48;
  Tensor patch = Tensor::from({3, s, s}, random_values(rng, 3 * s * s, 0.0, 1.0));
  Tensor scene = Tensor::from({3, dims, dims}, random_values(rng, 3 * dims * dims, 0.0, 1.0));
  EotConfig cfg;
  for (int inst = 0; inst < 5; ++inst) {
    BoundingBox box{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.6),
                    rng.uniform(0.3, 0.6), 0};
    TransformParams tp = sample_transform(rng, cfg);
    PlacedPatch placed = place_patch(patch, tp, box, dims, dims, 0.4);
    Tensor jit = color_jitter(placed.warped, placed.mask, tp);
    Tensor composite = apply_patch(scene, jit, placed.mask);
    for (std::int64_t i = 0; i < composite.size(); ++i) {
      CHECK(composite[i] >= std::min(scene[i], jit[i]) - 1e-12);
      CHECK(composite[i] <= std::max(scene[i], jit[i]) + 1e-12);
    }
  }
}
