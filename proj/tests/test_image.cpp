#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "advart/image.hpp"
#include "advart/ssim.hpp"
#include "support/ssim_oracle.hpp"
#include "support/test_util.hpp"

using namespace advart;

namespace {

// 4x4 RGBA and grayscale PNGs (alpha / wrong-colortype rejection fixtures)
inline const unsigned char kRgbaPng[] = {
    137, 80, 78, 71, 13, 10, 26, 10, 0, 0, 0, 13, 73, 72, 68, 82, 0, 0, 0, 4, 0, 0, 0, 4,
    8, 6, 0, 0, 0, 169, 241, 158, 126, 0, 0, 0, 21, 73, 68, 65, 84, 120, 156, 99, 228, 18,
    145, 107, 96, 64, 2, 76, 12, 104, 128, 176, 0, 0, 48, 184, 0, 196, 137, 127, 64, 213,
    0, 0, 0, 0, 73, 69, 78, 68, 174, 66, 96, 130};
inline const unsigned char kGrayPng[] = {
    137, 80, 78, 71, 13, 10, 26, 10, 0, 0, 0, 13, 73, 72, 68, 82, 0, 0, 0, 4, 0, 0, 0, 4,
    8, 0, 0, 0, 0, 140, 154, 193, 162, 0, 0, 0, 16, 73, 68, 65, 84, 120, 156, 99, 76, 97,
    96, 96, 96, 98, 64, 33, 0, 7, 208, 0, 108, 30, 23, 85, 219, 0, 0, 0, 0, 73, 69, 78,
    68, 174, 66, 96, 130};

void write_bytes(const std::string& path, const unsigned char* data, std::size_t n) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
}

ImageRGB random_image(Rng& rng, int h, int w) {
  ImageRGB img = ImageRGB::filled(h, w);
  for (auto& v : img.values) v = rng.uniform01();
  return img;
}

}  // namespace

TEST_CASE("png round trip and quantization", "[image]") {
  const std::string dir = testutil::temp_dir("image");

  ImageRGB zeros = ImageRGB::filled(5, 7, 0.0);
  save_image(zeros, dir + "/zeros.png");
  ImageRGB z = load_image(dir + "/zeros.png");
  CHECK(z.height == 5);
  CHECK(z.width == 7);
  for (double v : z.values) CHECK(v == 0.0);

  ImageRGB ones = ImageRGB::filled(4, 4, 1.0);
  save_image(ones, dir + "/ones.png");
  for (double v : load_image(dir + "/ones.png").values) CHECK(v == 1.0);

  // round half up: 0.5 * 255 = 127.5 -> byte 128
  ImageRGB half = ImageRGB::filled(3, 3, 0.5);
  save_image(half, dir + "/half.png");
  for (double v : load_image(dir + "/half.png").values) CHECK(v == 128.0 / 255.0);

  // save -> load is idempotent after the first quantization
  Rng rng(7);
  ImageRGB noisy = random_image(rng, 9, 11);
  save_image(noisy, dir + "/a.png");
  ImageRGB once = load_image(dir + "/a.png");
  save_image(once, dir + "/b.png");
  ImageRGB twice = load_image(dir + "/b.png");
  CHECK(once.values == twice.values);
}

TEST_CASE("png rejects non-rgb files naming path and format", "[image]") {
  const std::string dir = testutil::temp_dir("image_reject");
  write_bytes(dir + "/rgba.png", kRgbaPng, sizeof kRgbaPng);
  CHECK_THROWS_WITH(load_image(dir + "/rgba.png"),
                    Catch::Matchers::ContainsSubstring("rgba.png") &&
                        Catch::Matchers::ContainsSubstring("rgba png"));
  write_bytes(dir + "/gray.png", kGrayPng, sizeof kGrayPng);
  CHECK_THROWS_WITH(load_image(dir + "/gray.png"),
                    Catch::Matchers::ContainsSubstring("grayscale"));
  CHECK_THROWS_WITH(load_image(dir + "/missing.png"),
                    Catch::Matchers::ContainsSubstring("missing.png"));
}

TEST_CASE("ppm p6 fallback", "[image]") {
  const std::string dir = testutil::temp_dir("ppm");
  {
    std::ofstream f(dir + "/img.ppm", std::ios::binary);
    f << "P6\n# comment\n2 2\n255\n";
    const unsigned char px[12] = {0, 128, 255, 10, 20, 30, 0, 0, 0, 255, 255, 255};
    f.write(reinterpret_cast<const char*>(px), 12);
  }
  ImageRGB img = load_image(dir + "/img.ppm");
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.at(0, 0, 1) == 128.0 / 255.0);
  CHECK(img.at(1, 1, 0) == 1.0);

  {
    std::ofstream f(dir + "/bad.ppm", std::ios::binary);
    f << "P6\n2 2\n65535\n";
  }
  CHECK_THROWS_WITH(load_image(dir + "/bad.ppm"),
                    Catch::Matchers::ContainsSubstring("maxval"));
  {
    std::ofstream f(dir + "/p3.ppm", std::ios::binary);
    f << "P3\n2 2\n255\n";
  }
  CHECK_THROWS_WITH(load_image(dir + "/p3.ppm"), Catch::Matchers::ContainsSubstring("P3"));
}

TEST_CASE("ssim identities", "[image]") {
  Rng rng(123);
  ImageRGB a = random_image(rng, 16, 20);
  CHECK(std::abs(ssim(a, a) - 1.0) < 1e-12);

  ImageRGB b = random_image(rng, 16, 20);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);

  ImageRGB small = ImageRGB::filled(8, 8, 0.5);
  CHECK_THROWS_WITH(ssim(small, small), Catch::Matchers::ContainsSubstring("11"));
  ImageRGB other = ImageRGB::filled(16, 21, 0.5);
  CHECK_THROWS_WITH(ssim(a, other), Catch::Matchers::ContainsSubstring("differ"));
}

TEST_CASE("ssim of inverted checkerboard matches the reference value", "[image]") {
  // With the canonical constants the contrast/structure term is bounded by
  // -(2*var - C2)/(2*var + C2), so the inverted binary checkerboard sits near
  // -0.9964, not at -1. Value frozen from the independent reference
  // implementation (scikit-image agrees to 1e-12).
  ImageRGB cb = ImageRGB::filled(32, 32, 0.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) cb.at(y, x, c) = (x + y) % 2 ? 1.0 : 0.0;
  ImageRGB inv = cb;
  for (auto& v : inv.values) v = 1.0 - v;
  const double expected = -0.996406468356957;
  CHECK(std::abs(ssim(cb, inv) - expected) < 1e-6);
  CHECK(std::abs(testutil::ssim_reference(cb, inv) - expected) < 1e-6);
}

TEST_CASE("ssim matches the independent reference on random pairs", "[image]") {
  Rng rng(2024);
  for (int inst = 0; inst < 4; ++inst) {
    const int h = 12 + static_cast<int>(rng.below(10));
    const int w = 12 + static_cast<int>(rng.below(14));
    ImageRGB a = random_image(rng, h, w);
    ImageRGB b = a;
    for (auto& v : b.values)
      v = std::min(1.0, std::max(0.0, v + rng.uniform(-0.2, 0.2)));
    CHECK(std::abs(ssim(a, b) - testutil::ssim_reference(a, b)) < 1e-6);
  }
}

TEST_CASE("resize identity and tensor conversions", "[image]") {
  Rng rng(5);
  ImageRGB a = random_image(rng, 10, 13);
  ImageRGB same = resize_bilinear(a, 10, 13);
  CHECK(same.values == a.values);

  ImageRGB down = resize_bilinear(a, 5, 6);
  CHECK(down.height == 5);
  CHECK(down.width == 6);

  Tensor t = image_tensor(a);
  CHECK(t.shape() == Shape{3, 10, 13});
  CHECK(t[0] == a.at(0, 0, 0));
  CHECK(t[10 * 13] == a.at(0, 0, 1));
  ImageRGB back = chw_to_image(t.values(), 10, 13);
  CHECK(back.values == a.values);
}
