#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "advart/error.hpp"
#include "advart/tensor.hpp"

namespace advart {

// 8-bit images are held as doubles in [0,1], interleaved RGB rows.
struct ImageRGB {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // height*width*3, row-major, RGB interleaved

  static ImageRGB filled(int h, int w, double v = 0.0) {
    ImageRGB img;
    img.height = h;
    img.width = w;
    img.values.assign(static_cast<std::size_t>(h) * w * 3, v);
    return img;
  }

  double& at(int y, int x, int c) {
    return values[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
  }
  double at(int y, int x, int c) const {
    return values[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::string png_color_name(int color_type) {
  switch (color_type) {
    case PNG_COLOR_TYPE_GRAY: return "grayscale png";
    case PNG_COLOR_TYPE_GRAY_ALPHA: return "grayscale+alpha png";
    case PNG_COLOR_TYPE_PALETTE: return "palette png";
    case PNG_COLOR_TYPE_RGB: return "rgb png";
    case PNG_COLOR_TYPE_RGB_ALPHA: return "rgba png";
    default: return "png color type " + std::to_string(color_type);
  }
}

inline ImageRGB load_png(const std::string& path, std::FILE* f) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, "load_image: libpng init failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("load_image: libpng init failed for " + path);
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("load_image: failed to decode png " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 || color != PNG_COLOR_TYPE_RGB) {
    std::string detected = std::to_string(depth) + "-bit " + png_color_name(color);
    png_destroy_read_struct(&png, &info, nullptr);
    fail("load_image: " + path + " is not an 8-bit RGB png (detected " + detected + ")");
  }
  pixels.resize(static_cast<std::size_t>(h) * w * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageRGB img;
  img.height = static_cast<int>(h);
  img.width = static_cast<int>(w);
  img.values.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) img.values[i] = pixels[i] / 255.0;
  return img;
}

inline int ppm_token(std::FILE* f) {
  // next integer token, skipping whitespace and '#' comments
  int c = std::fgetc(f);
  for (;;) {
    while (c == ' ' || c == '\t' || c == '\r' || c == '\n') c = std::fgetc(f);
    if (c != '#') break;
    while (c != '\n' && c != EOF) c = std::fgetc(f);
  }
  int v = 0;
  bool any = false;
  while (c >= '0' && c <= '9') {
    v = v * 10 + (c - '0');
    any = true;
    c = std::fgetc(f);
  }
  return any ? v : -1;
}

inline ImageRGB load_ppm(const std::string& path, std::FILE* f) {
  const int w = ppm_token(f);
  const int h = ppm_token(f);
  const int maxval = ppm_token(f);
  require(w > 0 && h > 0, "load_image: malformed ppm header in " + path);
  require(maxval == 255,
          "load_image: " + path + " has unsupported ppm maxval " + std::to_string(maxval));
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  require(std::fread(buf.data(), 1, buf.size(), f) == buf.size(),
          "load_image: truncated ppm data in " + path);
  ImageRGB img;
  img.height = h;
  img.width = w;
  img.values.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) img.values[i] = buf[i] / 255.0;
  return img;
}

}  // namespace detail

// Reads an 8-bit RGB PNG or binary PPM (P6, maxval 255). Values are byte/255.
inline ImageRGB load_image(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, "load_image: cannot open " + path);
  unsigned char magic[8] = {0};
  std::size_t got = std::fread(magic, 1, 8, f.get());
  std::rewind(f.get());
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (got >= 8 && std::memcmp(magic, png_sig, 8) == 0) return detail::load_png(path, f.get());
  if (got >= 2 && magic[0] == 'P' && magic[1] == '6') {
    std::fseek(f.get(), 2, SEEK_SET);
    return detail::load_ppm(path, f.get());
  }
  std::string detected = (got >= 2 && magic[0] == 'P')
                             ? std::string("ppm variant P") + static_cast<char>(magic[1])
                             : "unknown format";
  fail("load_image: " + path + " is not a png or binary ppm (detected " + detected + ")");
}

// Writes an 8-bit RGB PNG; byte = round(v*255), round half up.
inline void save_image(const ImageRGB& img, const std::string& path) {
  require(img.height > 0 && img.width > 0, "save_image: empty image");
  std::vector<png_byte> bytes(img.values.size());
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    double v = img.values[i];
    require(v >= 0.0 && v <= 1.0,
            "save_image: value " + std::to_string(v) + " outside [0,1]");
    bytes[i] = static_cast<png_byte>(std::lround(v * 255.0));
  }
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  require(f != nullptr, "save_image: cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, "save_image: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("save_image: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("save_image: failed to write " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * img.width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Bilinear resize on pixel centers; exact identity when sizes match.
inline ImageRGB resize_bilinear(const ImageRGB& src, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "resize: empty target");
  ImageRGB out = ImageRGB::filled(out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double v = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(v));
    double fy = v - y0;
    int y0c = std::min(std::max(y0, 0), src.height - 1);
    int y1c = std::min(std::max(y0 + 1, 0), src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double u = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(u));
      double fx = u - x0;
      int x0c = std::min(std::max(x0, 0), src.width - 1);
      int x1c = std::min(std::max(x0 + 1, 0), src.width - 1);
      for (int c = 0; c < 3; ++c) {
        double val = (1 - fy) * ((1 - fx) * src.at(y0c, x0c, c) + fx * src.at(y0c, x1c, c)) +
                     fy * ((1 - fx) * src.at(y1c, x0c, c) + fx * src.at(y1c, x1c, c));
        out.at(y, x, c) = val;
      }
    }
  }
  return out;
}

// HWC interleaved image -> CHW tensor values.
inline std::vector<double> image_to_chw(const ImageRGB& img) {
  std::vector<double> out(img.values.size());
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * img.width + x] =
            img.at(y, x, c);
  return out;
}

inline Tensor image_tensor(const ImageRGB& img) {
  return Tensor::from({3, img.height, img.width}, image_to_chw(img));
}

// CHW values (already in [0,1] or clamped here) -> image.
inline ImageRGB chw_to_image(const std::vector<double>& chw, int h, int w) {
  require(chw.size() == static_cast<std::size_t>(h) * w * 3, "chw_to_image: size mismatch");
  ImageRGB img = ImageRGB::filled(h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = chw[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x];
        img.at(y, x, c) = std::min(1.0, std::max(0.0, v));
      }
  return img;
}

}  // namespace advart
