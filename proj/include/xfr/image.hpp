#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "xfr/tensor.hpp"

namespace xfr {

/// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<uint8_t> pixels;

  uint8_t& at(int y, int x, int c = 0) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

/// Single-channel float plane, row-major.
template <typename T>
struct GrayMap {
  int height = 0;
  int width = 0;
  std::vector<T> v;

  GrayMap() = default;
  GrayMap(int h, int w, T fill = T(0))
      : height(h), width(w), v(static_cast<size_t>(h) * w, fill) {}

  T& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
  T at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
  int64_t size() const { return static_cast<int64_t>(height) * width; }
};

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

inline ImageU8 read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("image: cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8)) {
    std::fclose(fp);
    throw std::runtime_error("image: not a PNG file: " + path);
  }
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("image: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("image: corrupt PNG: " + path);
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Normalise every variant to 8-bit gray or RGB.
  png_set_strip_16(png);
  png_set_packing(png);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = static_cast<int>(png_get_channels(png, info));
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("image: unsupported channel count in " + path);
  }
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] =
        img.pixels.data() + static_cast<size_t>(y) * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

inline void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("image: png writer supports 1 or 3 channels");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("image: cannot write " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("image: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("image: png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(
                           img.pixels.data() +
                           static_cast<size_t>(y) * img.width * img.channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// ---------------------------------------------------------------------------
// PGM (P5 binary and P2 ascii, maxval 255)
// ---------------------------------------------------------------------------

namespace detail {

inline int pgm_next_token(std::istream& in, std::string& tok) {
  tok.clear();
  char c;
  while (in.get(c)) {
    if (c == '#') {  // comment to end of line
      while (in.get(c) && c != '\n') {
      }
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return 1;
      continue;
    }
    tok.push_back(c);
  }
  return tok.empty() ? 0 : 1;
}

}  // namespace detail

inline ImageU8 read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("image: cannot open " + path);
  std::string tok;
  if (!detail::pgm_next_token(in, tok) || (tok != "P5" && tok != "P2"))
    throw std::runtime_error("image: not a PGM file: " + path);
  const bool binary = tok == "P5";
  auto next_int = [&](const char* what) {
    if (!detail::pgm_next_token(in, tok))
      throw std::runtime_error(std::string("image: PGM missing ") + what +
                               " in " + path);
    return std::stoi(tok);
  };
  ImageU8 img;
  img.width = next_int("width");
  img.height = next_int("height");
  const int maxval = next_int("maxval");
  if (img.width <= 0 || img.height <= 0 || maxval != 255)
    throw std::runtime_error("image: unsupported PGM header in " + path);
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  if (binary) {
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
      throw std::runtime_error("image: truncated PGM: " + path);
  } else {
    for (auto& p : img.pixels) p = static_cast<uint8_t>(next_int("pixel"));
  }
  return img;
}

inline void write_pgm(const std::string& path, const ImageU8& img) {
  if (img.channels != 1)
    throw std::invalid_argument("image: PGM writer is grayscale only");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("image: cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("image: PGM write failed: " + path);
}

/// Dispatch on file magic: PNG signature or PGM "P5"/"P2".
inline ImageU8 read_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("image: cannot open " + path);
  char head[2] = {0, 0};
  probe.read(head, 2);
  probe.close();
  if (head[0] == 'P' && (head[1] == '5' || head[1] == '2'))
    return read_pgm(path);
  if (static_cast<unsigned char>(head[0]) == 0x89 && head[1] == 'P')
    return read_png(path);
  throw std::runtime_error("image: unsupported format: " + path);
}

// ---------------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------------

/// Decoded image to planar float in [0, 1], converting colour to gray by
/// luma weights or replicating gray to colour as needed.
template <typename T>
std::vector<GrayMap<T>> to_planes(const ImageU8& img, int want_channels) {
  std::vector<GrayMap<T>> planes;
  if (want_channels == 1) {
    GrayMap<T> g(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double v;
        if (img.channels == 3)
          v = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
              0.114 * img.at(y, x, 2);
        else
          v = img.at(y, x, 0);
        g.at(y, x) = static_cast<T>(v / 255.0);
      }
    planes.push_back(std::move(g));
  } else {
    for (int c = 0; c < 3; ++c) {
      GrayMap<T> g(img.height, img.width);
      const int src = img.channels == 3 ? c : 0;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          g.at(y, x) = static_cast<T>(img.at(y, x, src) / 255.0);
      planes.push_back(std::move(g));
    }
  }
  return planes;
}

/// Bilinear resample with half-pixel-centre coordinates and edge clamping.
template <typename T>
GrayMap<T> resize_bilinear(const GrayMap<T>& src, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("resize: non-positive target size");
  if (src.height == out_h && src.width == out_w) return src;
  GrayMap<T> dst(out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
                       wy * ((1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1));
      dst.at(y, x) = static_cast<T>(v);
    }
  }
  return dst;
}

/// (ch, h, w) tensor in [-1, 1] from planar [0, 1] maps.
template <typename T>
Tensor<T> planes_to_tensor(const std::vector<GrayMap<T>>& planes) {
  const int ch = static_cast<int>(planes.size());
  const int h = planes[0].height, w = planes[0].width;
  Tensor<T> t({ch, h, w});
  T* p = t.data();
  for (int c = 0; c < ch; ++c)
    for (int64_t i = 0; i < planes[static_cast<size_t>(c)].size(); ++i)
      *p++ = std::clamp(planes[static_cast<size_t>(c)].v[static_cast<size_t>(i)] *
                            T(2) - T(1),
                        T(-1), T(1));
  return t;
}

/// (ch, h, w) [-1, 1] tensor back to 8-bit, rounding half away from zero.
template <typename T>
ImageU8 tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    throw std::invalid_argument("tensor_to_image: expected (1|3, h, w)");
  ImageU8 img;
  img.channels = t.dim(0);
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(static_cast<size_t>(img.height) * img.width * img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double v01 = (t.at({c, y, x}) + T(1)) / T(2);
        const int q = static_cast<int>(std::lround(std::clamp(v01, 0.0, 1.0) * 255.0));
        img.at(y, x, c) = static_cast<uint8_t>(q);
      }
  return img;
}

// ---------------------------------------------------------------------------
// Saliency output helpers
// ---------------------------------------------------------------------------

/// 8-bit grayscale rendering, values linearly mapped from [0, max].
template <typename T>
ImageU8 gray8_from_map(const GrayMap<T>& map) {
  ImageU8 img;
  img.channels = 1;
  img.height = map.height;
  img.width = map.width;
  img.pixels.resize(static_cast<size_t>(map.size()));
  T mx = T(0);
  for (T v : map.v) mx = std::max(mx, v);
  for (size_t i = 0; i < map.v.size(); ++i) {
    const double scaled = mx > T(0) ? static_cast<double>(map.v[i]) / mx : 0.0;
    img.pixels[i] =
        static_cast<uint8_t>(std::lround(std::clamp(scaled, 0.0, 1.0) * 255.0));
  }
  return img;
}

/// Raw little-endian float32 sidecar, row-major, no header.
template <typename T>
void write_f32_sidecar(const std::string& path, const GrayMap<T>& map) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("image: cannot write " + path);
  for (T v : map.v) {
    const float f = static_cast<float>(v);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    const char bytes[4] = {static_cast<char>(u & 0xff),
                           static_cast<char>((u >> 8) & 0xff),
                           static_cast<char>((u >> 16) & 0xff),
                           static_cast<char>((u >> 24) & 0xff)};
    out.write(bytes, 4);
  }
}

template <typename T>
GrayMap<T> read_f32_sidecar(const std::string& path, int height, int width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("image: cannot read " + path);
  GrayMap<T> map(height, width);
  for (auto& v : map.v) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) throw std::runtime_error("image: truncated sidecar " + path);
    uint32_t u = static_cast<uint32_t>(bytes[0]) |
                 (static_cast<uint32_t>(bytes[1]) << 8) |
                 (static_cast<uint32_t>(bytes[2]) << 16) |
                 (static_cast<uint32_t>(bytes[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    v = static_cast<T>(f);
  }
  return map;
}

namespace detail {

/// Blue-to-red heat ramp over [0, 1].
inline void heat_color(double v, uint8_t rgb[3]) {
  v = std::clamp(v, 0.0, 1.0);
  const double r = std::clamp(1.5 - std::fabs(4.0 * v - 3.0), 0.0, 1.0);
  const double g = std::clamp(1.5 - std::fabs(4.0 * v - 2.0), 0.0, 1.0);
  const double b = std::clamp(1.5 - std::fabs(4.0 * v - 1.0), 0.0, 1.0);
  rgb[0] = static_cast<uint8_t>(std::lround(r * 255.0));
  rgb[1] = static_cast<uint8_t>(std::lround(g * 255.0));
  rgb[2] = static_cast<uint8_t>(std::lround(b * 255.0));
}

}  // namespace detail

/// Heat-coloured saliency blended onto the input image at fixed 0.5 alpha.
template <typename T>
ImageU8 overlay_on_image(const Tensor<T>& input, const GrayMap<T>& map) {
  ImageU8 base = tensor_to_image(input);
  ImageU8 out;
  out.channels = 3;
  out.height = base.height;
  out.width = base.width;
  out.pixels.resize(static_cast<size_t>(out.height) * out.width * 3);
  T mx = T(0);
  for (T v : map.v) mx = std::max(mx, v);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      uint8_t heat[3];
      const double v =
          mx > T(0) ? static_cast<double>(map.at(y, x)) / mx : 0.0;
      detail::heat_color(v, heat);
      for (int c = 0; c < 3; ++c) {
        const uint8_t bg = base.at(y, x, base.channels == 3 ? c : 0);
        out.at(y, x, c) =
            static_cast<uint8_t>(std::lround(0.5 * bg + 0.5 * heat[c]));
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Model input loading
// ---------------------------------------------------------------------------

/// Reads PNG or PGM, converts to img_ch planes, bilinear-resizes to
/// size x size and maps to [-1, 1].
template <typename T = float>
Tensor<T> load_image(const std::string& path, int img_ch = 1, int size = 64) {
  if (img_ch != 1 && img_ch != 3)
    throw std::invalid_argument("load_image: img_ch must be 1 or 3");
  ImageU8 raw = read_image(path);
  std::vector<GrayMap<T>> planes = to_planes<T>(raw, img_ch);
  for (auto& p : planes) p = resize_bilinear(p, size, size);
  return planes_to_tensor(planes);
}

}  // namespace xfr
