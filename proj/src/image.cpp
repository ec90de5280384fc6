#include "pba/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>

namespace pba {

double Image::sample_px_unchecked(const Vec2& px) const {
  const int u0 = static_cast<int>(std::floor(px.x()));
  const int v0 = static_cast<int>(std::floor(px.y()));
  const double a = px.x() - u0;
  const double b = px.y() - v0;
  const double i00 = at(u0, v0);
  const double i10 = at(u0 + 1, v0);
  const double i01 = at(u0, v0 + 1);
  const double i11 = at(u0 + 1, v0 + 1);
  return (1 - a) * (1 - b) * i00 + a * (1 - b) * i10 + (1 - a) * b * i01 +
         a * b * i11;
}

double sample_bilinear(const Image& img, const Vec2& norm_pt) {
  const Vec2 px = img.intrinsics().to_pixel(norm_pt);
  if (!img.in_bounds_px(px)) {
    throw OutOfBounds("sample_bilinear: pixel (" + std::to_string(px.x()) +
                      ", " + std::to_string(px.y()) + ") out of bounds");
  }
  return img.sample_px_unchecked(px);
}

Vec2 image_gradient(const Image& img, const Vec2& norm_pt) {
  const Vec2 px = img.intrinsics().to_pixel(norm_pt);
  const Vec2 half_u(0.5, 0.0);
  const Vec2 half_v(0.0, 0.5);
  if (!img.in_bounds_px(px - half_u) || !img.in_bounds_px(px + half_u) ||
      !img.in_bounds_px(px - half_v) || !img.in_bounds_px(px + half_v)) {
    throw OutOfBounds("image_gradient: footprint out of bounds");
  }
  const double du =
      img.sample_px_unchecked(px + half_u) - img.sample_px_unchecked(px - half_u);
  const double dv =
      img.sample_px_unchecked(px + half_v) - img.sample_px_unchecked(px - half_v);
  return Vec2(du * img.intrinsics().fx, dv * img.intrinsics().fy);
}

PatchPattern PatchPattern::square(int radius) {
  PatchPattern p;
  p.offsets.emplace_back(0, 0);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx == 0 && dy == 0) continue;
      p.offsets.emplace_back(dx, dy);
    }
  }
  return p;
}

int PatchPattern::radius() const {
  int r = 0;
  for (const auto& o : offsets) {
    r = std::max(r, std::max(std::abs(o.x()), std::abs(o.y())));
  }
  return r;
}

namespace {

int pnm_next_int(std::istream& in) {
  // Skips whitespace and '#' comments.
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  in >> value;
  return value;
}

}  // namespace

Image load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw Error("load_pgm: not a binary PGM: " + path);
  const int w = pnm_next_int(in);
  const int h = pnm_next_int(in);
  const int maxval = pnm_next_int(in);
  in.get();  // single whitespace before raster
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw Error("load_pgm: bad header in " + path);
  }
  Image img(w, h);
  const double scale = 1.0 / maxval;
  if (maxval < 256) {
    std::vector<uint8_t> row(static_cast<size_t>(w));
    for (int v = 0; v < h; ++v) {
      in.read(reinterpret_cast<char*>(row.data()), w);
      for (int u = 0; u < w; ++u) img.at(u, v) = row[u] * scale;
    }
  } else {
    std::vector<uint8_t> row(static_cast<size_t>(w) * 2);
    for (int v = 0; v < h; ++v) {
      in.read(reinterpret_cast<char*>(row.data()), 2 * w);
      for (int u = 0; u < w; ++u) {
        img.at(u, v) = ((row[2 * u] << 8) | row[2 * u + 1]) * scale;
      }
    }
  }
  if (!in) throw Error("load_pgm: truncated raster in " + path);
  return img;
}

void save_pgm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_pgm: cannot open " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n65535\n";
  std::vector<uint8_t> row(static_cast<size_t>(img.width()) * 2);
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      const double clamped = std::clamp(img.at(u, v), 0.0, 1.0);
      const auto q = static_cast<uint16_t>(std::lround(clamped * 65535.0));
      row[2 * u] = static_cast<uint8_t>(q >> 8);
      row[2 * u + 1] = static_cast<uint8_t>(q & 0xff);
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw Error("save_pgm: write failed for " + path);
}

Image load_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"),
                                           &std::fclose);
  if (!fp) throw Error("load_png: cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("load_png: decode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) {
    png_set_rgb_to_gray(png, 1, -1, -1);
  }
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const size_t stride = png_get_rowbytes(png, info);

  Image img(w, h);
  std::vector<uint8_t> row(stride);
  const double scale = depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
  for (int v = 0; v < h; ++v) {
    png_read_row(png, row.data(), nullptr);
    for (int u = 0; u < w; ++u) {
      img.at(u, v) = depth == 16
                         ? ((row[2 * u] << 8) | row[2 * u + 1]) * scale
                         : row[u] * scale;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image load_image(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") {
    return load_png(path);
  }
  return load_pgm(path);
}

}  // namespace pba
