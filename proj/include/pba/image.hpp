#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "pba/errors.hpp"
#include "pba/geometry.hpp"

namespace pba {

/// Pinhole intrinsics mapping normalized plane coordinates to pixels:
/// u = fx*x + cx, v = fy*y + cy.
struct Intrinsics {
  double fx{1.0}, fy{1.0}, cx{0.0}, cy{0.0};

  Vec2 to_pixel(const Vec2& norm) const {
    return Vec2(fx * norm.x() + cx, fy * norm.y() + cy);
  }
  Vec2 to_normalized(const Vec2& px) const {
    return Vec2((px.x() - cx) / fx, (px.y() - cy) / fy);
  }
};

/// Grayscale image with intensities in [0,1], row-major, plus intrinsics.
/// Immutable contract after construction/load: solvers and renderers only
/// read, so concurrent access is safe.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Intrinsics K = {})
      : width_(width), height_(height), K_(K),
        data_(static_cast<size_t>(width) * height, 0.0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  const Intrinsics& intrinsics() const { return K_; }
  void set_intrinsics(const Intrinsics& K) { K_ = K; }

  double& at(int u, int v) { return data_[static_cast<size_t>(v) * width_ + u]; }
  double at(int u, int v) const {
    return data_[static_cast<size_t>(v) * width_ + u];
  }
  const std::vector<double>& data() const { return data_; }

  /// Bilinear sampling is valid on [0, W-2] x [0, H-2] in pixel coords.
  bool in_bounds_px(const Vec2& px) const {
    return px.x() >= 0.0 && px.x() <= width_ - 2 && px.y() >= 0.0 &&
           px.y() <= height_ - 2;
  }
  bool in_bounds(const Vec2& norm) const {
    return in_bounds_px(K_.to_pixel(norm));
  }

  /// Bilinear blend of the 4 neighboring pixels; no bounds check.
  double sample_px_unchecked(const Vec2& px) const;

 private:
  int width_{0}, height_{0};
  Intrinsics K_{};
  std::vector<double> data_;
};

/// Bilinear sample at a normalized-plane point. Throws OutOfBounds.
double sample_bilinear(const Image& img, const Vec2& norm_pt);

/// Image gradient (dI/dx, dI/dy) in intensity-per-normalized-coordinate
/// units: central differences of the bilinear interpolant at +-half-pixel,
/// chain-ruled through the intrinsics. Throws OutOfBounds when the sample
/// footprint leaves the image.
Vec2 image_gradient(const Image& img, const Vec2& norm_pt);

/// Integer pixel offsets of a residual patch relative to its anchor.
struct PatchPattern {
  std::vector<Eigen::Vector2i> offsets;

  /// Dense square patch of side 2*radius+1, anchor included.
  static PatchPattern square(int radius);
  int radius() const;
};

/// Binary PGM (P5), 8- or 16-bit, normalized to [0,1] on load.
Image load_pgm(const std::string& path);
/// Writes 16-bit P5 to preserve synthetic-image fidelity.
void save_pgm(const Image& img, const std::string& path);

/// 8- or 16-bit grayscale PNG, normalized to [0,1].
Image load_png(const std::string& path);

/// Dispatch by file extension (.pgm / .png).
Image load_image(const std::string& path);

}  // namespace pba
