#include "pba/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pba/errors.hpp"

namespace pba {

namespace {

uint64_t splitmix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double lattice_value(int64_t ix, int64_t iy, uint64_t seed) {
  uint64_t h = splitmix64(static_cast<uint64_t>(ix) * 0x9E3779B97F4A7C15ull ^
                          static_cast<uint64_t>(iy) * 0xC2B2AE3D27D4EB4Full ^
                          seed);
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double quintic_fade(double t) { return t * t * t * (t * (6 * t - 15) + 10); }

double value_noise(double x, double y, uint64_t seed) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto ix = static_cast<int64_t>(fx);
  const auto iy = static_cast<int64_t>(fy);
  const double tx = quintic_fade(x - fx);
  const double ty = quintic_fade(y - fy);
  const double v00 = lattice_value(ix, iy, seed);
  const double v10 = lattice_value(ix + 1, iy, seed);
  const double v01 = lattice_value(ix, iy + 1, seed);
  const double v11 = lattice_value(ix + 1, iy + 1, seed);
  const double a = v00 + (v10 - v00) * tx;
  const double b = v01 + (v11 - v01) * tx;
  return a + (b - a) * ty;
}

class Texture {
 public:
  Texture(const TextureSpec& spec, uint64_t seed) : spec_(spec), seed_(seed) {
    if (!spec.image_path.empty()) {
      img_ = load_image(spec.image_path);
      have_img_ = true;
    }
  }

  /// Continuous intensity as a function of reference pixel coordinates.
  double operator()(double u, double v) const {
    if (have_img_) {
      const double cu =
          std::clamp(u, 0.0, static_cast<double>(img_.width() - 2));
      const double cv =
          std::clamp(v, 0.0, static_cast<double>(img_.height() - 2));
      return img_.sample_px_unchecked(Vec2(cu, cv));
    }
    const double n = fbm_noise(u / spec_.base_wavelength_px,
                               v / spec_.base_wavelength_px, spec_.octaves,
                               seed_);
    return spec_.lo + (spec_.hi - spec_.lo) * n;
  }

 private:
  TextureSpec spec_;
  uint64_t seed_;
  Image img_;
  bool have_img_{false};
};

class DepthField {
 public:
  DepthField(const GeometrySpec& spec, const Intrinsics& K, uint64_t seed)
      : spec_(spec), K_(K), seed_(seed) {}

  /// Scene depth (reference frame) at a normalized-plane coordinate.
  double operator()(const Vec2& norm) const {
    if (spec_.kind == GeometrySpec::Kind::Plane) return spec_.base_depth;
    const Vec2 px = K_.to_pixel(norm);
    const double n = fbm_noise(px.x() / spec_.wavelength_px,
                               px.y() / spec_.wavelength_px, 2, seed_);
    return spec_.base_depth + spec_.amplitude * (2.0 * n - 1.0);
  }

 private:
  GeometrySpec spec_;
  Intrinsics K_;
  uint64_t seed_;
};

/// Intersect the ray of a target-frame pixel with the depth field and
/// return the reference-frame surface point.  Newton on the target depth;
/// exact in one step for planar scenes.
Vec3 raycast_reference_point(const Vec3& dir, const Vec3& origin,
                             const DepthField& depth, double* s_inout) {
  double s = *s_inout;
  for (int it = 0; it < 50; ++it) {
    const Vec3 Xr = origin + s * dir;
    if (Xr.z() < 1e-6) {
      throw SpecInfeasible("raycast: surface behind reference camera");
    }
    const Vec2 x(Xr.x() / Xr.z(), Xr.y() / Xr.z());
    const double g = Xr.z() - depth(x);
    if (std::abs(g) < 1e-13) break;
    s -= g / dir.z();
  }
  *s_inout = s;
  return origin + s * dir;
}

Image render_target(const SceneSpec& spec, const Pose& pose,
                    const Texture& tex, const DepthField& depth) {
  Image img(spec.width, spec.height, spec.intrinsics);
  const int ss = std::max(1, spec.supersample);
  const double inv_samples = 1.0 / (ss * ss);
  const Mat3 Rt = pose.R.transpose();
  const Vec3 origin = -Rt * pose.t;
  for (int v = 0; v < spec.height; ++v) {
    // Warm-start the ray parameter from the previous sample in the row;
    // neighbouring rays hit nearly the same surface point.
    double s = depth(Vec2(0, 0));
    for (int u = 0; u < spec.width; ++u) {
      double acc = 0.0;
      for (int sv = 0; sv < ss; ++sv) {
        for (int su = 0; su < ss; ++su) {
          const double du = (su + 0.5) / ss - 0.5;
          const double dv = (sv + 0.5) / ss - 0.5;
          const Vec2 norm =
              spec.intrinsics.to_normalized(Vec2(u + du, v + dv));
          const Vec3 dir = Rt * homogeneous(norm);
          const Vec3 Xr = raycast_reference_point(dir, origin, depth, &s);
          const Vec2 ref_px = spec.intrinsics.to_pixel(
              Vec2(Xr.x() / Xr.z(), Xr.y() / Xr.z()));
          acc += tex(ref_px.x(), ref_px.y());
        }
      }
      img.at(u, v) = acc * inv_samples;
    }
  }
  return img;
}

Image render_reference(const SceneSpec& spec, const Texture& tex) {
  Image img(spec.width, spec.height, spec.intrinsics);
  const int ss = std::max(1, spec.supersample);
  const double inv_samples = 1.0 / (ss * ss);
  for (int v = 0; v < spec.height; ++v) {
    for (int u = 0; u < spec.width; ++u) {
      double acc = 0.0;
      for (int sv = 0; sv < ss; ++sv) {
        for (int su = 0; su < ss; ++su) {
          const double du = (su + 0.5) / ss - 0.5;
          const double dv = (sv + 0.5) / ss - 0.5;
          acc += tex(u + du, v + dv);
        }
      }
      img.at(u, v) = acc * inv_samples;
    }
  }
  return img;
}

}  // namespace

double fbm_noise(double x, double y, int octaves, std::uint64_t seed) {
  double sum = 0.0;
  double amp = 1.0;
  double amp_total = 0.0;
  double freq = 1.0;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * value_noise(x * freq, y * freq, seed + 0x100 * o);
    amp_total += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / amp_total;
}

std::vector<Pose> trajectory_poses(const SceneSpec& spec) {
  const auto& traj = spec.trajectory;
  std::vector<Pose> poses(traj.frames);
  if (traj.kind == TrajectorySpec::Kind::Dolly) {
    for (int f = 1; f <= traj.frames; ++f) {
      poses[f - 1].t = traj.extent * (static_cast<double>(f) / traj.frames);
    }
    return poses;
  }
  // Orbit about the point on the optical axis at the base depth; angles
  // symmetric about zero and never exactly zero.
  const Vec3 center(0.0, 0.0, spec.geometry.base_depth);
  const double span = traj.span_deg * M_PI / 180.0;
  for (int f = 1; f <= traj.frames; ++f) {
    const double alpha = span * ((f - 0.5) / traj.frames - 0.5);
    const Mat3 R = so3_exp(Vec3(0.0, alpha, 0.0));
    poses[f - 1].R = R;
    poses[f - 1].t = center - R * center;
  }
  return poses;
}

RenderedScene render_sequence(const SceneSpec& spec) {
  const Texture tex(spec.texture, spec.seed);
  const DepthField depth(spec.geometry, spec.intrinsics,
                         splitmix64(spec.seed ^ 0xD1B54A32D192ED03ull));
  RenderedScene scene;
  scene.spec = spec;
  scene.poses = trajectory_poses(spec);
  scene.ref = render_reference(spec, tex);

  // Anchor selection: strongest local gradient magnitudes with a minimum
  // separation, restricted to points that stay visible in every frame.
  const int margin = spec.patch_radius + 3;
  struct Candidate {
    int u, v;
    double mag;
  };
  std::vector<Candidate> candidates;
  for (int v = margin; v < spec.height - margin; ++v) {
    for (int u = margin; u < spec.width - margin; ++u) {
      const double gx = scene.ref.at(u + 1, v) - scene.ref.at(u - 1, v);
      const double gy = scene.ref.at(u, v + 1) - scene.ref.at(u, v - 1);
      candidates.push_back({u, v, gx * gx + gy * gy});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              return a.mag > b.mag;
            });

  const double min_sep = std::max(
      6.0, 0.4 * std::sqrt(static_cast<double>(spec.width) * spec.height /
                           std::max(1, spec.num_points)));
  std::string first_failure;
  for (const Candidate& c : candidates) {
    if (static_cast<int>(scene.anchors_px.size()) >= spec.num_points) break;
    const Vec2 px(c.u, c.v);
    bool separated = true;
    for (const Vec2& a : scene.anchors_px) {
      if ((a - px).norm() < min_sep) {
        separated = false;
        break;
      }
    }
    if (!separated) continue;
    const Vec2 norm = spec.intrinsics.to_normalized(px);
    const double d = 1.0 / depth(norm);
    bool visible = true;
    for (size_t f = 0; f < scene.poses.size(); ++f) {
      Vec2 warped_px;
      try {
        warped_px =
            spec.intrinsics.to_pixel(project_warp(norm, scene.poses[f], d));
      } catch (const DegenerateDepth&) {
        visible = false;
      }
      if (!visible || warped_px.x() < margin ||
          warped_px.x() > spec.width - 1 - margin || warped_px.y() < margin ||
          warped_px.y() > spec.height - 1 - margin) {
        if (first_failure.empty()) {
          first_failure = "anchor (" + std::to_string(c.u) + ", " +
                          std::to_string(c.v) + ") leaves frame " +
                          std::to_string(f + 1);
        }
        visible = false;
        break;
      }
    }
    if (!visible) continue;
    scene.anchors_px.push_back(px);
    scene.inv_depths.push_back(d);
  }
  if (static_cast<int>(scene.anchors_px.size()) < spec.num_points) {
    throw SpecInfeasible(
        "only " + std::to_string(scene.anchors_px.size()) + " of " +
        std::to_string(spec.num_points) + " anchors are visible over the "
        "trajectory" +
        (first_failure.empty() ? "" : ("; first failure: " + first_failure)));
  }

  // Normalize the mean inverse depth to 1.  Translations absorb the scale,
  // so the rendered images are unaffected.
  double mean = 0.0;
  for (double d : scene.inv_depths) mean += d;
  mean /= static_cast<double>(scene.inv_depths.size());
  for (double& d : scene.inv_depths) d /= mean;
  for (Pose& p : scene.poses) p.t *= mean;

  scene.targets.reserve(scene.poses.size());
  for (const Pose& pose : scene.poses) {
    // Rendering uses the normalized parameters directly; the raycast works
    // in the rescaled world.
    GeometrySpec geo = spec.geometry;
    geo.base_depth *= mean;
    geo.amplitude *= mean;
    const DepthField scaled_depth(geo, spec.intrinsics,
                                  splitmix64(spec.seed ^
                                             0xD1B54A32D192ED03ull));
    scene.targets.push_back(render_target(spec, pose, tex, scaled_depth));
  }
  return scene;
}

void perturb_parameters(std::vector<Pose>& poses,
                        std::vector<double>& inv_depths, double sigma,
                        std::uint64_t seed) {
  if (sigma <= 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (Pose& pose : poses) {
    Vec6 delta;
    for (int i = 0; i < 6; ++i) delta(i) = gauss(rng);
    pose = pose_boxplus(pose, delta);
  }
  for (double& d : inv_depths) d += gauss(rng);
}

}  // namespace pba
