#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pba/geometry.hpp"
#include "pba/image.hpp"

namespace pba {

/// Procedural texture: multi-octave value noise over reference pixel
/// coordinates, remapped into [lo, hi] so gradients never vanish.
struct TextureSpec {
  int octaves{4};
  double base_wavelength_px{64.0};
  double lo{0.15};
  double hi{0.85};
  std::string image_path;  // when set, sample this image instead of noise
};

struct GeometrySpec {
  enum class Kind { Plane, Heightfield };
  Kind kind{Kind::Heightfield};
  double base_depth{1.0};
  double amplitude{0.1};
  double wavelength_px{160.0};
};

struct TrajectorySpec {
  enum class Kind { Orbit, Dolly };
  Kind kind{Kind::Orbit};
  int frames{20};
  double span_deg{10.0};            // orbit
  Vec3 extent{Vec3(0.1, 0.0, 0.0)}; // dolly: total camera displacement
};

struct SceneSpec {
  int width{640};
  int height{480};
  Intrinsics intrinsics{525.0, 525.0, 319.5, 239.5};
  TextureSpec texture;
  GeometrySpec geometry;
  TrajectorySpec trajectory;
  int num_points{200};
  int patch_radius{1};
  std::uint64_t seed{7};
  int supersample{2};  // samples per pixel axis, box-filtered
};

/// A rendered sequence with exact ground truth.  Poses map reference-frame
/// points into each target frame; mean inverse depth is normalized to 1.
struct RenderedScene {
  Image ref;
  std::vector<Image> targets;
  std::vector<Pose> poses;
  std::vector<double> inv_depths;
  std::vector<Vec2> anchors_px;
  SceneSpec spec;
};

/// Renders the sequence by intersecting each target-pixel ray with the
/// exact scene geometry and evaluating the continuous texture there.
/// Throws SpecInfeasible when the visibility constraints cannot be met,
/// naming the first out-of-view anchor.
RenderedScene render_sequence(const SceneSpec& spec);

/// Ground-truth poses of the spec's trajectory (before depth-mean
/// normalization rescales translations).
std::vector<Pose> trajectory_poses(const SceneSpec& spec);

/// i.i.d. Gaussian noise on every free parameter: the 6 tangent coordinates
/// of each target pose (applied by boxplus) and each inverse depth.
/// Deterministic for a fixed seed; sigma = 0 is the identity.
void perturb_parameters(std::vector<Pose>& poses,
                        std::vector<double>& inv_depths, double sigma,
                        std::uint64_t seed);

/// Deterministic multi-octave value noise in [0, 1]; exposed for tests.
double fbm_noise(double x, double y, int octaves, std::uint64_t seed);

}  // namespace pba
