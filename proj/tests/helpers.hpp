#pragma once

#include <Eigen/Dense>
#include <random>

#include "pba/geometry.hpp"
#include "pba/image.hpp"
#include "pba/solver.hpp"

namespace pba::test {

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 random_vec3(std::mt19937_64& rng, double scale) {
  return Vec3(uniform(rng, -scale, scale), uniform(rng, -scale, scale),
              uniform(rng, -scale, scale));
}

inline Pose random_pose(std::mt19937_64& rng, double rot_scale,
                        double trans_scale) {
  Pose pose;
  pose.R = so3_exp(random_vec3(rng, rot_scale));
  pose.t = random_vec3(rng, trans_scale);
  return pose;
}

/// 20-term Taylor series of the matrix exponential; independent oracle for
/// the closed-form exp maps.
inline Eigen::MatrixXd matrix_exp_taylor(const Eigen::MatrixXd& A) {
  Eigen::MatrixXd sum = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::MatrixXd term = sum;
  for (int k = 1; k <= 20; ++k) {
    term = (term * A) / k;
    sum += term;
  }
  return sum;
}

/// Central-difference Jacobian of an R^n -> R^m function.
template <typename F>
Eigen::MatrixXd fd_jacobian(const F& f, const Eigen::VectorXd& x0, int m,
                            double h = 1e-6) {
  const int n = static_cast<int>(x0.size());
  Eigen::MatrixXd J(m, n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd hi = x0, lo = x0;
    hi(i) += h;
    lo(i) -= h;
    J.col(i) = (f(hi) - f(lo)) / (2 * h);
  }
  return J;
}

/// Straightforward double-loop Huber energy, independent of energy_eval.
/// Walks points, frames, and patch offsets, warping each template pixel
/// and skipping anything the target cannot sample.
inline double naive_energy(const ProblemState& st, double gamma) {
  double total = 0.0;
  const auto& K = st.ref.intrinsics();
  for (size_t n = 0; n < st.anchors_px.size(); ++n) {
    for (size_t f = 0; f < st.targets.size(); ++f) {
      for (const auto& off : st.patch.offsets) {
        const Vec2 px = st.anchors_px[n] + Vec2(off.x(), off.y());
        const Vec2 x = K.to_normalized(px);
        if (!st.ref.in_bounds_px(px)) continue;
        Vec2 warped;
        try {
          warped = project_warp(x, st.poses[f], st.inv_depths[n]);
        } catch (const DegenerateDepth&) {
          continue;
        }
        const Vec2 wpx = st.targets[f].intrinsics().to_pixel(warped);
        if (wpx.x() < 1.0 || wpx.x() > st.targets[f].width() - 3 ||
            wpx.y() < 1.0 || wpx.y() > st.targets[f].height() - 3) {
          continue;
        }
        const double r = st.ref.sample_px_unchecked(px) -
                         st.targets[f].sample_px_unchecked(wpx);
        const double a = std::abs(r);
        total += a <= gamma ? 0.5 * r * r : gamma * (a - 0.5 * gamma);
      }
    }
  }
  return total;
}

/// Golden-section minimization of a unimodal scalar function.
template <typename F>
double golden_section_min(const F& f, double a, double b, double tol = 1e-12) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  while (b - a > tol) {
    if (f(c) < f(d)) {
      b = d;
      d = c;
      c = b - phi * (b - a);
    } else {
      a = c;
      c = d;
      d = a + phi * (b - a);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace pba::test
