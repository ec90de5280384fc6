#include "pba/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "pba/geometry.hpp"
#include "pba/image.hpp"
#include "pba/synth.hpp"

namespace pba {

namespace {

constexpr double kFdStep = 1e-4;

double rel_err(const Eigen::Matrix<double, 2, 7>& analytic,
               const Eigen::Matrix<double, 2, 7>& fd) {
  return (analytic - fd).cwiseAbs().maxCoeff() /
         std::max(1.0, analytic.cwiseAbs().maxCoeff());
}

}  // namespace

double GradCheckReport::max_rel_err() const {
  return std::max({max_fc_rel_err, max_ic_rel_err, max_img_rel_err});
}

bool GradCheckReport::pass(double tol) const {
  return degeneracy_confirmed && max_rel_err() <= tol;
}

std::string GradCheckReport::summary(double tol) const {
  std::ostringstream os;
  os << "gradcheck over " << trials << " random configurations\n"
     << "  FC warp Jacobian   max rel err: " << max_fc_rel_err << "\n"
     << "  IC proxy Jacobian  max rel err: " << max_ic_rel_err << "\n"
     << "  image gradient     max rel err: " << max_img_rel_err << "\n"
     << "  identity degeneracy (t0=0 => depth column 0): "
     << (degeneracy_confirmed ? "degenerate (expected)" : "VIOLATED") << "\n"
     << "  tolerance " << tol << ": " << (pass(tol) ? "PASS" : "FAIL") << "\n";
  return os.str();
}

GradCheckReport run_gradcheck(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  GradCheckReport report;
  report.trials = trials;
  report.degeneracy_confirmed = true;

  // Texture for the image-gradient sweep.
  Intrinsics K{50.0, 50.0, 31.5, 31.5};
  Image img(64, 64, K);
  for (int v = 0; v < 64; ++v) {
    for (int u = 0; u < 64; ++u) {
      img.at(u, v) = fbm_noise(u / 9.0, v / 9.0, 3, seed ^ 0xABCD);
    }
  }

  for (int trial = 0; trial < trials; ++trial) {
    const Vec2 x(0.4 * unit(rng), 0.4 * unit(rng));
    Pose pose;
    pose.R = so3_exp(Vec3(unit(rng), unit(rng), unit(rng)) * 0.3);
    pose.t = Vec3(unit(rng), unit(rng), unit(rng)) * 0.3;
    // keep the initial translation clearly non-zero for depth observability
    if (pose.t.norm() < 0.1) pose.t *= 0.1 / std::max(pose.t.norm(), 1e-12);
    const double d = 0.4 + 2.0 * u01(rng);
    if ((pose.R * homogeneous(x) + d * pose.t).z() < 0.2) {
      continue;
    }

    // Forwards warp Jacobian vs central differences.
    {
      const auto J = fc_warp_jacobian(x, pose, d);
      Eigen::Matrix<double, 2, 7> fd;
      for (int i = 0; i < 6; ++i) {
        Vec6 delta = Vec6::Zero();
        delta(i) = kFdStep;
        const Vec2 hi = project_warp(x, pose_boxplus(pose, delta), d);
        delta(i) = -kFdStep;
        const Vec2 lo = project_warp(x, pose_boxplus(pose, delta), d);
        fd.col(i) = (hi - lo) / (2 * kFdStep);
      }
      fd.col(6) = (project_warp(x, pose, d + kFdStep) -
                   project_warp(x, pose, d - kFdStep)) /
                  (2 * kFdStep);
      report.max_fc_rel_err =
          std::max(report.max_fc_rel_err, rel_err(J.image, fd));
    }

    // IC proxy Jacobian vs central differences of the gradient form.
    {
      const ProxyConstants pc = make_proxy_constants(x, pose, d);
      const auto J = ic_jacobian_row(x, pc);
      Eigen::Matrix<double, 2, 7> fd;
      for (int i = 0; i < 7; ++i) {
        Vec7 dp = Vec7::Zero();
        dp(i) = kFdStep;
        const Vec2 hi = proxy_warp_grad_form(x, pc, dp);
        dp(i) = -kFdStep;
        const Vec2 lo = proxy_warp_grad_form(x, pc, dp);
        fd.col(i) = (hi - lo) / (2 * kFdStep);
      }
      report.max_ic_rel_err =
          std::max(report.max_ic_rel_err, rel_err(J.image, fd));
      if (J.image.col(6).norm() == 0.0) {
        report.degeneracy_confirmed = false;  // must be non-zero here
      }
    }

    // Image gradient vs in-cell finite differences.  The half-pixel central
    // difference and the local interpolant slope agree exactly only where
    // the footprint spans a single bilinear cell, i.e. at half-integer
    // pixel coordinates.
    {
      const double u = 4.0 + 55.0 * u01(rng);
      const double v = 4.0 + 55.0 * u01(rng);
      const Vec2 px(std::floor(u) + 0.5, std::floor(v) + 0.5);
      const Vec2 p = K.to_normalized(px);
      const Vec2 g = image_gradient(img, p);
      const double h = 1e-3 / K.fx;  // 1e-3 px
      Eigen::Vector2d fd;
      fd.x() = (sample_bilinear(img, p + Vec2(h, 0)) -
                sample_bilinear(img, p - Vec2(h, 0))) /
               (2 * h);
      fd.y() = (sample_bilinear(img, p + Vec2(0, h)) -
                sample_bilinear(img, p - Vec2(0, h))) /
               (2 * h);
      const double err =
          (g - fd).cwiseAbs().maxCoeff() / std::max(1.0, g.cwiseAbs().maxCoeff());
      report.max_img_rel_err = std::max(report.max_img_rel_err, err);
    }

    // Degeneracy table: zero initial translation kills the depth column of
    // both formulations, exactly.
    {
      Pose ident_t = pose;
      ident_t.t.setZero();
      const auto Jfc = fc_warp_jacobian(x, ident_t, d);
      const ProxyConstants pc0 = make_proxy_constants(x, ident_t, d);
      const auto Jic = ic_jacobian_row(x, pc0);
      if (Jfc.image.col(6).norm() != 0.0 || Jic.image.col(6).norm() != 0.0) {
        report.degeneracy_confirmed = false;
      }
    }
  }
  return report;
}

}  // namespace pba
