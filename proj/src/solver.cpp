#include "pba/solver.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace pba {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Residuals need a 1px margin so the half-pixel gradient footprint of the
// forwards path stays in bounds.
bool in_bounds_margin(const Image& img, const Vec2& px) {
  return px.x() >= 1.0 && px.x() <= img.width() - 3 && px.y() >= 1.0 &&
         px.y() <= img.height() - 3;
}

struct TemplateData {
  std::vector<Vec2> norm;  // n*P + k, normalized template coords
  std::vector<Vec2> px;
  std::vector<double> val;
};

TemplateData build_template(const ProblemState& st) {
  const int N = st.num_points();
  const int P = static_cast<int>(st.patch.offsets.size());
  TemplateData tpl;
  tpl.norm.resize(static_cast<size_t>(N) * P);
  tpl.px.resize(static_cast<size_t>(N) * P);
  tpl.val.resize(static_cast<size_t>(N) * P);
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < P; ++k) {
      const Vec2 px = st.anchors_px[n] + st.patch.offsets[k].cast<double>();
      if (!in_bounds_margin(st.ref, px)) {
        throw OutOfBounds("template patch pixel outside reference image");
      }
      const size_t i = static_cast<size_t>(n) * P + k;
      tpl.px[i] = px;
      tpl.norm[i] = st.ref.intrinsics().to_normalized(px);
      tpl.val[i] = st.ref.sample_px_unchecked(px);
    }
  }
  return tpl;
}

struct PassResult {
  std::vector<double> r;        // flat (n*F + f)*P + k
  std::vector<uint8_t> active;
  double energy{0.0};
  int num_active{0};
  int num_oob{0};
};

PassResult residual_pass(const ProblemState& st, const TemplateData& tpl,
                         const std::vector<Pose>& poses,
                         const std::vector<double>& depths,
                         const HuberLoss& huber,
                         const std::vector<uint8_t>* mask) {
  const int F = st.num_frames();
  const int N = st.num_points();
  const int P = static_cast<int>(st.patch.offsets.size());
  PassResult out;
  out.r.assign(static_cast<size_t>(N) * F * P, 0.0);
  out.active.assign(out.r.size(), 0);
  for (int n = 0; n < N; ++n) {
    for (int f = 0; f < F; ++f) {
      const Image& img = st.targets[f];
      for (int k = 0; k < P; ++k) {
        const size_t idx = (static_cast<size_t>(n) * F + f) * P + k;
        if (mask && !(*mask)[idx]) continue;
        Vec2 warped;
        try {
          warped = project_warp(tpl.norm[static_cast<size_t>(n) * P + k],
                                poses[f], depths[n]);
        } catch (const DegenerateDepth&) {
          ++out.num_oob;
          continue;
        }
        const Vec2 px = img.intrinsics().to_pixel(warped);
        if (!in_bounds_margin(img, px)) {
          ++out.num_oob;
          continue;
        }
        const double r = tpl.val[static_cast<size_t>(n) * P + k] -
                         img.sample_px_unchecked(px);
        out.r[idx] = r;
        out.active[idx] = 1;
        out.energy += huber.loss(r);
        ++out.num_active;
      }
    }
  }
  return out;
}

double max_reprojection_update_px(const ProblemState& st,
                                  const TemplateData& tpl,
                                  const std::vector<Pose>& old_poses,
                                  const std::vector<double>& old_depths,
                                  const std::vector<Pose>& new_poses,
                                  const std::vector<double>& new_depths) {
  const int F = st.num_frames();
  const int N = st.num_points();
  const int P = static_cast<int>(st.patch.offsets.size());
  double max_upd = 0.0;
  for (int n = 0; n < N; ++n) {
    const Vec2& x = tpl.norm[static_cast<size_t>(n) * P];  // anchor
    for (int f = 0; f < F; ++f) {
      try {
        const Vec2 a = st.targets[f].intrinsics().to_pixel(
            project_warp(x, old_poses[f], old_depths[n]));
        const Vec2 b = st.targets[f].intrinsics().to_pixel(
            project_warp(x, new_poses[f], new_depths[n]));
        max_upd = std::max(max_upd, (a - b).norm());
      } catch (const DegenerateDepth&) {
        // a point at/behind the camera cannot report a finite update
        max_upd = std::numeric_limits<double>::infinity();
      }
    }
  }
  return max_upd;
}

// Rescale so the mean inverse depth is 1; translations absorb the scale,
// leaving every warp (and hence the energy) unchanged.
void normalize_depth_gauge(std::vector<Pose>& poses,
                           std::vector<double>& depths) {
  double mean = 0.0;
  for (double d : depths) mean += d;
  mean /= static_cast<double>(depths.size());
  if (mean <= 0.0 || !std::isfinite(mean)) return;
  for (double& d : depths) d /= mean;
  for (Pose& p : poses) p.t *= mean;
}

}  // namespace

Eigen::MatrixXd BlockHessian::dense(double lambda_add) const {
  const int dim = 6 * F + N;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
  for (int f = 0; f < F; ++f) {
    H.block<6, 6>(6 * f, 6 * f) = pose_pose[f];
  }
  for (int n = 0; n < N; ++n) {
    H(6 * F + n, 6 * F + n) = depth_depth[n];
    for (int f = 0; f < F; ++f) {
      const auto& B = pose_depth[static_cast<size_t>(n) * F + f];
      H.block<6, 1>(6 * f, 6 * F + n) = B;
      H.block<1, 6>(6 * F + n, 6 * f) = B.transpose();
    }
  }
  H.diagonal().array() += lambda_add;
  return H;
}

Eigen::VectorXd solve_normal_equations_schur(const BlockHessian& H,
                                             const Eigen::VectorXd& g,
                                             double lambda) {
  const int F = H.F;
  const int N = H.N;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(6 * F, 6 * F);
  Eigen::VectorXd rhs = -g.head(6 * F);
  for (int f = 0; f < F; ++f) {
    A.block<6, 6>(6 * f, 6 * f) =
        H.pose_pose[f] + lambda * Mat66::Identity();
  }
  for (int n = 0; n < N; ++n) {
    const double D = H.depth_depth[n] + lambda;
    const double gd = g(6 * F + n);
    for (int f = 0; f < F; ++f) {
      const auto& Bf = H.pose_depth[static_cast<size_t>(n) * F + f];
      if (Bf.isZero(0.0)) continue;
      rhs.segment<6>(6 * f) += Bf * (gd / D);
      for (int f2 = 0; f2 < F; ++f2) {
        const auto& Bf2 = H.pose_depth[static_cast<size_t>(n) * F + f2];
        if (Bf2.isZero(0.0)) continue;
        A.block<6, 6>(6 * f, 6 * f2) -= Bf * Bf2.transpose() / D;
      }
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success) {
    throw Error("SingularHessian: Schur-reduced factorization failed");
  }
  const Eigen::VectorXd xp = ldlt.solve(rhs);
  if (!xp.allFinite()) {
    throw Error("SingularHessian: non-finite pose solution");
  }
  Eigen::VectorXd dx(6 * F + N);
  dx.head(6 * F) = xp;
  for (int n = 0; n < N; ++n) {
    const double D = H.depth_depth[n] + lambda;
    double acc = -g(6 * F + n);
    for (int f = 0; f < F; ++f) {
      const auto& Bf = H.pose_depth[static_cast<size_t>(n) * F + f];
      acc -= Bf.dot(xp.segment<6>(6 * f));
    }
    dx(6 * F + n) = acc / D;
  }
  if (!dx.allFinite()) {
    throw Error("SingularHessian: non-finite depth solution");
  }
  return dx;
}

Eigen::VectorXd solve_normal_equations_dense(const BlockHessian& H,
                                             const Eigen::VectorXd& g,
                                             double lambda) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(H.dense(lambda));
  if (ldlt.info() != Eigen::Success) {
    throw Error("SingularHessian: dense factorization failed");
  }
  Eigen::VectorXd dx = ldlt.solve(-g);
  if (!dx.allFinite()) {
    throw Error("SingularHessian: non-finite dense solution");
  }
  return dx;
}

EnergyResult energy_eval(const ProblemState& state, const HuberLoss& huber,
                         const std::vector<uint8_t>* mask) {
  const TemplateData tpl = build_template(state);
  PassResult pass = residual_pass(state, tpl, state.poses, state.inv_depths,
                                  huber, mask);
  if (pass.num_active == 0) {
    throw EmptyProblem();
  }
  EnergyResult out;
  out.energy = pass.energy;
  out.residuals = std::move(pass.r);
  out.active = std::move(pass.active);
  out.num_active = pass.num_active;
  out.num_out_of_bounds = pass.num_oob;
  return out;
}

// ---------------------------------------------------------------------------
// Inverse compositional solver
// ---------------------------------------------------------------------------

IcSolver::IcSolver(ProblemState state, SolverConfig config)
    : state_(std::move(state)), config_(config), huber_{config.gamma},
      lambda_(config.lambda0) {}

void IcSolver::build() {
  if (built_) return;
  const int F = state_.num_frames();
  const int N = state_.num_points();
  const int P = static_cast<int>(state_.patch.offsets.size());
  const TemplateData tpl = build_template(state_);
  tpl_norm_ = tpl.norm;
  tpl_val_ = tpl.val;
  pose0_ = state_.poses;
  d0_ = state_.inv_depths;

  for (int f = 0; f < F; ++f) {
    if (pose0_[f].t.norm() < 1e-9) {
      warnings_.push_back("frame " + std::to_string(f) +
                          ": zero initial translation, inverse depth "
                          "unobservable from this frame");
    }
  }

  // Initial residual pass defines the sticky mask and the frozen weights W0.
  PassResult pass0 = residual_pass(state_, tpl, pose0_, d0_, huber_, nullptr);
  if (pass0.num_active == 0) throw EmptyProblem();
  mask_ = pass0.active;
  w0_.assign(pass0.r.size(), 0.0);
  for (size_t i = 0; i < pass0.r.size(); ++i) {
    if (mask_[i]) w0_[i] = huber_.weight(pass0.r[i]);
  }

  // Frozen Jacobian rows: template gradient chained with the proxy-warp
  // Jacobian, with per-pixel proxy constants (zbar0 varies over the patch).
  anchor_pc_.assign(static_cast<size_t>(N) * F, ProxyConstants{});
  jrow_.assign(static_cast<size_t>(N) * F * P,
               Eigen::Matrix<double, 7, 1>::Zero());
  hessian_.F = F;
  hessian_.N = N;
  hessian_.lambda = config_.lambda0;
  hessian_.pose_pose.assign(F, Mat66::Zero());
  hessian_.depth_depth.assign(N, 0.0);
  hessian_.pose_depth.assign(static_cast<size_t>(N) * F,
                             Eigen::Matrix<double, 6, 1>::Zero());

  // Template gradients are frame-independent: compute them once per pixel.
  std::vector<Vec2> tpl_grad(static_cast<size_t>(N) * P, Vec2::Zero());
  std::vector<uint8_t> grad_ok(tpl_grad.size(), 0);
  for (size_t i = 0; i < tpl_grad.size(); ++i) {
    try {
      tpl_grad[i] = image_gradient(state_.ref, tpl_norm_[i]);
      grad_ok[i] = 1;
    } catch (const Error&) {
    }
  }

  for (int n = 0; n < N; ++n) {
    for (int f = 0; f < F; ++f) {
      const size_t b = static_cast<size_t>(n) * F + f;
      try {
        anchor_pc_[b] = make_proxy_constants(
            tpl_norm_[static_cast<size_t>(n) * P], pose0_[f], d0_[n]);
      } catch (const Error&) {
        for (int k = 0; k < P; ++k) mask_[b * P + k] = 0;
        continue;
      }
      const Mat3& R0 = pose0_[f].R;
      const Vec3& t0 = pose0_[f].t;
      const double d0 = d0_[n];
      for (int k = 0; k < P; ++k) {
        const size_t idx = b * P + k;
        if (!mask_[idx]) continue;
        const size_t pk = static_cast<size_t>(n) * P + k;
        if (!grad_ok[pk]) {
          mask_[idx] = 0;
          continue;
        }
        // Closed-form chained row, equivalent to
        //   grad^T * ic_jacobian_row(x, make_proxy_constants(x, pose0, d0))
        // using that the pre-projection point is zbar0 * homogeneous(x), so
        // the projection Jacobian collapses to (1/zbar0)[I | -x].
        const Vec2& x = tpl_norm_[pk];
        const Vec3 xh = homogeneous(x);
        const Vec3 R0x = R0 * xh;
        const double vz = R0x.z() + d0 * t0.z();
        if (vz < kDegenerateDepthEps) {
          mask_[idx] = 0;
          continue;
        }
        const double zbar0 = vz / d0;
        const Vec2& grad = tpl_grad[pk];
        const Vec3 g3(grad.x() / zbar0, grad.y() / zbar0,
                      -(grad.x() * x.x() + grad.y() * x.y()) / zbar0);
        // m3^T = g3^T M with M = R0^T (zbar0 I - [0 0 t0]).
        const Vec3 a = R0 * g3;
        const Vec3 m3 = zbar0 * a - Vec3(0.0, 0.0, a.dot(t0));
        auto& row = jrow_[idx];
        row.head<3>() = R0x.cross(m3);  // = -m3^T skew(R0 x~)
        row.segment<3>(3) = d0 * m3;
        row(6) = m3.dot(t0);
        const double w = w0_[idx];
        const auto jp = row.head<6>();
        const double jd = row(6);
        hessian_.pose_pose[f].noalias() += w * jp * jp.transpose();
        hessian_.depth_depth[n] += w * jd * jd;
        hessian_.pose_depth[b].noalias() += w * jp * jd;
      }
    }
  }
  for (int n = 0; n < N; ++n) {
    if (hessian_.depth_depth[n] == 0.0) {
      warnings_.push_back("point " + std::to_string(n) +
                          ": zero depth Hessian entry (unobservable depth)");
    }
  }
  builds_ = 1;
  factorize(lambda_);
  built_ = true;
}

void IcSolver::factorize(double lambda) {
  // Retries with increased damping until the reduced system factorizes.
  for (int attempt = 0; attempt < 60; ++attempt) {
    ++factorizations_;
    const int F = hessian_.F;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(6 * F, 6 * F);
    for (int f = 0; f < F; ++f) {
      A.block<6, 6>(6 * f, 6 * f) =
          hessian_.pose_pose[f] + lambda * Mat66::Identity();
    }
    for (int n = 0; n < hessian_.N; ++n) {
      const double D = hessian_.depth_depth[n] + lambda;
      for (int f = 0; f < F; ++f) {
        const auto& Bf = hessian_.pose_depth[static_cast<size_t>(n) * F + f];
        if (Bf.isZero(0.0)) continue;
        for (int f2 = 0; f2 < F; ++f2) {
          const auto& Bf2 =
              hessian_.pose_depth[static_cast<size_t>(n) * F + f2];
          if (Bf2.isZero(0.0)) continue;
          A.block<6, 6>(6 * f, 6 * f2) -= Bf * Bf2.transpose() / D;
        }
      }
    }
    reduced_ldlt_.compute(A);
    if (reduced_ldlt_.info() == Eigen::Success) {
      lambda_ = lambda;
      hessian_.lambda = lambda;
      return;
    }
    lambda *= 10.0;
  }
  throw Error("SingularHessian: damping retries exhausted");
}

Eigen::VectorXd IcSolver::solve_step(const Eigen::VectorXd& g) {
  const int F = hessian_.F;
  const int N = hessian_.N;
  Eigen::VectorXd rhs = -g.head(6 * F);
  for (int n = 0; n < N; ++n) {
    const double D = hessian_.depth_depth[n] + lambda_;
    const double gd = g(6 * F + n);
    for (int f = 0; f < F; ++f) {
      const auto& Bf = hessian_.pose_depth[static_cast<size_t>(n) * F + f];
      if (Bf.isZero(0.0)) continue;
      rhs.segment<6>(6 * f) += Bf * (gd / D);
    }
  }
  const Eigen::VectorXd xp = reduced_ldlt_.solve(rhs);
  Eigen::VectorXd dx(6 * F + N);
  dx.head(6 * F) = xp;
  for (int n = 0; n < N; ++n) {
    const double D = hessian_.depth_depth[n] + lambda_;
    double acc = -g(6 * F + n);
    for (int f = 0; f < F; ++f) {
      acc -= hessian_.pose_depth[static_cast<size_t>(n) * F + f].dot(
          xp.segment<6>(6 * f));
    }
    dx(6 * F + n) = acc / D;
  }
  if (!dx.allFinite()) {
    factorize(lambda_ * 10.0);
    return solve_step(g);
  }
  return dx;
}

IcSolver::ResidualPass IcSolver::eval_residuals(
    const std::vector<Pose>& poses, const std::vector<double>& depths) const {
  TemplateData tpl;
  tpl.norm = tpl_norm_;
  tpl.val = tpl_val_;
  PassResult pass = residual_pass(state_, tpl, poses, depths, huber_, &mask_);
  ResidualPass out;
  out.r = std::move(pass.r);
  out.active = std::move(pass.active);
  out.energy = pass.energy;
  out.num_active = pass.num_active;
  return out;
}

Eigen::VectorXd IcSolver::assemble_gradient(const ResidualPass& pass) const {
  const int F = state_.num_frames();
  const int N = state_.num_points();
  const int P = static_cast<int>(state_.patch.offsets.size());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(6 * F + N);
  for (int n = 0; n < N; ++n) {
    for (int f = 0; f < F; ++f) {
      const size_t b = static_cast<size_t>(n) * F + f;
      for (int k = 0; k < P; ++k) {
        const size_t idx = b * P + k;
        if (!pass.active[idx]) continue;
        const double wr = huber_.weight(pass.r[idx]) * pass.r[idx];
        g.segment<6>(6 * f) += jrow_[idx].head<6>() * wr;
        g(6 * F + n) += jrow_[idx](6) * wr;
      }
    }
  }
  return g;
}

Eigen::VectorXd IcSolver::gradient() {
  build();
  return assemble_gradient(eval_residuals(state_.poses, state_.inv_depths));
}

Eigen::VectorXd IcSolver::compute_step() {
  build();
  return solve_step(
      assemble_gradient(eval_residuals(state_.poses, state_.inv_depths)));
}

SolveReport IcSolver::run() {
  SolveReport report;
  const auto t_start = Clock::now();
  build();
  report.warnings = warnings_;

  std::vector<Pose> poses = state_.poses;
  std::vector<double> depths = state_.inv_depths;
  ResidualPass pass = eval_residuals(poses, depths);
  if (pass.num_active == 0) throw EmptyProblem();
  for (size_t i = 0; i < mask_.size(); ++i) {
    mask_[i] = mask_[i] && pass.active[i];
  }
  double energy = pass.energy;
  const int initial_active = pass.num_active;

  double wall_ms = ms_since(t_start);
  int bad = 0;
  TemplateData tpl;
  tpl.norm = tpl_norm_;
  tpl.val = tpl_val_;

  for (int iter = 1; iter <= config_.max_iters; ++iter) {
    const auto t_iter = Clock::now();
    if (config_.refresh_ic_hessian && iter > 1) {
      // Optional knob: refresh the Hessian with current Huber weights.
      const int F = state_.num_frames();
      const int N = state_.num_points();
      const int P = static_cast<int>(state_.patch.offsets.size());
      hessian_.pose_pose.assign(F, Mat66::Zero());
      hessian_.depth_depth.assign(N, 0.0);
      hessian_.pose_depth.assign(static_cast<size_t>(N) * F,
                                 Eigen::Matrix<double, 6, 1>::Zero());
      for (int n = 0; n < N; ++n) {
        for (int f = 0; f < F; ++f) {
          const size_t b = static_cast<size_t>(n) * F + f;
          for (int k = 0; k < P; ++k) {
            const size_t idx = b * P + k;
            if (!pass.active[idx]) continue;
            const double w = huber_.weight(pass.r[idx]);
            const auto jp = jrow_[idx].head<6>();
            const double jd = jrow_[idx](6);
            hessian_.pose_pose[f].noalias() += w * jp * jp.transpose();
            hessian_.depth_depth[n] += w * jd * jd;
            hessian_.pose_depth[b].noalias() += w * jp * jd;
          }
        }
      }
      ++builds_;
      factorize(lambda_);
    }

    const Eigen::VectorXd g = assemble_gradient(pass);
    bool accepted = false;
    std::vector<Pose> cand_poses;
    std::vector<double> cand_depths;
    ResidualPass cand_pass;
    while (!accepted) {
      const Eigen::VectorXd dx = solve_step(g);
      cand_poses = poses;
      cand_depths = depths;
      bool valid = true;
      try {
        for (int f = 0; f < state_.num_frames(); ++f) {
          ProxyConstants pc;
          pc.R0 = pose0_[f].R;
          pc.t0 = pose0_[f].t;
          pc.d0 = 1.0;
          Vec7 dp = Vec7::Zero();
          dp.head<6>() = dx.segment<6>(6 * f);
          cand_poses[f] = apply_ic_update(poses[f], 1.0, pc, dp).first;
        }
        for (int n = 0; n < state_.num_points(); ++n) {
          ProxyConstants pc;
          pc.d0 = d0_[n];
          Vec7 dp = Vec7::Zero();
          dp(6) = dx(6 * state_.num_frames() + n);
          cand_depths[n] =
              apply_ic_update(Pose{}, depths[n], pc, dp).second;
        }
        cand_pass = eval_residuals(cand_poses, cand_depths);
        valid = cand_pass.num_active > 0;
      } catch (const InvalidDepth&) {
        valid = false;
      }
      if (valid && cand_pass.energy <= energy * (1.0 + 1e-12) + 1e-15) {
        accepted = true;
        bad = 0;
      } else {
        // A rejected step below the convergence threshold means the
        // solver is at a fixed point; stop instead of escalating damping.
        // Record the iteration with the parameters left unchanged.
        if (valid) {
          const double max_upd = max_reprojection_update_px(
              state_, tpl, poses, depths, cand_poses, cand_depths);
          if (max_upd < config_.threshold_px) {
            report.converged = true;
            report.message = "converged: sub-threshold step rejected";
            wall_ms += ms_since(t_iter);
            IterationStats stats;
            stats.iter = iter;
            stats.energy = energy;
            stats.max_update_px = max_upd;
            stats.wall_ms = wall_ms;
            stats.hessian_builds = builds_;
            stats.hessian_factorizations = factorizations_;
            if (config_.record_snapshots) {
              stats.poses = poses;
              stats.inv_depths = depths;
            }
            report.iters.push_back(std::move(stats));
            report.iterations = iter;
            break;
          }
        }
        ++bad;
        ++report.rejected_steps;
        if (bad >= config_.max_bad_steps) {
          report.diverged = true;
          report.message = "Diverged: " + std::to_string(bad) +
                           " consecutive rejected damped steps";
          break;
        }
        factorize(lambda_ * 10.0);
      }
    }
    if (!accepted) break;

    const double max_upd = max_reprojection_update_px(
        state_, tpl, poses, depths, cand_poses, cand_depths);
    poses = std::move(cand_poses);
    depths = std::move(cand_depths);
    for (size_t i = 0; i < mask_.size(); ++i) {
      mask_[i] = mask_[i] && cand_pass.active[i];
    }
    energy = cand_pass.energy;
    pass = std::move(cand_pass);
    if (config_.normalize_depth_gauge) {
      normalize_depth_gauge(poses, depths);
    }

    wall_ms += ms_since(t_iter);
    IterationStats stats;
    stats.iter = iter;
    stats.energy = energy;
    stats.max_update_px = max_upd;
    stats.wall_ms = wall_ms;
    stats.hessian_builds = builds_;
    stats.hessian_factorizations = factorizations_;
    if (config_.record_snapshots) {
      stats.poses = poses;
      stats.inv_depths = depths;
    }
    report.iters.push_back(std::move(stats));
    report.iterations = iter;

    if (max_upd < config_.threshold_px) {
      report.converged = true;
      if (g.norm() == 0.0) {
        report.message = "no-progress convergence: zero gradient";
      }
      break;
    }
  }

  report.hessian_builds = builds_;
  report.hessian_factorizations = factorizations_;
  report.final_energy = energy;
  report.total_wall_ms = wall_ms;
  report.final_poses = std::move(poses);
  report.final_inv_depths = std::move(depths);
  report.masked_residuals = initial_active - pass.num_active;
  return report;
}

// ---------------------------------------------------------------------------
// Forwards compositional baseline
// ---------------------------------------------------------------------------

FcSolver::FcSolver(ProblemState state, SolverConfig config)
    : state_(std::move(state)), config_(config) {}

SolveReport FcSolver::run() {
  SolveReport report;
  const HuberLoss huber{config_.gamma};
  const auto t_start = Clock::now();
  const TemplateData tpl = build_template(state_);
  const int F = state_.num_frames();
  const int N = state_.num_points();
  const int P = static_cast<int>(state_.patch.offsets.size());

  std::vector<Pose> poses = state_.poses;
  std::vector<double> depths = state_.inv_depths;
  PassResult pass = residual_pass(state_, tpl, poses, depths, huber, nullptr);
  if (pass.num_active == 0) throw EmptyProblem();
  const int initial_active = pass.num_active;
  double energy = pass.energy;

  double lambda = config_.lambda0;
  double wall_ms = ms_since(t_start);
  int bad = 0;
  int builds = 0;
  int factorizations = 0;

  for (int iter = 1; iter <= config_.max_iters; ++iter) {
    const auto t_iter = Clock::now();

    // Rebuild the Jacobian and Hessian at the current parameters.
    BlockHessian H;
    H.F = F;
    H.N = N;
    H.pose_pose.assign(F, Mat66::Zero());
    H.depth_depth.assign(N, 0.0);
    H.pose_depth.assign(static_cast<size_t>(N) * F,
                        Eigen::Matrix<double, 6, 1>::Zero());
    Eigen::VectorXd g = Eigen::VectorXd::Zero(6 * F + N);
    for (int n = 0; n < N; ++n) {
      for (int f = 0; f < F; ++f) {
        const size_t b = static_cast<size_t>(n) * F + f;
        for (int k = 0; k < P; ++k) {
          const size_t idx = b * P + k;
          if (!pass.active[idx]) continue;
          const Vec2& x = tpl.norm[static_cast<size_t>(n) * P + k];
          Eigen::Matrix<double, 7, 1> row;
          try {
            const Vec2 warped = project_warp(x, poses[f], depths[n]);
            const Vec2 grad = image_gradient(state_.targets[f], warped);
            const WarpJacobian wj = fc_warp_jacobian(x, poses[f], depths[n]);
            row = -(grad.transpose() * wj.image).transpose();
          } catch (const Error&) {
            continue;
          }
          const double w = huber.weight(pass.r[idx]);
          const auto jp = row.head<6>();
          const double jd = row(6);
          H.pose_pose[f].noalias() += w * jp * jp.transpose();
          H.depth_depth[n] += w * jd * jd;
          H.pose_depth[b].noalias() += w * jp * jd;
          g.segment<6>(6 * f) += jp * (w * pass.r[idx]);
          g(6 * F + n) += jd * (w * pass.r[idx]);
        }
      }
    }
    ++builds;

    bool accepted = false;
    std::vector<Pose> cand_poses;
    std::vector<double> cand_depths;
    PassResult cand_pass;
    while (!accepted) {
      Eigen::VectorXd dx;
      try {
        ++factorizations;
        dx = solve_normal_equations_schur(H, g, lambda);
      } catch (const Error&) {
        lambda *= 10.0;
        ++report.rejected_steps;
        if (++bad >= config_.max_bad_steps) break;
        continue;
      }
      cand_poses = poses;
      cand_depths = depths;
      bool valid = true;
      for (int f = 0; f < F; ++f) {
        cand_poses[f] = pose_boxplus(poses[f], dx.segment<6>(6 * f));
      }
      for (int n = 0; n < N; ++n) {
        cand_depths[n] = depths[n] + dx(6 * F + n);
        if (cand_depths[n] <= 0.0) valid = false;
      }
      if (valid) {
        cand_pass =
            residual_pass(state_, tpl, cand_poses, cand_depths, huber, nullptr);
        valid = cand_pass.num_active > 0;
      }
      if (valid && cand_pass.energy <= energy * (1.0 + 1e-12) + 1e-15) {
        accepted = true;
        bad = 0;
        lambda = std::max(lambda / 10.0, config_.lambda0);
      } else {
        // Sub-threshold rejected step: already at a fixed point.  Record
        // the iteration (its Hessian build and solve did run) with the
        // parameters left unchanged.
        if (valid) {
          const double max_upd = max_reprojection_update_px(
              state_, tpl, poses, depths, cand_poses, cand_depths);
          if (max_upd < config_.threshold_px) {
            report.converged = true;
            report.message = "converged: sub-threshold step rejected";
            wall_ms += ms_since(t_iter);
            IterationStats stats;
            stats.iter = iter;
            stats.energy = energy;
            stats.max_update_px = max_upd;
            stats.wall_ms = wall_ms;
            stats.hessian_builds = builds;
            stats.hessian_factorizations = factorizations;
            if (config_.record_snapshots) {
              stats.poses = poses;
              stats.inv_depths = depths;
            }
            report.iters.push_back(std::move(stats));
            report.iterations = iter;
            break;
          }
        }
        lambda *= 10.0;
        ++report.rejected_steps;
        if (++bad >= config_.max_bad_steps) break;
      }
    }
    if (!accepted) {
      if (report.converged) break;
      report.diverged = true;
      report.message = "Diverged: " + std::to_string(bad) +
                       " consecutive rejected damped steps";
      break;
    }

    const double max_upd = max_reprojection_update_px(
        state_, tpl, poses, depths, cand_poses, cand_depths);
    const bool zero_gradient = g.norm() == 0.0;
    poses = std::move(cand_poses);
    depths = std::move(cand_depths);
    energy = cand_pass.energy;
    pass = std::move(cand_pass);
    if (config_.normalize_depth_gauge) {
      normalize_depth_gauge(poses, depths);
    }

    wall_ms += ms_since(t_iter);
    IterationStats stats;
    stats.iter = iter;
    stats.energy = energy;
    stats.max_update_px = max_upd;
    stats.wall_ms = wall_ms;
    stats.hessian_builds = builds;
    stats.hessian_factorizations = factorizations;
    if (config_.record_snapshots) {
      stats.poses = poses;
      stats.inv_depths = depths;
    }
    report.iters.push_back(std::move(stats));
    report.iterations = iter;

    if (max_upd < config_.threshold_px) {
      report.converged = true;
      if (zero_gradient) {
        report.message = "no-progress convergence: zero gradient";
      }
      break;
    }
  }

  report.hessian_builds = builds;
  report.hessian_factorizations = factorizations;
  report.final_energy = energy;
  report.total_wall_ms = wall_ms;
  report.final_poses = std::move(poses);
  report.final_inv_depths = std::move(depths);
  report.masked_residuals = initial_active - pass.num_active;
  return report;
}

SolveReport ic_solve(const ProblemState& state, const SolverConfig& config) {
  return IcSolver(state, config).run();
}

SolveReport fc_solve(const ProblemState& state, const SolverConfig& config) {
  return FcSolver(state, config).run();
}

}  // namespace pba
