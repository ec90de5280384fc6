#pragma once

#include <Eigen/Core>
#include <utility>

#include "pba/errors.hpp"

namespace pba {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat3 = Eigen::Matrix3d;

/// Points with |z| below this are treated as at/behind the camera plane.
inline constexpr double kDegenerateDepthEps = 1e-12;

/// Rotation angles below this switch exp/log to series expansions.
inline constexpr double kSmallAngleEps = 1e-8;

/// Rigid transform mapping reference-frame points into a target frame:
/// X_target = R * X_ref + t.  Scene units are depth-mean-normalized so the
/// mean inverse depth is ~1.
struct Pose {
  Mat3 R{Mat3::Identity()};
  Vec3 t{Vec3::Zero()};
};

/// Pose tangent (3 rotation + 3 translation) plus one inverse depth.
/// Mirrors the stacked per-(frame, point) parameter block.
struct ParamVector {
  Vec6 theta{Vec6::Zero()};
  double inv_depth{1.0};
};

Mat3 skew(const Vec3& w);

Mat3 so3_exp(const Vec3& w);
Vec3 so3_log(const Mat3& R);

/// SE(3) exponential map: closed-form Rodrigues rotation with the V-matrix
/// coupling for translation. theta = [rotation(3), translation(3)].
Pose se3_exp(const Vec6& theta);
Vec6 se3_log(const Pose& pose);

/// Increment a pose by a 6-vector tangent: left-multiplicative rotation
/// update and additive translation update.  delta = [omega(3), dt(3)].
Pose pose_boxplus(const Pose& pose, const Vec6& delta);

/// The boxplus operator on a stacked parameter block: left-multiplicative
/// pose update and additive inverse-depth update.
ParamVector boxplus(const ParamVector& p, const Vec7& delta);

inline Vec3 homogeneous(const Vec2& x) { return Vec3(x.x(), x.y(), 1.0); }

/// Pinhole projection onto the z=1 plane. Throws DegenerateDepth when
/// |v_z| < kDegenerateDepthEps.
Vec2 project(const Vec3& v);

/// 2x3 derivative of project() at v (quotient rule).
Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& v);

/// Projective warp of a template point into a target frame:
/// <R * homog(x) + d * t>, with x in normalized template coordinates and d
/// the point's inverse depth.
Vec2 project_warp(const Vec2& x, const Pose& pose, double inv_depth);

/// Analytic derivative of a warped image point: 2x7 w.r.t. the 6 pose
/// tangent coordinates (left-multiplicative rotation, additive translation)
/// plus the inverse depth, together with the pre-projection 3x7 derivative
/// of the internal transform.
struct WarpJacobian {
  Eigen::Matrix<double, 2, 7> image;
  Eigen::Matrix<double, 3, 7> pre;
};

/// Jacobian of project_warp at the current parameters (forwards
/// compositional linearization point). The depth column is exactly zero at
/// t = 0, which is the degeneracy that rules out ordinary IC.
WarpJacobian fc_warp_jacobian(const Vec2& x, const Pose& pose,
                              double inv_depth);

/// Frozen per-(point, frame) initialization constants of the proxy warp.
///
/// zbar0 is the depth of the template point in the proxy frame under the
/// initial parameters, i.e. [R0 * homog(x) / d0 + t0]_z.  M premultiplies
/// the incremented transform in the gradient form of the proxy warp.
struct ProxyConstants {
  Mat3 R0{Mat3::Identity()};
  Vec3 t0{Vec3::Zero()};
  double d0{1.0};
  double zbar0{1.0};
  Mat3 M{Mat3::Identity()};
};

ProxyConstants make_proxy_constants(const Vec2& x, const Pose& pose0,
                                    double d0);

/// Proxy warp, gradient form: <M * (R' * homog(x) + d' * t')> with
/// R' = exp(dw) * R0, t' = t0 + dt, d' = d0 + dd and dp = [dw, dt, dd].
/// Exact identity at dp = 0.
Vec2 proxy_warp_grad_form(const Vec2& x, const ProxyConstants& pc,
                          const Vec7& dp);

/// Proxy warp, update form: <R0^T * ((1/d') * R' * homog(x) + dt)>.
/// Approximates the gradient form to first order in dp; exact at dp = 0.
/// Throws InvalidDepth when d' <= 0.
Vec2 proxy_warp_update_form(const Vec2& x, const ProxyConstants& pc,
                            const Vec7& dp);

/// Inverse of the initial warp: maps a proxy-frame point y back to the
/// template, <R0^T * (zbar0 * homog(y) - t0)>.
Vec2 invert_warp(const Vec2& y, const ProxyConstants& pc);

/// Analytic 2x7 Jacobian of the proxy warp (gradient form) at dp = 0.
/// The depth column is M * t0 pushed through the projection quotient rule:
/// non-zero whenever the initial translation is non-zero.
WarpJacobian ic_jacobian_row(const Vec2& x, const ProxyConstants& pc);

/// Compose an inverse-compositional increment into the current parameters:
///   R_{k+1} = R_k R0^T dR^T R0
///   t_{k+1} = t_k - R_k R0^T dt
///   d_{k+1} = ((d0 - dd) / d0) * d_k
/// Throws InvalidDepth when the updated inverse depth is non-positive; no
/// clamping is applied (the solver handles rejection by step damping).
std::pair<Pose, double> apply_ic_update(const Pose& pose_k, double d_k,
                                        const ProxyConstants& pc,
                                        const Vec7& dp);

}  // namespace pba
