#include "pba/geometry.hpp"

#include <cmath>

namespace pba {

Mat3 skew(const Vec3& w) {
  Mat3 S;
  S << 0, -w.z(), w.y(),  //
      w.z(), 0, -w.x(),   //
      -w.y(), w.x(), 0;
  return S;
}

Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < kSmallAngleEps) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + s * W + c * W * W;
}

Vec3 so3_log(const Mat3& R) {
  const double tr = R.trace();
  const double cos_theta = std::max(-1.0, std::min(1.0, 0.5 * (tr - 1.0)));
  const double theta = std::acos(cos_theta);
  const Vec3 axis_raw(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < kSmallAngleEps) {
    return 0.5 * axis_raw;
  }
  if (theta > M_PI - 1e-6) {
    // Near pi the off-diagonal difference degenerates; recover the axis from
    // the symmetric part instead.
    const Mat3 A = 0.5 * (R + Mat3::Identity());
    Vec3 axis(std::sqrt(std::max(0.0, A(0, 0))),
              std::sqrt(std::max(0.0, A(1, 1))),
              std::sqrt(std::max(0.0, A(2, 2))));
    int k = 0;
    axis.cwiseAbs().maxCoeff(&k);
    for (int i = 0; i < 3; ++i) {
      if (i != k && A(k, i) < 0) axis(i) = -axis(i);
    }
    axis.normalize();
    if (axis_raw.dot(axis) < 0) axis = -axis;
    return theta * axis;
  }
  return (theta / (2.0 * std::sin(theta))) * axis_raw;
}

Pose se3_exp(const Vec6& theta) {
  const Vec3 w = theta.head<3>();
  const Vec3 v = theta.tail<3>();
  const double angle = w.norm();
  const Mat3 W = skew(w);
  Pose pose;
  Mat3 V;
  if (angle < kSmallAngleEps) {
    pose.R = Mat3::Identity() + W + 0.5 * W * W;
    V = Mat3::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  } else {
    const double a2 = angle * angle;
    pose.R = Mat3::Identity() + (std::sin(angle) / angle) * W +
             ((1.0 - std::cos(angle)) / a2) * W * W;
    V = Mat3::Identity() + ((1.0 - std::cos(angle)) / a2) * W +
        ((angle - std::sin(angle)) / (a2 * angle)) * W * W;
  }
  pose.t = V * v;
  return pose;
}

Vec6 se3_log(const Pose& pose) {
  const Vec3 w = so3_log(pose.R);
  const double angle = w.norm();
  const Mat3 W = skew(w);
  Mat3 Vinv;
  if (angle < kSmallAngleEps) {
    Vinv = Mat3::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  } else {
    const double half = 0.5 * angle;
    const double cot = std::cos(half) / std::sin(half);
    Vinv = Mat3::Identity() - 0.5 * W +
           ((1.0 - half * cot) / (angle * angle)) * W * W;
  }
  Vec6 theta;
  theta.head<3>() = w;
  theta.tail<3>() = Vinv * pose.t;
  return theta;
}

Pose pose_boxplus(const Pose& pose, const Vec6& delta) {
  Pose out;
  out.R = so3_exp(delta.head<3>()) * pose.R;
  out.t = pose.t + delta.tail<3>();
  return out;
}

ParamVector boxplus(const ParamVector& p, const Vec7& delta) {
  ParamVector out;
  out.theta = se3_log(pose_boxplus(se3_exp(p.theta), delta.head<6>()));
  out.inv_depth = p.inv_depth + delta(6);
  return out;
}

Vec2 project(const Vec3& v) {
  if (std::abs(v.z()) < kDegenerateDepthEps) {
    throw DegenerateDepth();
  }
  return Vec2(v.x() / v.z(), v.y() / v.z());
}

Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& v) {
  if (std::abs(v.z()) < kDegenerateDepthEps) {
    throw DegenerateDepth();
  }
  const double iz = 1.0 / v.z();
  Eigen::Matrix<double, 2, 3> J;
  J << iz, 0, -v.x() * iz * iz,  //
      0, iz, -v.y() * iz * iz;
  return J;
}

Vec2 project_warp(const Vec2& x, const Pose& pose, double inv_depth) {
  return project(pose.R * homogeneous(x) + inv_depth * pose.t);
}

WarpJacobian fc_warp_jacobian(const Vec2& x, const Pose& pose,
                              double inv_depth) {
  const Vec3 Rx = pose.R * homogeneous(x);
  const Vec3 v0 = Rx + inv_depth * pose.t;
  WarpJacobian J;
  J.pre.block<3, 3>(0, 0) = -skew(Rx);
  J.pre.block<3, 3>(0, 3) = inv_depth * Mat3::Identity();
  J.pre.col(6) = pose.t;
  J.image = project_jacobian(v0) * J.pre;
  return J;
}

ProxyConstants make_proxy_constants(const Vec2& x, const Pose& pose0,
                                    double d0) {
  if (d0 <= 0.0) {
    throw InvalidDepth("make_proxy_constants: d0 must be positive");
  }
  const Vec3 v = pose0.R * homogeneous(x) + d0 * pose0.t;
  if (v.z() < kDegenerateDepthEps) {
    throw DegenerateDepth("make_proxy_constants: point at/behind proxy plane");
  }
  ProxyConstants pc;
  pc.R0 = pose0.R;
  pc.t0 = pose0.t;
  pc.d0 = d0;
  // Actual depth of the 3D point in the proxy frame: [R0 x~ / d0 + t0]_z.
  pc.zbar0 = v.z() / d0;
  Mat3 T = Mat3::Zero();
  T.col(2) = pc.t0;
  pc.M = pc.R0.transpose() * (pc.zbar0 * Mat3::Identity() - T);
  return pc;
}

Vec2 proxy_warp_grad_form(const Vec2& x, const ProxyConstants& pc,
                          const Vec7& dp) {
  const Mat3 Rp = so3_exp(dp.head<3>()) * pc.R0;
  const Vec3 tp = pc.t0 + dp.segment<3>(3);
  const double dpth = pc.d0 + dp(6);
  return project(pc.M * (Rp * homogeneous(x) + dpth * tp));
}

Vec2 proxy_warp_update_form(const Vec2& x, const ProxyConstants& pc,
                            const Vec7& dp) {
  const double dpth = pc.d0 + dp(6);
  if (dpth <= 0.0) {
    throw InvalidDepth("proxy_warp_update_form: d' <= 0");
  }
  const Mat3 Rp = so3_exp(dp.head<3>()) * pc.R0;
  const Vec3 v = pc.R0.transpose() *
                 ((1.0 / dpth) * (Rp * homogeneous(x)) + dp.segment<3>(3));
  return project(v);
}

Vec2 invert_warp(const Vec2& y, const ProxyConstants& pc) {
  return project(pc.R0.transpose() * (pc.zbar0 * homogeneous(y) - pc.t0));
}

WarpJacobian ic_jacobian_row(const Vec2& x, const ProxyConstants& pc) {
  const Vec3 R0x = pc.R0 * homogeneous(x);
  const Vec3 v0 = pc.M * (R0x + pc.d0 * pc.t0);
  WarpJacobian J;
  J.pre.block<3, 3>(0, 0) = -pc.M * skew(R0x);
  J.pre.block<3, 3>(0, 3) = pc.d0 * pc.M;
  J.pre.col(6) = pc.M * pc.t0;
  J.image = project_jacobian(v0) * J.pre;
  return J;
}

std::pair<Pose, double> apply_ic_update(const Pose& pose_k, double d_k,
                                        const ProxyConstants& pc,
                                        const Vec7& dp) {
  const Mat3 dR = so3_exp(dp.head<3>());
  Pose next;
  next.R = pose_k.R * pc.R0.transpose() * dR.transpose() * pc.R0;
  next.t = pose_k.t - pose_k.R * pc.R0.transpose() * dp.segment<3>(3);
  const double d_next = ((pc.d0 - dp(6)) / pc.d0) * d_k;
  if (d_next <= 0.0) {
    throw InvalidDepth("apply_ic_update: updated inverse depth <= 0");
  }
  return {next, d_next};
}

}  // namespace pba
