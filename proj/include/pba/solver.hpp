#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "pba/geometry.hpp"
#include "pba/image.hpp"

namespace pba {

using Mat66 = Eigen::Matrix<double, 6, 6>;

/// Robust Huber loss: quadratic inside |r| <= gamma, linear outside.
/// weight() is the IRLS reweighting factor.
struct HuberLoss {
  double gamma{0.03};

  double weight(double r) const {
    const double a = std::abs(r);
    return a <= gamma ? 1.0 : gamma / a;
  }
  double loss(double r) const {
    const double a = std::abs(r);
    return a <= gamma ? 0.5 * r * r : gamma * (a - 0.5 * gamma);
  }
};

/// One photometric bundle adjustment instance: a reference image, F target
/// images with poses, and N template points with inverse depths.
struct ProblemState {
  Image ref;
  std::vector<Image> targets;
  std::vector<Pose> poses;               // one per target frame
  std::vector<Vec2> anchors_px;          // template anchor pixels
  std::vector<double> inv_depths;        // one per point, > 0
  PatchPattern patch{PatchPattern::square(1)};

  int num_frames() const { return static_cast<int>(targets.size()); }
  int num_points() const { return static_cast<int>(anchors_px.size()); }
};

struct SolverConfig {
  double gamma{0.03};           // Huber threshold, [0,1] intensity units
  double threshold_px{5e-3};    // convergence: max reprojected update
  int max_iters{200};
  double lambda0{1e-6};         // Levenberg damping floor
  int max_bad_steps{8};         // consecutive rejected retries before Diverged
  bool normalize_depth_gauge{true};  // renormalize mean inverse depth to 1
  bool refresh_ic_hessian{false};    // rebuild IC Hessian each iteration
  bool record_snapshots{false};      // keep per-iteration parameter copies
};

/// Sparse normal equations exploiting the pose-block / depth-scalar
/// structure: each residual touches one frame's 6 pose coordinates and one
/// point's inverse depth, so pose-pose and depth-depth blocks are diagonal.
struct BlockHessian {
  int F{0}, N{0};
  std::vector<Mat66> pose_pose;                    // per frame
  std::vector<double> depth_depth;                 // per point
  std::vector<Eigen::Matrix<double, 6, 1>> pose_depth;  // per (n*F + f)
  double lambda{0.0};

  /// Assemble the full dense damped matrix (pose blocks first, then
  /// depths). Used by the dense fallback path and by oracle tests.
  Eigen::MatrixXd dense(double lambda_add) const;
};

struct IterationStats {
  int iter{0};
  double energy{0.0};
  double max_update_px{0.0};
  double wall_ms{0.0};               // cumulative solver time
  int hessian_builds{0};             // cumulative
  int hessian_factorizations{0};     // cumulative
  std::vector<Pose> poses;           // only when record_snapshots
  std::vector<double> inv_depths;
};

struct SolveReport {
  std::vector<IterationStats> iters;
  bool converged{false};
  bool diverged{false};
  int iterations{0};
  int hessian_builds{0};
  int hessian_factorizations{0};
  int rejected_steps{0};             // damped retries after rejected steps
  double final_energy{0.0};
  double total_wall_ms{0.0};
  int masked_residuals{0};
  std::vector<Pose> final_poses;
  std::vector<double> final_inv_depths;
  std::vector<std::string> warnings;
  std::string message;
};

struct EnergyResult {
  double energy{0.0};
  std::vector<double> residuals;     // flat, (n*F + f)*P + k; 0 when inactive
  std::vector<uint8_t> active;       // in-bounds (and unmasked) flags
  int num_active{0};
  int num_out_of_bounds{0};
};

/// Huber-robustified total energy over all in-bounds residuals
/// r = I0(x) - I_f(W(x; p)).  Out-of-bounds residuals are excluded and
/// counted.  Throws EmptyProblem when nothing is in bounds.
EnergyResult energy_eval(const ProblemState& state, const HuberLoss& huber,
                         const std::vector<uint8_t>* mask = nullptr);

/// Inverse compositional solver: proxy-template Jacobian and Hessian built
/// and factorized once at the initialization, then reused every iteration.
class IcSolver {
 public:
  explicit IcSolver(ProblemState state, SolverConfig config = {});

  /// Builds the frozen Jacobian rows, the block Hessian with initial Huber
  /// weights, and the cached Schur factorization.
  void build();

  /// One Gauss-Newton step -H^{-1} J^T W r at the current parameters,
  /// stacked [pose blocks (6F); depths (N)].  For oracle comparisons.
  Eigen::VectorXd compute_step();

  SolveReport run();

  const ProblemState& state() const { return state_; }
  const BlockHessian& hessian() const { return hessian_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  /// Dense gradient at current parameters (fresh Huber weights).
  Eigen::VectorXd gradient();

 private:
  friend class SolverTestAccess;
  struct ResidualPass {
    std::vector<double> r;
    std::vector<uint8_t> active;
    double energy{0.0};
    int num_active{0};
  };

  ResidualPass eval_residuals(const std::vector<Pose>& poses,
                              const std::vector<double>& depths) const;
  Eigen::VectorXd assemble_gradient(const ResidualPass& pass) const;
  void factorize(double lambda);
  Eigen::VectorXd solve_step(const Eigen::VectorXd& g);

  ProblemState state_;
  SolverConfig config_;
  HuberLoss huber_;

  bool built_{false};
  std::vector<Pose> pose0_;
  std::vector<double> d0_;
  std::vector<ProxyConstants> anchor_pc_;          // per (n*F + f)
  std::vector<Vec2> tpl_norm_;                     // per (n*P + k)
  std::vector<double> tpl_val_;
  std::vector<Eigen::Matrix<double, 7, 1>> jrow_;  // per ((n*F + f)*P + k)
  std::vector<double> w0_;                         // initial Huber weights
  std::vector<uint8_t> mask_;                      // sticky residual mask
  BlockHessian hessian_;

  double lambda_{1e-6};
  Eigen::LDLT<Eigen::MatrixXd> reduced_ldlt_;      // cached Schur factor
  std::vector<std::string> warnings_;
  int builds_{0};
  int factorizations_{0};
};

/// Forwards compositional baseline: standard Gauss-Newton, Jacobian and
/// Hessian rebuilt from the current parameters every iteration.
class FcSolver {
 public:
  explicit FcSolver(ProblemState state, SolverConfig config = {});
  SolveReport run();
  const ProblemState& state() const { return state_; }

 private:
  ProblemState state_;
  SolverConfig config_;
};

/// Convenience wrappers matching the per-operation contracts.
SolveReport ic_solve(const ProblemState& state, const SolverConfig& config);
SolveReport fc_solve(const ProblemState& state, const SolverConfig& config);

/// Solves (H + lambda I) dx = -g on the block structure via Schur
/// complement on the depth variables.  The dense path assembles the full
/// matrix instead; it exists as an oracle for the sparse route.
Eigen::VectorXd solve_normal_equations_schur(const BlockHessian& H,
                                             const Eigen::VectorXd& g,
                                             double lambda);
Eigen::VectorXd solve_normal_equations_dense(const BlockHessian& H,
                                             const Eigen::VectorXd& g,
                                             double lambda);

}  // namespace pba
