#pragma once

#include <cstdint>
#include <string>

namespace pba {

/// Finite-difference sweep over random configurations for every analytic
/// Jacobian: the forwards warp (2x7), the proxy-template IC warp (2x7), and
/// the image gradient.  Also confirms the identity degeneracy (t0 = 0 makes
/// the depth column exactly zero).
struct GradCheckReport {
  int trials{0};
  double max_fc_rel_err{0.0};
  double max_ic_rel_err{0.0};
  double max_img_rel_err{0.0};
  bool degeneracy_confirmed{false};

  double max_rel_err() const;
  bool pass(double tol) const;
  std::string summary(double tol) const;
};

GradCheckReport run_gradcheck(int trials, std::uint64_t seed);

}  // namespace pba
