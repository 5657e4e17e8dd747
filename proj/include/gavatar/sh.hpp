#pragma once

#include <Eigen/Dense>

namespace gavatar {

// View-dependent color from spherical harmonics, degrees 0..3.
// rgb = clamp(sum_lm c_lm * Y_lm(dir) + 0.5, >= 0)
Eigen::Vector3d eval_sh(int degree, const Eigen::Vector3d* coeffs, const Eigen::Vector3d& dir);

// Gradients w.r.t. coefficients and the (unit) view direction. The clamp
// contributes a zero subgradient where the pre-clamp value is negative.
void eval_sh_backward(int degree, const Eigen::Vector3d* coeffs, const Eigen::Vector3d& dir,
                      const Eigen::Vector3d& grad_rgb, Eigen::Vector3d* grad_coeffs,
                      Eigen::Vector3d& grad_dir);

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

} // namespace gavatar
