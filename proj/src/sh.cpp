#include "gavatar/sh.hpp"

#include "gavatar/errors.hpp"

namespace gavatar {

namespace {

constexpr double C0 = 0.28209479177387814;
constexpr double C1 = 0.4886025119029199;
constexpr double C2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                          -1.0925484305920792, 0.5462742152960396};
constexpr double C3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                          0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                          -0.5900435899266435};

// Fills basis values Y[i] and (optionally) dY[i]/d(dir).
void sh_basis(int degree, const Eigen::Vector3d& d, double* Y, Eigen::Vector3d* dY) {
    const double x = d.x(), y = d.y(), z = d.z();
    Y[0] = C0;
    if (dY) dY[0].setZero();
    if (degree < 1) return;
    Y[1] = -C1 * y;
    Y[2] = C1 * z;
    Y[3] = -C1 * x;
    if (dY) {
        dY[1] = Eigen::Vector3d(0, -C1, 0);
        dY[2] = Eigen::Vector3d(0, 0, C1);
        dY[3] = Eigen::Vector3d(-C1, 0, 0);
    }
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    Y[4] = C2[0] * x * y;
    Y[5] = C2[1] * y * z;
    Y[6] = C2[2] * (2 * zz - xx - yy);
    Y[7] = C2[3] * x * z;
    Y[8] = C2[4] * (xx - yy);
    if (dY) {
        dY[4] = C2[0] * Eigen::Vector3d(y, x, 0);
        dY[5] = C2[1] * Eigen::Vector3d(0, z, y);
        dY[6] = C2[2] * Eigen::Vector3d(-2 * x, -2 * y, 4 * z);
        dY[7] = C2[3] * Eigen::Vector3d(z, 0, x);
        dY[8] = C2[4] * Eigen::Vector3d(2 * x, -2 * y, 0);
    }
    if (degree < 3) return;
    Y[9] = C3[0] * y * (3 * xx - yy);
    Y[10] = C3[1] * x * y * z;
    Y[11] = C3[2] * y * (4 * zz - xx - yy);
    Y[12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    Y[13] = C3[4] * x * (4 * zz - xx - yy);
    Y[14] = C3[5] * z * (xx - yy);
    Y[15] = C3[6] * x * (xx - 3 * yy);
    if (dY) {
        dY[9] = C3[0] * Eigen::Vector3d(6 * x * y, 3 * xx - 3 * yy, 0);
        dY[10] = C3[1] * Eigen::Vector3d(y * z, x * z, x * y);
        dY[11] = C3[2] * Eigen::Vector3d(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
        dY[12] = C3[3] * Eigen::Vector3d(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
        dY[13] = C3[4] * Eigen::Vector3d(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
        dY[14] = C3[5] * Eigen::Vector3d(2 * x * z, -2 * y * z, xx - yy);
        dY[15] = C3[6] * Eigen::Vector3d(3 * xx - 3 * yy, -6 * x * y, 0);
    }
}

} // namespace

Eigen::Vector3d eval_sh(int degree, const Eigen::Vector3d* coeffs, const Eigen::Vector3d& dir) {
    if (degree < 0 || degree > 3) throw ValidationError("unsupported SH degree");
    double Y[16];
    sh_basis(degree, dir, Y, nullptr);
    Eigen::Vector3d rgb = Eigen::Vector3d::Constant(0.5);
    const int n = sh_coeff_count(degree);
    for (int i = 0; i < n; ++i) rgb += Y[i] * coeffs[i];
    return rgb.cwiseMax(0.0);
}

void eval_sh_backward(int degree, const Eigen::Vector3d* coeffs, const Eigen::Vector3d& dir,
                      const Eigen::Vector3d& grad_rgb, Eigen::Vector3d* grad_coeffs,
                      Eigen::Vector3d& grad_dir) {
    if (degree < 0 || degree > 3) throw ValidationError("unsupported SH degree");
    double Y[16];
    Eigen::Vector3d dY[16];
    sh_basis(degree, dir, Y, dY);
    const int n = sh_coeff_count(degree);
    Eigen::Vector3d pre = Eigen::Vector3d::Constant(0.5);
    for (int i = 0; i < n; ++i) pre += Y[i] * coeffs[i];
    Eigen::Vector3d g = grad_rgb;
    for (int c = 0; c < 3; ++c)
        if (pre[c] < 0.0) g[c] = 0.0;
    grad_dir.setZero();
    for (int i = 0; i < n; ++i) {
        grad_coeffs[i] += Y[i] * g;
        grad_dir += dY[i] * coeffs[i].dot(g);
    }
}

} // namespace gavatar
