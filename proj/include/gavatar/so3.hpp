#pragma once

#include <Eigen/Dense>

namespace gavatar {

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

// Axis-angle to rotation matrix, stable near zero.
inline Eigen::Matrix3d rodrigues(const Eigen::Vector3d& r) {
    double theta2 = r.squaredNorm();
    Eigen::Matrix3d K = skew(r);
    double a, b; // R = I + a*K + b*K^2
    if (theta2 < 1e-16) {
        a = 1.0 - theta2 / 6.0;
        b = 0.5 - theta2 / 24.0;
    } else {
        double theta = std::sqrt(theta2);
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    return Eigen::Matrix3d::Identity() + a * K + b * K * K;
}

// Given dL/dR, return dL/dr for R = rodrigues(r) (Gallego & Yezzi form).
inline Eigen::Vector3d rodrigues_backward(const Eigen::Vector3d& r, const Eigen::Matrix3d& gR) {
    double theta2 = r.squaredNorm();
    Eigen::Matrix3d R = rodrigues(r);
    Eigen::Vector3d g;
    if (theta2 < 1e-16) {
        // dR/dr_i -> skew(e_i) at the identity
        for (int i = 0; i < 3; ++i) {
            Eigen::Vector3d e = Eigen::Vector3d::Unit(i);
            g[i] = (skew(e).cwiseProduct(gR)).sum();
        }
        return g;
    }
    Eigen::Matrix3d ImR = Eigen::Matrix3d::Identity() - R;
    for (int i = 0; i < 3; ++i) {
        Eigen::Vector3d e = Eigen::Vector3d::Unit(i);
        Eigen::Matrix3d dR = ((r[i] * skew(r) + skew(r.cross(ImR * e))) / theta2) * R;
        g[i] = (dR.cwiseProduct(gR)).sum();
    }
    return g;
}

// Unit quaternion (w,x,y,z) to rotation matrix.
inline Eigen::Matrix3d quat_to_rot(const Eigen::Vector4d& q) {
    double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

// dL/du for R = quat_to_rot(u), u assumed unit; gR is dL/dR.
inline Eigen::Vector4d quat_to_rot_backward(const Eigen::Vector4d& q, const Eigen::Matrix3d& gR) {
    double w = q[0], x = q[1], y = q[2], z = q[3];
    auto dot = [&](const Eigen::Matrix3d& d) { return (d.cwiseProduct(gR)).sum(); };
    Eigen::Matrix3d dw, dx, dy, dz;
    dw << 0, -2 * z, 2 * y,
          2 * z, 0, -2 * x,
          -2 * y, 2 * x, 0;
    dx << 0, 2 * y, 2 * z,
          2 * y, -4 * x, -2 * w,
          2 * z, 2 * w, -4 * x;
    dy << -4 * y, 2 * x, 2 * w,
          2 * x, 0, 2 * z,
          -2 * w, 2 * z, -4 * y;
    dz << -4 * z, -2 * w, 2 * x,
          2 * w, -4 * z, 2 * y,
          2 * x, 2 * y, 0;
    return Eigen::Vector4d(dot(dw), dot(dx), dot(dy), dot(dz));
}

// Rotation from a possibly non-unit quaternion; gradient includes the
// normalization.
inline Eigen::Matrix3d quatn_to_rot(const Eigen::Vector4d& q) {
    return quat_to_rot(q / q.norm());
}

inline Eigen::Vector4d quatn_to_rot_backward(const Eigen::Vector4d& q, const Eigen::Matrix3d& gR) {
    double n = q.norm();
    Eigen::Vector4d u = q / n;
    Eigen::Vector4d gu = quat_to_rot_backward(u, gR);
    return (gu - u * u.dot(gu)) / n;
}

} // namespace gavatar
