#pragma once

#include <Eigen/Dense>

#include "gavatar/errors.hpp"

namespace gavatar {

// Pinhole camera, world-to-camera extrinsics.
struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity(); // world-to-camera
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    int width = 0, height = 0;
    double near = 0.01;

    Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const { return R * p_world + t; }
    Eigen::Vector3d center() const { return -R.transpose() * t; }

    void validate() const {
        if (fx <= 0 || fy <= 0) throw ValidationError("camera focal lengths must be positive");
        if (width <= 0 || height <= 0) throw ValidationError("camera image size must be positive");
        Eigen::Matrix3d RtR = R.transpose() * R;
        if ((RtR - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
            throw ValidationError("camera rotation is not orthonormal");
        if (std::abs(R.determinant() - 1.0) > 1e-6)
            throw ValidationError("camera rotation must have determinant +1");
    }
};

} // namespace gavatar
