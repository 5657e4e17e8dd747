#pragma once

#include <vector>

#include <Eigen/Dense>

#include "gavatar/gsbinding.hpp"
#include "gavatar/image.hpp"

namespace gavatar {

struct LossReport {
    double l1 = 0, dssim = 0, rgb = 0, position = 0, scaling = 0, total = 0;
    int visible_count = 0;
};

// Mean absolute difference over all channels; gradient w.r.t. the first image.
double l1_loss(const Image& rendered, const Image& target, Image* grad = nullptr);

// (1 - lambda) * L1 + lambda * (1 - SSIM) / 2.
double rgb_loss(const Image& rendered, const Image& target, Image* grad = nullptr, double lambda = 0.2,
                double* out_l1 = nullptr, double* out_dssim = nullptr);

// Mean over rows of || max(|mu|, eps) ||_2, elementwise floor; zero-gradient
// inside the margin. Offsets are in triangle-frame units.
double position_loss(const std::vector<Eigen::Vector3d>& offsets,
                     std::vector<Eigen::Vector3d>* grad = nullptr, double eps = 1.0);

// Mean over rows of || max(s, eps) ||_2 on triangle-relative scales s.
double scaling_loss(const std::vector<Eigen::Vector3d>& scales,
                    std::vector<Eigen::Vector3d>* grad = nullptr, double eps = 0.6);

// Full objective over the visible gaussians. Regularizer gradients accumulate
// into g_cloud (local_offset, log_scale); the image gradient is overwritten.
LossReport total_loss(const Image& rendered, const Image& target, const BoundGaussianCloud& cloud,
                      const std::vector<int>& visible, Image* grad_image = nullptr,
                      CloudGrads* g_cloud = nullptr, double lambda = 0.2, double lambda_position = 0.01,
                      double lambda_scaling = 1.0);

} // namespace gavatar
