#include "gavatar/objective.hpp"

#include <cmath>

#include "gavatar/errors.hpp"
#include "gavatar/metrics.hpp"

namespace gavatar {

double l1_loss(const Image& rendered, const Image& target, Image* grad) {
    if (rendered.width != target.width || rendered.height != target.height)
        throw ValidationError("image shapes do not match");
    const double inv_n = 1.0 / static_cast<double>(rendered.data.size());
    double loss = 0;
    for (std::size_t i = 0; i < rendered.data.size(); ++i) {
        const double d = rendered.data[i] - target.data[i];
        loss += std::abs(d);
        if (grad) grad->data[i] += (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv_n;
    }
    return loss * inv_n;
}

double rgb_loss(const Image& rendered, const Image& target, Image* grad, double lambda, double* out_l1,
                double* out_dssim) {
    Image g_l1(rendered.width, rendered.height);
    Image g_ssim(rendered.width, rendered.height);
    const double l1 = l1_loss(rendered, target, grad ? &g_l1 : nullptr);
    const double s = grad ? ssim_with_grad(rendered, target, g_ssim) : ssim(rendered, target);
    const double dssim = (1.0 - s) / 2.0;
    if (grad)
        for (std::size_t i = 0; i < grad->data.size(); ++i)
            grad->data[i] += (1.0 - lambda) * g_l1.data[i] - lambda * 0.5 * g_ssim.data[i];
    if (out_l1) *out_l1 = l1;
    if (out_dssim) *out_dssim = dssim;
    return (1.0 - lambda) * l1 + lambda * dssim;
}

namespace {

double floor_norm_mean(const std::vector<Eigen::Vector3d>& rows, bool use_abs, double eps,
                       std::vector<Eigen::Vector3d>* grad) {
    if (rows.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    double loss = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Eigen::Vector3d m;
        for (int a = 0; a < 3; ++a) {
            const double v = use_abs ? std::abs(rows[r][a]) : rows[r][a];
            m[a] = std::max(v, eps);
        }
        const double norm = m.norm();
        loss += norm;
        if (grad && norm > 0) {
            for (int a = 0; a < 3; ++a) {
                const double v = use_abs ? std::abs(rows[r][a]) : rows[r][a];
                if (v > eps) {
                    double d = m[a] / norm * inv_n;
                    if (use_abs && rows[r][a] < 0) d = -d;
                    (*grad)[r][a] += d;
                }
            }
        }
    }
    return loss * inv_n;
}

} // namespace

double position_loss(const std::vector<Eigen::Vector3d>& offsets, std::vector<Eigen::Vector3d>* grad,
                     double eps) {
    return floor_norm_mean(offsets, true, eps, grad);
}

double scaling_loss(const std::vector<Eigen::Vector3d>& scales, std::vector<Eigen::Vector3d>* grad,
                    double eps) {
    return floor_norm_mean(scales, false, eps, grad);
}

LossReport total_loss(const Image& rendered, const Image& target, const BoundGaussianCloud& cloud,
                      const std::vector<int>& visible, Image* grad_image, CloudGrads* g_cloud,
                      double lambda, double lambda_position, double lambda_scaling) {
    LossReport rep;
    rep.visible_count = static_cast<int>(visible.size());
    if (grad_image)
        std::fill(grad_image->data.begin(), grad_image->data.end(), 0.0);
    rep.rgb = rgb_loss(rendered, target, grad_image, lambda, &rep.l1, &rep.dssim);

    std::vector<Eigen::Vector3d> offsets, scales;
    offsets.reserve(visible.size());
    scales.reserve(visible.size());
    for (int i : visible) {
        offsets.push_back(cloud.local_offset[i]);
        scales.push_back(cloud.log_scale[i].array().exp().matrix());
    }
    std::vector<Eigen::Vector3d> g_off(offsets.size(), Eigen::Vector3d::Zero());
    std::vector<Eigen::Vector3d> g_s(scales.size(), Eigen::Vector3d::Zero());
    rep.position = position_loss(offsets, g_cloud ? &g_off : nullptr);
    rep.scaling = scaling_loss(scales, g_cloud ? &g_s : nullptr);
    if (g_cloud) {
        for (std::size_t k = 0; k < visible.size(); ++k) {
            const int i = visible[k];
            g_cloud->local_offset[i] += lambda_position * g_off[k];
            // chain through s = exp(log_scale)
            g_cloud->log_scale[i] += lambda_scaling * g_s[k].cwiseProduct(scales[k]);
        }
    }
    rep.total = rep.rgb + lambda_position * rep.position + lambda_scaling * rep.scaling;
    return rep;
}

} // namespace gavatar
