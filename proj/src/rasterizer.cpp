#include "gavatar/rasterizer.hpp"

#include <algorithm>
#include <numeric>

#include "gavatar/sh.hpp"

namespace gavatar {

namespace {

constexpr int kTileSize = 16;

double max_eigenvalue_2x2(const Eigen::Matrix2d& c) {
    double mid = 0.5 * (c(0, 0) + c(1, 1));
    double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
    return mid + std::sqrt(std::max(0.0, mid * mid - det));
}

// Splat indices sorted front to back, ties broken by source index.
std::vector<int> depth_order(const std::vector<Splat2D>& splats) {
    std::vector<int> order(splats.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
        return splats[a].source < splats[b].source;
    });
    return order;
}

struct Step {
    int idx;          // index into the splat vector
    double alpha_eff; // after the 0.99 clamp
    double sigma;
    double transmittance; // before this splat
    bool clamped;
};

// Front-to-back composite of one pixel; steps may be null when only the color
// is needed.
void composite_pixel(const std::vector<Splat2D>& splats, const std::vector<int>& candidates, double px,
                     double py, const Eigen::Vector3d& background, Eigen::Vector3d& color, double& alpha,
                     std::vector<Step>* steps) {
    double T = 1.0;
    Eigen::Vector3d C = Eigen::Vector3d::Zero();
    for (int idx : candidates) {
        if (T < kTransmittanceEps) break;
        const Splat2D& s = splats[idx];
        Eigen::Vector2d d(px - s.mean2d.x(), py - s.mean2d.y());
        double det = s.cov(0, 0) * s.cov(1, 1) - s.cov(0, 1) * s.cov(1, 0);
        double q = (s.cov(1, 1) * d.x() * d.x() - 2 * s.cov(0, 1) * d.x() * d.y() +
                    s.cov(0, 0) * d.y() * d.y()) /
                   det;
        double sigma = std::exp(-0.5 * q);
        double a = s.alpha * sigma;
        bool clamped = a > kAlphaClamp;
        if (clamped) a = kAlphaClamp;
        if (steps) steps->push_back({idx, a, sigma, T, clamped});
        C += s.rgb * (a * T);
        T *= (1.0 - a);
    }
    color = C + T * background;
    alpha = 1.0 - T;
}

// Candidate lists per tile, preserving depth order. Exact mode: every splat in
// every tile; Tiled mode: conservative Mahalanobis footprint binning.
std::vector<std::vector<int>> build_tile_lists(const std::vector<Splat2D>& splats,
                                               const std::vector<int>& order, int tiles_x, int tiles_y,
                                               RasterMode mode) {
    std::vector<std::vector<int>> lists(static_cast<size_t>(tiles_x) * tiles_y);
    if (mode == RasterMode::Exact) {
        for (auto& l : lists) l = order;
        return lists;
    }
    for (int idx : order) {
        const Splat2D& s = splats[idx];
        double r = std::sqrt(kTileFootprintQ * max_eigenvalue_2x2(s.cov));
        int tx0 = std::clamp(static_cast<int>(std::floor((s.mean2d.x() - r) / kTileSize)), 0, tiles_x - 1);
        int tx1 = std::clamp(static_cast<int>(std::floor((s.mean2d.x() + r) / kTileSize)), 0, tiles_x - 1);
        int ty0 = std::clamp(static_cast<int>(std::floor((s.mean2d.y() - r) / kTileSize)), 0, tiles_y - 1);
        int ty1 = std::clamp(static_cast<int>(std::floor((s.mean2d.y() + r) / kTileSize)), 0, tiles_y - 1);
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx) lists[static_cast<size_t>(ty) * tiles_x + tx].push_back(idx);
    }
    return lists;
}

} // namespace

std::optional<Splat2D> project(const Eigen::Vector3d& mean, const Eigen::Matrix3d& rotation,
                               const Eigen::Vector3d& scale, double opacity, int sh_degree,
                               const Eigen::Vector3d* sh_coeffs, const Camera& cam, int source) {
    Eigen::Vector3d p = cam.to_camera(mean);
    if (p.z() <= cam.near) return std::nullopt;

    Splat2D s;
    s.depth = p.z();
    s.mean2d = Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);

    Eigen::Matrix3d sigma3 = rotation * scale.cwiseProduct(scale).asDiagonal() * rotation.transpose();
    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx / p.z(), 0, -cam.fx * p.x() / (p.z() * p.z()),
         0, cam.fy / p.z(), -cam.fy * p.y() / (p.z() * p.z());
    Eigen::Matrix<double, 2, 3> M = J * cam.R;
    s.cov = M * sigma3 * M.transpose() + kBlurFloor * Eigen::Matrix2d::Identity();

    double r = 3.0 * std::sqrt(max_eigenvalue_2x2(s.cov));
    if (s.mean2d.x() + r < 0 || s.mean2d.x() - r > cam.width || s.mean2d.y() + r < 0 ||
        s.mean2d.y() - r > cam.height)
        return std::nullopt;

    Eigen::Vector3d dir = (mean - cam.center()).normalized();
    s.rgb = eval_sh(sh_degree, sh_coeffs, dir);
    s.alpha = opacity;
    s.source = source;
    return s;
}

void project_backward(const Eigen::Vector3d& mean, const Eigen::Matrix3d& rotation,
                      const Eigen::Vector3d& scale, double opacity, int sh_degree,
                      const Eigen::Vector3d* sh_coeffs, const Camera& cam, const SplatGrads& g,
                      Eigen::Vector3d& g_mean, Eigen::Matrix3d& g_rotation, Eigen::Vector3d& g_scale,
                      double& g_opacity, Eigen::Vector3d* g_sh) {
    (void)opacity;
    Eigen::Vector3d p = cam.to_camera(mean);
    const double z = p.z(), z2 = z * z, z3 = z2 * z;

    Eigen::Vector3d gp = Eigen::Vector3d::Zero();
    // mean2d = (fx x/z + cx, fy y/z + cy)
    gp.x() += g.mean2d.x() * cam.fx / z;
    gp.y() += g.mean2d.y() * cam.fy / z;
    gp.z() += -g.mean2d.x() * cam.fx * p.x() / z2 - g.mean2d.y() * cam.fy * p.y() / z2;

    Eigen::Matrix3d sigma3 = rotation * scale.cwiseProduct(scale).asDiagonal() * rotation.transpose();
    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx / z, 0, -cam.fx * p.x() / z2,
         0, cam.fy / z, -cam.fy * p.y() / z2;
    Eigen::Matrix<double, 2, 3> M = J * cam.R;

    // cov = M sigma3 M^T + blur; use the symmetrized cov gradient
    Eigen::Matrix2d Gc = 0.5 * (g.cov + g.cov.transpose());
    Eigen::Matrix<double, 2, 3> gM = 2.0 * Gc * M * sigma3;
    Eigen::Matrix3d gSigma3 = M.transpose() * Gc * M;
    Eigen::Matrix<double, 2, 3> gJ = gM * cam.R.transpose();
    gp.z() += gJ(0, 0) * (-cam.fx / z2) + gJ(1, 1) * (-cam.fy / z2) + gJ(0, 2) * (2 * cam.fx * p.x() / z3) +
              gJ(1, 2) * (2 * cam.fy * p.y() / z3);
    gp.x() += gJ(0, 2) * (-cam.fx / z2);
    gp.y() += gJ(1, 2) * (-cam.fy / z2);

    g_mean += cam.R.transpose() * gp;

    // sigma3 = R diag(s^2) R^T
    Eigen::Matrix3d D = scale.cwiseProduct(scale).asDiagonal();
    g_rotation += 2.0 * gSigma3 * rotation * D;
    Eigen::Matrix3d RtGR = rotation.transpose() * gSigma3 * rotation;
    for (int k = 0; k < 3; ++k) g_scale[k] += 2.0 * scale[k] * RtGR(k, k);

    // color through the view direction
    Eigen::Vector3d offset = mean - cam.center();
    double len = offset.norm();
    Eigen::Vector3d dir = offset / len;
    Eigen::Vector3d g_dir;
    eval_sh_backward(sh_degree, sh_coeffs, dir, g.rgb, g_sh, g_dir);
    g_mean += (g_dir - dir * dir.dot(g_dir)) / len;

    g_opacity += g.alpha;
}

RenderOutput rasterize(const std::vector<Splat2D>& splats, const Camera& cam,
                       const Eigen::Vector3d& background, RasterMode mode, RenderContext* ctx) {
    const int W = cam.width, H = cam.height;
    RenderOutput out;
    out.image = Image(W, H);
    out.alpha_map.assign(static_cast<size_t>(W) * H, 0.0);
    out.max_contrib.assign(splats.size(), 0.0);

    std::vector<int> order = depth_order(splats);
    const int tiles_x = (W + kTileSize - 1) / kTileSize;
    const int tiles_y = (H + kTileSize - 1) / kTileSize;
    auto lists = build_tile_lists(splats, order, tiles_x, tiles_y, mode);

    // Per-tile max contributions, merged serially afterwards so results are
    // identical at any thread count.
    std::vector<std::vector<double>> tile_contrib(lists.size());

#pragma omp parallel for schedule(dynamic)
    for (long tile = 0; tile < static_cast<long>(lists.size()); ++tile) {
        const auto& cand = lists[tile];
        auto& contrib = tile_contrib[tile];
        contrib.assign(splats.size(), 0.0);
        int ty = static_cast<int>(tile) / tiles_x, tx = static_cast<int>(tile) % tiles_x;
        std::vector<Step> steps;
        for (int y = ty * kTileSize; y < std::min(H, (ty + 1) * kTileSize); ++y) {
            for (int x = tx * kTileSize; x < std::min(W, (tx + 1) * kTileSize); ++x) {
                steps.clear();
                Eigen::Vector3d color;
                double alpha;
                composite_pixel(splats, cand, x + 0.5, y + 0.5, background, color, alpha, &steps);
                for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = color[c];
                out.alpha_map[static_cast<size_t>(y) * W + x] = alpha;
                for (const Step& st : steps)
                    contrib[st.idx] = std::max(contrib[st.idx], st.alpha_eff * st.transmittance);
            }
        }
    }
    for (const auto& contrib : tile_contrib)
        for (size_t i = 0; i < splats.size(); ++i) out.max_contrib[i] = std::max(out.max_contrib[i], contrib[i]);

    if (ctx) {
        ctx->splats = splats;
        ctx->width = W;
        ctx->height = H;
        ctx->background = background;
        ctx->mode = mode;
        ctx->valid = true;
    }
    return out;
}

std::vector<SplatGrads> rasterize_backward(const RenderContext& ctx, const Image& grad_image,
                                           const std::vector<double>& grad_alpha_map) {
    if (!ctx.valid) throw std::runtime_error("rasterize_backward called without a retained forward state");
    const int W = ctx.width, H = ctx.height;
    const auto& splats = ctx.splats;
    if (grad_image.width != W || grad_image.height != H)
        throw ValidationError("gradient image size does not match the forward pass");

    std::vector<int> order = depth_order(splats);
    const int tiles_x = (W + kTileSize - 1) / kTileSize;
    const int tiles_y = (H + kTileSize - 1) / kTileSize;
    auto lists = build_tile_lists(splats, order, tiles_x, tiles_y, ctx.mode);

    std::vector<std::vector<SplatGrads>> tile_grads(lists.size());

#pragma omp parallel for schedule(dynamic)
    for (long tile = 0; tile < static_cast<long>(lists.size()); ++tile) {
        const auto& cand = lists[tile];
        auto& grads = tile_grads[tile];
        grads.assign(splats.size(), SplatGrads{});
        int ty = static_cast<int>(tile) / tiles_x, tx = static_cast<int>(tile) % tiles_x;
        std::vector<Step> steps;
        for (int y = ty * kTileSize; y < std::min(H, (ty + 1) * kTileSize); ++y) {
            for (int x = tx * kTileSize; x < std::min(W, (tx + 1) * kTileSize); ++x) {
                steps.clear();
                Eigen::Vector3d color;
                double alpha;
                const double px = x + 0.5, py = y + 0.5;
                composite_pixel(splats, cand, px, py, ctx.background, color, alpha, &steps);

                Eigen::Vector3d gC(grad_image.at(x, y, 0), grad_image.at(x, y, 1), grad_image.at(x, y, 2));
                double gA = grad_alpha_map.empty() ? 0.0 : grad_alpha_map[static_cast<size_t>(y) * W + x];
                if (gC.isZero(0.0) && gA == 0.0) continue;

                double T_final = 1.0 - alpha;
                Eigen::Vector3d suffix = T_final * ctx.background; // rear color sum incl. background
                for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
                    const Step& st = *it;
                    const Splat2D& s = splats[st.idx];
                    SplatGrads& g = grads[st.idx];
                    double contrib = st.alpha_eff * st.transmittance;
                    g.rgb += gC * contrib;
                    double one_minus = 1.0 - st.alpha_eff;
                    double g_aeff = gC.dot(s.rgb * st.transmittance - suffix / one_minus) +
                                    gA * (T_final / one_minus);
                    suffix += s.rgb * contrib;
                    if (st.clamped) continue; // flat region of the 0.99 clamp
                    double g_alpha = g_aeff * st.sigma;
                    double g_sigma = g_aeff * s.alpha;
                    g.alpha += g_alpha;

                    Eigen::Vector2d d(px - s.mean2d.x(), py - s.mean2d.y());
                    double det = s.cov(0, 0) * s.cov(1, 1) - s.cov(0, 1) * s.cov(1, 0);
                    Eigen::Matrix2d inv;
                    inv << s.cov(1, 1), -s.cov(0, 1), -s.cov(1, 0), s.cov(0, 0);
                    inv /= det;
                    Eigen::Vector2d Ad = inv * d;
                    g.mean2d += g_sigma * st.sigma * Ad;
                    g.cov += 0.5 * g_sigma * st.sigma * Ad * Ad.transpose();
                }
            }
        }
    }

    std::vector<SplatGrads> total(splats.size());
    for (const auto& grads : tile_grads)
        for (size_t i = 0; i < splats.size(); ++i) {
            total[i].mean2d += grads[i].mean2d;
            total[i].cov += grads[i].cov;
            total[i].rgb += grads[i].rgb;
            total[i].alpha += grads[i].alpha;
        }
    return total;
}

GaussianRenderResult render_gaussians(const WorldGaussians& world, const Camera& cam,
                                      const Eigen::Vector3d& background, RasterMode mode) {
    cam.validate();
    GaussianRenderResult res;
    res.splat_of_gaussian.assign(world.size(), -1);
    const int ncoef = sh_coeff_count(world.sh_degree);
    std::vector<Splat2D> splats;
    for (size_t i = 0; i < world.size(); ++i) {
        auto s = project(world.means[i], world.rotations[i], world.scales[i], world.opacities[i],
                         world.sh_degree, &world.sh_coeffs[i * ncoef], cam, static_cast<int>(i));
        if (s) {
            res.splat_of_gaussian[i] = static_cast<int>(splats.size());
            splats.push_back(*s);
        }
    }
    res.out = rasterize(splats, cam, background, mode, &res.ctx);
    return res;
}

WorldGrads render_gaussians_backward(const WorldGaussians& world, const Camera& cam,
                                     const GaussianRenderResult& res, const Image& grad_image,
                                     const std::vector<double>& grad_alpha_map) {
    auto splat_grads = rasterize_backward(res.ctx, grad_image, grad_alpha_map);
    WorldGrads g = WorldGrads::zero(world);
    const int ncoef = sh_coeff_count(world.sh_degree);
    for (size_t i = 0; i < world.size(); ++i) {
        int sidx = res.splat_of_gaussian[i];
        if (sidx < 0) continue;
        project_backward(world.means[i], world.rotations[i], world.scales[i], world.opacities[i],
                         world.sh_degree, &world.sh_coeffs[i * ncoef], cam, splat_grads[sidx], g.means[i],
                         g.rotations[i], g.scales[i], g.opacities[i], &g.sh_coeffs[i * ncoef]);
    }
    return g;
}

std::vector<int> visible_set(const GaussianRenderResult& res, double threshold) {
    std::vector<int> vis;
    for (size_t i = 0; i < res.splat_of_gaussian.size(); ++i) {
        int sidx = res.splat_of_gaussian[i];
        if (sidx >= 0 && res.out.max_contrib[sidx] > threshold) vis.push_back(static_cast<int>(i));
    }
    return vis;
}

} // namespace gavatar
