#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gavatar/camera.hpp"
#include "gavatar/gsbinding.hpp"
#include "gavatar/image.hpp"

namespace gavatar {

// Image-plane splat after EWA projection.
struct Splat2D {
    Eigen::Vector2d mean2d;   // pixels
    Eigen::Matrix2d cov;      // 2x2 SPD after the 0.3 px^2 blur floor
    double depth = 0;         // camera z
    Eigen::Vector3d rgb;
    double alpha = 0;         // (0,1)
    int source = -1;          // index into the originating gaussian set
};

struct RenderOutput {
    Image image;
    std::vector<double> alpha_map;   // H*W
    std::vector<double> max_contrib; // per input splat: max alpha'*T over pixels
};

// Exact evaluates every splat at every pixel; Tiled bins splats into 16x16
// tiles by a conservative footprint and agrees with Exact to < 1e-5/channel.
enum class RasterMode { Exact, Tiled };

constexpr double kBlurFloor = 0.3;        // px^2, standard splatting practice
constexpr double kAlphaClamp = 0.99;      // per-splat alpha' ceiling
constexpr double kTransmittanceEps = 1e-4; // front-to-back termination
constexpr double kTileFootprintQ = 34.0;  // Mahalanobis^2 radius for tile binning

// EWA projection of one world gaussian; nullopt when culled (behind the near
// plane or 3-sigma footprint off screen). Culling is a value, not an error.
std::optional<Splat2D> project(const Eigen::Vector3d& mean, const Eigen::Matrix3d& rotation,
                               const Eigen::Vector3d& scale, double opacity, int sh_degree,
                               const Eigen::Vector3d* sh_coeffs, const Camera& cam, int source = -1);

struct RenderContext {
    std::vector<Splat2D> splats;
    int width = 0, height = 0;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    RasterMode mode = RasterMode::Tiled;
    bool valid = false;
};

// Depth-sorts (stable tie-break on source) and alpha-composites front to back.
RenderOutput rasterize(const std::vector<Splat2D>& splats, const Camera& cam,
                       const Eigen::Vector3d& background, RasterMode mode, RenderContext* ctx = nullptr);

struct SplatGrads {
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
    double alpha = 0;
};

// Gradients for every input splat. grad_alpha_map may be empty.
std::vector<SplatGrads> rasterize_backward(const RenderContext& ctx, const Image& grad_image,
                                           const std::vector<double>& grad_alpha_map = {});

// Backward of project(); accumulates into the per-gaussian gradient slots.
void project_backward(const Eigen::Vector3d& mean, const Eigen::Matrix3d& rotation,
                      const Eigen::Vector3d& scale, double opacity, int sh_degree,
                      const Eigen::Vector3d* sh_coeffs, const Camera& cam, const SplatGrads& g,
                      Eigen::Vector3d& g_mean, Eigen::Matrix3d& g_rotation, Eigen::Vector3d& g_scale,
                      double& g_opacity, Eigen::Vector3d* g_sh);

// Full pipeline: project all gaussians, composite, and map per-splat results
// back to gaussian indices.
struct GaussianRenderResult {
    RenderOutput out;
    RenderContext ctx;
    std::vector<int> splat_of_gaussian; // -1 when culled
};

GaussianRenderResult render_gaussians(const WorldGaussians& world, const Camera& cam,
                                      const Eigen::Vector3d& background, RasterMode mode);

WorldGrads render_gaussians_backward(const WorldGaussians& world, const Camera& cam,
                                     const GaussianRenderResult& res, const Image& grad_image,
                                     const std::vector<double>& grad_alpha_map = {});

// Gaussian indices whose max pixel contribution exceeds the threshold.
std::vector<int> visible_set(const GaussianRenderResult& res, double threshold = 1e-3);

} // namespace gavatar
