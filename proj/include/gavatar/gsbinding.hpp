#pragma once

#include <vector>

#include <Eigen/Dense>

#include "gavatar/headmodel.hpp"

namespace gavatar {

// Gaussians rigged to mesh triangles. Canonical attributes live in the host
// triangle's frame; scales are stored as logs and opacity as a logit so
// optimizer steps stay unconstrained.
struct BoundGaussianCloud {
    std::vector<int> triangle_id;
    std::vector<Eigen::Vector3d> barycentric;   // convex
    std::vector<Eigen::Vector3d> local_offset;  // triangle-frame units
    std::vector<Eigen::Vector3d> log_scale;
    std::vector<Eigen::Vector4d> rotation;      // quaternion (w,x,y,z)
    std::vector<double> opacity_logit;
    int sh_degree = 0;
    std::vector<Eigen::Vector3d> sh_coeffs;     // n * (sh_degree+1)^2, row-major per Gaussian

    size_t size() const { return triangle_id.size(); }
    int sh_count() const { return (sh_degree + 1) * (sh_degree + 1); }
    void validate(int face_count) const;
};

struct WorldGaussians {
    std::vector<Eigen::Vector3d> means;
    std::vector<Eigen::Matrix3d> rotations;
    std::vector<Eigen::Vector3d> scales;        // strictly positive
    std::vector<double> opacities;              // (0,1)
    int sh_degree = 0;
    std::vector<Eigen::Vector3d> sh_coeffs;
    std::vector<int> source;                    // index into the cloud

    size_t size() const { return means.size(); }
};

BoundGaussianCloud init_bindings(const Mesh& mesh, int per_triangle, uint64_t seed = 0);

WorldGaussians to_world(const BoundGaussianCloud& cloud, const Mesh& mesh, const TriangleFrames& frames);

// Gradients of a scalar loss w.r.t. WorldGaussians fields.
struct WorldGrads {
    std::vector<Eigen::Vector3d> means;
    std::vector<Eigen::Matrix3d> rotations;
    std::vector<Eigen::Vector3d> scales;
    std::vector<double> opacities;
    std::vector<Eigen::Vector3d> sh_coeffs;

    static WorldGrads zero(const WorldGaussians& w);
};

struct CloudGrads {
    std::vector<Eigen::Vector3d> local_offset;
    std::vector<Eigen::Vector3d> log_scale;
    std::vector<Eigen::Vector4d> rotation;
    std::vector<double> opacity_logit;
    std::vector<Eigen::Vector3d> sh_coeffs;

    static CloudGrads zero(const BoundGaussianCloud& c);
};

// Backpropagates world-space gradients into cloud attributes, triangle frame
// gradients, and the direct barycentric dependence on mesh vertices.
void to_world_backward(const BoundGaussianCloud& cloud, const Mesh& mesh, const TriangleFrames& frames,
                       const WorldGrads& grads, CloudGrads& g_cloud, TriangleFrameGrads& g_frames,
                       Eigen::MatrixXd& grad_vertices);

// Per-Gaussian residual adjustments (Dmu world units, Ds log-scale, Dr additive
// quaternion perturbation, Dalpha logit shift).
struct GaussianResiduals {
    std::vector<Eigen::Vector3d> d_mean;
    std::vector<Eigen::Vector3d> d_log_scale;
    std::vector<Eigen::Vector4d> d_rot;
    std::vector<double> d_alpha;

    static GaussianResiduals zero(size_t n);
    size_t size() const { return d_mean.size(); }
};

WorldGaussians apply_residuals(const WorldGaussians& world, const GaussianResiduals& res);

struct ResidualGrads {
    std::vector<Eigen::Vector3d> d_mean;
    std::vector<Eigen::Vector3d> d_log_scale;
    std::vector<Eigen::Vector4d> d_rot;
    std::vector<double> d_alpha;
};

// Given gradients w.r.t. the adjusted WorldGaussians, produce gradients
// w.r.t. the input WorldGaussians and the residuals.
void apply_residuals_backward(const WorldGaussians& world, const GaussianResiduals& res,
                              const WorldGrads& grads_out, WorldGrads& grads_in, ResidualGrads& g_res);

void reset_opacity(BoundGaussianCloud& cloud, double value);

// Re-assigns Gaussians whose local offset exceeds the tolerance to the nearest
// triangle (centroid distance), preserving world position.
void reanchor(BoundGaussianCloud& cloud, const Mesh& mesh, const TriangleFrames& frames,
              double epsilon_position = 1.0);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

} // namespace gavatar
