#include "gavatar/gsbinding.hpp"

#include "gavatar/rng.hpp"
#include "gavatar/so3.hpp"

namespace gavatar {

void BoundGaussianCloud::validate(int face_count) const {
    const size_t n = size();
    if (barycentric.size() != n || local_offset.size() != n || log_scale.size() != n ||
        rotation.size() != n || opacity_logit.size() != n || sh_coeffs.size() != n * sh_count())
        throw ValidationError("cloud attribute arrays have inconsistent sizes");
    for (size_t i = 0; i < n; ++i) {
        if (triangle_id[i] < 0 || triangle_id[i] >= face_count)
            throw ValidationError("gaussian " + std::to_string(i) + " has an invalid triangle_id");
        const Eigen::Vector3d& b = barycentric[i];
        if (b.minCoeff() < -1e-12 || std::abs(b.sum() - 1.0) > 1e-6)
            throw ValidationError("gaussian " + std::to_string(i) + " barycentric weights not convex");
    }
}

BoundGaussianCloud init_bindings(const Mesh& mesh, int per_triangle, uint64_t seed) {
    const int F = static_cast<int>(mesh.faces.rows());
    if (F == 0) throw ValidationError("init_bindings: mesh has no faces");
    if (per_triangle < 1) throw ValidationError("init_bindings: per_triangle must be >= 1");

    Rng rng(seed);
    BoundGaussianCloud c;
    c.sh_degree = 0;
    const size_t n = static_cast<size_t>(F) * per_triangle;
    c.triangle_id.reserve(n);
    for (int f = 0; f < F; ++f) {
        for (int k = 0; k < per_triangle; ++k) {
            c.triangle_id.push_back(f);
            Eigen::Vector3d b(1.0 / 3, 1.0 / 3, 1.0 / 3);
            if (k > 0) {
                // uniform over the triangle via the folding trick
                double u = rng.uniform(), v = rng.uniform();
                if (u + v > 1) {
                    u = 1 - u;
                    v = 1 - v;
                }
                b = Eigen::Vector3d(1 - u - v, u, v);
            }
            c.barycentric.push_back(b);
            c.local_offset.push_back(Eigen::Vector3d::Zero());
            c.log_scale.push_back(Eigen::Vector3d::Constant(std::log(0.5)));
            c.rotation.push_back(Eigen::Vector4d(1, 0, 0, 0));
            c.opacity_logit.push_back(logit(0.5));
            c.sh_coeffs.push_back(Eigen::Vector3d::Zero()); // mid-gray: 0.5 after the SH offset
        }
    }
    return c;
}

WorldGaussians to_world(const BoundGaussianCloud& cloud, const Mesh& mesh, const TriangleFrames& frames) {
    cloud.validate(static_cast<int>(mesh.faces.rows()));
    const size_t n = cloud.size();
    WorldGaussians w;
    w.means.resize(n);
    w.rotations.resize(n);
    w.scales.resize(n);
    w.opacities.resize(n);
    w.sh_degree = cloud.sh_degree;
    w.sh_coeffs = cloud.sh_coeffs;
    w.source.resize(n);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        int f = cloud.triangle_id[i];
        const Eigen::Matrix3d& Rf = frames.rotations[f];
        double sf = frames.scales[f];
        Eigen::Vector3d anchor = Eigen::Vector3d::Zero();
        for (int k = 0; k < 3; ++k)
            anchor += cloud.barycentric[i][k] * Eigen::Vector3d(mesh.vertices.row(mesh.faces(f, k)));
        w.means[i] = anchor + Rf * (sf * cloud.local_offset[i]);
        w.rotations[i] = Rf * quatn_to_rot(cloud.rotation[i]);
        w.scales[i] = sf * cloud.log_scale[i].array().exp().matrix();
        w.opacities[i] = sigmoid(cloud.opacity_logit[i]);
        w.source[i] = static_cast<int>(i);
    }
    return w;
}

WorldGrads WorldGrads::zero(const WorldGaussians& w) {
    WorldGrads g;
    g.means.assign(w.size(), Eigen::Vector3d::Zero());
    g.rotations.assign(w.size(), Eigen::Matrix3d::Zero());
    g.scales.assign(w.size(), Eigen::Vector3d::Zero());
    g.opacities.assign(w.size(), 0.0);
    g.sh_coeffs.assign(w.sh_coeffs.size(), Eigen::Vector3d::Zero());
    return g;
}

CloudGrads CloudGrads::zero(const BoundGaussianCloud& c) {
    CloudGrads g;
    g.local_offset.assign(c.size(), Eigen::Vector3d::Zero());
    g.log_scale.assign(c.size(), Eigen::Vector3d::Zero());
    g.rotation.assign(c.size(), Eigen::Vector4d::Zero());
    g.opacity_logit.assign(c.size(), 0.0);
    g.sh_coeffs.assign(c.sh_coeffs.size(), Eigen::Vector3d::Zero());
    return g;
}

void to_world_backward(const BoundGaussianCloud& cloud, const Mesh& mesh, const TriangleFrames& frames,
                       const WorldGrads& grads, CloudGrads& g_cloud, TriangleFrameGrads& g_frames,
                       Eigen::MatrixXd& grad_vertices) {
    const size_t n = cloud.size();
    const int ncoef = cloud.sh_count();
    for (size_t i = 0; i < n; ++i) {
        int f = cloud.triangle_id[i];
        const Eigen::Matrix3d& Rf = frames.rotations[f];
        double sf = frames.scales[f];
        const Eigen::Vector3d& mu = cloud.local_offset[i];

        // mean = sum_k b_k v_k + Rf * (sf * mu)
        const Eigen::Vector3d& gm = grads.means[i];
        for (int k = 0; k < 3; ++k)
            grad_vertices.row(mesh.faces(f, k)) += (cloud.barycentric[i][k] * gm).transpose();
        g_frames.rotations[f] += gm * (sf * mu).transpose();
        g_frames.scales[f] += gm.dot(Rf * mu);
        g_cloud.local_offset[i] += sf * (Rf.transpose() * gm);

        // R_w = Rf * R(q)
        Eigen::Matrix3d Rq = quatn_to_rot(cloud.rotation[i]);
        const Eigen::Matrix3d& gRw = grads.rotations[i];
        g_frames.rotations[f] += gRw * Rq.transpose();
        g_cloud.rotation[i] += quatn_to_rot_backward(cloud.rotation[i], Rf.transpose() * gRw);

        // s_w = sf * exp(s)
        Eigen::Vector3d es = cloud.log_scale[i].array().exp().matrix();
        g_frames.scales[f] += grads.scales[i].dot(es);
        g_cloud.log_scale[i] += sf * grads.scales[i].cwiseProduct(es);

        // alpha = sigmoid(logit)
        double a = sigmoid(cloud.opacity_logit[i]);
        g_cloud.opacity_logit[i] += grads.opacities[i] * a * (1 - a);

        for (int k = 0; k < ncoef; ++k) g_cloud.sh_coeffs[i * ncoef + k] += grads.sh_coeffs[i * ncoef + k];
    }
}

GaussianResiduals GaussianResiduals::zero(size_t n) {
    GaussianResiduals r;
    r.d_mean.assign(n, Eigen::Vector3d::Zero());
    r.d_log_scale.assign(n, Eigen::Vector3d::Zero());
    r.d_rot.assign(n, Eigen::Vector4d::Zero());
    r.d_alpha.assign(n, 0.0);
    return r;
}

WorldGaussians apply_residuals(const WorldGaussians& world, const GaussianResiduals& res) {
    if (res.size() != world.size()) throw ValidationError("residual count does not match gaussian count");
    WorldGaussians out = world;
    for (size_t i = 0; i < world.size(); ++i) {
        if (!res.d_mean[i].allFinite() || !res.d_log_scale[i].allFinite() || !res.d_rot[i].allFinite() ||
            !std::isfinite(res.d_alpha[i]))
            throw ValidationError("non-finite residual for gaussian " + std::to_string(i));
        out.means[i] = world.means[i] + res.d_mean[i];
        out.scales[i] = world.scales[i].cwiseProduct(res.d_log_scale[i].array().exp().matrix());
        Eigen::Vector4d q = Eigen::Vector4d(1, 0, 0, 0) + res.d_rot[i];
        out.rotations[i] = world.rotations[i] * quatn_to_rot(q);
        // exact pass-through at zero so disabled residuals reduce bitwise
        out.opacities[i] = res.d_alpha[i] == 0.0 ? world.opacities[i]
                                                 : sigmoid(logit(world.opacities[i]) + res.d_alpha[i]);
    }
    return out;
}

void apply_residuals_backward(const WorldGaussians& world, const GaussianResiduals& res,
                              const WorldGrads& grads_out, WorldGrads& grads_in, ResidualGrads& g_res) {
    const size_t n = world.size();
    g_res.d_mean.assign(n, Eigen::Vector3d::Zero());
    g_res.d_log_scale.assign(n, Eigen::Vector3d::Zero());
    g_res.d_rot.assign(n, Eigen::Vector4d::Zero());
    g_res.d_alpha.assign(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        grads_in.means[i] += grads_out.means[i];
        g_res.d_mean[i] = grads_out.means[i];

        Eigen::Vector3d es = res.d_log_scale[i].array().exp().matrix();
        grads_in.scales[i] += grads_out.scales[i].cwiseProduct(es);
        g_res.d_log_scale[i] = grads_out.scales[i].cwiseProduct(world.scales[i]).cwiseProduct(es);

        Eigen::Vector4d q = Eigen::Vector4d(1, 0, 0, 0) + res.d_rot[i];
        Eigen::Matrix3d Rd = quatn_to_rot(q);
        grads_in.rotations[i] += grads_out.rotations[i] * Rd.transpose();
        g_res.d_rot[i] = quatn_to_rot_backward(q, world.rotations[i].transpose() * grads_out.rotations[i]);

        double l = logit(world.opacities[i]) + res.d_alpha[i];
        double a = sigmoid(l);
        double g_l = grads_out.opacities[i] * a * (1 - a);
        g_res.d_alpha[i] = g_l;
        double a0 = world.opacities[i];
        grads_in.opacities[i] += g_l / (a0 * (1 - a0)); // d logit / d alpha0
    }
    for (size_t k = 0; k < grads_out.sh_coeffs.size(); ++k) grads_in.sh_coeffs[k] += grads_out.sh_coeffs[k];
}

void reset_opacity(BoundGaussianCloud& cloud, double value) {
    if (!(value > 0.0 && value < 1.0)) throw ValidationError("reset_opacity value must be in (0,1)");
    double l = logit(value);
    for (auto& o : cloud.opacity_logit) o = l;
}

void reanchor(BoundGaussianCloud& cloud, const Mesh& mesh, const TriangleFrames& frames,
              double epsilon_position) {
    const int F = static_cast<int>(mesh.faces.rows());
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.local_offset[i].norm() <= epsilon_position) continue;
        // current world position
        int f = cloud.triangle_id[i];
        Eigen::Vector3d anchor = Eigen::Vector3d::Zero();
        for (int k = 0; k < 3; ++k)
            anchor += cloud.barycentric[i][k] * Eigen::Vector3d(mesh.vertices.row(mesh.faces(f, k)));
        Eigen::Vector3d world = anchor + frames.rotations[f] * (frames.scales[f] * cloud.local_offset[i]);

        // nearest triangle by centroid distance
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int g = 0; g < F; ++g) {
            double d = (world - Eigen::Vector3d(frames.centroids.row(g))).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = g;
            }
        }
        // closest point on the triangle gives convex barycentric weights
        Eigen::Vector3d a = mesh.vertices.row(mesh.faces(best, 0));
        Eigen::Vector3d b = mesh.vertices.row(mesh.faces(best, 1));
        Eigen::Vector3d c = mesh.vertices.row(mesh.faces(best, 2));
        Eigen::Vector3d ab = b - a, ac = c - a, ap = world - a;
        double d1 = ab.dot(ap), d2 = ac.dot(ap);
        Eigen::Vector3d bary;
        {
            // project to the plane, then clamp to the simplex (Ericson-style)
            double d00 = ab.dot(ab), d01 = ab.dot(ac), d11 = ac.dot(ac);
            double denom = d00 * d11 - d01 * d01;
            double v = 0, w = 0;
            if (std::abs(denom) > 1e-18) {
                v = (d11 * d1 - d01 * d2) / denom;
                w = (d00 * d2 - d01 * d1) / denom;
            }
            v = std::clamp(v, 0.0, 1.0);
            w = std::clamp(w, 0.0, 1.0);
            if (v + w > 1.0) {
                double s = v + w;
                v /= s;
                w /= s;
            }
            bary = Eigen::Vector3d(1 - v - w, v, w);
        }
        Eigen::Vector3d new_anchor = bary[0] * a + bary[1] * b + bary[2] * c;
        cloud.triangle_id[i] = best;
        cloud.barycentric[i] = bary;
        cloud.local_offset[i] =
            frames.rotations[best].transpose() * (world - new_anchor) / frames.scales[best];
    }
}

} // namespace gavatar
