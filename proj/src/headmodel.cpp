#include "gavatar/headmodel.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "gavatar/binio.hpp"
#include "gavatar/so3.hpp"

namespace gavatar {

void HeadModel::validate() const {
    const int V = vertex_count();
    const int J = joint_count;
    if (V <= 0) throw ValidationError("template_vertices is empty");
    for (int f = 0; f < face_count(); ++f)
        for (int k = 0; k < 3; ++k)
            if (faces(f, k) < 0 || faces(f, k) >= V)
                throw ValidationError("faces row " + std::to_string(f) + " indexes an invalid vertex");
    for (size_t k = 0; k < shape_basis.size(); ++k)
        if (shape_basis[k].rows() != V || shape_basis[k].cols() != 3)
            throw ValidationError("shape_basis column " + std::to_string(k) + " does not match V");
    for (size_t k = 0; k < expression_basis.size(); ++k)
        if (expression_basis[k].rows() != V || expression_basis[k].cols() != 3)
            throw ValidationError("expression_basis column " + std::to_string(k) + " does not match V");
    if (vertex_offsets.rows() != V || vertex_offsets.cols() != 3)
        throw ValidationError("vertex_offsets does not match V");
    if (vertex_colors.rows() != V || vertex_colors.cols() != 3)
        throw ValidationError("vertex_colors does not match V");
    if (skinning_weights.rows() != V || skinning_weights.cols() != J)
        throw ValidationError("skinning_weights does not match V x J");
    for (int v = 0; v < V; ++v) {
        double sum = 0;
        for (int j = 0; j < J; ++j) {
            if (skinning_weights(v, j) < -1e-12)
                throw ValidationError("skinning_weights row " + std::to_string(v) + " not convex");
            sum += skinning_weights(v, j);
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw ValidationError("skinning_weights row " + std::to_string(v) + " not convex");
    }
    if (static_cast<int>(joint_parents.size()) != J || joint_rest_positions.rows() != J)
        throw ValidationError("joint arrays do not match joint_count");
    // Parents must precede children (implies acyclicity and lets transforms
    // be composed in a single index-order pass).
    for (int j = 0; j < J; ++j)
        if (joint_parents[j] >= j)
            throw ValidationError("joint_parents row " + std::to_string(j) + " does not precede its child");
}

HeadParams HeadParams::zero(const HeadModel& model) {
    HeadParams p;
    p.joint_rotations.assign(model.joint_count, Eigen::Vector3d::Zero());
    p.shape = Eigen::VectorXd::Zero(model.n_shape());
    p.expression = Eigen::VectorXd::Zero(model.n_expr());
    return p;
}

void HeadParams::check_dims(const HeadModel& model) const {
    if (static_cast<int>(joint_rotations.size()) != model.joint_count)
        throw ValidationError("joint_rotations count does not match model");
    if (shape.size() != model.n_shape()) throw ValidationError("shape coefficient count does not match model");
    if (expression.size() != model.n_expr())
        throw ValidationError("expression coefficient count does not match model");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!shape.allFinite() || !expression.allFinite() || !rigid_rotation.allFinite() ||
        !rigid_translation.allFinite())
        throw ValidationError("head parameters contain non-finite values");
    for (const auto& r : joint_rotations)
        if (!finite(r.x()) || !finite(r.y()) || !finite(r.z()))
            throw ValidationError("head parameters contain non-finite values");
}

namespace {

struct JointTransform {
    Eigen::Matrix3d R;
    Eigen::Vector3d t;
};

// World transforms per joint: G_j = G_parent * [R_j | j_j - j_parent], then
// skinning matrix A_j = G_j * [I | -j_j].
std::vector<JointTransform> joint_world_transforms(const HeadModel& model, const HeadParams& params,
                                                   std::vector<Eigen::Matrix3d>* local_rots = nullptr) {
    const int J = model.joint_count;
    std::vector<JointTransform> G(J);
    for (int j = 0; j < J; ++j) {
        Eigen::Matrix3d Rj = rodrigues(params.joint_rotations[j]);
        if (local_rots) (*local_rots)[j] = Rj;
        int p = model.joint_parents[j];
        Eigen::Vector3d jj = model.joint_rest_positions.row(j);
        Eigen::Vector3d dj = p < 0 ? jj : Eigen::Vector3d(jj - Eigen::Vector3d(model.joint_rest_positions.row(p)));
        if (p < 0) {
            G[j].R = Rj;
            G[j].t = dj;
        } else {
            G[j].R = G[p].R * Rj;
            G[j].t = G[p].R * dj + G[p].t;
        }
    }
    return G;
}

} // namespace

Mesh evaluate(const HeadModel& model, const HeadParams& params) {
    params.check_dims(model);
    const int V = model.vertex_count();
    const int J = model.joint_count;

    Eigen::MatrixXd shaped = model.template_vertices + model.vertex_offsets;
    for (int k = 0; k < model.n_shape(); ++k) shaped += params.shape[k] * model.shape_basis[k];
    for (int k = 0; k < model.n_expr(); ++k) shaped += params.expression[k] * model.expression_basis[k];

    auto G = joint_world_transforms(model, params);
    // A_j applied to a vertex: M_j v + b_j with M_j = G_j.R, b_j = G_j.t - G_j.R * j_j
    std::vector<Eigen::Matrix3d> M(J);
    std::vector<Eigen::Vector3d> b(J);
    for (int j = 0; j < J; ++j) {
        M[j] = G[j].R;
        b[j] = G[j].t - G[j].R * Eigen::Vector3d(model.joint_rest_positions.row(j));
    }

    Eigen::Matrix3d Rg = rodrigues(params.rigid_rotation);

    Mesh mesh;
    mesh.faces = model.faces;
    mesh.vertices.resize(V, 3);
#pragma omp parallel for schedule(static)
    for (int v = 0; v < V; ++v) {
        Eigen::Vector3d x = shaped.row(v);
        Eigen::Vector3d skinned = Eigen::Vector3d::Zero();
        if (J == 0) {
            skinned = x;
        } else {
            for (int j = 0; j < J; ++j) {
                double w = model.skinning_weights(v, j);
                if (w != 0.0) skinned += w * (M[j] * x + b[j]);
            }
        }
        mesh.vertices.row(v) = (Rg * skinned + params.rigid_translation).transpose();
    }
    if (!mesh.vertices.allFinite()) throw std::runtime_error("evaluate produced non-finite vertices");
    return mesh;
}

HeadParamGrads evaluate_backward(const HeadModel& model, const HeadParams& params,
                                 const Eigen::MatrixXd& grad_vertices) {
    params.check_dims(model);
    const int V = model.vertex_count();
    const int J = model.joint_count;

    Eigen::MatrixXd shaped = model.template_vertices + model.vertex_offsets;
    for (int k = 0; k < model.n_shape(); ++k) shaped += params.shape[k] * model.shape_basis[k];
    for (int k = 0; k < model.n_expr(); ++k) shaped += params.expression[k] * model.expression_basis[k];

    std::vector<Eigen::Matrix3d> localR(J);
    auto G = joint_world_transforms(model, params, &localR);
    std::vector<Eigen::Matrix3d> M(J);
    std::vector<Eigen::Vector3d> b(J);
    for (int j = 0; j < J; ++j) {
        M[j] = G[j].R;
        b[j] = G[j].t - G[j].R * Eigen::Vector3d(model.joint_rest_positions.row(j));
    }
    Eigen::Matrix3d Rg = rodrigues(params.rigid_rotation);

    HeadParamGrads g;
    g.joint_rotations.assign(J, Eigen::Vector3d::Zero());
    g.shape = Eigen::VectorXd::Zero(model.n_shape());
    g.expression = Eigen::VectorXd::Zero(model.n_expr());

    Eigen::Matrix3d gRg = Eigen::Matrix3d::Zero();
    std::vector<Eigen::Matrix3d> gM(J, Eigen::Matrix3d::Zero());
    std::vector<Eigen::Vector3d> gb(J, Eigen::Vector3d::Zero());
    Eigen::MatrixXd gShaped = Eigen::MatrixXd::Zero(V, 3);

    for (int v = 0; v < V; ++v) {
        Eigen::Vector3d gv = grad_vertices.row(v);
        g.rigid_translation += gv;
        Eigen::Vector3d x = shaped.row(v);
        Eigen::Vector3d skinned = Eigen::Vector3d::Zero();
        if (J == 0) skinned = x;
        else
            for (int j = 0; j < J; ++j) {
                double w = model.skinning_weights(v, j);
                if (w != 0.0) skinned += w * (M[j] * x + b[j]);
            }
        gRg += gv * skinned.transpose();
        Eigen::Vector3d gSkinned = Rg.transpose() * gv;
        if (J == 0) {
            gShaped.row(v) += gSkinned.transpose();
        } else {
            for (int j = 0; j < J; ++j) {
                double w = model.skinning_weights(v, j);
                if (w == 0.0) continue;
                gM[j] += w * gSkinned * x.transpose();
                gb[j] += w * gSkinned;
                gShaped.row(v) += (w * (M[j].transpose() * gSkinned)).transpose();
            }
        }
    }
    g.rigid_rotation = rodrigues_backward(params.rigid_rotation, gRg);

    // A_j = G_j * [I | -j_j]
    std::vector<Eigen::Matrix3d> gGR(J, Eigen::Matrix3d::Zero());
    std::vector<Eigen::Vector3d> gGt(J, Eigen::Vector3d::Zero());
    for (int j = 0; j < J; ++j) {
        Eigen::Vector3d jj = model.joint_rest_positions.row(j);
        gGR[j] += gM[j] - gb[j] * jj.transpose();
        gGt[j] += gb[j];
    }
    // Reverse topological order: children before parents (parents precede
    // children in index order by construction of valid assets; walk backwards).
    for (int j = J - 1; j >= 0; --j) {
        int p = model.joint_parents[j];
        Eigen::Vector3d jj = model.joint_rest_positions.row(j);
        Eigen::Vector3d dj = p < 0 ? jj : Eigen::Vector3d(jj - Eigen::Vector3d(model.joint_rest_positions.row(p)));
        Eigen::Matrix3d gLocalR;
        if (p < 0) {
            gLocalR = gGR[j];
        } else {
            gGR[p] += gGR[j] * localR[j].transpose() + gGt[j] * dj.transpose();
            gGt[p] += gGt[j];
            gLocalR = G[p].R.transpose() * gGR[j];
        }
        g.joint_rotations[j] = rodrigues_backward(params.joint_rotations[j], gLocalR);
    }

    for (int k = 0; k < model.n_shape(); ++k) g.shape[k] = (model.shape_basis[k].cwiseProduct(gShaped)).sum();
    for (int k = 0; k < model.n_expr(); ++k)
        g.expression[k] = (model.expression_basis[k].cwiseProduct(gShaped)).sum();
    return g;
}

TriangleFrames triangle_frames(const Mesh& mesh, const TriangleFrames* prev) {
    const int F = static_cast<int>(mesh.faces.rows());
    TriangleFrames out;
    out.centroids.resize(F, 3);
    out.rotations.resize(F);
    out.scales.resize(F);
    out.degenerate.assign(F, 0);
#pragma omp parallel for schedule(static)
    for (int f = 0; f < F; ++f) {
        Eigen::Vector3d v0 = mesh.vertices.row(mesh.faces(f, 0));
        Eigen::Vector3d v1 = mesh.vertices.row(mesh.faces(f, 1));
        Eigen::Vector3d v2 = mesh.vertices.row(mesh.faces(f, 2));
        out.centroids.row(f) = ((v0 + v1 + v2) / 3.0).transpose();
        Eigen::Vector3d e1 = v1 - v0, e2 = v2 - v0;
        Eigen::Vector3d n = e1.cross(e2);
        double area = 0.5 * n.norm();
        if (area < 1e-12) {
            out.degenerate[f] = 1;
            if (prev && f < static_cast<int>(prev->rotations.size())) {
                out.rotations[f] = prev->rotations[f];
                out.scales[f] = prev->scales[f];
            } else {
                out.rotations[f] = Eigen::Matrix3d::Identity();
                double s = ((v1 - v0).norm() + (v2 - v1).norm() + (v0 - v2).norm()) / 3.0;
                out.scales[f] = std::max(s, 1e-6);
            }
            continue;
        }
        Eigen::Vector3d xhat = e1.normalized();
        Eigen::Vector3d nhat = n.normalized();
        Eigen::Matrix3d R;
        R.col(0) = xhat;
        R.col(1) = nhat;
        R.col(2) = xhat.cross(nhat);
        out.rotations[f] = R;
        out.scales[f] = ((v1 - v0).norm() + (v2 - v1).norm() + (v0 - v2).norm()) / 3.0;
    }
    return out;
}

void triangle_frames_backward(const Mesh& mesh, const TriangleFrames& frames,
                              const TriangleFrameGrads& grads, Eigen::MatrixXd& grad_vertices) {
    const int F = static_cast<int>(mesh.faces.rows());
    for (int f = 0; f < F; ++f) {
        int i0 = mesh.faces(f, 0), i1 = mesh.faces(f, 1), i2 = mesh.faces(f, 2);
        Eigen::Vector3d v0 = mesh.vertices.row(i0);
        Eigen::Vector3d v1 = mesh.vertices.row(i1);
        Eigen::Vector3d v2 = mesh.vertices.row(i2);

        Eigen::Vector3d gc = grads.centroids.row(f);
        grad_vertices.row(i0) += (gc / 3.0).transpose();
        grad_vertices.row(i1) += (gc / 3.0).transpose();
        grad_vertices.row(i2) += (gc / 3.0).transpose();

        if (frames.degenerate[f]) continue; // fallback frames are constants

        // scale = mean edge length
        double gs = grads.scales[f] / 3.0;
        auto edge_grad = [&](const Eigen::Vector3d& a, const Eigen::Vector3d& b, int ia, int ib) {
            Eigen::Vector3d d = (b - a).normalized();
            grad_vertices.row(ib) += (gs * d).transpose();
            grad_vertices.row(ia) -= (gs * d).transpose();
        };
        edge_grad(v0, v1, i0, i1);
        edge_grad(v1, v2, i1, i2);
        edge_grad(v2, v0, i2, i0);

        // rotation columns: c0 = xhat, c1 = nhat, c2 = xhat x nhat
        Eigen::Vector3d e1 = v1 - v0, e2 = v2 - v0;
        Eigen::Vector3d n = e1.cross(e2);
        Eigen::Vector3d xhat = e1.normalized();
        Eigen::Vector3d nhat = n.normalized();
        const Eigen::Matrix3d& gR = grads.rotations[f];
        Eigen::Vector3d gc0 = gR.col(0), gc1 = gR.col(1), gc2 = gR.col(2);

        Eigen::Vector3d gx = gc0 + skew(nhat) * gc2;
        Eigen::Vector3d gn_hat = gc1 - skew(xhat) * gc2;

        double len_e1 = e1.norm(), len_n = n.norm();
        Eigen::Vector3d ge1 = (gx - xhat * xhat.dot(gx)) / len_e1;
        Eigen::Vector3d gn = (gn_hat - nhat * nhat.dot(gn_hat)) / len_n;
        // n = e1 x e2
        ge1 += skew(e2) * gn;
        Eigen::Vector3d ge2 = -skew(e1) * gn;

        grad_vertices.row(i1) += ge1.transpose();
        grad_vertices.row(i0) -= ge1.transpose();
        grad_vertices.row(i2) += ge2.transpose();
        grad_vertices.row(i0) -= ge2.transpose();
    }
}

void save_head_model(const std::string& path, const HeadModel& model) {
    model.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    const int V = model.vertex_count(), F = model.face_count(), J = model.joint_count;
    os.write("GHM1", 4);
    write_u32(os, static_cast<uint32_t>(V));
    write_u32(os, static_cast<uint32_t>(F));
    write_u32(os, static_cast<uint32_t>(model.n_shape()));
    write_u32(os, static_cast<uint32_t>(model.n_expr()));
    write_u32(os, static_cast<uint32_t>(J));
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a) write_f32(os, static_cast<float>(model.template_vertices(v, a)));
    for (int f = 0; f < F; ++f)
        for (int k = 0; k < 3; ++k) write_u32(os, static_cast<uint32_t>(model.faces(f, k)));
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a)
            for (int k = 0; k < model.n_shape(); ++k)
                write_f32(os, static_cast<float>(model.shape_basis[k](v, a)));
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a)
            for (int k = 0; k < model.n_expr(); ++k)
                write_f32(os, static_cast<float>(model.expression_basis[k](v, a)));
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a) write_f32(os, static_cast<float>(model.vertex_offsets(v, a)));
    for (int v = 0; v < V; ++v)
        for (int j = 0; j < J; ++j) write_f32(os, static_cast<float>(model.skinning_weights(v, j)));
    for (int j = 0; j < J; ++j) write_i32(os, model.joint_parents[j]);
    for (int j = 0; j < J; ++j)
        for (int a = 0; a < 3; ++a) write_f32(os, static_cast<float>(model.joint_rest_positions(j, a)));
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a) write_f32(os, static_cast<float>(model.vertex_colors(v, a)));
    if (!os) throw std::runtime_error("write failure: " + path);

    nlohmann::json side;
    side["V"] = V;
    side["F"] = F;
    side["n_shape"] = model.n_shape();
    side["n_expr"] = model.n_expr();
    side["J"] = J;
    std::ofstream js(path + ".json");
    js << side.dump(2) << "\n";
}

HeadModel load_head_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open head model: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "GHM1") throw ValidationError("malformed header: expected magic GHM1");
    const int V = static_cast<int>(read_u32(is));
    const int F = static_cast<int>(read_u32(is));
    const int NS = static_cast<int>(read_u32(is));
    const int NE = static_cast<int>(read_u32(is));
    const int J = static_cast<int>(read_u32(is));
    if (V <= 0 || V > 10'000'000 || F < 0 || NS < 0 || NE < 0 || J < 0)
        throw ValidationError("malformed header: implausible dimensions");

    HeadModel m;
    m.template_vertices.resize(V, 3);
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a) m.template_vertices(v, a) = read_f32(is);
    m.faces.resize(F, 3);
    for (int f = 0; f < F; ++f)
        for (int k = 0; k < 3; ++k) m.faces(f, k) = static_cast<int>(read_u32(is));
    m.shape_basis.assign(NS, Eigen::MatrixXd(V, 3));
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a)
            for (int k = 0; k < NS; ++k) m.shape_basis[k](v, a) = read_f32(is);
    m.expression_basis.assign(NE, Eigen::MatrixXd(V, 3));
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a)
            for (int k = 0; k < NE; ++k) m.expression_basis[k](v, a) = read_f32(is);
    m.vertex_offsets.resize(V, 3);
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a) m.vertex_offsets(v, a) = read_f32(is);
    m.joint_count = J;
    m.skinning_weights.resize(V, J);
    for (int v = 0; v < V; ++v)
        for (int j = 0; j < J; ++j) m.skinning_weights(v, j) = read_f32(is);
    m.joint_parents.resize(J);
    for (int j = 0; j < J; ++j) m.joint_parents[j] = read_i32(is);
    m.joint_rest_positions.resize(J, 3);
    for (int j = 0; j < J; ++j)
        for (int a = 0; a < 3; ++a) m.joint_rest_positions(j, a) = read_f32(is);
    m.vertex_colors.resize(V, 3);
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a) m.vertex_colors(v, a) = read_f32(is);
    m.validate();
    return m;
}

} // namespace gavatar
