#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "gavatar/binio.hpp"
#include "gavatar/headmodel.hpp"
#include "gavatar/rng.hpp"
#include "gavatar/so3.hpp"
#include "test_util.hpp"

using namespace gavatar;
using testutil::random_model;
using testutil::random_params;

TEST_CASE("save/load round-trips field by field") {
    Rng rng(11);
    HeadModel m = random_model(rng);
    std::string path = (std::filesystem::temp_directory_path() / "ghm_roundtrip.ghm").string();
    // f32 storage: quantize the source first so equality is exact
    auto q = [](Eigen::MatrixXd& M) {
        for (int i = 0; i < M.size(); ++i) M.data()[i] = quantize_f32(M.data()[i]);
    };
    q(m.template_vertices);
    for (auto& B : m.shape_basis) q(B);
    for (auto& B : m.expression_basis) q(B);
    q(m.vertex_offsets);
    q(m.skinning_weights);
    // renormalize rows after quantization to keep convexity within 1e-6
    for (int v = 0; v < m.vertex_count(); ++v) m.skinning_weights.row(v) /= m.skinning_weights.row(v).sum();
    q(m.skinning_weights);
    q(m.joint_rest_positions);
    q(m.vertex_colors);

    save_head_model(path, m);
    HeadModel r = load_head_model(path);
    CHECK(r.template_vertices == m.template_vertices);
    CHECK(r.faces == m.faces);
    REQUIRE(r.n_shape() == m.n_shape());
    for (int k = 0; k < m.n_shape(); ++k) CHECK(r.shape_basis[k] == m.shape_basis[k]);
    for (int k = 0; k < m.n_expr(); ++k) CHECK(r.expression_basis[k] == m.expression_basis[k]);
    CHECK(r.vertex_offsets == m.vertex_offsets);
    CHECK(r.skinning_weights == m.skinning_weights);
    CHECK(r.joint_parents == m.joint_parents);
    CHECK(r.joint_rest_positions == m.joint_rest_positions);
    CHECK(r.vertex_colors == m.vertex_colors);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".json");
}

TEST_CASE("non-convex skinning row is rejected with the row index") {
    Rng rng(12);
    HeadModel m = random_model(rng);
    m.skinning_weights.row(3).setConstant(0.5 / m.joint_count);
    std::string path = (std::filesystem::temp_directory_path() / "ghm_badrow.ghm").string();
    CHECK_THROWS_WITH_AS(save_head_model(path, m), "skinning_weights row 3 not convex", ValidationError);
}

TEST_CASE("paper-scale dimensions load (n_shape=300, n_expr=100)") {
    Rng rng(13);
    HeadModel m = random_model(rng, 8, 4, 300, 100, 5);
    std::string path = (std::filesystem::temp_directory_path() / "ghm_paperdims.ghm").string();
    save_head_model(path, m);
    HeadModel r = load_head_model(path);
    CHECK(r.n_shape() == 300);
    CHECK(r.n_expr() == 100);
    CHECK(r.joint_count == 5);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".json");
}

TEST_CASE("evaluate: zero params reproduce the template") {
    Rng rng(21);
    HeadModel m = random_model(rng);
    Mesh mesh = evaluate(m, HeadParams::zero(m));
    CHECK((mesh.vertices - m.template_vertices).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("evaluate: expression coefficient scales its basis column linearly") {
    Rng rng(22);
    HeadModel m = random_model(rng);
    HeadParams p = HeadParams::zero(m);
    const double c = 0.7;
    p.expression[1] = c;
    Mesh mesh = evaluate(m, p);
    Eigen::MatrixXd expect = m.template_vertices + c * m.expression_basis[1];
    CHECK((mesh.vertices - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("evaluate: pure translation shifts every vertex") {
    Rng rng(23);
    HeadModel m = random_model(rng);
    HeadParams p = HeadParams::zero(m);
    p.rigid_translation << 0.3, -0.2, 1.5;
    Mesh mesh = evaluate(m, p);
    for (int v = 0; v < m.vertex_count(); ++v)
        CHECK((Eigen::Vector3d(mesh.vertices.row(v)) -
               (Eigen::Vector3d(m.template_vertices.row(v)) + p.rigid_translation))
                  .norm() < 1e-12);
}

TEST_CASE("evaluate is linear in (shape, expression) at identity pose") {
    Rng rng(24);
    HeadModel m = random_model(rng);
    HeadParams p1 = HeadParams::zero(m), p2 = HeadParams::zero(m), pc = HeadParams::zero(m);
    for (int k = 0; k < m.n_expr(); ++k) {
        p1.expression[k] = rng.uniform(-1, 1);
        p2.expression[k] = rng.uniform(-1, 1);
    }
    const double a = 0.6, b = -1.2;
    pc.expression = a * p1.expression + b * p2.expression;
    Eigen::MatrixXd lhs = evaluate(m, pc).vertices;
    Eigen::MatrixXd rhs = a * evaluate(m, p1).vertices + b * evaluate(m, p2).vertices -
                          (a + b - 1) * m.template_vertices;
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("rigid motion preserves pairwise distances") {
    Rng rng(25);
    HeadModel m = random_model(rng);
    HeadParams p = HeadParams::zero(m);
    p.rigid_rotation << 0.4, -0.9, 0.3;
    p.rigid_translation << 1, 2, 3;
    Mesh mesh = evaluate(m, p);
    for (int i = 0; i < 6; ++i) {
        int a = rng.uniform_int(0, m.vertex_count() - 1), b = rng.uniform_int(0, m.vertex_count() - 1);
        double d0 = (m.template_vertices.row(a) - m.template_vertices.row(b)).norm();
        double d1 = (mesh.vertices.row(a) - mesh.vertices.row(b)).norm();
        CHECK(std::abs(d0 - d1) < 1e-9);
    }
}

TEST_CASE("analytic Jacobian matches finite differences on random models") {
    for (int trial = 0; trial < 50; ++trial) {
        Rng rng(1000 + trial);
        HeadModel m = random_model(rng, 8, 4);
        HeadParams p = random_params(m, rng);
        // random probe direction over the output
        Eigen::MatrixXd G(m.vertex_count(), 3);
        for (int i = 0; i < G.size(); ++i) G.data()[i] = rng.uniform(-1, 1);

        HeadParamGrads g = evaluate_backward(m, p, G);
        auto probe = [&](HeadParams& q) { return (evaluate(m, q).vertices.cwiseProduct(G)).sum(); };
        const double h = 1e-5;
        auto check = [&](double* x, double analytic) {
            double x0 = *x;
            *x = x0 + h;
            double fp = probe(p);
            *x = x0 - h;
            double fm = probe(p);
            *x = x0;
            CHECK(testutil::rel_err(analytic, (fp - fm) / (2 * h), 1e-6) < 1e-5);
        };
        for (int a = 0; a < 3; ++a) check(&p.rigid_rotation[a], g.rigid_rotation[a]);
        for (int a = 0; a < 3; ++a) check(&p.rigid_translation[a], g.rigid_translation[a]);
        for (int j = 0; j < m.joint_count; ++j)
            for (int a = 0; a < 3; ++a) check(&p.joint_rotations[j][a], g.joint_rotations[j][a]);
        for (int k = 0; k < m.n_shape(); ++k) check(&p.shape[k], g.shape[k]);
        for (int k = 0; k < m.n_expr(); ++k) check(&p.expression[k], g.expression[k]);
    }
}

TEST_CASE("triangle frames: planar CCW triangle has +z normal column") {
    Mesh mesh;
    mesh.vertices.resize(3, 3);
    mesh.vertices << 0, 0, 0, 1, 0, 0, 0.5, std::sqrt(3.0) / 2, 0;
    mesh.faces.resize(1, 3);
    mesh.faces << 0, 1, 2;
    TriangleFrames fr = triangle_frames(mesh);
    CHECK((fr.rotations[0].col(1) - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
    CHECK(std::abs(fr.rotations[0].determinant() - 1.0) < 1e-9);
    CHECK(fr.scales[0] == doctest::Approx(1.0));
}

TEST_CASE("triangle frames: similarity invariance under uniform scaling") {
    Rng rng(31);
    HeadModel m = random_model(rng);
    Mesh mesh = evaluate(m, HeadParams::zero(m));
    TriangleFrames f1 = triangle_frames(mesh);
    mesh.vertices *= 2.0;
    TriangleFrames f2 = triangle_frames(mesh);
    for (int f = 0; f < m.face_count(); ++f) {
        CHECK((f1.rotations[f] - f2.rotations[f]).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(f2.scales[f] == doctest::Approx(2.0 * f1.scales[f]));
    }
}

TEST_CASE("triangle frames match a brute-force cross product oracle; R^T R = I") {
    Rng rng(32);
    HeadModel m = random_model(rng);
    Mesh mesh = evaluate(m, random_params(m, rng));
    TriangleFrames fr = triangle_frames(mesh);
    for (int f = 0; f < m.face_count(); ++f) {
        Eigen::Vector3d v0 = mesh.vertices.row(mesh.faces(f, 0));
        Eigen::Vector3d v1 = mesh.vertices.row(mesh.faces(f, 1));
        Eigen::Vector3d v2 = mesh.vertices.row(mesh.faces(f, 2));
        Eigen::Vector3d x = (v1 - v0).normalized();
        Eigen::Vector3d n = ((v1 - v0).cross(v2 - v0)).normalized();
        Eigen::Vector3d y = x.cross(n);
        CHECK((fr.rotations[f].col(0) - x).norm() < 1e-12);
        CHECK((fr.rotations[f].col(1) - n).norm() < 1e-12);
        CHECK((fr.rotations[f].col(2) - y).norm() < 1e-12);
        CHECK((fr.rotations[f].transpose() * fr.rotations[f] - Eigen::Matrix3d::Identity())
                  .cwiseAbs()
                  .maxCoeff() < 1e-6);
        CHECK((Eigen::Vector3d(fr.centroids.row(f)) - (v0 + v1 + v2) / 3).norm() < 1e-12);
    }
}

TEST_CASE("degenerate triangle falls back to identity frame with scale floor") {
    Mesh mesh;
    mesh.vertices.resize(3, 3);
    mesh.vertices.setZero(); // zero-area
    mesh.faces.resize(1, 3);
    mesh.faces << 0, 1, 2;
    TriangleFrames fr = triangle_frames(mesh);
    CHECK(fr.degenerate[0] == 1);
    CHECK(fr.rotations[0] == Eigen::Matrix3d::Identity());
    CHECK(fr.scales[0] == doctest::Approx(1e-6));

    // with a previous frame available, reuse it
    TriangleFrames prev = fr;
    prev.rotations[0] = gavatar::rodrigues(Eigen::Vector3d(0.1, 0.2, 0.3));
    prev.scales[0] = 0.5;
    TriangleFrames fr2 = triangle_frames(mesh, &prev);
    CHECK(fr2.degenerate[0] == 1);
    CHECK(fr2.rotations[0] == prev.rotations[0]);
    CHECK(fr2.scales[0] == 0.5);
}

TEST_CASE("triangle frame gradients match finite differences") {
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(4000 + trial);
        HeadModel m = random_model(rng, 10, 6);
        Mesh mesh = evaluate(m, random_params(m, rng));
        TriangleFrames fr = triangle_frames(mesh);

        TriangleFrameGrads g;
        g.centroids.resize(m.face_count(), 3);
        for (int i = 0; i < g.centroids.size(); ++i) g.centroids.data()[i] = rng.uniform(-1, 1);
        g.scales.resize(m.face_count());
        for (int f = 0; f < m.face_count(); ++f) g.scales[f] = rng.uniform(-1, 1);
        g.rotations.resize(m.face_count());
        for (auto& R : g.rotations)
            for (int i = 0; i < 9; ++i) R.data()[i] = rng.uniform(-1, 1);

        auto probe = [&](const Mesh& me) {
            TriangleFrames f2 = triangle_frames(me);
            double s = (f2.centroids.cwiseProduct(g.centroids)).sum() + f2.scales.dot(g.scales);
            for (int f = 0; f < m.face_count(); ++f)
                s += (f2.rotations[f].cwiseProduct(g.rotations[f])).sum();
            return s;
        };

        Eigen::MatrixXd gv = Eigen::MatrixXd::Zero(m.vertex_count(), 3);
        triangle_frames_backward(mesh, fr, g, gv);

        const double h = 1e-6;
        for (int v = 0; v < m.vertex_count(); v += 3) {
            for (int a = 0; a < 3; ++a) {
                Mesh mp = mesh, mm = mesh;
                mp.vertices(v, a) += h;
                mm.vertices(v, a) -= h;
                double fdval = (probe(mp) - probe(mm)) / (2 * h);
                CHECK(testutil::rel_err(gv(v, a), fdval, 1e-5) < 1e-4);
            }
        }
    }
}
