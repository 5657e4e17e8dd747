#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "gavatar/errors.hpp"
#include "gavatar/synthdata.hpp"
#include "test_util.hpp"

using namespace gavatar;

namespace {

SceneSpec small_spec() {
    SceneSpec s;
    s.seed = 7;
    s.rings = 6;
    s.segments = 8;
    s.n_shape = 2;
    s.n_expr = 4;
    s.joints = 2;
    s.views = 3;
    s.timestamps = 6;
    s.image_size = 32;
    s.sigma = 0.3;
    return s;
}

Camera front_camera(int size = 16, double f = 16) {
    Camera cam;
    cam.fx = cam.fy = f;
    cam.cx = cam.cy = size / 2.0;
    cam.width = cam.height = size;
    return cam;
}

} // namespace

TEST_CASE("generate_scene is deterministic from the seed") {
    SceneSpec spec = small_spec();
    SceneData a = generate_scene(spec), b = generate_scene(spec);
    CHECK(a.model.template_vertices == b.model.template_vertices);
    CHECK(a.model.vertex_colors == b.model.vertex_colors);
    for (int k = 0; k < spec.n_expr; ++k)
        CHECK(a.model.expression_basis[k] == b.model.expression_basis[k]);
    for (int t = 0; t < spec.timestamps; ++t) {
        CHECK(a.params_true[t].expression == b.params_true[t].expression);
        CHECK(a.params_init[t].expression == b.params_init[t].expression);
    }
    CHECK(a.cameras.size() == 3);
    for (const auto& c : a.cameras) c.validate();
}

TEST_CASE("zero corruption leaves the trajectory untouched") {
    SceneSpec spec = small_spec();
    spec.sigma = 0;
    SceneData s = generate_scene(spec);
    for (int t = 0; t < spec.timestamps; ++t)
        CHECK(s.params_true[t].expression == s.params_init[t].expression);
}

TEST_CASE("blendshape columns have zero mean and bounded magnitude") {
    SceneSpec spec = small_spec();
    SceneData s = generate_scene(spec);
    const auto& verts = s.model.template_vertices;
    const double head_size = (verts.colwise().maxCoeff() - verts.colwise().minCoeff()).norm();
    auto check_basis = [&](const Eigen::MatrixXd& b) {
        CHECK(b.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
        double max_norm = 0;
        for (int v = 0; v < b.rows(); ++v) max_norm = std::max(max_norm, b.row(v).norm());
        CHECK(max_norm <= 0.1 * head_size + 1e-12);
        CHECK(max_norm > 0.0);
    };
    for (const auto& b : s.model.shape_basis) check_basis(b);
    for (const auto& b : s.model.expression_basis) check_basis(b);
}

TEST_CASE("timestamp split is 4:1 and the held-out view is a real view") {
    SceneSpec spec = small_spec();
    spec.timestamps = 20;
    SceneData s = generate_scene(spec);
    CHECK(s.train_t.size() == 16);
    CHECK(s.heldout_t.size() == 4);
    CHECK(s.heldout_view >= 0);
    CHECK(s.heldout_view < spec.views);
}

TEST_CASE("mesh oracle: axis-aligned triangle matches a half-space coverage oracle") {
    Camera cam = front_camera();
    const double z = 2.0;
    auto world = [&](double u, double v) {
        return Eigen::RowVector3d((u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z);
    };
    Eigen::MatrixXd verts(3, 3);
    // screen-space corners (2,2), (12,2), (2,12)
    verts.row(0) = world(2, 2);
    verts.row(1) = world(12, 2);
    verts.row(2) = world(2, 12);
    Eigen::MatrixXi faces(1, 3);
    faces << 0, 1, 2;
    Eigen::MatrixXd colors(3, 3);
    colors << 1, 0, 0, 0, 1, 0, 0, 0, 1;
    Eigen::Vector3d bg(0.1, 0.1, 0.1);
    Image img = render_mesh(verts, faces, colors, cam, bg);

    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            // half-space test against the screen triangle (2,2)-(12,2)-(2,12)
            const double b1 = (px - 2) / 10.0, b2 = (py - 2) / 10.0;
            const bool inside = b1 >= 0 && b2 >= 0 && b1 + b2 <= 1;
            if (inside) {
                // constant depth -> affine interpolation of vertex colors
                CHECK(img.at(x, y, 0) == doctest::Approx(1 - b1 - b2).epsilon(1e-9));
                CHECK(img.at(x, y, 1) == doctest::Approx(b1).epsilon(1e-9));
                CHECK(img.at(x, y, 2) == doctest::Approx(b2).epsilon(1e-9));
            } else {
                for (int c = 0; c < 3; ++c) CHECK(img.at(x, y, c) == bg[c]);
            }
        }
}

TEST_CASE("mesh oracle: camera looking away sees only background") {
    SceneSpec spec = small_spec();
    SceneData s = generate_scene(spec);
    Camera away = s.cameras[0];
    // flip the view direction: rotate 180 degrees about the camera's up axis
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(0, 0) = -1;
    flip(2, 2) = -1;
    away.R = flip * away.R;
    away.t = flip * away.t; // keep the camera center fixed while turning around
    Mesh mesh = evaluate(s.model, s.params_true[0]);
    Image img = render_mesh(mesh.vertices, mesh.faces, s.model.vertex_colors, away,
                            Eigen::Vector3d(0.3, 0.2, 0.1));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            CHECK(img.at(x, y, 0) == 0.3);
            CHECK(img.at(x, y, 1) == 0.2);
            CHECK(img.at(x, y, 2) == 0.1);
        }
}

TEST_CASE("mesh oracle: nearer of two overlapping triangles wins") {
    Camera cam = front_camera();
    Eigen::MatrixXd verts(6, 3);
    auto at = [&](double u, double v, double z) {
        return Eigen::RowVector3d((u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z);
    };
    // both triangles cover the image center; the second is closer
    verts.row(0) = at(1, 1, 4);
    verts.row(1) = at(15, 1, 4);
    verts.row(2) = at(8, 15, 4);
    verts.row(3) = at(1, 15, 2);
    verts.row(4) = at(15, 15, 2);
    verts.row(5) = at(8, 1, 2);
    Eigen::MatrixXi faces(2, 3);
    faces << 0, 1, 2, 3, 4, 5;
    Eigen::MatrixXd colors(6, 3);
    for (int i = 0; i < 3; ++i) colors.row(i) = Eigen::RowVector3d(1, 0, 0);
    for (int i = 3; i < 6; ++i) colors.row(i) = Eigen::RowVector3d(0, 1, 0);
    Image img = render_mesh(verts, faces, colors, cam);
    CHECK(img.at(8, 8, 1) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(img.at(8, 8, 0) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("corruption RMS matches sigma * sqrt(n_expr) and is seed-reproducible") {
    SceneSpec spec = small_spec();
    spec.n_expr = 8;
    spec.timestamps = 60; // 480 samples
    const double sigma = 0.3;
    SceneData s = generate_scene(spec);
    auto c1 = corrupt_expressions(s.params_true, sigma, 99);
    auto c2 = corrupt_expressions(s.params_true, sigma, 99);
    double sq = 0;
    for (int t = 0; t < spec.timestamps; ++t) {
        CHECK(c1[t].expression == c2[t].expression);
        sq += (c1[t].expression - s.params_true[t].expression).squaredNorm();
    }
    const double rms = std::sqrt(sq / spec.timestamps);
    const double expect = sigma * std::sqrt(static_cast<double>(spec.n_expr));
    CHECK(std::abs(rms - expect) / expect < 0.1);
    CHECK_THROWS_AS(corrupt_expressions(s.params_true, -1.0, 0), ValidationError);
}

TEST_CASE("dataset round-trip preserves cameras and images") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "gavatar_ds_test").string();
    fs::remove_all(dir);
    SceneSpec spec = small_spec();
    spec.timestamps = 4;
    SceneData s = generate_scene(spec);
    write_dataset(dir, s);

    Dataset d1 = read_dataset(dir);
    Dataset d2 = read_dataset(dir);
    CHECK(d1.timestamps() == 4);
    CHECK(d1.views() == 3);
    CHECK(d1.train_t == s.train_t);
    CHECK(d1.heldout_view == s.heldout_view);
    for (int v = 0; v < 3; ++v) {
        CHECK(d1.cameras[v].R == s.cameras[v].R);
        CHECK(d1.cameras[v].fx == s.cameras[v].fx);
        CHECK(d1.cameras[v].t == s.cameras[v].t);
    }
    for (int t = 0; t < 4; ++t) {
        CHECK(d1.params_init[t].expression == s.params_init[t].expression);
        for (int v = 0; v < 3; ++v) CHECK(d1.frames[t][v].data == d2.frames[t][v].data);
    }
    // images equal the quantized oracle render
    auto views = render_ground_truth(s.model, s.params_true[1], s.cameras);
    for (std::size_t i = 0; i < views[0].data.size(); ++i) {
        double q = std::floor(std::clamp(views[0].data[i], 0.0, 1.0) * 255.0 + 0.5) / 255.0;
        CHECK(d1.frames[1][0].data[i] == doctest::Approx(q).epsilon(1e-12));
    }
    fs::remove_all(dir);
    CHECK_THROWS_AS(read_dataset(dir), ValidationError);
}
