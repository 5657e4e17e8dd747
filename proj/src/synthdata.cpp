#include "gavatar/synthdata.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "gavatar/rng.hpp"

namespace gavatar {

namespace fs = std::filesystem;
using nlohmann::json;

void SceneSpec::validate() const {
    if (views < 1 || timestamps < 1) throw ValidationError("scene needs at least one view and timestamp");
    if (sigma < 0) throw ValidationError("corruption sigma must be non-negative");
    if (rings < 3 || segments < 3) throw ValidationError("head resolution too low");
    if (n_shape < 1 || n_expr < 1 || joints < 1) throw ValidationError("basis/joint counts must be positive");
    if (image_size < 8) throw ValidationError("image size too small");
    if (ring_radius <= 0) throw ValidationError("camera ring radius must be positive");
}

SceneSpec SceneSpec::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scene spec: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid scene spec JSON: ") + e.what());
    }
    SceneSpec s;
    s.seed = j.value("seed", s.seed);
    s.rings = j.value("rings", s.rings);
    s.segments = j.value("segments", s.segments);
    s.n_shape = j.value("n_shape", s.n_shape);
    s.n_expr = j.value("n_expr", s.n_expr);
    s.joints = j.value("joints", s.joints);
    s.views = j.value("views", s.views);
    s.ring_radius = j.value("ring_radius", s.ring_radius);
    s.ring_height = j.value("ring_height", s.ring_height);
    s.timestamps = j.value("timestamps", s.timestamps);
    s.image_size = j.value("image_size", s.image_size);
    s.smoothness = j.value("smoothness", s.smoothness);
    s.sigma = j.value("sigma", s.sigma);
    s.validate();
    return s;
}

namespace {

// Low-frequency sinusoidal displacement field with zero column mean, scaled to
// a fraction of the head size.
Eigen::MatrixXd basis_field(const Eigen::MatrixXd& verts, double head_size, Rng& rng) {
    const int V = static_cast<int>(verts.rows());
    Eigen::MatrixXd d(V, 3);
    for (int a = 0; a < 3; ++a) {
        Eigen::Vector3d w(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
        const double phase = rng.uniform(0, 2 * M_PI);
        const double amp = rng.uniform(0.5, 1.0);
        for (int v = 0; v < V; ++v) d(v, a) = amp * std::sin(w.dot(verts.row(v)) + phase);
    }
    d.rowwise() -= d.colwise().mean();
    double max_norm = 0;
    for (int v = 0; v < V; ++v) max_norm = std::max(max_norm, d.row(v).norm());
    const double target = rng.uniform(0.05, 0.1) * head_size;
    if (max_norm > 0) d *= target / max_norm;
    return d;
}

Camera look_at(const Eigen::Vector3d& pos, const Eigen::Vector3d& target, double f, int size) {
    Eigen::Vector3d fwd = (target - pos).normalized();
    Eigen::Vector3d world_up(0, 1, 0);
    Eigen::Vector3d right = fwd.cross(world_up).normalized();
    Eigen::Vector3d down = fwd.cross(right); // y grows downward in image space
    Camera cam;
    cam.R.row(0) = right;
    cam.R.row(1) = down;
    cam.R.row(2) = fwd;
    cam.t = -cam.R * pos;
    cam.fx = cam.fy = f;
    cam.cx = cam.cy = size / 2.0;
    cam.width = cam.height = size;
    cam.validate();
    return cam;
}

json params_to_json(const HeadParams& p) {
    auto vec = [](const auto& v) {
        std::vector<double> out(v.data(), v.data() + v.size());
        return out;
    };
    json j;
    j["rigid_rotation"] = vec(p.rigid_rotation);
    j["rigid_translation"] = vec(p.rigid_translation);
    json joints = json::array();
    for (const auto& r : p.joint_rotations) joints.push_back(vec(r));
    j["joint_rotations"] = joints;
    j["shape"] = vec(p.shape);
    j["expression"] = vec(p.expression);
    return j;
}

HeadParams params_from_json(const json& j) {
    HeadParams p;
    auto v3 = [&](const char* key) {
        auto a = j.at(key).get<std::vector<double>>();
        if (a.size() != 3) throw ValidationError("expected a 3-vector in params JSON");
        return Eigen::Vector3d(a[0], a[1], a[2]);
    };
    p.rigid_rotation = v3("rigid_rotation");
    p.rigid_translation = v3("rigid_translation");
    for (const auto& r : j.at("joint_rotations")) {
        auto a = r.get<std::vector<double>>();
        if (a.size() != 3) throw ValidationError("expected a 3-vector joint rotation");
        p.joint_rotations.emplace_back(a[0], a[1], a[2]);
    }
    auto sh = j.at("shape").get<std::vector<double>>();
    auto ex = j.at("expression").get<std::vector<double>>();
    p.shape = Eigen::Map<Eigen::VectorXd>(sh.data(), sh.size());
    p.expression = Eigen::Map<Eigen::VectorXd>(ex.data(), ex.size());
    return p;
}

} // namespace

SceneData generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SceneData scene;

    // deformed ellipsoid head
    const int V = spec.rings * spec.segments + 2;
    Eigen::MatrixXd verts(V, 3);
    const Eigen::Vector3d radii(0.8, 1.0, 0.85);
    const Eigen::Vector3d bump(rng.uniform(0, 2 * M_PI), rng.uniform(0, 2 * M_PI),
                               rng.uniform(0, 2 * M_PI));
    auto surface = [&](double theta, double phi) {
        const double wobble = 1.0 + 0.12 * std::sin(2 * theta + bump[0]) * std::cos(phi + bump[1]) +
                              0.08 * std::cos(3 * phi + bump[2]);
        return Eigen::Vector3d(radii[0] * wobble * std::sin(theta) * std::cos(phi),
                               radii[1] * wobble * std::cos(theta),
                               radii[2] * wobble * std::sin(theta) * std::sin(phi));
    };
    verts.row(0) = surface(0, 0);
    for (int i = 0; i < spec.rings; ++i) {
        const double theta = M_PI * (i + 1) / (spec.rings + 1);
        for (int j = 0; j < spec.segments; ++j)
            verts.row(1 + i * spec.segments + j) = surface(theta, 2 * M_PI * j / spec.segments);
    }
    verts.row(V - 1) = surface(M_PI, 0);

    std::vector<Eigen::Vector3i> tris;
    for (int j = 0; j < spec.segments; ++j)
        tris.emplace_back(0, 1 + j, 1 + (j + 1) % spec.segments);
    for (int i = 0; i + 1 < spec.rings; ++i)
        for (int j = 0; j < spec.segments; ++j) {
            const int a = 1 + i * spec.segments + j;
            const int b = 1 + i * spec.segments + (j + 1) % spec.segments;
            const int c = a + spec.segments;
            const int d = b + spec.segments;
            tris.emplace_back(a, c, b);
            tris.emplace_back(b, c, d);
        }
    for (int j = 0; j < spec.segments; ++j) {
        const int base = 1 + (spec.rings - 1) * spec.segments;
        tris.emplace_back(V - 1, base + (j + 1) % spec.segments, base + j);
    }

    HeadModel& m = scene.model;
    m.template_vertices = verts;
    m.faces.resize(static_cast<int>(tris.size()), 3);
    for (std::size_t f = 0; f < tris.size(); ++f) m.faces.row(static_cast<int>(f)) = tris[f];

    const double head_size = (verts.colwise().maxCoeff() - verts.colwise().minCoeff()).norm();
    for (int k = 0; k < spec.n_shape; ++k) m.shape_basis.push_back(basis_field(verts, head_size, rng));
    for (int k = 0; k < spec.n_expr; ++k)
        m.expression_basis.push_back(basis_field(verts, head_size, rng));
    m.vertex_offsets = Eigen::MatrixXd::Zero(V, 3);

    // vertical joint chain with smooth weight falloff
    m.joint_count = spec.joints;
    const double ymin = verts.col(1).minCoeff(), ymax = verts.col(1).maxCoeff();
    m.joint_rest_positions.resize(spec.joints, 3);
    m.joint_parents.resize(spec.joints);
    for (int j = 0; j < spec.joints; ++j) {
        m.joint_rest_positions.row(j) =
            Eigen::RowVector3d(0, ymin + (ymax - ymin) * (j + 1) / (spec.joints + 1), 0);
        m.joint_parents[j] = j - 1;
    }
    const double h = (ymax - ymin) / spec.joints;
    m.skinning_weights.resize(V, spec.joints);
    for (int v = 0; v < V; ++v) {
        double sum = 0;
        for (int j = 0; j < spec.joints; ++j) {
            const double d = verts(v, 1) - m.joint_rest_positions(j, 1);
            m.skinning_weights(v, j) = std::exp(-d * d / (2 * h * h));
            sum += m.skinning_weights(v, j);
        }
        m.skinning_weights.row(v) /= sum;
    }

    m.vertex_colors.resize(V, 3);
    for (int c = 0; c < 3; ++c) {
        Eigen::Vector3d w(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
        const double phase = rng.uniform(0, 2 * M_PI);
        for (int v = 0; v < V; ++v)
            m.vertex_colors(v, c) = 0.5 + 0.5 * std::sin(w.dot(verts.row(v)) + phase);
    }
    m.validate();

    // cameras on a frontal arc (capture-rig style) at two alternating heights,
    // aimed at the centroid; neighboring views overlap so a held-out view is
    // interpolated by the others
    const Eigen::Vector3d centroid = verts.colwise().mean();
    const double f = 1.1 * spec.image_size * spec.ring_radius / head_size;
    const double arc = 2 * M_PI / 3; // 120 degrees
    for (int k = 0; k < spec.views; ++k) {
        const double ang = spec.views > 1 ? -arc / 2 + arc * k / (spec.views - 1) : 0.0;
        const double hgt = (k % 2 == 0 ? 1 : -1) * spec.ring_height;
        Eigen::Vector3d pos = centroid + Eigen::Vector3d(spec.ring_radius * std::cos(ang), hgt,
                                                         spec.ring_radius * std::sin(ang));
        scene.cameras.push_back(look_at(pos, centroid, f, spec.image_size));
    }

    // smooth sinusoidal trajectories
    std::vector<double> amp(spec.n_expr), freq(spec.n_expr), phase(spec.n_expr);
    for (int k = 0; k < spec.n_expr; ++k) {
        amp[k] = rng.uniform(0.4, 1.0);
        freq[k] = rng.uniform(0.5, std::max(0.5, spec.smoothness));
        phase[k] = rng.uniform(0, 2 * M_PI);
    }
    std::vector<Eigen::Vector3d> jamp(spec.joints), jphase(spec.joints);
    for (int j = 0; j < spec.joints; ++j) {
        jamp[j] = Eigen::Vector3d(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                  rng.uniform(-0.05, 0.05));
        jphase[j] = Eigen::Vector3d(rng.uniform(0, 2 * M_PI), rng.uniform(0, 2 * M_PI),
                                    rng.uniform(0, 2 * M_PI));
    }
    for (int t = 0; t < spec.timestamps; ++t) {
        HeadParams p = HeadParams::zero(m);
        const double tau = static_cast<double>(t) / spec.timestamps;
        for (int k = 0; k < spec.n_expr; ++k)
            p.expression[k] = amp[k] * std::sin(2 * M_PI * freq[k] * tau + phase[k]);
        for (int j = 0; j < spec.joints; ++j)
            for (int a = 0; a < 3; ++a)
                p.joint_rotations[j][a] = jamp[j][a] * std::sin(2 * M_PI * tau + jphase[j][a]);
        scene.params_true.push_back(p);
    }
    scene.params_init = corrupt_expressions(scene.params_true, spec.sigma, spec.seed + 1);

    for (int t = 0; t < spec.timestamps; ++t)
        (t % 5 == 4 ? scene.heldout_t : scene.train_t).push_back(t);
    if (scene.heldout_t.empty()) scene.heldout_t.push_back(spec.timestamps - 1);
    scene.heldout_view = spec.views / 2; // interior view: surrounded by training views
    return scene;
}

Image render_mesh(const Eigen::MatrixXd& vertices, const Eigen::MatrixXi& faces,
                  const Eigen::MatrixXd& vertex_colors, const Camera& cam,
                  const Eigen::Vector3d& background) {
    cam.validate();
    Image img(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = background[c];
    std::vector<double> zbuf(static_cast<std::size_t>(cam.width) * cam.height,
                             std::numeric_limits<double>::infinity());

    for (int f = 0; f < faces.rows(); ++f) {
        Eigen::Vector3d pc[3];
        Eigen::Vector2d sc[3];
        bool clipped = false;
        for (int k = 0; k < 3; ++k) {
            pc[k] = cam.to_camera(vertices.row(faces(f, k)));
            if (pc[k].z() <= cam.near) {
                clipped = true;
                break;
            }
            sc[k] = Eigen::Vector2d(cam.fx * pc[k].x() / pc[k].z() + cam.cx,
                                    cam.fy * pc[k].y() / pc[k].z() + cam.cy);
        }
        if (clipped) continue;

        const double area = (sc[1] - sc[0]).x() * (sc[2] - sc[0]).y() -
                            (sc[1] - sc[0]).y() * (sc[2] - sc[0]).x();
        if (area == 0) continue;
        int x0 = std::max(0, static_cast<int>(std::floor(std::min({sc[0].x(), sc[1].x(), sc[2].x()}))));
        int x1 = std::min(cam.width - 1,
                          static_cast<int>(std::ceil(std::max({sc[0].x(), sc[1].x(), sc[2].x()}))));
        int y0 = std::max(0, static_cast<int>(std::floor(std::min({sc[0].y(), sc[1].y(), sc[2].y()}))));
        int y1 = std::min(cam.height - 1,
                          static_cast<int>(std::ceil(std::max({sc[0].y(), sc[1].y(), sc[2].y()}))));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const Eigen::Vector2d p(x + 0.5, y + 0.5);
                // signed sub-areas; accept either winding via division by area
                double w0 = ((sc[1] - p).x() * (sc[2] - p).y() - (sc[1] - p).y() * (sc[2] - p).x()) / area;
                double w1 = ((sc[2] - p).x() * (sc[0] - p).y() - (sc[2] - p).y() * (sc[0] - p).x()) / area;
                double w2 = 1.0 - w0 - w1;
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                // perspective-correct interpolation
                const double iz = w0 / pc[0].z() + w1 / pc[1].z() + w2 / pc[2].z();
                const double z = 1.0 / iz;
                const std::size_t pi = static_cast<std::size_t>(y) * cam.width + x;
                if (z >= zbuf[pi]) continue;
                zbuf[pi] = z;
                for (int c = 0; c < 3; ++c) {
                    const double num = w0 * vertex_colors(faces(f, 0), c) / pc[0].z() +
                                       w1 * vertex_colors(faces(f, 1), c) / pc[1].z() +
                                       w2 * vertex_colors(faces(f, 2), c) / pc[2].z();
                    img.at(x, y, c) = num * z;
                }
            }
    }
    return img;
}

std::vector<Image> render_ground_truth(const HeadModel& model, const HeadParams& params,
                                       const std::vector<Camera>& cameras) {
    Mesh mesh = evaluate(model, params);
    std::vector<Image> out;
    out.reserve(cameras.size());
    for (const Camera& cam : cameras)
        out.push_back(render_mesh(mesh.vertices, mesh.faces, model.vertex_colors, cam));
    return out;
}

std::vector<HeadParams> corrupt_expressions(const std::vector<HeadParams>& trajectory, double sigma,
                                            uint64_t seed) {
    if (sigma < 0) throw ValidationError("corruption sigma must be non-negative");
    Rng rng(seed);
    std::vector<HeadParams> out = trajectory;
    for (auto& p : out)
        for (Eigen::Index k = 0; k < p.expression.size(); ++k) p.expression[k] += sigma * rng.normal();
    return out;
}

namespace {

json camera_to_json(const Camera& c) {
    json j;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    std::vector<double> R;
    for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 3; ++col) R.push_back(c.R(r, col));
    j["R"] = R;
    j["t"] = std::vector<double>{c.t.x(), c.t.y(), c.t.z()};
    j["width"] = c.width;
    j["height"] = c.height;
    return j;
}

Camera camera_from_json(const json& j) {
    Camera c;
    c.fx = j.at("fx");
    c.fy = j.at("fy");
    c.cx = j.at("cx");
    c.cy = j.at("cy");
    auto R = j.at("R").get<std::vector<double>>();
    if (R.size() != 9) throw ValidationError("camera R must have 9 entries");
    for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 3; ++col) c.R(r, col) = R[r * 3 + col];
    auto t = j.at("t").get<std::vector<double>>();
    if (t.size() != 3) throw ValidationError("camera t must have 3 entries");
    c.t = Eigen::Vector3d(t[0], t[1], t[2]);
    c.width = j.at("width");
    c.height = j.at("height");
    c.validate();
    return c;
}

std::string frame_path(const std::string& dir, int t, int v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "frames/t%03d/v%02d.png", t, v);
    return dir + "/" + buf;
}

} // namespace

void write_dataset(const std::string& dir, const SceneData& scene) {
    fs::create_directories(dir);
    save_head_model(dir + "/model.ghm", scene.model);

    json cams = json::array();
    for (const Camera& c : scene.cameras) cams.push_back(camera_to_json(c));
    std::ofstream(dir + "/cams.json") << cams.dump(2) << "\n";

    auto write_params = [&](const std::string& name, const std::vector<HeadParams>& ps) {
        json arr = json::array();
        for (const auto& p : ps) arr.push_back(params_to_json(p));
        std::ofstream(dir + "/" + name) << arr.dump(2) << "\n";
    };
    write_params("params_true.json", scene.params_true);
    write_params("params_init.json", scene.params_init);

    json split;
    split["train_t"] = scene.train_t;
    split["heldout_t"] = scene.heldout_t;
    split["heldout_view"] = scene.heldout_view;
    std::ofstream(dir + "/split.json") << split.dump(2) << "\n";

    for (std::size_t t = 0; t < scene.params_true.size(); ++t) {
        auto views = render_ground_truth(scene.model, scene.params_true[t], scene.cameras);
        fs::create_directories(fs::path(frame_path(dir, static_cast<int>(t), 0)).parent_path());
        for (std::size_t v = 0; v < views.size(); ++v)
            write_png(frame_path(dir, static_cast<int>(t), static_cast<int>(v)), views[v]);
    }
}

Dataset read_dataset(const std::string& dir) {
    Dataset d;
    if (!fs::exists(dir + "/cams.json")) throw ValidationError("not a dataset directory: " + dir);
    d.model = load_head_model(dir + "/model.ghm");

    json cams, split, pt, pi;
    try {
        std::ifstream(dir + "/cams.json") >> cams;
        std::ifstream(dir + "/split.json") >> split;
        std::ifstream(dir + "/params_true.json") >> pt;
        std::ifstream(dir + "/params_init.json") >> pi;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid dataset JSON: ") + e.what());
    }
    for (const auto& c : cams) d.cameras.push_back(camera_from_json(c));
    for (const auto& p : pt) d.params_true.push_back(params_from_json(p));
    for (const auto& p : pi) d.params_init.push_back(params_from_json(p));
    d.train_t = split.at("train_t").get<std::vector<int>>();
    d.heldout_t = split.at("heldout_t").get<std::vector<int>>();
    d.heldout_view = split.at("heldout_view");
    if (d.params_true.size() != d.params_init.size())
        throw ValidationError("params_true and params_init lengths differ");
    for (const auto& p : d.params_true) p.check_dims(d.model);

    const int T = static_cast<int>(d.params_true.size());
    const int N = static_cast<int>(d.cameras.size());
    d.frames.resize(T);
    for (int t = 0; t < T; ++t)
        for (int v = 0; v < N; ++v) d.frames[t].push_back(read_png(frame_path(dir, t, v)));
    return d;
}

namespace {

json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ValidationError("invalid JSON in " + path + ": " + e.what());
    }
}

} // namespace

std::vector<HeadParams> read_params_json(const std::string& path) {
    json arr = parse_json_file(path);
    if (!arr.is_array()) throw ValidationError(path + " must hold a JSON array of parameter sets");
    std::vector<HeadParams> out;
    for (const auto& p : arr) out.push_back(params_from_json(p));
    return out;
}

std::vector<Camera> read_cameras_json(const std::string& path) {
    json arr = parse_json_file(path);
    if (!arr.is_array()) throw ValidationError(path + " must hold a JSON array of cameras");
    std::vector<Camera> out;
    for (const auto& c : arr) out.push_back(camera_from_json(c));
    return out;
}

} // namespace gavatar
