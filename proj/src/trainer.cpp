#include "gavatar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gavatar/binio.hpp"

namespace gavatar {

using nlohmann::json;

void TrainConfig::validate() const {
    if (iterations < 1) throw ValidationError("iteration count must be positive");
    for (double lr : {lr_position, lr_scale, lr_rotation, lr_opacity, lr_sh, lr_rigid, lr_joints,
                      lr_expression, lr_networks})
        if (lr <= 0) throw ValidationError("learning rates must be positive");
    if (gaussians_per_triangle < 1) throw ValidationError("need at least one gaussian per triangle");
    if (sh_degree < 0 || sh_degree > 3) throw ValidationError("sh degree must be in [0,3]");
    if (freeze && single_view) throw ValidationError("freeze and single-view are mutually exclusive");
    if (momentum_start < 0 || momentum_start >= 1 || momentum_end < 0 || momentum_end >= 1)
        throw ValidationError("momentum endpoints must be in [0,1)");
}

void TrainConfig::derive_schedules() {
    // reference ratios: start 6000 / interval 2000 / reset 100000 of 1e6 iters
    if (reanchor_start <= 0) reanchor_start = std::max(1, iterations * 6 / 1000);
    if (reanchor_interval <= 0) reanchor_interval = std::max(1, iterations * 2 / 1000);
    if (opacity_reset_interval <= 0) opacity_reset_interval = std::max(1, iterations / 10);
}

void TrainConfig::apply_arm(const std::string& arm) {
    freeze = single_view = false;
    bank_on = texture_on = false;
    if (arm == "freeze")
        freeze = true;
    else if (arm == "single-view")
        single_view = true;
    else if (arm == "multi-view-o")
        ; // plain fused multi-view regression
    else if (arm == "multi-view-m")
        bank_on = true;
    else if (arm == "multi-view-t")
        texture_on = true;
    else if (arm == "full") {
        bank_on = true;
        texture_on = true;
    } else
        throw ValidationError("unknown ablation arm: " + arm);
}

namespace {

json config_to_json(const TrainConfig& c) {
    json j;
    j["iterations"] = c.iterations;
    j["lr_position"] = c.lr_position;
    j["lr_scale"] = c.lr_scale;
    j["lr_rotation"] = c.lr_rotation;
    j["lr_opacity"] = c.lr_opacity;
    j["lr_sh"] = c.lr_sh;
    j["lr_rigid"] = c.lr_rigid;
    j["lr_joints"] = c.lr_joints;
    j["lr_expression"] = c.lr_expression;
    j["lr_networks"] = c.lr_networks;
    j["reanchor_start"] = c.reanchor_start;
    j["reanchor_interval"] = c.reanchor_interval;
    j["opacity_reset_interval"] = c.opacity_reset_interval;
    j["opacity_reset_value"] = c.opacity_reset_value;
    j["momentum_start"] = c.momentum_start;
    j["momentum_end"] = c.momentum_end;
    j["seed"] = c.seed;
    j["sh_degree"] = c.sh_degree;
    j["gaussians_per_triangle"] = c.gaussians_per_triangle;
    j["background"] = {c.background.x(), c.background.y(), c.background.z()};
    j["lambda"] = c.lambda;
    j["lambda_position"] = c.lambda_position;
    j["lambda_scaling"] = c.lambda_scaling;
    j["d_feat"] = c.d_feat;
    j["d_attn"] = c.d_attn;
    j["triplane_n_f"] = c.triplane_n_f;
    j["triplane_n_d1"] = c.triplane_n_d1;
    j["freeze"] = c.freeze;
    j["single_view"] = c.single_view;
    j["bank_on"] = c.bank_on;
    j["texture_on"] = c.texture_on;
    return j;
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.lr_position = j.value("lr_position", c.lr_position);
    c.lr_scale = j.value("lr_scale", c.lr_scale);
    c.lr_rotation = j.value("lr_rotation", c.lr_rotation);
    c.lr_opacity = j.value("lr_opacity", c.lr_opacity);
    c.lr_sh = j.value("lr_sh", c.lr_sh);
    c.lr_rigid = j.value("lr_rigid", c.lr_rigid);
    c.lr_joints = j.value("lr_joints", c.lr_joints);
    c.lr_expression = j.value("lr_expression", c.lr_expression);
    c.lr_networks = j.value("lr_networks", c.lr_networks);
    c.reanchor_start = j.value("reanchor_start", c.reanchor_start);
    c.reanchor_interval = j.value("reanchor_interval", c.reanchor_interval);
    c.opacity_reset_interval = j.value("opacity_reset_interval", c.opacity_reset_interval);
    c.opacity_reset_value = j.value("opacity_reset_value", c.opacity_reset_value);
    c.momentum_start = j.value("momentum_start", c.momentum_start);
    c.momentum_end = j.value("momentum_end", c.momentum_end);
    c.seed = j.value("seed", c.seed);
    c.sh_degree = j.value("sh_degree", c.sh_degree);
    c.gaussians_per_triangle = j.value("gaussians_per_triangle", c.gaussians_per_triangle);
    if (j.contains("background")) {
        auto b = j.at("background").get<std::vector<double>>();
        if (b.size() != 3) throw ValidationError("background must have 3 components");
        c.background = Eigen::Vector3d(b[0], b[1], b[2]);
    }
    c.lambda = j.value("lambda", c.lambda);
    c.lambda_position = j.value("lambda_position", c.lambda_position);
    c.lambda_scaling = j.value("lambda_scaling", c.lambda_scaling);
    c.d_feat = j.value("d_feat", c.d_feat);
    c.d_attn = j.value("d_attn", c.d_attn);
    c.triplane_n_f = j.value("triplane_n_f", c.triplane_n_f);
    c.triplane_n_d1 = j.value("triplane_n_d1", c.triplane_n_d1);
    c.freeze = j.value("freeze", c.freeze);
    c.single_view = j.value("single_view", c.single_view);
    c.bank_on = j.value("bank_on", c.bank_on);
    c.texture_on = j.value("texture_on", c.texture_on);
    c.validate();
    return c;
}

TriangleFrameGrads zero_frame_grads(int faces) {
    TriangleFrameGrads g;
    g.centroids = Eigen::MatrixXd::Zero(faces, 3);
    g.rotations.assign(faces, Eigen::Matrix3d::Zero());
    g.scales = Eigen::VectorXd::Zero(faces);
    return g;
}

void quantize_vec(Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = quantize_f32(v[i]);
}

void quantize_mat(Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = quantize_f32(m.data()[i]);
}

void quantize_model(HeadModel& m) {
    quantize_mat(m.template_vertices);
    for (auto& b : m.shape_basis) quantize_mat(b);
    for (auto& b : m.expression_basis) quantize_mat(b);
    quantize_mat(m.vertex_offsets);
    quantize_mat(m.skinning_weights);
    quantize_mat(m.joint_rest_positions);
    quantize_mat(m.vertex_colors);
}

void quantize_params(HeadParams& p) {
    for (int a = 0; a < 3; ++a) {
        p.rigid_rotation[a] = quantize_f32(p.rigid_rotation[a]);
        p.rigid_translation[a] = quantize_f32(p.rigid_translation[a]);
    }
    for (auto& j : p.joint_rotations)
        for (int a = 0; a < 3; ++a) j[a] = quantize_f32(j[a]);
    quantize_vec(p.shape);
    quantize_vec(p.expression);
}

} // namespace

std::string TrainConfig::to_json() const { return config_to_json(*this).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& text) {
    try {
        return config_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid train config JSON: ") + e.what());
    }
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open train config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

Trainer::Trainer(const TrainConfig& config, const Dataset& data) {
    state_.config = config;
    state_.config.validate();
    state_.config.derive_schedules();
    init_fresh(data);
    attach_dataset(data);
}

Trainer::Trainer(TrainerState state) : state_(std::move(state)) {
    attach_modules();
    init_grad_buffers();
}

Trainer Trainer::load(const std::string& ckpt_path) { return Trainer(load_checkpoint(ckpt_path)); }

void Trainer::attach_dataset(const Dataset& data) {
    if (data.model.vertex_count() != state_.model.vertex_count() ||
        data.model.n_expr() != state_.model.n_expr())
        throw ValidationError("dataset does not match the trained model");
    data_ = &data;
}

void Trainer::init_fresh(const Dataset& data) {
    if (data.cameras.empty() || data.frames.empty())
        throw ValidationError("dataset has no cameras or frames");
    state_.model = data.model;
    quantize_model(state_.model); // checkpoints store f32; keep the live state identical
    state_.cameras = data.cameras;
    for (Camera& c : state_.cameras) {
        c.fx = quantize_f32(c.fx);
        c.fy = quantize_f32(c.fy);
        c.cx = quantize_f32(c.cx);
        c.cy = quantize_f32(c.cy);
        for (int r = 0; r < 3; ++r) {
            for (int col = 0; col < 3; ++col) c.R(r, col) = quantize_f32(c.R(r, col));
            c.t[r] = quantize_f32(c.t[r]);
        }
    }
    state_.train_t = data.train_t;
    state_.heldout_t = data.heldout_t;
    state_.heldout_view = data.heldout_view;
    if (state_.train_t.empty()) throw ValidationError("dataset has no training timestamps");

    state_.flame = data.params_init;
    state_.shape = data.params_init[0].shape;
    quantize_vec(state_.shape);
    for (auto& p : state_.flame) quantize_params(p);

    attach_modules_init_ = true;
    attach_modules();

    state_.cloud = init_bindings(neutral_mesh_, state_.config.gaussians_per_triangle, state_.config.seed);
    state_.cloud.sh_degree = state_.config.sh_degree;
    const int nc = state_.cloud.sh_count();
    state_.cloud.sh_coeffs.assign(state_.cloud.size() * nc, Eigen::Vector3d::Zero());
    for (std::size_t i = 0; i < state_.cloud.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            state_.cloud.barycentric[i][a] = quantize_f32(state_.cloud.barycentric[i][a]);
            state_.cloud.local_offset[i][a] = quantize_f32(state_.cloud.local_offset[i][a]);
            state_.cloud.log_scale[i][a] = quantize_f32(state_.cloud.log_scale[i][a]);
        }
        for (int a = 0; a < 4; ++a) state_.cloud.rotation[i][a] = quantize_f32(state_.cloud.rotation[i][a]);
        state_.cloud.opacity_logit[i] = quantize_f32(state_.cloud.opacity_logit[i]);
    }

    state_.bank.view_count = static_cast<int>(state_.cameras.size());
    state_.bank.n_expr = state_.model.n_expr();
    state_.features = Eigen::MatrixXd::Zero(static_cast<int>(state_.flame.size()), state_.config.d_feat);

    Rng rng(state_.config.seed);
    net_.init(state_.params, "corr", state_.cameras[0].height, state_.cameras[0].width,
              state_.config.d_feat, state_.model.n_expr(), rng);
    attn_.init(state_.params, "attn", state_.config.d_feat, 3 * state_.config.triplane_n_d1,
               state_.config.d_attn, rng);
    decoder_.init(state_.params, "dec", state_.config.d_attn, rng);
    triplane_.init(state_.params, "tp", state_.config.triplane_n_f, state_.config.triplane_n_d1,
                   triplane_box_min_, triplane_box_max_);
    for (auto& [name, t] : state_.params.params)
        for (double& x : t.v) x = quantize_f32(x);
    attach_modules_init_ = false;
    init_grad_buffers();
}

void Trainer::init_grad_buffers() {
    g_cloud_ = CloudGrads::zero(state_.cloud);
    g_shape_ = Eigen::VectorXd::Zero(state_.shape.size());
    g_flame_.assign(state_.flame.size(), HeadParamGrads{});
    for (auto& g : g_flame_) {
        g.joint_rotations.assign(state_.model.joint_count, Eigen::Vector3d::Zero());
        g.shape = Eigen::VectorXd::Zero(state_.model.n_shape());
        g.expression = Eigen::VectorXd::Zero(state_.model.n_expr());
    }
}

void Trainer::attach_modules() {
    // neutral geometry (all-zero parameters) anchors the canonical space
    HeadParams zero = HeadParams::zero(state_.model);
    neutral_mesh_ = evaluate(state_.model, zero);
    neutral_frames_ = triangle_frames(neutral_mesh_);
    Eigen::Vector3d lo = neutral_mesh_.vertices.colwise().minCoeff();
    Eigen::Vector3d hi = neutral_mesh_.vertices.colwise().maxCoeff();
    const Eigen::Vector3d margin = 0.05 * (hi - lo);
    triplane_box_min_ = lo - margin;
    triplane_box_max_ = hi + margin;
    for (int a = 0; a < 3; ++a) {
        triplane_box_min_[a] = quantize_f32(triplane_box_min_[a]);
        triplane_box_max_[a] = quantize_f32(triplane_box_max_[a]);
    }
    if (attach_modules_init_) return; // init_fresh registers the parameters itself
    net_.attach(state_.params, "corr", state_.cameras[0].height, state_.cameras[0].width,
                state_.config.d_feat, state_.model.n_expr());
    attn_.attach(state_.params, "attn", state_.config.d_feat, 3 * state_.config.triplane_n_d1,
                 state_.config.d_attn);
    decoder_.attach(state_.params, "dec", state_.config.d_attn);
    triplane_.attach(state_.params, "tp", state_.config.triplane_n_f, state_.config.triplane_n_d1,
                     triplane_box_min_, triplane_box_max_);
}

std::vector<int> Trainer::training_views() const {
    std::vector<int> v;
    for (int i = 0; i < static_cast<int>(state_.cameras.size()); ++i)
        if (i != state_.heldout_view || state_.cameras.size() == 1) v.push_back(i);
    return v;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> Trainer::regress_views(int t, const std::vector<int>& views,
                                                                   CorrectionNet::Context* ctx) const {
    if (!data_) throw ValidationError("regression requires an attached dataset");
    std::vector<Image> frames;
    for (int v : views) frames.push_back(data_->frames[t][v]);
    return net_.regress(frames, ctx);
}

Image Trainer::render_internal(int t, const Camera& cam, const Eigen::VectorXd& psi,
                               const Eigen::VectorXd* fused) const {
    HeadParams p = state_.flame[t];
    p.shape = state_.shape;
    p.expression = psi;
    Mesh mesh = evaluate(state_.model, p);
    TriangleFrames frames = triangle_frames(mesh);
    WorldGaussians world = to_world(state_.cloud, mesh, frames);
    if (state_.config.texture_on && !state_.config.freeze && fused) {
        WorldGaussians canon = to_world(state_.cloud, neutral_mesh_, neutral_frames_);
        GaussianResiduals res = GaussianResiduals::zero(world.size());
        for (std::size_t i = 0; i < world.size(); ++i) {
            Eigen::VectorXd h = triplane_.sample(canon.means[i]);
            Eigen::VectorXd v = attn_.forward(*fused, h);
            ResidualSample r = decoder_.decode(v, frames.scales[state_.cloud.triangle_id[i]]);
            res.d_mean[i] = r.d_mean;
            res.d_log_scale[i] = r.d_log_scale;
            res.d_rot[i] = r.d_rot;
            res.d_alpha[i] = r.d_alpha;
        }
        world = apply_residuals(world, res);
    }
    auto out = render_gaussians(world, cam, state_.config.background, RasterMode::Tiled);
    return out.out.image;
}

Eigen::VectorXd Trainer::inference_psi(int t, int view) const {
    if (t < 0 || t >= static_cast<int>(state_.flame.size()))
        throw ValidationError("unknown timestamp " + std::to_string(t));
    const Eigen::VectorXd& psi_init = state_.flame[t].expression;
    if (state_.config.freeze) return psi_init;
    if (state_.bank.has(t)) {
        if (state_.config.bank_on) return state_.bank.apply(t, psi_init);
        const auto& entry = state_.bank.entries.at(t);
        std::vector<int> tv = training_views();
        if (view >= 0 && std::find(tv.begin(), tv.end(), view) != tv.end())
            return psi_init + entry[view];
        Eigen::VectorXd m = Eigen::VectorXd::Zero(state_.bank.n_expr);
        for (int v : tv) m += entry[v];
        return psi_init + m / static_cast<double>(tv.size());
    }
    // timestamp never trained: forward regression from its images
    if (!data_)
        throw ValidationError("timestamp " + std::to_string(t) +
                              " was not trained and no dataset is attached");
    std::vector<int> tv = training_views();
    if (state_.config.single_view) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(state_.bank.n_expr);
        for (int v : tv) sum += regress_views(t, {v}, nullptr).first;
        return psi_init + sum / static_cast<double>(tv.size());
    }
    return psi_init + regress_views(t, tv, nullptr).first;
}

Mesh Trainer::inference_mesh(int t, int view) const {
    HeadParams p = state_.flame[t];
    p.shape = state_.shape;
    p.expression = inference_psi(t, view);
    return evaluate(state_.model, p);
}

Image Trainer::render_view(int t, int view) const {
    if (view < 0 || view >= static_cast<int>(state_.cameras.size()))
        throw ValidationError("unknown view " + std::to_string(view));
    Eigen::VectorXd psi = inference_psi(t, view);
    Eigen::VectorXd fused;
    const Eigen::VectorXd* fp = nullptr;
    if (state_.config.texture_on && !state_.config.freeze) {
        if (state_.bank.has(t))
            fused = state_.features.row(t).transpose();
        else
            fused = regress_views(t, training_views(), nullptr).second;
        fp = &fused;
    }
    return render_internal(t, state_.cameras[view], psi, fp);
}

Image Trainer::render_camera(int t, const Camera& cam) const {
    cam.validate();
    Eigen::VectorXd psi = inference_psi(t, -1);
    Eigen::VectorXd fused;
    const Eigen::VectorXd* fp = nullptr;
    if (state_.config.texture_on && !state_.config.freeze) {
        if (state_.bank.has(t))
            fused = state_.features.row(t).transpose();
        else
            fused = regress_views(t, training_views(), nullptr).second;
        fp = &fused;
    }
    return render_internal(t, cam, psi, fp);
}

std::vector<Image> Trainer::reenact(const std::vector<HeadParams>& driving,
                                    const std::vector<Camera>& cams) const {
    std::vector<Image> out;
    for (const HeadParams& d : driving) {
        HeadParams p = d;
        p.shape = state_.shape; // target identity stays fixed
        p.check_dims(state_.model);
        Mesh mesh = evaluate(state_.model, p);
        TriangleFrames frames = triangle_frames(mesh);
        WorldGaussians world = to_world(state_.cloud, mesh, frames);
        for (const Camera& cam : cams) {
            cam.validate();
            out.push_back(
                render_gaussians(world, cam, state_.config.background, RasterMode::Tiled).out.image);
        }
    }
    return out;
}

LossReport Trainer::step() {
    if (!data_) throw ValidationError("training requires an attached dataset");
    const TrainConfig& cfg = state_.config;
    const int iter = state_.iteration;
    const std::vector<int> tv = training_views();
    const int t = state_.train_t[iter % state_.train_t.size()];
    const int view = tv[iter % tv.size()];
    const Camera& cam = state_.cameras[view];
    const Image& target = data_->frames[t][view];

    // --- correction regression + bank bookkeeping ---
    CorrectionNet::Context net_ctx;
    Eigen::VectorXd dpsi, fused;
    Eigen::VectorXd psi = state_.flame[t].expression;
    const bool correct = !cfg.freeze;
    if (correct) {
        std::vector<int> rv = cfg.single_view ? std::vector<int>{view} : tv;
        std::tie(dpsi, fused) = regress_views(t, rv, &net_ctx);
        const double m = momentum_schedule(iter, cfg.iterations);
        state_.bank.update(t, view, dpsi, m);
        for (auto& slot : state_.bank.entries.at(t))
            for (Eigen::Index k = 0; k < slot.size(); ++k) slot[k] = quantize_f32(slot[k]);
        // value from the banked mean when enabled; gradient through dpsi either way
        psi += cfg.bank_on ? state_.bank.mean(t) : dpsi;
        for (Eigen::Index k = 0; k < fused.size(); ++k)
            state_.features(t, k) = quantize_f32(fused[k]);
    }

    // --- forward ---
    HeadParams p = state_.flame[t];
    p.shape = state_.shape;
    p.expression = psi;
    Mesh mesh = evaluate(state_.model, p);
    TriangleFrames frames = triangle_frames(mesh);
    WorldGaussians world = to_world(state_.cloud, mesh, frames);

    const bool texture = cfg.texture_on && correct;
    WorldGaussians canon;
    GaussianResiduals res;
    std::vector<TextureAttention::Context> attn_ctx;
    std::vector<TextureDecoder::Context> dec_ctx;
    std::vector<Eigen::Vector3d> canon_pts;
    WorldGaussians world_before = world;
    if (texture) {
        canon = to_world(state_.cloud, neutral_mesh_, neutral_frames_); // stop-gradient positions
        res = GaussianResiduals::zero(world.size());
        attn_ctx.resize(world.size());
        dec_ctx.resize(world.size());
        canon_pts.resize(world.size());
        for (std::size_t i = 0; i < world.size(); ++i) {
            canon_pts[i] = canon.means[i];
            Eigen::VectorXd h = triplane_.sample(canon_pts[i]);
            Eigen::VectorXd v = attn_.forward(fused, h, &attn_ctx[i]);
            ResidualSample r =
                decoder_.decode(v, frames.scales[state_.cloud.triangle_id[i]], &dec_ctx[i]);
            res.d_mean[i] = r.d_mean;
            res.d_log_scale[i] = r.d_log_scale;
            res.d_rot[i] = r.d_rot;
            res.d_alpha[i] = r.d_alpha;
        }
        world = apply_residuals(world_before, res);
    }

    auto render = render_gaussians(world, cam, cfg.background, RasterMode::Tiled);
    std::vector<int> visible = visible_set(render);

    Image grad_img(cam.width, cam.height);
    CloudGrads g_cloud = CloudGrads::zero(state_.cloud);
    LossReport rep = total_loss(render.out.image, target, state_.cloud, visible, &grad_img, &g_cloud,
                                cfg.lambda, cfg.lambda_position, cfg.lambda_scaling);
    if (!std::isfinite(rep.total)) {
        std::ostringstream ss;
        ss << "non-finite loss at iteration " << iter << " (t=" << t << ", view=" << view
           << "): l1=" << rep.l1 << " dssim=" << rep.dssim << " position=" << rep.position
           << " scaling=" << rep.scaling;
        throw std::runtime_error(ss.str());
    }

    // --- backward ---
    WorldGrads g_world = render_gaussians_backward(world, cam, render, grad_img);
    Eigen::VectorXd g_fused = Eigen::VectorXd::Zero(cfg.d_feat);
    if (texture) {
        WorldGrads g_before = WorldGrads::zero(world_before);
        ResidualGrads g_res;
        apply_residuals_backward(world_before, res, g_world, g_before, g_res);
        for (std::size_t i = 0; i < world.size(); ++i) {
            Eigen::VectorXd gv = decoder_.backward(dec_ctx[i], g_res.d_mean[i], g_res.d_log_scale[i],
                                                   g_res.d_rot[i], g_res.d_alpha[i]);
            Eigen::VectorXd gh = Eigen::VectorXd::Zero(3 * cfg.triplane_n_d1);
            attn_.backward(attn_ctx[i], gv, g_fused, gh);
            triplane_.sample_backward(canon_pts[i], gh);
        }
        g_world = std::move(g_before);
    }

    TriangleFrameGrads g_frames = zero_frame_grads(state_.model.face_count());
    Eigen::MatrixXd grad_vertices = Eigen::MatrixXd::Zero(state_.model.vertex_count(), 3);
    to_world_backward(state_.cloud, mesh, frames, g_world, g_cloud, g_frames, grad_vertices);
    triangle_frames_backward(mesh, frames, g_frames, grad_vertices);
    HeadParamGrads g_p = evaluate_backward(state_.model, p, grad_vertices);

    // accumulate per-group gradients
    g_flame_[t].rigid_rotation += g_p.rigid_rotation;
    g_flame_[t].rigid_translation += g_p.rigid_translation;
    for (int j = 0; j < state_.model.joint_count; ++j) g_flame_[t].joint_rotations[j] += g_p.joint_rotations[j];
    g_shape_ += g_p.shape;
    g_flame_[t].expression += g_p.expression; // psi_init path
    if (correct) net_.backward(net_ctx, g_p.expression, texture ? g_fused : Eigen::VectorXd());

    for (std::size_t i = 0; i < state_.cloud.size(); ++i) {
        g_cloud_.local_offset[i] += g_cloud.local_offset[i];
        g_cloud_.log_scale[i] += g_cloud.log_scale[i];
        g_cloud_.rotation[i] += g_cloud.rotation[i];
        g_cloud_.opacity_logit[i] += g_cloud.opacity_logit[i];
    }
    for (std::size_t i = 0; i < state_.cloud.sh_coeffs.size(); ++i)
        g_cloud_.sh_coeffs[i] += g_cloud.sh_coeffs[i];

    adam_step();

    // --- scheduled maintenance ---
    const int next = state_.iteration; // adam_step advanced it
    if (next >= cfg.reanchor_start && (next - cfg.reanchor_start) % cfg.reanchor_interval == 0)
        reanchor(state_.cloud, mesh, frames);
    // keep a full interval after the last reset so opacities re-converge
    if (next % cfg.opacity_reset_interval == 0 && next + cfg.opacity_reset_interval <= cfg.iterations) {
        reset_opacity(state_.cloud, cfg.opacity_reset_value);
        auto it = state_.adam.find("cloud/opacity_logit");
        if (it != state_.adam.end()) {
            std::fill(it->second.m.begin(), it->second.m.end(), 0.0);
            std::fill(it->second.v.begin(), it->second.v.end(), 0.0);
        }
    }
    return rep;
}

void Trainer::adam_step() {
    const TrainConfig& cfg = state_.config;
    const int iter = state_.iteration;
    const double tstep = iter + 1;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, tstep), bc2 = 1.0 - std::pow(b2, tstep);
    const double pos_lr = cfg.lr_position * std::pow(0.01, static_cast<double>(iter) / cfg.iterations);

    auto step_span = [&](const std::string& key, double* w, double* g, std::size_t n, double lr,
                         std::size_t offset = 0, std::size_t total = 0) {
        AdamSlot& slot = state_.adam[key];
        const std::size_t want = total ? total : n;
        if (slot.m.size() != want) {
            slot.m.assign(want, 0.0);
            slot.v.assign(want, 0.0);
        }
        for (std::size_t i = 0; i < n; ++i) {
            double& m = slot.m[offset + i];
            double& v = slot.v[offset + i];
            m = b1 * m + (1 - b1) * g[i];
            v = b2 * v + (1 - b2) * g[i] * g[i];
            m = quantize_f32(m);
            v = quantize_f32(v);
            w[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
            w[i] = quantize_f32(w[i]);
            g[i] = 0.0;
        }
    };

    BoundGaussianCloud& c = state_.cloud;
    const std::size_t n = c.size();
    if (n) {
        step_span("cloud/local_offset", c.local_offset[0].data(), g_cloud_.local_offset[0].data(), 3 * n,
                  pos_lr);
        step_span("cloud/log_scale", c.log_scale[0].data(), g_cloud_.log_scale[0].data(), 3 * n,
                  cfg.lr_scale);
        step_span("cloud/rotation", c.rotation[0].data(), g_cloud_.rotation[0].data(), 4 * n,
                  cfg.lr_rotation);
        step_span("cloud/opacity_logit", c.opacity_logit.data(), g_cloud_.opacity_logit.data(), n,
                  cfg.lr_opacity);
        if (!c.sh_coeffs.empty())
            step_span("cloud/sh", c.sh_coeffs[0].data(), g_cloud_.sh_coeffs[0].data(),
                      3 * c.sh_coeffs.size(), cfg.lr_sh);
    }

    const std::size_t T = state_.flame.size();
    const int J = state_.model.joint_count;
    const int E = state_.model.n_expr();
    for (std::size_t t = 0; t < T; ++t) {
        HeadParams& p = state_.flame[t];
        HeadParamGrads& g = g_flame_[t];
        step_span("flame/rigid_rotation", p.rigid_rotation.data(), g.rigid_rotation.data(), 3,
                  cfg.lr_rigid, t * 3, T * 3);
        step_span("flame/rigid_translation", p.rigid_translation.data(), g.rigid_translation.data(), 3,
                  cfg.lr_rigid, t * 3, T * 3);
        for (int j = 0; j < J; ++j)
            step_span("flame/joints", p.joint_rotations[j].data(), g.joint_rotations[j].data(), 3,
                      cfg.lr_joints, (t * J + j) * 3, T * J * 3);
        // the freeze arm pins per-timestamp expressions at their initialization
        step_span("flame/expression", p.expression.data(), g.expression.data(), E,
                  cfg.freeze ? 0.0 : cfg.lr_expression, t * E, T * E);
    }
    step_span("shape", state_.shape.data(), g_shape_.data(), state_.shape.size(), cfg.lr_rigid);

    for (auto& [name, tensor] : state_.params.params)
        step_span("net/" + name, tensor.v.data(), tensor.g.data(), tensor.size(), cfg.lr_networks);

    ++state_.iteration;
}

void Trainer::run(std::ostream* log) {
    if (log)
        *log << "iteration,l1,dssim,rgb,position,scaling,total,visible_count\n";
    char buf[256];
    while (state_.iteration < state_.config.iterations) {
        LossReport rep = step();
        if (log) {
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                          state_.iteration, rep.l1, rep.dssim, rep.rgb, rep.position, rep.scaling,
                          rep.total, rep.visible_count);
            *log << buf;
        }
    }
}

void Trainer::save(const std::string& path) const { save_checkpoint(path, state_); }

} // namespace gavatar
