#include "gavatar/texattn.hpp"

#include <cmath>

#include "gavatar/errors.hpp"

namespace gavatar {

namespace {

const char* kPlaneNames[3] = {"xy", "xz", "yz"};
const int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

} // namespace

void Triplane::attach(ParamStore& store, const std::string& prefix, int n_f, int n_d1,
                      const Eigen::Vector3d& box_min, const Eigen::Vector3d& box_max) {
    if (n_f < 2 || n_d1 < 1) throw ValidationError("triplane grid is too small");
    for (int a = 0; a < 3; ++a)
        if (!(box_max[a] > box_min[a])) throw ValidationError("triplane bounding box is degenerate");
    store_ = &store;
    prefix_ = prefix;
    n_f_ = n_f;
    n_d1_ = n_d1;
    box_min_ = box_min;
    box_max_ = box_max;
}

void Triplane::init(ParamStore& store, const std::string& prefix, int n_f, int n_d1,
                    const Eigen::Vector3d& box_min, const Eigen::Vector3d& box_max) {
    attach(store, prefix, n_f, n_d1, box_min, box_max);
    for (const char* p : kPlaneNames) store.add(prefix + "." + p, {n_f, n_f, n_d1});
}

Triplane::PlaneSample Triplane::locate(double u, double v) const {
    auto clamp01 = [](double x) { return x < 0 ? 0.0 : (x > 1 ? 1.0 : x); };
    const double gx = clamp01(u) * (n_f_ - 1);
    const double gy = clamp01(v) * (n_f_ - 1);
    PlaneSample s;
    s.x0 = std::min(static_cast<int>(gx), n_f_ - 2);
    s.y0 = std::min(static_cast<int>(gy), n_f_ - 2);
    s.x1 = s.x0 + 1;
    s.y1 = s.y0 + 1;
    s.wx = gx - s.x0;
    s.wy = gy - s.y0;
    return s;
}

Eigen::VectorXd Triplane::sample(const Eigen::Vector3d& p) const {
    Eigen::Vector3d u;
    for (int a = 0; a < 3; ++a) u[a] = (p[a] - box_min_[a]) / (box_max_[a] - box_min_[a]);
    Eigen::VectorXd out(3 * n_d1_);
    for (int pl = 0; pl < 3; ++pl) {
        const Tensor& grid = store_->at(prefix_ + "." + kPlaneNames[pl]);
        PlaneSample s = locate(u[kPlaneAxes[pl][0]], u[kPlaneAxes[pl][1]]);
        auto node = [&](int x, int y, int d) {
            return grid.v[(static_cast<std::size_t>(x) * n_f_ + y) * n_d1_ + d];
        };
        for (int d = 0; d < n_d1_; ++d)
            out[pl * n_d1_ + d] = (1 - s.wx) * (1 - s.wy) * node(s.x0, s.y0, d) +
                                  s.wx * (1 - s.wy) * node(s.x1, s.y0, d) +
                                  (1 - s.wx) * s.wy * node(s.x0, s.y1, d) +
                                  s.wx * s.wy * node(s.x1, s.y1, d);
    }
    return out;
}

void Triplane::sample_backward(const Eigen::Vector3d& p, const Eigen::VectorXd& grad_out) const {
    if (grad_out.size() != 3 * n_d1_) throw ValidationError("triplane gradient has the wrong size");
    Eigen::Vector3d u;
    for (int a = 0; a < 3; ++a) u[a] = (p[a] - box_min_[a]) / (box_max_[a] - box_min_[a]);
    for (int pl = 0; pl < 3; ++pl) {
        Tensor& grid = store_->at(prefix_ + "." + kPlaneNames[pl]);
        PlaneSample s = locate(u[kPlaneAxes[pl][0]], u[kPlaneAxes[pl][1]]);
        auto gnode = [&](int x, int y, int d) -> double& {
            return grid.g[(static_cast<std::size_t>(x) * n_f_ + y) * n_d1_ + d];
        };
        for (int d = 0; d < n_d1_; ++d) {
            const double g = grad_out[pl * n_d1_ + d];
            gnode(s.x0, s.y0, d) += (1 - s.wx) * (1 - s.wy) * g;
            gnode(s.x1, s.y0, d) += s.wx * (1 - s.wy) * g;
            gnode(s.x0, s.y1, d) += (1 - s.wx) * s.wy * g;
            gnode(s.x1, s.y1, d) += s.wx * s.wy * g;
        }
    }
}

void TextureAttention::attach(ParamStore& store, const std::string& prefix, int d_feat, int d_h,
                              int d_attn) {
    store_ = &store;
    prefix_ = prefix;
    d_feat_ = d_feat;
    d_h_ = d_h;
    d_attn_ = d_attn;
}

void TextureAttention::init(ParamStore& store, const std::string& prefix, int d_feat, int d_h, int d_attn,
                            Rng& rng) {
    attach(store, prefix, d_feat, d_h, d_attn);
    auto fill = [&](Tensor& t, int fan_in) {
        const double b = std::sqrt(6.0 / fan_in);
        for (double& x : t.v) x = rng.uniform(-b, b);
    };
    fill(store.add(prefix + ".gate.w", {d_attn, d_feat}), d_feat);
    store.add(prefix + ".gate.b", {d_attn});
    fill(store.add(prefix + ".h.w", {d_attn, d_h}), d_h);
    store.add(prefix + ".h.b", {d_attn});
    fill(store.add(prefix + ".f.w", {d_attn, d_feat}), d_feat);
    store.add(prefix + ".f.b", {d_attn});
}

namespace {

Eigen::VectorXd linear_apply(const Tensor& W, const Tensor& B, const Eigen::VectorXd& x) {
    const int out = W.shape[0], in = W.shape[1];
    if (x.size() != in) throw ValidationError("texture attention dimension mismatch");
    Eigen::VectorXd y(out);
    for (int o = 0; o < out; ++o) {
        double s = B.v[o];
        for (int i = 0; i < in; ++i) s += W.v[static_cast<std::size_t>(o) * in + i] * x[i];
        y[o] = s;
    }
    return y;
}

void linear_backward(Tensor& W, Tensor& B, const Eigen::VectorXd& x, const Eigen::VectorXd& g_y,
                     Eigen::VectorXd& g_x) {
    const int out = W.shape[0], in = W.shape[1];
    for (int o = 0; o < out; ++o) {
        B.g[o] += g_y[o];
        for (int i = 0; i < in; ++i) {
            W.g[static_cast<std::size_t>(o) * in + i] += g_y[o] * x[i];
            g_x[i] += g_y[o] * W.v[static_cast<std::size_t>(o) * in + i];
        }
    }
}

} // namespace

Eigen::VectorXd TextureAttention::forward(const Eigen::VectorXd& F, const Eigen::VectorXd& h,
                                          Context* ctx) const {
    if (F.size() != d_feat_ || h.size() != d_h_)
        throw ValidationError("texture attention dimension mismatch");
    Eigen::VectorXd gate_pre =
        linear_apply(store_->at(prefix_ + ".gate.w"), store_->at(prefix_ + ".gate.b"), F);
    Eigen::VectorXd proj_h = linear_apply(store_->at(prefix_ + ".h.w"), store_->at(prefix_ + ".h.b"), h);
    Eigen::VectorXd proj_f = linear_apply(store_->at(prefix_ + ".f.w"), store_->at(prefix_ + ".f.b"), F);
    Eigen::VectorXd gate = gate_pre.unaryExpr([](double x) { return sigmoid(x); });
    if (ctx) {
        ctx->F = F;
        ctx->h = h;
        ctx->gate_pre = gate_pre;
        ctx->proj_h = proj_h;
    }
    return gate.cwiseProduct(proj_h) + proj_f;
}

void TextureAttention::backward(const Context& ctx, const Eigen::VectorXd& grad_v,
                                Eigen::VectorXd& grad_F, Eigen::VectorXd& grad_h) const {
    Eigen::VectorXd gate = ctx.gate_pre.unaryExpr([](double x) { return sigmoid(x); });
    Eigen::VectorXd g_proj_h = grad_v.cwiseProduct(gate);
    Eigen::VectorXd g_gate = grad_v.cwiseProduct(ctx.proj_h);
    Eigen::VectorXd g_gate_pre =
        g_gate.cwiseProduct(gate.cwiseProduct(Eigen::VectorXd::Ones(d_attn_) - gate));
    linear_backward(store_->at(prefix_ + ".gate.w"), store_->at(prefix_ + ".gate.b"), ctx.F, g_gate_pre,
                    grad_F);
    linear_backward(store_->at(prefix_ + ".h.w"), store_->at(prefix_ + ".h.b"), ctx.h, g_proj_h, grad_h);
    linear_backward(store_->at(prefix_ + ".f.w"), store_->at(prefix_ + ".f.b"), ctx.F, grad_v, grad_F);
}

void TextureDecoder::attach(ParamStore& store, const std::string& prefix, int d_attn) {
    store_ = &store;
    prefix_ = prefix;
    d_attn_ = d_attn;
    trunk_.attach(store, prefix + ".trunk", {d_attn, 128, 128});
    const int head_dims[4] = {3, 3, 4, 1};
    const char* head_names[4] = {"mu", "s", "r", "a"};
    for (int i = 0; i < 4; ++i)
        heads_[i].attach(store, prefix + ".head_" + head_names[i], {128, head_dims[i]});
}

void TextureDecoder::init(ParamStore& store, const std::string& prefix, int d_attn, Rng& rng) {
    store_ = &store;
    prefix_ = prefix;
    d_attn_ = d_attn;
    trunk_.init(store, prefix + ".trunk", {d_attn, 128, 128}, rng, false);
    const int head_dims[4] = {3, 3, 4, 1};
    const char* head_names[4] = {"mu", "s", "r", "a"};
    for (int i = 0; i < 4; ++i)
        heads_[i].init(store, prefix + ".head_" + head_names[i], {128, head_dims[i]}, rng, true);
}

ResidualSample TextureDecoder::decode(const Eigen::VectorXd& v, double tri_scale, Context* ctx) const {
    Eigen::VectorXd t = trunk_.forward(v, ctx ? &ctx->trunk : nullptr);
    Eigen::VectorXd a = t.unaryExpr([](double x) { return leaky_relu(x); });
    if (ctx) {
        ctx->trunk_out = t;
        ctx->tri_scale = tri_scale;
    }
    ResidualSample out;
    out.d_mean = 0.01 * tri_scale * heads_[0].forward(a, ctx ? &ctx->heads[0] : nullptr);
    out.d_log_scale = heads_[1].forward(a, ctx ? &ctx->heads[1] : nullptr);
    out.d_rot = heads_[2].forward(a, ctx ? &ctx->heads[2] : nullptr);
    out.d_alpha = heads_[3].forward(a, ctx ? &ctx->heads[3] : nullptr)[0];
    return out;
}

Eigen::VectorXd TextureDecoder::backward(const Context& ctx, const Eigen::Vector3d& g_dmu,
                                         const Eigen::Vector3d& g_dscale, const Eigen::Vector4d& g_drot,
                                         double g_dopacity) const {
    Eigen::VectorXd g_act = Eigen::VectorXd::Zero(128);
    g_act += heads_[0].backward(ctx.heads[0], 0.01 * ctx.tri_scale * g_dmu);
    g_act += heads_[1].backward(ctx.heads[1], g_dscale);
    g_act += heads_[2].backward(ctx.heads[2], g_drot);
    g_act += heads_[3].backward(ctx.heads[3], Eigen::VectorXd::Constant(1, g_dopacity));
    Eigen::VectorXd g_trunk(128);
    for (int i = 0; i < 128; ++i) g_trunk[i] = g_act[i] * leaky_relu_grad(ctx.trunk_out[i]);
    return trunk_.backward(ctx.trunk, g_trunk);
}

} // namespace gavatar
