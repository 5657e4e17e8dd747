#include "gavatar/neuralcore.hpp"

#include <cmath>

#include "gavatar/errors.hpp"

namespace gavatar {

namespace {

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ValidationError("tensor shape has a non-positive dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

double kaiming_bound(int fan_in) { return std::sqrt(6.0 / fan_in); }

void kaiming_fill(Tensor& t, int fan_in, Rng& rng) {
    const double b = kaiming_bound(fan_in);
    for (double& x : t.v) x = rng.uniform(-b, b);
}

int conv_out(int in) { return (in + 1) / 2; } // 3x3, stride 2, pad 1

} // namespace

Tensor& ParamStore::add(const std::string& name, const std::vector<int>& shape) {
    if (params.count(name)) throw ValidationError("duplicate parameter name: " + name);
    Tensor t;
    t.shape = shape;
    t.v.assign(shape_size(shape), 0.0);
    t.g.assign(t.v.size(), 0.0);
    return params.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("unknown parameter name: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("unknown parameter name: " + name);
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : params) std::fill(t.g.begin(), t.g.end(), 0.0);
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
}

double leaky_relu(double x) { return x > 0 ? x : 0.01 * x; }
double leaky_relu_grad(double x) { return x > 0 ? 1.0 : 0.01; }

void ConvEncoder::attach(ParamStore& store, const std::string& prefix, int in_h, int in_w, int d_feat) {
    store_ = &store;
    prefix_ = prefix;
    in_h_ = in_h;
    in_w_ = in_w;
    d_feat_ = d_feat;
    channels_ = {3, 8, 16, 32, 64};
    hs_.clear();
    ws_.clear();
    int h = in_h, w = in_w;
    for (int l = 0; l < kLayers; ++l) {
        h = conv_out(h);
        w = conv_out(w);
        if (h < 1 || w < 1) throw ValidationError("encoder input too small");
        hs_.push_back(h);
        ws_.push_back(w);
    }
}

void ConvEncoder::init(ParamStore& store, const std::string& prefix, int in_h, int in_w, int d_feat,
                       Rng& rng) {
    attach(store, prefix, in_h, in_w, d_feat);
    for (int l = 0; l < kLayers; ++l) {
        Tensor& w = store.add(prefix + ".conv" + std::to_string(l) + ".w",
                              {channels_[l + 1], channels_[l], 3, 3});
        kaiming_fill(w, channels_[l] * 9, rng);
        store.add(prefix + ".conv" + std::to_string(l) + ".b", {channels_[l + 1]});
    }
    Tensor& fw = store.add(prefix + ".fc.w", {d_feat, channels_.back()});
    kaiming_fill(fw, channels_.back(), rng);
    store.add(prefix + ".fc.b", {d_feat});
}

Eigen::VectorXd ConvEncoder::forward(const Image& image, Context* ctx) const {
    if (image.width != in_w_ || image.height != in_h_)
        throw ValidationError("encoder input image has the wrong size");
    // interleaved HxWx3 -> CHW planes
    std::vector<double> act(static_cast<std::size_t>(3) * in_h_ * in_w_);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < in_h_; ++y)
            for (int x = 0; x < in_w_; ++x)
                act[(static_cast<std::size_t>(c) * in_h_ + y) * in_w_ + x] = image.at(x, y, c);
    if (ctx) {
        ctx->input = act;
        ctx->pre.resize(kLayers);
    }

    int h_in = in_h_, w_in = in_w_;
    for (int l = 0; l < kLayers; ++l) {
        const Tensor& W = store_->at(prefix_ + ".conv" + std::to_string(l) + ".w");
        const Tensor& B = store_->at(prefix_ + ".conv" + std::to_string(l) + ".b");
        const int ci = channels_[l], co = channels_[l + 1];
        const int ho = hs_[l], wo = ws_[l];
        std::vector<double> pre(static_cast<std::size_t>(co) * ho * wo);
        for (int oc = 0; oc < co; ++oc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double s = B.v[oc];
                    for (int ic = 0; ic < ci; ++ic)
                        for (int ky = 0; ky < 3; ++ky) {
                            const int iy = oy * 2 + ky - 1;
                            if (iy < 0 || iy >= h_in) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ix = ox * 2 + kx - 1;
                                if (ix < 0 || ix >= w_in) continue;
                                s += W.v[((static_cast<std::size_t>(oc) * ci + ic) * 3 + ky) * 3 + kx] *
                                     act[(static_cast<std::size_t>(ic) * h_in + iy) * w_in + ix];
                            }
                        }
                    pre[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox] = s;
                }
        if (ctx) ctx->pre[l] = pre;
        act.resize(pre.size());
        for (std::size_t i = 0; i < pre.size(); ++i) act[i] = leaky_relu(pre[i]);
        h_in = ho;
        w_in = wo;
    }

    const int co = channels_.back();
    const double inv_hw = 1.0 / (h_in * w_in);
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(co);
    for (int c = 0; c < co; ++c) {
        double s = 0;
        for (int i = 0; i < h_in * w_in; ++i) s += act[static_cast<std::size_t>(c) * h_in * w_in + i];
        pooled[c] = s * inv_hw;
    }
    if (ctx) ctx->pooled.assign(pooled.data(), pooled.data() + co);

    const Tensor& FW = store_->at(prefix_ + ".fc.w");
    const Tensor& FB = store_->at(prefix_ + ".fc.b");
    Eigen::VectorXd out(d_feat_);
    for (int o = 0; o < d_feat_; ++o) {
        double s = FB.v[o];
        for (int c = 0; c < co; ++c) s += FW.v[static_cast<std::size_t>(o) * co + c] * pooled[c];
        out[o] = s;
    }
    return out;
}

void ConvEncoder::backward(const Context& ctx, const Eigen::VectorXd& grad_out, Image* grad_image) const {
    if (grad_out.size() != d_feat_) throw ValidationError("encoder gradient has the wrong size");
    const int co = channels_.back();
    Tensor& FW = store_->at(prefix_ + ".fc.w");
    Tensor& FB = store_->at(prefix_ + ".fc.b");
    Eigen::VectorXd g_pooled = Eigen::VectorXd::Zero(co);
    for (int o = 0; o < d_feat_; ++o) {
        FB.g[o] += grad_out[o];
        for (int c = 0; c < co; ++c) {
            FW.g[static_cast<std::size_t>(o) * co + c] += grad_out[o] * ctx.pooled[c];
            g_pooled[c] += grad_out[o] * FW.v[static_cast<std::size_t>(o) * co + c];
        }
    }

    const int hl = hs_.back(), wl = ws_.back();
    std::vector<double> g_act(static_cast<std::size_t>(co) * hl * wl);
    const double inv_hw = 1.0 / (hl * wl);
    for (int c = 0; c < co; ++c)
        for (int i = 0; i < hl * wl; ++i)
            g_act[static_cast<std::size_t>(c) * hl * wl + i] = g_pooled[c] * inv_hw;

    for (int l = kLayers - 1; l >= 0; --l) {
        Tensor& W = store_->at(prefix_ + ".conv" + std::to_string(l) + ".w");
        Tensor& B = store_->at(prefix_ + ".conv" + std::to_string(l) + ".b");
        const int ci = channels_[l], cn = channels_[l + 1];
        const int ho = hs_[l], wo = ws_[l];
        const int h_in = l > 0 ? hs_[l - 1] : in_h_;
        const int w_in = l > 0 ? ws_[l - 1] : in_w_;
        const std::vector<double>& pre = ctx.pre[l];
        const std::vector<double>* act_in;
        std::vector<double> act_buf;
        if (l > 0) {
            const std::vector<double>& prev = ctx.pre[l - 1];
            act_buf.resize(prev.size());
            for (std::size_t i = 0; i < prev.size(); ++i) act_buf[i] = leaky_relu(prev[i]);
            act_in = &act_buf;
        } else {
            act_in = &ctx.input;
        }

        std::vector<double> g_in(static_cast<std::size_t>(ci) * h_in * w_in, 0.0);
        for (int oc = 0; oc < cn; ++oc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    const std::size_t oi = (static_cast<std::size_t>(oc) * ho + oy) * wo + ox;
                    const double gp = g_act[oi] * leaky_relu_grad(pre[oi]);
                    if (gp == 0.0) continue;
                    B.g[oc] += gp;
                    for (int ic = 0; ic < ci; ++ic)
                        for (int ky = 0; ky < 3; ++ky) {
                            const int iy = oy * 2 + ky - 1;
                            if (iy < 0 || iy >= h_in) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ix = ox * 2 + kx - 1;
                                if (ix < 0 || ix >= w_in) continue;
                                const std::size_t ii =
                                    (static_cast<std::size_t>(ic) * h_in + iy) * w_in + ix;
                                const std::size_t wi =
                                    ((static_cast<std::size_t>(oc) * ci + ic) * 3 + ky) * 3 + kx;
                                W.g[wi] += gp * (*act_in)[ii];
                                g_in[ii] += gp * W.v[wi];
                            }
                        }
                }
        g_act = std::move(g_in);
    }

    if (grad_image) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < in_h_; ++y)
                for (int x = 0; x < in_w_; ++x)
                    grad_image->at(x, y, c) +=
                        g_act[(static_cast<std::size_t>(c) * in_h_ + y) * in_w_ + x];
    }
}

void Mlp::attach(ParamStore& store, const std::string& prefix, const std::vector<int>& dims) {
    if (dims.size() < 2) throw ValidationError("mlp needs at least input and output dimensions");
    store_ = &store;
    prefix_ = prefix;
    dims_ = dims;
}

void Mlp::init(ParamStore& store, const std::string& prefix, const std::vector<int>& dims, Rng& rng,
               bool zero_final) {
    attach(store, prefix, dims);
    const int L = static_cast<int>(dims.size()) - 1;
    for (int l = 0; l < L; ++l) {
        Tensor& w = store.add(prefix + ".l" + std::to_string(l) + ".w", {dims[l + 1], dims[l]});
        store.add(prefix + ".l" + std::to_string(l) + ".b", {dims[l + 1]});
        if (!(zero_final && l == L - 1)) kaiming_fill(w, dims[l], rng);
    }
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x, Context* ctx) const {
    if (x.size() != dims_.front()) throw ValidationError("mlp input has the wrong size");
    const int L = static_cast<int>(dims_.size()) - 1;
    if (ctx) {
        ctx->input = x;
        ctx->pre.resize(L);
    }
    Eigen::VectorXd a = x;
    for (int l = 0; l < L; ++l) {
        const Tensor& W = store_->at(prefix_ + ".l" + std::to_string(l) + ".w");
        const Tensor& B = store_->at(prefix_ + ".l" + std::to_string(l) + ".b");
        Eigen::VectorXd pre(dims_[l + 1]);
        for (int o = 0; o < dims_[l + 1]; ++o) {
            double s = B.v[o];
            for (int i = 0; i < dims_[l]; ++i) s += W.v[static_cast<std::size_t>(o) * dims_[l] + i] * a[i];
            pre[o] = s;
        }
        if (ctx) ctx->pre[l] = pre;
        if (l < L - 1)
            a = pre.unaryExpr([](double v) { return leaky_relu(v); });
        else
            a = pre;
    }
    return a;
}

Eigen::VectorXd Mlp::backward(const Context& ctx, const Eigen::VectorXd& grad_out) const {
    const int L = static_cast<int>(dims_.size()) - 1;
    if (grad_out.size() != dims_.back()) throw ValidationError("mlp gradient has the wrong size");
    Eigen::VectorXd g = grad_out;
    for (int l = L - 1; l >= 0; --l) {
        Tensor& W = store_->at(prefix_ + ".l" + std::to_string(l) + ".w");
        Tensor& B = store_->at(prefix_ + ".l" + std::to_string(l) + ".b");
        if (l < L - 1)
            for (int o = 0; o < dims_[l + 1]; ++o) g[o] *= leaky_relu_grad(ctx.pre[l][o]);
        Eigen::VectorXd a_in;
        if (l == 0)
            a_in = ctx.input;
        else
            a_in = ctx.pre[l - 1].unaryExpr([](double v) { return leaky_relu(v); });
        Eigen::VectorXd g_in = Eigen::VectorXd::Zero(dims_[l]);
        for (int o = 0; o < dims_[l + 1]; ++o) {
            B.g[o] += g[o];
            for (int i = 0; i < dims_[l]; ++i) {
                W.g[static_cast<std::size_t>(o) * dims_[l] + i] += g[o] * a_in[i];
                g_in[i] += g[o] * W.v[static_cast<std::size_t>(o) * dims_[l] + i];
            }
        }
        g = std::move(g_in);
    }
    return g;
}

Eigen::VectorXd softmax_attention(const Eigen::VectorXd& query, const Eigen::MatrixXd& keys,
                                  const Eigen::MatrixXd& values) {
    const Eigen::Index n = keys.rows();
    if (n == 0) throw ValidationError("softmax_attention needs at least one key");
    if (keys.cols() != query.size() || values.rows() != n)
        throw ValidationError("softmax_attention dimension mismatch");
    Eigen::VectorXd s = keys * query / std::sqrt(static_cast<double>(query.size()));
    Eigen::VectorXd w = (s.array() - s.maxCoeff()).exp();
    w /= w.sum();
    return values.transpose() * w;
}

void softmax_attention_backward(const Eigen::VectorXd& query, const Eigen::MatrixXd& keys,
                                const Eigen::MatrixXd& values, const Eigen::VectorXd& grad_out,
                                Eigen::VectorXd& grad_query, Eigen::MatrixXd& grad_keys,
                                Eigen::MatrixXd& grad_values) {
    const Eigen::Index n = keys.rows();
    if (n == 0) throw ValidationError("softmax_attention needs at least one key");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.size()));
    Eigen::VectorXd s = keys * query * inv_sqrt_d;
    Eigen::VectorXd w = (s.array() - s.maxCoeff()).exp();
    w /= w.sum();

    Eigen::VectorXd g_w = values * grad_out;
    Eigen::VectorXd g_s = w.cwiseProduct(g_w - Eigen::VectorXd::Constant(n, w.dot(g_w)));
    grad_query += keys.transpose() * g_s * inv_sqrt_d;
    grad_keys += g_s * query.transpose() * inv_sqrt_d;
    grad_values += w * grad_out.transpose();
}

} // namespace gavatar
