#include "gavatar/geocorrect.hpp"

#include "gavatar/errors.hpp"

namespace gavatar {

void ExpressionBank::update(int t, int view, const Eigen::VectorXd& dpsi, double momentum) {
    if (view < 0 || view >= view_count) throw ValidationError("bank update for an out-of-range view");
    if (dpsi.size() != n_expr) throw ValidationError("bank update with the wrong expression size");
    auto it = entries.find(t);
    if (it == entries.end())
        it = entries.emplace(t, std::vector<Eigen::VectorXd>(view_count, Eigen::VectorXd::Zero(n_expr)))
                 .first;
    it->second[view] = momentum * it->second[view] + (1.0 - momentum) * dpsi;
}

Eigen::VectorXd ExpressionBank::mean(int t) const {
    auto it = entries.find(t);
    if (it == entries.end()) return Eigen::VectorXd::Zero(n_expr);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(n_expr);
    for (const auto& slot : it->second) m += slot;
    return m / static_cast<double>(view_count);
}

Eigen::VectorXd ExpressionBank::apply(int t, const Eigen::VectorXd& psi_init) const {
    if (psi_init.size() != n_expr) throw ValidationError("bank apply with the wrong expression size");
    return psi_init + mean(t);
}

double momentum_schedule(int iteration, int total_iterations) {
    if (iteration < 0 || iteration > total_iterations)
        throw ValidationError("momentum schedule iteration out of range");
    const double m_start = 0.9, m_end = 0.1;
    return m_start + (m_end - m_start) * static_cast<double>(iteration) / total_iterations;
}

void CorrectionNet::attach(ParamStore& store, const std::string& prefix, int in_h, int in_w, int d_feat,
                           int n_expr) {
    store_ = &store;
    prefix_ = prefix;
    n_expr_ = n_expr;
    encoder_.attach(store, prefix + ".enc", in_h, in_w, d_feat);
    mlp_.attach(store, prefix + ".mlp", {d_feat, 128, 128, n_expr});
}

void CorrectionNet::init(ParamStore& store, const std::string& prefix, int in_h, int in_w, int d_feat,
                         int n_expr, Rng& rng) {
    store_ = &store;
    prefix_ = prefix;
    n_expr_ = n_expr;
    encoder_.init(store, prefix + ".enc", in_h, in_w, d_feat, rng);
    Tensor& q = store.add(prefix + ".query", {d_feat});
    const double b = std::sqrt(6.0 / d_feat);
    for (double& x : q.v) x = rng.uniform(-b, b);
    mlp_.init(store, prefix + ".mlp", {d_feat, 128, 128, n_expr}, rng, true);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> CorrectionNet::regress(const std::vector<Image>& frames,
                                                                   Context* ctx) const {
    if (frames.empty()) throw ValidationError("regress_correction needs at least one view");
    const int n = static_cast<int>(frames.size());
    const int d = encoder_.d_feat();
    Eigen::MatrixXd features(n, d);
    if (ctx) ctx->enc.resize(n);
    for (int i = 0; i < n; ++i)
        features.row(i) = encoder_.forward(frames[i], ctx ? &ctx->enc[i] : nullptr).transpose();

    const Tensor& q = store_->at(prefix_ + ".query");
    Eigen::VectorXd query = Eigen::Map<const Eigen::VectorXd>(q.v.data(), d);
    Eigen::VectorXd fused = softmax_attention(query, features, features);
    Eigen::VectorXd dpsi = mlp_.forward(fused, ctx ? &ctx->mlp : nullptr);
    if (ctx) {
        ctx->features = features;
        ctx->fused = fused;
    }
    return {dpsi, fused};
}

void CorrectionNet::backward(const Context& ctx, const Eigen::VectorXd& grad_dpsi,
                             const Eigen::VectorXd& grad_fused) const {
    const int n = static_cast<int>(ctx.features.rows());
    const int d = encoder_.d_feat();
    Eigen::VectorXd g_fused = grad_fused.size() ? grad_fused : Eigen::VectorXd::Zero(d);
    if (grad_dpsi.size()) g_fused += mlp_.backward(ctx.mlp, grad_dpsi);

    Tensor& q = store_->at(prefix_ + ".query");
    Eigen::VectorXd query = Eigen::Map<const Eigen::VectorXd>(q.v.data(), d);
    Eigen::VectorXd g_query = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd g_keys = Eigen::MatrixXd::Zero(n, d), g_values = Eigen::MatrixXd::Zero(n, d);
    softmax_attention_backward(query, ctx.features, ctx.features, g_fused, g_query, g_keys, g_values);
    for (int i = 0; i < d; ++i) q.g[i] += g_query[i];
    // keys and values are the same per-view features
    Eigen::MatrixXd g_feat = g_keys + g_values;
    for (int i = 0; i < n; ++i) encoder_.backward(ctx.enc[i], g_feat.row(i).transpose());
}

} // namespace gavatar
