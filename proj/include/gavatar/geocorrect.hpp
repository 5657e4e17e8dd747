#pragma once

#include <map>
#include <vector>

#include <Eigen/Dense>

#include "gavatar/image.hpp"
#include "gavatar/neuralcore.hpp"
#include "gavatar/rng.hpp"

namespace gavatar {

// Per-timestamp EMA slots, one per view; entries created lazily at zero.
struct ExpressionBank {
    int view_count = 0;
    int n_expr = 0;
    std::map<int, std::vector<Eigen::VectorXd>> entries;

    // slot[t, view] <- m * slot + (1 - m) * dpsi
    void update(int t, int view, const Eigen::VectorXd& dpsi, double momentum);
    bool has(int t) const { return entries.count(t) != 0; }
    // Mean over the view slots of entry t; zero when the entry is missing.
    Eigen::VectorXd mean(int t) const;
    Eigen::VectorXd apply(int t, const Eigen::VectorXd& psi_init) const;
};

// m = 0.9 -> 0.1 linearly over training.
double momentum_schedule(int iteration, int total_iterations);

// Encoder per view, single-head attention with a learned query, MLP to n_expr.
class CorrectionNet {
public:
    void init(ParamStore& store, const std::string& prefix, int in_h, int in_w, int d_feat, int n_expr,
              Rng& rng);
    void attach(ParamStore& store, const std::string& prefix, int in_h, int in_w, int d_feat, int n_expr);

    struct Context {
        std::vector<ConvEncoder::Context> enc;
        Eigen::MatrixXd features; // one row per view
        Eigen::VectorXd fused;
        Mlp::Context mlp;
    };

    // Returns (delta psi, fused feature F). F is reused by the texture path.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> regress(const std::vector<Image>& frames,
                                                        Context* ctx = nullptr) const;
    // Accumulates parameter gradients from both output slots.
    void backward(const Context& ctx, const Eigen::VectorXd& grad_dpsi,
                  const Eigen::VectorXd& grad_fused) const;

    int n_expr() const { return n_expr_; }
    int d_feat() const { return encoder_.d_feat(); }
    const ConvEncoder& encoder() const { return encoder_; }

private:
    ParamStore* store_ = nullptr;
    std::string prefix_;
    ConvEncoder encoder_;
    Mlp mlp_;
    int n_expr_ = 0;
};

} // namespace gavatar
