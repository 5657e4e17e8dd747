#pragma once

#include <Eigen/Dense>

#include "gavatar/gsbinding.hpp"
#include "gavatar/neuralcore.hpp"

namespace gavatar {

// Three zero-initialized feature planes over the canonical bounding box.
class Triplane {
public:
    void init(ParamStore& store, const std::string& prefix, int n_f, int n_d1,
              const Eigen::Vector3d& box_min, const Eigen::Vector3d& box_max);
    void attach(ParamStore& store, const std::string& prefix, int n_f, int n_d1,
                const Eigen::Vector3d& box_min, const Eigen::Vector3d& box_max);

    // Concatenated bilinear samples in plane order xy, xz, yz; length 3*n_d1.
    // Points outside the box are clamped to its boundary.
    Eigen::VectorXd sample(const Eigen::Vector3d& p) const;
    // Gradient w.r.t. grid values only (canonical positions carry a stop-gradient).
    void sample_backward(const Eigen::Vector3d& p, const Eigen::VectorXd& grad_out) const;

    int n_f() const { return n_f_; }
    int n_d1() const { return n_d1_; }
    const Eigen::Vector3d& box_min() const { return box_min_; }
    const Eigen::Vector3d& box_max() const { return box_max_; }

private:
    struct PlaneSample {
        int x0, x1, y0, y1;
        double wx, wy;
    };
    PlaneSample locate(double u, double v) const;

    ParamStore* store_ = nullptr;
    std::string prefix_;
    int n_f_ = 0, n_d1_ = 0;
    Eigen::Vector3d box_min_, box_max_;
};

// Feature-gated fusion: v = sigmoid(Wg F + bg) .* (Wh h + bh) + (Wf F + bf).
class TextureAttention {
public:
    void init(ParamStore& store, const std::string& prefix, int d_feat, int d_h, int d_attn, Rng& rng);
    void attach(ParamStore& store, const std::string& prefix, int d_feat, int d_h, int d_attn);

    struct Context {
        Eigen::VectorXd F, h, gate_pre, proj_h;
    };

    Eigen::VectorXd forward(const Eigen::VectorXd& F, const Eigen::VectorXd& h,
                            Context* ctx = nullptr) const;
    void backward(const Context& ctx, const Eigen::VectorXd& grad_v, Eigen::VectorXd& grad_F,
                  Eigen::VectorXd& grad_h) const;

    int d_attn() const { return d_attn_; }

private:
    ParamStore* store_ = nullptr;
    std::string prefix_;
    int d_feat_ = 0, d_h_ = 0, d_attn_ = 0;
};

// One gaussian's decoded residuals, slotting into GaussianResiduals rows.
struct ResidualSample {
    Eigen::Vector3d d_mean;
    Eigen::Vector3d d_log_scale;
    Eigen::Vector4d d_rot;
    double d_alpha;
};

// Shared trunk with four zero-initialized heads (3, 3, 4, 1). The position
// offset is scaled by 0.01 * the gaussian's triangle scale.
class TextureDecoder {
public:
    void init(ParamStore& store, const std::string& prefix, int d_attn, Rng& rng);
    void attach(ParamStore& store, const std::string& prefix, int d_attn);

    struct Context {
        Mlp::Context trunk;
        Eigen::VectorXd trunk_out; // post-activation
        Mlp::Context heads[4];
        double tri_scale = 1;
    };

    ResidualSample decode(const Eigen::VectorXd& v, double tri_scale, Context* ctx = nullptr) const;
    // Accumulates parameter gradients, returns gradient w.r.t. v.
    Eigen::VectorXd backward(const Context& ctx, const Eigen::Vector3d& g_dmu,
                             const Eigen::Vector3d& g_dscale, const Eigen::Vector4d& g_drot,
                             double g_dopacity) const;

private:
    ParamStore* store_ = nullptr;
    std::string prefix_;
    Mlp trunk_;
    Mlp heads_[4];
    int d_attn_ = 0;
};

} // namespace gavatar
