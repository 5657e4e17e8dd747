#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gavatar/image.hpp"
#include "gavatar/rng.hpp"

namespace gavatar {

// One named block of trainable values with a matching gradient accumulator.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;
    std::vector<double> g;

    std::size_t size() const { return v.size(); }
};

// Named flat parameter arrays. std::map keeps iteration (and thus
// serialization and update) order deterministic.
struct ParamStore {
    std::map<std::string, Tensor> params;

    Tensor& add(const std::string& name, const std::vector<int>& shape);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    void zero_grad();
    std::size_t total_size() const;
};

double leaky_relu(double x);
double leaky_relu_grad(double x);

// 4 stride-2 3x3 convolutions (leaky-ReLU) -> global average pool -> linear.
// Channel progression 3 -> 8 -> 16 -> 32 -> 64, feature dimension d_feat.
class ConvEncoder {
public:
    static constexpr int kLayers = 4;

    void init(ParamStore& store, const std::string& prefix, int in_h, int in_w, int d_feat, Rng& rng);
    void attach(ParamStore& store, const std::string& prefix, int in_h, int in_w, int d_feat);

    struct Context {
        // pre-activation maps per conv layer plus the input in CHW planes
        std::vector<std::vector<double>> pre;
        std::vector<double> input;
        std::vector<double> pooled;
    };

    Eigen::VectorXd forward(const Image& image, Context* ctx = nullptr) const;
    // Accumulates into parameter gradients; grad_image (HxWx3) optional.
    void backward(const Context& ctx, const Eigen::VectorXd& grad_out, Image* grad_image = nullptr) const;

    int d_feat() const { return d_feat_; }
    int in_h() const { return in_h_; }
    int in_w() const { return in_w_; }

private:
    ParamStore* store_ = nullptr;
    std::string prefix_;
    int in_h_ = 0, in_w_ = 0, d_feat_ = 0;
    std::vector<int> channels_;
    std::vector<int> hs_, ws_; // spatial sizes per layer output
};

// Fully connected stack with leaky-ReLU on hidden layers.
class Mlp {
public:
    void init(ParamStore& store, const std::string& prefix, const std::vector<int>& dims, Rng& rng,
              bool zero_final);
    void attach(ParamStore& store, const std::string& prefix, const std::vector<int>& dims);

    struct Context {
        std::vector<Eigen::VectorXd> pre; // pre-activation per layer
        Eigen::VectorXd input;
    };

    Eigen::VectorXd forward(const Eigen::VectorXd& x, Context* ctx = nullptr) const;
    // Accumulates parameter gradients, returns gradient w.r.t. the input.
    Eigen::VectorXd backward(const Context& ctx, const Eigen::VectorXd& grad_out) const;

    const std::vector<int>& dims() const { return dims_; }

private:
    ParamStore* store_ = nullptr;
    std::string prefix_;
    std::vector<int> dims_;
};

// Scaled dot-product attention: weights = softmax(K q / sqrt(d)), out = V^T w.
// keys/values are row-per-entry matrices.
Eigen::VectorXd softmax_attention(const Eigen::VectorXd& query, const Eigen::MatrixXd& keys,
                                  const Eigen::MatrixXd& values);
void softmax_attention_backward(const Eigen::VectorXd& query, const Eigen::MatrixXd& keys,
                                const Eigen::MatrixXd& values, const Eigen::VectorXd& grad_out,
                                Eigen::VectorXd& grad_query, Eigen::MatrixXd& grad_keys,
                                Eigen::MatrixXd& grad_values);

} // namespace gavatar
