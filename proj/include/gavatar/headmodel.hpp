#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gavatar/errors.hpp"

namespace gavatar {

// Parametric blendshape head: linear shape/expression spaces, joint-based
// articulation by linear blend skinning, then global rigid motion.
// Immutable after load; evaluate() is pure and thread-safe.
struct HeadModel {
    Eigen::MatrixXd template_vertices;            // V x 3
    Eigen::MatrixXi faces;                        // F x 3
    std::vector<Eigen::MatrixXd> shape_basis;     // n_shape entries, each V x 3
    std::vector<Eigen::MatrixXd> expression_basis; // n_expr entries, each V x 3
    Eigen::MatrixXd vertex_offsets;               // V x 3 (default zero)
    int joint_count = 0;
    Eigen::MatrixXd skinning_weights;             // V x J, rows convex
    std::vector<int> joint_parents;               // -1 for root, acyclic
    Eigen::MatrixXd joint_rest_positions;         // J x 3
    Eigen::MatrixXd vertex_colors;                // V x 3 in [0,1], oracle renderer only

    int vertex_count() const { return static_cast<int>(template_vertices.rows()); }
    int face_count() const { return static_cast<int>(faces.rows()); }
    int n_shape() const { return static_cast<int>(shape_basis.size()); }
    int n_expr() const { return static_cast<int>(expression_basis.size()); }

    void validate() const;
};

struct HeadParams {
    Eigen::Vector3d rigid_rotation = Eigen::Vector3d::Zero();   // axis-angle
    Eigen::Vector3d rigid_translation = Eigen::Vector3d::Zero();
    std::vector<Eigen::Vector3d> joint_rotations;               // J axis-angle triplets
    Eigen::VectorXd shape;                                      // n_shape
    Eigen::VectorXd expression;                                 // n_expr

    static HeadParams zero(const HeadModel& model);
    void check_dims(const HeadModel& model) const;
};

struct Mesh {
    Eigen::MatrixXd vertices; // V x 3
    Eigen::MatrixXi faces;    // F x 3
};

// Per-HeadParams-field gradients, same shapes as HeadParams.
struct HeadParamGrads {
    Eigen::Vector3d rigid_rotation = Eigen::Vector3d::Zero();
    Eigen::Vector3d rigid_translation = Eigen::Vector3d::Zero();
    std::vector<Eigen::Vector3d> joint_rotations;
    Eigen::VectorXd shape;
    Eigen::VectorXd expression;
};

Mesh evaluate(const HeadModel& model, const HeadParams& params);

// dL/d(params) given dL/d(vertices).
HeadParamGrads evaluate_backward(const HeadModel& model, const HeadParams& params,
                                 const Eigen::MatrixXd& grad_vertices);

// Per-triangle anchor frames.
struct TriangleFrames {
    Eigen::MatrixXd centroids;              // F x 3
    std::vector<Eigen::Matrix3d> rotations; // orthonormal, det +1
    Eigen::VectorXd scales;                 // mean edge length
    std::vector<uint8_t> degenerate;        // 1 where the fallback frame was used
};

// prev supplies fallback frames for degenerate triangles (area < 1e-12).
TriangleFrames triangle_frames(const Mesh& mesh, const TriangleFrames* prev = nullptr);

struct TriangleFrameGrads {
    Eigen::MatrixXd centroids;              // F x 3
    std::vector<Eigen::Matrix3d> rotations;
    Eigen::VectorXd scales;
};

// Accumulates dL/d(vertices) from frame gradients. Degenerate triangles get
// zero gradient (their frames are constants).
void triangle_frames_backward(const Mesh& mesh, const TriangleFrames& frames,
                              const TriangleFrameGrads& grads, Eigen::MatrixXd& grad_vertices);

// "GHM1" binary asset plus JSON sidecar mirroring the dimensions.
void save_head_model(const std::string& path, const HeadModel& model);
HeadModel load_head_model(const std::string& path);

} // namespace gavatar
