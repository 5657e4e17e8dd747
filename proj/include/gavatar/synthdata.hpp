#pragma once

#include <string>
#include <vector>

#include "gavatar/camera.hpp"
#include "gavatar/headmodel.hpp"
#include "gavatar/image.hpp"

namespace gavatar {

// Procedural scene recipe; serialized as JSON for the gen-data CLI.
struct SceneSpec {
    uint64_t seed = 0;
    int rings = 10, segments = 12;           // procedural head resolution
    int n_shape = 4, n_expr = 8, joints = 3;
    int views = 4;
    double ring_radius = 3.0, ring_height = 0.4;
    int timestamps = 20;
    int image_size = 64;
    double smoothness = 2.0;                 // max trajectory cycles over the sequence
    double sigma = 0.3;                      // expression corruption scale

    void validate() const;
    static SceneSpec from_json_file(const std::string& path);
};

struct SceneData {
    HeadModel model;
    std::vector<Camera> cameras;
    std::vector<HeadParams> params_true;
    std::vector<HeadParams> params_init;     // corrupted
    std::vector<int> train_t, heldout_t;     // 4:1 timestamp split
    int heldout_view = 0;
};

// Deterministic from the spec seed; images are not rendered here.
SceneData generate_scene(const SceneSpec& spec);

// Independent oracle: z-buffered triangle rasterization with perspective-
// correct barycentric vertex-color interpolation. No Gaussians involved.
Image render_mesh(const Eigen::MatrixXd& vertices, const Eigen::MatrixXi& faces,
                  const Eigen::MatrixXd& vertex_colors, const Camera& cam,
                  const Eigen::Vector3d& background = Eigen::Vector3d::Zero());

std::vector<Image> render_ground_truth(const HeadModel& model, const HeadParams& params,
                                       const std::vector<Camera>& cameras);

std::vector<HeadParams> corrupt_expressions(const std::vector<HeadParams>& trajectory, double sigma,
                                            uint64_t seed);

// On-disk dataset: cams.json, params_true.json, params_init.json, split.json,
// model.ghm (+ sidecar), frames/t{ttt}/v{vv}.png.
struct Dataset {
    HeadModel model;
    std::vector<Camera> cameras;
    std::vector<HeadParams> params_true, params_init;
    std::vector<int> train_t, heldout_t;
    int heldout_view = 0;
    std::vector<std::vector<Image>> frames;  // [timestamp][view]

    int timestamps() const { return static_cast<int>(frames.size()); }
    int views() const { return static_cast<int>(cameras.size()); }
};

void write_dataset(const std::string& dir, const SceneData& scene);
Dataset read_dataset(const std::string& dir);

// Standalone loaders for the dataset's JSON formats (driving sequences and
// camera rigs for the reenact CLI).
std::vector<HeadParams> read_params_json(const std::string& path);
std::vector<Camera> read_cameras_json(const std::string& path);

} // namespace gavatar
