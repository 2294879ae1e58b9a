#pragma once

#include "wpcl/rng.hpp"
#include "wpcl/scene.hpp"
#include "wpcl/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace wpcl {

struct LinearLayer {
    Tensor weight; // in x out
    Tensor bias;   // 1 x out
};

/// Per-point (or per-pixel) MLP with a linear classifier head and a linear
/// projection head for cross-modal alignment.
struct BranchNetwork {
    std::vector<LinearLayer> backbone; // relu between layers, linear output
    LinearLayer classifier;            // feat_dim x C, zero-initialized
    LinearLayer projection;            // feat_dim x proj_dim

    std::size_t input_dim = 0;
    std::size_t feature_dim = 0;
    std::size_t class_count = 0;
    std::size_t projection_dim = 0;

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix);
    std::vector<Tensor> parameters();
    void set_requires_grad(bool value);
};

/// Point branch: 12 -> 32 -> 32 -> 16 over [centered xy, z, rgb, kNN mean
/// offset, kNN mean rgb]. Image branch: 8 -> 32 -> 32 -> 16 over [rgb,
/// normalized row/col, 3x3 box-blurred rgb].
BranchNetwork make_point_network(std::size_t class_count, Rng& rng,
                                 std::size_t feature_dim = 16,
                                 std::size_t projection_dim = 16);
BranchNetwork make_image_network(std::size_t class_count, Rng& rng,
                                 std::size_t feature_dim = 16,
                                 std::size_t projection_dim = 16);

struct BranchOutput {
    Tensor features; // n x feature_dim
    Tensor logits;   // n x C
    Tensor probs;    // n x C
};

/// Forward pass over a precomputed n x input_dim featurization.
BranchOutput forward_branch(Tape& tape, const BranchNetwork& net, const Tensor& input);

/// The fixed per-point featurization consumed by the point network; the kNN
/// context is computed once per cloud.
Tensor point_input_features(const std::vector<Vec3>& points,
                            const std::vector<Vec3>& colors,
                            std::size_t context_knn = 8);

/// Per-pixel featurization for one view, flattened row-major over H x W.
Tensor pixel_input_features(const CameraView& view);

} // namespace wpcl
