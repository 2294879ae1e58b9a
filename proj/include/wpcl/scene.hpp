#pragma once

#include "wpcl/geometry.hpp"
#include "wpcl/losses.hpp"

#include <string>
#include <vector>

namespace wpcl {

/// One training unit: point cloud, multi-view images with cameras and depth,
/// and the scene-level tag. Ground-truth labels, when present, are used for
/// evaluation only and never enter a training loss.
struct SceneSample {
    std::string id;
    std::vector<Vec3> points;
    std::vector<Vec3> colors; // RGB in [0,1]
    std::vector<CameraView> views;
    SceneLabel scene_label;
    std::vector<std::size_t> gt_labels; // empty when absent

    std::size_t point_count() const { return points.size(); }
    void validate() const;
};

} // namespace wpcl
