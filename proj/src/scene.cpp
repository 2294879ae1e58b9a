#include "wpcl/scene.hpp"

namespace wpcl {

void SceneSample::validate() const {
    if (points.empty()) throw LossError("scene '" + id + "': empty point cloud");
    if (colors.size() != points.size())
        throw LossError("scene '" + id + "': color count mismatch");
    scene_label.validate();
    if (!gt_labels.empty() && gt_labels.size() != points.size())
        throw LossError("scene '" + id + "': gt label count mismatch");
    for (const auto& v : views) v.validate();
}

} // namespace wpcl
