#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wpcl {

class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Vec3 = Eigen::Vector3d;
using Mat4 = Eigen::Matrix4d;

/// Pinhole camera with a world-to-camera rigid transform and a per-pixel
/// depth map in meters (0 marks invalid depth).
struct CameraView {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    Mat4 world_to_camera = Mat4::Identity();
    int width = 0, height = 0;
    std::vector<float> depth_map; // row-major H x W, meters, 0 = invalid
    std::vector<float> color;     // row-major H x W x 3 in [0,1]; may be empty

    float depth_at(int h, int w) const { return depth_map[static_cast<std::size_t>(h) * width + w]; }
    void validate() const;
};

struct PixelHit {
    int h = 0;
    int w = 0;
    double depth = 0.0;
};

struct Correspondence {
    std::size_t point_index = 0;
    std::size_t view_index = 0;
    int h = 0;
    int w = 0;
    double camera_depth = 0.0;
};

struct CorrespondenceSet {
    std::vector<Correspondence> entries;
    std::string sample_id;
};

/// Pinhole projection with nearest-integer pixel rounding. Returns nothing
/// for points behind the camera (depth <= 1e-6) or outside image bounds.
std::optional<PixelHit> project_point(const Vec3& p_world, const CameraView& cam);

/// Inverse pinhole through the intrinsics, then the inverse extrinsic back to
/// the world frame. Throws on nonpositive depth.
Vec3 backproject_pixel(int h, int w, double depth, const CameraView& cam);

/// Projects every point into every view and keeps a pair iff the projected
/// depth agrees with the depth map within depth_tolerance (occlusion test).
/// Set depth_test=false to keep all in-bounds projections.
CorrespondenceSet build_correspondences(const std::vector<Vec3>& points,
                                        const std::vector<CameraView>& cams,
                                        double depth_tolerance = 0.05,
                                        bool depth_test = true);

/// Uniform sample without replacement of min(k, |set|) entries; deterministic
/// for a given seed.
CorrespondenceSet sample_pairs(const CorrespondenceSet& set, std::size_t k,
                               std::uint64_t rng_seed);

} // namespace wpcl
