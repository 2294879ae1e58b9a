#include "wpcl/geometry.hpp"

#include "wpcl/rng.hpp"

#include <cmath>

namespace wpcl {

void CameraView::validate() const {
    if (fx <= 0.0 || fy <= 0.0) throw GeometryError("camera: focal lengths must be positive");
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
        throw GeometryError("camera: principal point outside image");
    const Eigen::Matrix3d r = world_to_camera.topLeftCorner<3, 3>();
    if ((r * r.transpose() - Eigen::Matrix3d::Identity()).norm() > 1e-6)
        throw GeometryError("camera: rotation block not orthonormal");
    if (std::abs(r.determinant() - 1.0) > 1e-6)
        throw GeometryError("camera: rotation determinant not +1");
    if (!depth_map.empty() &&
        depth_map.size() != static_cast<std::size_t>(width) * height)
        throw GeometryError("camera: depth map size mismatch");
}

std::optional<PixelHit> project_point(const Vec3& p_world, const CameraView& cam) {
    const Eigen::Vector4d pw(p_world.x(), p_world.y(), p_world.z(), 1.0);
    const Eigen::Vector4d pc = cam.world_to_camera * pw;
    const double depth = pc.z();
    if (depth <= 1e-6) return std::nullopt;
    const double u = cam.fx * pc.x() / depth + cam.cx; // column
    const double v = cam.fy * pc.y() / depth + cam.cy; // row
    const int w = static_cast<int>(std::lround(u));
    const int h = static_cast<int>(std::lround(v));
    if (h < 0 || h >= cam.height || w < 0 || w >= cam.width) return std::nullopt;
    return PixelHit{h, w, depth};
}

Vec3 backproject_pixel(int h, int w, double depth, const CameraView& cam) {
    if (depth <= 0.0) throw GeometryError("backproject_pixel: nonpositive depth");
    const double x = (w - cam.cx) / cam.fx * depth;
    const double y = (h - cam.cy) / cam.fy * depth;
    const Eigen::Vector4d pc(x, y, depth, 1.0);
    const Eigen::Matrix3d r = cam.world_to_camera.topLeftCorner<3, 3>();
    const Vec3 t = cam.world_to_camera.topRightCorner<3, 1>();
    return r.transpose() * (pc.head<3>() - t);
}

CorrespondenceSet build_correspondences(const std::vector<Vec3>& points,
                                        const std::vector<CameraView>& cams,
                                        double depth_tolerance, bool depth_test) {
    CorrespondenceSet out;
    for (std::size_t v = 0; v < cams.size(); ++v) {
        const CameraView& cam = cams[v];
        if (cam.depth_map.empty()) throw GeometryError("build_correspondences: missing depth map");
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto hit = project_point(points[i], cam);
            if (!hit) continue;
            if (depth_test) {
                const double mapped = cam.depth_at(hit->h, hit->w);
                if (mapped <= 0.0) continue;
                if (std::abs(hit->depth - mapped) > depth_tolerance) continue;
            }
            out.entries.push_back({i, v, hit->h, hit->w, hit->depth});
        }
    }
    return out;
}

CorrespondenceSet sample_pairs(const CorrespondenceSet& set, std::size_t k,
                               std::uint64_t rng_seed) {
    CorrespondenceSet out;
    out.sample_id = set.sample_id;
    if (set.entries.empty()) return out;
    Rng rng(rng_seed);
    const auto keep = rng.sample_without_replacement(set.entries.size(), k);
    out.entries.reserve(keep.size());
    for (std::size_t i : keep) out.entries.push_back(set.entries[i]);
    return out;
}

} // namespace wpcl
