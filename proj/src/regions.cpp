#include "wpcl/regions.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>

namespace wpcl {

void RegionGrowingConfig::validate() const {
    if (knn < 3) throw RegionError("region growing: knn must be >= 3");
    if (angle_threshold_deg <= 0.0 || angle_threshold_deg >= 90.0)
        throw RegionError("region growing: angle threshold must be in (0, 90) degrees");
    if (color_threshold < 0.0) throw RegionError("region growing: negative color threshold");
}

namespace {

struct GridKey {
    int x, y, z;
    bool operator<(const GridKey& o) const {
        if (x != o.x) return x < o.x;
        if (y != o.y) return y < o.y;
        return z < o.z;
    }
};

} // namespace

std::vector<std::vector<std::size_t>> knn_neighbors(const std::vector<Vec3>& points,
                                                    std::size_t k) {
    const std::size_t n = points.size();
    std::vector<std::vector<std::size_t>> result(n);
    if (n == 0) return result;

    // Cell size from a rough density estimate so a cell holds ~k points.
    Vec3 lo = points[0], hi = points[0];
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    // Clouds are often surfaces, so a pure volume-based density estimate can
    // collapse when one extent is degenerate; take the most optimistic of the
    // 3D, per-plane 2D, and per-axis 1D estimates.
    const Vec3 ext = (hi - lo).cwiseMax(1e-9);
    const double kn = static_cast<double>(k) / static_cast<double>(n);
    double cell = std::cbrt(ext.x() * ext.y() * ext.z() * kn);
    cell = std::max(cell, std::sqrt(ext.x() * ext.y() * kn));
    cell = std::max(cell, std::sqrt(ext.x() * ext.z() * kn));
    cell = std::max(cell, std::sqrt(ext.y() * ext.z() * kn));
    cell = std::max({cell, ext.x() * kn, ext.y() * kn, ext.z() * kn, 1e-6});

    std::map<GridKey, std::vector<std::size_t>> grid;
    auto key_of = [&](const Vec3& p) {
        return GridKey{static_cast<int>(std::floor((p.x() - lo.x()) / cell)),
                       static_cast<int>(std::floor((p.y() - lo.y()) / cell)),
                       static_cast<int>(std::floor((p.z() - lo.z()) / cell))};
    };
    for (std::size_t i = 0; i < n; ++i) grid[key_of(points[i])].push_back(i);

    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        const GridKey base = key_of(points[i]);
        cand.clear();
        int ring = 1;
        while (true) {
            cand.clear();
            for (int dx = -ring; dx <= ring; ++dx)
                for (int dy = -ring; dy <= ring; ++dy)
                    for (int dz = -ring; dz <= ring; ++dz) {
                        auto it = grid.find({base.x + dx, base.y + dy, base.z + dz});
                        if (it == grid.end()) continue;
                        for (std::size_t j : it->second) {
                            if (j == i) continue;
                            cand.emplace_back((points[j] - points[i]).squaredNorm(), j);
                        }
                    }
            // Accept when we have k candidates all guaranteed within the ring
            // radius, or the ring already covers the whole cloud.
            const double safe = static_cast<double>(ring) * cell;
            std::sort(cand.begin(), cand.end());
            std::size_t within = 0;
            while (within < cand.size() && cand[within].first <= safe * safe) ++within;
            if (within >= k || cand.size() >= n - 1) break;
            ++ring;
        }
        const std::size_t take = std::min(k, cand.size());
        result[i].reserve(take);
        for (std::size_t t = 0; t < take; ++t) result[i].push_back(cand[t].second);
    }
    return result;
}

NormalEstimate estimate_normals(const std::vector<Vec3>& points, std::size_t knn) {
    const std::size_t n = points.size();
    if (n < knn) throw RegionError("estimate_normals: fewer points than knn");
    const auto neighbors = knn_neighbors(points, knn);
    NormalEstimate out;
    out.normals.resize(n);
    out.curvature.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 mean = points[i];
        for (std::size_t j : neighbors[i]) mean += points[j];
        mean /= static_cast<double>(neighbors[i].size() + 1);
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        auto accumulate = [&](const Vec3& p) {
            const Vec3 d = p - mean;
            cov += d * d.transpose();
        };
        accumulate(points[i]);
        for (std::size_t j : neighbors[i]) accumulate(points[j]);
        cov /= static_cast<double>(neighbors[i].size() + 1);

        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
        Vec3 normal = solver.eigenvectors().col(0); // ascending eigenvalues
        const double trace = solver.eigenvalues().sum();
        out.curvature[i] = trace > 1e-15 ? solver.eigenvalues()(0) / trace : 0.0;

        // Hemisphere orientation: +z, ties toward +y, then +x.
        bool flip = false;
        if (normal.z() < 0.0) flip = true;
        else if (normal.z() == 0.0) {
            if (normal.y() < 0.0) flip = true;
            else if (normal.y() == 0.0 && normal.x() < 0.0) flip = true;
        }
        if (flip) normal = -normal;
        out.normals[i] = normal;
    }
    return out;
}

RegionPartition partition(const std::vector<Vec3>& points,
                          const std::vector<Vec3>& colors,
                          const RegionGrowingConfig& cfg) {
    cfg.validate();
    const std::size_t n = points.size();
    if (colors.size() != n) throw RegionError("partition: colors length mismatch");
    RegionPartition out;
    if (n == 0) return out;
    if (n < cfg.knn) {
        // Too few points for normals; every point becomes a singleton.
        out.assignment.resize(n);
        std::iota(out.assignment.begin(), out.assignment.end(), std::size_t{0});
        out.region_count = n;
        out.region_sizes.assign(n, 1);
        return out;
    }

    const auto normals = estimate_normals(points, cfg.knn);
    const auto neighbors = knn_neighbors(points, cfg.knn);
    const double cos_thresh = std::cos(cfg.angle_threshold_deg * M_PI / 180.0);

    std::vector<std::size_t> seeds(n);
    std::iota(seeds.begin(), seeds.end(), std::size_t{0});
    if (cfg.seed_order == RegionGrowingConfig::SeedOrder::CurvatureAscending) {
        std::stable_sort(seeds.begin(), seeds.end(), [&](std::size_t a, std::size_t b) {
            return normals.curvature[a] < normals.curvature[b];
        });
    }

    constexpr std::size_t kUnvisited = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> label(n, kUnvisited);
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t seed : seeds) {
        if (label[seed] != kUnvisited) continue;
        const std::size_t id = members.size();
        members.emplace_back();
        std::deque<std::size_t> queue{seed};
        label[seed] = id;
        // Normal comparisons are made against the seed, not chained point to
        // point: chaining drifts across smooth seams (boundary points average
        // the two incident surfaces) and merges distinct planes.
        const Vec3 seed_normal = normals.normals[seed];
        while (!queue.empty()) {
            const std::size_t cur = queue.front();
            queue.pop_front();
            members[id].push_back(cur);
            for (std::size_t nb : neighbors[cur]) {
                if (label[nb] != kUnvisited) continue;
                const double cosine = std::abs(seed_normal.dot(normals.normals[nb]));
                if (cosine < cos_thresh) continue;
                if ((colors[cur] - colors[nb]).norm() > cfg.color_threshold) continue;
                label[nb] = id;
                queue.push_back(nb);
            }
        }
    }

    // Dissolve undersized regions into singletons, then renumber by first
    // member index for a deterministic contiguous id space.
    std::vector<std::vector<std::size_t>> final_members;
    for (auto& group : members) {
        if (group.size() >= cfg.min_region_size) {
            final_members.push_back(std::move(group));
        } else {
            for (std::size_t p : group) final_members.push_back({p});
        }
    }
    std::stable_sort(final_members.begin(), final_members.end(),
                     [](const auto& a, const auto& b) { return a.front() < b.front(); });

    out.assignment.resize(n);
    out.region_count = final_members.size();
    out.region_sizes.resize(out.region_count);
    for (std::size_t id = 0; id < final_members.size(); ++id) {
        out.region_sizes[id] = final_members[id].size();
        for (std::size_t p : final_members[id]) out.assignment[p] = id;
    }
    return out;
}

RegionPartition partition_pixels(const CameraView& view, const RegionGrowingConfig& cfg) {
    if (view.depth_map.empty()) throw RegionError("partition_pixels: missing depth map");
    const std::size_t total = static_cast<std::size_t>(view.width) * view.height;
    std::vector<Vec3> pts, cols;
    std::vector<std::size_t> flat_index;
    for (int h = 0; h < view.height; ++h)
        for (int w = 0; w < view.width; ++w) {
            const std::size_t flat = static_cast<std::size_t>(h) * view.width + w;
            const float d = view.depth_map[flat];
            if (d <= 0.0f) continue;
            pts.push_back(backproject_pixel(h, w, d, view));
            if (!view.color.empty())
                cols.emplace_back(view.color[flat * 3], view.color[flat * 3 + 1],
                                  view.color[flat * 3 + 2]);
            else
                cols.emplace_back(0.0, 0.0, 0.0);
            flat_index.push_back(flat);
        }

    RegionPartition inner = pts.empty()
                                ? RegionPartition{}
                                : partition(pts, cols, cfg);

    RegionPartition out;
    out.region_count = inner.region_count;
    out.region_sizes = inner.region_sizes;
    out.assignment.assign(total, 0);
    const std::size_t invalid = total - pts.size();
    if (invalid > 0) {
        out.unassigned_region = out.region_count;
        out.region_sizes.push_back(invalid);
        out.region_count += 1;
        std::fill(out.assignment.begin(), out.assignment.end(), *out.unassigned_region);
    }
    for (std::size_t i = 0; i < flat_index.size(); ++i)
        out.assignment[flat_index[i]] = inner.assignment[i];
    return out;
}

RegionPartition identity_partition(std::size_t n) {
    RegionPartition out;
    out.assignment.resize(n);
    std::iota(out.assignment.begin(), out.assignment.end(), std::size_t{0});
    out.region_count = n;
    out.region_sizes.assign(n, 1);
    return out;
}

RegionPartition partition_from_labels(const std::vector<std::size_t>& labels) {
    RegionPartition out;
    out.assignment.resize(labels.size());
    std::map<std::size_t, std::size_t> remap;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = remap.emplace(labels[i], remap.size());
        out.assignment[i] = it->second;
    }
    out.region_count = remap.size();
    out.region_sizes.assign(out.region_count, 0);
    for (std::size_t id : out.assignment) out.region_sizes[id]++;
    return out;
}

} // namespace wpcl
