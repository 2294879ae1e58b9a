#pragma once

#include "wpcl/geometry.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace wpcl {

class RegionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RegionPartition {
    std::vector<std::size_t> assignment; // length N, ids in [0, region_count)
    std::size_t region_count = 0;
    std::vector<std::size_t> region_sizes;
    // Set for pixel partitions when invalid-depth pixels exist; that region is
    // excluded from consistency supervision.
    std::optional<std::size_t> unassigned_region;
};

struct RegionGrowingConfig {
    std::size_t knn = 16;
    double angle_threshold_deg = 30.0;
    double color_threshold = 0.15; // euclidean RGB distance, 0-1 scale
    std::size_t min_region_size = 20;
    enum class SeedOrder { CurvatureAscending, Index };
    SeedOrder seed_order = SeedOrder::CurvatureAscending;

    void validate() const;
};

struct NormalEstimate {
    std::vector<Vec3> normals;     // unit, oriented toward +z (ties: +y, then +x)
    std::vector<double> curvature; // lambda_min / (l0+l1+l2)
};

/// k-nearest neighbors (excluding self) via a uniform grid; deterministic
/// tie-breaking by (distance, index).
std::vector<std::vector<std::size_t>> knn_neighbors(const std::vector<Vec3>& points,
                                                    std::size_t k);

NormalEstimate estimate_normals(const std::vector<Vec3>& points, std::size_t knn);

/// BFS region growing over the kNN graph: a neighbor joins when its normal is
/// within angle_threshold of the current point's normal and its color is
/// within color_threshold. Grown regions smaller than min_region_size are
/// dissolved into singleton regions; no point is ever dropped.
RegionPartition partition(const std::vector<Vec3>& points,
                          const std::vector<Vec3>& colors,
                          const RegionGrowingConfig& cfg);

/// Back-projects valid-depth pixels to 3D, partitions the resulting cloud,
/// and maps assignments back onto the H*W grid. Invalid pixels share one
/// reserved unassigned region (the last id).
RegionPartition partition_pixels(const CameraView& view, const RegionGrowingConfig& cfg);

/// Every point its own region; the point-wise consistency ablation substrate.
RegionPartition identity_partition(std::size_t n);

/// One region per distinct label value; used for ground-truth partitions.
RegionPartition partition_from_labels(const std::vector<std::size_t>& labels);

} // namespace wpcl
