#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "wpcl/regions.hpp"
#include "wpcl/rng.hpp"

#include <set>

using namespace wpcl;

namespace {

void add_plane(std::vector<Vec3>& pts, std::vector<Vec3>& cols, const Vec3& origin,
               const Vec3& eu, const Vec3& ev, const Vec3& color, std::size_t count,
               Rng& rng) {
    for (std::size_t i = 0; i < count; ++i) {
        pts.push_back(origin + rng.uniform() * eu + rng.uniform() * ev);
        cols.push_back(color);
    }
}

RegionGrowingConfig loose_cfg() {
    RegionGrowingConfig cfg;
    cfg.min_region_size = 5;
    return cfg;
}

} // namespace

TEST_CASE("knn excludes self and breaks ties by index") {
    std::vector<Vec3> pts = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(2, 0, 0)};
    auto nn = knn_neighbors(pts, 2);
    REQUIRE(nn.size() == 4);
    CHECK(nn[0] == std::vector<std::size_t>{1, 2}); // equidistant -> lower index first
    CHECK(nn[3] == std::vector<std::size_t>{1, 0});
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (auto j : nn[i]) CHECK(j != i);
}

TEST_CASE("knn caps k at n-1") {
    std::vector<Vec3> pts = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    auto nn = knn_neighbors(pts, 10);
    for (const auto& row : nn) CHECK(row.size() == 2);
}

TEST_CASE("normals of a flat sheet point up with near-zero curvature") {
    Rng rng(3);
    std::vector<Vec3> pts, cols;
    add_plane(pts, cols, {0, 0, 0}, {2, 0, 0}, {0, 2, 0}, {0.5, 0.5, 0.5}, 300, rng);
    auto est = estimate_normals(pts, 12);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(est.normals[i].z() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(est.curvature[i] == doctest::Approx(0.0).epsilon(1e-9));
    }
}

TEST_CASE("normal orientation resolves the vertical-plane tie toward +y then +x") {
    Rng rng(4);
    std::vector<Vec3> pts, cols;
    // plane x = 0, normal +-x; z-component zero so the +y rule then +x rule decides
    add_plane(pts, cols, {0, 0, 0}, {0, 2, 0}, {0, 0, 2}, {0.5, 0.5, 0.5}, 200, rng);
    auto est = estimate_normals(pts, 12);
    for (const auto& n : est.normals) CHECK(n.x() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("two perpendicular planes give exactly two regions") {
    Rng rng(7);
    std::vector<Vec3> pts, cols;
    // half a meter of clearance keeps kNN neighborhoods on one surface each,
    // so estimated normals are exact and the angle test decides the split
    add_plane(pts, cols, {0.5, 0, 0}, {2, 0, 0}, {0, 2, 0}, {0.5, 0.5, 0.5}, 400, rng);
    add_plane(pts, cols, {0, 0, 0.5}, {0, 2, 0}, {0, 0, 2}, {0.5, 0.5, 0.5}, 400, rng);
    auto part = partition(pts, cols, loose_cfg());
    CHECK(part.region_count == 2);
    CHECK(part.region_sizes[0] + part.region_sizes[1] == 800);
}

TEST_CASE("same geometry, two colors, two regions") {
    Rng rng(9);
    std::vector<Vec3> pts, cols;
    add_plane(pts, cols, {0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {0.9, 0.1, 0.1}, 300, rng);
    add_plane(pts, cols, {1.001, 0, 0}, {1, 0, 0}, {0, 2, 0}, {0.1, 0.1, 0.9}, 300, rng);
    auto part = partition(pts, cols, loose_cfg());
    CHECK(part.region_count == 2);
}

TEST_CASE("mutually distant points become singletons") {
    std::vector<Vec3> pts;
    std::vector<Vec3> cols;
    for (int i = 0; i < 8; ++i) {
        pts.emplace_back(i * 100.0, i * 37.0, i * 11.0);
        cols.emplace_back(0.5, 0.5, 0.5);
    }
    RegionGrowingConfig cfg;
    auto part = partition(pts, cols, cfg);
    CHECK(part.region_count == 8);
    for (auto s : part.region_sizes) CHECK(s == 1);
}

TEST_CASE("assignment ids are dense and sizes are consistent") {
    Rng rng(13);
    std::vector<Vec3> pts, cols;
    add_plane(pts, cols, {0, 0, 0}, {2, 0, 0}, {0, 2, 0}, {0.4, 0.4, 0.4}, 350, rng);
    add_plane(pts, cols, {0, 0, 0.03}, {0, 2, 0}, {0, 0, 2}, {0.4, 0.4, 0.4}, 350, rng);
    auto part = partition(pts, cols, loose_cfg());
    std::vector<std::size_t> counted(part.region_count, 0);
    for (auto id : part.assignment) {
        REQUIRE(id < part.region_count);
        ++counted[id];
    }
    CHECK(counted == part.region_sizes);
    std::set<std::size_t> used(part.assignment.begin(), part.assignment.end());
    CHECK(used.size() == part.region_count);
}

TEST_CASE("partition is deterministic") {
    Rng rng(17);
    std::vector<Vec3> pts, cols;
    add_plane(pts, cols, {0, 0, 0}, {2, 0, 0}, {0, 2, 0}, {0.4, 0.4, 0.4}, 300, rng);
    add_plane(pts, cols, {0, 0, 0.02}, {0, 2, 0}, {0, 0, 2}, {0.7, 0.4, 0.4}, 300, rng);
    auto a = partition(pts, cols, loose_cfg());
    auto b = partition(pts, cols, loose_cfg());
    CHECK(a.assignment == b.assignment);
    CHECK(a.region_count == b.region_count);
}

TEST_CASE("identity and label partitions") {
    auto ident = identity_partition(5);
    CHECK(ident.region_count == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(ident.assignment[i] == i);

    auto byl = partition_from_labels({3, 1, 3, 0, 1});
    CHECK(byl.region_count == 3);
    CHECK(byl.assignment[0] == byl.assignment[2]);
    CHECK(byl.assignment[1] == byl.assignment[4]);
    CHECK(byl.assignment[0] != byl.assignment[3]);
}

TEST_CASE("pixel partition reserves an unassigned region for invalid depth") {
    CameraView cam;
    cam.fx = cam.fy = 20.0;
    cam.width = 16;
    cam.height = 12;
    cam.cx = 7.5;
    cam.cy = 5.5;
    cam.world_to_camera = Mat4::Identity();
    cam.depth_map.assign(16 * 12, 2.0f);
    cam.color.assign(16 * 12 * 3, 0.5f);
    for (int w = 0; w < 16; ++w) cam.depth_map[w] = 0.0f; // top row invalid
    RegionGrowingConfig cfg;
    cfg.min_region_size = 4;
    auto part = partition_pixels(cam, cfg);
    REQUIRE(part.unassigned_region.has_value());
    CHECK(*part.unassigned_region == part.region_count - 1);
    for (int w = 0; w < 16; ++w) CHECK(part.assignment[w] == *part.unassigned_region);
    // the constant-depth plane away from the border collapses to one region
    CHECK(part.assignment[5 * 16 + 3] == part.assignment[8 * 16 + 12]);
}
