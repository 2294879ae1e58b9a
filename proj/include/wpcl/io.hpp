#pragma once

#include "wpcl/pipeline.hpp"
#include "wpcl/scene.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace wpcl {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SceneFileRefs {
    std::string id;
    std::string points_file;
    struct ViewRefs {
        std::string color_file;  // binary PPM (P6)
        std::string depth_file;  // WDEP raw float32
        std::string camera_file; // intrinsics + world-to-camera matrix
    };
    std::vector<ViewRefs> views;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> class_names;
    std::vector<SceneFileRefs> scenes;

    void validate() const;
    std::size_t class_count() const { return class_names.size(); }
};

// --- point files -----------------------------------------------------------
// Text: header "WPCL v1 points N has_labels{0|1}", then N lines
// "x y z r g b [label]". Binary twin: magic "WPCLB", float32 columns.
void save_points_text(const std::filesystem::path& path, const SceneSample& scene);
void save_points_binary(const std::filesystem::path& path, const SceneSample& scene);
/// Sniffs text vs binary from the magic; fills points/colors/gt of the scene.
void load_points(const std::filesystem::path& path, SceneSample& scene);

// --- view bundles ----------------------------------------------------------
void save_ppm(const std::filesystem::path& path, const std::vector<float>& rgb,
              int width, int height);
std::vector<float> load_ppm(const std::filesystem::path& path, int& width, int& height);
void save_depth(const std::filesystem::path& path, const std::vector<float>& depth,
                int width, int height);
std::vector<float> load_depth(const std::filesystem::path& path, int& width, int& height);
void save_camera(const std::filesystem::path& path, const CameraView& cam);
void load_camera(const std::filesystem::path& path, CameraView& cam);

// --- datasets --------------------------------------------------------------
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

SceneSample load_scene(const DatasetManifest& manifest, const std::string& id);
/// Loads every scene; strip_gt removes ground truth for training use.
std::vector<SceneSample> load_dataset(const DatasetManifest& manifest, bool strip_gt = false);

/// Writes the scene under root/<id>/ and returns its file references.
SceneFileRefs save_scene(const std::filesystem::path& root, const SceneSample& scene,
                         bool binary_points = false);

// --- pseudo-label files ----------------------------------------------------
void save_labels(const std::filesystem::path& path, const std::vector<std::size_t>& labels);
std::vector<std::size_t> load_labels(const std::filesystem::path& path);

// --- synthetic scenes ------------------------------------------------------
struct SyntheticSceneSpec {
    double room_x = 6.0, room_y = 5.0, room_z = 3.0; // meters
    std::size_t points_per_surface = 600;
    double color_noise = 0.05;
    double position_jitter = 0.005;
    std::size_t camera_count = 6;
    double camera_height = 1.5;
    int image_width = 32;
    int image_height = 24;
    double fov_deg = 75.0;
    double object_presence_prob = 0.5;
    double density_hotspot = 0.5; // share of each room surface packed into one patch
    std::size_t object_class_count = 5; // beyond floor/ceiling/wall
    bool imbalanced = false;            // inflate floor, starve the rarest object
    std::uint64_t seed = 1;

    void validate() const;
};

std::vector<std::string> synthetic_class_names(const SyntheticSceneSpec& spec);
SlabClasses synthetic_slab_classes();

SceneSample generate_synthetic(const SyntheticSceneSpec& spec, const std::string& id);

std::vector<SceneSample> generate_synthetic_dataset(const SyntheticSceneSpec& spec,
                                                    std::size_t scene_count);

} // namespace wpcl
