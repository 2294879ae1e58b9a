#pragma once

#include "wpcl/network.hpp"
#include "wpcl/regions.hpp"
#include "wpcl/scene.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wpcl {

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Class indices driving the height-slab label augmentation; unset entries
/// disable the corresponding slab rules.
struct SlabClasses {
    std::optional<std::size_t> floor;
    std::optional<std::size_t> ceiling;
    std::optional<std::size_t> wall;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 4;
    double learning_rate = 0.1;
    double sgd_momentum = 0.9;
    double weight_decay = 1e-4;
    double poly_power = 0.9;
    double tau = 0.07;
    double alpha = 0.05;
    double beta = 1.0;
    double eta = 0.8;
    double ema_momentum = 0.999;
    std::size_t pair_count = 512;
    double mix3d_prob = 0.5;
    double height_aug_prob = 0.5;
    std::uint64_t seed = 1;

    bool enable_cmg = true;
    bool enable_rpc = true;
    bool enable_mix3d = false;
    bool adaptive_threshold = true;
    bool normalize_contrastive_features = true;
    bool depth_test_correspondences = true;
    bool rpc_warmup = true; // keep consistency off early, ramp it in late
    bool rpc_2d = true;     // apply the consistency term to the 2D branch too
    enum class CountMode { PerSample, Running };
    CountMode count_mode = CountMode::PerSample;
    enum class PartitionMode { RegionGrowing, Identity, GroundTruth };
    PartitionMode partition_mode = PartitionMode::RegionGrowing;
    enum class PseudoLabelSource { Student, Teacher };
    PseudoLabelSource pseudo_source = PseudoLabelSource::Student;
    enum class PseudoLabelMode { Point, RegionVote };
    PseudoLabelMode pseudo_mode = PseudoLabelMode::RegionVote;

    double depth_tolerance = 0.05;
    RegionGrowingConfig region_cfg;
    SlabClasses slab_classes;
    std::size_t max_points_per_step = 0; // 0 = no subsampling
    double grad_clip = 1.0;              // global grad-norm cap, 0 = off

    void validate() const;
    std::string to_text() const;
    static TrainConfig from_text(const std::string& text);
};

struct BranchPair {
    BranchNetwork student;
    BranchNetwork teacher; // EMA shadow, never receives gradients
};

struct Model {
    BranchPair branch_3d;
    BranchPair branch_2d;
    std::size_t class_count = 0;

    std::vector<std::pair<std::string, Tensor>> named_parameters();
};

Model make_model(std::size_t class_count, Rng& rng);

/// theta_t <- m * theta_t + (1 - m) * theta_s, elementwise.
void ema_update(BranchNetwork& teacher, BranchNetwork& student, double m);

struct MixedSample {
    SceneSample mixed;
    // origin[i] = 0 for points from a, 1 for points from b; b empty when the
    // sample is unmixed.
    std::vector<std::uint8_t> origin;
    std::size_t count_a = 0;
    std::size_t count_b = 0;
};

/// Concatenates two scenes for the student; the scene tag is the elementwise
/// union. Teacher-side consumers use the origin map to route outputs back.
MixedSample mix3d(const SceneSample& a, const SceneSample& b);

/// Removes the densest 0.5 m boundary cell per selected slab and clears the
/// matching class from the scene tag.
SceneSample height_slab_augment(const SceneSample& sample, const SlabClasses& classes,
                                double per_slab_prob, Rng& rng);

struct TrainResult {
    Model model;
    std::vector<double> loss_curve;
    std::size_t steps = 0;
};

/// Per-scene cache of featurizations, partitions, and correspondences,
/// built once from the immutable dataset.
class SceneCache;

/// Only the partitioning / correspondence fields of cfg matter here; a cache
/// can be shared by runs that differ in optimizer settings or seeds.
std::shared_ptr<SceneCache> build_scene_cache(const std::vector<SceneSample>& dataset,
                                              const TrainConfig& cfg);

TrainResult train_stage1(const std::vector<SceneSample>& dataset, const TrainConfig& cfg,
                         const SceneCache* cache = nullptr);

std::vector<std::vector<std::size_t>> generate_pseudo_labels(Model& model,
                                                             const std::vector<SceneSample>& dataset,
                                                             const TrainConfig& cfg,
                                                             const SceneCache* cache = nullptr);

struct Stage2Result {
    BranchNetwork model;
    std::vector<double> loss_curve;
};

Stage2Result train_stage2(const std::vector<SceneSample>& dataset,
                          const std::vector<std::vector<std::size_t>>& pseudo_labels,
                          const TrainConfig& cfg);

std::vector<std::size_t> predict_labels(BranchNetwork& net, const SceneSample& scene);

void save_checkpoint(const std::filesystem::path& path, Model& model, const TrainConfig& cfg);
Model load_checkpoint(const std::filesystem::path& path, TrainConfig* cfg_out = nullptr);

void write_manifest(const std::filesystem::path& path, const TrainConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra = {});

} // namespace wpcl
