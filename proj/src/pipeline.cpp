#include "wpcl/pipeline.hpp"

#include "wpcl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace wpcl {

namespace {

std::string bool_str(bool b) { return b ? "1" : "0"; }

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw PipelineError("config: bad boolean for " + key + ": " + v);
}

} // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw PipelineError("config: batch_size must be positive");
    if (learning_rate < 0.0) throw PipelineError("config: negative learning rate");
    if (tau <= 0.0) throw PipelineError("config: tau must be positive");
    if (eta < 0.0 || eta > 1.0) throw PipelineError("config: eta must be in [0, 1]");
    if (ema_momentum < 0.0 || ema_momentum > 1.0)
        throw PipelineError("config: ema_momentum must be in [0, 1]");
    if (mix3d_prob < 0.0 || mix3d_prob > 1.0 || height_aug_prob < 0.0 || height_aug_prob > 1.0)
        throw PipelineError("config: probabilities must be in [0, 1]");
    if (alpha < 0.0 || beta < 0.0) throw PipelineError("config: negative loss coefficient");
    if (grad_clip < 0.0) throw PipelineError("config: negative grad_clip");
    region_cfg.validate();
}

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "epochs=" << epochs << "\n";
    os << "batch_size=" << batch_size << "\n";
    os << "learning_rate=" << learning_rate << "\n";
    os << "sgd_momentum=" << sgd_momentum << "\n";
    os << "weight_decay=" << weight_decay << "\n";
    os << "poly_power=" << poly_power << "\n";
    os << "tau=" << tau << "\n";
    os << "alpha=" << alpha << "\n";
    os << "beta=" << beta << "\n";
    os << "eta=" << eta << "\n";
    os << "ema_momentum=" << ema_momentum << "\n";
    os << "pair_count=" << pair_count << "\n";
    os << "mix3d_prob=" << mix3d_prob << "\n";
    os << "height_aug_prob=" << height_aug_prob << "\n";
    os << "seed=" << seed << "\n";
    os << "enable_cmg=" << bool_str(enable_cmg) << "\n";
    os << "enable_rpc=" << bool_str(enable_rpc) << "\n";
    os << "enable_mix3d=" << bool_str(enable_mix3d) << "\n";
    os << "adaptive_threshold=" << bool_str(adaptive_threshold) << "\n";
    os << "normalize_contrastive_features=" << bool_str(normalize_contrastive_features) << "\n";
    os << "depth_test_correspondences=" << bool_str(depth_test_correspondences) << "\n";
    os << "rpc_warmup=" << bool_str(rpc_warmup) << "\n";
    os << "rpc_2d=" << bool_str(rpc_2d) << "\n";
    os << "count_mode=" << (count_mode == CountMode::PerSample ? "per_sample" : "running") << "\n";
    os << "partition_mode="
       << (partition_mode == PartitionMode::RegionGrowing
               ? "region_growing"
               : partition_mode == PartitionMode::Identity ? "identity" : "ground_truth")
       << "\n";
    os << "pseudo_source=" << (pseudo_source == PseudoLabelSource::Student ? "student" : "teacher")
       << "\n";
    os << "pseudo_mode=" << (pseudo_mode == PseudoLabelMode::Point ? "point" : "region_vote")
       << "\n";
    os << "depth_tolerance=" << depth_tolerance << "\n";
    os << "knn=" << region_cfg.knn << "\n";
    os << "angle_threshold=" << region_cfg.angle_threshold_deg << "\n";
    os << "color_threshold=" << region_cfg.color_threshold << "\n";
    os << "min_region_size=" << region_cfg.min_region_size << "\n";
    os << "seed_order="
       << (region_cfg.seed_order == RegionGrowingConfig::SeedOrder::CurvatureAscending
               ? "curvature"
               : "index")
       << "\n";
    os << "floor_class=" << (slab_classes.floor ? static_cast<long>(*slab_classes.floor) : -1)
       << "\n";
    os << "ceiling_class="
       << (slab_classes.ceiling ? static_cast<long>(*slab_classes.ceiling) : -1) << "\n";
    os << "wall_class=" << (slab_classes.wall ? static_cast<long>(*slab_classes.wall) : -1)
       << "\n";
    os << "max_points_per_step=" << max_points_per_step << "\n";
    os << "grad_clip=" << grad_clip << "\n";
    return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw PipelineError("config line " + std::to_string(line_no) + ": missing '='");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        auto as_long = [&]() {
            try {
                std::size_t used = 0;
                const long x = std::stol(val, &used);
                if (used != val.size()) throw std::invalid_argument(val);
                return x;
            } catch (const std::exception&) {
                throw PipelineError("config: bad integer for '" + key + "': " + val);
            }
        };
        auto as_double = [&]() {
            try {
                std::size_t used = 0;
                const double x = std::stod(val, &used);
                if (used != val.size()) throw std::invalid_argument(val);
                return x;
            } catch (const std::exception&) {
                throw PipelineError("config: bad number for '" + key + "': " + val);
            }
        };
        auto slab = [&](const std::string&) -> std::optional<std::size_t> {
            const long x = as_long();
            if (x < 0) return std::nullopt;
            return static_cast<std::size_t>(x);
        };
        if (key == "epochs") cfg.epochs = as_long();
        else if (key == "batch_size") cfg.batch_size = as_long();
        else if (key == "learning_rate") cfg.learning_rate = as_double();
        else if (key == "sgd_momentum") cfg.sgd_momentum = as_double();
        else if (key == "weight_decay") cfg.weight_decay = as_double();
        else if (key == "poly_power") cfg.poly_power = as_double();
        else if (key == "tau") cfg.tau = as_double();
        else if (key == "alpha") cfg.alpha = as_double();
        else if (key == "beta") cfg.beta = as_double();
        else if (key == "eta") cfg.eta = as_double();
        else if (key == "ema_momentum") cfg.ema_momentum = as_double();
        else if (key == "pair_count") cfg.pair_count = as_long();
        else if (key == "mix3d_prob") cfg.mix3d_prob = as_double();
        else if (key == "height_aug_prob") cfg.height_aug_prob = as_double();
        else if (key == "seed") {
            try {
                cfg.seed = std::stoull(val);
            } catch (const std::exception&) {
                throw PipelineError("config: bad integer for 'seed': " + val);
            }
        }
        else if (key == "enable_cmg") cfg.enable_cmg = parse_bool(val, key);
        else if (key == "enable_rpc") cfg.enable_rpc = parse_bool(val, key);
        else if (key == "enable_mix3d") cfg.enable_mix3d = parse_bool(val, key);
        else if (key == "adaptive_threshold") cfg.adaptive_threshold = parse_bool(val, key);
        else if (key == "normalize_contrastive_features")
            cfg.normalize_contrastive_features = parse_bool(val, key);
        else if (key == "depth_test_correspondences")
            cfg.depth_test_correspondences = parse_bool(val, key);
        else if (key == "rpc_warmup") cfg.rpc_warmup = parse_bool(val, key);
        else if (key == "count_mode") {
            if (val == "per_sample") cfg.count_mode = CountMode::PerSample;
            else if (val == "running") cfg.count_mode = CountMode::Running;
            else throw PipelineError("config: unknown count_mode " + val);
        } else if (key == "partition_mode") {
            if (val == "region_growing") cfg.partition_mode = PartitionMode::RegionGrowing;
            else if (val == "identity") cfg.partition_mode = PartitionMode::Identity;
            else if (val == "ground_truth") cfg.partition_mode = PartitionMode::GroundTruth;
            else throw PipelineError("config: unknown partition_mode " + val);
        } else if (key == "pseudo_source") {
            if (val == "student") cfg.pseudo_source = PseudoLabelSource::Student;
            else if (val == "teacher") cfg.pseudo_source = PseudoLabelSource::Teacher;
            else throw PipelineError("config: unknown pseudo_source " + val);
        } else if (key == "pseudo_mode") {
            if (val == "point") cfg.pseudo_mode = PseudoLabelMode::Point;
            else if (val == "region_vote") cfg.pseudo_mode = PseudoLabelMode::RegionVote;
            else throw PipelineError("config: unknown pseudo_mode " + val);
        } else if (key == "depth_tolerance") cfg.depth_tolerance = as_double();
        else if (key == "knn") cfg.region_cfg.knn = as_long();
        else if (key == "angle_threshold") cfg.region_cfg.angle_threshold_deg = as_double();
        else if (key == "color_threshold") cfg.region_cfg.color_threshold = as_double();
        else if (key == "min_region_size") cfg.region_cfg.min_region_size = as_long();
        else if (key == "seed_order") {
            if (val == "curvature")
                cfg.region_cfg.seed_order = RegionGrowingConfig::SeedOrder::CurvatureAscending;
            else if (val == "index")
                cfg.region_cfg.seed_order = RegionGrowingConfig::SeedOrder::Index;
            else throw PipelineError("config: unknown seed_order " + val);
        } else if (key == "floor_class") cfg.slab_classes.floor = slab(val);
        else if (key == "ceiling_class") cfg.slab_classes.ceiling = slab(val);
        else if (key == "wall_class") cfg.slab_classes.wall = slab(val);
        else if (key == "max_points_per_step") cfg.max_points_per_step = as_long();
        else if (key == "grad_clip") cfg.grad_clip = as_double();
        else if (key == "rpc_2d") cfg.rpc_2d = parse_bool(val, key);
        else throw PipelineError("config: unknown key '" + key + "'");
    }
    return cfg;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& p : branch_3d.student.named_parameters("3d.student")) out.push_back(p);
    for (auto& p : branch_3d.teacher.named_parameters("3d.teacher")) out.push_back(p);
    for (auto& p : branch_2d.student.named_parameters("2d.student")) out.push_back(p);
    for (auto& p : branch_2d.teacher.named_parameters("2d.teacher")) out.push_back(p);
    return out;
}

Model make_model(std::size_t class_count, Rng& rng) {
    Model model;
    model.class_count = class_count;
    model.branch_3d.student = make_point_network(class_count, rng);
    model.branch_2d.student = make_image_network(class_count, rng);
    // Teachers start as exact copies and never receive gradients.
    Rng dummy(0);
    model.branch_3d.teacher = make_point_network(class_count, dummy);
    model.branch_2d.teacher = make_image_network(class_count, dummy);
    ema_update(model.branch_3d.teacher, model.branch_3d.student, 0.0);
    ema_update(model.branch_2d.teacher, model.branch_2d.student, 0.0);
    model.branch_3d.teacher.set_requires_grad(false);
    model.branch_2d.teacher.set_requires_grad(false);
    return model;
}

void ema_update(BranchNetwork& teacher, BranchNetwork& student, double m) {
    auto tp = teacher.parameters();
    auto sp = student.parameters();
    if (tp.size() != sp.size()) throw PipelineError("ema_update: parameter count mismatch");
    for (std::size_t i = 0; i < tp.size(); ++i) {
        if (tp[i]->shape != sp[i]->shape) throw PipelineError("ema_update: shape mismatch");
        for (std::size_t j = 0; j < tp[i]->numel(); ++j)
            tp[i]->data[j] = m * tp[i]->data[j] + (1.0 - m) * sp[i]->data[j];
    }
}

MixedSample mix3d(const SceneSample& a, const SceneSample& b) {
    MixedSample out;
    out.mixed.id = a.id + "+" + b.id;
    out.mixed.points = a.points;
    out.mixed.points.insert(out.mixed.points.end(), b.points.begin(), b.points.end());
    out.mixed.colors = a.colors;
    out.mixed.colors.insert(out.mixed.colors.end(), b.colors.begin(), b.colors.end());
    out.mixed.scene_label = SceneLabel::union_of(a.scene_label, b.scene_label);
    out.mixed.views = a.views;
    out.origin.assign(a.points.size(), 0);
    out.origin.insert(out.origin.end(), b.points.size(), 1);
    out.count_a = a.points.size();
    out.count_b = b.points.size();
    return out;
}

namespace {

struct SlabRemoval {
    std::vector<std::size_t> kept;
    SceneLabel label;
};

// Axis-aligned boundary slabs, 0.5 m thick, 0.5 m cells along the slab.
SlabRemoval slab_removal(const SceneSample& sample, const SlabClasses& classes,
                         double per_slab_prob, Rng& rng) {
    constexpr double kSlab = 0.5;
    const std::size_t n = sample.points.size();
    SlabRemoval out;
    out.label = sample.scene_label;
    Vec3 lo = sample.points[0], hi = sample.points[0];
    for (const auto& p : sample.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    std::vector<std::uint8_t> removed(n, 0);

    // axis: 0=x,1=y,2=z; side: false = min side, true = max side.
    auto apply = [&](int axis, bool max_side, std::optional<std::size_t> cls) {
        if (!cls || !rng.bernoulli(per_slab_prob)) return;
        const double bound = max_side ? hi[axis] - kSlab : lo[axis] + kSlab;
        // In-plane axes for the 0.5 m cell grid.
        const int u = (axis + 1) % 3, v = (axis + 2) % 3;
        std::map<std::pair<long, long>, std::vector<std::size_t>> cells;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = sample.points[i][axis];
            if (max_side ? a < bound : a > bound) continue;
            const long cu = static_cast<long>(std::floor((sample.points[i][u] - lo[u]) / kSlab));
            const long cv = static_cast<long>(std::floor((sample.points[i][v] - lo[v]) / kSlab));
            cells[{cu, cv}].push_back(i);
        }
        if (cells.empty()) return; // empty slab: nothing changes
        const auto densest = std::max_element(
            cells.begin(), cells.end(),
            [](const auto& a, const auto& b) { return a.second.size() < b.second.size(); });
        for (std::size_t i : densest->second) removed[i] = 1;
        out.label.y[*cls] = 0;
    };

    apply(2, false, classes.floor);
    apply(2, true, classes.ceiling);
    apply(0, false, classes.wall);
    apply(0, true, classes.wall);
    apply(1, false, classes.wall);
    apply(1, true, classes.wall);

    for (std::size_t i = 0; i < n; ++i)
        if (!removed[i]) out.kept.push_back(i);
    if (out.kept.empty()) { // degenerate: removal emptied the scene, keep it intact
        out.kept.resize(n);
        std::iota(out.kept.begin(), out.kept.end(), std::size_t{0});
        out.label = sample.scene_label;
    }
    bool any = false;
    for (std::uint8_t y : out.label.y) any = any || y;
    if (!any) out.label = sample.scene_label; // tag must keep one positive class
    return out;
}

} // namespace

SceneSample height_slab_augment(const SceneSample& sample, const SlabClasses& classes,
                                double per_slab_prob, Rng& rng) {
    const SlabRemoval removal = slab_removal(sample, classes, per_slab_prob, rng);
    SceneSample out;
    out.id = sample.id;
    out.views = sample.views;
    out.scene_label = removal.label;
    out.points.reserve(removal.kept.size());
    out.colors.reserve(removal.kept.size());
    for (std::size_t i : removal.kept) {
        out.points.push_back(sample.points[i]);
        out.colors.push_back(sample.colors[i]);
        if (!sample.gt_labels.empty()) out.gt_labels.push_back(sample.gt_labels[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scene cache

class SceneCache {
public:
    struct Entry {
        Tensor point_features; // n x 12
        RegionPartition partition;
        CorrespondenceSet correspondences;
        Tensor pixel_features;               // total_pixels x 8 (all views)
        std::vector<std::size_t> view_offsets; // flat offset per view
        RegionPartition pixel_partition;     // concatenated over views
        std::vector<std::uint8_t> pixel_excluded;
        std::size_t total_pixels = 0;
    };

    SceneCache(const std::vector<SceneSample>& dataset, const TrainConfig& cfg) {
        entries_.resize(dataset.size());
        for (std::size_t s = 0; s < dataset.size(); ++s) {
            const SceneSample& scene = dataset[s];
            Entry& e = entries_[s];
            e.point_features = point_input_features(scene.points, scene.colors);
            switch (cfg.partition_mode) {
            case TrainConfig::PartitionMode::RegionGrowing:
                e.partition = partition(scene.points, scene.colors, cfg.region_cfg);
                break;
            case TrainConfig::PartitionMode::Identity:
                e.partition = identity_partition(scene.points.size());
                break;
            case TrainConfig::PartitionMode::GroundTruth:
                throw PipelineError(
                    "ground-truth partitions are an evaluation-only diagnostic");
            }
            if (!scene.views.empty()) {
                e.correspondences = build_correspondences(scene.points, scene.views,
                                                          cfg.depth_tolerance,
                                                          cfg.depth_test_correspondences);
                e.correspondences.sample_id = scene.id;
                // Concatenate per-view pixel features and partitions.
                std::size_t total = 0;
                for (const auto& v : scene.views)
                    total += static_cast<std::size_t>(v.width) * v.height;
                e.total_pixels = total;
                e.pixel_features = make_tensor({total, 8});
                e.pixel_excluded.assign(total, 0);
                e.pixel_partition.assignment.assign(total, 0);
                std::size_t offset = 0, region_base = 0;
                for (const auto& view : scene.views) {
                    e.view_offsets.push_back(offset);
                    const std::size_t px = static_cast<std::size_t>(view.width) * view.height;
                    Tensor feats = pixel_input_features(view);
                    std::copy(feats->data.begin(), feats->data.end(),
                              e.pixel_features->data.begin() + offset * 8);
                    RegionPartition part = cfg.partition_mode == TrainConfig::PartitionMode::Identity
                                               ? identity_partition(px)
                                               : partition_pixels(view, cfg.region_cfg);
                    for (std::size_t i = 0; i < px; ++i) {
                        e.pixel_partition.assignment[offset + i] =
                            region_base + part.assignment[i];
                        if (part.unassigned_region &&
                            part.assignment[i] == *part.unassigned_region)
                            e.pixel_excluded[offset + i] = 1;
                    }
                    region_base += part.region_count;
                    offset += px;
                }
                e.pixel_partition.region_count = region_base;
                e.pixel_partition.region_sizes.assign(region_base, 0);
                for (std::size_t id : e.pixel_partition.assignment)
                    e.pixel_partition.region_sizes[id]++;
            }
        }
    }

    const Entry& at(std::size_t s) const { return entries_[s]; }

private:
    std::vector<Entry> entries_;
};

std::shared_ptr<SceneCache> build_scene_cache(const std::vector<SceneSample>& dataset,
                                              const TrainConfig& cfg) {
    return std::make_shared<SceneCache>(dataset, cfg);
}

namespace {

// Restriction of a cached partition to a surviving subset of points, with
// compacted region ids.
RegionPartition restrict_partition(const RegionPartition& part,
                                   const std::vector<std::size_t>& kept) {
    RegionPartition out;
    out.assignment.resize(kept.size());
    std::unordered_map<std::size_t, std::size_t> remap;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const std::size_t old_id = part.assignment[kept[i]];
        auto [it, inserted] = remap.emplace(old_id, remap.size());
        out.assignment[i] = it->second;
    }
    out.region_count = remap.size();
    out.region_sizes.assign(out.region_count, 0);
    for (std::size_t id : out.assignment) out.region_sizes[id]++;
    return out;
}

Tensor gather_rows_const(const Tensor& src, const std::vector<std::size_t>& kept) {
    const std::size_t c = src->cols();
    Tensor out = make_tensor({kept.size(), c});
    for (std::size_t i = 0; i < kept.size(); ++i)
        std::copy_n(src->data.data() + kept[i] * c, c, out->data.data() + i * c);
    return out;
}

struct SgdState {
    std::unordered_map<TensorNode*, std::vector<double>> velocity;

    void step(const std::vector<Tensor>& params, double lr, double momentum,
              double weight_decay, double grad_scale, double grad_clip) {
        if (grad_clip > 0.0) {
            double sq = 0.0;
            for (const Tensor& p : params)
                for (std::size_t i = 0; i < p->numel(); ++i) {
                    const double g = p->grad[i] * grad_scale;
                    sq += g * g;
                }
            const double norm = std::sqrt(sq);
            if (norm > grad_clip) grad_scale *= grad_clip / norm;
        }
        for (const Tensor& p : params) {
            auto& vel = velocity[p.get()];
            if (vel.empty()) vel.assign(p->numel(), 0.0);
            for (std::size_t i = 0; i < p->numel(); ++i) {
                const double g = p->grad[i] * grad_scale + weight_decay * p->data[i];
                vel[i] = momentum * vel[i] + g;
                p->data[i] -= lr * vel[i];
            }
            p->zero_grad();
        }
    }
};

struct TrainerState {
    std::vector<double> running_q_3d;
    std::vector<double> running_q_2d;
};

// One origin scene's contribution to the RPC guidance of a (possibly mixed)
// student sample.
struct OriginView {
    std::size_t scene_index;
    std::vector<std::size_t> kept; // indices into the original cloud
    std::size_t mixed_offset;      // row offset in the student input
};

} // namespace

TrainResult train_stage1(const std::vector<SceneSample>& dataset, const TrainConfig& cfg,
                         const SceneCache* cache) {
    cfg.validate();
    if (dataset.empty()) throw PipelineError("train_stage1: empty dataset");
    for (const auto& s : dataset) s.validate();
    const std::size_t class_count = dataset[0].scene_label.class_count();

    Rng rng(cfg.seed);
    TrainResult result;
    result.model = make_model(class_count, rng);
    Model& model = result.model;

    std::shared_ptr<SceneCache> owned;
    if (!cache) {
        owned = build_scene_cache(dataset, cfg);
        cache = owned.get();
    }
    SgdState sgd;
    TrainerState state;
    state.running_q_3d.assign(class_count, 0.0);
    state.running_q_2d.assign(class_count, 0.0);

    const std::size_t total_steps = cfg.epochs * dataset.size();
    const std::size_t total_opt_steps =
        std::max<std::size_t>(1, (total_steps + cfg.batch_size - 1) / cfg.batch_size);
    std::size_t opt_step = 0;
    std::size_t samples_in_batch = 0;

    std::vector<Tensor> student_params = model.branch_3d.student.parameters();
    {
        auto p2 = model.branch_2d.student.parameters();
        student_params.insert(student_params.end(), p2.begin(), p2.end());
    }

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const std::size_t step = epoch * dataset.size() + oi;
            const std::size_t a_idx = order[oi];
            const SceneSample& scene_a = dataset[a_idx];

            // Height-slab augmentation restricts the cloud to kept indices.
            SlabRemoval rem_a = slab_removal(scene_a, cfg.slab_classes, cfg.height_aug_prob, rng);
            if (cfg.max_points_per_step > 0 && rem_a.kept.size() > cfg.max_points_per_step) {
                Rng sub(rng.fork());
                auto pick = sub.sample_without_replacement(rem_a.kept.size(),
                                                           cfg.max_points_per_step);
                std::vector<std::size_t> reduced;
                reduced.reserve(pick.size());
                for (std::size_t i : pick) reduced.push_back(rem_a.kept[i]);
                rem_a.kept = std::move(reduced);
            }

            std::vector<OriginView> origins;
            origins.push_back({a_idx, rem_a.kept, 0});
            SceneLabel label_3d = rem_a.label;

            bool mixed = cfg.enable_mix3d && dataset.size() > 1 && rng.bernoulli(cfg.mix3d_prob);
            std::size_t b_idx = a_idx;
            SlabRemoval rem_b;
            if (mixed) {
                do {
                    b_idx = rng.uniform_index(dataset.size());
                } while (b_idx == a_idx);
                rem_b = slab_removal(dataset[b_idx], cfg.slab_classes, cfg.height_aug_prob, rng);
                origins.push_back({b_idx, rem_b.kept, rem_a.kept.size()});
                label_3d = SceneLabel::union_of(label_3d, rem_b.label);
            }

            Tape tape;
            try {
                // ---- student 3D forward over the (possibly mixed) cloud
                Tensor input_3d = gather_rows_const(cache->at(a_idx).point_features, rem_a.kept);
                if (mixed) {
                    Tensor input_b =
                        gather_rows_const(cache->at(b_idx).point_features, rem_b.kept);
                    Tensor both = make_tensor({input_3d->rows() + input_b->rows(), 12});
                    std::copy(input_3d->data.begin(), input_3d->data.end(), both->data.begin());
                    std::copy(input_b->data.begin(), input_b->data.end(),
                              both->data.begin() + input_3d->numel());
                    input_3d = both;
                }
                const std::size_t n_mixed = input_3d->rows();
                BranchOutput student_3d = forward_branch(tape, model.branch_3d.student, input_3d);

                LossParts parts;
                parts.cls_3d = scene_classification_loss(tape, student_3d.logits, label_3d);
                parts.cls_2d = make_scalar(0.0);
                parts.con_3d = make_scalar(0.0);
                parts.con_2d = make_scalar(0.0);
                parts.rpc_3d = make_scalar(0.0);
                parts.rpc_2d = make_scalar(0.0);

                // ---- 2D branch over the primary scene's views
                const auto& entry_a = cache->at(a_idx);
                BranchOutput student_2d;
                const bool has_views = entry_a.total_pixels > 0;
                if (has_views) {
                    student_2d =
                        forward_branch(tape, model.branch_2d.student, entry_a.pixel_features);
                    // Views are not slab-augmented, so the 2D branch keeps the
                    // original tag.
                    parts.cls_2d =
                        scene_classification_loss(tape, student_2d.logits, scene_a.scene_label);
                }

                // ---- cross-modal feature guidance over sampled pairs
                if (cfg.enable_cmg && has_views && !entry_a.correspondences.entries.empty()) {
                    // Restrict correspondences to surviving points of scene a.
                    std::vector<std::size_t> pos_of(scene_a.points.size(),
                                                    static_cast<std::size_t>(-1));
                    for (std::size_t i = 0; i < rem_a.kept.size(); ++i)
                        pos_of[rem_a.kept[i]] = i;
                    CorrespondenceSet alive;
                    for (const auto& c : entry_a.correspondences.entries)
                        if (pos_of[c.point_index] != static_cast<std::size_t>(-1))
                            alive.entries.push_back(c);
                    CorrespondenceSet pairs = sample_pairs(alive, cfg.pair_count, rng.fork());
                    if (pairs.entries.size() >= 2) {
                        std::vector<std::size_t> point_rows, pixel_rows;
                        for (const auto& c : pairs.entries) {
                            point_rows.push_back(pos_of[c.point_index]);
                            const auto& view = scene_a.views[c.view_index];
                            pixel_rows.push_back(entry_a.view_offsets[c.view_index] +
                                                 static_cast<std::size_t>(c.h) * view.width +
                                                 c.w);
                        }
                        Tensor f3d = tape.gather_rows(student_3d.features, point_rows);
                        Tensor f2d = tape.gather_rows(student_2d.features, pixel_rows);
                        Tensor p3d = tape.add_row(
                            tape.matmul(f3d, model.branch_3d.student.projection.weight),
                            model.branch_3d.student.projection.bias);
                        Tensor p2d = tape.add_row(
                            tape.matmul(f2d, model.branch_2d.student.projection.weight),
                            model.branch_2d.student.projection.bias);
                        if (cfg.normalize_contrastive_features) {
                            Tensor src3 = tape.l2_normalize_rows(p3d);
                            Tensor tgt2 = tape.stop_gradient(tape.l2_normalize_rows(f2d));
                            Tensor src2 = tape.l2_normalize_rows(p2d);
                            Tensor tgt3 = tape.stop_gradient(tape.l2_normalize_rows(f3d));
                            parts.con_3d = contrastive_distillation(tape, src3, tgt2, cfg.tau);
                            parts.con_2d = contrastive_distillation(tape, src2, tgt3, cfg.tau);
                        } else {
                            auto raw_nce = [&](const Tensor& src, const Tensor& tgt) {
                                Tensor tgt_c = tape.stop_gradient(tgt);
                                const std::size_t g = src->rows(), d = src->cols();
                                Tensor tr = make_tensor({d, g});
                                for (std::size_t i = 0; i < g; ++i)
                                    for (std::size_t j = 0; j < d; ++j)
                                        tr->data[j * g + i] = tgt_c->data[i * d + j];
                                return tape.info_nce(
                                    tape.scale(tape.matmul(src, tr), 1.0 / cfg.tau));
                            };
                            parts.con_3d = raw_nce(p3d, f2d);
                            parts.con_2d = raw_nce(p2d, f3d);
                        }
                    }
                }

                // ---- region-point semantic consistency
                double rpc_ramp = 1.0;
                if (cfg.rpc_warmup) {
                    // Consistency targets are noise until the classifiers have
                    // settled, so the term stays off for most of the run and
                    // ramps in over the final stretch as a polishing phase.
                    const double t = total_steps > 1
                                         ? static_cast<double>(step) / (total_steps - 1)
                                         : 1.0;
                    rpc_ramp = std::max(0.0, (t - 0.7) / 0.3);
                }
                if (cfg.enable_rpc && rpc_ramp > 0.0) {
                    // 3D: teacher sees each origin scene separately.
                    RegionalGuidance guidance_3d;
                    guidance_3d.class_count = class_count;
                    guidance_3d.point_label.assign(n_mixed, 0);
                    guidance_3d.point_conf.assign(n_mixed, 0.0);
                    guidance_3d.excluded.assign(n_mixed, 0);
                    for (const auto& origin : origins) {
                        Tensor t_in =
                            gather_rows_const(cache->at(origin.scene_index).point_features,
                                              origin.kept);
                        Tape teacher_tape;
                        BranchOutput teacher_out =
                            forward_branch(teacher_tape, model.branch_3d.teacher, t_in);
                        RegionPartition part = restrict_partition(
                            cache->at(origin.scene_index).partition, origin.kept);
                        RegionalGuidance g = regional_vote(teacher_out.probs->data,
                                                           origin.kept.size(), class_count,
                                                           part);
                        for (std::size_t i = 0; i < origin.kept.size(); ++i) {
                            guidance_3d.point_label[origin.mixed_offset + i] = g.point_label[i];
                            guidance_3d.point_conf[origin.mixed_offset + i] = g.point_conf[i];
                        }
                    }
                    const std::vector<double>* prior =
                        cfg.count_mode == TrainConfig::CountMode::Running ? &state.running_q_3d
                                                                          : nullptr;
                    ThresholdResult thr =
                        cfg.adaptive_threshold
                            ? compute_threshold(guidance_3d, cfg.eta, prior)
                            : [&] {
                                  ThresholdResult fixed =
                                      compute_threshold(guidance_3d, cfg.eta, prior);
                                  std::fill(fixed.threshold.thresholds.begin(),
                                            fixed.threshold.thresholds.end(), cfg.eta);
                                  for (std::size_t p = 0; p < n_mixed; ++p)
                                      fixed.mask.keep[p] =
                                          guidance_3d.point_conf[p] > cfg.eta ? 1 : 0;
                                  return fixed;
                              }();
                    if (cfg.count_mode == TrainConfig::CountMode::Running)
                        state.running_q_3d = thr.threshold.counts;
                    Tensor rpc3 =
                        consistency_loss(tape, student_3d.probs, guidance_3d, thr.mask);
                    parts.rpc_3d = tape.scale(rpc3, rpc_ramp);

                    // 2D: teacher over the primary scene's pixels.
                    if (has_views && cfg.rpc_2d) {
                        Tape teacher_tape;
                        BranchOutput teacher_2d = forward_branch(
                            teacher_tape, model.branch_2d.teacher, entry_a.pixel_features);
                        RegionalGuidance g2 =
                            regional_vote(teacher_2d.probs->data, entry_a.total_pixels,
                                          class_count, entry_a.pixel_partition);
                        g2.excluded = entry_a.pixel_excluded;
                        const std::vector<double>* prior2 =
                            cfg.count_mode == TrainConfig::CountMode::Running
                                ? &state.running_q_2d
                                : nullptr;
                        ThresholdResult thr2 =
                            cfg.adaptive_threshold
                                ? compute_threshold(g2, cfg.eta, prior2)
                                : [&] {
                                      ThresholdResult fixed =
                                          compute_threshold(g2, cfg.eta, prior2);
                                      std::fill(fixed.threshold.thresholds.begin(),
                                                fixed.threshold.thresholds.end(), cfg.eta);
                                      for (std::size_t p = 0; p < entry_a.total_pixels; ++p)
                                          fixed.mask.keep[p] =
                                              (!g2.excluded[p] && g2.point_conf[p] > cfg.eta)
                                                  ? 1
                                                  : 0;
                                      return fixed;
                                  }();
                        if (cfg.count_mode == TrainConfig::CountMode::Running)
                            state.running_q_2d = thr2.threshold.counts;
                        Tensor rpc2 =
                            consistency_loss(tape, student_2d.probs, g2, thr2.mask);
                        parts.rpc_2d = tape.scale(rpc2, rpc_ramp);
                    }
                }

                Tensor loss = total_loss(tape, parts, {cfg.alpha, cfg.beta});
                result.loss_curve.push_back(loss->data[0]);
                tape.backward(loss);
            } catch (const TensorError& err) {
                throw PipelineError(std::string("training aborted at step ") +
                                    std::to_string(step) + " (scene " + scene_a.id +
                                    "): " + err.what());
            }

            ++samples_in_batch;
            ++result.steps;
            const bool last_sample = epoch + 1 == cfg.epochs && oi + 1 == order.size();
            if (samples_in_batch == cfg.batch_size || last_sample) {
                const double t =
                    static_cast<double>(opt_step) / static_cast<double>(total_opt_steps);
                const double lr =
                    cfg.learning_rate * std::pow(std::max(0.0, 1.0 - t), cfg.poly_power);
                sgd.step(student_params, lr, cfg.sgd_momentum, cfg.weight_decay,
                         1.0 / static_cast<double>(samples_in_batch), cfg.grad_clip);
                ema_update(model.branch_3d.teacher, model.branch_3d.student, cfg.ema_momentum);
                ema_update(model.branch_2d.teacher, model.branch_2d.student, cfg.ema_momentum);
                ++opt_step;
                samples_in_batch = 0;
                // Teachers must stay outside every gradient accumulator.
                for (const Tensor& p : model.branch_3d.teacher.parameters())
                    if (!p->grad.empty()) throw PipelineError("teacher gained a gradient");
                for (const Tensor& p : model.branch_2d.teacher.parameters())
                    if (!p->grad.empty()) throw PipelineError("teacher gained a gradient");
            }
        }
    }
    return result;
}

std::vector<std::vector<std::size_t>>
generate_pseudo_labels(Model& model, const std::vector<SceneSample>& dataset,
                       const TrainConfig& cfg, const SceneCache* cache) {
    std::vector<std::vector<std::size_t>> out;
    out.reserve(dataset.size());
    BranchNetwork& net = cfg.pseudo_source == TrainConfig::PseudoLabelSource::Student
                             ? model.branch_3d.student
                             : model.branch_3d.teacher;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
        const SceneSample& scene = dataset[s];
        Tensor input = cache ? cache->at(s).point_features
                             : point_input_features(scene.points, scene.colors);
        Tape tape;
        BranchOutput fwd = forward_branch(tape, net, input);
        const std::size_t n = scene.points.size(), c = model.class_count;
        std::vector<std::size_t> labels(n, 0);
        if (cfg.pseudo_mode == TrainConfig::PseudoLabelMode::RegionVote) {
            RegionPartition part =
                cfg.partition_mode == TrainConfig::PartitionMode::Identity
                    ? identity_partition(n)
                    : cache ? cache->at(s).partition
                            : partition(scene.points, scene.colors, cfg.region_cfg);
            RegionalGuidance g = regional_vote(fwd.probs->data, n, c, part);
            labels = g.point_label;
        } else {
            for (std::size_t p = 0; p < n; ++p) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < c; ++k)
                    if (fwd.probs->data[p * c + k] > fwd.probs->data[p * c + best]) best = k;
                labels[p] = best;
            }
        }
        out.push_back(std::move(labels));
    }
    return out;
}

Stage2Result train_stage2(const std::vector<SceneSample>& dataset,
                          const std::vector<std::vector<std::size_t>>& pseudo_labels,
                          const TrainConfig& cfg) {
    cfg.validate();
    if (pseudo_labels.size() != dataset.size())
        throw PipelineError("train_stage2: pseudo-labels do not cover the dataset");
    const std::size_t class_count = dataset[0].scene_label.class_count();
    Rng rng(cfg.seed);
    Stage2Result result;
    result.model = make_point_network(class_count, rng);

    std::vector<Tensor> features;
    for (const auto& scene : dataset)
        features.push_back(point_input_features(scene.points, scene.colors));

    SgdState sgd;
    auto params = result.model.parameters();
    const std::size_t total_steps = cfg.epochs * dataset.size();
    const std::size_t total_opt_steps =
        std::max<std::size_t>(1, (total_steps + cfg.batch_size - 1) / cfg.batch_size);
    std::size_t opt_step = 0, samples_in_batch = 0, step = 0;

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t oi = 0; oi < order.size(); ++oi, ++step) {
            const std::size_t s = order[oi];
            Tape tape;
            BranchOutput fwd = forward_branch(tape, result.model, features[s]);
            Tensor loss = supervised_ce(tape, fwd.probs, pseudo_labels[s]);
            result.loss_curve.push_back(loss->data[0]);
            tape.backward(loss);
            ++samples_in_batch;
            const bool last = epoch + 1 == cfg.epochs && oi + 1 == order.size();
            if (samples_in_batch == cfg.batch_size || last) {
                const double t =
                    static_cast<double>(opt_step) / static_cast<double>(total_opt_steps);
                const double lr =
                    cfg.learning_rate * std::pow(std::max(0.0, 1.0 - t), cfg.poly_power);
                sgd.step(params, lr, cfg.sgd_momentum, cfg.weight_decay,
                         1.0 / static_cast<double>(samples_in_batch), cfg.grad_clip);
                ++opt_step;
                samples_in_batch = 0;
            }
        }
    }
    return result;
}

std::vector<std::size_t> predict_labels(BranchNetwork& net, const SceneSample& scene) {
    Tensor input = point_input_features(scene.points, scene.colors);
    Tape tape;
    BranchOutput fwd = forward_branch(tape, net, input);
    const std::size_t n = scene.points.size(), c = net.class_count;
    std::vector<std::size_t> labels(n, 0);
    for (std::size_t p = 0; p < n; ++p) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k)
            if (fwd.probs->data[p * c + k] > fwd.probs->data[p * c + best]) best = k;
        labels[p] = best;
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Checkpoints and manifests

namespace {

template <typename T>
void write_le(std::ostream& os, T value) {
    // Little-endian host assumed (x86/aarch64); bytes written in order.
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

constexpr char kCheckpointMagic[4] = {'W', 'P', 'C', 'K'};

} // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, const TrainConfig& cfg) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw PipelineError("cannot open checkpoint for writing: " + tmp.string());
        os.write(kCheckpointMagic, 4);
        write_le<std::uint32_t>(os, 1); // version
        const std::string cfg_text = cfg.to_text();
        write_le<std::uint64_t>(os, cfg_text.size());
        os.write(cfg_text.data(), cfg_text.size());
        auto params = model.named_parameters();
        write_le<std::uint64_t>(os, params.size());
        for (auto& [name, t] : params) {
            write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), name.size());
            write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t->shape.size()));
            for (std::size_t d : t->shape) write_le<std::uint64_t>(os, d);
            os.write(reinterpret_cast<const char*>(t->data.data()),
                     t->data.size() * sizeof(double));
        }
        if (!os) throw PipelineError("checkpoint write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path, TrainConfig* cfg_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw PipelineError("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw PipelineError("bad checkpoint magic in " + path.string());
    const auto version = read_le<std::uint32_t>(is);
    if (version != 1) throw PipelineError("unsupported checkpoint version");
    const auto cfg_len = read_le<std::uint64_t>(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    TrainConfig cfg = TrainConfig::from_text(cfg_text);
    if (cfg_out) *cfg_out = cfg;

    const auto blob_count = read_le<std::uint64_t>(is);
    std::map<std::string, Tensor> blobs;
    for (std::uint64_t b = 0; b < blob_count; ++b) {
        const auto name_len = read_le<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto ndims = read_le<std::uint32_t>(is);
        std::vector<std::size_t> shape(ndims);
        for (auto& d : shape) d = read_le<std::uint64_t>(is);
        Tensor t = make_tensor(shape);
        is.read(reinterpret_cast<char*>(t->data.data()), t->data.size() * sizeof(double));
        blobs[name] = t;
        if (!is) throw PipelineError("truncated checkpoint: " + path.string());
    }
    auto bias_it = blobs.find("3d.student.classifier.bias");
    if (bias_it == blobs.end()) throw PipelineError("checkpoint missing classifier bias");
    const std::size_t class_count = bias_it->second->shape[1];
    Rng rng(0);
    Model model = make_model(class_count, rng);
    for (auto& [name, t] : model.named_parameters()) {
        auto it = blobs.find(name);
        if (it == blobs.end()) throw PipelineError("checkpoint missing blob " + name);
        if (it->second->shape != t->shape)
            throw PipelineError("checkpoint shape mismatch for " + name);
        t->data = it->second->data;
    }
    return model;
}

void write_manifest(const std::filesystem::path& path, const TrainConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra) {
    std::string git = "unknown";
    if (FILE* pipe = popen("git describe --always --dirty 2>/dev/null", "r")) {
        char buf[128];
        if (fgets(buf, sizeof(buf), pipe)) {
            git = buf;
            while (!git.empty() && (git.back() == '\n' || git.back() == '\r')) git.pop_back();
        }
        pclose(pipe);
    }
    std::ofstream os(path);
    if (!os) throw PipelineError("cannot write manifest: " + path.string());
    os << "git_describe=" << git << "\n";
    for (const auto& [k, v] : extra) os << k << "=" << v << "\n";
    os << cfg.to_text();
}

} // namespace wpcl
