#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "wpcl/evaluation.hpp"
#include "wpcl/io.hpp"
#include "wpcl/pipeline.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <set>

using namespace wpcl;
namespace fs = std::filesystem;

namespace {

std::vector<SceneSample> tiny_dataset(std::size_t scenes, std::uint64_t seed = 21) {
    SyntheticSceneSpec spec;
    spec.points_per_surface = 50;
    spec.camera_count = 2;
    spec.image_width = 16;
    spec.image_height = 12;
    spec.object_class_count = 2;
    spec.seed = seed;
    return generate_synthetic_dataset(spec, scenes);
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.pair_count = 16;
    cfg.region_cfg.min_region_size = 5;
    cfg.slab_classes = synthetic_slab_classes();
    return cfg;
}

std::vector<double> flatten(Model& m) {
    std::vector<double> out;
    for (auto& [name, t] : m.named_parameters())
        out.insert(out.end(), t->data.begin(), t->data.end());
    return out;
}

} // namespace

TEST_CASE("ema update follows theta_t <- m theta_t + (1-m) theta_s") {
    Rng rng(1);
    auto net_s = make_point_network(3, rng);
    auto net_t = make_point_network(3, rng);
    const double w_t = net_t.backbone[0].weight->data[0];
    const double w_s = net_s.backbone[0].weight->data[0];
    ema_update(net_t, net_s, 0.9);
    CHECK(net_t.backbone[0].weight->data[0] ==
          doctest::Approx(0.9 * w_t + 0.1 * w_s).epsilon(1e-14));
    // m = 1 freezes the teacher; m = 0 copies the student
    auto frozen = net_t.backbone[0].weight->data[0];
    ema_update(net_t, net_s, 1.0);
    CHECK(net_t.backbone[0].weight->data[0] == frozen);
    ema_update(net_t, net_s, 0.0);
    CHECK(net_t.backbone[0].weight->data[0] == w_s);
}

TEST_CASE("teacher copies the student at init and never requires grad") {
    Rng rng(2);
    Model m = make_model(4, rng);
    auto sp = m.branch_3d.student.parameters();
    auto tp = m.branch_3d.teacher.parameters();
    REQUIRE(sp.size() == tp.size());
    for (std::size_t i = 0; i < sp.size(); ++i) {
        CHECK(sp[i]->data == tp[i]->data);
        CHECK_FALSE(tp[i]->requires_grad);
    }
}

TEST_CASE("classifier starts at zero so initial probabilities are uniform") {
    Rng rng(3);
    auto net = make_point_network(5, rng);
    for (double v : net.classifier.weight->data) CHECK(v == 0.0);
    for (double v : net.classifier.bias->data) CHECK(v == 0.0);
    auto input = make_tensor({2, net.input_dim}, std::vector<double>(2 * net.input_dim, 0.3));
    Tape tape;
    auto out = forward_branch(tape, net, input);
    for (double p : out.probs->data) CHECK(p == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("mix3d concatenates points and unions scene tags") {
    auto data = tiny_dataset(2);
    auto mixed = mix3d(data[0], data[1]);
    CHECK(mixed.mixed.points.size() == data[0].points.size() + data[1].points.size());
    CHECK(mixed.count_a == data[0].points.size());
    CHECK(mixed.count_b == data[1].points.size());
    for (std::size_t i = 0; i < mixed.origin.size(); ++i)
        CHECK(mixed.origin[i] == (i < mixed.count_a ? 0 : 1));
    for (std::size_t c = 0; c < mixed.mixed.scene_label.y.size(); ++c)
        CHECK(mixed.mixed.scene_label.y[c] ==
              (data[0].scene_label.y[c] | data[1].scene_label.y[c]));
    // ordering within each origin block is preserved
    CHECK(mixed.mixed.points[0] == data[0].points[0]);
    CHECK(mixed.mixed.points[mixed.count_a] == data[1].points[0]);
}

TEST_CASE("height slab augmentation clears the matching tag bit") {
    auto data = tiny_dataset(1, 77);
    SceneSample scene = data[0];
    Rng rng(4);
    SceneSample out = height_slab_augment(scene, synthetic_slab_classes(), 1.0, rng);
    CHECK(out.points.size() < scene.points.size());
    // with every slab firing on a closed room, floor and ceiling tags drop
    CHECK(out.scene_label.y[0] == 0);
    CHECK(out.scene_label.y[1] == 0);
    // a zero-probability pass is the identity
    Rng rng2(4);
    SceneSample same = height_slab_augment(scene, synthetic_slab_classes(), 0.0, rng2);
    CHECK(same.points.size() == scene.points.size());
    CHECK(same.scene_label.y == scene.scene_label.y);
}

TEST_CASE("height slab augmentation only removes points near a boundary") {
    auto data = tiny_dataset(1, 78);
    const SceneSample& scene = data[0];
    Vec3 lo = scene.points[0], hi = scene.points[0];
    for (const auto& p : scene.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    Rng rng(6);
    SceneSample out = height_slab_augment(scene, synthetic_slab_classes(), 1.0, rng);
    REQUIRE(out.points.size() < scene.points.size());
    // set difference: everything that vanished sits within 0.5 m of a face
    std::set<std::array<double, 3>> kept;
    for (const auto& p : out.points) kept.insert({p.x(), p.y(), p.z()});
    for (const auto& p : scene.points) {
        if (kept.count({p.x(), p.y(), p.z()})) continue;
        const bool boundary = p.z() < lo.z() + 0.5 || p.z() > hi.z() - 0.5 ||
                              p.x() < lo.x() + 0.5 || p.x() > hi.x() - 0.5 ||
                              p.y() < lo.y() + 0.5 || p.y() > hi.y() - 0.5;
        CHECK(boundary);
    }
}

TEST_CASE("config text round trip and unknown keys are rejected") {
    TrainConfig cfg = tiny_config();
    cfg.eta = 0.65;
    cfg.enable_mix3d = true;
    cfg.count_mode = TrainConfig::CountMode::Running;
    cfg.partition_mode = TrainConfig::PartitionMode::Identity;
    cfg.seed = 987;
    TrainConfig back = TrainConfig::from_text(cfg.to_text());
    CHECK(back.to_text() == cfg.to_text());
    CHECK(back.eta == cfg.eta);
    CHECK(back.count_mode == TrainConfig::CountMode::Running);
    CHECK(back.partition_mode == TrainConfig::PartitionMode::Identity);
    CHECK_THROWS_AS(TrainConfig::from_text("no_such_key=1\n"), PipelineError);
    CHECK_THROWS_AS(TrainConfig::from_text("eta=nonsense\n"), PipelineError);
}

TEST_CASE("stage-1 training runs, losses stay finite, steps counted") {
    auto data = tiny_dataset(4);
    TrainConfig cfg = tiny_config();
    auto result = train_stage1(data, cfg);
    CHECK(result.steps == data.size());
    REQUIRE_FALSE(result.loss_curve.empty());
    for (double l : result.loss_curve) CHECK(std::isfinite(l));
}

TEST_CASE("seeded stage-1 reruns are bit-identical") {
    auto data = tiny_dataset(3);
    TrainConfig cfg = tiny_config();
    cfg.enable_mix3d = true;
    auto a = train_stage1(data, cfg);
    auto b = train_stage1(data, cfg);
    CHECK(flatten(a.model) == flatten(b.model));
    CHECK(a.loss_curve == b.loss_curve);
    cfg.seed += 1;
    auto c = train_stage1(data, cfg);
    CHECK(flatten(a.model) != flatten(c.model));
}

TEST_CASE("ground-truth partitions are refused in training") {
    auto data = tiny_dataset(1);
    TrainConfig cfg = tiny_config();
    cfg.partition_mode = TrainConfig::PartitionMode::GroundTruth;
    CHECK_THROWS_AS(train_stage1(data, cfg), PipelineError);
}

TEST_CASE("pseudo labels cover every point with a valid class") {
    auto data = tiny_dataset(2);
    TrainConfig cfg = tiny_config();
    auto result = train_stage1(data, cfg);
    auto labels = generate_pseudo_labels(result.model, data, cfg);
    REQUIRE(labels.size() == data.size());
    for (std::size_t s = 0; s < data.size(); ++s) {
        REQUIRE(labels[s].size() == data[s].points.size());
        for (auto l : labels[s]) CHECK(l < 5); // 3 structural + 2 objects
    }
}

TEST_CASE("stage-2 trains a fresh head on pseudo labels") {
    auto data = tiny_dataset(2);
    TrainConfig cfg = tiny_config();
    auto r1 = train_stage1(data, cfg);
    auto labels = generate_pseudo_labels(r1.model, data, cfg);
    auto r2 = train_stage2(data, labels, cfg);
    for (double l : r2.loss_curve) CHECK(std::isfinite(l));
    auto pred = predict_labels(r2.model, data[0]);
    CHECK(pred.size() == data[0].points.size());

    TrainConfig zero = cfg;
    zero.epochs = 0;
    auto r0 = train_stage2(data, labels, zero);
    CHECK(r0.loss_curve.empty());
}

TEST_CASE("checkpoint round trip preserves every parameter and the config") {
    auto data = tiny_dataset(1);
    TrainConfig cfg = tiny_config();
    auto result = train_stage1(data, cfg);
    const fs::path path = fs::temp_directory_path() / "wpcl_ckpt_test.bin";
    save_checkpoint(path, result.model, cfg);
    TrainConfig cfg_back;
    Model loaded = load_checkpoint(path, &cfg_back);
    CHECK(flatten(loaded) == flatten(result.model));
    CHECK(cfg_back.to_text() == cfg.to_text());
    fs::remove(path);

    std::ofstream(path, std::ios::binary) << "NOTACKPT";
    CHECK_THROWS_AS(load_checkpoint(path), PipelineError);
    fs::remove(path);
}
