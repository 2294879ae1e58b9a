// wpcl command line: dataset synthesis, two-stage training, evaluation and
// the ablation harness. Exit codes: 0 success, 1 validation error, 2 runtime
// failure.

#include <CLI11.hpp>

#include "wpcl/evaluation.hpp"
#include "wpcl/gradcheck.hpp"
#include "wpcl/io.hpp"
#include "wpcl/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace wpcl;
namespace fs = std::filesystem;

namespace {

TrainConfig load_config(const std::string& config_file,
                        const std::vector<std::string>& overrides) {
    TrainConfig cfg;
    if (!config_file.empty()) {
        std::ifstream is(config_file);
        if (!is) throw PipelineError("cannot open config " + config_file);
        std::stringstream buf;
        buf << is.rdbuf();
        cfg = TrainConfig::from_text(buf.str());
    }
    // CLI overrides reuse the key=value parser so flags and files agree
    std::string merged = cfg.to_text();
    for (const auto& kv : overrides) merged += kv + "\n";
    cfg = TrainConfig::from_text(merged);
    cfg.validate();
    return cfg;
}

void emit_manifest(const fs::path& out_dir, const TrainConfig& cfg,
                   const std::string& command, int argc, char** argv) {
    std::string argv_line;
    for (int i = 0; i < argc; ++i) {
        if (i) argv_line += ' ';
        argv_line += argv[i];
    }
    fs::create_directories(out_dir);
    write_manifest(out_dir / ("manifest_" + command + ".txt"), cfg,
                   {{"command", command}, {"argv", argv_line}});
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
    if (seeds.empty()) throw PipelineError("no seeds given");
    return seeds;
}

int run_gradcheck_suite() {
    Rng rng(7);
    auto randn = [&](std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        std::vector<double> data(n);
        for (auto& v : data) v = rng.normal();
        return make_tensor(std::move(shape), std::move(data), true);
    };
    struct Entry {
        const char* name;
        std::function<GradCheckResult()> run;
    };
    std::vector<Entry> checks = {
        {"mlp block",
         [&] {
             auto x = randn({5, 4}), w = randn({4, 3}), b = randn({1, 3});
             return gradcheck(
                 [&](Tape& t) {
                     auto h = t.relu(t.add_row(t.matmul(x, w), b));
                     return t.mean_all(t.mul(h, h));
                 },
                 {x, w, b});
         }},
        {"softmax nll",
         [&] {
             auto x = randn({4, 3});
             return gradcheck(
                 [&](Tape& t) {
                     return t.weighted_nll(t.softmax_rows(x), {0, 1, 2, 1},
                                           {1, 1, 0.5, 1}, 4.0);
                 },
                 {x});
         }},
        {"contrastive",
         [&] {
             auto s = randn({4, 6});
             auto tg = randn({4, 6});
             tg->requires_grad = false;
             tg->grad.clear();
             return gradcheck(
                 [&](Tape& t) {
                     return contrastive_distillation(t, t.l2_normalize_rows(s),
                                                     t.l2_normalize_rows(tg), 0.07);
                 },
                 {s});
         }},
        {"scene classification",
         [&] {
             auto logits = randn({6, 4});
             SceneLabel y;
             y.y = {1, 0, 1, 1};
             return gradcheck(
                 [&](Tape& t) { return scene_classification_loss(t, logits, y); }, {logits});
         }},
        {"consistency",
         [&] {
             auto x = randn({6, 3});
             RegionalGuidance g;
             g.class_count = 3;
             g.point_label = {0, 1, 2, 0, 1, 2};
             g.point_conf.assign(6, 1.0);
             g.excluded.assign(6, 0);
             SelectionMask m;
             m.keep = {1, 1, 0, 1, 0, 1};
             return gradcheck(
                 [&](Tape& t) { return consistency_loss(t, t.softmax_rows(x), g, m); }, {x});
         }},
        {"segment mean",
         [&] {
             auto x = randn({6, 3});
             return gradcheck(
                 [&](Tape& t) {
                     auto m = t.segment_mean(x, {0, 1, 0, 2, 1, 2}, 3);
                     return t.sum_all(t.mul(m, m));
                 },
                 {x});
         }},
    };
    bool ok = true;
    for (auto& entry : checks) {
        for (int rep = 0; rep < 20; ++rep) {
            auto res = entry.run();
            if (!res.pass) {
                std::printf("FAIL %s (max rel err %.3g)\n", entry.name, res.max_rel_error);
                ok = false;
                break;
            }
        }
        if (ok) std::printf("ok   %s\n", entry.name);
    }
    return ok ? 0 : 2;
}

Model wrap_stage2(const BranchNetwork& net, std::size_t class_count) {
    // stage-2 checkpoints reuse the model container: the trained head lives in
    // the 3d student slot and the remaining branches stay at their init
    Rng rng(0);
    Model m = make_model(class_count, rng);
    m.branch_3d.student = net;
    m.branch_3d.teacher = net;
    m.branch_3d.teacher.set_requires_grad(false);
    return m;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"weakly supervised point cloud segmentation workbench"};
    app.require_subcommand(1);
    if (const char* threads = std::getenv("WPCL_THREADS")) (void)threads; // engine is single-threaded

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out = "dataset";
    std::size_t synth_scenes = 30;
    SyntheticSceneSpec spec;
    bool binary_points = false;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--scenes", synth_scenes, "scene count");
    synth->add_option("--seed", spec.seed, "rng seed");
    synth->add_option("--points-per-surface", spec.points_per_surface);
    synth->add_option("--cameras", spec.camera_count);
    synth->add_option("--width", spec.image_width);
    synth->add_option("--height", spec.image_height);
    synth->add_option("--object-classes", spec.object_class_count);
    synth->add_option("--presence-prob", spec.object_presence_prob);
    synth->add_flag("--imbalanced", spec.imbalanced, "skew the class histogram");
    synth->add_flag("--binary-points", binary_points, "write WPCLB point files");

    // shared train/eval options
    std::string data_path, config_file, ckpt_path = "model.ckpt", labels_dir = "pseudo";
    std::vector<std::string> overrides;
    auto add_common = [&](CLI::App* cmd, bool with_config) {
        cmd->add_option("--data", data_path, "dataset manifest.json")->required();
        if (with_config) {
            cmd->add_option("--config", config_file, "key=value config file");
            cmd->add_option("--set", overrides, "config override key=value")
                ->take_all();
        }
    };

    auto* train1 = app.add_subcommand("train1", "stage-1 weakly supervised training");
    add_common(train1, true);
    train1->add_option("--out", ckpt_path, "checkpoint path");

    auto* pseudolabel = app.add_subcommand("pseudolabel", "emit pseudo-labels");
    add_common(pseudolabel, true);
    pseudolabel->add_option("--checkpoint", ckpt_path, "stage-1 checkpoint")->required();
    pseudolabel->add_option("--out", labels_dir, "label output directory");

    auto* train2 = app.add_subcommand("train2", "stage-2 supervised training");
    add_common(train2, true);
    std::string ckpt2_path = "model2.ckpt";
    train2->add_option("--labels", labels_dir, "pseudo-label directory")->required();
    train2->add_option("--out", ckpt2_path, "stage-2 checkpoint path");

    auto* eval = app.add_subcommand("eval", "score labels or a stage-2 model");
    add_common(eval, false);
    std::string eval_labels, eval_ckpt, csv_out;
    eval->add_option("--labels", eval_labels, "pseudo-label directory to score");
    eval->add_option("--checkpoint", eval_ckpt, "stage-2 checkpoint to score");
    eval->add_option("--csv", csv_out, "also write the per-class report as csv");

    auto* ablate = app.add_subcommand("ablate", "run an ablation preset");
    add_common(ablate, true);
    std::string preset = "main", seeds_spec = "1,2,3", ablate_csv;
    ablate->add_option("--preset", preset)
        ->check(CLI::IsMember({"main", "threshold", "views", "partition"}));
    ablate->add_option("--seeds", seeds_spec, "comma-separated seed list");
    ablate->add_option("--csv", ablate_csv, "write the table as csv");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference suite");

    auto* inspect = app.add_subcommand("inspect", "dump regions and correspondences");
    add_common(inspect, true);
    std::string inspect_scene;
    inspect->add_option("--scene", inspect_scene, "scene id")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*synth) {
            spec.validate();
            auto scenes = generate_synthetic_dataset(spec, synth_scenes);
            DatasetManifest m;
            m.root = synth_out;
            m.class_names = synthetic_class_names(spec);
            fs::create_directories(m.root);
            for (const auto& s : scenes) m.scenes.push_back(save_scene(m.root, s, binary_points));
            save_manifest(m.root / "manifest.json", m);
            TrainConfig cfg;
            cfg.seed = spec.seed;
            emit_manifest(synth_out, cfg, "synth", argc, argv);
            std::printf("wrote %zu scenes to %s\n", scenes.size(), synth_out.c_str());
            return 0;
        }

        if (*gradcheck_cmd) return run_gradcheck_suite();

        auto manifest = load_manifest(data_path);
        TrainConfig cfg = load_config(config_file, overrides);
        cfg.slab_classes = synthetic_slab_classes(); // floor/ceiling/wall lead the class list

        if (*train1) {
            auto dataset = load_dataset(manifest, /*strip_gt=*/true);
            auto result = train_stage1(dataset, cfg);
            save_checkpoint(ckpt_path, result.model, cfg);
            emit_manifest(fs::path(ckpt_path).parent_path().empty()
                              ? "."
                              : fs::path(ckpt_path).parent_path(),
                          cfg, "train1", argc, argv);
            std::printf("trained %zu steps, final loss %.6f, checkpoint %s\n", result.steps,
                        result.loss_curve.empty() ? 0.0 : result.loss_curve.back(),
                        ckpt_path.c_str());
            return 0;
        }

        if (*pseudolabel) {
            auto dataset = load_dataset(manifest, /*strip_gt=*/true);
            TrainConfig ckpt_cfg;
            Model model = load_checkpoint(ckpt_path, &ckpt_cfg);
            auto labels = generate_pseudo_labels(model, dataset, cfg);
            fs::create_directories(labels_dir);
            for (std::size_t s = 0; s < dataset.size(); ++s)
                save_labels(fs::path(labels_dir) / (dataset[s].id + ".labels"), labels[s]);
            emit_manifest(labels_dir, cfg, "pseudolabel", argc, argv);
            std::printf("wrote pseudo-labels for %zu scenes to %s\n", dataset.size(),
                        labels_dir.c_str());
            return 0;
        }

        if (*train2) {
            auto dataset = load_dataset(manifest, /*strip_gt=*/true);
            std::vector<std::vector<std::size_t>> labels;
            for (const auto& s : dataset)
                labels.push_back(load_labels(fs::path(labels_dir) / (s.id + ".labels")));
            auto result = train_stage2(dataset, labels, cfg);
            Model wrapped = wrap_stage2(result.model, manifest.class_count());
            save_checkpoint(ckpt2_path, wrapped, cfg);
            emit_manifest(fs::path(ckpt2_path).parent_path().empty()
                              ? "."
                              : fs::path(ckpt2_path).parent_path(),
                          cfg, "train2", argc, argv);
            std::printf("stage-2 done, final loss %.6f, checkpoint %s\n",
                        result.loss_curve.empty() ? 0.0 : result.loss_curve.back(),
                        ckpt2_path.c_str());
            return 0;
        }

        if (*eval) {
            auto dataset = load_dataset(manifest, /*strip_gt=*/false);
            ConfusionMatrix cm(manifest.class_count());
            for (const auto& scene : dataset) {
                if (scene.gt_labels.empty())
                    throw EvalError("scene " + scene.id + " carries no ground truth");
                std::vector<std::size_t> pred;
                if (!eval_labels.empty()) {
                    pred = load_labels(fs::path(eval_labels) / (scene.id + ".labels"));
                } else if (!eval_ckpt.empty()) {
                    Model model = load_checkpoint(eval_ckpt);
                    pred = predict_labels(model.branch_3d.student, scene);
                } else {
                    throw EvalError("eval needs --labels or --checkpoint");
                }
                accumulate(cm, scene.gt_labels, pred);
            }
            auto report = iou_report(cm);
            std::cout << format_report(report, manifest.class_names);
            std::printf("mIoU %.4f\n", report.miou);
            if (!csv_out.empty()) {
                std::ofstream os(csv_out);
                os << format_report_csv(report, manifest.class_names);
            }
            return 0;
        }

        if (*ablate) {
            auto dataset = load_dataset(manifest, /*strip_gt=*/false);
            auto seeds = parse_seeds(seeds_spec);
            std::vector<AblationConfig> configs;
            if (preset == "main") {
                TrainConfig base = cfg;
                base.enable_cmg = false;
                base.enable_rpc = false;
                base.enable_mix3d = false;
                TrainConfig cmg = base;
                cmg.enable_cmg = true;
                TrainConfig rpc = cmg;
                rpc.enable_rpc = true;
                TrainConfig mix = rpc;
                mix.enable_mix3d = true;
                configs = {{"baseline", base}, {"+CMG", cmg}, {"+RPC", rpc}, {"+Mix3D", mix}};
            } else if (preset == "threshold") {
                for (double eta : {0.6, 0.7, 0.8, 0.9}) {
                    TrainConfig fixed = cfg;
                    fixed.adaptive_threshold = false;
                    fixed.eta = eta;
                    TrainConfig adaptive = cfg;
                    adaptive.adaptive_threshold = true;
                    adaptive.eta = eta;
                    char buf[48];
                    std::snprintf(buf, sizeof(buf), "fixed eta=%.1f", eta);
                    configs.push_back({buf, fixed});
                    std::snprintf(buf, sizeof(buf), "adaptive eta=%.1f", eta);
                    configs.push_back({buf, adaptive});
                }
            } else if (preset == "partition") {
                TrainConfig region = cfg;
                region.partition_mode = TrainConfig::PartitionMode::RegionGrowing;
                TrainConfig point = cfg;
                point.partition_mode = TrainConfig::PartitionMode::Identity;
                configs = {{"region growing", region}, {"point-wise", point}};
            } else { // views
                std::vector<AblationRow> rows;
                const std::size_t max_views = dataset[0].views.size();
                for (std::size_t k : {std::size_t{1}, std::size_t{3}, max_views}) {
                    auto truncated = dataset;
                    for (auto& s : truncated)
                        if (s.views.size() > k) s.views.resize(k);
                    auto sub = ablation_harness({{"views=" + std::to_string(k), cfg}}, seeds,
                                                truncated);
                    rows.push_back(sub[0]);
                }
                std::cout << format_ablation_table(rows);
                if (!ablate_csv.empty()) std::ofstream(ablate_csv) << format_ablation_csv(rows);
                emit_manifest(".", cfg, "ablate", argc, argv);
                return 0;
            }
            auto rows = ablation_harness(configs, seeds, dataset);
            std::cout << format_ablation_table(rows);
            if (!ablate_csv.empty()) std::ofstream(ablate_csv) << format_ablation_csv(rows);
            emit_manifest(".", cfg, "ablate", argc, argv);
            return 0;
        }

        if (*inspect) {
            auto dataset = load_dataset(manifest, /*strip_gt=*/false);
            for (const auto& scene : dataset) {
                if (scene.id != inspect_scene) continue;
                auto part = partition(scene.points, scene.colors, cfg.region_cfg);
                std::printf("scene %s: %zu points, %zu regions\n", scene.id.c_str(),
                            scene.points.size(), part.region_count);
                for (std::size_t r = 0; r < part.region_sizes.size(); ++r)
                    std::printf("  region %zu: %zu points\n", r, part.region_sizes[r]);
                auto corr = build_correspondences(scene.points, scene.views,
                                                 cfg.depth_tolerance,
                                                 cfg.depth_test_correspondences);
                std::vector<std::size_t> per_view(scene.views.size(), 0);
                for (const auto& e : corr.entries) ++per_view[e.view_index];
                for (std::size_t v = 0; v < per_view.size(); ++v)
                    std::printf("  view %zu: %zu correspondences\n", v, per_view[v]);
                return 0;
            }
            throw EvalError("scene " + inspect_scene + " not in the manifest");
        }
    } catch (const PipelineError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const LossError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const EvalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime failure: %s\n", e.what());
        return 2;
    }
    return 0;
}
