// Acceptance gate: one line per criterion, nonzero exit on any failure.
// Optionally pass criterion numbers on the command line to run a subset.

#include "wpcl/evaluation.hpp"
#include "wpcl/gradcheck.hpp"
#include "wpcl/io.hpp"
#include "wpcl/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace wpcl;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
    int number;
    const char* name;
    std::function<std::string()> run; // empty string = pass, else failure reason
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor randn(std::vector<std::size_t> shape, Rng& rng, bool grad = true, double scale = 1.0) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> data(n);
    for (auto& v : data) v = rng.normal(0.0, scale);
    return make_tensor(std::move(shape), std::move(data), grad);
}

// ---------------------------------------------------------------------- 1
std::string criterion_gradients() {
    const auto start = Clock::now();
    Rng rng(101);
    double worst = 0.0;
    std::string worst_op;
    auto run_cases = [&](const char* op, int cases,
                         const std::function<GradCheckResult(Rng&)>& one) {
        for (int c = 0; c < cases; ++c) {
            auto res = one(rng);
            if (res.max_rel_error > worst) {
                worst = res.max_rel_error;
                worst_op = op;
            }
        }
    };
    const int n_cases = 100;

    run_cases("matmul", n_cases, [](Rng& r) {
        auto a = randn({3, 4}, r), b = randn({4, 2}, r);
        return gradcheck([&](Tape& t) { return t.sum_all(t.matmul(a, b)); }, {a, b});
    });
    run_cases("add/sub/mul", n_cases, [](Rng& r) {
        auto a = randn({3, 4}, r), b = randn({3, 4}, r), c = randn({3, 4}, r);
        return gradcheck(
            [&](Tape& t) { return t.mean_all(t.mul(t.add(a, b), t.sub(a, c))); }, {a, b, c});
    });
    run_cases("add_row/scale", n_cases, [](Rng& r) {
        auto a = randn({4, 3}, r), row = randn({1, 3}, r);
        return gradcheck(
            [&](Tape& t) { return t.sum_all(t.scale(t.add_row(a, row), 0.37)); }, {a, row});
    });
    run_cases("relu", n_cases, [](Rng& r) {
        auto a = randn({4, 4}, r);
        for (auto& v : a->data)
            if (std::abs(v) < 1e-2) v += v < 0 ? -0.1 : 0.1; // stay off the kink
        return gradcheck([&](Tape& t) { return t.mean_all(t.relu(a)); }, {a});
    });
    run_cases("log_clamped", n_cases, [](Rng& r) {
        std::vector<double> data(12);
        for (auto& v : data) v = 0.05 + r.uniform();
        auto a = make_tensor({3, 4}, data, true);
        return gradcheck([&](Tape& t) { return t.sum_all(t.log_clamped(a)); }, {a});
    });
    run_cases("softmax_rows", n_cases, [](Rng& r) {
        auto a = randn({3, 5}, r);
        auto w = randn({3, 5}, r, false);
        return gradcheck(
            [&](Tape& t) { return t.sum_all(t.mul(t.softmax_rows(a), w)); }, {a});
    });
    run_cases("l2_normalize_rows", n_cases, [](Rng& r) {
        auto a = randn({3, 4}, r);
        auto w = randn({3, 4}, r, false);
        return gradcheck(
            [&](Tape& t) { return t.sum_all(t.mul(t.l2_normalize_rows(a), w)); }, {a});
    });
    run_cases("segment_mean/gather_rows", n_cases, [](Rng& r) {
        auto a = randn({6, 3}, r);
        std::vector<std::size_t> ids(6);
        for (auto& id : ids) id = r.uniform_index(3);
        std::vector<std::size_t> gather = {2, 0, 1, 2};
        auto w = randn({4, 3}, r, false);
        return gradcheck(
            [&](Tape& t) {
                auto m = t.segment_mean(a, ids, 3);
                return t.sum_all(t.mul(t.gather_rows(m, gather), w));
            },
            {a});
    });
    run_cases("mean_rows/mean_all", n_cases, [](Rng& r) {
        auto a = randn({5, 3}, r);
        auto w = randn({1, 3}, r, false);
        return gradcheck(
            [&](Tape& t) {
                auto pooled = t.mean_rows(a);
                return t.add(t.sum_all(t.mul(pooled, w)), t.mean_all(a));
            },
            {a});
    });
    run_cases("bce_with_logits", n_cases, [](Rng& r) {
        auto x = randn({1, 5}, r);
        std::vector<double> y(5);
        for (auto& v : y) v = r.bernoulli(0.5) ? 1.0 : 0.0;
        return gradcheck([&](Tape& t) { return t.bce_with_logits_mean(x, y); }, {x});
    });
    run_cases("info_nce", n_cases, [](Rng& r) {
        auto sim = randn({4, 4}, r);
        return gradcheck([&](Tape& t) { return t.info_nce(sim); }, {sim});
    });
    run_cases("weighted_nll", n_cases, [](Rng& r) {
        auto a = randn({4, 3}, r);
        std::vector<std::size_t> labels(4);
        std::vector<double> weights(4);
        for (auto& l : labels) l = r.uniform_index(3);
        for (auto& w : weights) w = r.bernoulli(0.5) ? 1.0 : 0.0;
        return gradcheck(
            [&](Tape& t) { return t.weighted_nll(t.softmax_rows(a), labels, weights, 4.0); },
            {a});
    });
    // loss terms
    run_cases("scene_classification", n_cases, [](Rng& r) {
        auto logits = randn({5, 4}, r);
        SceneLabel y;
        y.y.resize(4);
        for (auto& v : y.y) v = r.bernoulli(0.5) ? 1 : 0;
        if (!y.y[0] && !y.y[1] && !y.y[2] && !y.y[3]) y.y[0] = 1;
        return gradcheck(
            [&](Tape& t) { return scene_classification_loss(t, logits, y); }, {logits});
    });
    // each direction checked through its source side only; the target side is
    // detached by definition, so it must stay fixed during differencing
    run_cases("contrastive 2d->3d", n_cases, [](Rng& r) {
        auto f3 = randn({4, 5}, r);
        auto f2 = randn({4, 5}, r, false);
        return gradcheck(
            [&](Tape& t) {
                return contrastive_distillation(t, t.l2_normalize_rows(f3),
                                                t.l2_normalize_rows(f2), 0.07);
            },
            {f3});
    });
    run_cases("contrastive 3d->2d", n_cases, [](Rng& r) {
        auto f2 = randn({4, 5}, r);
        auto f3 = randn({4, 5}, r, false);
        return gradcheck(
            [&](Tape& t) {
                return contrastive_distillation(t, t.l2_normalize_rows(f2),
                                                t.l2_normalize_rows(f3), 0.07);
            },
            {f2});
    });
    run_cases("masked consistency", n_cases, [](Rng& r) {
        auto a = randn({6, 3}, r);
        RegionalGuidance g;
        g.point_label.resize(6);
        g.point_conf.assign(6, 1.0);
        g.excluded.assign(6, 0);
        for (auto& l : g.point_label) l = r.uniform_index(3);
        SelectionMask mask;
        mask.keep.resize(6);
        bool any = false;
        for (auto& k : mask.keep) {
            k = r.bernoulli(0.6) ? 1 : 0;
            any |= k != 0;
        }
        if (!any) mask.keep[0] = 1;
        return gradcheck(
            [&](Tape& t) { return consistency_loss(t, t.softmax_rows(a), g, mask); }, {a});
    });
    run_cases("supervised_ce", n_cases, [](Rng& r) {
        auto a = randn({5, 4}, r);
        std::vector<std::size_t> labels(5);
        for (auto& l : labels) l = r.bernoulli(0.25) ? kIgnoreLabel : r.uniform_index(4);
        if (labels[0] == kIgnoreLabel) labels[0] = 0;
        return gradcheck(
            [&](Tape& t) { return supervised_ce(t, t.softmax_rows(a), labels); }, {a});
    });

    const double elapsed = seconds_since(start);
    if (worst >= 1e-5)
        return "max relative error " + std::to_string(worst) + " in " + worst_op;
    if (elapsed >= 60.0) return "runtime " + std::to_string(elapsed) + " s exceeds 60 s";
    return {};
}

// ---------------------------------------------------------------------- 2
std::string criterion_contrastive_oracle() {
    Rng rng(202);
    const double tau = 0.07;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t g = 1 + rng.uniform_index(8);
        const std::size_t d = 3 + rng.uniform_index(6);
        auto src = randn({g, d}, rng, true);
        auto tgt = randn({g, d}, rng, false);
        Tape tape;
        auto usrc = tape.l2_normalize_rows(src);
        auto utgt = tape.l2_normalize_rows(tgt);
        auto loss = contrastive_distillation(tape, usrc, utgt, tau);

        // independent double-loop over explicitly normalized rows
        auto unit = [&](const Tensor& t, std::size_t i) {
            std::vector<double> row(d);
            double norm = 0.0;
            for (std::size_t j = 0; j < d; ++j) norm += t->data[i * d + j] * t->data[i * d + j];
            norm = std::sqrt(norm);
            for (std::size_t j = 0; j < d; ++j) row[j] = t->data[i * d + j] / norm;
            return row;
        };
        double reference = 0.0;
        for (std::size_t i = 0; i < g; ++i) {
            auto a = unit(src, i);
            double denom = 0.0, numer = 0.0;
            for (std::size_t j = 0; j < g; ++j) {
                auto b = unit(tgt, j);
                double dot = 0.0;
                for (std::size_t kidx = 0; kidx < d; ++kidx) dot += a[kidx] * b[kidx];
                const double e = std::exp(dot / tau);
                denom += e;
                if (i == j) numer = e;
            }
            reference += -std::log(numer / denom);
        }
        if (std::abs(loss->data[0] - reference) > 1e-10)
            return "mismatch " + std::to_string(std::abs(loss->data[0] - reference)) +
                   " at g=" + std::to_string(g);
        if (g == 1 && loss->data[0] != 0.0) return "g=1 did not give exactly 0";
    }
    // force the g=1 case explicitly
    auto src = randn({1, 4}, rng, true);
    auto tgt = randn({1, 4}, rng, false);
    Tape tape;
    auto loss = contrastive_distillation(tape, tape.l2_normalize_rows(src),
                                         tape.l2_normalize_rows(tgt), tau);
    if (loss->data[0] != 0.0) return "explicit g=1 case not exactly 0";
    return {};
}

// ---------------------------------------------------------------------- 3
std::string criterion_threshold_algebra() {
    Rng rng(303);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t classes = 2 + rng.uniform_index(9);
        const std::size_t n = 10 + rng.uniform_index(190);
        const double eta = 0.1 + 0.85 * rng.uniform();
        RegionalGuidance g;
        g.class_count = classes;
        g.point_label.resize(n);
        g.point_conf.resize(n);
        g.excluded.assign(n, 0);
        for (std::size_t p = 0; p < n; ++p) {
            g.point_label[p] = rng.uniform_index(classes);
            g.point_conf[p] = rng.uniform();
        }
        auto res = compute_threshold(g, eta);
        const auto& Q = res.threshold.counts;
        const auto& T = res.threshold.thresholds;
        double qmax = 0.0;
        std::size_t arg = 0;
        for (std::size_t c = 0; c < classes; ++c)
            if (Q[c] > qmax) {
                qmax = Q[c];
                arg = c;
            }
        if (std::abs(T[arg] - eta) > 1e-12) return "T[argmax Q] != eta";
        for (std::size_t c = 0; c < classes; ++c) {
            if (T[c] < -1e-12 || T[c] > eta + 1e-12) return "T outside [0, eta]";
            if (std::abs(T[c] - Q[c] / qmax * eta) > 1e-12) return "T formula violated";
        }
        // scale invariance in Q: tripling every point leaves T unchanged
        RegionalGuidance g3;
        g3.class_count = classes;
        for (int rep = 0; rep < 3; ++rep) {
            g3.point_label.insert(g3.point_label.end(), g.point_label.begin(),
                                  g.point_label.end());
            g3.point_conf.insert(g3.point_conf.end(), g.point_conf.begin(),
                                 g.point_conf.end());
        }
        g3.excluded.assign(3 * n, 0);
        auto res3 = compute_threshold(g3, eta);
        for (std::size_t c = 0; c < classes; ++c)
            if (std::abs(res3.threshold.thresholds[c] - T[c]) > 1e-12)
                return "T not scale-invariant in Q";
        // mask definition: strict inequality against the class threshold
        for (std::size_t p = 0; p < n; ++p) {
            const bool expect = g.point_conf[p] > T[g.point_label[p]];
            if (static_cast<bool>(res.mask.keep[p]) != expect) return "mask mismatch";
        }
        // adaptive == fixed when Q is uniform
        const std::size_t per = 20;
        RegionalGuidance gu;
        gu.class_count = classes;
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t r = 0; r < per; ++r) {
                gu.point_label.push_back(c);
                gu.point_conf.push_back(rng.uniform());
            }
        gu.excluded.assign(gu.point_label.size(), 0);
        auto resu = compute_threshold(gu, eta);
        for (std::size_t p = 0; p < gu.point_label.size(); ++p) {
            const bool fixed_keep = gu.point_conf[p] > eta;
            if (static_cast<bool>(resu.mask.keep[p]) != fixed_keep)
                return "uniform-Q adaptive mask differs from fixed";
        }
    }
    return {};
}

// ---------------------------------------------------------------------- 4
std::string criterion_geometry() {
    Rng rng(404);
    for (int trial = 0; trial < 10000; ++trial) {
        CameraView cam;
        cam.width = 64;
        cam.height = 48;
        cam.fx = 30.0 + 70.0 * rng.uniform();
        cam.fy = 30.0 + 70.0 * rng.uniform();
        cam.cx = 16.0 + 32.0 * rng.uniform();
        cam.cy = 12.0 + 24.0 * rng.uniform();
        // random rigid transform via a normalized quaternion
        double q[4];
        double norm = 0.0;
        for (auto& v : q) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : q) v /= norm;
        const double w = q[0], x = q[1], y = q[2], z = q[3];
        Mat4 m = Mat4::Identity();
        m(0, 0) = 1 - 2 * (y * y + z * z);
        m(0, 1) = 2 * (x * y - w * z);
        m(0, 2) = 2 * (x * z + w * y);
        m(1, 0) = 2 * (x * y + w * z);
        m(1, 1) = 1 - 2 * (x * x + z * z);
        m(1, 2) = 2 * (y * z - w * x);
        m(2, 0) = 2 * (x * z - w * y);
        m(2, 1) = 2 * (y * z + w * x);
        m(2, 2) = 1 - 2 * (x * x + y * y);
        m(0, 3) = rng.uniform(-2, 2);
        m(1, 3) = rng.uniform(-2, 2);
        m(2, 3) = rng.uniform(-2, 2);
        cam.world_to_camera = m;
        cam.validate();

        const int h = static_cast<int>(rng.uniform_index(cam.height));
        const int wpx = static_cast<int>(rng.uniform_index(cam.width));
        const double depth = 0.5 + 4.5 * rng.uniform();
        const Vec3 p = backproject_pixel(h, wpx, depth, cam);
        const auto hit = project_point(p, cam);
        if (!hit) return "projected point fell out of view on round trip";
        if (hit->h != h || hit->w != wpx) return "round trip changed the pixel";
        if (std::abs(hit->depth - depth) > 1e-9) return "round trip changed the depth";
        const Vec3 p2 = backproject_pixel(hit->h, hit->w, hit->depth, cam);
        if ((p2 - p).norm() >= 1e-6) return "round-trip error >= 1e-6 m";
    }

    // constructed occlusion: near point owns the pixel, far point must drop
    CameraView cam;
    cam.width = 65;
    cam.height = 49;
    cam.fx = cam.fy = 50.0;
    cam.cx = 32.0;
    cam.cy = 24.0;
    cam.world_to_camera = Mat4::Identity();
    cam.depth_map.assign(65 * 49, 0.0f);
    cam.depth_map[static_cast<std::size_t>(24) * 65 + 32] = 2.0f;
    std::vector<Vec3> pts = {Vec3(0, 0, 2.0), Vec3(0, 0, 3.0)};
    auto set = build_correspondences(pts, {cam}, 0.05, true);
    if (set.entries.size() != 1 || set.entries[0].point_index != 0)
        return "constructed occlusion case not filtered exactly";
    auto all = build_correspondences(pts, {cam}, 0.05, false);
    if (all.entries.size() != 2) return "disabled depth test dropped a pair";
    return {};
}

// ---------------------------------------------------------------------- 5
std::string criterion_regions() {
    Rng rng(505);
    const double min_angle = 45.0 * M_PI / 180.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 1 + rng.uniform_index(5);
        // normals with pairwise angles >= 45 degrees, by rejection
        std::vector<Vec3> normals;
        int guard = 0;
        while (normals.size() < k) {
            Vec3 n(rng.normal(), rng.normal(), rng.normal());
            n.normalize();
            bool ok = true;
            for (const auto& m : normals)
                if (std::acos(std::min(1.0, std::abs(n.dot(m)))) < min_angle) ok = false;
            if (ok) normals.push_back(n);
            if (++guard > 100000) return "construction sampler stalled";
        }
        std::vector<Vec3> pts, cols;
        for (std::size_t plane = 0; plane < k; ++plane) {
            const Vec3& n = normals[plane];
            // in-plane frame
            Vec3 a = n.cross(std::abs(n.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0));
            a.normalize();
            Vec3 b = n.cross(a);
            const Vec3 origin(10.0 * static_cast<double>(plane), rng.uniform(-1, 1),
                              rng.uniform(-1, 1));
            for (int i = 0; i < 300; ++i) {
                pts.push_back(origin + rng.uniform(0, 2) * a + rng.uniform(0, 2) * b);
                cols.emplace_back(0.5, 0.5, 0.5);
            }
        }
        RegionGrowingConfig cfg; // defaults throughout
        auto part = partition(pts, cols, cfg);
        if (part.region_count != k)
            return "k=" + std::to_string(k) + " planes produced " +
                   std::to_string(part.region_count) + " regions (trial " +
                   std::to_string(trial) + ")";
    }
    return {};
}

// ------------------------------------------------------------------- 6-8
SyntheticSceneSpec standard_benchmark_spec(bool imbalanced = false) {
    SyntheticSceneSpec spec;
    spec.points_per_surface = 1050; // lands near 8k points per scene
    spec.object_class_count = 5;    // 8 classes with floor/ceiling/wall
    spec.camera_count = 6;
    spec.imbalanced = imbalanced;
    spec.seed = 20240817;
    return spec;
}

TrainConfig benchmark_config() {
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.learning_rate = 1.0;
    cfg.grad_clip = 1.0;
    cfg.ema_momentum = 0.99;
    cfg.alpha = 0.005;
    cfg.rpc_2d = false;
    cfg.slab_classes = synthetic_slab_classes();
    cfg.max_points_per_step = 3000;
    return cfg;
}

std::string criterion_main_trend() {
    const auto start = Clock::now();
    auto dataset = generate_synthetic_dataset(standard_benchmark_spec(), 30);

    TrainConfig base = benchmark_config();
    base.enable_cmg = false;
    base.enable_rpc = false;
    TrainConfig cmg = base;
    cmg.enable_cmg = true;
    TrainConfig full = cmg;
    full.enable_rpc = true;

    auto rows = ablation_harness(
        {{"baseline", base}, {"+CMG", cmg}, {"+CMG+RPC", full}}, {1, 2, 3}, dataset);
    const double elapsed = seconds_since(start);
    std::ostringstream msg;
    msg << "medians " << rows[0].median << " / " << rows[1].median << " / "
        << rows[2].median << ", " << elapsed << " s";
    std::fprintf(stderr, "  criterion 6 detail: %s\n", msg.str().c_str());
    if (!(rows[0].median < rows[1].median && rows[1].median < rows[2].median))
        return "trend not strictly increasing: " + msg.str();
    if (rows[2].median < rows[0].median + 10.0)
        return "full pipeline gain below 10 mIoU points: " + msg.str();
    if (elapsed >= 15.0 * 60.0) return "runtime exceeds 15 min: " + msg.str();
    return {};
}

std::string criterion_adaptive_threshold() {
    auto dataset = generate_synthetic_dataset(standard_benchmark_spec(true), 30);
    TrainConfig adaptive = benchmark_config();
    // The inflated floor makes lr=1.0 collapse the classifier before the
    // threshold scheme matters; this set trains best a bit cooler.
    adaptive.learning_rate = 0.3;
    adaptive.eta = 0.8;
    adaptive.adaptive_threshold = true;
    TrainConfig fixed = adaptive;
    fixed.adaptive_threshold = false;
    auto rows =
        ablation_harness({{"adaptive", adaptive}, {"fixed", fixed}}, {1, 2, 3}, dataset);
    std::fprintf(stderr, "  criterion 7 detail: adaptive %.2f fixed %.2f\n", rows[0].median,
                 rows[1].median);
    if (rows[0].median < rows[1].median)
        return "adaptive " + std::to_string(rows[0].median) + " < fixed " +
               std::to_string(rows[1].median);
    return {};
}

std::string criterion_region_vs_point() {
    auto dataset = generate_synthetic_dataset(standard_benchmark_spec(), 30);
    TrainConfig region = benchmark_config();
    region.partition_mode = TrainConfig::PartitionMode::RegionGrowing;
    TrainConfig point = benchmark_config();
    point.partition_mode = TrainConfig::PartitionMode::Identity;
    auto rows = ablation_harness({{"region", region}, {"point", point}}, {1, 2, 3}, dataset);
    std::fprintf(stderr, "  criterion 8 detail: region %.2f point %.2f\n", rows[0].median,
                 rows[1].median);
    if (!(rows[0].median > rows[1].median))
        return "region " + std::to_string(rows[0].median) + " <= point " +
               std::to_string(rows[1].median);
    return {};
}

// ---------------------------------------------------------------------- 9
std::string criterion_mix3d_ema() {
    SyntheticSceneSpec spec;
    spec.points_per_surface = 40;
    spec.camera_count = 1;
    spec.seed = 9;
    auto a = generate_synthetic(spec, "a");
    spec.seed = 10;
    auto b = generate_synthetic(spec, "b");

    auto mixed = mix3d(a, b);
    for (std::size_t c = 0; c < a.scene_label.y.size(); ++c)
        if (mixed.mixed.scene_label.y[c] != (a.scene_label.y[c] | b.scene_label.y[c]))
            return "label union wrong";
    // origin map reconstructs both constituents exactly
    std::vector<Vec3> ra, rb;
    for (std::size_t i = 0; i < mixed.origin.size(); ++i)
        (mixed.origin[i] == 0 ? ra : rb).push_back(mixed.mixed.points[i]);
    if (ra.size() != a.points.size() || rb.size() != b.points.size())
        return "origin map sizes wrong";
    for (std::size_t i = 0; i < ra.size(); ++i)
        if (ra[i] != a.points[i]) return "origin map scrambles scene a";
    for (std::size_t i = 0; i < rb.size(); ++i)
        if (rb[i] != b.points[i]) return "origin map scrambles scene b";
    // self-mix doubles the cloud and keeps the tag
    auto self = mix3d(a, a);
    if (self.mixed.points.size() != 2 * a.points.size()) return "self-mix size wrong";
    if (self.mixed.scene_label.y != a.scene_label.y) return "self-mix changed the tag";

    Rng rng(1);
    auto student = make_point_network(4, rng);
    auto teacher = make_point_network(4, rng);
    const auto snapshot = teacher.backbone[0].weight->data;
    ema_update(teacher, student, 1.0);
    if (teacher.backbone[0].weight->data != snapshot) return "EMA m=1 moved the teacher";
    ema_update(teacher, student, 0.0);
    if (teacher.backbone[0].weight->data != student.backbone[0].weight->data)
        return "EMA m=0 is not a copy";
    return {};
}

// --------------------------------------------------------------------- 10
std::string criterion_evaluation_oracle() {
    Rng rng(1010);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t classes = 2 + rng.uniform_index(5);
        const std::size_t n = 1 + rng.uniform_index(60);
        std::vector<std::size_t> gt(n), pred(n);
        for (std::size_t i = 0; i < n; ++i) {
            gt[i] = rng.uniform_index(classes);
            pred[i] = rng.uniform_index(classes);
        }
        ConfusionMatrix cm(classes);
        accumulate(cm, gt, pred);
        auto report = iou_report(cm);
        // set-based reference
        double sum = 0.0;
        std::size_t defined = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            std::set<std::size_t> sg, sp;
            for (std::size_t i = 0; i < n; ++i) {
                if (gt[i] == c) sg.insert(i);
                if (pred[i] == c) sp.insert(i);
            }
            if (sg.empty() && sp.empty()) {
                if (!std::isnan(report.per_class_iou[c])) return "absent class not NaN";
                continue;
            }
            std::size_t inter = 0;
            for (auto i : sg) inter += sp.count(i);
            const double uni = static_cast<double>(sg.size() + sp.size() - inter);
            const double iou = static_cast<double>(inter) / uni;
            if (std::abs(report.per_class_iou[c] - iou) > 1e-12) return "per-class IoU mismatch";
            sum += iou;
            ++defined;
        }
        if (defined != report.defined_classes) return "defined-class count mismatch";
        if (std::abs(report.miou - sum / static_cast<double>(defined)) > 1e-12)
            return "mIoU mismatch";
    }
    ConfusionMatrix hand(2);
    hand.at(0, 0) = 2;
    hand.at(0, 1) = 1;
    hand.at(1, 0) = 1;
    hand.at(1, 1) = 2;
    if (std::abs(iou_report(hand).miou - 0.5) > 1e-15) return "hand case [[2,1],[1,2]] != 0.5";
    return {};
}

// --------------------------------------------------------------------- 11
std::string criterion_determinism() {
    SyntheticSceneSpec spec;
    spec.points_per_surface = 120;
    spec.camera_count = 2;
    spec.image_width = 16;
    spec.image_height = 12;
    spec.seed = 31;
    auto dataset = generate_synthetic_dataset(spec, 4);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.enable_mix3d = true;
    cfg.slab_classes = synthetic_slab_classes();
    cfg.region_cfg.min_region_size = 10;

    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "wpcl_acceptance_det";
    fs::create_directories(dir);
    std::string files[2];
    for (int run = 0; run < 2; ++run) {
        auto result = train_stage1(dataset, cfg);
        const fs::path ckpt = dir / ("run" + std::to_string(run) + ".ckpt");
        save_checkpoint(ckpt, result.model, cfg);
        auto labels = generate_pseudo_labels(result.model, dataset, cfg);
        const fs::path lab = dir / ("run" + std::to_string(run) + ".labels");
        save_labels(lab, labels[0]);
        std::ifstream c(ckpt, std::ios::binary), l(lab, std::ios::binary);
        files[run] = std::string((std::istreambuf_iterator<char>(c)), {}) + "\x1f" +
                     std::string((std::istreambuf_iterator<char>(l)), {});
    }
    fs::remove_all(dir);
    if (files[0] != files[1]) return "seeded reruns are not bit-identical";
    return {};
}

} // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> criteria = {
        {1, "gradient integrity", criterion_gradients},
        {2, "contrastive oracle", criterion_contrastive_oracle},
        {3, "threshold algebra", criterion_threshold_algebra},
        {4, "geometry round trips and occlusion", criterion_geometry},
        {5, "region growing plane counts", criterion_regions},
        {6, "main-components trend", criterion_main_trend},
        {7, "adaptive vs fixed threshold", criterion_adaptive_threshold},
        {8, "region vs point consistency", criterion_region_vs_point},
        {9, "mix3d and ema unit suite", criterion_mix3d_ema},
        {10, "evaluation oracle", criterion_evaluation_oracle},
        {11, "determinism", criterion_determinism},
    };

    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.number)) continue;
        std::string reason;
        try {
            reason = c.run();
        } catch (const std::exception& e) {
            reason = std::string("exception: ") + e.what();
        }
        if (reason.empty()) {
            std::printf("[PASS] criterion %2d: %s\n", c.number, c.name);
        } else {
            std::printf("[FAIL] criterion %2d: %s — %s\n", c.number, c.name, reason.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
