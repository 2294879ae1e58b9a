#include "wpcl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace wpcl {

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.class_count != class_count) throw EvalError("merge: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    ignored += other.ignored;
}

void accumulate(ConfusionMatrix& cm, const std::vector<std::size_t>& gt,
                const std::vector<std::size_t>& pred) {
    if (gt.size() != pred.size()) throw EvalError("accumulate: length mismatch");
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == kIgnoreLabel) {
            ++cm.ignored;
            continue;
        }
        if (gt[i] >= cm.class_count || pred[i] >= cm.class_count)
            throw EvalError("accumulate: label out of range");
        ++cm.at(gt[i], pred[i]);
    }
}

IoUReport iou_report(const ConfusionMatrix& cm) {
    const std::size_t c = cm.class_count;
    IoUReport report;
    report.per_class_iou.assign(c, std::nan(""));
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        std::uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
        for (std::size_t j = 0; j < c; ++j) {
            if (j == k) continue;
            fn += cm.at(k, j);
            fp += cm.at(j, k);
        }
        const std::uint64_t denom = tp + fp + fn;
        if (denom == 0) continue; // class absent from gt and pred
        report.per_class_iou[k] = static_cast<double>(tp) / static_cast<double>(denom);
        sum += report.per_class_iou[k];
        ++report.defined_classes;
    }
    report.miou = report.defined_classes > 0 ? sum / report.defined_classes : 0.0;
    return report;
}

std::string format_report(const IoUReport& report, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    std::size_t width = 6;
    for (const auto& n : class_names) width = std::max(width, n.size() + 2);
    for (const auto& n : class_names) os << std::setw(static_cast<int>(width)) << n;
    os << std::setw(static_cast<int>(width)) << "mIoU" << "\n";
    for (double v : report.per_class_iou)
        os << std::setw(static_cast<int>(width)) << (std::isnan(v) ? std::string("-")
                                                                   : (std::ostringstream{}
                                                                          << std::fixed
                                                                          << std::setprecision(4)
                                                                          << v)
                                                                         .str());
    os << std::setw(static_cast<int>(width)) << report.miou << "\n";
    return os.str();
}

std::string format_report_csv(const IoUReport& report,
                              const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    for (const auto& n : class_names) os << n << ",";
    os << "miou\n";
    for (double v : report.per_class_iou) {
        if (std::isnan(v)) os << ",";
        else os << v << ",";
    }
    os << report.miou << "\n";
    return os.str();
}

double pseudo_label_miou(const std::vector<SceneSample>& dataset,
                         const std::vector<std::vector<std::size_t>>& labels,
                         std::size_t class_count) {
    if (labels.size() != dataset.size()) throw EvalError("pseudo_label_miou: size mismatch");
    ConfusionMatrix cm(class_count);
    for (std::size_t s = 0; s < dataset.size(); ++s) {
        if (dataset[s].gt_labels.empty())
            throw EvalError("pseudo_label_miou: scene without ground truth");
        accumulate(cm, dataset[s].gt_labels, labels[s]);
    }
    return iou_report(cm).miou * 100.0;
}

std::vector<AblationRow> ablation_harness(const std::vector<AblationConfig>& configs,
                                          const std::vector<std::uint64_t>& seeds,
                                          const std::vector<SceneSample>& dataset) {
    if (seeds.size() < 3) throw EvalError("ablation_harness: at least 3 seeds required");
    const std::size_t class_count = dataset.at(0).scene_label.class_count();
    // The cache only depends on the partitioning/correspondence settings, so
    // consecutive configs that agree on those share one build.
    auto geometry_key = [](const TrainConfig& c) {
        std::ostringstream os;
        os << static_cast<int>(c.partition_mode) << ' ' << c.region_cfg.knn << ' '
           << c.region_cfg.angle_threshold_deg << ' ' << c.region_cfg.color_threshold << ' '
           << c.region_cfg.min_region_size << ' ' << static_cast<int>(c.region_cfg.seed_order)
           << ' ' << c.depth_tolerance << ' ' << c.depth_test_correspondences;
        return os.str();
    };
    std::shared_ptr<SceneCache> cache;
    std::string cache_key;
    std::vector<AblationRow> rows;
    for (const auto& ac : configs) {
        ac.config.validate();
        const std::string key = geometry_key(ac.config);
        if (!cache || key != cache_key) {
            cache = build_scene_cache(dataset, ac.config);
            cache_key = key;
        }
        AblationRow row;
        row.name = ac.name;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = ac.config;
            cfg.seed = seed;
            TrainResult trained = train_stage1(dataset, cfg, cache.get());
            auto labels = generate_pseudo_labels(trained.model, dataset, cfg, cache.get());
            row.per_seed_miou.push_back(pseudo_label_miou(dataset, labels, class_count));
        }
        std::vector<double> sorted = row.per_seed_miou;
        std::sort(sorted.begin(), sorted.end());
        row.median = sorted[sorted.size() / 2];
        if (sorted.size() % 2 == 0)
            row.median = 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
        row.min = sorted.front();
        row.max = sorted.back();
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::size_t width = 10;
    for (const auto& r : rows) width = std::max(width, r.name.size() + 2);
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "config" << std::right
       << std::setw(10) << "median" << std::setw(10) << "min" << std::setw(10) << "max"
       << "\n";
    os << std::fixed << std::setprecision(2);
    for (const auto& r : rows)
        os << std::left << std::setw(static_cast<int>(width)) << r.name << std::right
           << std::setw(10) << r.median << std::setw(10) << r.min << std::setw(10) << r.max
           << "\n";
    return os.str();
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "config,median,min,max";
    if (!rows.empty())
        for (std::size_t i = 0; i < rows[0].per_seed_miou.size(); ++i) os << ",seed" << i;
    os << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& r : rows) {
        os << r.name << "," << r.median << "," << r.min << "," << r.max;
        for (double v : r.per_seed_miou) os << "," << v;
        os << "\n";
    }
    return os.str();
}

} // namespace wpcl
