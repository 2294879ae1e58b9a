#pragma once

#include "wpcl/pipeline.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace wpcl {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Row = ground truth, column = prediction; ignore-marked ground truth is
/// counted separately and never enters the matrix.
struct ConfusionMatrix {
    std::size_t class_count = 0;
    std::vector<std::uint64_t> counts; // C x C row-major
    std::uint64_t ignored = 0;

    explicit ConfusionMatrix(std::size_t c = 0) : class_count(c), counts(c * c, 0) {}
    std::uint64_t& at(std::size_t gt, std::size_t pred) {
        return counts[gt * class_count + pred];
    }
    std::uint64_t at(std::size_t gt, std::size_t pred) const {
        return counts[gt * class_count + pred];
    }
    void merge(const ConfusionMatrix& other);
};

struct IoUReport {
    std::vector<double> per_class_iou; // NaN marks classes absent from gt and pred
    double miou = 0.0;
    std::size_t defined_classes = 0;
};

void accumulate(ConfusionMatrix& cm, const std::vector<std::size_t>& gt,
                const std::vector<std::size_t>& pred);

IoUReport iou_report(const ConfusionMatrix& cm);

std::string format_report(const IoUReport& report, const std::vector<std::string>& class_names);
std::string format_report_csv(const IoUReport& report, const std::vector<std::string>& class_names);

/// mIoU of pseudo-labels against ground truth over a whole dataset.
double pseudo_label_miou(const std::vector<SceneSample>& dataset,
                         const std::vector<std::vector<std::size_t>>& labels,
                         std::size_t class_count);

struct AblationRow {
    std::string name;
    std::vector<double> per_seed_miou;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct AblationConfig {
    std::string name;
    TrainConfig config;
};

/// Runs stage-1 + pseudo-label generation per config x seed and reports the
/// per-config median mIoU against synthetic ground truth.
std::vector<AblationRow> ablation_harness(const std::vector<AblationConfig>& configs,
                                          const std::vector<std::uint64_t>& seeds,
                                          const std::vector<SceneSample>& dataset);

std::string format_ablation_table(const std::vector<AblationRow>& rows);
std::string format_ablation_csv(const std::vector<AblationRow>& rows);

} // namespace wpcl
