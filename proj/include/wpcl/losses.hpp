#pragma once

#include "wpcl/regions.hpp"
#include "wpcl/tensor.hpp"

#include <cstdint>
#include <vector>

namespace wpcl {

class LossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Scene-level multi-label tag: which of the C classes occur anywhere.
struct SceneLabel {
    std::vector<std::uint8_t> y;

    std::size_t class_count() const { return y.size(); }
    void validate() const;
    static SceneLabel union_of(const SceneLabel& a, const SceneLabel& b);
};

/// Region-averaged teacher guidance broadcast back to points: per-point class
/// label (argmax of the owning region's mean probabilities, ties to the
/// lowest class index) and the confidence at that class.
struct RegionalGuidance {
    std::vector<double> region_probs; // M x C row-major
    std::size_t region_count = 0;
    std::size_t class_count = 0;
    std::vector<std::size_t> point_label; // length n
    std::vector<double> point_conf;       // length n
    // Points in a pixel partition's unassigned region; excluded from
    // consistency supervision.
    std::vector<std::uint8_t> excluded;
};

struct AdaptiveThreshold {
    double eta = 0.8;
    std::vector<double> counts;     // Q, per class
    std::vector<double> thresholds; // T[c] = Q[c]/max(Q) * eta
};

struct SelectionMask {
    std::vector<std::uint8_t> keep; // K[p] = 1 iff conf[p] > T[label[p]]
};

struct LossWeights {
    double alpha = 0.05;
    double beta = 1.0;
};

/// Average-pools per-point logits into a scene score, then mean per-class
/// sigmoid binary cross-entropy against the scene tag.
Tensor scene_classification_loss(Tape& tape, const Tensor& logits, const SceneLabel& y);

/// InfoNCE over g sampled pairs of unit-norm features; target side must be
/// detached by the caller. Sum over pairs, not mean.
Tensor contrastive_distillation(Tape& tape, const Tensor& source_feats,
                                const Tensor& target_feats, double tau);

/// Region-mean teacher probabilities with argmax guidance per point. Teacher
/// probabilities are plain values and carry no gradient.
RegionalGuidance regional_vote(const std::vector<double>& probs_teacher,
                               std::size_t n, std::size_t class_count,
                               const RegionPartition& part);

struct ThresholdResult {
    AdaptiveThreshold threshold;
    SelectionMask mask;
};

/// Per-class counts Q from the guidance labels, thresholds T = Q/max(Q)*eta,
/// and the strict-inequality selection mask. Optional prior_counts blends a
/// running count Q_used = momentum*prior + (1-momentum)*Q for the
/// running-statistics mode.
ThresholdResult compute_threshold(const RegionalGuidance& guidance, double eta,
                                  const std::vector<double>* prior_counts = nullptr,
                                  double momentum = 0.9);

/// -(1/n) * sum_p K[p] * log S_s[p, label[p]]; normalized by total n.
Tensor consistency_loss(Tape& tape, const Tensor& probs_student,
                        const RegionalGuidance& guidance, const SelectionMask& mask);

struct LossParts {
    Tensor cls_3d, cls_2d, con_3d, con_2d, rpc_3d, rpc_2d;
};

/// L = cls3d + cls2d + alpha*(con3d + con2d) + beta*(rpc3d + rpc2d).
Tensor total_loss(Tape& tape, const LossParts& parts, const LossWeights& w);

constexpr std::size_t kIgnoreLabel = static_cast<std::size_t>(-1);

/// Mean cross-entropy over non-ignored points, on probability rows.
Tensor supervised_ce(Tape& tape, const Tensor& probs, const std::vector<std::size_t>& labels);

} // namespace wpcl
