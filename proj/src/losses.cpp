#include "wpcl/losses.hpp"

#include <algorithm>
#include <cmath>

namespace wpcl {

void SceneLabel::validate() const {
    bool any = false;
    for (std::uint8_t v : y) {
        if (v > 1) throw LossError("scene label entries must be 0 or 1");
        any = any || v == 1;
    }
    if (!any) throw LossError("scene label must have at least one positive class");
}

SceneLabel SceneLabel::union_of(const SceneLabel& a, const SceneLabel& b) {
    if (a.y.size() != b.y.size()) throw LossError("scene label union: class count mismatch");
    SceneLabel out;
    out.y.resize(a.y.size());
    for (std::size_t c = 0; c < a.y.size(); ++c) out.y[c] = (a.y[c] | b.y[c]);
    return out;
}

Tensor scene_classification_loss(Tape& tape, const Tensor& logits, const SceneLabel& y) {
    if (logits->rows() == 0) throw LossError("scene_classification_loss: empty field");
    if (logits->cols() != y.y.size())
        throw LossError("scene_classification_loss: class count mismatch");
    std::vector<double> targets(y.y.begin(), y.y.end());
    Tensor pooled = tape.mean_rows(logits);
    return tape.bce_with_logits_mean(pooled, targets);
}

Tensor contrastive_distillation(Tape& tape, const Tensor& source_feats,
                                const Tensor& target_feats, double tau) {
    const std::size_t g = source_feats->rows();
    if (g == 0) throw LossError("contrastive_distillation: empty pair set");
    if (source_feats->shape != target_feats->shape)
        throw LossError("contrastive_distillation: shape mismatch");
    if (target_feats->requires_grad)
        throw LossError("contrastive_distillation: target features must be detached");
    const std::size_t d = source_feats->cols();
    auto check_unit = [&](const Tensor& t, const char* side) {
        for (std::size_t i = 0; i < g; ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double v = t->data[i * d + j];
                sq += v * v;
            }
            if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
                throw LossError(std::string("contrastive_distillation: ") + side +
                                " row not unit-norm");
        }
    };
    check_unit(source_feats, "source");
    check_unit(target_feats, "target");

    // sim[i,j] = s_i . t_j / tau via matmul with the transposed target.
    Tensor target_t = make_tensor({d, g});
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < d; ++j)
            target_t->data[j * g + i] = target_feats->data[i * d + j];
    Tensor sim = tape.scale(tape.matmul(source_feats, target_t), 1.0 / tau);
    return tape.info_nce(sim);
}

RegionalGuidance regional_vote(const std::vector<double>& probs_teacher,
                               std::size_t n, std::size_t class_count,
                               const RegionPartition& part) {
    if (probs_teacher.size() != n * class_count)
        throw LossError("regional_vote: probability row count mismatch");
    if (part.assignment.size() != n) throw LossError("regional_vote: partition size mismatch");
    const std::size_t m = part.region_count;
    RegionalGuidance out;
    out.region_count = m;
    out.class_count = class_count;
    out.region_probs.assign(m * class_count, 0.0);
    std::vector<double> counts(m, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        const std::size_t r = part.assignment[p];
        counts[r] += 1.0;
        for (std::size_t c = 0; c < class_count; ++c)
            out.region_probs[r * class_count + c] += probs_teacher[p * class_count + c];
    }
    std::vector<std::size_t> region_argmax(m, 0);
    for (std::size_t r = 0; r < m; ++r) {
        if (counts[r] > 0.0)
            for (std::size_t c = 0; c < class_count; ++c)
                out.region_probs[r * class_count + c] /= counts[r];
        std::size_t best = 0;
        for (std::size_t c = 1; c < class_count; ++c)
            if (out.region_probs[r * class_count + c] >
                out.region_probs[r * class_count + best])
                best = c; // ties stay at the lowest class index
        region_argmax[r] = best;
    }
    out.point_label.resize(n);
    out.point_conf.resize(n);
    out.excluded.assign(n, 0);
    for (std::size_t p = 0; p < n; ++p) {
        const std::size_t r = part.assignment[p];
        out.point_label[p] = region_argmax[r];
        out.point_conf[p] = out.region_probs[r * class_count + region_argmax[r]];
        if (part.unassigned_region && r == *part.unassigned_region) out.excluded[p] = 1;
    }
    return out;
}

ThresholdResult compute_threshold(const RegionalGuidance& guidance, double eta,
                                  const std::vector<double>* prior_counts,
                                  double momentum) {
    if (eta < 0.0 || eta > 1.0) throw LossError("compute_threshold: eta must be in [0, 1]");
    const std::size_t n = guidance.point_label.size();
    if (n == 0) throw LossError("compute_threshold: empty guidance");
    std::size_t c = guidance.class_count;
    if (c == 0) {
        for (std::size_t p = 0; p < n; ++p)
            c = std::max(c, guidance.point_label[p] + 1);
    }

    ThresholdResult out;
    out.threshold.eta = eta;
    out.threshold.counts.assign(c, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        if (!guidance.excluded.empty() && guidance.excluded[p]) continue;
        out.threshold.counts[guidance.point_label[p]] += 1.0;
    }
    if (prior_counts) {
        if (prior_counts->size() != c)
            throw LossError("compute_threshold: prior count length mismatch");
        for (std::size_t k = 0; k < c; ++k)
            out.threshold.counts[k] =
                momentum * (*prior_counts)[k] + (1.0 - momentum) * out.threshold.counts[k];
    }
    const double qmax = *std::max_element(out.threshold.counts.begin(),
                                          out.threshold.counts.end());
    if (qmax <= 0.0) throw LossError("compute_threshold: all counts zero");
    out.threshold.thresholds.resize(c);
    for (std::size_t k = 0; k < c; ++k)
        out.threshold.thresholds[k] = out.threshold.counts[k] / qmax * eta;

    out.mask.keep.assign(n, 0);
    for (std::size_t p = 0; p < n; ++p) {
        if (!guidance.excluded.empty() && guidance.excluded[p]) continue;
        if (guidance.point_conf[p] > out.threshold.thresholds[guidance.point_label[p]])
            out.mask.keep[p] = 1;
    }
    return out;
}

Tensor consistency_loss(Tape& tape, const Tensor& probs_student,
                        const RegionalGuidance& guidance, const SelectionMask& mask) {
    const std::size_t n = probs_student->rows();
    if (guidance.point_label.size() != n || mask.keep.size() != n)
        throw LossError("consistency_loss: size mismatch");
    std::vector<double> weights(n, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        weights[p] = (mask.keep[p] && !(p < guidance.excluded.size() && guidance.excluded[p]))
                         ? 1.0
                         : 0.0;
    return tape.weighted_nll(probs_student, guidance.point_label, weights,
                             static_cast<double>(n));
}

Tensor total_loss(Tape& tape, const LossParts& parts, const LossWeights& w) {
    if (w.alpha < 0.0 || w.beta < 0.0) throw LossError("total_loss: negative coefficient");
    auto finite = [](const Tensor& t) {
        if (!std::isfinite(t->data[0])) throw LossError("total_loss: non-finite part");
    };
    finite(parts.cls_3d);
    finite(parts.cls_2d);
    finite(parts.con_3d);
    finite(parts.con_2d);
    finite(parts.rpc_3d);
    finite(parts.rpc_2d);
    Tensor cls = tape.add(parts.cls_3d, parts.cls_2d);
    Tensor con = tape.scale(tape.add(parts.con_3d, parts.con_2d), w.alpha);
    Tensor rpc = tape.scale(tape.add(parts.rpc_3d, parts.rpc_2d), w.beta);
    return tape.add(tape.add(cls, con), rpc);
}

Tensor supervised_ce(Tape& tape, const Tensor& probs, const std::vector<std::size_t>& labels) {
    const std::size_t n = probs->rows();
    if (labels.size() != n) throw LossError("supervised_ce: label length mismatch");
    std::vector<std::size_t> safe_labels(n, 0);
    std::vector<double> weights(n, 0.0);
    double kept = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        if (labels[p] == kIgnoreLabel) continue;
        if (labels[p] >= probs->cols()) throw LossError("supervised_ce: label out of range");
        safe_labels[p] = labels[p];
        weights[p] = 1.0;
        kept += 1.0;
    }
    if (kept == 0.0) throw LossError("supervised_ce: all points ignored");
    return tape.weighted_nll(probs, safe_labels, weights, kept);
}

} // namespace wpcl
