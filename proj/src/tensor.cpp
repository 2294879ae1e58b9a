#include "wpcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wpcl {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw TensorError(msg);
}

bool wants_grad(const Tensor& a) { return a->requires_grad; }

} // namespace

void TensorNode::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

Tensor make_tensor(std::vector<std::size_t> shape, bool requires_grad) {
    auto t = std::make_shared<TensorNode>();
    t->shape = std::move(shape);
    t->data.assign(shape_product(t->shape), 0.0);
    t->requires_grad = requires_grad;
    if (requires_grad) t->grad.assign(t->data.size(), 0.0);
    return t;
}

Tensor make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                   bool requires_grad) {
    auto t = std::make_shared<TensorNode>();
    t->shape = std::move(shape);
    require(data.size() == shape_product(t->shape), "tensor data length does not match shape");
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    if (requires_grad) t->grad.assign(t->data.size(), 0.0);
    return t;
}

Tensor make_scalar(double value) {
    return make_tensor({1}, std::vector<double>{value});
}

void check_finite(const TensorNode& t, const char* op_name) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw TensorError(std::string("non-finite value after ") + op_name);
}

Tensor Tape::fresh(std::vector<std::size_t> shape, bool requires_grad) {
    return make_tensor(std::move(shape), requires_grad);
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    require(a->shape.size() == 2 && b->shape.size() == 2, "matmul: 2-d tensors required");
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    require(b->shape[0] == k, "matmul: inner dimensions mismatch");
    Tensor out = fresh({m, n}, wants_grad(a) || wants_grad(b));
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a->data.data() + i * k;
        double* orow = out->data.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b->data.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    check_finite(*out, "matmul");
    record([a, b, out, m, k, n]() {
        if (a->requires_grad) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    const double* g = out->grad.data() + i * n;
                    const double* brow = b->data.data() + kk * n;
                    for (std::size_t j = 0; j < n; ++j) acc += g[j] * brow[j];
                    a->grad[i * k + kk] += acc;
                }
        }
        if (b->requires_grad) {
            for (std::size_t i = 0; i < m; ++i) {
                const double* g = out->grad.data() + i * n;
                const double* arow = a->data.data() + i * k;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double* brow = b->grad.data() + kk * n;
                    const double av = arow[kk];
                    for (std::size_t j = 0; j < n; ++j) brow[j] += av * g[j];
                }
            }
        }
    });
    return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    require(a->shape == b->shape, "add: shape mismatch");
    Tensor out = fresh(a->shape, wants_grad(a) || wants_grad(b));
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
    check_finite(*out, "add");
    record([a, b, out]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i];
    });
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    require(a->shape == b->shape, "sub: shape mismatch");
    Tensor out = fresh(a->shape, wants_grad(a) || wants_grad(b));
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] - b->data[i];
    check_finite(*out, "sub");
    record([a, b, out]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] -= out->grad[i];
    });
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    require(a->shape == b->shape, "mul: shape mismatch");
    Tensor out = fresh(a->shape, wants_grad(a) || wants_grad(b));
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
    check_finite(*out, "mul");
    record([a, b, out]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * b->data[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i] * a->data[i];
    });
    return out;
}

Tensor Tape::add_row(const Tensor& a, const Tensor& row) {
    require(a->shape.size() == 2 && row->shape.size() == 2 && row->shape[0] == 1,
            "add_row: matrix and 1xC row required");
    require(a->shape[1] == row->shape[1], "add_row: column mismatch");
    const std::size_t n = a->shape[0], c = a->shape[1];
    Tensor out = fresh(a->shape, wants_grad(a) || wants_grad(row));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out->data[i * c + j] = a->data[i * c + j] + row->data[j];
    check_finite(*out, "add_row");
    record([a, row, out, n, c]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < n * c; ++i) a->grad[i] += out->grad[i];
        if (row->requires_grad)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) row->grad[j] += out->grad[i * c + j];
    });
    return out;
}

Tensor Tape::scale(const Tensor& a, double cfac) {
    Tensor out = fresh(a->shape, wants_grad(a));
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * cfac;
    check_finite(*out, "scale");
    record([a, out, cfac]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * cfac;
    });
    return out;
}

Tensor Tape::relu(const Tensor& a) {
    Tensor out = fresh(a->shape, wants_grad(a));
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::max(0.0, a->data[i]);
    check_finite(*out, "relu");
    record([a, out]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < out->numel(); ++i)
                if (a->data[i] > 0.0) a->grad[i] += out->grad[i];
    });
    return out;
}

Tensor Tape::log_clamped(const Tensor& a, double floor) {
    Tensor out = fresh(a->shape, wants_grad(a));
    for (std::size_t i = 0; i < out->numel(); ++i)
        out->data[i] = std::log(std::max(a->data[i], floor));
    check_finite(*out, "log_clamped");
    record([a, out, floor]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < out->numel(); ++i)
                if (a->data[i] > floor) a->grad[i] += out->grad[i] / a->data[i];
    });
    return out;
}

Tensor Tape::softmax_rows(const Tensor& a) {
    require(a->shape.size() == 2 && a->shape[1] >= 1, "softmax_rows: n x c tensor required");
    check_finite(*a, "softmax_rows input");
    const std::size_t n = a->shape[0], c = a->shape[1];
    Tensor out = fresh(a->shape, wants_grad(a));
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = a->data.data() + i * c;
        double* y = out->data.data() + i * c;
        double mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (std::size_t j = 0; j < c; ++j) y[j] /= sum;
    }
    check_finite(*out, "softmax_rows");
    record([a, out, n, c]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            const double* y = out->data.data() + i * c;
            const double* g = out->grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < c; ++j) a->grad[i * c + j] += y[j] * (g[j] - dot);
        }
    });
    return out;
}

Tensor Tape::l2_normalize_rows(const Tensor& a) {
    require(a->shape.size() == 2, "l2_normalize_rows: n x d tensor required");
    const std::size_t n = a->shape[0], d = a->shape[1];
    Tensor out = fresh(a->shape, wants_grad(a));
    auto norms = std::make_shared<std::vector<double>>(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = a->data.data() + i * d;
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += x[j] * x[j];
        double norm = std::sqrt(sq);
        (*norms)[i] = norm;
        double* y = out->data.data() + i * d;
        if (norm < 1e-12) {
            std::fill(y, y + d, 0.0);
        } else {
            for (std::size_t j = 0; j < d; ++j) y[j] = x[j] / norm;
        }
    }
    check_finite(*out, "l2_normalize_rows");
    record([a, out, norms, n, d]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            const double norm = (*norms)[i];
            if (norm < 1e-12) continue;
            const double* y = out->data.data() + i * d;
            const double* g = out->grad.data() + i * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < d; ++j)
                a->grad[i * d + j] += (g[j] - y[j] * dot) / norm;
        }
    });
    return out;
}

Tensor Tape::segment_mean(const Tensor& a, const std::vector<std::size_t>& ids,
                          std::size_t segment_count,
                          std::vector<std::uint8_t>* empty_flags) {
    require(a->shape.size() == 2, "segment_mean: n x c tensor required");
    const std::size_t n = a->shape[0], c = a->shape[1];
    require(ids.size() == n, "segment_mean: ids length mismatch");
    for (std::size_t id : ids)
        require(id < segment_count, "segment_mean: segment id out of range");
    auto counts = std::make_shared<std::vector<double>>(segment_count, 0.0);
    for (std::size_t id : ids) (*counts)[id] += 1.0;
    if (empty_flags) {
        empty_flags->assign(segment_count, 0);
        for (std::size_t s = 0; s < segment_count; ++s)
            if ((*counts)[s] == 0.0) (*empty_flags)[s] = 1;
    }
    Tensor out = fresh({segment_count, c}, wants_grad(a));
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = a->data.data() + i * c;
        double* y = out->data.data() + ids[i] * c;
        for (std::size_t j = 0; j < c; ++j) y[j] += x[j];
    }
    for (std::size_t s = 0; s < segment_count; ++s) {
        if ((*counts)[s] == 0.0) continue;
        double* y = out->data.data() + s * c;
        for (std::size_t j = 0; j < c; ++j) y[j] /= (*counts)[s];
    }
    check_finite(*out, "segment_mean");
    auto ids_copy = std::make_shared<std::vector<std::size_t>>(ids);
    record([a, out, ids_copy, counts, n, c]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t s = (*ids_copy)[i];
            const double inv = 1.0 / (*counts)[s];
            for (std::size_t j = 0; j < c; ++j)
                a->grad[i * c + j] += out->grad[s * c + j] * inv;
        }
    });
    return out;
}

Tensor Tape::gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    require(a->shape.size() == 2, "gather_rows: n x c tensor required");
    const std::size_t c = a->shape[1];
    for (std::size_t i : idx) require(i < a->shape[0], "gather_rows: index out of range");
    Tensor out = fresh({idx.size(), c}, wants_grad(a));
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(a->data.data() + idx[i] * c, c, out->data.data() + i * c);
    auto idx_copy = std::make_shared<std::vector<std::size_t>>(idx);
    record([a, out, idx_copy, c]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < idx_copy->size(); ++i) {
            const std::size_t src = (*idx_copy)[i];
            for (std::size_t j = 0; j < c; ++j)
                a->grad[src * c + j] += out->grad[i * c + j];
        }
    });
    return out;
}

Tensor Tape::mean_rows(const Tensor& a) {
    require(a->shape.size() == 2 && a->shape[0] >= 1, "mean_rows: nonempty n x c tensor required");
    const std::size_t n = a->shape[0], c = a->shape[1];
    Tensor out = fresh({1, c}, wants_grad(a));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[j] += a->data[i * c + j];
    for (std::size_t j = 0; j < c; ++j) out->data[j] /= static_cast<double>(n);
    check_finite(*out, "mean_rows");
    record([a, out, n, c]() {
        if (!a->requires_grad) return;
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) a->grad[i * c + j] += out->grad[j] * inv;
    });
    return out;
}

Tensor Tape::sum_all(const Tensor& a) {
    Tensor out = fresh({1}, wants_grad(a));
    out->data[0] = std::accumulate(a->data.begin(), a->data.end(), 0.0);
    check_finite(*out, "sum_all");
    record([a, out]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[0];
    });
    return out;
}

Tensor Tape::mean_all(const Tensor& a) {
    require(a->numel() >= 1, "mean_all: empty tensor");
    Tensor out = fresh({1}, wants_grad(a));
    out->data[0] = std::accumulate(a->data.begin(), a->data.end(), 0.0) /
                   static_cast<double>(a->numel());
    check_finite(*out, "mean_all");
    record([a, out]() {
        if (!a->requires_grad) return;
        const double inv = 1.0 / static_cast<double>(a->numel());
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[0] * inv;
    });
    return out;
}

Tensor Tape::stop_gradient(const Tensor& a) {
    Tensor out = fresh(a->shape, false);
    out->data = a->data;
    return out;
}

Tensor Tape::bce_with_logits_mean(const Tensor& pooled, const std::vector<double>& targets) {
    require(pooled->shape.size() == 2 && pooled->shape[0] == 1,
            "bce_with_logits_mean: 1 x C logits required");
    const std::size_t c = pooled->shape[1];
    require(targets.size() == c, "bce_with_logits_mean: target length mismatch");
    Tensor out = fresh({1}, wants_grad(pooled));
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        const double x = pooled->data[j], y = targets[j];
        total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    out->data[0] = total / static_cast<double>(c);
    check_finite(*out, "bce_with_logits_mean");
    auto t = std::make_shared<std::vector<double>>(targets);
    record([pooled, out, t, c]() {
        if (!pooled->requires_grad) return;
        const double g = out->grad[0] / static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) {
            const double sig = 1.0 / (1.0 + std::exp(-pooled->data[j]));
            pooled->grad[j] += g * (sig - (*t)[j]);
        }
    });
    return out;
}

Tensor Tape::info_nce(const Tensor& sim) {
    require(sim->shape.size() == 2 && sim->shape[0] == sim->shape[1] && sim->shape[0] >= 1,
            "info_nce: square similarity matrix required");
    const std::size_t g = sim->shape[0];
    Tensor out = fresh({1}, wants_grad(sim));
    double total = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
        const double* row = sim->data.data() + i * g;
        double mx = row[0];
        for (std::size_t j = 1; j < g; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < g; ++j) sum += std::exp(row[j] - mx);
        total += mx + std::log(sum) - row[i];
    }
    out->data[0] = total;
    check_finite(*out, "info_nce");
    record([sim, out, g]() {
        if (!sim->requires_grad) return;
        const double gscale = out->grad[0];
        for (std::size_t i = 0; i < g; ++i) {
            const double* row = sim->data.data() + i * g;
            double mx = row[0];
            for (std::size_t j = 1; j < g; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < g; ++j) sum += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < g; ++j) {
                double p = std::exp(row[j] - mx) / sum;
                sim->grad[i * g + j] += gscale * (p - (i == j ? 1.0 : 0.0));
            }
        }
    });
    return out;
}

Tensor Tape::weighted_nll(const Tensor& probs, const std::vector<std::size_t>& labels,
                          const std::vector<double>& weights, double normalizer,
                          double floor) {
    require(probs->shape.size() == 2, "weighted_nll: n x C probabilities required");
    const std::size_t n = probs->shape[0], c = probs->shape[1];
    require(labels.size() == n && weights.size() == n, "weighted_nll: length mismatch");
    require(normalizer > 0.0, "weighted_nll: nonpositive normalizer");
    for (std::size_t l : labels) require(l < c, "weighted_nll: label out of range");
    Tensor out = fresh({1}, wants_grad(probs));
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p)
        total -= weights[p] * std::log(std::max(probs->data[p * c + labels[p]], floor));
    out->data[0] = total / normalizer;
    check_finite(*out, "weighted_nll");
    auto lab = std::make_shared<std::vector<std::size_t>>(labels);
    auto wts = std::make_shared<std::vector<double>>(weights);
    record([probs, out, lab, wts, normalizer, floor, n, c]() {
        if (!probs->requires_grad) return;
        const double g = out->grad[0] / normalizer;
        for (std::size_t p = 0; p < n; ++p) {
            const double v = probs->data[p * c + (*lab)[p]];
            if (v > floor)
                probs->grad[p * c + (*lab)[p]] -= g * (*wts)[p] / v;
        }
    });
    return out;
}

void Tape::backward(const Tensor& loss) {
    if (used_) throw TensorError("tape backward called twice without reset");
    if (loss->numel() != 1) throw TensorError("backward requires a scalar loss");
    used_ = true;
    if (!loss->requires_grad) return; // constant loss, nothing to propagate
    loss->grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void Tape::reset() {
    steps_.clear();
    used_ = false;
}

} // namespace wpcl
