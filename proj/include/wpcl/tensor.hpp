#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace wpcl {

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor value. Gradient storage is allocated only when
/// requires_grad is set; ops accumulate into it during Tape::backward.
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad; // nonempty iff requires_grad
    bool requires_grad = false;

    std::size_t numel() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
    void zero_grad();
};

using Tensor = std::shared_ptr<TensorNode>;

Tensor make_tensor(std::vector<std::size_t> shape, bool requires_grad = false);
Tensor make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                   bool requires_grad = false);
Tensor make_scalar(double value);

/// Records executed ops in order; backward replays them in exact reverse.
/// One backward pass per tape; reuse without reset() is an error.
class Tape {
public:
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor add_row(const Tensor& a, const Tensor& row); // row shape 1xC
    Tensor scale(const Tensor& a, double c);
    Tensor relu(const Tensor& a);
    Tensor log_clamped(const Tensor& a, double floor = 1e-12);
    Tensor softmax_rows(const Tensor& a);
    Tensor l2_normalize_rows(const Tensor& a);
    Tensor segment_mean(const Tensor& a, const std::vector<std::size_t>& ids,
                        std::size_t segment_count,
                        std::vector<std::uint8_t>* empty_flags = nullptr);
    Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
    Tensor mean_rows(const Tensor& a); // n x c -> 1 x c
    Tensor sum_all(const Tensor& a);
    Tensor mean_all(const Tensor& a);
    Tensor stop_gradient(const Tensor& a);

    /// Mean over classes of sigmoid binary cross-entropy between a pooled
    /// 1xC logit row and a 0/1 target vector. Stable log1p form.
    Tensor bce_with_logits_mean(const Tensor& pooled, const std::vector<double>& targets);

    /// sum_i [logsumexp(sim[i,:]) - sim[i,i]] over a g x g similarity matrix.
    Tensor info_nce(const Tensor& sim);

    /// -(1/normalizer) * sum_p weights[p] * log(max(probs[p, labels[p]], floor))
    Tensor weighted_nll(const Tensor& probs, const std::vector<std::size_t>& labels,
                        const std::vector<double>& weights, double normalizer,
                        double floor = 1e-12);

    void backward(const Tensor& loss);
    void reset();

private:
    std::vector<std::function<void()>> steps_;
    bool used_ = false;

    void record(std::function<void()> back) { steps_.push_back(std::move(back)); }
    static Tensor fresh(std::vector<std::size_t> shape, bool requires_grad);
};

void check_finite(const TensorNode& t, const char* op_name);

} // namespace wpcl
