#pragma once

#include "wpcl/tensor.hpp"

#include <cmath>
#include <functional>

namespace wpcl {

struct GradCheckResult {
    double max_rel_error = 0.0;
    bool pass = true;
};

/// Compares tape gradients of a scalar-valued function against central finite
/// differences, perturbing every element of every leaf. The forward function
/// must rebuild its graph from the leaves on each call.
inline GradCheckResult gradcheck(const std::function<Tensor(Tape&)>& forward,
                                 const std::vector<Tensor>& leaves,
                                 double eps = 1e-4, double tol = 1e-5) {
    for (const auto& leaf : leaves) leaf->zero_grad();
    {
        Tape tape;
        Tensor loss = forward(tape);
        tape.backward(loss);
    }
    GradCheckResult result;
    for (const auto& leaf : leaves) {
        for (std::size_t i = 0; i < leaf->numel(); ++i) {
            const double saved = leaf->data[i];
            leaf->data[i] = saved + eps;
            Tape tp;
            const double up = forward(tp)->data[0];
            leaf->data[i] = saved - eps;
            Tape tm;
            const double down = forward(tm)->data[0];
            leaf->data[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = leaf->grad[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1.0});
            const double rel = std::abs(numeric - analytic) / denom;
            result.max_rel_error = std::max(result.max_rel_error, rel);
        }
    }
    result.pass = result.max_rel_error < tol;
    return result;
}

} // namespace wpcl
