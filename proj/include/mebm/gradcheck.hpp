#pragma once

// Central finite-difference check of autodiff gradients.

#include "mebm/tensor.hpp"

#include <functional>

namespace mebm {

template <class T>
using ScalarFunction = std::function<Tensor<T>(const Tensor<T>&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at worst_index
    double numeric = 0.0;
};

/// Compares d f / d x from backward() against
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate i.
/// The error per coordinate is |a - n| / max(1e-8, |a| + |n|).
template <class T = double>
GradCheckResult finite_diff_check_detailed(const ScalarFunction<T>& f, const Tensor<T>& x, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
    auto leaf = Tensor<T>::from(x.shape(), std::vector<T>(x.data().begin(), x.data().end()), true);
    auto out = f(leaf);
    if (out.size() != 1) throw std::invalid_argument("finite_diff_check: f must be scalar-valued");
    std::vector<T> analytic(leaf.size(), T{0});
    if (out.requires_grad()) {
        backward(out);
        if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());
    }
    GradCheckResult result;
    std::vector<T> probe(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const T original = probe[i];
        probe[i] = static_cast<T>(original + eps);
        const double up = f(Tensor<T>::from(x.shape(), probe)).item();
        probe[i] = static_cast<T>(original - eps);
        const double down = f(Tensor<T>::from(x.shape(), probe)).item();
        probe[i] = original;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[i];
        const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        if (i == 0 || err > result.max_rel_error) result = {err, i, a, numeric};
    }
    return result;
}

/// Max relative error between autodiff and central differences.
template <class T = double>
double finite_diff_check(const ScalarFunction<T>& f, const Tensor<T>& x, double eps) {
    return finite_diff_check_detailed<T>(f, x, eps).max_rel_error;
}

/// Same check for leaves that `loss` reads in place, such as model
/// parameters. Each leaf is perturbed through mutable_data() and restored.
template <class T = double>
GradCheckResult finite_diff_check_leaves(const std::function<Tensor<T>()>& loss, std::vector<Tensor<T>> leaves,
                                         double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
    for (auto& leaf : leaves) leaf.zero_grad();
    auto out = loss();
    if (out.size() != 1) throw std::invalid_argument("finite_diff_check: loss must be scalar-valued");
    if (out.requires_grad()) backward(out);
    GradCheckResult result;
    bool first = true;
    std::size_t offset = 0;
    for (auto& leaf : leaves) {
        std::vector<T> analytic(leaf.size(), T{0});
        if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());
        auto values = leaf.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const T original = values[i];
            values[i] = static_cast<T>(original + eps);
            const double up = loss().item();
            values[i] = static_cast<T>(original - eps);
            const double down = loss().item();
            values[i] = original;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[i];
            const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            if (first || err > result.max_rel_error) result = {err, offset + i, a, numeric};
            first = false;
        }
        offset += values.size();
    }
    return result;
}

}  // namespace mebm
