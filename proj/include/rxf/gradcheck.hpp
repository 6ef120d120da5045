#pragma once

#include "rxf/tensor.hpp"

namespace rxf {

// max over entries of |analytic - central difference| / max(|analytic|, |numeric|, 1e-12).
// f must be scalar-valued and deterministic; run with T = double for the
// stated tolerances. Non-deterministic f gives an undefined result.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double eps) {
    Tape<T> tape;
    Tensor<T> xw = tape.watch(x);
    Tensor<T> y = f(xw);
    if (y.size() != 1) throw UsageError("finite_diff_check: f must be scalar-valued");
    GradientMap<T> grads = tape.backward(y);
    Tensor<T> analytic = grads.grad(xw);

    Tensor<T> probe = x.clone();
    double max_rel = 0.0;
    for (long long i = 0; i < x.size(); ++i) {
        const T saved = (*probe.values)[i];
        (*probe.values)[i] = saved + static_cast<T>(eps);
        const double fp = static_cast<double>(f(probe).item());
        (*probe.values)[i] = saved - static_cast<T>(eps);
        const double fm = static_cast<double>(f(probe).item());
        (*probe.values)[i] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = static_cast<double>((*analytic.values)[i]);
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// Same check restricted to selected coordinates of x, against a precomputed
// analytic gradient; used for sampled checks of large parameter tensors where
// the scalar function is re-evaluated from scratch on each probe.
template <typename T>
double finite_diff_check_coords(const std::function<double()>& scalar_eval, Tensor<T>& x,
                                const std::vector<T>& analytic, const std::vector<long long>& coords, double eps) {
    double max_rel = 0.0;
    for (long long i : coords) {
        const T saved = (*x.values)[i];
        (*x.values)[i] = saved + static_cast<T>(eps);
        const double fp = scalar_eval();
        (*x.values)[i] = saved - static_cast<T>(eps);
        const double fm = scalar_eval();
        (*x.values)[i] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = static_cast<double>(analytic[static_cast<size_t>(i)]);
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

} // namespace rxf
