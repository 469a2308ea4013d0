#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "actalign/array.hpp"
#include "actalign/error.hpp"

namespace actalign {

/// Compares reverse-mode gradients of a scalar-valued graph function against
/// central finite differences. Returns the max over all input coordinates of
/// |analytic - numeric| / max(1, |analytic|).
///
/// `f` must be pure: it is re-evaluated many times on perturbed copies.
inline double gradcheck(const std::function<Array(const std::vector<Array>&)>& f,
                        const std::vector<Array>& inputs, double h = 1e-5) {
    std::vector<Array> live;
    live.reserve(inputs.size());
    for (const auto& in : inputs)
        live.push_back(Array::from(in.shape(), {in.values().begin(), in.values().end()})
                           .set_requires_grad(true));

    Array out = f(live);
    if (out.size() != 1) throw dim_error("gradcheck: f must produce a scalar");
    if (!std::isfinite(out.item())) throw numeric_error("gradcheck: non-finite f value");
    out.backward();

    double max_rel = 0.0;
    for (size_t i = 0; i < live.size(); ++i) {
        std::vector<double> analytic(live[i].size(), 0.0);
        if (live[i].has_grad())
            analytic.assign(live[i].grad().begin(), live[i].grad().end());
        for (size_t j = 0; j < analytic.size(); ++j) {
            auto eval_at = [&](double delta) {
                std::vector<Array> probe;
                probe.reserve(live.size());
                for (size_t t = 0; t < live.size(); ++t)
                    probe.push_back(Array::from(
                        live[t].shape(), {live[t].values().begin(), live[t].values().end()}));
                probe[i].mut_values()[j] += delta;
                double v = f(probe).item();
                if (!std::isfinite(v))
                    throw numeric_error("gradcheck: non-finite f value at perturbation");
                return v;
            };
            double numeric = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            double rel = std::abs(analytic[j] - numeric) /
                         std::max(1.0, std::abs(analytic[j]));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace actalign
