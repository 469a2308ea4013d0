#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "actalign/array.hpp"
#include "actalign/error.hpp"
#include "actalign/ops.hpp"

namespace actalign {

// Temporal alignment between an ordered token sequence and an ordered phrase
// sequence: cosine cost matrix, differentiable soft DTW, exact hard DTW with
// path recovery, an order-sensitivity hinge, and the normalized path-cost
// diagnostic.

/// Cosine-distance cost matrix: C[i][j] = 1 - cos(s_i, v_j), entries in [0, 2].
/// Differentiable through both inputs; degenerate rows are rejected upstream
/// by the cosine op.
inline Array cost_matrix(const Array& tokens, const Array& phrases) {
    return add_scalar(neg(cosine_matrix(tokens, phrases)), 1.0);
}

namespace detail {

inline double softmin3(double a, double b, double c, double gamma) {
    // -g*log(exp(-a/g) + exp(-b/g) + exp(-c/g)), max-shifted for stability.
    double mn = std::min({a, b, c});
    double s = std::exp(-(a - mn) / gamma) + std::exp(-(b - mn) / gamma) +
               std::exp(-(c - mn) / gamma);
    return mn - gamma * std::log(s);
}

/// Forward soft-DTW recursion. `cost` is row-major k x m; returns the full
/// r table (same layout).
inline std::vector<double> soft_dtw_table(const std::vector<double>& cost, int k, int m,
                                          double gamma) {
    std::vector<double> r(static_cast<size_t>(k) * m);
    auto C = [&](int i, int j) { return cost[static_cast<size_t>(i) * m + j]; };
    auto R = [&](int i, int j) -> double& { return r[static_cast<size_t>(i) * m + j]; };
    R(0, 0) = C(0, 0);
    for (int i = 1; i < k; ++i) R(i, 0) = C(i, 0) + R(i - 1, 0);
    for (int j = 1; j < m; ++j) R(0, j) = C(0, j) + R(0, j - 1);
    for (int i = 1; i < k; ++i)
        for (int j = 1; j < m; ++j)
            R(i, j) = C(i, j) + softmin3(R(i - 1, j), R(i, j - 1), R(i - 1, j - 1), gamma);
    return r;
}

/// Expected path occupancy E[i][j] = d(soft value)/d(cost[i][j]), computed by
/// the standard reverse recursion over the r table. All exponents are <= 0 by
/// construction, so no extra stabilization is needed.
inline std::vector<double> soft_dtw_occupancy(const std::vector<double>& cost,
                                              const std::vector<double>& r, int k, int m,
                                              double gamma) {
    std::vector<double> e(static_cast<size_t>(k) * m, 0.0);
    auto C = [&](int i, int j) { return cost[static_cast<size_t>(i) * m + j]; };
    auto R = [&](int i, int j) { return r[static_cast<size_t>(i) * m + j]; };
    auto E = [&](int i, int j) -> double& { return e[static_cast<size_t>(i) * m + j]; };
    E(k - 1, m - 1) = 1.0;
    for (int i = k - 1; i >= 0; --i)
        for (int j = m - 1; j >= 0; --j) {
            if (i == k - 1 && j == m - 1) continue;
            double acc = 0.0;
            if (i + 1 < k)
                acc += std::exp((R(i + 1, j) - R(i, j) - C(i + 1, j)) / gamma) * E(i + 1, j);
            if (j + 1 < m)
                acc += std::exp((R(i, j + 1) - R(i, j) - C(i, j + 1)) / gamma) * E(i, j + 1);
            if (i + 1 < k && j + 1 < m)
                acc += std::exp((R(i + 1, j + 1) - R(i, j) - C(i + 1, j + 1)) / gamma) *
                       E(i + 1, j + 1);
            E(i, j) = acc;
        }
    return e;
}

}  // namespace detail

/// Differentiable soft-DTW value of a cost matrix. The gradient with respect
/// to the costs is the expected-occupancy table from the reverse DP, not a
/// node-by-node differentiation of the forward recursion.
inline Array soft_dtw(const Array& cost, double gamma) {
    detail::check_matrix(cost, "soft_dtw");
    if (gamma <= 0.0) throw config_error("soft_dtw: smoothing gamma must be > 0");
    for (double v : cost.values())
        if (!std::isfinite(v)) throw numeric_error("soft_dtw: non-finite cost entry");
    const int k = cost.dim(0), m = cost.dim(1);
    std::vector<double> cvals(cost.values().begin(), cost.values().end());
    std::vector<double> r = detail::soft_dtw_table(cvals, k, m, gamma);

    auto out = detail::make_op_node({1}, "soft_dtw", {cost.node()});
    out->values[0] = r[static_cast<size_t>(k) * m - 1];
    if (out->requires_grad)
        out->backward_fn = [cn = cost.node(), cvals = std::move(cvals), r = std::move(r), k,
                            m, gamma](Node& self) {
            std::vector<double> occ = detail::soft_dtw_occupancy(cvals, r, k, m, gamma);
            cn->ensure_grad();
            for (size_t i = 0; i < occ.size(); ++i) cn->grad[i] += self.grad[0] * occ[i];
        };
    return Array(out);
}

struct HardDtwResult {
    double value = 0.0;
    std::vector<std::pair<int, int>> path;  // (0,0) .. (k-1,m-1), monotone steps
};

/// Exact min-cost monotone path by dynamic programming, with the path
/// recovered through backpointers. Ties prefer diagonal, then the row step,
/// then the column step. Guarded at k*m <= 1e6.
inline HardDtwResult hard_dtw_oracle(const std::vector<double>& cost, int k, int m) {
    if (k < 1 || m < 1) throw dim_error("hard_dtw_oracle: empty cost matrix");
    if (static_cast<size_t>(k) * m != cost.size())
        throw dim_error("hard_dtw_oracle: cost size does not match k*m");
    if (static_cast<size_t>(k) * m > 1000000)
        throw resource_error("hard_dtw_oracle: refusing DP over " + std::to_string(k) + "x" +
                             std::to_string(m) + " (> 1e6 cells)");
    for (double v : cost)
        if (!std::isfinite(v)) throw numeric_error("hard_dtw_oracle: non-finite cost entry");

    std::vector<double> d(static_cast<size_t>(k) * m);
    std::vector<int8_t> bp(static_cast<size_t>(k) * m, 0);  // 0 diag, 1 up, 2 left
    auto C = [&](int i, int j) { return cost[static_cast<size_t>(i) * m + j]; };
    auto D = [&](int i, int j) -> double& { return d[static_cast<size_t>(i) * m + j]; };
    D(0, 0) = C(0, 0);
    for (int i = 1; i < k; ++i) {
        D(i, 0) = C(i, 0) + D(i - 1, 0);
        bp[static_cast<size_t>(i) * m] = 1;
    }
    for (int j = 1; j < m; ++j) {
        D(0, j) = C(0, j) + D(0, j - 1);
        bp[j] = 2;
    }
    for (int i = 1; i < k; ++i)
        for (int j = 1; j < m; ++j) {
            double diag = D(i - 1, j - 1), up = D(i - 1, j), left = D(i, j - 1);
            double best = diag;
            int8_t move = 0;
            if (up < best) {
                best = up;
                move = 1;
            }
            if (left < best) {
                best = left;
                move = 2;
            }
            D(i, j) = C(i, j) + best;
            bp[static_cast<size_t>(i) * m + j] = move;
        }

    HardDtwResult res;
    res.value = D(k - 1, m - 1);
    int i = k - 1, j = m - 1;
    res.path.emplace_back(i, j);
    while (i != 0 || j != 0) {
        switch (bp[static_cast<size_t>(i) * m + j]) {
            case 0: --i; --j; break;
            case 1: --i; break;
            default: --j; break;
        }
        res.path.emplace_back(i, j);
    }
    std::reverse(res.path.begin(), res.path.end());
    return res;
}

inline HardDtwResult hard_dtw_oracle(const Array& cost) {
    detail::check_matrix(cost, "hard_dtw_oracle");
    return hard_dtw_oracle({cost.values().begin(), cost.values().end()}, cost.dim(0),
                           cost.dim(1));
}

/// Hinge requiring the correct-order alignment to beat the reversed-order
/// alignment by margin beta. Gradient flows through both alignment terms when
/// the hinge is active and is exactly zero otherwise.
inline Array order_loss(const Array& tokens, const Array& phrases, double beta,
                        double gamma_smooth) {
    if (beta < 0.0) throw config_error("order_loss: margin beta must be >= 0");
    Array pos = soft_dtw(cost_matrix(tokens, phrases), gamma_smooth);
    Array negd = soft_dtw(cost_matrix(reverse_rows(tokens), phrases), gamma_smooth);
    return relu(add_scalar(sub(pos, negd), beta));
}

/// Batch alignment objective: mean over items of align + gamma_weight * order.
/// gamma_weight is the loss weight; gamma_smooth is the soft-min temperature.
/// The two are distinct knobs on purpose.
inline Array dtw_objective(const std::vector<std::pair<Array, Array>>& batch, double beta,
                           double gamma_weight, double gamma_smooth) {
    if (batch.empty()) throw config_error("dtw_objective: empty batch");
    Array total = Array::scalar(0.0);
    for (const auto& [tokens, phrases] : batch) {
        Array item = soft_dtw(cost_matrix(tokens, phrases), gamma_smooth);
        if (gamma_weight != 0.0)
            item = add(item, scale(order_loss(tokens, phrases, beta, gamma_smooth),
                                   gamma_weight));
        total = add(total, item);
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

/// Mean of (1 - similarity) along the exact min-cost alignment path of the
/// similarity matrix. Diagnostic only, not differentiable.
inline double normalized_dtw_cost(const std::vector<double>& sim, int t, int v) {
    std::vector<double> cost(sim.size());
    for (size_t i = 0; i < sim.size(); ++i) {
        if (!std::isfinite(sim[i]))
            throw numeric_error("normalized_dtw_cost: non-finite similarity entry");
        cost[i] = 1.0 - sim[i];
    }
    HardDtwResult hard = hard_dtw_oracle(cost, t, v);
    double acc = 0.0;
    for (auto [i, j] : hard.path) acc += cost[static_cast<size_t>(i) * v + j];
    return acc / static_cast<double>(hard.path.size());
}

inline double normalized_dtw_cost(const Array& sim) {
    detail::check_matrix(sim, "normalized_dtw_cost");
    return normalized_dtw_cost({sim.values().begin(), sim.values().end()}, sim.dim(0),
                               sim.dim(1));
}

}  // namespace actalign
