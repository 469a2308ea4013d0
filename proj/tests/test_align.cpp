#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "actalign/align.hpp"
#include "actalign/array.hpp"
#include "actalign/gradcheck.hpp"
#include "actalign/ops.hpp"
#include "actalign/rng.hpp"

using namespace actalign;

namespace {

// Test-side reference: enumerate every monotone path (steps down/right/diag)
// and collect its total cost. Only feasible for small matrices; independent of
// the DP implementations it checks.
void enumerate_paths(const std::vector<double>& cost, int k, int m,
                     std::vector<double>& out_costs) {
    std::function<void(int, int, double)> go = [&](int i, int j, double acc) {
        acc += cost[static_cast<size_t>(i) * m + j];
        if (i == k - 1 && j == m - 1) {
            out_costs.push_back(acc);
            return;
        }
        if (i + 1 < k) go(i + 1, j, acc);
        if (j + 1 < m) go(i, j + 1, acc);
        if (i + 1 < k && j + 1 < m) go(i + 1, j + 1, acc);
    };
    REQUIRE(k <= 8);
    REQUIRE(m <= 8);
    go(0, 0, 0.0);
}

double enum_min_path(const std::vector<double>& cost, int k, int m) {
    std::vector<double> costs;
    enumerate_paths(cost, k, m, costs);
    double best = costs[0];
    for (double c : costs) best = std::min(best, c);
    return best;
}

// Closed-form soft value: -gamma * log sum over paths of exp(-cost/gamma).
double enum_soft_value(const std::vector<double>& cost, int k, int m, double gamma) {
    std::vector<double> costs;
    enumerate_paths(cost, k, m, costs);
    double mn = costs[0];
    for (double c : costs) mn = std::min(mn, c);
    double s = 0.0;
    for (double c : costs) s += std::exp(-(c - mn) / gamma);
    return mn - gamma * std::log(s);
}

std::vector<double> random_cost(int k, int m, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> cost(static_cast<size_t>(k) * m);
    for (auto& c : cost) c = rng.uniform() * 2.0;
    return cost;
}

Array random_array(Shape shape, uint64_t seed) {
    Rng rng(seed);
    return Array::randn(std::move(shape), rng);
}

}  // namespace

TEST_CASE("cost matrix attains its bounds") {
    Array s = Array::from({3, 2}, {1, 0, 0, 2, -3, 0});
    Array v = Array::from({1, 2}, {1, 0});
    Array c = cost_matrix(s, v);
    REQUIRE(c.at(0, 0) == Catch::Approx(0.0).margin(1e-12));  // identical direction
    REQUIRE(c.at(1, 0) == Catch::Approx(1.0).margin(1e-12));  // orthogonal
    REQUIRE(c.at(2, 0) == Catch::Approx(2.0).margin(1e-12));  // antipodal
}

TEST_CASE("soft dtw single cell") {
    Array c = Array::from({1, 1}, {0.37}).set_requires_grad(true);
    Array v = soft_dtw(c, 0.1);
    REQUIRE(v.item() == 0.37);
    v.backward();
    REQUIRE(c.grad()[0] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("soft dtw approaches the enumerated min as gamma -> 0") {
    std::vector<double> cost = {1, 2, 3, 1};
    REQUIRE(enum_min_path(cost, 2, 2) == 2.0);
    Array c = Array::from({2, 2}, cost);
    REQUIRE(soft_dtw(c, 1e-4).item() == Catch::Approx(2.0).margin(1e-3));
}

TEST_CASE("soft dtw equals log-sum-exp over enumerated paths") {
    for (uint64_t seed = 0; seed < 6; ++seed) {
        int k = 3 + static_cast<int>(seed % 2);
        int m = 4 - static_cast<int>(seed % 2);
        auto cost = random_cost(k, m, 900 + seed);
        for (double gamma : {0.05, 0.3, 1.0}) {
            double expect = enum_soft_value(cost, k, m, gamma);
            double got = soft_dtw(Array::from({k, m}, cost), gamma).item();
            REQUIRE(got == Catch::Approx(expect).margin(1e-9));
        }
    }
}

TEST_CASE("soft dtw gradient matches finite differences") {
    Array c = Array::from({5, 4}, random_cost(5, 4, 77));
    double err = gradcheck(
        [](const std::vector<Array>& in) { return soft_dtw(in[0], 0.1); }, {c});
    REQUIRE(err < 1e-4);
}

TEST_CASE("soft dtw occupancy is nonnegative and sums to a path length") {
    for (uint64_t seed = 0; seed < 8; ++seed) {
        int k = 2 + static_cast<int>(seed % 4);
        int m = 2 + static_cast<int>((seed / 2) % 4);
        Array c = Array::from({k, m}, random_cost(k, m, 1000 + seed)).set_requires_grad(true);
        Array v = soft_dtw(c, 1e-3);
        v.backward();
        double total = 0.0;
        for (double g : c.grad()) {
            REQUIRE(g >= 0.0);
            total += g;
        }
        REQUIRE(total >= std::max(k, m) - 0.01);
        REQUIRE(total <= k + m - 1 + 0.01);
    }
}

TEST_CASE("soft dtw value is nonincreasing in gamma and below hard value") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        int k = 2 + static_cast<int>(seed % 5);
        int m = 2 + static_cast<int>((seed / 3) % 5);
        auto cost = random_cost(k, m, 2000 + seed);
        double hard = hard_dtw_oracle(cost, k, m).value;
        double prev = hard;
        for (double gamma : {1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0}) {
            double soft = soft_dtw(Array::from({k, m}, cost), gamma).item();
            REQUIRE(soft <= hard + 1e-12);
            REQUIRE(soft <= prev + 1e-12);
            prev = soft;
        }
    }
}

TEST_CASE("soft dtw at gamma 1e-3 is within 0.01 of hard dtw") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(3000 + seed);
        int k = 1 + static_cast<int>(rng.bounded(6));
        int m = 1 + static_cast<int>(rng.bounded(6));
        auto cost = random_cost(k, m, 4000 + seed);
        double hard = hard_dtw_oracle(cost, k, m).value;
        double soft = soft_dtw(Array::from({k, m}, cost), 1e-3).item();
        REQUIRE(std::abs(soft - hard) < 0.01);
    }
}

TEST_CASE("hard dtw worked example") {
    auto res = hard_dtw_oracle({1, 2, 3, 1}, 2, 2);
    REQUIRE(res.value == 2.0);
    REQUIRE(res.path.size() == 2);
    REQUIRE(res.path.front() == std::make_pair(0, 0));
    REQUIRE(res.path.back() == std::make_pair(1, 1));
}

TEST_CASE("hard dtw trivial cases") {
    auto zero = hard_dtw_oracle(std::vector<double>(12, 0.0), 3, 4);
    REQUIRE(zero.value == 0.0);

    std::vector<double> rowcost = {0.5, 1.5, 0.25, 2.0};
    auto row = hard_dtw_oracle(rowcost, 1, 4);
    REQUIRE(row.value == Catch::Approx(4.25).margin(1e-12));
    REQUIRE(row.path.size() == 4);
}

TEST_CASE("hard dtw path is monotone and consistent with its value") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(5000 + seed);
        int k = 1 + static_cast<int>(rng.bounded(7));
        int m = 1 + static_cast<int>(rng.bounded(7));
        auto cost = random_cost(k, m, 6000 + seed);
        auto res = hard_dtw_oracle(cost, k, m);
        REQUIRE(res.path.front() == std::make_pair(0, 0));
        REQUIRE(res.path.back() == std::make_pair(k - 1, m - 1));
        double acc = 0.0;
        for (size_t t = 0; t < res.path.size(); ++t) {
            auto [i, j] = res.path[t];
            acc += cost[static_cast<size_t>(i) * m + j];
            if (t > 0) {
                int di = i - res.path[t - 1].first;
                int dj = j - res.path[t - 1].second;
                bool legal = (di == 1 && dj == 0) || (di == 0 && dj == 1) ||
                             (di == 1 && dj == 1);
                REQUIRE(legal);
            }
        }
        REQUIRE(acc == Catch::Approx(res.value).margin(1e-9));
    }
}

TEST_CASE("hard dtw equals exhaustive enumeration") {
    for (auto [k, m] : std::vector<std::pair<int, int>>{{4, 4}, {5, 3}, {8, 8}}) {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            auto cost = random_cost(k, m, 7000 + seed * 13 + k * 100 + m);
            REQUIRE(hard_dtw_oracle(cost, k, m).value ==
                    Catch::Approx(enum_min_path(cost, k, m)).margin(1e-12));
        }
    }
}

TEST_CASE("hard dtw refuses oversized inputs") {
    std::vector<double> big(static_cast<size_t>(1001) * 1000, 0.0);
    REQUIRE_THROWS_AS(hard_dtw_oracle(big, 1001, 1000), resource_error);
}

TEST_CASE("soft dtw rejects bad inputs") {
    Array c = Array::from({2, 2}, {1, 2, 3, 4});
    REQUIRE_THROWS_AS(soft_dtw(c, 0.0), config_error);
    Array nan = Array::from({1, 2}, {1.0, std::nan("")});
    REQUIRE_THROWS_AS(soft_dtw(nan, 0.1), numeric_error);
}

TEST_CASE("order loss hinge arithmetic") {
    // Inactive: pos 2.0, neg 5.0, beta 1.0 -> max(0, 2-5+1) = 0.
    Array inactive = relu(add_scalar(sub(Array::scalar(2.0), Array::scalar(5.0)), 1.0));
    REQUIRE(inactive.item() == 0.0);
    // Active: pos 3.0, neg 2.0, beta 0.5 -> 1.5.
    Array active = relu(add_scalar(sub(Array::scalar(3.0), Array::scalar(2.0)), 0.5));
    REQUIRE(active.item() == 1.5);
}

TEST_CASE("order loss equals beta when reversal is the identity") {
    Array s = random_array({1, 6}, 42);
    Array v = random_array({3, 6}, 43);
    REQUIRE(order_loss(s, v, 0.5, 0.1).item() == 0.5);
    REQUIRE(order_loss(s, v, 2.0, 0.1).item() == 2.0);
}

TEST_CASE("order loss is nonnegative") {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(8000 + seed);
        int k = 1 + static_cast<int>(rng.bounded(5));
        int m = 1 + static_cast<int>(rng.bounded(4));
        Array s = random_array({k, 6}, 9000 + seed);
        Array v = random_array({m, 6}, 10000 + seed);
        REQUIRE(order_loss(s, v, 0.5, 0.1).item() >= 0.0);
    }
}

TEST_CASE("inactive hinge passes exactly zero gradient") {
    int found = 0;
    for (uint64_t seed = 0; seed < 200 && found < 5; ++seed) {
        Array s = random_array({4, 6}, 11000 + seed);
        Array v = random_array({3, 6}, 12000 + seed);
        double pos = soft_dtw(cost_matrix(s, v), 0.1).item();
        double negv = soft_dtw(cost_matrix(reverse_rows(s), v), 0.1).item();
        if (pos - negv + 0.05 >= 0.0) continue;  // want a strictly inactive hinge
        ++found;
        Array live = Array::from({4, 6}, {s.values().begin(), s.values().end()})
                         .set_requires_grad(true);
        Array loss = order_loss(live, v, 0.05, 0.1);
        REQUIRE(loss.item() == 0.0);
        loss.backward();
        for (double g : live.grad()) REQUIRE(g == 0.0);
    }
    REQUIRE(found > 0);
}

TEST_CASE("order loss gradient when active") {
    Array s = random_array({3, 5}, 60);
    Array v = random_array({3, 5}, 61);
    double err = gradcheck(
        [&](const std::vector<Array>& in) {
            return order_loss(in[0], in[1], 5.0, 0.1);  // large beta keeps hinge active
        },
        {s, v});
    REQUIRE(err < 1e-4);
}

TEST_CASE("dtw objective composition") {
    Array s1 = random_array({4, 6}, 70);
    Array v1 = random_array({2, 6}, 71);

    SECTION("single item with zero order weight equals plain alignment") {
        double expect = soft_dtw(cost_matrix(s1, v1), 0.1).item();
        REQUIRE(dtw_objective({{s1, v1}}, 0.5, 0.0, 0.1).item() ==
                Catch::Approx(expect).margin(1e-12));
    }

    SECTION("mean of identical items equals the single item") {
        double one = dtw_objective({{s1, v1}}, 0.5, 0.5, 0.1).item();
        double two = dtw_objective({{s1, v1}, {s1, v1}}, 0.5, 0.5, 0.1).item();
        REQUIRE(two == Catch::Approx(one).margin(1e-12));
    }

    SECTION("batch equals the mean of independently computed items") {
        std::vector<std::pair<Array, Array>> batch;
        double acc = 0.0;
        for (uint64_t i = 0; i < 3; ++i) {
            Array s = random_array({3, 6}, 80 + i);
            Array v = random_array({2, 6}, 90 + i);
            batch.push_back({s, v});
            acc += soft_dtw(cost_matrix(s, v), 0.1).item() +
                   0.5 * order_loss(s, v, 0.5, 0.1).item();
        }
        REQUIRE(dtw_objective(batch, 0.5, 0.5, 0.1).item() ==
                Catch::Approx(acc / 3.0).margin(1e-12));
    }

    SECTION("invariant to batch order") {
        Array s2 = random_array({2, 6}, 72);
        Array v2 = random_array({3, 6}, 73);
        double ab = dtw_objective({{s1, v1}, {s2, v2}}, 0.5, 0.5, 0.1).item();
        double ba = dtw_objective({{s2, v2}, {s1, v1}}, 0.5, 0.5, 0.1).item();
        REQUIRE(ab == Catch::Approx(ba).margin(1e-12));
    }

    SECTION("empty batch is a config error") {
        REQUIRE_THROWS_AS(dtw_objective({}, 0.5, 0.5, 0.1), config_error);
    }
}

TEST_CASE("normalized dtw cost") {
    REQUIRE(normalized_dtw_cost(std::vector<double>(12, 1.0), 3, 4) == 0.0);

    std::vector<double> ident(16, 0.0);
    for (int i = 0; i < 4; ++i) ident[static_cast<size_t>(i) * 4 + i] = 1.0;
    REQUIRE(normalized_dtw_cost(ident, 4, 4) == 0.0);

    REQUIRE(normalized_dtw_cost(std::vector<double>(20, 0.5), 4, 5) ==
            Catch::Approx(0.5).margin(1e-12));
}
