#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "actalign/array.hpp"
#include "actalign/error.hpp"

namespace actalign {

// Dense boolean mask, row-major. Plain data, never part of the graph.
struct BoolMat {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> data;

    BoolMat() = default;
    BoolMat(int r, int c, bool fill = true)
        : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill ? 1 : 0) {}

    bool at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c] != 0; }
    void set(int r, int c, bool v) { data[static_cast<size_t>(r) * cols + c] = v ? 1 : 0; }
};

enum class Reduction { Sum, Mean };

namespace detail {

inline void check_same_shape(const Array& a, const Array& b, const char* op) {
    if (a.shape() != b.shape())
        throw dim_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
}

inline void check_matrix(const Array& a, const char* op) {
    if (a.rank() != 2)
        throw dim_error(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Array add(const Array& a, const Array& b) {
    detail::check_same_shape(a, b, "add");
    auto out = detail::make_op_node(a.shape(), "add", {a.node(), b.node()});
    for (size_t i = 0; i < out->values.size(); ++i)
        out->values[i] = a.values()[i] + b.values()[i];
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), bn = b.node()](Node& self) {
            if (an->requires_grad) detail::accumulate(*an, self.grad);
            if (bn->requires_grad) detail::accumulate(*bn, self.grad);
        };
    return Array(out);
}

inline Array sub(const Array& a, const Array& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = detail::make_op_node(a.shape(), "sub", {a.node(), b.node()});
    for (size_t i = 0; i < out->values.size(); ++i)
        out->values[i] = a.values()[i] - b.values()[i];
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), bn = b.node()](Node& self) {
            if (an->requires_grad) detail::accumulate(*an, self.grad);
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
            }
        };
    return Array(out);
}

inline Array mul(const Array& a, const Array& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = detail::make_op_node(a.shape(), "mul", {a.node(), b.node()});
    for (size_t i = 0; i < out->values.size(); ++i)
        out->values[i] = a.values()[i] * b.values()[i];
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), bn = b.node()](Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] * bn->values[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] += self.grad[i] * an->values[i];
            }
        };
    return Array(out);
}

inline Array scale(const Array& a, double c) {
    auto out = detail::make_op_node(a.shape(), "scale", {a.node()});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a.values()[i] * c;
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), c](Node& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
        };
    return Array(out);
}

inline Array neg(const Array& a) { return scale(a, -1.0); }

inline Array add_scalar(const Array& a, double c) {
    auto out = detail::make_op_node(a.shape(), "add_scalar", {a.node()});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a.values()[i] + c;
    if (out->requires_grad)
        out->backward_fn = [an = a.node()](Node& self) {
            if (an->requires_grad) detail::accumulate(*an, self.grad);
        };
    return Array(out);
}

// Hinge building block; defines grad(0) = 0 so an inactive hinge contributes
// exactly nothing.
inline Array relu(const Array& a) {
    auto out = detail::make_op_node(a.shape(), "relu", {a.node()});
    for (size_t i = 0; i < out->values.size(); ++i)
        out->values[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
    if (out->requires_grad)
        out->backward_fn = [an = a.node()](Node& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (an->values[i] > 0.0) an->grad[i] += self.grad[i];
        };
    return Array(out);
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

inline Array sum_all(const Array& a) {
    auto out = detail::make_op_node({1}, "sum_all", {a.node()});
    double s = 0.0;
    for (double v : a.values()) s += v;
    out->values[0] = s;
    if (out->requires_grad)
        out->backward_fn = [an = a.node()](Node& self) {
            an->ensure_grad();
            for (auto& g : an->grad) g += self.grad[0];
        };
    return Array(out);
}

inline Array mean_all(const Array& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

inline Array reshape(const Array& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw dim_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                        shape_str(shape));
    auto out = detail::make_op_node(std::move(shape), "reshape", {a.node()});
    std::copy(a.values().begin(), a.values().end(), out->values.begin());
    if (out->requires_grad)
        out->backward_fn = [an = a.node()](Node& self) {
            detail::accumulate(*an, self.grad);
        };
    return Array(out);
}

/// Mean over one axis; the axis is removed from the shape (a vector reduces
/// to a 1-element array).
inline Array mean_pool(const Array& a, int axis) {
    if (axis < 0 || static_cast<size_t>(axis) >= a.rank())
        throw dim_error("mean_pool: axis " + std::to_string(axis) + " invalid for " +
                        shape_str(a.shape()));
    const Shape& s = a.shape();
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    size_t len = s[axis];

    Shape out_shape;
    for (size_t i = 0; i < s.size(); ++i)
        if (i != static_cast<size_t>(axis)) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape = {1};

    auto out = detail::make_op_node(out_shape, "mean_pool", {a.node()});
    for (size_t o = 0; o < outer; ++o)
        for (size_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (size_t j = 0; j < len; ++j) acc += a.values()[(o * len + j) * inner + i];
            out->values[o * inner + i] = acc / static_cast<double>(len);
        }
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), outer, inner, len](Node& self) {
            an->ensure_grad();
            double inv = 1.0 / static_cast<double>(len);
            for (size_t o = 0; o < outer; ++o)
                for (size_t i = 0; i < inner; ++i) {
                    double g = self.grad[o * inner + i] * inv;
                    for (size_t j = 0; j < len; ++j)
                        an->grad[(o * len + j) * inner + i] += g;
                }
        };
    return Array(out);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Array transpose(const Array& a) {
    detail::check_matrix(a, "transpose");
    int r = a.dim(0), c = a.dim(1);
    auto out = detail::make_op_node({c, r}, "transpose", {a.node()});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out->values[static_cast<size_t>(j) * r + i] =
                a.values()[static_cast<size_t>(i) * c + j];
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), r, c](Node& self) {
            an->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    an->grad[static_cast<size_t>(i) * c + j] +=
                        self.grad[static_cast<size_t>(j) * r + i];
        };
    return Array(out);
}

inline Array matmul(const Array& a, const Array& b) {
    detail::check_matrix(a, "matmul");
    detail::check_matrix(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw dim_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = detail::make_op_node({m, n}, "matmul", {a.node(), b.node()});
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out->values.data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            double aip = av[static_cast<size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv + static_cast<size_t>(p) * n;
            double* orow = ov + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), bn = b.node(), m, k, n](Node& self) {
            // dA = G * B^T, dB = A^T * G
            if (an->requires_grad) {
                an->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        double g = self.grad[static_cast<size_t>(i) * n + j];
                        if (g == 0.0) continue;
                        for (int p = 0; p < k; ++p)
                            an->grad[static_cast<size_t>(i) * k + p] +=
                                g * bn->values[static_cast<size_t>(p) * n + j];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double av_ip = an->values[static_cast<size_t>(i) * k + p];
                        if (av_ip == 0.0) continue;
                        for (int j = 0; j < n; ++j)
                            bn->grad[static_cast<size_t>(p) * n + j] +=
                                av_ip * self.grad[static_cast<size_t>(i) * n + j];
                    }
            }
        };
    return Array(out);
}

// ---------------------------------------------------------------------------
// Row plumbing
// ---------------------------------------------------------------------------

inline Array gather_rows(const Array& table, const std::vector<int>& ids) {
    detail::check_matrix(table, "gather_rows");
    const int v = table.dim(0), c = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw value_error("gather_rows: row id " + std::to_string(id) +
                              " out of range [0," + std::to_string(v) + ")");
    auto out = detail::make_op_node({static_cast<int>(ids.size()), c}, "gather_rows",
                                    {table.node()});
    for (size_t r = 0; r < ids.size(); ++r)
        std::copy_n(table.values().begin() + static_cast<size_t>(ids[r]) * c, c,
                    out->values.begin() + r * c);
    if (out->requires_grad)
        out->backward_fn = [tn = table.node(), ids, c](Node& self) {
            tn->ensure_grad();
            for (size_t r = 0; r < ids.size(); ++r)
                for (int j = 0; j < c; ++j)
                    tn->grad[static_cast<size_t>(ids[r]) * c + j] +=
                        self.grad[r * c + j];
        };
    return Array(out);
}

inline Array reverse_rows(const Array& a) {
    detail::check_matrix(a, "reverse_rows");
    const int r = a.dim(0), c = a.dim(1);
    auto out = detail::make_op_node({r, c}, "reverse_rows", {a.node()});
    for (int i = 0; i < r; ++i)
        std::copy_n(a.values().begin() + static_cast<size_t>(r - 1 - i) * c, c,
                    out->values.begin() + static_cast<size_t>(i) * c);
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), r, c](Node& self) {
            an->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    an->grad[static_cast<size_t>(r - 1 - i) * c + j] +=
                        self.grad[static_cast<size_t>(i) * c + j];
        };
    return Array(out);
}

inline Array slice_rows(const Array& a, int begin, int end) {
    detail::check_matrix(a, "slice_rows");
    if (begin < 0 || end > a.dim(0) || begin >= end)
        throw dim_error("slice_rows: bad range [" + std::to_string(begin) + "," +
                        std::to_string(end) + ") for " + shape_str(a.shape()));
    const int c = a.dim(1);
    auto out = detail::make_op_node({end - begin, c}, "slice_rows", {a.node()});
    std::copy_n(a.values().begin() + static_cast<size_t>(begin) * c,
                static_cast<size_t>(end - begin) * c, out->values.begin());
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), begin, c](Node& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                an->grad[static_cast<size_t>(begin) * c + i] += self.grad[i];
        };
    return Array(out);
}

/// Single row of a matrix as a vector.
inline Array row(const Array& a, int r) {
    return reshape(slice_rows(a, r, r + 1), {a.dim(1)});
}

/// Stacks parts by rows; vectors count as one row. All parts share the
/// trailing dimension.
inline Array concat_rows(const std::vector<Array>& parts) {
    if (parts.empty()) throw value_error("concat_rows: empty input");
    auto cols_of = [](const Array& a) {
        return a.rank() == 1 ? a.dim(0) : a.dim(static_cast<size_t>(a.rank() - 1));
    };
    auto rows_of = [](const Array& a) { return a.rank() == 1 ? 1 : a.dim(0); };
    const int c = cols_of(parts[0]);
    int total = 0;
    std::vector<NodePtr> ps;
    for (const auto& p : parts) {
        if (p.rank() > 2 || cols_of(p) != c)
            throw dim_error("concat_rows: incompatible part " + shape_str(p.shape()));
        total += rows_of(p);
        ps.push_back(p.node());
    }
    auto out = detail::make_op_node({total, c}, "concat_rows", ps);
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(), out->values.begin() + off);
        off += p.size();
    }
    if (out->requires_grad)
        out->backward_fn = [ps](Node& self) {
            size_t off = 0;
            for (auto& p : ps) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < p->values.size(); ++i)
                        p->grad[i] += self.grad[off + i];
                }
                off += p->values.size();
            }
        };
    return Array(out);
}

inline Array add_rowvec(const Array& x, const Array& b) {
    detail::check_matrix(x, "add_rowvec");
    if (b.rank() != 1 || b.dim(0) != x.dim(1))
        throw dim_error("add_rowvec: vector " + shape_str(b.shape()) +
                        " does not match matrix " + shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1);
    auto out = detail::make_op_node({r, c}, "add_rowvec", {x.node(), b.node()});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out->values[static_cast<size_t>(i) * c + j] =
                x.values()[static_cast<size_t>(i) * c + j] + b.values()[j];
    if (out->requires_grad)
        out->backward_fn = [xn = x.node(), bn = b.node(), r, c](Node& self) {
            if (xn->requires_grad) detail::accumulate(*xn, self.grad);
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        bn->grad[j] += self.grad[static_cast<size_t>(i) * c + j];
            }
        };
    return Array(out);
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

/// Numerically stabilized softmax along one axis.
inline Array softmax(const Array& a, int axis) {
    if (axis < 0 || static_cast<size_t>(axis) >= a.rank())
        throw dim_error("softmax: axis " + std::to_string(axis) + " invalid for " +
                        shape_str(a.shape()));
    const Shape& s = a.shape();
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    size_t len = s[axis];

    auto out = detail::make_op_node(s, "softmax", {a.node()});
    for (size_t o = 0; o < outer; ++o)
        for (size_t i = 0; i < inner; ++i) {
            auto idx = [&](size_t j) { return (o * len + j) * inner + i; };
            double mx = a.values()[idx(0)];
            for (size_t j = 1; j < len; ++j) mx = std::max(mx, a.values()[idx(j)]);
            double z = 0.0;
            for (size_t j = 0; j < len; ++j) {
                double e = std::exp(a.values()[idx(j)] - mx);
                out->values[idx(j)] = e;
                z += e;
            }
            for (size_t j = 0; j < len; ++j) out->values[idx(j)] /= z;
        }
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), outer, inner, len](Node& self) {
            an->ensure_grad();
            for (size_t o = 0; o < outer; ++o)
                for (size_t i = 0; i < inner; ++i) {
                    auto idx = [&](size_t j) { return (o * len + j) * inner + i; };
                    double dot = 0.0;
                    for (size_t j = 0; j < len; ++j)
                        dot += self.grad[idx(j)] * self.values[idx(j)];
                    for (size_t j = 0; j < len; ++j)
                        an->grad[idx(j)] +=
                            self.values[idx(j)] * (self.grad[idx(j)] - dot);
                }
        };
    return Array(out);
}

/// Row-wise log-softmax over the last axis of a matrix.
inline Array log_softmax_rows(const Array& a) {
    detail::check_matrix(a, "log_softmax_rows");
    const int r = a.dim(0), c = a.dim(1);
    auto out = detail::make_op_node({r, c}, "log_softmax_rows", {a.node()});
    for (int i = 0; i < r; ++i) {
        const double* x = a.values().data() + static_cast<size_t>(i) * c;
        double* y = out->values.data() + static_cast<size_t>(i) * c;
        double mx = x[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(x[j] - mx);
        double lse = mx + std::log(z);
        for (int j = 0; j < c; ++j) y[j] = x[j] - lse;
    }
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), r, c](Node& self) {
            an->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const double* y = self.values.data() + static_cast<size_t>(i) * c;
                const double* g = self.grad.data() + static_cast<size_t>(i) * c;
                double gsum = 0.0;
                for (int j = 0; j < c; ++j) gsum += g[j];
                for (int j = 0; j < c; ++j)
                    an->grad[static_cast<size_t>(i) * c + j] +=
                        g[j] - std::exp(y[j]) * gsum;
            }
        };
    return Array(out);
}

/// Row-wise softmax restricted to allowed positions; disallowed outputs are
/// exactly 0.0 and receive no gradient. A fully masked row is a precondition
/// violation, never NaN.
inline Array masked_softmax_rows(const Array& a, const BoolMat& mask) {
    detail::check_matrix(a, "masked_softmax_rows");
    const int r = a.dim(0), c = a.dim(1);
    if (mask.rows != r || mask.cols != c)
        throw dim_error("masked_softmax_rows: mask " + std::to_string(mask.rows) + "x" +
                        std::to_string(mask.cols) + " does not match " +
                        shape_str(a.shape()));
    for (int i = 0; i < r; ++i) {
        bool any = false;
        for (int j = 0; j < c; ++j) any = any || mask.at(i, j);
        if (!any)
            throw value_error("masked_softmax_rows: row " + std::to_string(i) +
                              " is fully masked");
    }
    auto out = detail::make_op_node({r, c}, "masked_softmax_rows", {a.node()});
    for (int i = 0; i < r; ++i) {
        const double* x = a.values().data() + static_cast<size_t>(i) * c;
        double* y = out->values.data() + static_cast<size_t>(i) * c;
        double mx = -HUGE_VAL;
        for (int j = 0; j < c; ++j)
            if (mask.at(i, j)) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            if (mask.at(i, j)) {
                y[j] = std::exp(x[j] - mx);
                z += y[j];
            } else {
                y[j] = 0.0;
            }
        }
        for (int j = 0; j < c; ++j)
            if (mask.at(i, j)) y[j] /= z;
    }
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), mask, r, c](Node& self) {
            an->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const double* y = self.values.data() + static_cast<size_t>(i) * c;
                const double* g = self.grad.data() + static_cast<size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j)
                    if (mask.at(i, j)) dot += g[j] * y[j];
                for (int j = 0; j < c; ++j)
                    if (mask.at(i, j))
                        an->grad[static_cast<size_t>(i) * c + j] += y[j] * (g[j] - dot);
            }
        };
    return Array(out);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Layer normalization over the last axis (no affine parameters).
inline Array layer_norm(const Array& a, double eps = 1e-5) {
    if (a.rank() < 1) throw dim_error("layer_norm: empty shape");
    const Shape& s = a.shape();
    size_t len = s.back();
    size_t lanes = a.size() / len;
    auto out = detail::make_op_node(s, "layer_norm", {a.node()});
    std::vector<double> rstds(lanes);
    for (size_t l = 0; l < lanes; ++l) {
        const double* x = a.values().data() + l * len;
        double* y = out->values.data() + l * len;
        double mean = 0.0;
        for (size_t j = 0; j < len; ++j) mean += x[j];
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (size_t j = 0; j < len; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= static_cast<double>(len);
        double rstd = 1.0 / std::sqrt(var + eps);
        rstds[l] = rstd;
        for (size_t j = 0; j < len; ++j) y[j] = (x[j] - mean) * rstd;
    }
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), lanes, len, rstds = std::move(rstds)](Node& self) {
            an->ensure_grad();
            for (size_t l = 0; l < lanes; ++l) {
                const double* y = self.values.data() + l * len;
                const double* g = self.grad.data() + l * len;
                double gmean = 0.0, gymean = 0.0;
                for (size_t j = 0; j < len; ++j) {
                    gmean += g[j];
                    gymean += g[j] * y[j];
                }
                gmean /= static_cast<double>(len);
                gymean /= static_cast<double>(len);
                for (size_t j = 0; j < len; ++j)
                    an->grad[l * len + j] += (g[j] - gmean - y[j] * gymean) * rstds[l];
            }
        };
    return Array(out);
}

// ---------------------------------------------------------------------------
// Cosine geometry
// ---------------------------------------------------------------------------

constexpr double kNormFloor = 1e-8;

/// Pairwise cosine similarities between the rows of two matrices sharing the
/// feature axis. Rows with norm at or below the floor are rejected rather than
/// clamped so degeneracy cannot silently corrupt downstream cost matrices.
inline Array cosine_matrix(const Array& a, const Array& b) {
    detail::check_matrix(a, "cosine_matrix");
    detail::check_matrix(b, "cosine_matrix");
    if (a.dim(1) != b.dim(1))
        throw dim_error("cosine_matrix: feature dims disagree, " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
    const int p = a.dim(0), q = b.dim(0), c = a.dim(1);
    auto norms = [&](const Array& m, int n, const char* side) {
        std::vector<double> out(n);
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < c; ++j) {
                double v = m.values()[static_cast<size_t>(i) * c + j];
                s += v * v;
            }
            out[i] = std::sqrt(s);
            if (!(out[i] > kNormFloor))
                throw value_error(std::string("cosine_matrix: degenerate ") + side +
                                  " row " + std::to_string(i) + " (norm <= 1e-8)");
        }
        return out;
    };
    std::vector<double> na = norms(a, p, "left");
    std::vector<double> nb = norms(b, q, "right");

    auto out = detail::make_op_node({p, q}, "cosine_matrix", {a.node(), b.node()});
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) {
            double dot = 0.0;
            for (int k = 0; k < c; ++k)
                dot += a.values()[static_cast<size_t>(i) * c + k] *
                       b.values()[static_cast<size_t>(j) * c + k];
            out->values[static_cast<size_t>(i) * q + j] = dot / (na[i] * nb[j]);
        }
    if (out->requires_grad)
        out->backward_fn = [an = a.node(), bn = b.node(), p, q, c, na = std::move(na),
                            nb = std::move(nb)](Node& self) {
            // d cos / da = b/(|a||b|) - cos * a/|a|^2, symmetric in b.
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int i = 0; i < p; ++i)
                for (int j = 0; j < q; ++j) {
                    double g = self.grad[static_cast<size_t>(i) * q + j];
                    if (g == 0.0) continue;
                    double cos = self.values[static_cast<size_t>(i) * q + j];
                    double inv = 1.0 / (na[i] * nb[j]);
                    for (int k = 0; k < c; ++k) {
                        double av = an->values[static_cast<size_t>(i) * c + k];
                        double bv = bn->values[static_cast<size_t>(j) * c + k];
                        if (an->requires_grad)
                            an->grad[static_cast<size_t>(i) * c + k] +=
                                g * (bv * inv - cos * av / (na[i] * na[i]));
                        if (bn->requires_grad)
                            bn->grad[static_cast<size_t>(j) * c + k] +=
                                g * (av * inv - cos * bv / (nb[j] * nb[j]));
                    }
                }
        };
    return Array(out);
}

/// Cosine similarity of two vectors as a differentiable scalar in [-1, 1].
inline Array cosine_sim(const Array& a, const Array& b) {
    if (a.rank() != 1 || b.rank() != 1)
        throw dim_error("cosine_sim: expects vectors, got " + shape_str(a.shape()) +
                        " and " + shape_str(b.shape()));
    detail::check_same_shape(a, b, "cosine_sim");
    Array am = reshape(a, {1, a.dim(0)});
    Array bm = reshape(b, {1, b.dim(0)});
    return reshape(cosine_matrix(am, bm), {1});
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

/// Temperature-scaled row-softmax cross-entropy against integer targets.
inline Array cross_entropy_rows(const Array& logits, const std::vector<int>& targets,
                                double temperature = 1.0,
                                Reduction reduction = Reduction::Mean) {
    detail::check_matrix(logits, "cross_entropy_rows");
    if (temperature <= 0.0) throw config_error("cross_entropy_rows: temperature must be > 0");
    const int r = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(targets.size()) != r)
        throw dim_error("cross_entropy_rows: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(r) + " rows");
    for (int t : targets)
        if (t < 0 || t >= c) throw value_error("cross_entropy_rows: target out of range");

    auto out = detail::make_op_node({1}, "cross_entropy_rows", {logits.node()});
    std::vector<double> probs(static_cast<size_t>(r) * c);
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
        const double* x = logits.values().data() + static_cast<size_t>(i) * c;
        double mx = x[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            probs[static_cast<size_t>(i) * c + j] = std::exp((x[j] - mx) / temperature);
            z += probs[static_cast<size_t>(i) * c + j];
        }
        for (int j = 0; j < c; ++j) probs[static_cast<size_t>(i) * c + j] /= z;
        total += -std::log(probs[static_cast<size_t>(i) * c + targets[i]]);
    }
    double w = reduction == Reduction::Mean ? 1.0 / static_cast<double>(r) : 1.0;
    out->values[0] = total * w;
    if (out->requires_grad)
        out->backward_fn = [ln = logits.node(), targets, r, c, temperature, w,
                            probs = std::move(probs)](Node& self) {
            ln->ensure_grad();
            double g = self.grad[0] * w / temperature;
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) {
                    double delta = j == targets[i] ? 1.0 : 0.0;
                    ln->grad[static_cast<size_t>(i) * c + j] +=
                        g * (probs[static_cast<size_t>(i) * c + j] - delta);
                }
        };
    return Array(out);
}

/// Cross-entropy where each row's candidate set is restricted by a mask;
/// the target must be an allowed position.
inline Array masked_cross_entropy_rows(const Array& logits, const BoolMat& mask,
                                       const std::vector<int>& targets,
                                       double temperature = 1.0,
                                       Reduction reduction = Reduction::Mean) {
    detail::check_matrix(logits, "masked_cross_entropy_rows");
    if (temperature <= 0.0)
        throw config_error("masked_cross_entropy_rows: temperature must be > 0");
    const int r = logits.dim(0), c = logits.dim(1);
    if (mask.rows != r || mask.cols != c)
        throw dim_error("masked_cross_entropy_rows: mask does not match logits");
    if (static_cast<int>(targets.size()) != r)
        throw dim_error("masked_cross_entropy_rows: target count mismatch");
    for (int i = 0; i < r; ++i)
        if (targets[i] < 0 || targets[i] >= c || !mask.at(i, targets[i]))
            throw value_error("masked_cross_entropy_rows: target " +
                              std::to_string(targets[i]) + " not allowed in row " +
                              std::to_string(i));

    auto out = detail::make_op_node({1}, "masked_cross_entropy_rows", {logits.node()});
    std::vector<double> probs(static_cast<size_t>(r) * c, 0.0);
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
        const double* x = logits.values().data() + static_cast<size_t>(i) * c;
        double mx = -HUGE_VAL;
        for (int j = 0; j < c; ++j)
            if (mask.at(i, j)) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j)
            if (mask.at(i, j)) {
                probs[static_cast<size_t>(i) * c + j] = std::exp((x[j] - mx) / temperature);
                z += probs[static_cast<size_t>(i) * c + j];
            }
        for (int j = 0; j < c; ++j) probs[static_cast<size_t>(i) * c + j] /= z;
        total += -std::log(probs[static_cast<size_t>(i) * c + targets[i]]);
    }
    double w = reduction == Reduction::Mean ? 1.0 / static_cast<double>(r) : 1.0;
    out->values[0] = total * w;
    if (out->requires_grad)
        out->backward_fn = [ln = logits.node(), mask, targets, r, c, temperature, w,
                            probs = std::move(probs)](Node& self) {
            ln->ensure_grad();
            double g = self.grad[0] * w / temperature;
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) {
                    if (!mask.at(i, j)) continue;
                    double delta = j == targets[i] ? 1.0 : 0.0;
                    ln->grad[static_cast<size_t>(i) * c + j] +=
                        g * (probs[static_cast<size_t>(i) * c + j] - delta);
                }
        };
    return Array(out);
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

/// Scaled dot-product attention weights with an exact boolean mask.
inline Array attention_weights(const Array& q, const Array& k, const BoolMat& mask) {
    detail::check_matrix(q, "attention_weights");
    detail::check_matrix(k, "attention_weights");
    if (q.dim(1) != k.dim(1))
        throw dim_error("attention_weights: feature dims disagree, " +
                        shape_str(q.shape()) + " vs " + shape_str(k.shape()));
    double s = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    Array scores = scale(matmul(q, transpose(k)), s);
    return masked_softmax_rows(scores, mask);
}

/// Masked scaled dot-product attention. Masked positions carry exactly zero
/// weight; each output row is a convex combination of allowed value rows.
inline Array masked_attention(const Array& q, const Array& k, const Array& v,
                              const BoolMat& mask) {
    detail::check_matrix(v, "masked_attention");
    if (k.dim(0) != v.dim(0))
        throw dim_error("masked_attention: keys " + shape_str(k.shape()) +
                        " vs values " + shape_str(v.shape()));
    if (mask.rows != q.dim(0) || mask.cols != k.dim(0))
        throw dim_error("masked_attention: mask " + std::to_string(mask.rows) + "x" +
                        std::to_string(mask.cols) + " does not match q rows / k rows");
    Array w = attention_weights(q, k, mask);
    return matmul(w, v);
}

}  // namespace actalign
