#pragma once

// Differentiable operations on Tensor.  Every op validates shapes up front,
// computes the forward value, and (in gradient mode) records a backprop
// closure that reads the node's grad and accumulates into its parents.
// Kernels are plain loops with a fixed iteration order, so results are
// deterministic.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "codesum/tensor.hpp"

namespace codesum {

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool track = grad_mode();
    bool any_rg = false;
    for (const auto& t : inputs) any_rg = any_rg || t.requires_grad();
    if (track && any_rg) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

inline void accumulate(Node& dst, const std::vector<double>& g) {
    if (!dst.requires_grad) return;
    dst.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

inline void check_finite(const Tensor& t, const char* op) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) throw numeric_error(std::string(op) + ": non-finite input");
    }
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_acc(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x k] += G[m x n] * B^T  (B is k x n)
inline void gemm_nt_acc(const double* g, const double* b, double* c,
                        std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* grow = g + i * n;
            const double* brow = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            c[i * k + p] += s;
        }
    }
}

// C[k x n] += A^T * G  (A is m x k, G is m x n)
inline void gemm_tn_acc(const double* a, const double* g, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* grow = g + i * n;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw contract_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

}  // namespace detail

// ----------------------------- elementwise -----------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        detail::accumulate(*self.parents[1], self.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        auto& b2 = *self.parents[1];
        if (b2.requires_grad) {
            b2.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) b2.grad[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& a2 = *self.parents[0];
        auto& b2 = *self.parents[1];
        if (a2.requires_grad) {
            a2.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a2.grad[i] += self.grad[i] * b2.value[i];
        }
        if (b2.requires_grad) {
            b2.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) b2.grad[i] += self.grad[i] * a2.value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
    return detail::make_op(a.shape(), std::move(out), {a}, [c](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a2.grad[i] += self.grad[i] * c;
    });
}

// m[r x c] + row vector v[c] broadcast over rows
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (m.shape().size() != 2 || v.shape().size() != 1 || m.dim(1) != v.dim(0))
        throw contract_error("add_rowvec: need [r x c] and [c], got " + shape_str(m.shape()) + " and " +
                             shape_str(v.shape()));
    const std::size_t r = m.dim(0), c = m.dim(1);
    std::vector<double> out(m.numel());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m(i, j) + v.at(j);
    return detail::make_op(m.shape(), std::move(out), {m, v}, [r, c](detail::Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        auto& v2 = *self.parents[1];
        if (v2.requires_grad) {
            v2.ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) v2.grad[j] += self.grad[i * c + j];
        }
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
    return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (a2.value[i] > 0.0) a2.grad[i] += self.grad[i];
    });
}

// tanh-approximation GELU
inline Tensor gelu(const Tensor& a) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.at(i);
        out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
    }
    return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = a2.value[i];
            const double u = kC * (x + kA * x * x * x);
            const double t = std::tanh(u);
            const double du = kC * (1.0 + 3.0 * kA * x * x);
            const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
            a2.grad[i] += self.grad[i] * d;
        }
    });
}

// Seeded Bernoulli mask scaled by 1/(1-p); the mask is recorded on the graph
// so two forward passes differ only by their seeds.
inline Tensor dropout(const Tensor& a, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw contract_error("dropout: p must be in [0, 1)");
    if (p == 0.0) return a;
    const double inv_keep = 1.0 / (1.0 - p);
    std::vector<double> mask(a.numel());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() >= p ? inv_keep : 0.0;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * mask[i];
    return detail::make_op(a.shape(), std::move(out), {a}, [mask = std::move(mask)](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a2.grad[i] += self.grad[i] * mask[i];
    });
}

// ----------------------------- shape ops -----------------------------

inline Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) throw contract_error("transpose: tensor is not 2-D");
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a(i, j);
    return detail::make_op({c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) a2.grad[i * c + j] += self.grad[j * r + i];
    });
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    if (a.shape().size() != 2) throw contract_error("slice_cols: tensor is not 2-D");
    const std::size_t r = a.dim(0), c = a.dim(1);
    if (c0 >= c1 || c1 > c) throw contract_error("slice_cols: bad column range");
    const std::size_t w = c1 - c0;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a(i, c0 + j);
    return detail::make_op({r, w}, std::move(out), {a}, [r, c, c0, w](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) a2.grad[i * c + c0 + j] += self.grad[i * w + j];
    });
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    if (a.shape().size() != 2) throw contract_error("slice_rows: tensor is not 2-D");
    const std::size_t r = a.dim(0), c = a.dim(1);
    if (r0 >= r1 || r1 > r) throw contract_error("slice_rows: bad row range");
    const std::size_t h = r1 - r0;
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(r0 * c),
                            a.values().begin() + static_cast<std::ptrdiff_t>(r1 * c));
    return detail::make_op({h, c}, std::move(out), {a}, [r0, c, h](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < h * c; ++i) a2.grad[r0 * c + i] += self.grad[i];
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: no inputs");
    const std::size_t r = parts[0].dim(0);
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.dim(0) != r) throw contract_error("concat_cols: row mismatch");
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<double> out(r * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = widths[k];
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = parts[k](i, j);
        off += w;
    }
    return detail::make_op({r, total}, std::move(out), parts,
                           [r, total, widths = std::move(widths)](detail::Node& self) {
                               std::size_t off2 = 0;
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                   auto& p = *self.parents[k];
                                   const std::size_t w = widths[k];
                                   if (p.requires_grad) {
                                       p.ensure_grad();
                                       for (std::size_t i = 0; i < r; ++i)
                                           for (std::size_t j = 0; j < w; ++j)
                                               p.grad[i * w + j] += self.grad[i * total + off2 + j];
                                   }
                                   off2 += w;
                               }
                           });
}

// Gather rows of a [V x d] table by token id (embedding lookup).
inline Tensor rows_gather(const Tensor& table, const std::vector<int>& ids) {
    if (table.shape().size() != 2) throw contract_error("rows_gather: table is not 2-D");
    const std::size_t v = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= v)
            throw contract_error("rows_gather: id out of range");
        for (std::size_t j = 0; j < d; ++j) out[t * d + j] = table(static_cast<std::size_t>(ids[t]), j);
    }
    return detail::make_op({ids.size(), d}, std::move(out), {table}, [ids, d](detail::Node& self) {
        auto& tab = *self.parents[0];
        if (!tab.requires_grad) return;
        tab.ensure_grad();
        for (std::size_t t = 0; t < ids.size(); ++t)
            for (std::size_t j = 0; j < d; ++j)
                tab.grad[static_cast<std::size_t>(ids[t]) * d + j] += self.grad[t * d + j];
    });
}

inline Tensor stack_scalars(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw contract_error("stack_scalars: no inputs");
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i].item();
    return detail::make_op({xs.size()}, std::move(out), xs, [](detail::Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            auto& p = *self.parents[i];
            if (p.requires_grad) {
                p.ensure_grad();
                p.grad[0] += self.grad[i];
            }
        }
    });
}

inline Tensor pick(const Tensor& v, std::size_t idx) {
    if (v.shape().size() != 1) throw contract_error("pick: tensor is not 1-D");
    if (idx >= v.numel()) throw contract_error("pick: index out of range");
    return detail::make_op({1}, {v.at(idx)}, {v}, [idx](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        p.grad[idx] += self.grad[0];
    });
}

// ----------------------------- matmul -----------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw contract_error("matmul: tensors must be 2-D");
    if (a.dim(1) != b.dim(0))
        throw contract_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    detail::gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    return detail::make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        auto& a2 = *self.parents[0];
        auto& b2 = *self.parents[1];
        if (a2.requires_grad) {
            a2.ensure_grad();
            detail::gemm_nt_acc(self.grad.data(), b2.value.data(), a2.grad.data(), m, n, k);
        }
        if (b2.requires_grad) {
            b2.ensure_grad();
            detail::gemm_tn_acc(a2.value.data(), self.grad.data(), b2.grad.data(), m, k, n);
        }
    });
}

// ----------------------------- reductions -----------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return detail::make_op({1}, {s}, {a}, [](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (double& g : a2.grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw contract_error("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// Mean over the rows of a [T x d] matrix where include[t] is true.
inline Tensor mean_rows_masked(const Tensor& a, const std::vector<bool>& include) {
    if (a.shape().size() != 2) throw contract_error("mean_rows_masked: tensor is not 2-D");
    const std::size_t t = a.dim(0), d = a.dim(1);
    if (include.size() != t) throw contract_error("mean_rows_masked: mask length mismatch");
    std::size_t count = 0;
    for (bool b : include) count += b ? 1 : 0;
    if (count == 0) throw degenerate_input_error("mean_rows_masked: no rows included");
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < t; ++i) {
        if (!include[i]) continue;
        for (std::size_t j = 0; j < d; ++j) out[j] += a(i, j);
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (double& v : out) v *= inv;
    return detail::make_op({d}, std::move(out), {a}, [include, d, inv](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < include.size(); ++i) {
            if (!include[i]) continue;
            for (std::size_t j = 0; j < d; ++j) a2.grad[i * d + j] += self.grad[j] * inv;
        }
    });
}

// ----------------------------- softmax family -----------------------------

namespace detail {

inline void softmax_row(const double* x, double* y, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        denom += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= denom;
}

inline void softmax_backward_row(const double* y, const double* gy, double* gx, std::size_t n) {
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += gy[i] * y[i];
    for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dot);
}

}  // namespace detail

// Row-wise softmax of a [R x C] matrix (1-D input is one row).
inline Tensor softmax_rows(const Tensor& a) {
    detail::check_finite(a, "softmax");
    const bool vec = a.shape().size() == 1;
    const std::size_t r = vec ? 1 : a.dim(0);
    const std::size_t c = vec ? a.dim(0) : a.dim(1);
    if (!vec && a.shape().size() != 2) throw contract_error("softmax_rows: tensor must be 1-D or 2-D");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < r; ++i)
        detail::softmax_row(a.values().data() + i * c, out.data() + i * c, c);
    return detail::make_op(a.shape(), std::move(out), {a}, [r, c](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            detail::softmax_backward_row(self.value.data() + i * c, self.grad.data() + i * c,
                                         a2.grad.data() + i * c, c);
    });
}

// softmax along a chosen axis of a 1-D or 2-D tensor
inline Tensor softmax(const Tensor& a, std::size_t axis = 0) {
    if (a.shape().size() == 1) {
        if (axis != 0) throw contract_error("softmax: axis out of range for 1-D tensor");
        return softmax_rows(a);
    }
    if (a.shape().size() == 2) {
        if (axis == 1) return softmax_rows(a);
        if (axis == 0) return transpose(softmax_rows(transpose(a)));
        throw contract_error("softmax: axis out of range for 2-D tensor");
    }
    throw contract_error("softmax: tensor must be 1-D or 2-D");
}

// Row-wise softmax restricted to allowed columns; masked outputs are exactly 0.
// allowed is row-major [R x C].
inline Tensor masked_softmax_rows(const Tensor& a, const std::vector<bool>& allowed) {
    if (a.shape().size() != 2) throw contract_error("masked_softmax_rows: tensor is not 2-D");
    detail::check_finite(a, "masked_softmax_rows");
    const std::size_t r = a.dim(0), c = a.dim(1);
    if (allowed.size() != r * c) throw contract_error("masked_softmax_rows: mask size mismatch");
    std::vector<double> out(a.numel(), 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            if (allowed[i * c + j]) mx = std::max(mx, a(i, j));
        if (mx == -std::numeric_limits<double>::infinity())
            throw contract_error("masked_softmax_rows: a row has no allowed entries");
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (!allowed[i * c + j]) continue;
            out[i * c + j] = std::exp(a(i, j) - mx);
            denom += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
    }
    return detail::make_op(a.shape(), std::move(out), {a}, [r, c, allowed](detail::Node& self) {
        auto& a2 = *self.parents[0];
        if (!a2.requires_grad) return;
        a2.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
            for (std::size_t j = 0; j < c; ++j) {
                if (!allowed[i * c + j]) continue;
                a2.grad[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
            }
        }
    });
}

inline Tensor logsumexp(const Tensor& v) {
    if (v.shape().size() != 1) throw contract_error("logsumexp: tensor is not 1-D");
    detail::check_finite(v, "logsumexp");
    const std::size_t n = v.numel();
    double mx = v.at(0);
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v.at(i));
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v.at(i) - mx);
    return detail::make_op({1}, {mx + std::log(s)}, {v}, [n](detail::Node& self) {
        auto& v2 = *self.parents[0];
        if (!v2.requires_grad) return;
        v2.ensure_grad();
        std::vector<double> sm(n);
        detail::softmax_row(v2.value.data(), sm.data(), n);
        for (std::size_t i = 0; i < n; ++i) v2.grad[i] += self.grad[0] * sm[i];
    });
}

// ----------------------------- normalization -----------------------------

// Row-wise layer norm of [R x C] with per-column gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    if (x.shape().size() != 2) throw contract_error("layer_norm: tensor is not 2-D");
    const std::size_t r = x.dim(0), c = x.dim(1);
    if (gain.shape() != Shape{c} || bias.shape() != Shape{c})
        throw contract_error("layer_norm: gain/bias must be [C]");
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_sigma(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = inv;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (x(i, j) - mu) * inv;
            xhat[i * c + j] = h;
            out[i * c + j] = gain.at(j) * h + bias.at(j);
        }
    }
    return detail::make_op(
        x.shape(), std::move(out), {x, gain, bias},
        [r, c, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](detail::Node& self) {
            auto& x2 = *self.parents[0];
            auto& g2 = *self.parents[1];
            auto& b2 = *self.parents[2];
            if (g2.requires_grad) g2.ensure_grad();
            if (b2.requires_grad) b2.ensure_grad();
            if (x2.requires_grad) x2.ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                // dxhat = dy * gain; dx = inv_sigma*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = self.grad[i * c + j] * g2.value[j];
                    m1 += dxh;
                    m2 += dxh * xhat[i * c + j];
                }
                m1 /= static_cast<double>(c);
                m2 /= static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double gy = self.grad[i * c + j];
                    const double h = xhat[i * c + j];
                    if (g2.requires_grad) g2.grad[j] += gy * h;
                    if (b2.requires_grad) b2.grad[j] += gy;
                    if (x2.requires_grad) {
                        const double dxh = gy * g2.value[j];
                        x2.grad[i * c + j] += inv_sigma[i] * (dxh - m1 - h * m2);
                    }
                }
            }
        });
}

inline Tensor l2_normalize(const Tensor& v) {
    if (v.shape().size() != 1) throw contract_error("l2_normalize: tensor is not 1-D");
    double norm2 = 0.0;
    for (double x : v.values()) norm2 += x * x;
    const double norm = std::sqrt(norm2);
    if (norm < 1e-300) throw degenerate_input_error("l2_normalize: zero-norm vector");
    const std::size_t n = v.numel();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = v.at(i) / norm;
    return detail::make_op({n}, std::move(out), {v}, [n, norm](detail::Node& self) {
        auto& v2 = *self.parents[0];
        if (!v2.requires_grad) return;
        v2.ensure_grad();
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += self.grad[i] * self.value[i];
        for (std::size_t i = 0; i < n; ++i)
            v2.grad[i] += (self.grad[i] - self.value[i] * dot) / norm;
    });
}

// ----------------------------- similarity -----------------------------

inline Tensor dot(const Tensor& u, const Tensor& v) {
    if (u.shape().size() != 1 || v.shape().size() != 1 || u.numel() != v.numel())
        throw contract_error("dot: need equal-length vectors");
    double s = 0.0;
    for (std::size_t i = 0; i < u.numel(); ++i) s += u.at(i) * v.at(i);
    return detail::make_op({1}, {s}, {u, v}, [](detail::Node& self) {
        auto& u2 = *self.parents[0];
        auto& v2 = *self.parents[1];
        if (u2.requires_grad) {
            u2.ensure_grad();
            for (std::size_t i = 0; i < u2.value.size(); ++i) u2.grad[i] += self.grad[0] * v2.value[i];
        }
        if (v2.requires_grad) {
            v2.ensure_grad();
            for (std::size_t i = 0; i < v2.value.size(); ++i) v2.grad[i] += self.grad[0] * u2.value[i];
        }
    });
}

inline Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
    if (u.shape().size() != 1 || v.shape().size() != 1 || u.numel() != v.numel())
        throw contract_error("cosine_similarity: need equal-length vectors");
    const std::size_t n = u.numel();
    double uu = 0.0, vv = 0.0, uv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        uu += u.at(i) * u.at(i);
        vv += v.at(i) * v.at(i);
        uv += u.at(i) * v.at(i);
    }
    const double nu = std::sqrt(uu), nv = std::sqrt(vv);
    if (nu < 1e-300 || nv < 1e-300)
        throw degenerate_input_error("cosine_similarity: zero-norm vector");
    const double cos = uv / (nu * nv);
    return detail::make_op({1}, {cos}, {u, v}, [n, nu, nv, cos](detail::Node& self) {
        auto& u2 = *self.parents[0];
        auto& v2 = *self.parents[1];
        const double g = self.grad[0];
        if (u2.requires_grad) {
            u2.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                u2.grad[i] += g * (v2.value[i] / (nu * nv) - cos * u2.value[i] / (nu * nu));
        }
        if (v2.requires_grad) {
            v2.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                v2.grad[i] += g * (u2.value[i] / (nu * nv) - cos * v2.value[i] / (nv * nv));
        }
    });
}

// max(x, 0) on a scalar; used to floor retrieval weights
inline Tensor clamp_min0(const Tensor& x) { return relu(x); }

// ----------------------------- cross entropy -----------------------------

enum class Reduction { mean, sum };

// Token-level negative log likelihood over [T x V] logits.  Positions whose
// target equals pad_id contribute nothing and are excluded from the mean.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int pad_id,
                            Reduction reduction = Reduction::mean) {
    if (logits.shape().size() != 2) throw contract_error("cross_entropy: logits must be [T x V]");
    const std::size_t t = logits.dim(0), v = logits.dim(1);
    if (targets.size() != t) throw contract_error("cross_entropy: target length mismatch");
    detail::check_finite(logits, "cross_entropy");
    std::size_t active = 0;
    for (int id : targets) {
        if (id == pad_id) continue;
        ++active;
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw contract_error("cross_entropy: target id out of range");
    }
    if (active == 0) throw degenerate_input_error("cross_entropy: all-pad target sequence");

    double total = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        if (targets[i] == pad_id) continue;
        const double* row = logits.values().data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        total += mx + std::log(denom) - row[static_cast<std::size_t>(targets[i])];
    }
    const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(active) : 1.0;
    return detail::make_op({1}, {total * norm}, {logits},
                           [t, v, targets, pad_id, norm](detail::Node& self) {
                               auto& l2 = *self.parents[0];
                               if (!l2.requires_grad) return;
                               l2.ensure_grad();
                               const double g = self.grad[0] * norm;
                               std::vector<double> sm(v);
                               for (std::size_t i = 0; i < t; ++i) {
                                   if (targets[i] == pad_id) continue;
                                   detail::softmax_row(l2.value.data() + i * v, sm.data(), v);
                                   for (std::size_t j = 0; j < v; ++j) l2.grad[i * v + j] += g * sm[j];
                                   l2.grad[i * v + static_cast<std::size_t>(targets[i])] -= g;
                               }
                           });
}

}  // namespace codesum
