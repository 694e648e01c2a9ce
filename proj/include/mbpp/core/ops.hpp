#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "mbpp/core/autograd.hpp"
#include "mbpp/core/rng.hpp"

namespace mbpp::ops {

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
inline void mm_nn(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void mm_nt(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void mm_tn(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline std::size_t leading_count(const std::vector<std::size_t>& shape, std::size_t keep_last) {
    std::size_t n = 1;
    for (std::size_t i = 0; i + keep_last < shape.size(); ++i) n *= shape[i];
    return n;
}

}  // namespace detail

/// x [..., K] times w [K, N] -> [..., N]. Leading dims are flattened.
inline Var matmul(const Var& x, const Var& w) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (ws.size() != 2 || xs.empty() || xs.back() != ws[0]) {
        throw ShapeError("matmul: " + x->value.shape_str() + " x " + w->value.shape_str());
    }
    const std::size_t k = ws[0], n = ws[1];
    const std::size_t rows = detail::leading_count(xs, 1);

    std::vector<std::size_t> out_shape(xs.begin(), xs.end() - 1);
    out_shape.push_back(n);
    Tensor y(out_shape);
    detail::mm_nn(x->value.data(), w->value.data(), y.data(), rows, k, n);

    return make_node(std::move(y), {x, w}, [rows, k, n](Node& node) {
        const Var& x = node.inputs[0];
        const Var& w = node.inputs[1];
        if (x->requires_grad) {
            detail::mm_nt(node.grad.data(), w->value.data(), x->ensure_grad().data(), rows, n, k);
        }
        if (w->requires_grad) {
            detail::mm_tn(x->value.data(), node.grad.data(), w->ensure_grad().data(), k, rows, n);
        }
    });
}

/// Batched matmul over equal leading dims: a [..., M, K] x b [..., K, N]
/// (or [..., N, K] when trans_b) -> [..., M, N].
inline Var bmm(const Var& a, const Var& b, bool trans_b = false) {
    const auto& as = a->value.shape();
    const auto& bs = b->value.shape();
    if (as.size() < 2 || as.size() != bs.size() ||
        !std::equal(as.begin(), as.end() - 2, bs.begin())) {
        throw ShapeError("bmm: " + a->value.shape_str() + " x " + b->value.shape_str());
    }
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as[as.size() - 1];
    const std::size_t n = trans_b ? bs[bs.size() - 2] : bs[bs.size() - 1];
    const std::size_t bk = trans_b ? bs[bs.size() - 1] : bs[bs.size() - 2];
    if (bk != k) {
        throw ShapeError("bmm: contraction mismatch " + a->value.shape_str() + " x " +
                         b->value.shape_str());
    }
    const std::size_t batch = detail::leading_count(as, 2);

    std::vector<std::size_t> out_shape(as.begin(), as.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor y(out_shape);
    for (std::size_t i = 0; i < batch; ++i) {
        const double* ap = a->value.data() + i * m * k;
        const double* bp = b->value.data() + i * n * k;
        double* yp = y.data() + i * m * n;
        if (trans_b) {
            detail::mm_nt(ap, bp, yp, m, k, n);
        } else {
            detail::mm_nn(ap, bp, yp, m, k, n);
        }
    }

    return make_node(std::move(y), {a, b}, [batch, m, k, n, trans_b](Node& node) {
        const Var& a = node.inputs[0];
        const Var& b = node.inputs[1];
        for (std::size_t i = 0; i < batch; ++i) {
            const double* g = node.grad.data() + i * m * n;
            const double* ap = a->value.data() + i * m * k;
            const double* bp = b->value.data() + i * n * k;
            if (a->requires_grad) {
                double* da = a->ensure_grad().data() + i * m * k;
                if (trans_b) {
                    detail::mm_nn(g, bp, da, m, n, k);  // g [M,N] * b [N,K]
                } else {
                    detail::mm_nt(g, bp, da, m, n, k);  // g [M,N] * b[K,N]^T
                }
            }
            if (b->requires_grad) {
                double* db = b->ensure_grad().data() + i * n * k;
                if (trans_b) {
                    detail::mm_tn(g, ap, db, n, m, k);  // g^T [N,M] * a [M,K]
                } else {
                    detail::mm_tn(ap, g, db, k, m, n);  // a^T [K,M] * g [M,N]
                }
            }
        }
    });
}

inline Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) {
        throw ShapeError("add: " + a->value.shape_str() + " vs " + b->value.shape_str());
    }
    Tensor y(a->value.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] + b->value[i];
    return make_node(std::move(y), {a, b}, [](Node& node) {
        for (const Var& in : node.inputs) {
            if (!in->requires_grad) continue;
            Tensor& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
        }
    });
}

/// x [..., N] plus a row vector b [N] broadcast over leading dims.
inline Var add_rowvec(const Var& x, const Var& b) {
    const std::size_t n = b->value.size();
    if (x->value.shape().empty() || x->value.shape().back() != n) {
        throw ShapeError("add_rowvec: " + x->value.shape_str() + " + " + b->value.shape_str());
    }
    const std::size_t rows = detail::leading_count(x->value.shape(), 1);
    Tensor y(x->value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) y[r * n + j] = x->value[r * n + j] + b->value[j];
    }
    return make_node(std::move(y), {x, b}, [rows, n](Node& node) {
        const Var& x = node.inputs[0];
        const Var& b = node.inputs[1];
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < n; ++j) gb[j] += node.grad[r * n + j];
            }
        }
    });
}

inline Var scale(const Var& x, double s) {
    Tensor y(x->value.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x->value[i] * s;
    return make_node(std::move(y), {x}, [s](Node& node) {
        const Var& x = node.inputs[0];
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * s;
    });
}

/// Softmax over the last dimension.
inline Var softmax_last(const Var& x) {
    const std::size_t n = x->value.shape().back();
    const std::size_t rows = detail::leading_count(x->value.shape(), 1);
    Tensor y(x->value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x->value.data() + r * n;
        double* out = y.data() + r * n;
        double mx = in[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
    }
    return make_node(std::move(y), {x}, [rows, n](Node& node) {
        const Var& x = node.inputs[0];
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yv = node.value.data() + r * n;
            const double* g = node.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[j] * yv[j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yv[j] * (g[j] - dot);
        }
    });
}

/// Layer normalization over the last dimension with affine transform.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    const std::size_t n = x->value.shape().back();
    if (gamma->value.size() != n || beta->value.size() != n) {
        throw ShapeError("layer_norm: affine params must match last dim " + std::to_string(n));
    }
    const std::size_t rows = detail::leading_count(x->value.shape(), 1);
    Tensor y(x->value.shape());
    Tensor xhat(x->value.shape());
    std::vector<double> inv_sigma(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x->value.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += in[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double xh = (in[j] - mu) * is;
            xhat[r * n + j] = xh;
            y[r * n + j] = xh * gamma->value[j] + beta->value[j];
        }
    }
    return make_node(std::move(y), {x, gamma, beta},
                     [rows, n, xhat, inv_sigma](Node& node) {
        const Var& x = node.inputs[0];
        const Var& gamma = node.inputs[1];
        const Var& beta = node.inputs[2];
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = node.grad.data() + r * n;
                const double* xh = xhat.data() + r * n;
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = g[j] * gamma->value[j];
                    mean_d += d;
                    mean_dx += d * xh[j];
                }
                mean_d /= static_cast<double>(n);
                mean_dx /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = g[j] * gamma->value[j];
                    gx[r * n + j] += (d - mean_d - xh[j] * mean_dx) * inv_sigma[r];
                }
            }
        }
        if (gamma->requires_grad) {
            Tensor& gg = gamma->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < n; ++j) {
                    gg[j] += node.grad[r * n + j] * xhat[r * n + j];
                }
            }
        }
        if (beta->requires_grad) {
            Tensor& gb = beta->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < n; ++j) gb[j] += node.grad[r * n + j];
            }
        }
    });
}

/// Exact (erf-based) GELU.
inline Var gelu(const Var& x) {
    Tensor y(x->value.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double v = x->value[i];
        y[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
    }
    return make_node(std::move(y), {x}, [](Node& node) {
        const Var& x = node.inputs[0];
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        constexpr double inv_sqrt_2pi = 0.3989422804014326779;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double v = x->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            gx[i] += node.grad[i] * (cdf + v * pdf);
        }
    });
}

/// Concatenation along an arbitrary axis; all parts share the other dims.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: empty part list");
    const auto& ref = parts[0]->value.shape();
    if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
    std::size_t axis_total = 0;
    for (const auto& p : parts) {
        const auto& s = p->value.shape();
        if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != ref[i]) {
                throw ShapeError("concat: shape mismatch " + p->value.shape_str() + " vs " +
                                 parts[0]->value.shape_str());
            }
        }
        axis_total += s[axis];
    }
    std::vector<std::size_t> out_shape = ref;
    out_shape[axis] = axis_total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
    for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];

    Tensor y(out_shape);
    std::vector<std::size_t> part_axis(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) part_axis[p] = parts[p]->value.shape()[axis];

    for (std::size_t o = 0; o < outer; ++o) {
        double* dst = y.data() + o * axis_total * inner;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const std::size_t block = part_axis[p] * inner;
            std::memcpy(dst, parts[p]->value.data() + o * block, block * sizeof(double));
            dst += block;
        }
    }

    return make_node(std::move(y), parts, [outer, inner, axis_total, part_axis](Node& node) {
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = node.grad.data() + o * axis_total * inner;
            for (std::size_t p = 0; p < node.inputs.size(); ++p) {
                const std::size_t block = part_axis[p] * inner;
                if (node.inputs[p]->requires_grad) {
                    double* dst = node.inputs[p]->ensure_grad().data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                }
                src += block;
            }
        }
    });
}

/// Contiguous slice [start, start+len) along an axis.
inline Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t len) {
    const auto& s = x->value.shape();
    if (axis >= s.size() || start + len > s[axis]) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " + x->value.shape_str());
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t full = s[axis];

    std::vector<std::size_t> out_shape = s;
    out_shape[axis] = len;
    Tensor y(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(y.data() + o * len * inner,
                    x->value.data() + (o * full + start) * inner,
                    len * inner * sizeof(double));
    }
    return make_node(std::move(y), {x}, [outer, inner, full, start, len](Node& node) {
        const Var& x = node.inputs[0];
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = node.grad.data() + o * len * inner;
            double* dst = gx.data() + (o * full + start) * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

/// Mean over axis 1 of a [B, L, D] tensor -> [B, D].
inline Var mean_seq(const Var& x) {
    const auto& s = x->value.shape();
    if (s.size() != 3) throw ShapeError("mean_seq expects [B, L, D], got " + x->value.shape_str());
    const std::size_t b = s[0], l = s[1], d = s[2];
    Tensor y({b, d});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < l; ++t) {
            for (std::size_t j = 0; j < d; ++j) y[i * d + j] += x->value.at(i, t, j);
        }
    }
    const double inv = 1.0 / static_cast<double>(l);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= inv;
    return make_node(std::move(y), {x}, [b, l, d, inv](Node& node) {
        const Var& x = node.inputs[0];
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t t = 0; t < l; ++t) {
                for (std::size_t j = 0; j < d; ++j) gx.at(i, t, j) += node.grad[i * d + j] * inv;
            }
        }
    });
}

/// 1D convolution along the sequence axis with same padding.
/// x [B, L, Cin], w [k, Cin, Cout], bias [Cout] -> [B, L, Cout]. k must be odd.
inline Var conv1d_same(const Var& x, const Var& w, const Var& bias) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 3 || ws.size() != 3) {
        throw ShapeError("conv1d_same: x " + x->value.shape_str() + ", w " + w->value.shape_str());
    }
    const std::size_t b = xs[0], l = xs[1], cin = xs[2];
    const std::size_t k = ws[0], cout = ws[2];
    if (ws[1] != cin) {
        throw ShapeError("conv1d_same: input width " + std::to_string(cin) +
                         " does not match kernel width " + std::to_string(ws[1]));
    }
    if (k % 2 == 0) throw ValidationError("conv1d_same: kernel size must be odd, got " + std::to_string(k));
    if (bias->value.size() != cout) throw ShapeError("conv1d_same: bias size mismatch");
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);

    Tensor y({b, l, cout});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < l; ++t) {
            double* out = y.data() + (i * l + t) * cout;
            for (std::size_t o = 0; o < cout; ++o) out[o] = bias->value[o];
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(l)) continue;
                const double* in = x->value.data() + (i * l + static_cast<std::size_t>(src)) * cin;
                const double* wrow = w->value.data() + j * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double xv = in[ci];
                    if (xv == 0.0) continue;
                    const double* wp = wrow + ci * cout;
                    for (std::size_t o = 0; o < cout; ++o) out[o] += xv * wp[o];
                }
            }
        }
    }

    return make_node(std::move(y), {x, w, bias}, [b, l, cin, k, cout, pad](Node& node) {
        const Var& x = node.inputs[0];
        const Var& w = node.inputs[1];
        const Var& bias = node.inputs[2];
        if (bias->requires_grad) {
            Tensor& gb = bias->ensure_grad();
            for (std::size_t i = 0; i < b * l; ++i) {
                for (std::size_t o = 0; o < cout; ++o) gb[o] += node.grad[i * cout + o];
            }
        }
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t t = 0; t < l; ++t) {
                const double* g = node.grad.data() + (i * l + t) * cout;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(l)) continue;
                    const std::size_t si = static_cast<std::size_t>(src);
                    if (x->requires_grad) {
                        double* gx = x->ensure_grad().data() + (i * l + si) * cin;
                        const double* wrow = w->value.data() + j * cin * cout;
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            double acc = 0.0;
                            const double* wp = wrow + ci * cout;
                            for (std::size_t o = 0; o < cout; ++o) acc += wp[o] * g[o];
                            gx[ci] += acc;
                        }
                    }
                    if (w->requires_grad) {
                        const double* in = x->value.data() + (i * l + si) * cin;
                        double* gw = w->ensure_grad().data() + j * cin * cout;
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            const double xv = in[ci];
                            if (xv == 0.0) continue;
                            double* wp = gw + ci * cout;
                            for (std::size_t o = 0; o < cout; ++o) wp[o] += xv * g[o];
                        }
                    }
                }
            }
        }
    });
}

/// x [B, L, D] -> [B, D] at a fixed sequence position.
inline Var select_pos(const Var& x, std::size_t pos) {
    const auto& s = x->value.shape();
    if (s.size() != 3 || pos >= s[1]) {
        throw ShapeError("select_pos: position " + std::to_string(pos) + " in " + x->value.shape_str());
    }
    const std::size_t b = s[0], l = s[1], d = s[2];
    Tensor y({b, d});
    for (std::size_t i = 0; i < b; ++i) {
        std::memcpy(y.data() + i * d, x->value.data() + (i * l + pos) * d, d * sizeof(double));
    }
    return make_node(std::move(y), {x}, [b, l, d, pos](Node& node) {
        const Var& x = node.inputs[0];
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < b; ++i) {
            double* dst = gx.data() + (i * l + pos) * d;
            const double* src = node.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

/// v [D] -> [B, 1, D], the learned-token broadcast.
inline Var broadcast_token(const Var& v, std::size_t batch) {
    const std::size_t d = v->value.size();
    Tensor y({batch, 1, d});
    for (std::size_t i = 0; i < batch; ++i) {
        std::memcpy(y.data() + i * d, v->value.data(), d * sizeof(double));
    }
    return make_node(std::move(y), {v}, [batch, d](Node& node) {
        const Var& v = node.inputs[0];
        if (!v->requires_grad) return;
        Tensor& gv = v->ensure_grad();
        for (std::size_t i = 0; i < batch; ++i) {
            const double* src = node.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) gv[j] += src[j];
        }
    });
}

/// x [B, L, D] plus rows [0, L) of a positional table [Lmax, D].
inline Var add_positional(const Var& x, const Var& pos) {
    const auto& s = x->value.shape();
    const auto& ps = pos->value.shape();
    if (s.size() != 3 || ps.size() != 2 || ps[1] != s[2] || ps[0] < s[1]) {
        throw ShapeError("add_positional: x " + x->value.shape_str() + ", table " +
                         pos->value.shape_str());
    }
    const std::size_t b = s[0], l = s[1], d = s[2];
    Tensor y(s);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < l; ++t) {
            const double* xr = x->value.data() + (i * l + t) * d;
            const double* pr = pos->value.data() + t * d;
            double* yr = y.data() + (i * l + t) * d;
            for (std::size_t j = 0; j < d; ++j) yr[j] = xr[j] + pr[j];
        }
    }
    return make_node(std::move(y), {x, pos}, [b, l, d](Node& node) {
        const Var& x = node.inputs[0];
        const Var& pos = node.inputs[1];
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
        }
        if (pos->requires_grad) {
            Tensor& gp = pos->ensure_grad();
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t t = 0; t < l; ++t) {
                    const double* src = node.grad.data() + (i * l + t) * d;
                    double* dst = gp.data() + t * gp.shape()[1];
                    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            }
        }
    });
}

/// Inverted dropout; identity when not training or p == 0.
inline Var dropout(const Var& x, double p, Rng* rng, bool training) {
    if (!training || p <= 0.0) return x;
    if (rng == nullptr) throw ContractError("dropout: training mode requires an RNG");
    const double keep = 1.0 - p;
    Tensor mask(x->value.shape());
    Tensor y(x->value.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        mask[i] = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        y[i] = x->value[i] * mask[i];
    }
    return make_node(std::move(y), {x}, [mask](Node& node) {
        const Var& x = node.inputs[0];
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i] * mask[i];
    });
}

/// [B, L, D] -> [B, H, L, D/H].
inline Var split_heads(const Var& x, std::size_t heads) {
    const auto& s = x->value.shape();
    if (s.size() != 3 || s[2] % heads != 0) {
        throw ShapeError("split_heads: " + x->value.shape_str() + " into " + std::to_string(heads) +
                         " heads");
    }
    const std::size_t b = s[0], l = s[1], d = s[2], dh = d / heads;
    Tensor y({b, heads, l, dh});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < l; ++t) {
                std::memcpy(y.data() + ((i * heads + h) * l + t) * dh,
                            x->value.data() + (i * l + t) * d + h * dh, dh * sizeof(double));
            }
        }
    }
    return make_node(std::move(y), {x}, [b, l, d, dh, heads](Node& node) {
        const Var& x = node.inputs[0];
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t t = 0; t < l; ++t) {
                    const double* src = node.grad.data() + ((i * heads + h) * l + t) * dh;
                    double* dst = gx.data() + (i * l + t) * d + h * dh;
                    for (std::size_t j = 0; j < dh; ++j) dst[j] += src[j];
                }
            }
        }
    });
}

/// [B, H, L, dh] -> [B, L, H*dh].
inline Var merge_heads(const Var& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw ShapeError("merge_heads: " + x->value.shape_str());
    const std::size_t b = s[0], heads = s[1], l = s[2], dh = s[3], d = heads * dh;
    Tensor y({b, l, d});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < l; ++t) {
                std::memcpy(y.data() + (i * l + t) * d + h * dh,
                            x->value.data() + ((i * heads + h) * l + t) * dh, dh * sizeof(double));
            }
        }
    }
    return make_node(std::move(y), {x}, [b, l, d, dh, heads](Node& node) {
        const Var& x = node.inputs[0];
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t t = 0; t < l; ++t) {
                    const double* src = node.grad.data() + (i * l + t) * d + h * dh;
                    double* dst = gx.data() + ((i * heads + h) * l + t) * dh;
                    for (std::size_t j = 0; j < dh; ++j) dst[j] += src[j];
                }
            }
        }
    });
}

/// Mean cross-entropy of logits [B, K] against integer labels.
inline Var cross_entropy_mean(const Var& logits, const std::vector<std::uint32_t>& labels) {
    const auto& s = logits->value.shape();
    if (s.size() != 2 || s[0] != labels.size()) {
        throw ShapeError("cross_entropy_mean: logits " + logits->value.shape_str() + " with " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t b = s[0], k = s[1];
    Tensor probs({b, k});
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= k) throw ContractError("cross_entropy_mean: label out of range");
        const double* row = logits->value.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        loss += lse - row[labels[i]];
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
    }
    loss /= static_cast<double>(b);
    return make_node(Tensor::scalar(loss), {logits}, [b, k, probs, labels](Node& node) {
        const Var& logits = node.inputs[0];
        if (!logits->requires_grad) return;
        Tensor& g = logits->ensure_grad();
        const double scale = node.grad[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                const double onehot = (j == labels[i]) ? 1.0 : 0.0;
                g[i * k + j] += (probs[i * k + j] - onehot) * scale;
            }
        }
    });
}

}  // namespace mbpp::ops
