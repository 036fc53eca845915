#pragma once

#include <cstring>

#include "frs/autodiff.hpp"
#include "frs/tensor.hpp"

namespace frs {

namespace detail {

// Row-major GEMM: C (m x n) = opA(A) * opB(B), optionally accumulating.
// opA(A) is (m x k): stored (m x k), or (k x m) read transposed when ta.
// opB(B) is (k x n): stored (k x n), or (n x k) read transposed when tb.
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int n, int k, bool ta, bool tb, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(T) * static_cast<size_t>(m) * n);
    if (!ta && !tb) {
        for (int i = 0; i < m; ++i) {
            const T* arow = a + static_cast<int64_t>(i) * k;
            T* crow = c + static_cast<int64_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                const T av = arow[p];
                if (av == T{0}) continue;
                const T* brow = b + static_cast<int64_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!ta && tb) {
        for (int i = 0; i < m; ++i) {
            const T* arow = a + static_cast<int64_t>(i) * k;
            T* crow = c + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const T* brow = b + static_cast<int64_t>(j) * k;
                T acc{0};
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += acc;
            }
        }
    } else if (ta && !tb) {
        for (int p = 0; p < k; ++p) {
            const T* arow = a + static_cast<int64_t>(p) * m;
            const T* brow = b + static_cast<int64_t>(p) * n;
            for (int i = 0; i < m; ++i) {
                const T av = arow[i];
                if (av == T{0}) continue;
                T* crow = c + static_cast<int64_t>(i) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            T* crow = c + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const T* brow = b + static_cast<int64_t>(j) * k;
                T acc{0};
                for (int p = 0; p < k; ++p) acc += a[static_cast<int64_t>(p) * m + i] * brow[p];
                crow[j] += acc;
            }
        }
    }
}

template <typename T>
void debug_check_finite(const Tensor<T>& t, const char* op, bool allow_neg_inf = false) {
#if FRS_FINITE_CHECKS
    const T* d = t.data();
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) {
        if (std::isfinite(d[i])) continue;
        if (allow_neg_inf && d[i] == -std::numeric_limits<T>::infinity()) continue;
        throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
#else
    (void)t;
    (void)op;
    (void)allow_neg_inf;
#endif
}

}  // namespace detail

// Batched matrix product over the last two axes; leading axes are batch axes
// and must match exactly. trans_a / trans_b transpose the last two axes of
// the respective operand.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw DimensionError("matmul operands must have >= 2 dims");
    if (a.ndim() != b.ndim())
        throw DimensionError("matmul batch ranks differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const int nd = a.ndim();
    int64_t batch = 1;
    for (int i = 0; i < nd - 2; ++i) {
        if (a.shape()[i] != b.shape()[i])
            throw DimensionError("matmul batch dims differ: " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
        batch *= a.shape()[i];
    }
    const int ar = a.dim(-2), ac = a.dim(-1);
    const int br = b.dim(-2), bc = b.dim(-1);
    const int m = trans_a ? ac : ar;
    const int k = trans_a ? ar : ac;
    const int kb = trans_b ? bc : br;
    const int n = trans_b ? br : bc;
    if (k != kb)
        throw DimensionError("matmul inner dims disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));

    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);

    const int64_t a_step = static_cast<int64_t>(ar) * ac;
    const int64_t b_step = static_cast<int64_t>(br) * bc;
    const int64_t o_step = static_cast<int64_t>(m) * n;
    for (int64_t bi = 0; bi < batch; ++bi)
        detail::gemm(a.data() + bi * a_step, b.data() + bi * b_step, out.data() + bi * o_step, m,
                     n, k, trans_a, trans_b, false);
    detail::debug_check_finite(out, "matmul");

    if (detail::wants_grad<T>({&a, &b})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("matmul", [a, b, out, batch, a_step, b_step, o_step, m, n, k,
                                            trans_a, trans_b]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (a.requires_grad()) {
                T* da = a.grad_vec().data();
                for (int64_t bi = 0; bi < batch; ++bi) {
                    const T* gb = g + bi * o_step;
                    const T* bb = b.data() + bi * b_step;
                    T* dab = da + bi * a_step;
                    if (!trans_a)
                        detail::gemm(gb, bb, dab, m, k, n, false, !trans_b, true);
                    else
                        detail::gemm(bb, gb, dab, k, m, n, trans_b, true, true);
                }
            }
            if (b.requires_grad()) {
                T* db = b.grad_vec().data();
                for (int64_t bi = 0; bi < batch; ++bi) {
                    const T* gb = g + bi * o_step;
                    const T* ab = a.data() + bi * a_step;
                    T* dbb = db + bi * b_step;
                    if (!trans_b)
                        detail::gemm(ab, gb, dbb, k, n, m, !trans_a, false, true);
                    else
                        detail::gemm(gb, ab, dbb, n, k, m, true, trans_a, true);
                }
            }
        });
    }
    return out;
}

// a (..., K) times w (K, N) plus optional bias (N); w broadcasts over the
// leading axes of a.
template <typename T>
Tensor<T> linear_matmul(const Tensor<T>& a, const Tensor<T>& w, const Tensor<T>* bias = nullptr) {
    if (a.ndim() < 1 || w.ndim() != 2)
        throw DimensionError("linear_matmul expects a (..., K) input and a (K, N) weight");
    const int k = a.dim(-1);
    if (w.dim(0) != k)
        throw DimensionError("linear_matmul inner dims disagree: " + shape_str(a.shape()) +
                             " x " + shape_str(w.shape()));
    const int n = w.dim(1);
    if (bias && (bias->ndim() != 1 || bias->dim(0) != n))
        throw DimensionError("linear_matmul bias must have shape (N)");
    const int64_t rows = a.numel() / k;

    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);
    detail::gemm(a.data(), w.data(), out.data(), static_cast<int>(rows), n, k, false, false,
                 false);
    if (bias) {
        T* o = out.data();
        const T* bv = bias->data();
        for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < n; ++j) o[r * n + j] += bv[j];
    }
    detail::debug_check_finite(out, "linear_matmul");

    const Tensor<T> bcopy = bias ? *bias : Tensor<T>();
    if (detail::wants_grad<T>({&a, &w, bias})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("linear_matmul", [a, w, bcopy, out, rows, n, k]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (a.requires_grad())
                detail::gemm(g, w.data(), a.grad_vec().data(), static_cast<int>(rows), k, n,
                             false, true, true);
            if (w.requires_grad())
                detail::gemm(a.data(), g, w.grad_vec().data(), k, n, static_cast<int>(rows),
                             true, false, true);
            if (bcopy.defined() && bcopy.requires_grad()) {
                T* db = bcopy.grad_vec().data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < n; ++j) db[j] += g[r * n + j];
            }
        });
    }
    return out;
}

namespace detail {

inline int conv_out_extent(int in, int kernel, int stride, int padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

// Gathers one (channels_per_group * kh * kw) x (ho * wo) patch matrix.
template <typename T>
void im2col(const T* x, int channels, int h, int w, int kh, int kw, int stride, int padding,
            int ho, int wo, T* col) {
    const int64_t spatial = static_cast<int64_t>(ho) * wo;
    int64_t row = 0;
    for (int c = 0; c < channels; ++c) {
        const T* xc = x + static_cast<int64_t>(c) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                T* dst = col + row * spatial;
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride - padding + ki;
                    if (ii < 0 || ii >= h) {
                        std::fill(dst + static_cast<int64_t>(oi) * wo,
                                  dst + static_cast<int64_t>(oi + 1) * wo, T{0});
                        continue;
                    }
                    const T* src = xc + static_cast<int64_t>(ii) * w;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride - padding + kj;
                        dst[static_cast<int64_t>(oi) * wo + oj] =
                            (jj < 0 || jj >= w) ? T{0} : src[jj];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accumulate(const T* col, int channels, int h, int w, int kh, int kw, int stride,
                       int padding, int ho, int wo, T* dx) {
    const int64_t spatial = static_cast<int64_t>(ho) * wo;
    int64_t row = 0;
    for (int c = 0; c < channels; ++c) {
        T* xc = dx + static_cast<int64_t>(c) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                const T* src = col + row * spatial;
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride - padding + ki;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride - padding + kj;
                        if (jj < 0 || jj >= w) continue;
                        xc[static_cast<int64_t>(ii) * w + jj] +=
                            src[static_cast<int64_t>(oi) * wo + oj];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Cross-correlation with zero padding over NCHW input. weight is
// (out_channels, in_channels / groups, kh, kw); bias, when given, is
// (out_channels). Dispatches to a plain GEMM for 1x1 projections and direct
// loops for depthwise kernels; the general path goes through im2col.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                 int padding, int groups) {
    if (x.ndim() != 4) throw DimensionError("conv2d input must be NCHW, got " + shape_str(x.shape()));
    if (w.ndim() != 4) throw DimensionError("conv2d weight must be 4-D, got " + shape_str(w.shape()));
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d padding must be >= 0");
    const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wdt = x.dim(3);
    const int cout = w.dim(0), wcin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw ConfigError("conv2d groups must divide both channel counts (" +
                          std::to_string(cin) + ", " + std::to_string(cout) + ", groups " +
                          std::to_string(groups) + ")");
    if (wcin != cin / groups)
        throw DimensionError("conv2d weight expects " + std::to_string(cin / groups) +
                             " input channels per group, got " + std::to_string(wcin));
    if (bias && (bias->ndim() != 1 || bias->dim(0) != cout))
        throw DimensionError("conv2d bias must have shape (out_channels)");
    const int ho = detail::conv_out_extent(h, kh, stride, padding);
    const int wo = detail::conv_out_extent(wdt, kw, stride, padding);
    if (ho < 1 || wo < 1)
        throw DimensionError("conv2d output would be empty for input " + shape_str(x.shape()));

    Tensor<T> out(Shape{batch, cout, ho, wo});
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && padding == 0 && groups == 1);
    const bool depthwise = (groups == cin && cout == cin);
    const int64_t spatial = static_cast<int64_t>(ho) * wo;
    const int64_t in_spatial = static_cast<int64_t>(h) * wdt;
    const int cing = cin / groups, coutg = cout / groups;
    const int64_t col_rows = static_cast<int64_t>(cing) * kh * kw;

    if (pointwise) {
        for (int n = 0; n < batch; ++n)
            detail::gemm(w.data(), x.data() + static_cast<int64_t>(n) * cin * in_spatial,
                         out.data() + static_cast<int64_t>(n) * cout * spatial, cout,
                         static_cast<int>(spatial), cin, false, false, false);
    } else if (depthwise) {
        for (int n = 0; n < batch; ++n) {
            for (int c = 0; c < cin; ++c) {
                const T* xc = x.data() + (static_cast<int64_t>(n) * cin + c) * in_spatial;
                const T* wc = w.data() + static_cast<int64_t>(c) * kh * kw;
                T* oc = out.data() + (static_cast<int64_t>(n) * cout + c) * spatial;
                for (int oi = 0; oi < ho; ++oi) {
                    for (int oj = 0; oj < wo; ++oj) {
                        T acc{0};
                        for (int ki = 0; ki < kh; ++ki) {
                            const int ii = oi * stride - padding + ki;
                            if (ii < 0 || ii >= h) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                const int jj = oj * stride - padding + kj;
                                if (jj < 0 || jj >= wdt) continue;
                                acc += wc[ki * kw + kj] * xc[static_cast<int64_t>(ii) * wdt + jj];
                            }
                        }
                        oc[static_cast<int64_t>(oi) * wo + oj] = acc;
                    }
                }
            }
        }
    } else {
        std::vector<T> col(static_cast<size_t>(col_rows * spatial));
        for (int n = 0; n < batch; ++n) {
            for (int g = 0; g < groups; ++g) {
                const T* xg = x.data() + (static_cast<int64_t>(n) * cin + static_cast<int64_t>(g) * cing) * in_spatial;
                detail::im2col(xg, cing, h, wdt, kh, kw, stride, padding, ho, wo, col.data());
                detail::gemm(w.data() + static_cast<int64_t>(g) * coutg * col_rows, col.data(),
                             out.data() + (static_cast<int64_t>(n) * cout + static_cast<int64_t>(g) * coutg) * spatial,
                             coutg, static_cast<int>(spatial), static_cast<int>(col_rows), false,
                             false, false);
            }
        }
    }
    if (bias) {
        T* o = out.data();
        const T* bv = bias->data();
        for (int n = 0; n < batch; ++n)
            for (int c = 0; c < cout; ++c) {
                const T b = bv[c];
                T* oc = o + (static_cast<int64_t>(n) * cout + c) * spatial;
                for (int64_t s = 0; s < spatial; ++s) oc[s] += b;
            }
    }
    detail::debug_check_finite(out, "conv2d");

    const Tensor<T> bcopy = bias ? *bias : Tensor<T>();
    if (detail::wants_grad<T>({&x, &w, bias})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("conv2d", [x, w, bcopy, out, batch, cin, cout, h, wdt, kh, kw,
                                            stride, padding, groups, ho, wo, pointwise, depthwise,
                                            cing, coutg, col_rows, spatial, in_spatial]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (bcopy.defined() && bcopy.requires_grad()) {
                T* db = bcopy.grad_vec().data();
                for (int n = 0; n < batch; ++n)
                    for (int c = 0; c < cout; ++c) {
                        const T* gc = g + (static_cast<int64_t>(n) * cout + c) * spatial;
                        T acc{0};
                        for (int64_t s = 0; s < spatial; ++s) acc += gc[s];
                        db[c] += acc;
                    }
            }
            const bool need_dx = x.requires_grad();
            const bool need_dw = w.requires_grad();
            if (!need_dx && !need_dw) return;
            T* dx = need_dx ? x.grad_vec().data() : nullptr;
            T* dw = need_dw ? w.grad_vec().data() : nullptr;

            if (pointwise) {
                for (int n = 0; n < batch; ++n) {
                    const T* gn = g + static_cast<int64_t>(n) * cout * spatial;
                    const T* xn = x.data() + static_cast<int64_t>(n) * cin * in_spatial;
                    if (need_dw)
                        detail::gemm(gn, xn, dw, cout, cin, static_cast<int>(spatial), false,
                                     true, true);
                    if (need_dx)
                        detail::gemm(w.data(), gn, dx + static_cast<int64_t>(n) * cin * in_spatial,
                                     cin, static_cast<int>(spatial), cout, true, false, true);
                }
            } else if (depthwise) {
                for (int n = 0; n < batch; ++n) {
                    for (int c = 0; c < cin; ++c) {
                        const T* xc = x.data() + (static_cast<int64_t>(n) * cin + c) * in_spatial;
                        const T* wc = w.data() + static_cast<int64_t>(c) * kh * kw;
                        const T* gc = g + (static_cast<int64_t>(n) * cout + c) * spatial;
                        T* dxc = need_dx ? dx + (static_cast<int64_t>(n) * cin + c) * in_spatial : nullptr;
                        T* dwc = need_dw ? dw + static_cast<int64_t>(c) * kh * kw : nullptr;
                        for (int oi = 0; oi < ho; ++oi) {
                            for (int oj = 0; oj < wo; ++oj) {
                                const T gv = gc[static_cast<int64_t>(oi) * wo + oj];
                                if (gv == T{0}) continue;
                                for (int ki = 0; ki < kh; ++ki) {
                                    const int ii = oi * stride - padding + ki;
                                    if (ii < 0 || ii >= h) continue;
                                    for (int kj = 0; kj < kw; ++kj) {
                                        const int jj = oj * stride - padding + kj;
                                        if (jj < 0 || jj >= wdt) continue;
                                        if (dwc) dwc[ki * kw + kj] += gv * xc[static_cast<int64_t>(ii) * wdt + jj];
                                        if (dxc) dxc[static_cast<int64_t>(ii) * wdt + jj] += gv * wc[ki * kw + kj];
                                    }
                                }
                            }
                        }
                    }
                }
            } else {
                std::vector<T> col(static_cast<size_t>(col_rows * spatial));
                std::vector<T> dcol(need_dx ? static_cast<size_t>(col_rows * spatial) : 0);
                for (int n = 0; n < batch; ++n) {
                    for (int gi = 0; gi < groups; ++gi) {
                        const T* xg = x.data() + (static_cast<int64_t>(n) * cin + static_cast<int64_t>(gi) * cing) * in_spatial;
                        const T* gg = g + (static_cast<int64_t>(n) * cout + static_cast<int64_t>(gi) * coutg) * spatial;
                        detail::im2col(xg, cing, h, wdt, kh, kw, stride, padding, ho, wo,
                                       col.data());
                        if (need_dw)
                            detail::gemm(gg, col.data(), dw + static_cast<int64_t>(gi) * coutg * col_rows,
                                         coutg, static_cast<int>(col_rows),
                                         static_cast<int>(spatial), false, true, true);
                        if (need_dx) {
                            detail::gemm(w.data() + static_cast<int64_t>(gi) * coutg * col_rows, gg,
                                         dcol.data(), static_cast<int>(col_rows),
                                         static_cast<int>(spatial), coutg, true, false, false);
                            detail::col2im_accumulate(dcol.data(), cing, h, wdt, kh, kw, stride,
                                                      padding, ho, wo,
                                                      dx + (static_cast<int64_t>(n) * cin + static_cast<int64_t>(gi) * cing) * in_spatial);
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int padding, int groups) {
    return conv2d(x, w, &bias, stride, padding, groups);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding, int groups) {
    return conv2d(x, w, static_cast<const Tensor<T>*>(nullptr), stride, padding, groups);
}

}  // namespace frs
