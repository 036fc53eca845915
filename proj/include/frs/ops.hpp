#pragma once

#include <numeric>

#include "frs/autodiff.hpp"
#include "frs/linalg.hpp"
#include "frs/tensor.hpp"

namespace frs {

// How masked-out attention scores are handled before the softmax.
enum class MaskMode {
    NegInf,          // replace dropped scores with -inf so they softmax to exactly zero
    ZeroPreSoftmax,  // multiply dropped scores by zero and keep them in the softmax
};

namespace detail {

// True when b's shape is a trailing suffix of a's (bias-style broadcast).
inline bool is_suffix_shape(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace detail

// Elementwise sum. Shapes must match exactly, or b must be a trailing-suffix
// shape of a (it is then tiled over a's leading axes).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const bool same = a.shape() == b.shape();
    if (!same && !detail::is_suffix_shape(a.shape(), b.shape()))
        throw DimensionError("add shapes incompatible: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const int64_t bn = b.numel();
    Tensor<T> out(a.shape());
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % bn];
    detail::debug_check_finite(out, "add");

    if (detail::wants_grad<T>({&a, &b})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("add", [a, b, out, n, bn]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (a.requires_grad()) {
                T* da = a.grad_vec().data();
                for (int64_t i = 0; i < n; ++i) da[i] += g[i];
            }
            if (b.requires_grad()) {
                T* db = b.grad_vec().data();
                for (int64_t i = 0; i < n; ++i) db[i % bn] += g[i];
            }
        });
    }
    return out;
}

// Elementwise product of same-shape tensors.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul shapes differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
    detail::debug_check_finite(out, "mul");

    if (detail::wants_grad<T>({&a, &b})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("mul", [a, b, out, n]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (a.requires_grad()) {
                T* da = a.grad_vec().data();
                const T* bv2 = b.data();
                for (int64_t i = 0; i < n; ++i) da[i] += g[i] * bv2[i];
            }
            if (b.requires_grad()) {
                T* db = b.grad_vec().data();
                const T* av2 = a.data();
                for (int64_t i = 0; i < n; ++i) db[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

// Multiply by a compile-time-known constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    const T* av = a.data();
    T* ov = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * c;
    detail::debug_check_finite(out, "scale");

    if (detail::wants_grad<T>({&a})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("scale", [a, out, c, n]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* da = a.grad_vec().data();
            for (int64_t i = 0; i < n; ++i) da[i] += g[i] * c;
        });
    }
    return out;
}

// Gaussian error linear unit, tanh form:
// 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T k0 = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k1 = static_cast<T>(0.044715);
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const T v = xv[i];
        ov[i] = T{0.5} * v * (T{1} + std::tanh(k0 * (v + k1 * v * v * v)));
    }
    detail::debug_check_finite(out, "gelu");

    if (detail::wants_grad<T>({&x})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("gelu", [x, out, n]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            const T* xv2 = x.data();
            T* dx = x.grad_vec().data();
            for (int64_t i = 0; i < n; ++i) {
                const T v = xv2[i];
                const T t = std::tanh(k0 * (v + k1 * v * v * v));
                const T du = k0 * (T{1} + T{3} * k1 * v * v);
                dx[i] += g[i] * (T{0.5} * (T{1} + t) + T{0.5} * v * (T{1} - t * t) * du);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const T v = xv[i];
        if (v >= T{0}) {
            ov[i] = T{1} / (T{1} + std::exp(-v));
        } else {
            const T e = std::exp(v);
            ov[i] = e / (T{1} + e);
        }
    }
    detail::debug_check_finite(out, "sigmoid");

    if (detail::wants_grad<T>({&x})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("sigmoid", [x, out, n]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            const T* y = out.data();
            T* dx = x.grad_vec().data();
            for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * y[i] * (T{1} - y[i]);
        });
    }
    return out;
}

// Same data, new shape (copying). Element count must be preserved.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    Tensor<T> out(shape);
    if (out.numel() != x.numel())
        throw DimensionError("reshape cannot map " + shape_str(x.shape()) + " onto " +
                             shape_str(shape));
    std::copy(x.data(), x.data() + x.numel(), out.data());

    if (detail::wants_grad<T>({&x})) {
        out.set_requires_grad(true);
        const int64_t n = x.numel();
        active_tape<T>()->record("reshape", [x, out, n]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* dx = x.grad_vec().data();
            for (int64_t i = 0; i < n; ++i) dx[i] += g[i];
        });
    }
    return out;
}

namespace detail {

// Walks the output index space of a permutation and reports the matching
// source offset for each linear output position.
template <typename T, typename Fn>
void for_each_permuted(const Shape& out_shape, const std::vector<int64_t>& src_stride_by_out_axis,
                       Fn&& fn) {
    const int nd = static_cast<int>(out_shape.size());
    const int64_t total = shape_numel(out_shape);
    std::vector<int> coord(nd, 0);
    int64_t src = 0;
    for (int64_t lin = 0; lin < total; ++lin) {
        fn(lin, src);
        for (int axis = nd - 1; axis >= 0; --axis) {
            src += src_stride_by_out_axis[axis];
            if (++coord[axis] < out_shape[axis]) break;
            src -= static_cast<int64_t>(coord[axis]) * src_stride_by_out_axis[axis];
            coord[axis] = 0;
        }
    }
}

}  // namespace detail

// Axis permutation: out axis i takes x axis perm[i].
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<int>& perm) {
    const int nd = x.ndim();
    if (static_cast<int>(perm.size()) != nd)
        throw DimensionError("transpose perm rank mismatch for " + shape_str(x.shape()));
    std::vector<bool> seen(nd, false);
    for (int p : perm) {
        if (p < 0 || p >= nd || seen[p]) throw ConfigError("transpose perm is not a permutation");
        seen[p] = true;
    }
    Shape out_shape(nd);
    for (int i = 0; i < nd; ++i) out_shape[i] = x.shape()[perm[i]];
    const auto xs = row_major_strides(x.shape());
    std::vector<int64_t> stride_by_out(nd);
    for (int i = 0; i < nd; ++i) stride_by_out[i] = xs[perm[i]];

    Tensor<T> out(out_shape);
    const T* xv = x.data();
    T* ov = out.data();
    detail::for_each_permuted<T>(out_shape, stride_by_out,
                                 [&](int64_t lin, int64_t src) { ov[lin] = xv[src]; });

    if (detail::wants_grad<T>({&x})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("transpose", [x, out, out_shape, stride_by_out]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* dx = x.grad_vec().data();
            detail::for_each_permuted<T>(out_shape, stride_by_out,
                                         [&](int64_t lin, int64_t src) { dx[src] += g[lin]; });
        });
    }
    return out;
}

// Joins tensors along one axis; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat needs at least one input");
    const int nd = parts[0].ndim();
    if (axis < 0 || axis >= nd) throw ConfigError("concat axis out of range");
    int total_axis = 0;
    for (const auto& p : parts) {
        if (p.ndim() != nd)
            throw DimensionError("concat rank mismatch: " + shape_str(p.shape()));
        for (int i = 0; i < nd; ++i)
            if (i != axis && p.shape()[i] != parts[0].shape()[i])
                throw DimensionError("concat extents differ off-axis: " + shape_str(p.shape()) +
                                     " vs " + shape_str(parts[0].shape()));
        total_axis += p.shape()[axis];
    }
    Shape out_shape = parts[0].shape();
    out_shape[axis] = total_axis;
    Tensor<T> out(out_shape);

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < nd; ++i) inner *= out_shape[i];
    {
        int64_t offset = 0;
        for (const auto& p : parts) {
            const int64_t pa = p.shape()[axis];
            const T* pv = p.data();
            for (int64_t o = 0; o < outer; ++o)
                std::copy(pv + o * pa * inner, pv + (o + 1) * pa * inner,
                          out.data() + (o * total_axis + offset) * inner);
            offset += pa;
        }
    }

    bool any_grad = false;
    for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
    if (any_grad && active_tape<T>() != nullptr) {
        out.set_requires_grad(true);
        active_tape<T>()->record("concat", [parts, out, outer, inner, total_axis, axis]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            int64_t offset = 0;
            for (const auto& p : parts) {
                const int64_t pa = p.shape()[axis];
                if (p.requires_grad()) {
                    T* dp = p.grad_vec().data();
                    for (int64_t o = 0; o < outer; ++o) {
                        const T* gsrc = g + (o * total_axis + offset) * inner;
                        T* dst = dp + o * pa * inner;
                        for (int64_t i = 0; i < pa * inner; ++i) dst[i] += gsrc[i];
                    }
                }
                offset += pa;
            }
        });
    }
    return out;
}

// Splits one axis into consecutive chunks of the given extents.
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<int>& sizes, int axis) {
    const int nd = x.ndim();
    if (axis < 0 || axis >= nd) throw ConfigError("split axis out of range");
    int sum = 0;
    for (int s : sizes) {
        if (s <= 0) throw ConfigError("split sizes must be positive");
        sum += s;
    }
    if (sum != x.shape()[axis])
        throw DimensionError("split sizes sum to " + std::to_string(sum) + " but axis has " +
                             std::to_string(x.shape()[axis]));

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (int i = axis + 1; i < nd; ++i) inner *= x.shape()[i];
    const int64_t total_axis = x.shape()[axis];

    std::vector<Tensor<T>> outs;
    outs.reserve(sizes.size());
    int64_t offset = 0;
    for (int s : sizes) {
        Shape os = x.shape();
        os[axis] = s;
        Tensor<T> part(os);
        const T* xv = x.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(xv + (o * total_axis + offset) * inner,
                      xv + (o * total_axis + offset + s) * inner, part.data() + o * s * inner);
        outs.push_back(std::move(part));
        offset += s;
    }

    if (detail::wants_grad<T>({&x})) {
        for (auto& o : outs) o.set_requires_grad(true);
        std::vector<int64_t> offsets(sizes.size());
        int64_t acc = 0;
        for (size_t i = 0; i < sizes.size(); ++i) {
            offsets[i] = acc;
            acc += sizes[i];
        }
        active_tape<T>()->record("split", [x, outs, sizes, offsets, outer, inner, total_axis]() {
            T* dx = nullptr;
            for (size_t pi = 0; pi < outs.size(); ++pi) {
                if (!outs[pi].has_grad()) continue;
                if (!dx) dx = x.grad_vec().data();
                const T* g = outs[pi].grad_data();
                const int64_t s = sizes[pi];
                for (int64_t o = 0; o < outer; ++o) {
                    T* dst = dx + (o * total_axis + offsets[pi]) * inner;
                    const T* src = g + o * s * inner;
                    for (int64_t i = 0; i < s * inner; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return outs;
}

// Softmax over the last axis. Rows may contain -inf entries (they map to an
// exact zero with an exact-zero gradient); a row of only -inf has no valid
// distribution and is rejected.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.ndim() < 1) throw DimensionError("softmax_rows needs at least one axis");
    const int d = x.dim(-1);
    const int64_t rows = x.numel() / d;
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv + r * d;
        T m = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < d; ++j) m = std::max(m, row[j]);
        if (m == -std::numeric_limits<T>::infinity())
            throw NumericError("softmax_rows: a row is entirely -inf");
        T sum{0};
        T* orow = ov + r * d;
        for (int j = 0; j < d; ++j) {
            const T e = std::exp(row[j] - m);  // exp(-inf) is exactly 0
            orow[j] = e;
            sum += e;
        }
        for (int j = 0; j < d; ++j) orow[j] /= sum;
    }
    detail::debug_check_finite(out, "softmax_rows");

    if (detail::wants_grad<T>({&x})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("softmax_rows", [x, out, rows, d]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            const T* y = out.data();
            T* dx = x.grad_vec().data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* gr = g + r * d;
                const T* yr = y + r * d;
                T dot{0};
                for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
                T* dr = dx + r * d;
                for (int j = 0; j < d; ++j) dr[j] += yr[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

// Applies a binary keep-mask to attention scores. The mask is a constant
// (never differentiated through); dropped positions get zero gradient.
template <typename T>
Tensor<T> apply_topk_mask(const Tensor<T>& scores, const Tensor<T>& mask, MaskMode mode) {
    if (scores.shape() != mask.shape())
        throw DimensionError("mask shape " + shape_str(mask.shape()) + " does not match scores " +
                             shape_str(scores.shape()));
    const int64_t n = scores.numel();
    const T* mv = mask.data();
    for (int64_t i = 0; i < n; ++i)
        if (mv[i] != T{0} && mv[i] != T{1})
            throw ContractError("mask entries must be exactly 0 or 1");

    Tensor<T> out(scores.shape());
    const T* sv = scores.data();
    T* ov = out.data();
    if (mode == MaskMode::NegInf) {
        constexpr T ninf = -std::numeric_limits<T>::infinity();
        for (int64_t i = 0; i < n; ++i) ov[i] = mv[i] == T{1} ? sv[i] : ninf;
    } else {
        for (int64_t i = 0; i < n; ++i) ov[i] = sv[i] * mv[i];
    }
    detail::debug_check_finite(out, "apply_topk_mask", /*allow_neg_inf=*/mode == MaskMode::NegInf);

    if (detail::wants_grad<T>({&scores})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("apply_topk_mask", [scores, mask, out, n]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            const T* mv2 = mask.data();
            T* ds = scores.grad_vec().data();
            for (int64_t i = 0; i < n; ++i) ds[i] += g[i] * mv2[i];
        });
    }
    return out;
}

// Per-position channel normalization of an NCHW tensor: for every (n, h, w)
// the C values are standardized (biased variance, given epsilon) and then
// scaled/shifted by the learned per-channel gamma and beta.
template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              T eps = static_cast<T>(1e-6)) {
    if (x.ndim() != 4)
        throw DimensionError("layer_norm_channels input must be NCHW, got " + shape_str(x.shape()));
    const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.ndim() != 1 || gamma.dim(0) != ch || beta.ndim() != 1 || beta.dim(0) != ch)
        throw DimensionError("layer_norm_channels gamma/beta must have shape (C)");
    if (!(eps > T{0})) throw ConfigError("layer_norm_channels epsilon must be positive");

    const int64_t hw = static_cast<int64_t>(h) * w;
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    const T* gv = gamma.data();
    const T* bv = beta.data();
    T* ov = out.data();
    for (int n = 0; n < batch; ++n) {
        const T* xn = xv + static_cast<int64_t>(n) * ch * hw;
        T* on = ov + static_cast<int64_t>(n) * ch * hw;
        for (int64_t s = 0; s < hw; ++s) {
            T mean{0};
            for (int c = 0; c < ch; ++c) mean += xn[c * hw + s];
            mean /= ch;
            T var{0};
            for (int c = 0; c < ch; ++c) {
                const T d = xn[c * hw + s] - mean;
                var += d * d;
            }
            var /= ch;
            const T inv = T{1} / std::sqrt(var + eps);
            for (int c = 0; c < ch; ++c)
                on[c * hw + s] = gv[c] * ((xn[c * hw + s] - mean) * inv) + bv[c];
        }
    }
    detail::debug_check_finite(out, "layer_norm_channels");

    if (detail::wants_grad<T>({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("layer_norm_channels", [x, gamma, beta, out, batch, ch, hw,
                                                         eps]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            const T* xv2 = x.data();
            const T* gv2 = gamma.data();
            const bool need_dx = x.requires_grad();
            const bool need_dg = gamma.requires_grad();
            const bool need_db = beta.requires_grad();
            T* dx = need_dx ? x.grad_vec().data() : nullptr;
            T* dgm = need_dg ? gamma.grad_vec().data() : nullptr;
            T* dbt = need_db ? beta.grad_vec().data() : nullptr;
            std::vector<T> xhat(ch);
            for (int n = 0; n < batch; ++n) {
                const T* xn = xv2 + static_cast<int64_t>(n) * ch * hw;
                const T* gn = g + static_cast<int64_t>(n) * ch * hw;
                T* dxn = need_dx ? dx + static_cast<int64_t>(n) * ch * hw : nullptr;
                for (int64_t s = 0; s < hw; ++s) {
                    T mean{0};
                    for (int c = 0; c < ch; ++c) mean += xn[c * hw + s];
                    mean /= ch;
                    T var{0};
                    for (int c = 0; c < ch; ++c) {
                        const T d = xn[c * hw + s] - mean;
                        var += d * d;
                    }
                    var /= ch;
                    const T inv = T{1} / std::sqrt(var + eps);
                    for (int c = 0; c < ch; ++c) xhat[c] = (xn[c * hw + s] - mean) * inv;
                    if (need_dg || need_db) {
                        for (int c = 0; c < ch; ++c) {
                            if (dgm) dgm[c] += gn[c * hw + s] * xhat[c];
                            if (dbt) dbt[c] += gn[c * hw + s];
                        }
                    }
                    if (need_dx) {
                        T a{0}, b{0};
                        for (int c = 0; c < ch; ++c) {
                            const T q = gn[c * hw + s] * gv2[c];
                            a += q;
                            b += q * xhat[c];
                        }
                        a /= ch;
                        b /= ch;
                        for (int c = 0; c < ch; ++c)
                            dxn[c * hw + s] += (gn[c * hw + s] * gv2[c] - a - xhat[c] * b) * inv;
                    }
                }
            }
        });
    }
    return out;
}

// Mean of every element, as a 1-element tensor.
template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    const int64_t n = x.numel();
    Tensor<T> out(Shape{1});
    const T* xv = x.data();
    T acc{0};
    for (int64_t i = 0; i < n; ++i) acc += xv[i];
    out.data()[0] = acc / static_cast<T>(n);
    detail::debug_check_finite(out, "mean_all");

    if (detail::wants_grad<T>({&x})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("mean_all", [x, out, n]() {
            if (!out.has_grad()) return;
            const T g = out.grad_data()[0] / static_cast<T>(n);
            T* dx = x.grad_vec().data();
            for (int64_t i = 0; i < n; ++i) dx[i] += g;
        });
    }
    return out;
}

// NCHW -> (N, C) spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.ndim() != 4)
        throw DimensionError("global_avg_pool input must be NCHW, got " + shape_str(x.shape()));
    const int batch = x.dim(0), ch = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor<T> out(Shape{batch, ch});
    const T* xv = x.data();
    T* ov = out.data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(batch) * ch; ++nc) {
        T acc{0};
        const T* src = xv + nc * hw;
        for (int64_t s = 0; s < hw; ++s) acc += src[s];
        ov[nc] = acc / static_cast<T>(hw);
    }
    detail::debug_check_finite(out, "global_avg_pool");

    if (detail::wants_grad<T>({&x})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("global_avg_pool", [x, out, batch, ch, hw]() {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* dx = x.grad_vec().data();
            for (int64_t nc = 0; nc < static_cast<int64_t>(batch) * ch; ++nc) {
                const T gv = g[nc] / static_cast<T>(hw);
                T* dst = dx + nc * hw;
                for (int64_t s = 0; s < hw; ++s) dst[s] += gv;
            }
        });
    }
    return out;
}

// Mean softmax cross entropy over a batch of logit rows (N, K) against
// integer class labels.
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2)
        throw DimensionError("cross_entropy_logits expects (N, K) logits, got " +
                             shape_str(logits.shape()));
    const int batch = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != batch)
        throw ContractError("cross_entropy_logits got " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(batch) + " rows");
    for (int y : labels)
        if (y < 0 || y >= k)
            throw ContractError("label " + std::to_string(y) + " outside [0, " +
                                std::to_string(k) + ")");

    Tensor<T> out(Shape{1});
    const T* lv = logits.data();
    T loss{0};
    for (int n = 0; n < batch; ++n) {
        const T* row = lv + static_cast<int64_t>(n) * k;
        T m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        T sum{0};
        for (int j = 0; j < k; ++j) sum += std::exp(row[j] - m);
        loss += m + std::log(sum) - row[labels[n]];
    }
    out.data()[0] = loss / static_cast<T>(batch);
    detail::debug_check_finite(out, "cross_entropy_logits");

    if (detail::wants_grad<T>({&logits})) {
        out.set_requires_grad(true);
        active_tape<T>()->record("cross_entropy_logits", [logits, labels, out, batch, k]() {
            if (!out.has_grad()) return;
            const T g = out.grad_data()[0] / static_cast<T>(batch);
            const T* lv2 = logits.data();
            T* dl = logits.grad_vec().data();
            for (int n = 0; n < batch; ++n) {
                const T* row = lv2 + static_cast<int64_t>(n) * k;
                T* drow = dl + static_cast<int64_t>(n) * k;
                T m = row[0];
                for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
                T sum{0};
                for (int j = 0; j < k; ++j) sum += std::exp(row[j] - m);
                for (int j = 0; j < k; ++j) {
                    const T p = std::exp(row[j] - m) / sum;
                    drow[j] += g * (p - (j == labels[n] ? T{1} : T{0}));
                }
            }
        });
    }
    return out;
}

}  // namespace frs
