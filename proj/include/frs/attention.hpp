#pragma once

#include <algorithm>
#include <numeric>
#include <utility>

#include "frs/ops.hpp"

namespace frs {

// How the number of kept scores per row is chosen.
enum class TopkMode {
    Gdtko,  // adaptive: spatial gate density decides k per sample
    Fixed,  // constant fraction of the head dimension
};

// Settings for one attention layer. The attended slice C' = round(C * ratio)
// is split off the front of the channel axis; the remaining C'' channels
// bypass attention and rejoin at the output projection.
struct AttentionConfig {
    int channels = 0;
    double partial_ratio = 0.25;
    int heads = 1;
    MaskMode mask_mode = MaskMode::NegInf;
    TopkMode topk_mode = TopkMode::Gdtko;
    double fixed_k_fraction = 1.0;

    int attended_channels() const {
        return static_cast<int>(std::llround(channels * partial_ratio));
    }
    int bypass_channels() const { return channels - attended_channels(); }
    int head_dim() const { return attended_channels() / heads; }
    double temperature() const { return std::sqrt(static_cast<double>(head_dim())); }

    void validate() const {
        if (channels < 1) throw ConfigError("attention channels must be >= 1");
        if (heads < 1) throw ConfigError("attention heads must be >= 1");
        if (!(partial_ratio > 0.0) || partial_ratio > 1.0)
            throw ConfigError("partial_ratio must lie in (0, 1]");
        const int cp = attended_channels();
        if (cp < heads)
            throw ConfigError("attended channels " + std::to_string(cp) +
                              " is smaller than head count " + std::to_string(heads));
        if (cp % heads != 0)
            throw ConfigError("attended channels " + std::to_string(cp) +
                              " not divisible by " + std::to_string(heads) + " heads");
        if (cp > channels)
            throw ConfigError("partial_ratio rounds above the channel count");
        if (topk_mode == TopkMode::Fixed &&
            (!(fixed_k_fraction > 0.0) || fixed_k_fraction > 1.0))
            throw ConfigError("fixed_k_fraction must lie in (0, 1]");
    }
};

// Pointwise conv C' -> 1 plus sigmoid; produces the spatial density map that
// drives adaptive k selection.
template <typename T>
struct GateUnit {
    Tensor<T> w;  // (1, C', 1, 1)
    Tensor<T> b;  // (1)
};

// Row-wise keep mask over one sample's score block.
template <typename T>
struct TopKMask {
    int k = 0;
    Tensor<T> mask;  // (heads, d, d), entries exactly 0 or 1
};

template <typename T>
struct AttentionWeights {
    Tensor<T> q_pw_w, q_pw_b;  // 1x1, C' -> C'
    Tensor<T> q_dw_w, q_dw_b;  // 3x3 depthwise over C'
    Tensor<T> k_pw_w, k_pw_b;
    Tensor<T> k_dw_w, k_dw_b;
    Tensor<T> v_pw_w, v_pw_b;
    Tensor<T> v_dw_w, v_dw_b;
    GateUnit<T> gate;
    Tensor<T> rel_bias;        // (heads, d, d), zero-initialized, learned
    Tensor<T> out_w, out_b;    // 1x1, C -> C
};

// Front C' channels go to attention, the rest bypass. The bypass tensor is
// undefined (null) when the ratio covers every channel.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_partial(const Tensor<T>& x, const AttentionConfig& cfg) {
    cfg.validate();
    if (x.ndim() != 4 || x.dim(1) != cfg.channels)
        throw DimensionError("split_partial input " + shape_str(x.shape()) +
                             " does not carry " + std::to_string(cfg.channels) + " channels");
    const int cs = cfg.bypass_channels();
    if (cs == 0) return {x, Tensor<T>()};
    auto parts = split(x, {cfg.attended_channels(), cs}, 1);
    return {parts[0], parts[1]};
}

// Density-to-count rule shared by the adaptive gate and the fixed-fraction
// mode: k = clamp(round(rho * d_head), 1, d_head).
inline int density_to_k(double rho, int d_head) {
    const long k = std::lround(rho * d_head);
    return static_cast<int>(std::clamp(k, 1L, static_cast<long>(d_head)));
}

template <typename T>
struct GateDecision {
    std::vector<T> density;  // spatial mean of the gate map, one per sample
    std::vector<int> k;      // chosen count, one per sample
};

// Runs the gate head over the attended channels and derives k per sample.
// The whole computation is a control decision: it never joins the gradient
// tape, so gate parameters receive no task gradient through k.
template <typename T>
GateDecision<T> gdtko_compute_k(const Tensor<T>& x_att, const GateUnit<T>& gate, int d_head) {
    if (d_head < 1) throw ConfigError("head dimension must be >= 1");
    NoGradScope<T> no_grad;
    Tensor<T> g = sigmoid(conv2d(x_att, gate.w, gate.b, 1, 0, 1));
    if (g.dim(1) != 1) throw DimensionError("gate head must emit exactly one channel");
    const int n = g.dim(0);
    const int64_t hw = static_cast<int64_t>(g.dim(2)) * g.dim(3);
    GateDecision<T> dec;
    dec.density.resize(n);
    dec.k.resize(n);
    const T* gv = g.data();
    for (int i = 0; i < n; ++i) {
        T acc{0};
        for (int64_t s = 0; s < hw; ++s) acc += gv[i * hw + s];
        const T rho = acc / static_cast<T>(hw);
        dec.density[i] = rho;
        dec.k[i] = density_to_k(static_cast<double>(rho), d_head);
    }
    return dec;
}

namespace detail {

// Marks the k largest entries of each length-d row with 1, everything else
// with 0. Equal values resolve in favor of the lower column index.
template <typename T>
void fill_topk_rows(const T* scores, T* mask, int64_t rows, int d, int k) {
    std::vector<int> idx(d);
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = scores + r * d;
        T* mrow = mask + r * d;
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [row](int a, int b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b;
        });
        std::fill(mrow, mrow + d, T{0});
        for (int j = 0; j < k; ++j) mrow[idx[j]] = T{1};
    }
}

}  // namespace detail

// Builds the keep mask for one sample's (heads, d, d) score block.
template <typename T>
TopKMask<T> topk_mask_rowwise(const Tensor<T>& scores, int k) {
    if (scores.ndim() != 3 || scores.dim(1) != scores.dim(2))
        throw DimensionError("topk_mask_rowwise expects square (heads, d, d) scores, got " +
                             shape_str(scores.shape()));
    const int d = scores.dim(2);
    if (k < 1 || k > d)
        throw ContractError("top-k count " + std::to_string(k) + " outside [1, " +
                            std::to_string(d) + "]");
    TopKMask<T> out;
    out.k = k;
    out.mask = Tensor<T>(scores.shape());
    detail::fill_topk_rows(scores.data(), out.mask.data(), scores.numel() / d, d, k);
    return out;
}

namespace detail {

template <typename T>
struct QkvScores {
    Tensor<T> v;       // (N, heads, d, H*W)
    Tensor<T> scores;  // (N, heads, d, d)
};

// Projects the attended channels to Q, K, V (pointwise then depthwise conv),
// folds the channel axis into heads, and forms the scaled, biased channel
// similarity scores. Score memory is heads * d^2 per sample, independent of
// the spatial extent.
template <typename T>
QkvScores<T> qkv_scores(const Tensor<T>& x_att, const AttentionWeights<T>& w, int heads) {
    const int n = x_att.dim(0), cp = x_att.dim(1), h = x_att.dim(2), wd = x_att.dim(3);
    const int d = cp / heads;
    const Shape folded{n, heads, d, h * wd};
    auto project = [&](const Tensor<T>& pw_w, const Tensor<T>& pw_b, const Tensor<T>& dw_w,
                       const Tensor<T>& dw_b) {
        Tensor<T> t = conv2d(x_att, pw_w, pw_b, 1, 0, 1);
        t = conv2d(t, dw_w, dw_b, 1, 1, cp);
        return reshape(t, folded);
    };
    Tensor<T> q = project(w.q_pw_w, w.q_pw_b, w.q_dw_w, w.q_dw_b);
    Tensor<T> k = project(w.k_pw_w, w.k_pw_b, w.k_dw_w, w.k_dw_b);
    Tensor<T> v = project(w.v_pw_w, w.v_pw_b, w.v_dw_w, w.v_dw_b);
    Tensor<T> scores = matmul(q, k, false, true);
    scores = scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
    scores = add(scores, w.rel_bias);
    return {std::move(v), std::move(scores)};
}

}  // namespace detail

// Dense channel attention over already-split attended channels; the masked
// path reduces to this when every score survives.
template <typename T>
Tensor<T> sdsa_forward(const Tensor<T>& x_att, const AttentionWeights<T>& w, int heads) {
    if (x_att.ndim() != 4)
        throw DimensionError("sdsa_forward input must be NCHW, got " + shape_str(x_att.shape()));
    if (heads < 1 || x_att.dim(1) % heads != 0)
        throw ConfigError("sdsa_forward channels must split evenly into heads");
    auto qs = detail::qkv_scores(x_att, w, heads);
    Tensor<T> attn = softmax_rows(qs.scores);
    return reshape(matmul(attn, qs.v), x_att.shape());
}

// Inspection data captured from one attention forward pass. The tensors are
// live handles into the pass, so gradients written by a later backward call
// stay visible here.
template <typename T>
struct AtkSpaTrace {
    Shape score_shape;              // (N, heads, d, d)
    std::vector<int> k_per_sample;
    std::vector<T> gate_density;    // empty in fixed mode
    Tensor<T> scores;               // pre-mask similarity scores
    Tensor<T> mask;                 // (N, heads, d, d)
    Tensor<T> attention_out;        // branch output before the bypass rejoins
};

// Sparse partial attention over a full NCHW feature map: split channels,
// score the attended slice, keep the top k entries per score row, attend,
// rejoin the bypass slice, and project across all channels.
template <typename T>
Tensor<T> atk_spa_forward(const Tensor<T>& x, const AttentionWeights<T>& w,
                          const AttentionConfig& cfg, AtkSpaTrace<T>* trace = nullptr) {
    cfg.validate();
    auto [x_att, x_sup] = split_partial(x, cfg);
    auto qs = detail::qkv_scores(x_att, w, cfg.heads);

    const int n = x.dim(0);
    const int d = cfg.head_dim();
    std::vector<int> ks(n);
    std::vector<T> density;
    if (cfg.topk_mode == TopkMode::Gdtko) {
        GateDecision<T> dec = gdtko_compute_k(x_att, w.gate, d);
        ks = dec.k;
        density = std::move(dec.density);
    } else {
        std::fill(ks.begin(), ks.end(), density_to_k(cfg.fixed_k_fraction, d));
    }

    // The mask depends on score values but is a constant of the graph.
    Tensor<T> mask(qs.scores.shape());
    const int64_t sample_rows = static_cast<int64_t>(cfg.heads) * d;
    for (int i = 0; i < n; ++i)
        detail::fill_topk_rows(qs.scores.data() + i * sample_rows * d,
                               mask.data() + i * sample_rows * d, sample_rows, d, ks[i]);

    Tensor<T> attn = softmax_rows(apply_topk_mask(qs.scores, mask, cfg.mask_mode));
    Tensor<T> branch = reshape(matmul(attn, qs.v), x_att.shape());
    Tensor<T> merged = x_sup.defined() ? concat<T>({branch, x_sup}, 1) : branch;
    Tensor<T> out = conv2d(merged, w.out_w, w.out_b, 1, 0, 1);

    if (trace) {
        trace->score_shape = qs.scores.shape();
        trace->k_per_sample = std::move(ks);
        trace->gate_density = std::move(density);
        trace->scores = qs.scores;
        trace->mask = mask;
        trace->attention_out = branch;
    }
    return out;
}

}  // namespace frs
