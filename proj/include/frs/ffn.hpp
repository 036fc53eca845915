#pragma once

#include <array>

#include "frs/ops.hpp"

namespace frs {

// Gated feed-forward settings. The projection widens C to hidden = e * C and
// the gate branch works on four equal channel groups, one per kernel size.
struct HssfgnConfig {
    int channels = 0;
    double expansion = 2.0;

    int hidden_dim() const {
        return static_cast<int>(std::llround(expansion * channels));
    }
    void validate() const {
        if (channels < 1) throw ConfigError("ffn channels must be >= 1");
        if (!(expansion > 0.0)) throw ConfigError("ffn expansion must be positive");
        const int h = hidden_dim();
        if (h < 4 || h % 4 != 0)
            throw ConfigError("ffn hidden dim " + std::to_string(h) +
                              " must be a positive multiple of 4");
    }
};

inline constexpr std::array<int, 4> kGateKernelSizes{1, 3, 5, 7};

template <typename T>
struct HssfgnWeights {
    Tensor<T> in_w, in_b;                 // 1x1, C -> hidden
    std::array<Tensor<T>, 4> gate_dw_w;   // depthwise 1/3/5/7 over hidden/4 channels each
    std::array<Tensor<T>, 4> gate_dw_b;
    Tensor<T> out_w, out_b;               // 1x1, hidden -> C
};

// Splits the gate input into four equal channel groups, filters each with a
// same-padded depthwise conv of its own kernel size, rejoins, and applies
// GELU. Channels never mix, so group i only ever sees group i's input.
template <typename T>
Tensor<T> multiscale_gate_branch(const Tensor<T>& x_g, const HssfgnWeights<T>& w) {
    if (x_g.ndim() != 4)
        throw DimensionError("gate branch input must be NCHW, got " + shape_str(x_g.shape()));
    const int ch = x_g.dim(1);
    if (ch % 4 != 0)
        throw ConfigError("gate branch needs a channel count divisible by 4, got " +
                          std::to_string(ch));
    const int group = ch / 4;
    auto parts = split(x_g, {group, group, group, group}, 1);
    std::vector<Tensor<T>> filtered;
    filtered.reserve(4);
    for (int i = 0; i < 4; ++i)
        filtered.push_back(conv2d(parts[i], w.gate_dw_w[i], w.gate_dw_b[i], 1,
                                  kGateKernelSizes[i] / 2, group));
    return gelu(concat(filtered, 1));
}

// One widening projection feeds both the value path and the gate branch
// (X_G = X_V); their elementwise product is projected back to C channels.
// No residual here: the caller owns the block-level skip.
template <typename T>
Tensor<T> hssfgn_forward(const Tensor<T>& x, const HssfgnConfig& cfg,
                         const HssfgnWeights<T>& w) {
    cfg.validate();
    if (x.ndim() != 4 || x.dim(1) != cfg.channels)
        throw DimensionError("ffn input " + shape_str(x.shape()) + " does not carry " +
                             std::to_string(cfg.channels) + " channels");
    Tensor<T> shared = conv2d(x, w.in_w, w.in_b, 1, 0, 1);
    Tensor<T> gate = multiscale_gate_branch(shared, w);
    Tensor<T> gated = mul(shared, gate);
    return conv2d(gated, w.out_w, w.out_b, 1, 0, 1);
}

}  // namespace frs
