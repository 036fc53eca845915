#pragma once

#include <random>

#include "frs/attention.hpp"
#include "frs/ffn.hpp"
#include "frs/model_config.hpp"

namespace frs {

template <typename T>
struct NormParam {
    Tensor<T> gamma, beta;  // (C) each
};

// One trunk block: positional conv, then attention, then the gated FFN, each
// behind its own residual.
template <typename T>
struct BlockWeights {
    Tensor<T> cpe_w, cpe_b;  // 3x3 depthwise
    NormParam<T> norm1;
    AttentionWeights<T> attn;
    NormParam<T> norm2;
    HssfgnWeights<T> ffn;
};

template <typename T>
struct StemWeights {
    Tensor<T> conv1_w, conv1_b;  // 3x3 stride 2, in -> dims[0]/2
    NormParam<T> norm1;
    Tensor<T> conv2_w, conv2_b;  // 3x3 stride 2, dims[0]/2 -> dims[0]
    NormParam<T> norm2;
};

template <typename T>
struct MergeWeights {
    Tensor<T> conv_w, conv_b;  // 3x3 stride 2, dims[i-1] -> dims[i]
    NormParam<T> norm;
};

template <typename T>
struct Model {
    ModelConfig cfg;
    StemWeights<T> stem;
    std::array<MergeWeights<T>, 3> merges;
    std::array<std::vector<BlockWeights<T>>, 4> stages;
    Tensor<T> head_w, head_b;  // (dims[3], num_classes), (num_classes)
};

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

namespace detail {

// Applies one visitor call per parameter, in forward order. Initialization,
// the checkpoint registry, and accounting all walk this same order.
template <typename T, typename Fn>
void visit_parameters(Model<T>& m, Fn&& fn) {
    auto norm = [&](const std::string& prefix, NormParam<T>& n) {
        fn(prefix + ".gamma", n.gamma);
        fn(prefix + ".beta", n.beta);
    };
    fn("stem.conv1.weight", m.stem.conv1_w);
    fn("stem.conv1.bias", m.stem.conv1_b);
    norm("stem.norm1", m.stem.norm1);
    fn("stem.conv2.weight", m.stem.conv2_w);
    fn("stem.conv2.bias", m.stem.conv2_b);
    norm("stem.norm2", m.stem.norm2);
    for (int s = 0; s < 4; ++s) {
        if (s > 0) {
            const std::string mp = "merge" + std::to_string(s);
            fn(mp + ".conv.weight", m.merges[static_cast<size_t>(s - 1)].conv_w);
            fn(mp + ".conv.bias", m.merges[static_cast<size_t>(s - 1)].conv_b);
            norm(mp + ".norm", m.merges[static_cast<size_t>(s - 1)].norm);
        }
        auto& blocks = m.stages[static_cast<size_t>(s)];
        for (size_t b = 0; b < blocks.size(); ++b) {
            const std::string bp =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            BlockWeights<T>& blk = blocks[b];
            fn(bp + ".cpe.weight", blk.cpe_w);
            fn(bp + ".cpe.bias", blk.cpe_b);
            norm(bp + ".norm1", blk.norm1);
            auto proj = [&](const std::string& name, Tensor<T>& w, Tensor<T>& bias) {
                fn(bp + ".attn." + name + ".weight", w);
                fn(bp + ".attn." + name + ".bias", bias);
            };
            proj("q_pw", blk.attn.q_pw_w, blk.attn.q_pw_b);
            proj("q_dw", blk.attn.q_dw_w, blk.attn.q_dw_b);
            proj("k_pw", blk.attn.k_pw_w, blk.attn.k_pw_b);
            proj("k_dw", blk.attn.k_dw_w, blk.attn.k_dw_b);
            proj("v_pw", blk.attn.v_pw_w, blk.attn.v_pw_b);
            proj("v_dw", blk.attn.v_dw_w, blk.attn.v_dw_b);
            fn(bp + ".attn.gate.weight", blk.attn.gate.w);
            fn(bp + ".attn.gate.bias", blk.attn.gate.b);
            fn(bp + ".attn.rel_bias", blk.attn.rel_bias);
            fn(bp + ".attn.out.weight", blk.attn.out_w);
            fn(bp + ".attn.out.bias", blk.attn.out_b);
            norm(bp + ".norm2", blk.norm2);
            fn(bp + ".ffn.in.weight", blk.ffn.in_w);
            fn(bp + ".ffn.in.bias", blk.ffn.in_b);
            for (int g = 0; g < 4; ++g) {
                const std::string gp =
                    bp + ".ffn.dw" + std::to_string(kGateKernelSizes[static_cast<size_t>(g)]);
                fn(gp + ".weight", blk.ffn.gate_dw_w[static_cast<size_t>(g)]);
                fn(gp + ".bias", blk.ffn.gate_dw_b[static_cast<size_t>(g)]);
            }
            fn(bp + ".ffn.out.weight", blk.ffn.out_w);
            fn(bp + ".ffn.out.bias", blk.ffn.out_b);
        }
    }
    fn("head.weight", m.head_w);
    fn("head.bias", m.head_b);
}

}  // namespace detail

template <typename T>
std::vector<NamedParam<T>> named_parameters(const Model<T>& m) {
    std::vector<NamedParam<T>> out;
    detail::visit_parameters(const_cast<Model<T>&>(m), [&](const std::string& name, Tensor<T>& t) {
        out.push_back({name, t});
    });
    return out;
}

// Deterministic seeded initialization: conv and linear weights from a
// truncated normal (sigma 0.02, resampled beyond 2 sigma), biases and the
// relative score bias zero, norm scales one. All parameters require grad.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Model<T> m;
    m.cfg = cfg;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.02);
    auto weight = [&](Shape s) {
        Tensor<T> t(std::move(s));
        for (int64_t i = 0; i < t.numel(); ++i) {
            double z;
            do {
                z = dist(rng);
            } while (std::abs(z) > 0.04);
            t.data()[i] = static_cast<T>(z);
        }
        return t;
    };
    auto fill = [](Shape s, T v) { return Tensor<T>(std::move(s), v); };
    auto norm = [&](int c) { return NormParam<T>{fill({c}, T{1}), fill({c}, T{0})}; };

    const int d0 = cfg.dims[0], mid = d0 / 2;
    m.stem.conv1_w = weight({mid, cfg.in_channels, 3, 3});
    m.stem.conv1_b = fill({mid}, T{0});
    m.stem.norm1 = norm(mid);
    m.stem.conv2_w = weight({d0, mid, 3, 3});
    m.stem.conv2_b = fill({d0}, T{0});
    m.stem.norm2 = norm(d0);

    for (int s = 0; s < 4; ++s) {
        const int c = cfg.dims[static_cast<size_t>(s)];
        if (s > 0) {
            MergeWeights<T>& mg = m.merges[static_cast<size_t>(s - 1)];
            mg.conv_w = weight({c, cfg.dims[static_cast<size_t>(s - 1)], 3, 3});
            mg.conv_b = fill({c}, T{0});
            mg.norm = norm(c);
        }
        const AttentionConfig acfg = cfg.attention_for_stage(s);
        const int cp = acfg.attended_channels();
        const int d = acfg.head_dim();
        const HssfgnConfig fcfg = cfg.ffn_for_stage(s);
        const int hid = fcfg.hidden_dim(), grp = hid / 4;
        auto& blocks = m.stages[static_cast<size_t>(s)];
        blocks.resize(static_cast<size_t>(cfg.depths[static_cast<size_t>(s)]));
        for (auto& blk : blocks) {
            blk.cpe_w = weight({c, 1, 3, 3});
            blk.cpe_b = fill({c}, T{0});
            blk.norm1 = norm(c);
            auto proj = [&](Tensor<T>& pw_w, Tensor<T>& pw_b, Tensor<T>& dw_w, Tensor<T>& dw_b) {
                pw_w = weight({cp, cp, 1, 1});
                pw_b = fill({cp}, T{0});
                dw_w = weight({cp, 1, 3, 3});
                dw_b = fill({cp}, T{0});
            };
            proj(blk.attn.q_pw_w, blk.attn.q_pw_b, blk.attn.q_dw_w, blk.attn.q_dw_b);
            proj(blk.attn.k_pw_w, blk.attn.k_pw_b, blk.attn.k_dw_w, blk.attn.k_dw_b);
            proj(blk.attn.v_pw_w, blk.attn.v_pw_b, blk.attn.v_dw_w, blk.attn.v_dw_b);
            blk.attn.gate.w = weight({1, cp, 1, 1});
            blk.attn.gate.b = fill({1}, T{0});
            blk.attn.rel_bias = fill({acfg.heads, d, d}, T{0});
            blk.attn.out_w = weight({c, c, 1, 1});
            blk.attn.out_b = fill({c}, T{0});
            blk.norm2 = norm(c);
            blk.ffn.in_w = weight({hid, c, 1, 1});
            blk.ffn.in_b = fill({hid}, T{0});
            for (size_t g = 0; g < 4; ++g) {
                const int k = kGateKernelSizes[g];
                blk.ffn.gate_dw_w[g] = weight({grp, 1, k, k});
                blk.ffn.gate_dw_b[g] = fill({grp}, T{0});
            }
            blk.ffn.out_w = weight({c, hid, 1, 1});
            blk.ffn.out_b = fill({c}, T{0});
        }
    }
    m.head_w = weight({cfg.dims[3], cfg.num_classes});
    m.head_b = fill({cfg.num_classes}, T{0});

    detail::visit_parameters(m, [](const std::string&, Tensor<T>& t) {
        t.set_requires_grad(true);
    });
    return m;
}

// Stage entries: index 0 is the stem (two stride-2 convs, each with norm and
// GELU); indices 1-3 are single stride-2 convs with a norm.
template <typename T>
Tensor<T> merge_layer_forward(const Model<T>& m, int stage_index, const Tensor<T>& x) {
    if (stage_index < 0 || stage_index > 3)
        throw ContractError("merge stage index must lie in [0, 3]");
    if (x.ndim() != 4)
        throw DimensionError("merge input must be NCHW, got " + shape_str(x.shape()));
    if (x.dim(2) < 2 || x.dim(3) < 2)
        throw DimensionError("merge input too small to downsample: " + shape_str(x.shape()));
    if (stage_index == 0) {
        const StemWeights<T>& st = m.stem;
        Tensor<T> t = conv2d(x, st.conv1_w, st.conv1_b, 2, 1, 1);
        t = gelu(layer_norm_channels(t, st.norm1.gamma, st.norm1.beta));
        t = conv2d(t, st.conv2_w, st.conv2_b, 2, 1, 1);
        return gelu(layer_norm_channels(t, st.norm2.gamma, st.norm2.beta));
    }
    const MergeWeights<T>& mg = m.merges[static_cast<size_t>(stage_index - 1)];
    Tensor<T> t = conv2d(x, mg.conv_w, mg.conv_b, 2, 1, 1);
    return layer_norm_channels(t, mg.norm.gamma, mg.norm.beta);
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockWeights<T>& blk,
                        const AttentionConfig& acfg, const HssfgnConfig& fcfg,
                        AtkSpaTrace<T>* trace = nullptr) {
    if (x.ndim() != 4 || x.dim(1) != acfg.channels)
        throw DimensionError("block input " + shape_str(x.shape()) + " does not carry " +
                             std::to_string(acfg.channels) + " channels");
    Tensor<T> x1 = add(x, conv2d(x, blk.cpe_w, blk.cpe_b, 1, 1, acfg.channels));
    Tensor<T> n1 = layer_norm_channels(x1, blk.norm1.gamma, blk.norm1.beta);
    Tensor<T> x2 = add(x1, atk_spa_forward(n1, blk.attn, acfg, trace));
    Tensor<T> n2 = layer_norm_channels(x2, blk.norm2.gamma, blk.norm2.beta);
    return add(x2, hssfgn_forward(n2, fcfg, blk.ffn));
}

// Full trunk: stem, four block stages with merges between, global pooling,
// linear head. Input extents must be multiples of 32 so every merge divides
// evenly.
template <typename T>
Tensor<T> model_forward(const Model<T>& m, const Tensor<T>& x) {
    if (x.ndim() != 4 || x.dim(1) != m.cfg.in_channels)
        throw DimensionError("model input must be N x " + std::to_string(m.cfg.in_channels) +
                             " x H x W, got " + shape_str(x.shape()));
    const int h = x.dim(2), w = x.dim(3);
    if (h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0)
        throw DimensionError("input resolution must be a multiple of 32, got " +
                             std::to_string(h) + "x" + std::to_string(w));
    Tensor<T> t = merge_layer_forward(m, 0, x);
    for (int s = 0; s < 4; ++s) {
        if (s > 0) t = merge_layer_forward(m, s, t);
        const AttentionConfig acfg = m.cfg.attention_for_stage(s);
        const HssfgnConfig fcfg = m.cfg.ffn_for_stage(s);
        for (const auto& blk : m.stages[static_cast<size_t>(s)])
            t = block_forward(t, blk, acfg, fcfg);
    }
    Tensor<T> pooled = global_avg_pool(t);
    return linear_matmul(pooled, m.head_w, &m.head_b);
}

// Diagnostic walk used when training hits a non-finite loss: replays the
// forward pass piecewise and names the first part whose output goes bad.
// Returns an empty string when everything stays finite.
template <typename T>
std::string first_non_finite_stage(const Model<T>& m, const Tensor<T>& x) {
    NoGradScope<T> no_grad;
    Tensor<T> t;
    try {
        t = merge_layer_forward(m, 0, x);
    } catch (const NumericError&) {
        return "stem";
    }
    if (!t.all_finite()) return "stem";
    for (int s = 0; s < 4; ++s) {
        const std::string stage = "stage" + std::to_string(s + 1);
        if (s > 0) {
            try {
                t = merge_layer_forward(m, s, t);
            } catch (const NumericError&) {
                return "merge" + std::to_string(s);
            }
            if (!t.all_finite()) return "merge" + std::to_string(s);
        }
        const AttentionConfig acfg = m.cfg.attention_for_stage(s);
        const HssfgnConfig fcfg = m.cfg.ffn_for_stage(s);
        const auto& blocks = m.stages[static_cast<size_t>(s)];
        for (size_t b = 0; b < blocks.size(); ++b) {
            const std::string path = stage + ".block" + std::to_string(b);
            try {
                t = block_forward(t, blocks[b], acfg, fcfg);
            } catch (const NumericError&) {
                return path;
            }
            if (!t.all_finite()) return path;
        }
    }
    Tensor<T> logits;
    try {
        logits = linear_matmul(global_avg_pool(t), m.head_w, &m.head_b);
    } catch (const NumericError&) {
        return "head";
    }
    if (!logits.all_finite()) return "head";
    return "";
}

}  // namespace frs
