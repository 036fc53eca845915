#pragma once

#include <random>

#include "frs/backbone.hpp"
#include "frs/checkpoint.hpp"

namespace frs {

template <typename T>
Tensor<T> random_uniform(Shape shape, std::mt19937_64& rng, T lo = T{-1}, T hi = T{1}) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                static_cast<double>(hi));
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(dist(rng));
    return t;
}

struct GradcheckCase {
    std::string name;
    double max_rel_err;
};

// The micro network used for gradient checks and toy training: small enough
// that finite differences stay cheap, still exercising every stage shape.
inline ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.name = "micro";
    cfg.num_classes = 4;
    cfg.dims = {8, 16, 24, 32};
    cfg.depths = {1, 1, 1, 1};
    cfg.heads = {1, 1, 2, 2};
    return cfg;
}

namespace detail {

// Reduces an op output to a scalar through a fixed random weighting, so the
// upstream gradient reaching the op is non-uniform (a uniform one would let
// index-mapping bugs in backward passes cancel out invisibly).
template <typename T>
Tensor<T> weighted_mean(const Tensor<T>& t, const Tensor<T>& weights) {
    return mean_all(mul(t, weights));
}

}  // namespace detail

// Runs one finite-difference check per differentiable op at 64-bit precision
// and reports each op's worst relative error.
inline std::vector<GradcheckCase> run_op_gradchecks(uint64_t seed) {
    using D = double;
    std::mt19937_64 rng(seed);
    std::vector<GradcheckCase> results;
    auto check = [&](const std::string& name, std::vector<Tensor<D>> inputs,
                     std::function<Tensor<D>(std::vector<Tensor<D>>&)> f) {
        results.push_back({name, backward_gradcheck<D>(f, inputs)});
    };
    auto wm = [&](Shape s) { return random_uniform<D>(std::move(s), rng); };

    {
        Tensor<D> w = wm({3, 4});
        check("add", {wm({3, 4}), wm({3, 4})},
              [w](std::vector<Tensor<D>>& in) { return detail::weighted_mean(add(in[0], in[1]), w); });
    }
    {
        Tensor<D> w = wm({2, 3, 4});
        check("add_broadcast", {wm({2, 3, 4}), wm({3, 4})},
              [w](std::vector<Tensor<D>>& in) { return detail::weighted_mean(add(in[0], in[1]), w); });
    }
    {
        Tensor<D> w = wm({3, 4});
        check("mul", {wm({3, 4}), wm({3, 4})},
              [w](std::vector<Tensor<D>>& in) { return detail::weighted_mean(mul(in[0], in[1]), w); });
    }
    {
        Tensor<D> w = wm({3, 4});
        check("scale", {wm({3, 4})}, [w](std::vector<Tensor<D>>& in) {
            return detail::weighted_mean(scale(in[0], 1.7), w);
        });
    }
    {
        Tensor<D> w = wm({3, 5});
        check("gelu", {wm({3, 5})},
              [w](std::vector<Tensor<D>>& in) { return detail::weighted_mean(gelu(in[0]), w); });
    }
    {
        Tensor<D> w = wm({3, 5});
        check("sigmoid", {wm({3, 5})},
              [w](std::vector<Tensor<D>>& in) { return detail::weighted_mean(sigmoid(in[0]), w); });
    }
    {
        Tensor<D> w = wm({4, 6});
        check("reshape", {wm({2, 3, 4})}, [w](std::vector<Tensor<D>>& in) {
            return detail::weighted_mean(reshape(in[0], {4, 6}), w);
        });
    }
    {
        Tensor<D> w = wm({4, 2, 3});
        check("transpose", {wm({2, 3, 4})}, [w](std::vector<Tensor<D>>& in) {
            return detail::weighted_mean(transpose(in[0], {2, 0, 1}), w);
        });
    }
    {
        Tensor<D> w = wm({2, 6, 3});
        check("concat", {wm({2, 2, 3}), wm({2, 4, 3})}, [w](std::vector<Tensor<D>>& in) {
            return detail::weighted_mean(concat<D>({in[0], in[1]}, 1), w);
        });
    }
    {
        Tensor<D> w0 = wm({2, 2, 3});
        Tensor<D> w1 = wm({2, 4, 3});
        check("split", {wm({2, 6, 3})}, [w0, w1](std::vector<Tensor<D>>& in) {
            auto parts = split(in[0], {2, 4}, 1);
            return add(detail::weighted_mean(parts[0], w0), detail::weighted_mean(parts[1], w1));
        });
    }
    {
        Tensor<D> w = wm({2, 3, 5});
        check("matmul", {wm({2, 3, 4}), wm({2, 4, 5})}, [w](std::vector<Tensor<D>>& in) {
            return detail::weighted_mean(matmul(in[0], in[1]), w);
        });
        check("matmul_trans_a", {wm({2, 4, 3}), wm({2, 4, 5})}, [w](std::vector<Tensor<D>>& in) {
            return detail::weighted_mean(matmul(in[0], in[1], true, false), w);
        });
        check("matmul_trans_b", {wm({2, 3, 4}), wm({2, 5, 4})}, [w](std::vector<Tensor<D>>& in) {
            return detail::weighted_mean(matmul(in[0], in[1], false, true), w);
        });
        check("matmul_trans_both", {wm({2, 4, 3}), wm({2, 5, 4})},
              [w](std::vector<Tensor<D>>& in) {
                  return detail::weighted_mean(matmul(in[0], in[1], true, true), w);
              });
    }
    {
        Tensor<D> w = wm({2, 3, 5});
        check("linear_matmul", {wm({2, 3, 4}), wm({4, 5}), wm({5})},
              [w](std::vector<Tensor<D>>& in) {
                  return detail::weighted_mean(linear_matmul(in[0], in[1], &in[2]), w);
              });
    }
    {
        Tensor<D> w = wm({2, 3, 5, 5});
        check("conv2d_pointwise", {wm({2, 4, 5, 5}), wm({3, 4, 1, 1}), wm({3})},
              [w](std::vector<Tensor<D>>& in) {
                  return detail::weighted_mean(conv2d(in[0], in[1], in[2], 1, 0, 1), w);
              });
    }
    {
        Tensor<D> w = wm({1, 4, 5, 5});
        check("conv2d_depthwise", {wm({1, 4, 5, 5}), wm({4, 1, 3, 3}), wm({4})},
              [w](std::vector<Tensor<D>>& in) {
                  return detail::weighted_mean(conv2d(in[0], in[1], in[2], 1, 1, 4), w);
              });
    }
    {
        Tensor<D> w = wm({2, 4, 3, 3});
        check("conv2d_strided", {wm({2, 3, 6, 6}), wm({4, 3, 3, 3}), wm({4})},
              [w](std::vector<Tensor<D>>& in) {
                  return detail::weighted_mean(conv2d(in[0], in[1], in[2], 2, 1, 1), w);
              });
    }
    {
        Tensor<D> w = wm({1, 6, 6, 6});
        check("conv2d_grouped", {wm({1, 4, 6, 6}), wm({6, 2, 3, 3}), wm({6})},
              [w](std::vector<Tensor<D>>& in) {
                  return detail::weighted_mean(conv2d(in[0], in[1], in[2], 1, 1, 2), w);
              });
    }
    {
        Tensor<D> w = wm({3, 6});
        check("softmax_rows", {wm({3, 6})}, [w](std::vector<Tensor<D>>& in) {
            return detail::weighted_mean(softmax_rows(in[0]), w);
        });
    }
    {
        // The keep mask is frozen at the base point; it is a constant of the
        // graph, so finite differences and the tape see the same function.
        Tensor<D> scores = wm({2, 4, 4});
        TopKMask<D> mask = topk_mask_rowwise(scores, 2);
        Tensor<D> w = wm({2, 4, 4});
        for (MaskMode mode : {MaskMode::NegInf, MaskMode::ZeroPreSoftmax}) {
            const char* name =
                mode == MaskMode::NegInf ? "apply_topk_mask_neg_inf" : "apply_topk_mask_zero";
            check(name, {scores}, [w, mask, mode](std::vector<Tensor<D>>& in) {
                return detail::weighted_mean(softmax_rows(apply_topk_mask(in[0], mask.mask, mode)),
                                             w);
            });
        }
    }
    {
        Tensor<D> w = wm({2, 5, 3, 3});
        check("layer_norm_channels", {wm({2, 5, 3, 3}), wm({5}), wm({5})},
              [w](std::vector<Tensor<D>>& in) {
                  return detail::weighted_mean(layer_norm_channels(in[0], in[1], in[2]), w);
              });
    }
    {
        check("mean_all", {wm({3, 4})},
              [](std::vector<Tensor<D>>& in) { return mean_all(gelu(in[0])); });
    }
    {
        Tensor<D> w = wm({2, 3});
        check("global_avg_pool", {wm({2, 3, 4, 4})}, [w](std::vector<Tensor<D>>& in) {
            return detail::weighted_mean(global_avg_pool(in[0]), w);
        });
    }
    {
        std::vector<int> labels{0, 3, 2, 4};
        check("cross_entropy_logits", {wm({4, 5})}, [labels](std::vector<Tensor<D>>& in) {
            return cross_entropy_logits(in[0], labels);
        });
    }
    return results;
}

// Finite-difference check of one complete block (positional conv, sparse
// attention, gated FFN) through a pooled linear head and cross entropy.
// Checks the input image and every block parameter.
inline double run_block_gradcheck(uint64_t seed, int64_t coord_stride = 1) {
    using D = double;
    std::mt19937_64 rng(seed);
    AttentionConfig acfg;
    acfg.channels = 16;
    acfg.heads = 2;
    acfg.partial_ratio = 0.25;
    acfg.validate();
    const HssfgnConfig fcfg{16, 2.0};
    const int cp = acfg.attended_channels(), d = acfg.head_dim();
    const int hid = fcfg.hidden_dim(), grp = hid / 4;

    auto wt = [&](Shape s) { return random_uniform<D>(std::move(s), rng, -0.25, 0.25); };
    BlockWeights<D> blk;
    blk.cpe_w = wt({16, 1, 3, 3});
    blk.cpe_b = wt({16});
    blk.norm1 = {wt({16}), wt({16})};
    auto proj = [&](Tensor<D>& pw_w, Tensor<D>& pw_b, Tensor<D>& dw_w, Tensor<D>& dw_b) {
        pw_w = wt({cp, cp, 1, 1});
        pw_b = wt({cp});
        dw_w = wt({cp, 1, 3, 3});
        dw_b = wt({cp});
    };
    proj(blk.attn.q_pw_w, blk.attn.q_pw_b, blk.attn.q_dw_w, blk.attn.q_dw_b);
    proj(blk.attn.k_pw_w, blk.attn.k_pw_b, blk.attn.k_dw_w, blk.attn.k_dw_b);
    proj(blk.attn.v_pw_w, blk.attn.v_pw_b, blk.attn.v_dw_w, blk.attn.v_dw_b);
    blk.attn.gate.w = wt({1, cp, 1, 1});
    blk.attn.gate.b = wt({1});
    blk.attn.rel_bias = wt({acfg.heads, d, d});
    blk.attn.out_w = wt({16, 16, 1, 1});
    blk.attn.out_b = wt({16});
    blk.norm2 = {wt({16}), wt({16})};
    blk.ffn.in_w = wt({hid, 16, 1, 1});
    blk.ffn.in_b = wt({hid});
    for (size_t g = 0; g < 4; ++g) {
        const int kk = kGateKernelSizes[g];
        blk.ffn.gate_dw_w[g] = wt({grp, 1, kk, kk});
        blk.ffn.gate_dw_b[g] = wt({grp});
    }
    blk.ffn.out_w = wt({16, hid, 1, 1});
    blk.ffn.out_b = wt({16});
    Tensor<D> head_w = wt({16, 4});
    Tensor<D> head_b = wt({4});

    // The gate unit is left out of the perturbed set: it picks the discrete k
    // and carries no task gradient, so finite differences across a rounding
    // boundary would register the jump as a spurious mismatch.
    std::vector<Tensor<D>> inputs{random_uniform<D>({1, 16, 8, 8}, rng)};
    inputs.push_back(blk.cpe_w);
    inputs.push_back(blk.cpe_b);
    for (Tensor<D>* t :
         {&blk.norm1.gamma, &blk.norm1.beta, &blk.attn.q_pw_w, &blk.attn.q_pw_b, &blk.attn.q_dw_w,
          &blk.attn.q_dw_b, &blk.attn.k_pw_w, &blk.attn.k_pw_b, &blk.attn.k_dw_w, &blk.attn.k_dw_b,
          &blk.attn.v_pw_w, &blk.attn.v_pw_b, &blk.attn.v_dw_w, &blk.attn.v_dw_b,
          &blk.attn.rel_bias, &blk.attn.out_w, &blk.attn.out_b,
          &blk.norm2.gamma, &blk.norm2.beta, &blk.ffn.in_w, &blk.ffn.in_b})
        inputs.push_back(*t);
    for (size_t g = 0; g < 4; ++g) {
        inputs.push_back(blk.ffn.gate_dw_w[g]);
        inputs.push_back(blk.ffn.gate_dw_b[g]);
    }
    inputs.push_back(blk.ffn.out_w);
    inputs.push_back(blk.ffn.out_b);
    inputs.push_back(head_w);
    inputs.push_back(head_b);

    std::vector<int> labels{1};
    auto f = [blk, acfg, fcfg, head_w, head_b, labels](std::vector<Tensor<D>>& in) {
        Tensor<D> out = block_forward(in[0], blk, acfg, fcfg);
        Tensor<D> logits = linear_matmul(global_avg_pool(out), head_w, &head_b);
        return cross_entropy_logits(logits, labels);
    };
    return backward_gradcheck<D>(f, inputs, 1e-5, coord_stride);
}

// End-to-end finite-difference check of the micro model. coord_stride thins
// the checked coordinates (a prime keeps the sample spread across layers).
inline double run_model_gradcheck(uint64_t seed, int64_t coord_stride = 127) {
    using D = double;
    Model<D> model = build_model<D>(micro_config(), seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    // At the fresh zero init all score biases tie, leaving rows separated by
    // less than the finite-difference step, so the top-k selection would flip
    // under perturbation. Spreading the biases audits the same formulas at a
    // point where the selection is stable.
    for (auto& p : named_parameters(model)) {
        if (p.name.find("rel_bias") == std::string::npos) continue;
        Tensor<D> r = random_uniform<D>(p.tensor.shape(), rng, -0.5, 0.5);
        std::copy(r.data(), r.data() + r.numel(), p.tensor.data());
    }
    std::vector<Tensor<D>> inputs{random_uniform<D>({1, 3, 32, 32}, rng, 0.0, 1.0)};
    for (auto& p : named_parameters(model)) {
        // Gate units pick the discrete k and carry no task gradient by
        // contract, so perturbing them would compare a jump against zero.
        if (p.name.find(".gate.") == std::string::npos) inputs.push_back(p.tensor);
    }
    std::vector<int> labels{2};
    auto f = [model, labels](std::vector<Tensor<D>>& in) {
        return cross_entropy_logits(model_forward(model, in[0]), labels);
    };
    return backward_gradcheck<D>(f, inputs, 1e-5, coord_stride);
}

}  // namespace frs
