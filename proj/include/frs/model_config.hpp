#pragma once

#include <array>
#include <string>

#include "frs/attention.hpp"
#include "frs/ffn.hpp"

namespace frs {

// Whole-network settings: four stages, each with its own width, depth, and
// head count, sharing one attention/ffn policy.
struct ModelConfig {
    std::string name;
    int num_classes = 0;
    int in_channels = 3;
    std::array<int, 4> dims{};
    std::array<int, 4> depths{};
    std::array<int, 4> heads{};
    double partial_ratio = 0.25;
    double ffn_expansion = 2.0;
    MaskMode mask_mode = MaskMode::NegInf;
    TopkMode topk_mode = TopkMode::Gdtko;
    double fixed_k_fraction = 1.0;

    AttentionConfig attention_for_stage(int stage) const {
        AttentionConfig a;
        a.channels = dims[static_cast<size_t>(stage)];
        a.partial_ratio = partial_ratio;
        a.heads = heads[static_cast<size_t>(stage)];
        a.mask_mode = mask_mode;
        a.topk_mode = topk_mode;
        a.fixed_k_fraction = fixed_k_fraction;
        return a;
    }
    HssfgnConfig ffn_for_stage(int stage) const {
        return HssfgnConfig{dims[static_cast<size_t>(stage)], ffn_expansion};
    }

    void validate() const {
        if (name.empty()) throw ConfigError("model config needs a name");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
        if (dims[0] % 2 != 0)
            throw ConfigError("dims[0] must be even (the stem passes through dims[0]/2)");
        for (int s = 0; s < 4; ++s) {
            if (dims[static_cast<size_t>(s)] < 1)
                throw ConfigError("dims must be positive at every stage");
            if (depths[static_cast<size_t>(s)] < 1)
                throw ConfigError("depths must be >= 1 at every stage");
            attention_for_stage(s).validate();
            ffn_for_stage(s).validate();
        }
    }
};

// Strict JSON reader: exactly the ModelConfig fields are understood, unknown
// keys are rejected. Missing file -> IoError; malformed content -> ConfigError.
ModelConfig load_model_config(const std::string& path);

}  // namespace frs
