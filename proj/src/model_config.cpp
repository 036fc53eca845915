#include "frs/model_config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace frs {

namespace {

using nlohmann::json;

const std::set<std::string> kKnownKeys = {
    "name",       "num_classes",   "in_channels", "dims",
    "depths",     "heads",         "partial_ratio", "ffn_expansion",
    "mask_mode",  "topk_mode",     "fixed_k_fraction"};

std::array<int, 4> read_stage_array(const json& j, const std::string& key) {
    if (!j.contains(key)) throw ConfigError("model config is missing '" + key + "'");
    const json& arr = j.at(key);
    if (!arr.is_array() || arr.size() != 4)
        throw ConfigError("'" + key + "' must be an array of 4 integers");
    std::array<int, 4> out{};
    for (size_t i = 0; i < 4; ++i) {
        if (!arr[i].is_number_integer())
            throw ConfigError("'" + key + "' must contain integers only");
        out[i] = arr[i].get<int>();
    }
    return out;
}

}  // namespace

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("model config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    for (const auto& item : j.items())
        if (!kKnownKeys.count(item.key()))
            throw ConfigError("model config has unknown field '" + item.key() + "'");

    ModelConfig cfg;
    try {
        if (!j.contains("name")) throw ConfigError("model config is missing 'name'");
        cfg.name = j.at("name").get<std::string>();
        if (!j.contains("num_classes"))
            throw ConfigError("model config is missing 'num_classes'");
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.dims = read_stage_array(j, "dims");
        cfg.depths = read_stage_array(j, "depths");
        cfg.heads = read_stage_array(j, "heads");
        if (j.contains("in_channels")) cfg.in_channels = j.at("in_channels").get<int>();
        if (j.contains("partial_ratio")) cfg.partial_ratio = j.at("partial_ratio").get<double>();
        if (j.contains("ffn_expansion")) cfg.ffn_expansion = j.at("ffn_expansion").get<double>();
        if (j.contains("fixed_k_fraction"))
            cfg.fixed_k_fraction = j.at("fixed_k_fraction").get<double>();
        if (j.contains("mask_mode")) {
            const std::string m = j.at("mask_mode").get<std::string>();
            if (m == "neg_inf")
                cfg.mask_mode = MaskMode::NegInf;
            else if (m == "zero_pre_softmax")
                cfg.mask_mode = MaskMode::ZeroPreSoftmax;
            else
                throw ConfigError("mask_mode must be 'neg_inf' or 'zero_pre_softmax', got '" +
                                  m + "'");
        }
        if (j.contains("topk_mode")) {
            const std::string m = j.at("topk_mode").get<std::string>();
            if (m == "gdtko")
                cfg.topk_mode = TopkMode::Gdtko;
            else if (m == "fixed")
                cfg.topk_mode = TopkMode::Fixed;
            else
                throw ConfigError("topk_mode must be 'gdtko' or 'fixed', got '" + m + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError("model config '" + path + "' has a badly typed field: " + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace frs
