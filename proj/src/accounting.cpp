#include "frs/accounting.hpp"

#include <iomanip>
#include <sstream>

namespace frs {

namespace {

// Emits the per-layer rows in forward order. spatial[i] is the H*W of stage
// i's feature map (all zero when only parameters are requested).
std::vector<AccountingRow> build_rows(const ModelConfig& cfg,
                                      const std::array<int64_t, 4>& spatial,
                                      int64_t stem_mid_spatial) {
    std::vector<AccountingRow> rows;
    auto conv1x1 = [&](const std::string& path, int64_t cin, int64_t cout, int64_t hw) {
        rows.push_back({path, "conv1x1", cin * cout + cout, cin * cout * hw});
    };
    auto dwconv = [&](const std::string& path, int64_t c, int64_t k, int64_t hw) {
        rows.push_back({path, "dwconv" + std::to_string(k) + "x" + std::to_string(k),
                        c * k * k + c, k * k * c * hw});
    };
    auto conv3x3 = [&](const std::string& path, int64_t cin, int64_t cout, int64_t hw_out) {
        rows.push_back({path, "conv3x3", 9 * cin * cout + cout, 9 * cin * cout * hw_out});
    };
    auto layernorm = [&](const std::string& path, int64_t c) {
        rows.push_back({path, "layernorm", 2 * c, 0});
    };

    const int64_t mid = cfg.dims[0] / 2;
    conv3x3("stem.conv1", cfg.in_channels, mid, stem_mid_spatial);
    layernorm("stem.norm1", mid);
    conv3x3("stem.conv2", mid, cfg.dims[0], spatial[0]);
    layernorm("stem.norm2", cfg.dims[0]);

    for (int s = 0; s < 4; ++s) {
        const int64_t c = cfg.dims[static_cast<size_t>(s)];
        const int64_t hw = spatial[static_cast<size_t>(s)];
        if (s > 0) {
            const std::string mp = "merge" + std::to_string(s);
            conv3x3(mp + ".conv", cfg.dims[static_cast<size_t>(s - 1)], c, hw);
            layernorm(mp + ".norm", c);
        }
        const AttentionConfig acfg = cfg.attention_for_stage(s);
        const int64_t cp = acfg.attended_channels();
        const int64_t d = acfg.head_dim();
        const int64_t heads = acfg.heads;
        const HssfgnConfig fcfg = cfg.ffn_for_stage(s);
        const int64_t hid = fcfg.hidden_dim(), grp = hid / 4;
        for (int b = 0; b < cfg.depths[static_cast<size_t>(s)]; ++b) {
            const std::string bp =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            dwconv(bp + ".cpe", c, 3, hw);
            layernorm(bp + ".norm1", c);
            for (const char* q : {"q", "k", "v"}) {
                conv1x1(bp + ".attn." + q + "_pw", cp, cp, hw);
                dwconv(bp + ".attn." + std::string(q) + "_dw", cp, 3, hw);
            }
            conv1x1(bp + ".attn.gate", cp, 1, hw);
            rows.push_back({bp + ".attn.rel_bias", "bias", heads * d * d, 0});
            rows.push_back({bp + ".attn.scores", "matmul", 0, heads * d * d * hw});
            rows.push_back({bp + ".attn.attn_v", "matmul", 0, heads * d * d * hw});
            conv1x1(bp + ".attn.out", c, c, hw);
            layernorm(bp + ".norm2", c);
            conv1x1(bp + ".ffn.in", c, hid, hw);
            for (int64_t k : {1, 3, 5, 7}) dwconv(bp + ".ffn.dw" + std::to_string(k), grp, k, hw);
            conv1x1(bp + ".ffn.out", hid, c, hw);
        }
    }
    // The head runs on the pooled vector, so its cost is resolution
    // independent; it still reports zero in a params-only pass.
    const bool counting_macs = stem_mid_spatial > 0;
    rows.push_back({"head", "linear",
                    static_cast<int64_t>(cfg.dims[3]) * cfg.num_classes + cfg.num_classes,
                    counting_macs ? static_cast<int64_t>(cfg.dims[3]) * cfg.num_classes : 0});
    return rows;
}

}  // namespace

int64_t AccountingReport::total_params() const {
    int64_t t = 0;
    for (const auto& r : rows) t += r.params;
    return t;
}

int64_t AccountingReport::total_macs() const {
    int64_t t = 0;
    for (const auto& r : rows) t += r.macs;
    return t;
}

std::string AccountingReport::to_table() const {
    size_t path_w = 4, kind_w = 4;
    for (const auto& r : rows) {
        path_w = std::max(path_w, r.path.size());
        kind_w = std::max(kind_w, r.kind.size());
    }
    std::ostringstream os;
    os << "# MAC convention: convs, matmuls, and the linear head count; "
          "activations, norms, softmax, pooling, and masking are 0.\n";
    if (resolution > 0) os << "# input resolution: " << resolution << "x" << resolution << "\n";
    os << std::left << std::setw(static_cast<int>(path_w) + 2) << "path"
       << std::setw(static_cast<int>(kind_w) + 2) << "kind" << std::right << std::setw(14)
       << "params" << std::setw(16) << "macs" << "\n";
    for (const auto& r : rows)
        os << std::left << std::setw(static_cast<int>(path_w) + 2) << r.path
           << std::setw(static_cast<int>(kind_w) + 2) << r.kind << std::right << std::setw(14)
           << r.params << std::setw(16) << r.macs << "\n";
    os << std::left << std::setw(static_cast<int>(path_w) + 2) << "TOTAL"
       << std::setw(static_cast<int>(kind_w) + 2) << "" << std::right << std::setw(14)
       << total_params() << std::setw(16) << total_macs() << "\n";
    return os.str();
}

std::string AccountingReport::to_csv() const {
    std::ostringstream os;
    os << "path,kind,params,macs\n";
    for (const auto& r : rows)
        os << r.path << "," << r.kind << "," << r.params << "," << r.macs << "\n";
    os << "TOTAL,," << total_params() << "," << total_macs() << "\n";
    return os.str();
}

AccountingReport count_params(const ModelConfig& cfg) {
    cfg.validate();
    AccountingReport rep;
    rep.rows = build_rows(cfg, {0, 0, 0, 0}, 0);
    return rep;
}

AccountingReport count_macs(const ModelConfig& cfg, int resolution) {
    cfg.validate();
    if (resolution < 32 || resolution % 32 != 0)
        throw DimensionError("MAC counting needs a resolution that is a positive multiple of 32, got " +
                             std::to_string(resolution));
    std::array<int64_t, 4> spatial{};
    for (int s = 0; s < 4; ++s) {
        const int64_t edge = resolution >> (s + 2);
        spatial[static_cast<size_t>(s)] = edge * edge;
    }
    const int64_t half = resolution / 2;
    AccountingReport rep;
    rep.resolution = resolution;
    rep.rows = build_rows(cfg, spatial, half * half);
    return rep;
}

}  // namespace frs
