#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "frs/accounting.hpp"
#include "frs/backbone.hpp"
#include "frs/gradcheck_suite.hpp"

using namespace frs;

namespace {

ModelConfig make_tiny() {
    ModelConfig cfg;
    cfg.name = "tiny";
    cfg.num_classes = 256;
    cfg.dims = {40, 80, 160, 320};
    cfg.depths = {2, 2, 6, 2};
    cfg.heads = {1, 2, 4, 8};
    return cfg;
}

ModelConfig make_base() {
    ModelConfig cfg;
    cfg.name = "base";
    cfg.num_classes = 256;
    cfg.dims = {64, 128, 256, 512};
    cfg.depths = {2, 2, 6, 2};
    cfg.heads = {2, 4, 8, 16};
    return cfg;
}

ModelConfig make_large() {
    ModelConfig cfg;
    cfg.name = "large";
    cfg.num_classes = 256;
    cfg.dims = {64, 128, 256, 512};
    cfg.depths = {3, 3, 9, 3};
    cfg.heads = {2, 4, 8, 16};
    return cfg;
}

const AccountingRow* find_row(const AccountingReport& rep, const std::string& path) {
    for (const auto& r : rep.rows)
        if (r.path == path) return &r;
    return nullptr;
}

}  // namespace

TEST_CASE("single rows match hand-computed parameter and MAC counts") {
    AccountingReport rep = count_macs(make_tiny(), 224);

    // stem.conv1: 3x3 conv 3 -> 20 evaluated on the 112x112 intermediate map
    const AccountingRow* r = find_row(rep, "stem.conv1");
    REQUIRE(r != nullptr);
    CHECK(r->params == 9 * 3 * 20 + 20);
    CHECK(r->macs == int64_t{9} * 3 * 20 * 112 * 112);

    // stage 1 attends 10 of 40 channels at 56x56
    r = find_row(rep, "stage1.block0.attn.q_pw");
    REQUIRE(r != nullptr);
    CHECK(r->params == 10 * 10 + 10);
    CHECK(r->macs == int64_t{10} * 10 * 56 * 56);

    r = find_row(rep, "stage1.block0.cpe");
    REQUIRE(r != nullptr);
    CHECK(r->params == 40 * 9 + 40);
    CHECK(r->macs == int64_t{9} * 40 * 56 * 56);

    // channel attention scores: one head times 10x10 score entries, each a
    // dot product over the 56x56 positions, and the same again for scores*V
    r = find_row(rep, "stage1.block0.attn.scores");
    REQUIRE(r != nullptr);
    CHECK(r->params == 0);
    CHECK(r->macs == int64_t{1} * 10 * 10 * 56 * 56);
    r = find_row(rep, "stage1.block0.attn.attn_v");
    REQUIRE(r != nullptr);
    CHECK(r->macs == int64_t{1} * 10 * 10 * 56 * 56);

    // stage 2 has two heads over 20 attended channels at 28x28
    r = find_row(rep, "stage2.block0.attn.scores");
    REQUIRE(r != nullptr);
    CHECK(r->macs == int64_t{2} * 10 * 10 * 28 * 28);

    r = find_row(rep, "stage1.block0.attn.rel_bias");
    REQUIRE(r != nullptr);
    CHECK(r->params == 100);
    CHECK(r->macs == 0);

    // ffn expands 40 -> 80, gate groups of 20, five/seven tap kernels
    r = find_row(rep, "stage1.block0.ffn.in");
    REQUIRE(r != nullptr);
    CHECK(r->params == 40 * 80 + 80);
    CHECK(r->macs == int64_t{40} * 80 * 56 * 56);
    r = find_row(rep, "stage1.block0.ffn.dw5");
    REQUIRE(r != nullptr);
    CHECK(r->params == 20 * 25 + 20);
    CHECK(r->macs == int64_t{25} * 20 * 56 * 56);

    r = find_row(rep, "merge1.conv");
    REQUIRE(r != nullptr);
    CHECK(r->params == 9 * 40 * 80 + 80);
    CHECK(r->macs == int64_t{9} * 40 * 80 * 28 * 28);

    r = find_row(rep, "head");
    REQUIRE(r != nullptr);
    CHECK(r->params == 320 * 256 + 256);
    CHECK(r->macs == int64_t{320} * 256);
}

TEST_CASE("parameter totals agree with the tensors a built model registers") {
    for (const ModelConfig& cfg : {micro_config(), make_tiny()}) {
        Model<float> m = build_model<float>(cfg, 1);
        int64_t registered = 0;
        for (const auto& p : named_parameters(m)) registered += p.tensor.numel();
        CHECK(count_params(cfg).total_params() == registered);
    }
}

TEST_CASE("params-only reports carry no MACs and no resolution") {
    AccountingReport rep = count_params(make_tiny());
    CHECK(rep.resolution == 0);
    CHECK(rep.total_macs() == 0);
    CHECK(rep.total_params() == count_macs(make_tiny(), 224).total_params());
}

TEST_CASE("doubling the resolution quadruples every MAC row") {
    AccountingReport lo = count_macs(make_tiny(), 64);
    AccountingReport hi = count_macs(make_tiny(), 128);
    REQUIRE(lo.rows.size() == hi.rows.size());
    for (size_t i = 0; i < lo.rows.size(); ++i) {
        CHECK(lo.rows[i].path == hi.rows[i].path);
        // the head runs after pooling, so it alone ignores the resolution
        if (lo.rows[i].path == "head")
            CHECK(hi.rows[i].macs == lo.rows[i].macs);
        else
            CHECK(hi.rows[i].macs == 4 * lo.rows[i].macs);
        CHECK(hi.rows[i].params == lo.rows[i].params);
    }
}

TEST_CASE("MAC counting rejects resolutions that break the stage ladder") {
    CHECK_THROWS_AS((void)count_macs(make_tiny(), 0), DimensionError);
    CHECK_THROWS_AS((void)count_macs(make_tiny(), 31), DimensionError);
    CHECK_THROWS_AS((void)count_macs(make_tiny(), 33), DimensionError);
    CHECK_THROWS_AS((void)count_macs(make_tiny(), -64), DimensionError);
    CHECK_NOTHROW((void)count_macs(make_tiny(), 32));
}

TEST_CASE("the three shipped sizes land inside their compute budgets") {
    struct Budget {
        ModelConfig cfg;
        int64_t pinned_params, pinned_macs;
        double target_params, target_macs;
    };
    const Budget budgets[] = {
        {make_tiny(), 2773108, 447056000, 2.56e6, 0.43e9},
        {make_base(), 6887372, 1100892160, 6.39e6, 1.21e9},
        {make_large(), 9480114, 1530248192, 10.39e6, 1.74e9},
    };
    for (const Budget& b : budgets) {
        AccountingReport rep = count_macs(b.cfg, 224);
        CHECK(rep.total_params() == b.pinned_params);
        CHECK(rep.total_macs() == b.pinned_macs);
        CHECK(std::abs(rep.total_params() / b.target_params - 1.0) <= 0.20);
        CHECK(std::abs(rep.total_macs() / b.target_macs - 1.0) <= 0.20);
    }
}

TEST_CASE("csv and table renderings end with a correct TOTAL row") {
    AccountingReport rep = count_macs(micro_config(), 32);
    const std::string csv = rep.to_csv();
    CHECK(csv.starts_with("path,kind,params,macs\n"));
    const std::string total_line = "TOTAL,," + std::to_string(rep.total_params()) + "," +
                                   std::to_string(rep.total_macs()) + "\n";
    CHECK(csv.ends_with(total_line));
    CHECK(csv.find("stem.conv1,conv3x3,") != std::string::npos);

    const std::string table = rep.to_table();
    CHECK(table.find("TOTAL") != std::string::npos);
    CHECK(table.find(std::to_string(rep.total_macs())) != std::string::npos);
    CHECK(table.find("32x32") != std::string::npos);
}

TEST_CASE("json config files round-trip through the loader") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "frs_cfg_test";
    fs::create_directories(dir);
    const fs::path path = dir / "roundtrip.json";
    {
        std::ofstream out(path);
        out << R"({
            "name": "roundtrip",
            "num_classes": 12,
            "dims": [8, 16, 24, 32],
            "depths": [1, 1, 2, 1],
            "heads": [1, 1, 2, 2],
            "partial_ratio": 0.5,
            "ffn_expansion": 1.5,
            "mask_mode": "zero_pre_softmax",
            "topk_mode": "fixed",
            "fixed_k_fraction": 0.25
        })";
    }
    ModelConfig cfg = load_model_config(path.string());
    CHECK(cfg.name == "roundtrip");
    CHECK(cfg.num_classes == 12);
    CHECK(cfg.dims == std::array<int, 4>{8, 16, 24, 32});
    CHECK(cfg.depths == std::array<int, 4>{1, 1, 2, 1});
    CHECK(cfg.heads == std::array<int, 4>{1, 1, 2, 2});
    CHECK(cfg.partial_ratio == 0.5);
    CHECK(cfg.ffn_expansion == 1.5);
    CHECK(cfg.mask_mode == MaskMode::ZeroPreSoftmax);
    CHECK(cfg.topk_mode == TopkMode::Fixed);
    CHECK(cfg.fixed_k_fraction == 0.25);
    fs::remove_all(dir);
}

TEST_CASE("config loader rejects what it cannot faithfully represent") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "frs_cfg_reject";
    fs::create_directories(dir);
    auto write = [&](const std::string& body) {
        const fs::path p = dir / "cfg.json";
        std::ofstream out(p);
        out << body;
        return p.string();
    };

    CHECK_THROWS_AS((void)load_model_config((dir / "absent.json").string()), IoError);
    CHECK_THROWS_AS((void)load_model_config(write("not json at all")), ConfigError);
    CHECK_THROWS_AS((void)load_model_config(write("[1, 2, 3]")), ConfigError);

    const std::string valid = R"("name": "x", "num_classes": 4,
        "dims": [8, 16, 24, 32], "depths": [1, 1, 1, 1], "heads": [1, 1, 2, 2])";
    CHECK_NOTHROW((void)load_model_config(write("{" + valid + "}")));
    CHECK_THROWS_AS((void)load_model_config(write("{" + valid + R"(, "lr": 0.1})")),
                    ConfigError);
    CHECK_THROWS_AS(
        (void)load_model_config(write(R"({"name": "x", "num_classes": 4,
            "dims": [8, 16, 24], "depths": [1, 1, 1, 1], "heads": [1, 1, 2, 2]})")),
        ConfigError);
    CHECK_THROWS_AS(
        (void)load_model_config(write(R"({"num_classes": 4,
            "dims": [8, 16, 24, 32], "depths": [1, 1, 1, 1], "heads": [1, 1, 2, 2]})")),
        ConfigError);
    CHECK_THROWS_AS((void)load_model_config(
                        write("{" + valid + R"(, "mask_mode": "sometimes"})")),
                    ConfigError);
    CHECK_THROWS_AS((void)load_model_config(
                        write("{" + valid + R"(, "topk_mode": "adaptive"})")),
                    ConfigError);
    fs::remove_all(dir);
}
