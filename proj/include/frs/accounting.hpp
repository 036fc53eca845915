#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "frs/model_config.hpp"

namespace frs {

struct AccountingRow {
    std::string path;
    std::string kind;
    int64_t params = 0;
    int64_t macs = 0;
};

// Per-layer parameter and multiply-accumulate breakdown. MACs follow the
// usual reporting convention: convolutions, matmuls, and the linear head
// count; activations, normalization, softmax, pooling, and masking are zero.
struct AccountingReport {
    std::vector<AccountingRow> rows;
    int resolution = 0;  // square input edge used for MACs; 0 = params only

    int64_t total_params() const;
    int64_t total_macs() const;
    std::string to_table() const;
    std::string to_csv() const;
};

AccountingReport count_params(const ModelConfig& cfg);

// resolution must be a positive multiple of 32 so every stage divides evenly.
AccountingReport count_macs(const ModelConfig& cfg, int resolution);

}  // namespace frs
