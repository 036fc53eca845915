#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "frs/backbone.hpp"
#include "frs/synthetic.hpp"

namespace frs {

struct TrainConfig {
    int epochs = 25;
    int batch_size = 32;
    double peak_lr = 1e-3;
    double weight_decay = 0.05;
    uint64_t seed = 0;
    bool clip_gradients = true;
    double clip_norm = 5.0;

    // Warmup scales with run length: 5 epochs for a 300-epoch schedule,
    // proportionally fewer for shorter runs, never zero and never more than
    // the run itself.
    int resolved_warmup_epochs() const {
        const long scaled = std::lround(epochs * 5.0 / 300.0);
        const long capped = std::clamp(scaled, 1L, 5L);
        return static_cast<int>(std::min<long>(capped, epochs));
    }

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (!(peak_lr > 0.0)) throw ConfigError("peak learning rate must be positive");
        if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
        if (clip_gradients && !(clip_norm > 0.0))
            throw ConfigError("clip norm must be positive");
    }
};

// Piecewise schedule: linear 0 -> peak over the warmup steps, then cosine
// peak -> 0 over the rest. `step` is 0-based; the value returned is the rate
// applied at that step.
double lr_at_step(int64_t step, int64_t total_steps, int64_t warmup_steps, double peak_lr);

struct TrainResult {
    std::vector<std::string> log_lines;  // epoch,step,lr,loss,acc
    std::vector<double> step_losses;
    double final_accuracy = 0.0;
};

// Top-1 accuracy as a fraction in [0, 1]; argmax ties resolve to the lowest
// class index.
double evaluate_model(const Model<float>& m, const Dataset& data);

// Decoupled-weight-decay Adam over the seeded-shuffle batch stream. Each
// epoch's log line carries the post-epoch accuracy over the full training
// set, so evaluating the final checkpoint on the same data reproduces the
// last logged value. Log lines stream to `log_out` when given.
TrainResult train_model(Model<float>& m, const Dataset& data, const TrainConfig& cfg,
                        std::ostream* log_out = nullptr);

struct SweepRow {
    std::string mode;      // "fixed" or "gdtko"
    std::string fraction;  // empty for gdtko
    double top1 = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::string to_csv() const;  // mode,fraction,top1 header + one row each
};

// Trains one fresh model per fixed fraction plus one adaptive model, all
// from the same seed, and reports each run's final training accuracy.
SweepResult sweep_k(const ModelConfig& model_cfg, const Dataset& data,
                    const std::vector<double>& fractions, const TrainConfig& train_cfg,
                    std::ostream* log_out = nullptr);

}  // namespace frs
