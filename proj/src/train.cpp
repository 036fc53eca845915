#include "frs/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace frs {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kPi = 3.14159265358979323846;

Tensor<float> assemble_batch(const Dataset& data, const std::vector<int>& order, size_t begin,
                             size_t end, std::vector<int>& labels_out) {
    const int64_t per = shape_numel(data.image_shape);
    Shape bs = data.image_shape;
    bs.insert(bs.begin(), static_cast<int>(end - begin));
    Tensor<float> batch(bs);
    labels_out.clear();
    for (size_t i = begin; i < end; ++i) {
        const int idx = order[i];
        std::copy(data.images[static_cast<size_t>(idx)].begin(),
                  data.images[static_cast<size_t>(idx)].end(),
                  batch.data() + static_cast<int64_t>(i - begin) * per);
        labels_out.push_back(data.labels[static_cast<size_t>(idx)]);
    }
    return batch;
}

int argmax_row(const float* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

// One Adam moment pair per parameter, in registry order.
struct AdamState {
    std::vector<std::vector<float>> m, v;
};

void adamw_step(std::vector<NamedParam<float>>& params, AdamState& state, int64_t t, double lr,
                double weight_decay) {
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor<float>& w = params[p].tensor;
        if (!w.has_grad()) continue;
        const float* g = w.grad_data();
        float* wv = w.data();
        std::vector<float>& m = state.m[p];
        std::vector<float>& v = state.v[p];
        const int64_t n = w.numel();
        for (int64_t i = 0; i < n; ++i) {
            const double gi = g[i];
            m[i] = static_cast<float>(kBeta1 * m[i] + (1.0 - kBeta1) * gi);
            v[i] = static_cast<float>(kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double wi = wv[i];
            wi -= lr * (mhat / (std::sqrt(vhat) + kAdamEps));
            wi -= lr * weight_decay * wi;
            wv[i] = static_cast<float>(wi);
        }
    }
}

// Scales all gradients so their joint L2 norm is at most `max_norm`.
void clip_global_norm(std::vector<NamedParam<float>>& params, double max_norm) {
    double sq = 0.0;
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        const float* g = p.tensor.grad_data();
        for (int64_t i = 0; i < p.tensor.numel(); ++i) sq += static_cast<double>(g[i]) * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        std::vector<float>& g = p.tensor.grad_vec();
        for (float& v : g) v *= scale;
    }
}

std::string format_log_line(int epoch, int64_t step, double lr, double loss, double acc) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%lld,%.6e,%.6f,%.4f", epoch,
                  static_cast<long long>(step), lr, loss, acc);
    return buf;
}

}  // namespace

double lr_at_step(int64_t step, int64_t total_steps, int64_t warmup_steps, double peak_lr) {
    if (step < 0 || step >= total_steps) throw ContractError("lr_at_step: step outside schedule");
    if (warmup_steps < 0 || warmup_steps > total_steps)
        throw ContractError("lr_at_step: warmup outside schedule");
    if (step < warmup_steps)
        return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const double t = static_cast<double>(step + 1 - warmup_steps);
    const double span = static_cast<double>(total_steps - warmup_steps);
    return 0.5 * peak_lr * (1.0 + std::cos(kPi * t / span));
}

double evaluate_model(const Model<float>& m, const Dataset& data) {
    if (data.size() == 0) throw ContractError("cannot evaluate on an empty dataset");
    NoGradScope<float> no_grad;
    const int n = data.size();
    const int k = m.cfg.num_classes;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    int correct = 0;
    std::vector<int> labels;
    constexpr size_t kEvalBatch = 32;
    for (size_t begin = 0; begin < static_cast<size_t>(n); begin += kEvalBatch) {
        const size_t end = std::min(begin + kEvalBatch, static_cast<size_t>(n));
        Tensor<float> batch = assemble_batch(data, order, begin, end, labels);
        Tensor<float> logits = model_forward(m, batch);
        for (size_t i = 0; i < labels.size(); ++i)
            if (argmax_row(logits.data() + static_cast<int64_t>(i) * k, k) == labels[i])
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train_model(Model<float>& m, const Dataset& data, const TrainConfig& cfg,
                        std::ostream* log_out) {
    cfg.validate();
    if (data.size() == 0) throw ContractError("cannot train on an empty dataset");
    for (int label : data.labels)
        if (label < 0 || label >= m.cfg.num_classes)
            throw ContractError("dataset label " + std::to_string(label) +
                                " outside the model's " + std::to_string(m.cfg.num_classes) +
                                " classes");

    std::vector<NamedParam<float>> params = named_parameters(m);
    AdamState state;
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
        state.m[p].assign(static_cast<size_t>(params[p].tensor.numel()), 0.0f);
        state.v[p].assign(static_cast<size_t>(params[p].tensor.numel()), 0.0f);
    }

    const int n = data.size();
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    const int64_t warmup_steps = steps_per_epoch * cfg.resolved_warmup_epochs();

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    GradTape<float> tape;
    int64_t global_step = 0;
    std::vector<int> labels;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        double last_lr = 0.0;
        for (size_t begin = 0; begin < static_cast<size_t>(n);
             begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end =
                std::min(begin + static_cast<size_t>(cfg.batch_size), static_cast<size_t>(n));
            Tensor<float> batch = assemble_batch(data, order, begin, end, labels);

            tape.clear();
            for (auto& p : params) p.tensor.zero_grad();
            Tensor<float> loss;
            try {
                TapeScope<float> scope(tape);
                Tensor<float> logits = model_forward(m, batch);
                loss = cross_entropy_logits(logits, labels);
            } catch (const NumericError& e) {
                // An op tripped over non-finite values mid-forward; replay the
                // pass piecewise so the error names where things went bad.
                const std::string bad = first_non_finite_stage(m, batch);
                throw NumericError("non-finite values at step " + std::to_string(global_step) +
                                   "; first affected part: " + (bad.empty() ? "loss" : bad) +
                                   " (" + e.what() + ")");
            }
            const double loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value)) {
                const std::string bad = first_non_finite_stage(m, batch);
                throw NumericError("non-finite loss at step " + std::to_string(global_step) +
                                   "; first affected part: " + (bad.empty() ? "loss" : bad));
            }
            tape.backward(loss);

            if (cfg.clip_gradients) clip_global_norm(params, cfg.clip_norm);
            last_lr = lr_at_step(global_step, total_steps, warmup_steps, cfg.peak_lr);
            adamw_step(params, state, global_step + 1, last_lr, cfg.weight_decay);

            epoch_loss += loss_value * static_cast<double>(end - begin);
            result.step_losses.push_back(loss_value);
            ++global_step;
        }
        tape.clear();
        const double mean_loss = epoch_loss / static_cast<double>(n);
        const double acc = evaluate_model(m, data);
        result.final_accuracy = acc;
        result.log_lines.push_back(format_log_line(epoch + 1, global_step, last_lr, mean_loss, acc));
        if (log_out) (*log_out) << result.log_lines.back() << "\n" << std::flush;
    }
    return result;
}

std::string SweepResult::to_csv() const {
    std::ostringstream os;
    os << "mode,fraction,top1\n";
    for (const auto& r : rows) {
        char acc[32];
        std::snprintf(acc, sizeof(acc), "%.4f", r.top1);
        os << r.mode << "," << r.fraction << "," << acc << "\n";
    }
    return os.str();
}

SweepResult sweep_k(const ModelConfig& model_cfg, const Dataset& data,
                    const std::vector<double>& fractions, const TrainConfig& train_cfg,
                    std::ostream* log_out) {
    if (fractions.empty()) throw ConfigError("sweep needs at least one fraction");
    for (double f : fractions)
        if (!(f > 0.0) || f > 1.0)
            throw ConfigError("sweep fractions must lie in (0, 1]");

    SweepResult result;
    auto run_point = [&](const ModelConfig& cfg, const std::string& mode,
                         const std::string& fraction) {
        Model<float> model = build_model<float>(cfg, train_cfg.seed);
        TrainResult tr = train_model(model, data, train_cfg, nullptr);
        result.rows.push_back({mode, fraction, tr.final_accuracy});
        if (log_out) {
            char acc[32];
            std::snprintf(acc, sizeof(acc), "%.4f", tr.final_accuracy);
            (*log_out) << mode << "," << fraction << "," << acc << "\n" << std::flush;
        }
    };
    for (double f : fractions) {
        ModelConfig cfg = model_cfg;
        cfg.topk_mode = TopkMode::Fixed;
        cfg.fixed_k_fraction = f;
        char frac[32];
        std::snprintf(frac, sizeof(frac), "%g", f);
        run_point(cfg, "fixed", frac);
    }
    ModelConfig cfg = model_cfg;
    cfg.topk_mode = TopkMode::Gdtko;
    run_point(cfg, "gdtko", "");
    return result;
}

}  // namespace frs
