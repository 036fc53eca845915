#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "frs/gradcheck_suite.hpp"
#include "frs/train.hpp"

using namespace frs;

namespace {

Dataset toy_data(int n, uint64_t seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    return generate_synthetic_in_memory(spec, n);
}

bool same_params(Model<float>& a, Model<float>& b) {
    auto pa = named_parameters(a), pb = named_parameters(b);
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i)
        for (int64_t j = 0; j < pa[i].tensor.numel(); ++j)
            if (std::bit_cast<uint32_t>(pa[i].tensor.data()[j]) !=
                std::bit_cast<uint32_t>(pb[i].tensor.data()[j]))
                return false;
    return true;
}

}  // namespace

TEST_CASE("the learning rate schedule matches its closed form") {
    const double peak = 1e-3;
    const int64_t total = 100, warmup = 10;
    CHECK(lr_at_step(0, total, warmup, peak) == doctest::Approx(peak / 10).epsilon(1e-12));
    CHECK(lr_at_step(4, total, warmup, peak) == doctest::Approx(peak / 2).epsilon(1e-12));
    CHECK(lr_at_step(9, total, warmup, peak) == doctest::Approx(peak).epsilon(1e-12));

    // cosine half: halfway through the decay span sits at half the peak, the
    // last step lands on zero
    CHECK(lr_at_step(54, total, warmup, peak) == doctest::Approx(0.5 * peak).epsilon(1e-9));
    CHECK(lr_at_step(99, total, warmup, peak) >= 0.0);
    CHECK(lr_at_step(99, total, warmup, peak) < 1e-12);

    for (int64_t s = 10; s + 1 < total; ++s)
        CHECK(lr_at_step(s, total, warmup, peak) >= lr_at_step(s + 1, total, warmup, peak));

    CHECK_THROWS_AS((void)lr_at_step(-1, total, warmup, peak), ContractError);
    CHECK_THROWS_AS((void)lr_at_step(total, total, warmup, peak), ContractError);
    CHECK_THROWS_AS((void)lr_at_step(0, total, total + 1, peak), ContractError);
}

TEST_CASE("warmup length scales with the run and never vanishes") {
    auto warmup_for = [](int epochs) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        return cfg.resolved_warmup_epochs();
    };
    CHECK(warmup_for(300) == 5);
    CHECK(warmup_for(600) == 5);
    CHECK(warmup_for(120) == 2);
    CHECK(warmup_for(60) == 1);
    CHECK(warmup_for(25) == 1);
    CHECK(warmup_for(2) == 1);
    CHECK(warmup_for(1) == 1);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.peak_lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.weight_decay = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.clip_norm = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.clip_gradients = false;  // norm is irrelevant once clipping is off
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("evaluation refuses an empty dataset") {
    Model<float> m = build_model<float>(micro_config(), 1);
    Dataset empty;
    CHECK_THROWS_AS((void)evaluate_model(m, empty), ContractError);
}

TEST_CASE("an untrained model scores around chance") {
    Dataset data = toy_data(64, 2);
    for (uint64_t seed : {1u, 2u, 3u}) {
        Model<float> m = build_model<float>(micro_config(), seed);
        const double acc = evaluate_model(m, data);
        CHECK(acc >= 0.05);
        CHECK(acc <= 0.5);
    }
}

TEST_CASE("argmax ties resolve to the lowest class index") {
    Model<float> m = build_model<float>(micro_config(), 1);
    for (auto& p : named_parameters(m))
        for (int64_t j = 0; j < p.tensor.numel(); ++j) p.tensor.data()[j] = 0.0f;
    // all-zero weights force identical logits, so every prediction is class 0
    Dataset data = toy_data(8, 3);
    std::fill(data.labels.begin(), data.labels.end(), 0);
    CHECK(evaluate_model(m, data) == 1.0);
    std::fill(data.labels.begin(), data.labels.end(), 1);
    CHECK(evaluate_model(m, data) == 0.0);
}

TEST_CASE("training reduces the loss and logs what evaluation reproduces") {
    Dataset data = toy_data(64, 11);
    Model<float> m = build_model<float>(micro_config(), 7);
    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.batch_size = 64;
    cfg.peak_lr = 1e-3;
    cfg.seed = 7;
    std::ostringstream log;
    TrainResult r = train_model(m, data, cfg, &log);

    REQUIRE(r.step_losses.size() == 100);  // one batch per epoch
    // fresh logits are near uniform, so the first loss sits near ln(4)
    CHECK(r.step_losses.front() == doctest::Approx(std::log(4.0)).epsilon(0.15));
    const double first = r.step_losses.front();
    const double last =
        std::accumulate(r.step_losses.end() - 5, r.step_losses.end(), 0.0) / 5.0;
    CHECK(last < 0.5 * first);

    REQUIRE(r.log_lines.size() == 100);
    // the streamed log is exactly the collected lines
    std::string joined;
    for (const auto& line : r.log_lines) joined += line + "\n";
    CHECK(log.str() == joined);

    // re-evaluating the trained model reproduces the last logged accuracy
    CHECK(evaluate_model(m, data) == r.final_accuracy);
    int epoch;
    long long step;
    double lr, loss, acc;
    REQUIRE(std::sscanf(r.log_lines.back().c_str(), "%d,%lld,%le,%lf,%lf", &epoch, &step, &lr,
                        &loss, &acc) == 5);
    CHECK(epoch == 100);
    CHECK(step == 100);
    CHECK(std::abs(acc - r.final_accuracy) <= 5e-5);  // %.4f rounding in the log
    int prev_epoch = 0;
    for (const auto& line : r.log_lines) {
        REQUIRE(std::sscanf(line.c_str(), "%d,%lld,%le,%lf,%lf", &epoch, &step, &lr, &loss,
                            &acc) == 5);
        CHECK(epoch == prev_epoch + 1);
        CHECK(step == epoch);
        CHECK(lr >= 0.0);
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
        prev_epoch = epoch;
    }
}

TEST_CASE("training is bit-deterministic given the seed") {
    Dataset data = toy_data(32, 13);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.seed = 5;

    Model<float> a = build_model<float>(micro_config(), 9);
    Model<float> b = build_model<float>(micro_config(), 9);
    TrainResult ra = train_model(a, data, cfg, nullptr);
    TrainResult rb = train_model(b, data, cfg, nullptr);
    CHECK(ra.log_lines == rb.log_lines);
    CHECK(ra.step_losses == rb.step_losses);
    CHECK(same_params(a, b));

    cfg.seed = 6;  // a different shuffle stream must change the trajectory
    Model<float> c = build_model<float>(micro_config(), 9);
    TrainResult rc = train_model(c, data, cfg, nullptr);
    CHECK(ra.log_lines != rc.log_lines);
}

TEST_CASE("a poisoned parameter surfaces as a numeric error naming its stage") {
    Dataset data = toy_data(8, 17);
    Model<float> m = build_model<float>(micro_config(), 1);
    for (auto& p : named_parameters(m))
        if (p.name == "stem.conv1.weight")
            p.tensor.data()[0] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    try {
        (void)train_model(m, data, cfg, nullptr);
        FAIL("training should have stopped on the non-finite loss");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("stem") != std::string::npos);
    }
}

TEST_CASE("labels outside the class range are rejected up front") {
    Dataset data = toy_data(8, 19);
    data.labels[3] = 7;
    Model<float> m = build_model<float>(micro_config(), 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    CHECK_THROWS_AS((void)train_model(m, data, cfg, nullptr), ContractError);
}

TEST_CASE("the k sweep trains one run per point and reports them in order") {
    Dataset data = toy_data(16, 23);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 3;
    std::ostringstream log;
    SweepResult sr = sweep_k(micro_config(), data, {0.5, 1.0}, cfg, &log);
    REQUIRE(sr.rows.size() == 3);
    CHECK(sr.rows[0].mode == "fixed");
    CHECK(sr.rows[0].fraction == "0.5");
    CHECK(sr.rows[1].mode == "fixed");
    CHECK(sr.rows[1].fraction == "1");
    CHECK(sr.rows[2].mode == "gdtko");
    CHECK(sr.rows[2].fraction.empty());
    for (const auto& row : sr.rows) {
        CHECK(row.top1 >= 0.0);
        CHECK(row.top1 <= 1.0);
    }

    const std::string csv = sr.to_csv();
    CHECK(csv.starts_with("mode,fraction,top1\n"));
    CHECK(csv.find("fixed,0.5,") != std::string::npos);
    CHECK(csv.find("gdtko,,") != std::string::npos);
    // the streamed rows match the csv body
    CHECK(log.str() == csv.substr(csv.find('\n') + 1));

    CHECK_THROWS_AS((void)sweep_k(micro_config(), data, {}, cfg, nullptr), ConfigError);
    CHECK_THROWS_AS((void)sweep_k(micro_config(), data, {0.0}, cfg, nullptr), ConfigError);
    CHECK_THROWS_AS((void)sweep_k(micro_config(), data, {1.5}, cfg, nullptr), ConfigError);
}
