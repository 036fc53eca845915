#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "frs/linalg.hpp"
#include "frs/ops.hpp"
#include "oracles.hpp"

using namespace frs;

namespace {
std::mt19937_64 rng_for(uint64_t seed) { return std::mt19937_64(seed); }
}  // namespace

TEST_CASE("matmul matches the triple loop in all transpose combinations") {
    auto rng = rng_for(101);
    const int m = 5, n = 4, k = 3;
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            Tensor<double> a = random_uniform<double>(ta ? Shape{k, m} : Shape{m, k}, rng);
            Tensor<double> b = random_uniform<double>(tb ? Shape{n, k} : Shape{k, n}, rng);
            Tensor<double> c = matmul(a, b, ta, tb);
            REQUIRE(c.shape() == Shape{m, n});
            const auto want = oracle::naive_matmul(
                std::vector<double>(a.data(), a.data() + a.numel()),
                std::vector<double>(b.data(), b.data() + b.numel()), m, n, k, ta, tb);
            for (int64_t i = 0; i < c.numel(); ++i)
                CHECK(c.data()[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));
        }
}

TEST_CASE("matmul broadcasts over matching batch dimensions") {
    auto rng = rng_for(102);
    Tensor<double> a = random_uniform<double>({2, 3, 4, 5}, rng);
    Tensor<double> b = random_uniform<double>({2, 3, 5, 6}, rng);
    Tensor<double> c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 3, 4, 6});
    for (int batch = 0; batch < 6; ++batch) {
        const auto want = oracle::naive_matmul(
            std::vector<double>(a.data() + batch * 20, a.data() + (batch + 1) * 20),
            std::vector<double>(b.data() + batch * 30, b.data() + (batch + 1) * 30), 4, 6, 5);
        for (int i = 0; i < 24; ++i)
            CHECK(c.data()[batch * 24 + i] == doctest::Approx(want[static_cast<size_t>(i)]));
    }
    CHECK_THROWS_AS((void)matmul(a, random_uniform<double>({3, 3, 5, 6}, rng)), DimensionError);
}

TEST_CASE("conv2d agrees with the seven-loop reference across its dispatch grid") {
    auto rng = rng_for(103);
    for (int stride : {1, 2})
        for (int padding : {0, 1})
            for (int groups : {1, 2, 4}) {
                const int cin = 4, cout = groups == 4 ? 4 : 6;
                for (int k : {1, 3}) {
                    if (k == 1 && padding == 1) continue;
                    Tensor<double> x = random_uniform<double>({2, cin, 7, 6}, rng);
                    Tensor<double> w =
                        random_uniform<double>({cout, cin / groups, k, k}, rng);
                    Tensor<double> b = random_uniform<double>({cout}, rng);
                    Tensor<double> got = conv2d(x, w, b, stride, padding, groups);
                    Tensor<double> want =
                        oracle::naive_conv2d(x, w, &b, stride, padding, groups);
                    REQUIRE(got.shape() == want.shape());
                    CHECK(oracle::max_abs_diff(got, want) < 1e-12);
                }
            }
}

TEST_CASE("conv2d validates its geometry") {
    auto rng = rng_for(104);
    Tensor<double> x = random_uniform<double>({1, 4, 5, 5}, rng);
    CHECK_THROWS_AS((void)conv2d(x, random_uniform<double>({6, 3, 3, 3}, rng), 1, 1, 1),
                    DimensionError);
    CHECK_THROWS_AS((void)conv2d(x, random_uniform<double>({6, 4, 3, 3}, rng), 0, 1, 1),
                    ConfigError);
    CHECK_THROWS_AS((void)conv2d(x, random_uniform<double>({6, 4, 3, 3}, rng), 1, -1, 1),
                    ConfigError);
    CHECK_THROWS_AS((void)conv2d(x, random_uniform<double>({6, 4, 3, 3}, rng), 1, 1, 3),
                    ConfigError);
    CHECK_THROWS_AS((void)conv2d(x, random_uniform<double>({6, 4, 7, 7}, rng), 1, 0, 1),
                    DimensionError);
}

TEST_CASE("gelu matches the tanh expansion pointwise") {
    Tensor<double> x = Tensor<double>::from_data({7}, {-3.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0});
    Tensor<double> y = gelu(x);
    CHECK(y.data()[3] == 0.0);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(oracle::naive_gelu(x.data()[i])).epsilon(1e-12));
    CHECK(gelu(Tensor<double>::from_data({1}, {1.0})).item() == doctest::Approx(0.8411919906));
}

TEST_CASE("sigmoid is stable far into both tails") {
    Tensor<double> x = Tensor<double>::from_data({4}, {-500.0, -1.0, 1.0, 500.0});
    Tensor<double> y = sigmoid(x);
    CHECK(y.data()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
    CHECK(y.data()[2] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(y.data()[3] == doctest::Approx(1.0));
    CHECK(y.all_finite());
}

TEST_CASE("softmax_rows normalizes rows and honors -inf entries") {
    Tensor<double> x = Tensor<double>::from_data(
        {2, 3}, {1.0, 2.0, 3.0, -std::numeric_limits<double>::infinity(), 0.5, 0.5});
    Tensor<double> y = softmax_rows(x);
    for (int r = 0; r < 2; ++r) {
        double sum = 0;
        for (int c = 0; c < 3; ++c) sum += y.data()[r * 3 + c];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(y.data()[3] == 0.0);
    CHECK(y.data()[4] == doctest::Approx(0.5));
    const auto want = oracle::naive_softmax_row(std::vector<double>{1.0, 2.0, 3.0});
    for (int c = 0; c < 3; ++c) CHECK(y.data()[c] == doctest::Approx(want[static_cast<size_t>(c)]));

    Tensor<double> dead = Tensor<double>::from_data(
        {1, 2},
        {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS((void)softmax_rows(dead), NumericError);
}

TEST_CASE("softmax of large but finite scores stays finite") {
    Tensor<double> x = Tensor<double>::from_data({1, 3}, {1e4, 9.9e3, 1.0});
    Tensor<double> y = softmax_rows(x);
    CHECK(y.all_finite());
    CHECK(y.data()[0] + y.data()[1] + y.data()[2] == doctest::Approx(1.0));
}

TEST_CASE("layer_norm_channels matches the per-position reference") {
    auto rng = rng_for(105);
    Tensor<double> x = random_uniform<double>({2, 5, 3, 4}, rng, -2.0, 2.0);
    Tensor<double> gamma = random_uniform<double>({5}, rng, 0.5, 1.5);
    Tensor<double> beta = random_uniform<double>({5}, rng, -0.5, 0.5);
    Tensor<double> got = layer_norm_channels(x, gamma, beta);
    Tensor<double> want = oracle::naive_layer_norm_channels(x, gamma, beta);
    CHECK(oracle::max_abs_diff(got, want) < 1e-12);

    // unit gamma, zero beta: channel mean 0 and variance 1 at every position
    Tensor<double> ones({5}, 1.0), zeros({5}, 0.0);
    Tensor<double> norm = layer_norm_channels(x, ones, zeros);
    for (int pos = 0; pos < 12; ++pos) {
        double mean = 0, var = 0;
        for (int c = 0; c < 5; ++c) mean += norm.data()[(c * 12) + pos + 0 * 60];
        mean /= 5;
        for (int c = 0; c < 5; ++c) {
            const double d = norm.data()[(c * 12) + pos] - mean;
            var += d * d;
        }
        var /= 5;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
    CHECK_THROWS_AS((void)layer_norm_channels(x, random_uniform<double>({4}, rng), beta),
                    DimensionError);
}

TEST_CASE("add supports equal shapes and trailing-suffix broadcast") {
    auto rng = rng_for(106);
    Tensor<double> a = random_uniform<double>({2, 3, 4}, rng);
    Tensor<double> b = random_uniform<double>({3, 4}, rng);
    Tensor<double> y = add(a, b);
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 12; ++i)
            CHECK(y.data()[n * 12 + i] == a.data()[n * 12 + i] + b.data()[i]);
    CHECK_THROWS_AS((void)add(a, random_uniform<double>({4, 3}, rng)), DimensionError);
    CHECK_THROWS_AS((void)mul(a, b), DimensionError);

    Tensor<double> m = mul(a, a);
    for (int64_t i = 0; i < m.numel(); ++i) CHECK(m.data()[i] == a.data()[i] * a.data()[i]);
    Tensor<double> s = scale(a, -2.5);
    for (int64_t i = 0; i < s.numel(); ++i) CHECK(s.data()[i] == -2.5 * a.data()[i]);
}

TEST_CASE("reshape and transpose rearrange without losing values") {
    auto rng = rng_for(107);
    Tensor<double> x = random_uniform<double>({2, 3, 4}, rng);
    Tensor<double> r = reshape(x, {4, 6});
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(r.data()[i] == x.data()[i]);
    CHECK_THROWS_AS((void)reshape(x, {5, 5}), DimensionError);

    Tensor<double> t = transpose(x, {2, 0, 1});
    REQUIRE(t.shape() == Shape{4, 2, 3});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 4; ++k)
                CHECK(t.data()[(k * 2 + i) * 3 + j] == x.data()[(i * 3 + j) * 4 + k]);
    CHECK_THROWS_AS((void)transpose(x, {0, 0, 1}), ConfigError);
    CHECK_THROWS_AS((void)transpose(x, {0, 1}), DimensionError);
}

TEST_CASE("concat and split are inverse along any axis") {
    auto rng = rng_for(108);
    Tensor<double> x = random_uniform<double>({2, 7, 3}, rng);
    std::vector<Tensor<double>> parts = split(x, {2, 4, 1}, 1);
    REQUIRE(parts.size() == 3);
    CHECK(parts[0].shape() == Shape{2, 2, 3});
    CHECK(parts[1].shape() == Shape{2, 4, 3});
    CHECK(parts[2].shape() == Shape{2, 1, 3});
    Tensor<double> back = concat<double>({parts[0], parts[1], parts[2]}, 1);
    CHECK(oracle::max_abs_diff(back, x) == 0.0);
    CHECK_THROWS_AS((void)split(x, {2, 4}, 1), DimensionError);
    CHECK_THROWS_AS((void)concat<double>({x, random_uniform<double>({2, 7, 4}, rng)}, 1),
                    DimensionError);
}

TEST_CASE("apply_topk_mask fills with -inf or zeroes depending on mode") {
    Tensor<double> s = Tensor<double>::from_data({1, 2, 2}, {3.0, -1.0, 0.5, 2.0});
    Tensor<double> mask = Tensor<double>::from_data({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor<double> neg = apply_topk_mask(s, mask, MaskMode::NegInf);
    CHECK(neg.data()[0] == 3.0);
    CHECK(std::isinf(neg.data()[1]));
    CHECK(neg.data()[1] < 0);
    CHECK(std::isinf(neg.data()[2]));
    CHECK(neg.data()[3] == 2.0);

    Tensor<double> zero = apply_topk_mask(s, mask, MaskMode::ZeroPreSoftmax);
    CHECK(zero.data()[0] == 3.0);
    CHECK(zero.data()[1] == 0.0);
    CHECK(zero.data()[2] == 0.0);
    CHECK(zero.data()[3] == 2.0);

    Tensor<double> bad = Tensor<double>::from_data({1, 2, 2}, {1.0, 0.5, 0.0, 1.0});
    CHECK_THROWS_AS((void)apply_topk_mask(s, bad, MaskMode::NegInf), ContractError);
    Tensor<double> wrong = Tensor<double>::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK_THROWS_AS((void)apply_topk_mask(s, wrong, MaskMode::NegInf), DimensionError);
}

TEST_CASE("masked softmax rows renormalize over the kept entries only") {
    auto rng = rng_for(110);
    Tensor<double> s = random_uniform<double>({1, 4, 4}, rng, -1.0, 1.0);
    s.data()[0] = 1.0;
    s.data()[1] = 5.0;
    s.data()[2] = 2.0;
    s.data()[3] = 4.0;
    TopKMask<double> tm = topk_mask_rowwise(s, 2);
    Tensor<double> attn = softmax_rows(apply_topk_mask(s, tm.mask, MaskMode::NegInf));
    CHECK(attn.data()[0] == 0.0);
    CHECK(attn.data()[2] == 0.0);
    const double z = std::exp(5.0) + std::exp(4.0);
    CHECK(attn.data()[1] == doctest::Approx(std::exp(5.0) / z));
    CHECK(attn.data()[3] == doctest::Approx(std::exp(4.0) / z));
    for (int r = 0; r < 4; ++r) {
        double kept = 0;
        for (int c = 0; c < 4; ++c) kept += tm.mask.data()[r * 4 + c];
        CHECK(kept == 2.0);
    }
}

TEST_CASE("pooling and reductions") {
    Tensor<double> x =
        Tensor<double>::from_data({1, 2, 2, 2}, {1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0});
    Tensor<double> p = global_avg_pool(x);
    REQUIRE(p.shape() == Shape{1, 2});
    CHECK(p.data()[0] == doctest::Approx(2.5));
    CHECK(p.data()[1] == doctest::Approx(25.0));
    CHECK(mean_all(x).item() == doctest::Approx(13.75));
}

TEST_CASE("cross_entropy_logits matches closed forms") {
    Tensor<double> uniform({2, 4}, 0.0);
    CHECK(cross_entropy_logits(uniform, {0, 3}).item() == doctest::Approx(std::log(4.0)));

    Tensor<double> confident =
        Tensor<double>::from_data({1, 3}, {20.0, 0.0, 0.0});
    CHECK(cross_entropy_logits(confident, {0}).item() == doctest::Approx(0.0).epsilon(1e-6));
    CHECK_THROWS_AS((void)cross_entropy_logits(uniform, {0}), ContractError);
    CHECK_THROWS_AS((void)cross_entropy_logits(uniform, {0, 4}), ContractError);
}

TEST_CASE("linear_matmul applies weight then bias") {
    auto rng = rng_for(109);
    Tensor<double> x = random_uniform<double>({3, 5}, rng);
    Tensor<double> w = random_uniform<double>({5, 2}, rng);
    Tensor<double> b = random_uniform<double>({2}, rng);
    Tensor<double> y = linear_matmul(x, w, &b);
    const auto want = oracle::naive_matmul(std::vector<double>(x.data(), x.data() + 15),
                                           std::vector<double>(w.data(), w.data() + 10), 3, 2, 5);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(y.data()[i * 2 + j] ==
                  doctest::Approx(want[static_cast<size_t>(i * 2 + j)] + b.data()[j]));
}
