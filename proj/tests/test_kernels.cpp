#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lpyolo/kernels.hpp"
#include "oracles.hpp"

using namespace lpyolo;

TEST(Sigmoid, Basics) {
    EXPECT_EQ(sigmoid(0.0), 0.5);
    for (double x = -10; x <= 10; x += 0.37) {
        EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-15);
        EXPECT_NEAR(sigmoid(x), (1.0 + std::tanh(x / 2)) / 2, 1e-12);
        EXPECT_GT(sigmoid(x), 0.0);
        EXPECT_LT(sigmoid(x), 1.0);
    }
}

TEST(RescaledHardtanh, ClampPoints) {
    EXPECT_EQ(rescaled_hardtanh(0.0), 0.5);
    EXPECT_EQ(rescaled_hardtanh(2.0), 1.0);
    EXPECT_EQ(rescaled_hardtanh(7.0), 1.0);
    EXPECT_EQ(rescaled_hardtanh(-2.0), 0.0);
    EXPECT_EQ(rescaled_hardtanh(-3.5), 0.0);
    EXPECT_EQ(rescaled_hardtanh(1.0), 0.75);
    for (double x = -5; x <= 5; x += 0.1) {
        EXPECT_DOUBLE_EQ(rescaled_hardtanh(x), (1.0 + std::clamp(x / 2, -1.0, 1.0)) / 2);
    }
}

TEST(RescaledHardtanh, DistanceToSigmoid) {
    // Dense sweep; the gap peaks at the clamp knees x = ±2 with 1 - sigmoid(2).
    double worst = 0.0, at = 0.0;
    for (int i = 0; i <= 200000; ++i) {
        const double x = -10.0 + 20.0 * i / 200000.0;
        const double d = std::fabs(rescaled_hardtanh(x) - sigmoid(x));
        if (d > worst) {
            worst = d;
            at = x;
        }
    }
    EXPECT_NEAR(worst, 0.1192, 1e-4);
    EXPECT_NEAR(std::fabs(at), 2.0, 1e-3);
    EXPECT_LE(worst, 0.12);
}

TEST(Conv2dAcc, IdentityKernel) {
    std::mt19937_64 rng(1);
    auto in = oracle::random_tensor(rng, Shape{4, 5, 1}, unsigned_params(8, 1.0));
    ConvWeights w;
    w.in_channels = 1;
    w.out_channels = 1;
    w.kernel = 1;
    w.weights = {1};
    w.w_params = signed_params(2, 1.0);
    auto acc = conv2d_acc(in, w);
    ASSERT_EQ(acc.shape, in.shape);
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        EXPECT_EQ(acc.data[i], in.data[i]);
    }
}

TEST(Conv2dAcc, ZeroInputGivesBias) {
    QuantTensor in(Shape{3, 3, 2}, unsigned_params(4, 1.0));
    std::mt19937_64 rng(2);
    auto w = oracle::random_weights(rng, 2, 3, 3, signed_params(4, 1.0), true);
    auto acc = conv2d_acc(in, w);
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) {
            for (int o = 0; o < 3; ++o) {
                EXPECT_EQ(acc.at(y, x, o), w.bias[o]);
            }
        }
    }
}

TEST(Conv2dAcc, MatchesNaiveReference) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto in = oracle::random_tensor(rng, Shape{5, 5, 2}, unsigned_params(8, 1.0));
        auto w = oracle::random_weights(rng, 2, 3, 3, signed_params(8, 1.0), trial % 2 == 0);
        auto acc = conv2d_acc(in, w);
        auto ref = oracle::naive_conv(in, w);
        ASSERT_EQ(acc.data.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            ASSERT_EQ(acc.data[i], ref[i]);
        }
    }
}

TEST(Conv2dAcc, ChannelMismatch) {
    QuantTensor in(Shape{3, 3, 2}, unsigned_params(4, 1.0));
    std::mt19937_64 rng(4);
    auto w = oracle::random_weights(rng, 3, 2, 3, signed_params(4, 1.0), false);
    EXPECT_THROW(conv2d_acc(in, w), KernelError);
}

TEST(Conv2dAcc, RejectsInvalidWeights) {
    QuantTensor in(Shape{3, 3, 1}, unsigned_params(4, 1.0));
    ConvWeights w;
    w.in_channels = 1;
    w.out_channels = 1;
    w.kernel = 5;
    w.weights.assign(25, 0);
    w.w_params = signed_params(4, 1.0);
    EXPECT_THROW(conv2d_acc(in, w), KernelError);
    w.kernel = 1;
    w.weights = {8};
    EXPECT_THROW(conv2d_acc(in, w), KernelError);
}

TEST(Conv2dAcc, Linearity) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = oracle::random_tensor(rng, Shape{4, 4, 3}, unsigned_params(6, 1.0));
        auto b = oracle::random_tensor(rng, Shape{4, 4, 3}, unsigned_params(6, 1.0));
        QuantTensor sum(a.shape, unsigned_params(7, 1.0));
        for (std::size_t i = 0; i < sum.data.size(); ++i) {
            sum.data[i] = a.data[i] + b.data[i];
        }
        auto w = oracle::random_weights(rng, 3, 2, 3, signed_params(5, 1.0), true);
        auto ra = conv2d_acc(a, w), rb = conv2d_acc(b, w), rs = conv2d_acc(sum, w);
        for (std::size_t i = 0; i < rs.data.size(); ++i) {
            const int o = static_cast<int>(i % 2);
            EXPECT_EQ(rs.data[i], ra.data[i] + rb.data[i] - w.bias[o]);
        }
    }
}

TEST(Requantize, Examples) {
    AccTensor acc(Shape{1, 1, 3});
    acc.data = {0, -5, -1000000};
    RequantSpec relu{0.1, 0.2, 0.05, 4, Activation::relu};
    auto q = requantize(acc, relu);
    EXPECT_EQ(q.data[0], 0);
    EXPECT_EQ(q.data[1], 0);
    EXPECT_EQ(q.data[2], 0);
    EXPECT_EQ(q.params, unsigned_params(4, 0.05));

    RequantSpec ht{0.1, 0.2, hardtanh_out_scale(8), 8, Activation::rescaled_hardtanh};
    AccTensor zero(Shape{1, 1, 1});
    EXPECT_EQ(requantize(zero, ht).data[0], 128);  // 127.5 ties to even
}

TEST(Requantize, ReluSaturatesAndRounds) {
    AccTensor acc(Shape{1, 1, 4});
    // M = 0.5: 3 -> 1.5 -> 2, 5 -> 2.5 -> 2, 7 -> 3.5 -> 4, 100 -> clamp 15.
    acc.data = {3, 5, 7, 100};
    RequantSpec spec{0.5, 1.0, 1.0, 4, Activation::relu};
    auto q = requantize(acc, spec);
    EXPECT_EQ(q.data, (std::vector<std::int32_t>{2, 2, 4, 15}));
}

TEST(Requantize, HardtanhSpansFullRange) {
    // real = acc * 0.01; clamp knees at real = ±2.
    RequantSpec spec{0.1, 0.1, hardtanh_out_scale(8), 8, Activation::rescaled_hardtanh};
    AccTensor acc(Shape{1, 1, 3});
    acc.data = {200, -200, 100};
    auto q = requantize(acc, spec);
    EXPECT_EQ(q.data[0], 255);
    EXPECT_EQ(q.data[1], 0);
    EXPECT_EQ(q.data[2], 191);  // 0.75 * 255 = 191.25
}

TEST(Requantize, SpecValidation) {
    AccTensor acc(Shape{1, 1, 1});
    EXPECT_THROW(requantize(acc, RequantSpec{0.0, 1.0, 1.0, 4, Activation::relu}), KernelError);
    EXPECT_THROW(requantize(acc, RequantSpec{1.0, 1.0, 1.0, 9, Activation::relu}), KernelError);
    EXPECT_THROW(requantize(acc, RequantSpec{1.0, 1.0, 0.5, 8, Activation::rescaled_hardtanh}), KernelError);
}

TEST(Requantize, MatchesFakeQuantOracle) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> sd(0.001, 0.5);
    for (int trial = 0; trial < 200; ++trial) {
        const int abits = 1 + static_cast<int>(rng() % 8);
        const int wbits = 2 + static_cast<int>(rng() % 7);
        const int in_bits = 1 + static_cast<int>(rng() % 8);
        const Activation act = trial % 3 == 0 ? Activation::rescaled_hardtanh : Activation::relu;
        auto in = oracle::random_tensor(rng, Shape{1 + static_cast<int>(rng() % 6), 1 + static_cast<int>(rng() % 6),
                                                   1 + static_cast<int>(rng() % 4)},
                                        unsigned_params(in_bits, sd(rng)));
        auto w = oracle::random_weights(rng, in.shape.c, 1 + static_cast<int>(rng() % 4), trial % 4 == 0 ? 1 : 3,
                                        signed_params(wbits, sd(rng)), trial % 2 == 0);
        RequantSpec spec{in.params.scale, w.w_params.scale,
                         act == Activation::relu ? sd(rng) : hardtanh_out_scale(abits), abits, act};
        auto q = requantize(conv2d_acc(in, w), spec);
        EXPECT_EQ(q.data, oracle::fake_quant_layer(in, w, spec)) << "trial " << trial;
    }
}

TEST(Maxpool, Stride2) {
    QuantTensor t(Shape{2, 2, 1}, unsigned_params(4, 1.0));
    t.data = {1, 2, 3, 4};
    auto p = maxpool(t, 2);
    EXPECT_EQ(p.shape, (Shape{1, 1, 1}));
    EXPECT_EQ(p.data[0], 4);
    EXPECT_EQ(p.params, t.params);
}

TEST(Maxpool, ConstantTensor) {
    QuantTensor t(Shape{6, 4, 3}, unsigned_params(4, 1.0));
    std::fill(t.data.begin(), t.data.end(), 9);
    for (int stride : {1, 2}) {
        auto p = maxpool(t, stride);
        for (auto v : p.data) {
            EXPECT_EQ(v, 9);
        }
    }
    EXPECT_EQ(maxpool(t, 2).shape, (Shape{3, 2, 3}));
}

TEST(Maxpool, Stride1PreservesShape) {
    QuantTensor t(Shape{13, 13, 104}, unsigned_params(4, 0.1));
    auto p = maxpool(t, 1);
    EXPECT_EQ(p.shape, (Shape{13, 13, 104}));
}

TEST(Maxpool, Stride1PaddingNeverWins) {
    // Signed input whose edge values are all negative: padding with the range
    // minimum must leave edge outputs equal to the in-bounds max.
    QuantTensor t(Shape{2, 2, 1}, signed_params(4, 1.0));
    t.data = {-3, -5, -7, -2};
    auto p = maxpool(t, 1);
    EXPECT_EQ(p.data, (std::vector<std::int32_t>{-2, -2, -2, -2}));
}

TEST(Maxpool, Errors) {
    QuantTensor t(Shape{3, 4, 1}, unsigned_params(4, 1.0));
    EXPECT_THROW(maxpool(t, 2), KernelError);
    EXPECT_THROW(maxpool(t, 3), KernelError);
}

TEST(Maxpool, CommutesWithRequantize) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        AccTensor acc(Shape{4, 6, 3});
        for (auto& v : acc.data) {
            v = static_cast<std::int32_t>(static_cast<std::int64_t>(rng() % 20001) - 10000);
        }
        RequantSpec spec{0.01, 0.02, 0.5, 5, Activation::relu};
        RequantSpec ht{0.01, 0.02, hardtanh_out_scale(8), 8, Activation::rescaled_hardtanh};
        for (const auto& s : {spec, ht}) {
            // Stride-2 pooling only compares values, so the accumulator can ride
            // in a QuantTensor whose params are never consulted.
            QuantTensor wide(acc.shape, signed_params(8, 1.0));
            wide.data = acc.data;
            auto p = maxpool(wide, 2);
            AccTensor pooled_acc(p.shape);
            pooled_acc.data = p.data;
            EXPECT_EQ(requantize(pooled_acc, s), maxpool(requantize(acc, s), 2));
        }
    }
}
