#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "lpyolo/qcore.hpp"

using namespace lpyolo;

TEST(RoundHalfEven, Examples) {
    EXPECT_EQ(round_half_even(0.0), 0);
    EXPECT_EQ(round_half_even(2.5), 2);
    EXPECT_EQ(round_half_even(3.5), 4);
    EXPECT_EQ(round_half_even(-1.5), -2);
    EXPECT_EQ(round_half_even(-2.5), -2);
    EXPECT_EQ(round_half_even(127.5), 128);
    EXPECT_EQ(round_half_even(2.4999999), 2);
    EXPECT_EQ(round_half_even(-0.4), 0);
}

TEST(RoundHalfEven, RejectsNonFinite) {
    EXPECT_THROW(round_half_even(std::numeric_limits<double>::quiet_NaN()), QuantError);
    EXPECT_THROW(round_half_even(std::numeric_limits<double>::infinity()), QuantError);
}

TEST(RoundHalfEven, OddSymmetryOffTies) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-1000.0, 1000.0);
    for (int i = 0; i < 10000; ++i) {
        const double x = d(rng);
        if (x - std::floor(x) == 0.5) {
            continue;
        }
        EXPECT_EQ(round_half_even(x), -round_half_even(-x));
    }
}

TEST(QuantParams, Ranges) {
    EXPECT_EQ(signed_params(4, 1.0).min(), -8);
    EXPECT_EQ(signed_params(4, 1.0).max(), 7);
    EXPECT_EQ(unsigned_params(8, 1.0).max(), 255);
    EXPECT_EQ(unsigned_params(1, 1.0).max(), 1);
    EXPECT_THROW(signed_params(0, 1.0).validate(), QuantError);
    EXPECT_THROW(signed_params(9, 1.0).validate(), QuantError);
    EXPECT_THROW(signed_params(4, 0.0).validate(), QuantError);
    EXPECT_THROW(signed_params(4, -1.0).validate(), QuantError);
    EXPECT_THROW(signed_params(4, std::numeric_limits<double>::infinity()).validate(), QuantError);
}

TEST(QuantizeScalar, Examples) {
    const auto p = signed_params(4, 0.5);
    EXPECT_EQ(quantize_scalar(0.0, p), 0);
    EXPECT_EQ(quantize_scalar(0.0, unsigned_params(3, 0.1)), 0);
    EXPECT_EQ(quantize_scalar(3.7, p), 7);
    EXPECT_EQ(quantize_scalar(-100.0, p), -8);
    EXPECT_EQ(quantize_scalar(1e300, p), 7);
    EXPECT_EQ(quantize_scalar(-1e300, unsigned_params(8, 1e-300)), 0);
    EXPECT_THROW(quantize_scalar(1.0, signed_params(4, 0.0)), QuantError);
    EXPECT_THROW(quantize_scalar(std::nan(""), p), QuantError);
}

TEST(DequantizeScalar, Examples) {
    EXPECT_EQ(dequantize_scalar(0, signed_params(4, 0.5)), 0.0);
    EXPECT_EQ(dequantize_scalar(7, signed_params(4, 0.5)), 3.5);
    EXPECT_DOUBLE_EQ(dequantize_scalar(255, unsigned_params(8, 1.0 / 255.0)), 1.0);
    EXPECT_THROW(dequantize_scalar(8, signed_params(4, 0.5)), QuantError);
    EXPECT_THROW(dequantize_scalar(-1, unsigned_params(4, 0.5)), QuantError);
}

TEST(QuantizeTensor, ZeroAndRoundTrip) {
    FloatTensor zeros(Shape{2, 3, 4});
    auto q = quantize_tensor(zeros, signed_params(5, 0.25));
    for (auto v : q.data) {
        EXPECT_EQ(v, 0);
    }
    EXPECT_EQ(q.shape, zeros.shape);

    std::mt19937_64 rng(11);
    for (int bits = 1; bits <= 8; ++bits) {
        for (bool sgn : {false, true}) {
            if (sgn && bits < 2) {
                continue;
            }
            const QuantParams p{bits, sgn, 0.037};
            QuantTensor t(Shape{3, 3, 2}, p);
            for (auto& v : t.data) {
                v = static_cast<std::int32_t>(p.min() + static_cast<std::int64_t>(rng() % (p.max() - p.min() + 1)));
            }
            check_tensor(t);
            EXPECT_EQ(quantize_tensor(dequantize_tensor(t), p), t);
        }
    }
}

// Property sweep: in-range error bound, monotonicity, sign symmetry.
TEST(QuantizeProperties, RandomSweep) {
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> scale_d(1e-3, 2.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        const int bits = 2 + static_cast<int>(rng() % 7);
        const QuantParams p{bits, true, scale_d(rng)};
        const double lo = static_cast<double>(p.min()) * p.scale;
        const double hi = static_cast<double>(p.max()) * p.scale;
        const double x = lo + (hi - lo) * unit(rng);
        const double y = lo + (hi - lo) * unit(rng);

        const double back = dequantize_scalar(quantize_scalar(x, p), p);
        EXPECT_LE(std::fabs(back - x), p.scale / 2 + 1e-12);

        if (x <= y) {
            EXPECT_LE(quantize_scalar(x, p), quantize_scalar(y, p));
        }

        const double level = x / p.scale;
        const bool tie = level - std::floor(level) == 0.5;
        const bool saturates = std::fabs(level) > static_cast<double>(p.max());
        if (!tie && !saturates) {
            EXPECT_EQ(quantize_scalar(-x, p), -quantize_scalar(x, p));
        }
    }
}

TEST(CheckTensor, RejectsBadTensors) {
    QuantTensor t(Shape{1, 1, 2}, unsigned_params(2, 1.0));
    t.data[0] = 4;
    EXPECT_THROW(check_tensor(t), QuantError);
    t.data[0] = 3;
    EXPECT_NO_THROW(check_tensor(t));
    t.data.push_back(0);
    EXPECT_THROW(check_tensor(t), QuantError);
}
