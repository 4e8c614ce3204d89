#pragma once

// Layer compute: integer same-padded convolution, requantizing activations,
// 2x2 max pooling, and the sigmoid / rescaled-HardTanh pair.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "lpyolo/qcore.hpp"

namespace lpyolo {

class KernelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Activation { relu, rescaled_hardtanh };

inline const char* to_string(Activation a) {
    return a == Activation::relu ? "relu" : "rescaled_hardtanh";
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// (1 + hardtanh(x/2)) / 2, i.e. sigmoid's tanh form with tanh swapped for
// hardtanh.
inline double rescaled_hardtanh(double x) { return std::clamp(x / 4.0 + 0.5, 0.0, 1.0); }

struct ConvWeights {
    int out_channels = 0;
    int in_channels = 0;
    int kernel = 3;
    std::vector<std::int32_t> weights;  // [out][in][kh][kw]
    QuantParams w_params{8, true, 1.0};
    std::vector<std::int32_t> bias;  // empty means no bias; else one per output channel

    bool has_bias() const { return !bias.empty(); }

    std::size_t weight_count() const {
        return static_cast<std::size_t>(out_channels) * static_cast<std::size_t>(in_channels) *
               static_cast<std::size_t>(kernel) * static_cast<std::size_t>(kernel);
    }

    std::int32_t at(int o, int i, int ky, int kx) const {
        return weights[((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx];
    }

    void validate() const {
        w_params.validate();
        if (!w_params.is_signed) {
            throw KernelError("conv weights must be signed");
        }
        if (kernel != 1 && kernel != 3) {
            throw KernelError("kernel size " + std::to_string(kernel) + " not in {1,3}");
        }
        if (out_channels <= 0 || in_channels <= 0) {
            throw KernelError("conv channel counts must be positive");
        }
        if (weights.size() != weight_count()) {
            throw KernelError("weight count " + std::to_string(weights.size()) + " != " +
                              std::to_string(weight_count()));
        }
        for (auto w : weights) {
            if (!w_params.contains(w)) {
                throw KernelError("weight " + std::to_string(w) + " outside " +
                                  std::to_string(w_params.bits) + "-bit signed range");
            }
        }
        if (has_bias() && bias.size() != static_cast<std::size_t>(out_channels)) {
            throw KernelError("bias length must equal out_channels");
        }
    }

    bool operator==(const ConvWeights&) const = default;
};

/// 32-bit signed accumulator tensor, HWC.
struct AccTensor {
    Shape shape;
    std::vector<std::int32_t> data;

    AccTensor() = default;
    explicit AccTensor(Shape s) : shape(s), data(s.size(), 0) {}

    std::int32_t at(int y, int x, int ch) const { return data[shape.index(y, x, ch)]; }
};

inline double hardtanh_out_scale(int bits) { return 1.0 / static_cast<double>((1 << bits) - 1); }

struct RequantSpec {
    double in_scale = 1.0;
    double w_scale = 1.0;
    double out_scale = 1.0;
    int out_bits = 8;
    Activation activation = Activation::relu;

    double multiplier() const { return in_scale * w_scale / out_scale; }

    QuantParams out_params() const { return unsigned_params(out_bits, out_scale); }

    void validate() const {
        for (double s : {in_scale, w_scale, out_scale}) {
            if (!(s > 0.0) || !std::isfinite(s)) {
                throw KernelError("requant scales must be positive and finite");
            }
        }
        if (out_bits < 1 || out_bits > 8) {
            throw KernelError("requant out_bits outside 1..8");
        }
        const double m = multiplier();
        if (!(m > 0.0) || !std::isfinite(m)) {
            throw KernelError("requant multiplier is not finite and positive");
        }
        if (activation == Activation::rescaled_hardtanh && out_scale != hardtanh_out_scale(out_bits)) {
            throw KernelError("hardtanh output scale must be 1/(2^bits-1)");
        }
    }
};

/// Stride-1 convolution into a 32-bit accumulator. With pad_same the output
/// keeps the input's spatial size and out-of-bounds taps read integer 0.
inline AccTensor conv2d_acc(const QuantTensor& input, const ConvWeights& w, bool pad_same = true) {
    w.validate();
    if (input.shape.c != w.in_channels) {
        throw KernelError("conv input has " + std::to_string(input.shape.c) + " channels, weights expect " +
                          std::to_string(w.in_channels));
    }
    const int k = w.kernel;
    const int pad = pad_same ? k / 2 : 0;
    const int oh = pad_same ? input.shape.h : input.shape.h - k + 1;
    const int ow = pad_same ? input.shape.w : input.shape.w - k + 1;
    if (oh <= 0 || ow <= 0) {
        throw KernelError("conv input smaller than kernel");
    }
    const int cin = w.in_channels;
    const int cout = w.out_channels;

    // Regroup weights as [ky][kx][out][in] so the channel dot product is contiguous.
    std::vector<std::int32_t> taps(w.weights.size());
    for (int o = 0; o < cout; ++o) {
        for (int i = 0; i < cin; ++i) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    taps[((static_cast<std::size_t>(ky) * k + kx) * cout + o) * cin + i] = w.at(o, i, ky, kx);
                }
            }
        }
    }

    AccTensor out(Shape{oh, ow, cout});
    std::vector<std::int64_t> acc(static_cast<std::size_t>(cout));
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int o = 0; o < cout; ++o) {
                acc[o] = w.has_bias() ? w.bias[o] : 0;
            }
            for (int ky = 0; ky < k; ++ky) {
                const int iy = y + ky - pad;
                if (iy < 0 || iy >= input.shape.h) {
                    continue;
                }
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = x + kx - pad;
                    if (ix < 0 || ix >= input.shape.w) {
                        continue;
                    }
                    const std::int32_t* px = &input.data[input.shape.index(iy, ix, 0)];
                    const std::int32_t* tap = &taps[(static_cast<std::size_t>(ky) * k + kx) * cout * cin];
                    for (int o = 0; o < cout; ++o) {
                        const std::int32_t* wrow = tap + static_cast<std::size_t>(o) * cin;
                        std::int64_t s = 0;
                        for (int i = 0; i < cin; ++i) {
                            s += static_cast<std::int64_t>(px[i]) * wrow[i];
                        }
                        acc[o] += s;
                    }
                }
            }
            std::int32_t* dst = &out.data[out.shape.index(y, x, 0)];
            for (int o = 0; o < cout; ++o) {
                if (acc[o] > std::numeric_limits<std::int32_t>::max() ||
                    acc[o] < std::numeric_limits<std::int32_t>::min()) {
                    throw KernelError("conv accumulator overflowed 32 bits");
                }
                dst[o] = static_cast<std::int32_t>(acc[o]);
            }
        }
    }
    return out;
}

/// Scalar requantization shared by the tensor op. relu uses the single
/// multiplier M = s_in*s_w/s_out; hardtanh evaluates
/// (acc*s_in*s_w)/4/s_out + 0.5/s_out in exactly that order.
inline std::int32_t requantize_value(std::int32_t acc, const RequantSpec& spec, double m) {
    const QuantParams out = spec.out_params();
    double r;
    if (spec.activation == Activation::relu) {
        r = static_cast<double>(acc) * m;
    } else {
        r = (static_cast<double>(acc) * spec.in_scale * spec.w_scale) / 4.0 / spec.out_scale + 0.5 / spec.out_scale;
    }
    return static_cast<std::int32_t>(round_clamp(r, out));
}

inline QuantTensor requantize(const AccTensor& acc, const RequantSpec& spec) {
    spec.validate();
    const double m = spec.multiplier();
    QuantTensor out(acc.shape, spec.out_params());
    for (std::size_t i = 0; i < acc.data.size(); ++i) {
        out.data[i] = requantize_value(acc.data[i], spec, m);
    }
    return out;
}

/// 2x2 max pooling. Stride 2 halves both spatial dims; stride 1 keeps them,
/// treating taps past the bottom/right edge as the range minimum.
inline QuantTensor maxpool(const QuantTensor& input, int stride) {
    if (stride != 1 && stride != 2) {
        throw KernelError("maxpool stride must be 1 or 2");
    }
    const Shape& s = input.shape;
    if (stride == 2 && (s.h % 2 != 0 || s.w % 2 != 0)) {
        throw KernelError("maxpool stride 2 needs even spatial dims, got " + s.str());
    }
    const Shape os = stride == 2 ? Shape{s.h / 2, s.w / 2, s.c} : s;
    QuantTensor out(os, input.params);
    for (int y = 0; y < os.h; ++y) {
        for (int x = 0; x < os.w; ++x) {
            for (int ch = 0; ch < s.c; ++ch) {
                // The top-left tap is always in bounds; skipped taps act as the range minimum.
                std::int32_t best = input.at(y * stride, x * stride, ch);
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const int iy = y * stride + dy;
                        const int ix = x * stride + dx;
                        if (iy < s.h && ix < s.w) {
                            best = std::max(best, input.at(iy, ix, ch));
                        }
                    }
                }
                out.at(y, x, ch) = best;
            }
        }
    }
    return out;
}

}  // namespace lpyolo
