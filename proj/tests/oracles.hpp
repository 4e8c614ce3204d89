#pragma once

// Independent reference implementations used only by the tests. They share
// no code paths with the library beyond the data types and the scalar
// rounding primitive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lpyolo/kernels.hpp"
#include "lpyolo/postprocess.hpp"
#include "lpyolo/qcore.hpp"

namespace oracle {

using namespace lpyolo;

/// Plain nested-loop convolution, same padding, 64-bit accumulation.
inline std::vector<std::int64_t> naive_conv(const QuantTensor& in, const ConvWeights& w) {
    const int k = w.kernel;
    const int pad = k / 2;
    std::vector<std::int64_t> out(static_cast<std::size_t>(in.shape.h) * in.shape.w * w.out_channels, 0);
    for (int y = 0; y < in.shape.h; ++y) {
        for (int x = 0; x < in.shape.w; ++x) {
            for (int o = 0; o < w.out_channels; ++o) {
                std::int64_t acc = w.has_bias() ? w.bias[o] : 0;
                for (int i = 0; i < w.in_channels; ++i) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = y - pad + ky;
                            const int ix = x - pad + kx;
                            std::int64_t v = 0;
                            if (iy >= 0 && iy < in.shape.h && ix >= 0 && ix < in.shape.w) {
                                v = in.data[(static_cast<std::size_t>(iy) * in.shape.w + ix) * in.shape.c + i];
                            }
                            const std::int64_t wt =
                                w.weights[((static_cast<std::size_t>(o) * w.in_channels + i) * k + ky) * k + kx];
                            acc += v * wt;
                        }
                    }
                }
                out[(static_cast<std::size_t>(y) * in.shape.w + x) * w.out_channels + o] = acc;
            }
        }
    }
    return out;
}

/// Fake-quant path for one layer: dequantize input and weights to reals,
/// recover the integer grid, convolve in double, apply the activation with
/// the same multiplier ordering, quantize.
inline std::vector<std::int32_t> fake_quant_layer(const QuantTensor& in, const ConvWeights& w,
                                                  const RequantSpec& spec) {
    std::vector<double> x_real(in.data.size());
    for (std::size_t i = 0; i < x_real.size(); ++i) {
        x_real[i] = static_cast<double>(in.data[i]) * in.params.scale;
    }
    std::vector<double> w_real(w.weights.size());
    for (std::size_t i = 0; i < w_real.size(); ++i) {
        w_real[i] = static_cast<double>(w.weights[i]) * w.w_params.scale;
    }
    const int k = w.kernel;
    const int pad = k / 2;
    const double out_max = static_cast<double>((1 << spec.out_bits) - 1);
    std::vector<std::int32_t> out(static_cast<std::size_t>(in.shape.h) * in.shape.w * w.out_channels);
    for (int y = 0; y < in.shape.h; ++y) {
        for (int x = 0; x < in.shape.w; ++x) {
            for (int o = 0; o < w.out_channels; ++o) {
                double acc = w.has_bias() ? static_cast<double>(w.bias[o]) : 0.0;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const int iy = y - pad + ky;
                        const int ix = x - pad + kx;
                        if (iy < 0 || iy >= in.shape.h || ix < 0 || ix >= in.shape.w) {
                            continue;
                        }
                        for (int i = 0; i < w.in_channels; ++i) {
                            const double xv = std::nearbyint(
                                x_real[(static_cast<std::size_t>(iy) * in.shape.w + ix) * in.shape.c + i] /
                                in.params.scale);
                            const double wv = std::nearbyint(
                                w_real[((static_cast<std::size_t>(o) * w.in_channels + i) * k + ky) * k + kx] /
                                w.w_params.scale);
                            acc += xv * wv;
                        }
                    }
                }
                double r;
                if (spec.activation == Activation::relu) {
                    r = acc * (spec.in_scale * spec.w_scale / spec.out_scale);
                } else {
                    r = (acc * spec.in_scale * spec.w_scale) / 4.0 / spec.out_scale + 0.5 / spec.out_scale;
                }
                double q = std::nearbyint(r);  // default FE_TONEAREST: ties to even
                q = std::min(std::max(q, 0.0), out_max);
                out[(static_cast<std::size_t>(y) * in.shape.w + x) * w.out_channels + o] =
                    static_cast<std::int32_t>(q);
            }
        }
    }
    return out;
}

inline double score_of(const Detection& d) { return d.objectness * d.class_score; }

/// True when a should be visited before b in greedy suppression.
inline bool higher_priority(const Detection& a, const Detection& b) {
    const double sa = score_of(a), sb = score_of(b);
    if (sa != sb) return sa > sb;
    if (a.cx != b.cx) return a.cx < b.cx;
    if (a.cy != b.cy) return a.cy < b.cy;
    if (a.w != b.w) return a.w < b.w;
    if (a.h != b.h) return a.h < b.h;
    return a.objectness < b.objectness;
}

inline double box_iou(const Detection& a, const Detection& b) {
    const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2, ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2, by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
    const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Exhaustive greedy NMS: visit boxes by rank (counted pairwise, no sort);
/// a box survives iff no already-surviving box overlaps it above threshold.
inline std::vector<Detection> exhaustive_nms(const std::vector<Detection>& dets, double thr) {
    const std::size_t n = dets.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t rank = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && (higher_priority(dets[j], dets[i]) ||
                           (!higher_priority(dets[i], dets[j]) && j < i))) {
                ++rank;
            }
        }
        order[rank] = i;
    }
    std::vector<Detection> kept;
    for (std::size_t r = 0; r < n; ++r) {
        const Detection& d = dets[order[r]];
        bool suppressed = false;
        for (const auto& k : kept) {
            if (box_iou(k, d) > thr) {
                suppressed = true;
            }
        }
        if (!suppressed) {
            kept.push_back(d);
        }
    }
    return kept;
}

inline QuantTensor random_tensor(std::mt19937_64& rng, Shape s, QuantParams p) {
    QuantTensor t(s, p);
    const auto span = static_cast<std::uint64_t>(p.max() - p.min() + 1);
    for (auto& v : t.data) {
        v = static_cast<std::int32_t>(p.min() + static_cast<std::int64_t>(rng() % span));
    }
    return t;
}

inline ConvWeights random_weights(std::mt19937_64& rng, int cin, int cout, int k, QuantParams p, bool bias) {
    ConvWeights w;
    w.in_channels = cin;
    w.out_channels = cout;
    w.kernel = k;
    w.w_params = p;
    w.weights.resize(w.weight_count());
    const auto span = static_cast<std::uint64_t>(p.max() - p.min() + 1);
    for (auto& v : w.weights) {
        v = static_cast<std::int32_t>(p.min() + static_cast<std::int64_t>(rng() % span));
    }
    if (bias) {
        w.bias.resize(static_cast<std::size_t>(cout));
        for (auto& b : w.bias) {
            b = static_cast<std::int32_t>(static_cast<std::int64_t>(rng() % 2001) - 1000);
        }
    }
    return w;
}

}  // namespace oracle
