#pragma once

// The LPYOLO layer graph: 10 quantized convolutions interleaved with 6 max
// pools, 416x416x3 -> 13x13x18. Owns the mWnA bit-width configuration, the
// LPYQ weight file, and the integer / float-reference forward passes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lpyolo/bytes.hpp"
#include "lpyolo/kernels.hpp"
#include "lpyolo/qcore.hpp"

namespace lpyolo {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kInputSize = 416;
inline constexpr int kGridSize = 13;
inline constexpr int kNumAnchors = 3;
inline constexpr int kValuesPerAnchor = 6;
inline constexpr int kOutputChannels = kNumAnchors * kValuesPerAnchor;
inline constexpr int kNumConvLayers = 10;
inline constexpr int kFirstLastBits = 8;
inline constexpr double kPixelScale = 1.0 / 255.0;

struct Anchor {
    double w = 0.0;
    double h = 0.0;
    bool operator==(const Anchor&) const = default;
};

/// Placeholder anchors in pixels at 416 scale; trained anchors were never published.
inline std::vector<Anchor> default_anchors() { return {{81, 82}, {135, 169}, {344, 319}}; }

struct ModelConfig {
    int weight_bits = 4;  // m in mWnA, applies to convs 2..9
    int act_bits = 4;     // n in mWnA, applies to activations of convs 2..9
    int first_last_bits = kFirstLastBits;
    std::vector<Anchor> anchors = default_anchors();
    int input_size = kInputSize;

    void validate() const {
        if (weight_bits < 2 || weight_bits > 8) {
            throw ModelError("weight_bits " + std::to_string(weight_bits) + " outside 2..8");
        }
        if (act_bits < 1 || act_bits > 8) {
            throw ModelError("act_bits " + std::to_string(act_bits) + " outside 1..8");
        }
        if (first_last_bits != kFirstLastBits) {
            throw ModelError("first/last layer bit width is fixed at 8");
        }
        if (input_size != kInputSize) {
            throw ModelError("input size is fixed at 416");
        }
        if (anchors.size() != kNumAnchors) {
            throw ModelError("expected exactly 3 anchors, got " + std::to_string(anchors.size()));
        }
        for (const auto& a : anchors) {
            if (!(a.w > 0.0 && a.w <= kInputSize && a.h > 0.0 && a.h <= kInputSize)) {
                throw ModelError("anchor dimensions must lie in (0, 416]");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Static graph

enum class LayerKind { conv, maxpool };

struct LayerSpec {
    LayerKind kind;
    Shape in;
    Shape out;
    int kernel;
    int stride;
    int conv_index;  // 1-based conv number, 0 for pools
};

inline const std::array<LayerSpec, 16>& layer_table() {
    static const std::array<LayerSpec, 16> table = {{
        {LayerKind::conv, {416, 416, 3}, {416, 416, 8}, 3, 1, 1},
        {LayerKind::maxpool, {416, 416, 8}, {208, 208, 8}, 2, 2, 0},
        {LayerKind::conv, {208, 208, 8}, {208, 208, 8}, 3, 1, 2},
        {LayerKind::maxpool, {208, 208, 8}, {104, 104, 8}, 2, 2, 0},
        {LayerKind::conv, {104, 104, 8}, {104, 104, 16}, 3, 1, 3},
        {LayerKind::maxpool, {104, 104, 16}, {52, 52, 16}, 2, 2, 0},
        {LayerKind::conv, {52, 52, 16}, {52, 52, 32}, 3, 1, 4},
        {LayerKind::maxpool, {52, 52, 32}, {26, 26, 32}, 2, 2, 0},
        {LayerKind::conv, {26, 26, 32}, {26, 26, 56}, 3, 1, 5},
        {LayerKind::maxpool, {26, 26, 56}, {13, 13, 56}, 2, 2, 0},
        {LayerKind::conv, {13, 13, 56}, {13, 13, 104}, 3, 1, 6},
        // Listed with stride 2 but shape-preserving; run as stride 1 with bottom/right padding.
        {LayerKind::maxpool, {13, 13, 104}, {13, 13, 104}, 2, 1, 0},
        {LayerKind::conv, {13, 13, 104}, {13, 13, 208}, 3, 1, 7},
        {LayerKind::conv, {13, 13, 208}, {13, 13, 56}, 1, 1, 8},
        {LayerKind::conv, {13, 13, 56}, {13, 13, 104}, 3, 1, 9},
        {LayerKind::conv, {13, 13, 104}, {13, 13, 18}, 3, 1, 10},
    }};
    return table;
}

inline const LayerSpec& conv_spec(int conv_index) {
    for (const auto& l : layer_table()) {
        if (l.conv_index == conv_index) {
            return l;
        }
    }
    throw ModelError("no conv layer " + std::to_string(conv_index));
}

/// Output shape a layer produces from `in`, derived from kernel semantics
/// rather than read back from the table.
inline Shape propagate_shape(const LayerSpec& layer, const Shape& in) {
    if (layer.kind == LayerKind::conv) {
        return {in.h, in.w, layer.out.c};
    }
    if (layer.stride == 2) {
        return {in.h / 2, in.w / 2, in.c};
    }
    return in;
}

/// Walks the graph from 416x416x3 and checks every layer's input and output
/// against the table. Returns the final shape.
inline Shape check_shape_chain() {
    Shape cur{kInputSize, kInputSize, 3};
    int index = 0;
    for (const auto& layer : layer_table()) {
        ++index;
        if (!(layer.in == cur)) {
            throw ModelError("layer " + std::to_string(index) + ": input " + layer.in.str() + " != " + cur.str());
        }
        cur = propagate_shape(layer, cur);
        if (!(layer.out == cur)) {
            throw ModelError("layer " + std::to_string(index) + ": output " + layer.out.str() + " != " + cur.str());
        }
    }
    if (!(cur == Shape{kGridSize, kGridSize, kOutputChannels})) {
        throw ModelError("graph does not end at 13x13x18");
    }
    return cur;
}

inline int conv_weight_bits(int conv_index, int weight_bits) {
    return (conv_index == 1 || conv_index == kNumConvLayers) ? kFirstLastBits : weight_bits;
}

inline int conv_act_bits(int conv_index, int act_bits) {
    return (conv_index == 1 || conv_index == kNumConvLayers) ? kFirstLastBits : act_bits;
}

inline Activation conv_activation(int conv_index) {
    return conv_index == kNumConvLayers ? Activation::rescaled_hardtanh : Activation::relu;
}

/// Σ out·in·k² over the ten convolutions.
inline std::int64_t total_conv_parameters() {
    std::int64_t total = 0;
    for (const auto& l : layer_table()) {
        if (l.kind == LayerKind::conv) {
            total += static_cast<std::int64_t>(l.out.c) * l.in.c * l.kernel * l.kernel;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Weights and model

struct ConvLayer {
    int index = 0;  // 1-based
    ConvWeights weights;
    RequantSpec requant;

    bool operator==(const ConvLayer& o) const {
        return index == o.index && weights == o.weights && requant.in_scale == o.requant.in_scale &&
               requant.w_scale == o.requant.w_scale && requant.out_scale == o.requant.out_scale &&
               requant.out_bits == o.requant.out_bits && requant.activation == o.requant.activation;
    }
};

/// Contents of a weight file: declared bit widths plus the ten conv layers.
struct ModelWeights {
    int weight_bits = 4;
    int act_bits = 4;
    std::vector<ConvLayer> convs;

    bool operator==(const ModelWeights&) const = default;
};

class LpyoloModel {
public:
    const ModelConfig& config() const { return config_; }
    const ModelWeights& weights() const { return weights_; }
    std::span<const ConvLayer> convs() const { return weights_.convs; }
    const ConvLayer& conv(int index) const { return weights_.convs.at(static_cast<std::size_t>(index - 1)); }

    friend LpyoloModel build_model(ModelConfig cfg, ModelWeights weights);

private:
    LpyoloModel(ModelConfig cfg, ModelWeights w) : config_(std::move(cfg)), weights_(std::move(w)) {}

    ModelConfig config_;
    ModelWeights weights_;
};

/// Validates weights against the config and the static graph; errors name the offending conv.
inline LpyoloModel build_model(ModelConfig cfg, ModelWeights weights) {
    cfg.validate();
    check_shape_chain();
    if (weights.weight_bits != cfg.weight_bits || weights.act_bits != cfg.act_bits) {
        throw ModelError("weights declare " + std::to_string(weights.weight_bits) + "W" +
                         std::to_string(weights.act_bits) + "A but config is " + std::to_string(cfg.weight_bits) +
                         "W" + std::to_string(cfg.act_bits) + "A");
    }
    if (weights.convs.size() != kNumConvLayers) {
        throw ModelError("expected 10 conv layers, got " + std::to_string(weights.convs.size()));
    }
    double prev_scale = kPixelScale;
    for (int i = 1; i <= kNumConvLayers; ++i) {
        const ConvLayer& layer = weights.convs[static_cast<std::size_t>(i - 1)];
        const LayerSpec& spec = conv_spec(i);
        const std::string name = "conv " + std::to_string(i) + ": ";
        if (layer.index != i) {
            throw ModelError(name + "layer index " + std::to_string(layer.index) + " out of order");
        }
        const ConvWeights& w = layer.weights;
        if (w.kernel != spec.kernel || w.in_channels != spec.in.c || w.out_channels != spec.out.c) {
            throw ModelError(name + "shape " + std::to_string(w.kernel) + "x" + std::to_string(w.kernel) + " " +
                             std::to_string(w.in_channels) + "->" + std::to_string(w.out_channels) +
                             " does not match the layer graph");
        }
        if (w.w_params.bits != conv_weight_bits(i, cfg.weight_bits)) {
            throw ModelError(name + "weight bit width " + std::to_string(w.w_params.bits) + " expected " +
                             std::to_string(conv_weight_bits(i, cfg.weight_bits)));
        }
        if (layer.requant.out_bits != conv_act_bits(i, cfg.act_bits)) {
            throw ModelError(name + "activation bit width " + std::to_string(layer.requant.out_bits) + " expected " +
                             std::to_string(conv_act_bits(i, cfg.act_bits)));
        }
        if (layer.requant.activation != conv_activation(i)) {
            throw ModelError(name + "wrong activation kind");
        }
        if (layer.requant.w_scale != w.w_params.scale) {
            throw ModelError(name + "weight scale disagrees with requant spec");
        }
        if (layer.requant.in_scale != prev_scale) {
            throw ModelError(name + "input scale does not match previous activation scale");
        }
        try {
            w.validate();
            layer.requant.validate();
        } catch (const std::exception& e) {
            throw ModelError(name + e.what());
        }
        prev_scale = layer.requant.out_scale;
    }
    return LpyoloModel(std::move(cfg), std::move(weights));
}

// ---------------------------------------------------------------------------
// Random fixture weights

struct RandomInitOptions {
    bool biases = true;
};

namespace detail {

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Portable integer draw in [lo, hi]; the std distributions are not
// bit-reproducible across standard library implementations.
inline std::int32_t draw(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return static_cast<std::int32_t>(lo + static_cast<std::int64_t>(rng() % span));
}

inline double draw_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Deterministic in-range weights and scales for a seed. Scales are chosen so
/// activations use a reasonable part of their range; all stored scales are
/// float32-exact so weight files round-trip.
inline LpyoloModel random_init(const ModelConfig& cfg, std::uint64_t seed, RandomInitOptions opts = {}) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ModelWeights mw;
    mw.weight_bits = cfg.weight_bits;
    mw.act_bits = cfg.act_bits;
    double in_scale = kPixelScale;
    int in_bits = 8;
    for (int i = 1; i <= kNumConvLayers; ++i) {
        const LayerSpec& spec = conv_spec(i);
        ConvLayer layer;
        layer.index = i;
        const int wbits = conv_weight_bits(i, cfg.weight_bits);
        const int abits = conv_act_bits(i, cfg.act_bits);
        ConvWeights& w = layer.weights;
        w.kernel = spec.kernel;
        w.in_channels = spec.in.c;
        w.out_channels = spec.out.c;
        w.w_params = signed_params(wbits, 1.0);
        w.weights.resize(w.weight_count());
        for (auto& v : w.weights) {
            v = detail::draw(rng, w.w_params.min(), w.w_params.max());
        }

        const double fan_in = static_cast<double>(spec.kernel * spec.kernel * spec.in.c);
        const double w_rms = std::ldexp(1.0, wbits - 1) / std::sqrt(3.0);
        const double x_rms = static_cast<double>((1 << in_bits) - 1) / 3.0;
        const double acc_std = std::sqrt(fan_in) * w_rms * x_rms;

        if (opts.biases) {
            const auto b = static_cast<std::int64_t>(acc_std / 4.0) + 1;
            w.bias.resize(static_cast<std::size_t>(w.out_channels));
            for (auto& v : w.bias) {
                v = detail::draw(rng, -b, b);
            }
        }

        RequantSpec& rq = layer.requant;
        rq.in_scale = in_scale;
        rq.out_bits = abits;
        rq.activation = conv_activation(i);
        const double jitter = 0.75 + 0.5 * detail::draw_unit(rng);
        if (rq.activation == Activation::relu) {
            w.w_params.scale = detail::to_f32(std::ldexp(1.0, -(wbits - 1)));
            const double amax = static_cast<double>((1 << abits) - 1);
            rq.out_scale = detail::to_f32(in_scale * w.w_params.scale * acc_std * 3.0 * jitter / amax);
        } else {
            // Target pre-activation spread of about ±1.5 around the hardtanh knee.
            w.w_params.scale = detail::to_f32(1.5 * jitter / (acc_std * in_scale));
            rq.out_scale = hardtanh_out_scale(abits);
        }
        rq.w_scale = w.w_params.scale;
        in_scale = rq.out_scale;
        in_bits = abits;
        mw.convs.push_back(std::move(layer));
    }
    return build_model(cfg, std::move(mw));
}

// ---------------------------------------------------------------------------
// Forward passes

inline QuantParams input_params() { return unsigned_params(8, kPixelScale); }

/// Integer forward: 416x416x3 8-bit input -> 13x13x18 8-bit grid at scale 1/255.
inline QuantTensor forward(const LpyoloModel& model, const QuantTensor& input) {
    if (!(input.shape == Shape{kInputSize, kInputSize, 3})) {
        throw ModelError("forward: input shape " + input.shape.str() + " != 416x416x3");
    }
    if (!(input.params == input_params())) {
        throw ModelError("forward: input must be 8-bit unsigned at scale 1/255");
    }
    if (input.data.size() != input.shape.size()) {
        throw ModelError("forward: input data length mismatch");
    }
    QuantTensor cur = input;
    for (const auto& layer : layer_table()) {
        if (layer.kind == LayerKind::conv) {
            const ConvLayer& cl = model.conv(layer.conv_index);
            cur = requantize(conv2d_acc(cur, cl.weights, true), cl.requant);
        } else {
            cur = maxpool(cur, layer.stride);
        }
    }
    return cur;
}

enum class FloatMode { pure_float, fake_quant };

namespace detail {

// Straightforward real-valued same-padded convolution over HWC tensors with
// weights in [out][in][kh][kw] order.
inline FloatTensor conv_real(const FloatTensor& in, const std::vector<double>& w, const std::vector<double>& bias,
                             int cout, int k) {
    const int pad = k / 2;
    const int cin = in.shape.c;
    FloatTensor out(Shape{in.shape.h, in.shape.w, cout});
    for (int y = 0; y < in.shape.h; ++y) {
        for (int x = 0; x < in.shape.w; ++x) {
            for (int o = 0; o < cout; ++o) {
                double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
                for (int i = 0; i < cin; ++i) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = y + ky - pad;
                        if (iy < 0 || iy >= in.shape.h) {
                            continue;
                        }
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = x + kx - pad;
                            if (ix < 0 || ix >= in.shape.w) {
                                continue;
                            }
                            acc += in.at(iy, ix, i) *
                                   w[((static_cast<std::size_t>(o) * cin + i) * k + ky) * k + kx];
                        }
                    }
                }
                out.at(y, x, o) = acc;
            }
        }
    }
    return out;
}

inline FloatTensor maxpool_real(const FloatTensor& in, int stride) {
    const Shape& s = in.shape;
    const Shape os = stride == 2 ? Shape{s.h / 2, s.w / 2, s.c} : s;
    FloatTensor out(os);
    for (int y = 0; y < os.h; ++y) {
        for (int x = 0; x < os.w; ++x) {
            for (int c = 0; c < s.c; ++c) {
                double best = -std::numeric_limits<double>::infinity();
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const int iy = y * stride + dy;
                        const int ix = x * stride + dx;
                        if (iy < s.h && ix < s.w) {
                            best = std::max(best, in.at(iy, ix, c));
                        }
                    }
                }
                out.at(y, x, c) = best;
            }
        }
    }
    return out;
}

}  // namespace detail

/// Float reference passes. pure_float runs real-valued convs with ReLU and a
/// sigmoid head; fake_quant snaps every layer boundary to its integer grid
/// using the same rounding and multiplier order as the integer engine, and
/// uses the rescaled HardTanh head.
inline FloatTensor forward_float(const LpyoloModel& model, const FloatTensor& input, FloatMode mode) {
    if (!(input.shape == Shape{kInputSize, kInputSize, 3})) {
        throw ModelError("forward_float: input shape " + input.shape.str() + " != 416x416x3");
    }
    FloatTensor cur = input;
    if (mode == FloatMode::fake_quant) {
        for (auto& v : cur.data) {
            v = static_cast<double>(round_clamp(v / kPixelScale, input_params())) * kPixelScale;
        }
    }
    for (const auto& layer : layer_table()) {
        if (layer.kind == LayerKind::maxpool) {
            cur = detail::maxpool_real(cur, layer.stride);
            continue;
        }
        const ConvLayer& cl = model.conv(layer.conv_index);
        const RequantSpec& rq = cl.requant;
        const ConvWeights& cw = cl.weights;
        std::vector<double> w(cw.weights.size());
        std::vector<double> b(cw.bias.size());
        if (mode == FloatMode::pure_float) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] = cw.weights[i] * rq.w_scale;
            }
            for (std::size_t i = 0; i < b.size(); ++i) {
                b[i] = cw.bias[i] * rq.in_scale * rq.w_scale;
            }
            cur = detail::conv_real(cur, w, b, cw.out_channels, cw.kernel);
            for (auto& v : cur.data) {
                v = rq.activation == Activation::relu ? std::max(v, 0.0) : sigmoid(v);
            }
            continue;
        }
        // fake_quant: recover integer levels, convolve exactly in double, requantize, dequantize.
        for (auto& v : cur.data) {
            v = static_cast<double>(round_half_even(v / rq.in_scale));
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] = cw.weights[i];
        }
        for (std::size_t i = 0; i < b.size(); ++i) {
            b[i] = cw.bias[i];
        }
        cur = detail::conv_real(cur, w, b, cw.out_channels, cw.kernel);
        const QuantParams out = rq.out_params();
        const double m = rq.in_scale * rq.w_scale / rq.out_scale;
        for (auto& v : cur.data) {
            const double r = rq.activation == Activation::relu
                                 ? v * m
                                 : (v * rq.in_scale * rq.w_scale) / 4.0 / rq.out_scale + 0.5 / rq.out_scale;
            v = static_cast<double>(round_clamp(r, out)) * rq.out_scale;
        }
    }
    return cur;
}

// ---------------------------------------------------------------------------
// LPYQ weight file

enum class WeightFileErrc {
    io,
    bad_magic,
    bad_version,
    truncated,
    bit_width,
    layer_count,
    layer_header,
    value_range,
    trailing_bytes,
};

inline const char* to_string(WeightFileErrc e) {
    switch (e) {
        case WeightFileErrc::io: return "io error";
        case WeightFileErrc::bad_magic: return "bad magic";
        case WeightFileErrc::bad_version: return "unsupported version";
        case WeightFileErrc::truncated: return "truncated";
        case WeightFileErrc::bit_width: return "bit width out of range";
        case WeightFileErrc::layer_count: return "layer count";
        case WeightFileErrc::layer_header: return "bad layer header";
        case WeightFileErrc::value_range: return "value out of range";
        case WeightFileErrc::trailing_bytes: return "trailing bytes";
    }
    return "unknown";
}

class WeightFileError : public std::runtime_error {
public:
    WeightFileError(WeightFileErrc kind, const std::string& detail)
        : std::runtime_error(std::string("weights: ") + lpyolo::to_string(kind) + (detail.empty() ? "" : ": " + detail)),
          kind_(kind) {}
    WeightFileErrc kind() const { return kind_; }

private:
    WeightFileErrc kind_;
};

inline constexpr std::array<char, 4> kWeightMagic = {'L', 'P', 'Y', 'Q'};
inline constexpr std::uint8_t kWeightVersion = 1;

namespace detail {

// The network input and the hardtanh output use exact 1/255-style scales
// which float32 cannot hold; the file stores their float32 image.
inline double canonical_scale(float stored, double exact) {
    return stored == static_cast<float>(exact) ? exact : static_cast<double>(stored);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_weights(const ModelWeights& mw) {
    detail::ByteWriter w;
    for (char c : kWeightMagic) {
        w.u8(static_cast<std::uint8_t>(c));
    }
    w.u8(kWeightVersion);
    w.u8(static_cast<std::uint8_t>(mw.weight_bits));
    w.u8(static_cast<std::uint8_t>(mw.act_bits));
    w.u8(static_cast<std::uint8_t>(mw.convs.size()));
    for (const auto& layer : mw.convs) {
        const ConvWeights& cw = layer.weights;
        w.u8(static_cast<std::uint8_t>(layer.index));
        w.u8(static_cast<std::uint8_t>(cw.kernel));
        w.u16(static_cast<std::uint16_t>(cw.in_channels));
        w.u16(static_cast<std::uint16_t>(cw.out_channels));
        w.f32(static_cast<float>(layer.requant.w_scale));
        w.f32(static_cast<float>(layer.requant.in_scale));
        w.f32(static_cast<float>(layer.requant.out_scale));
        w.u8(cw.has_bias() ? 1 : 0);
        for (auto v : cw.weights) {
            w.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(v)));
        }
        for (auto b : cw.bias) {
            w.i32(b);
        }
    }
    return w.take();
}

inline ModelWeights decode_weights(std::span<const std::uint8_t> bytes) {
    auto on_short = [](std::size_t pos, std::size_t n) {
        throw WeightFileError(WeightFileErrc::truncated,
                              "needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos));
    };
    detail::ByteReader r(bytes, on_short);
    auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kWeightMagic.begin(),
                    [](std::uint8_t a, char b) { return a == static_cast<std::uint8_t>(b); })) {
        throw WeightFileError(WeightFileErrc::bad_magic, "");
    }
    const auto version = r.u8();
    if (version != kWeightVersion) {
        throw WeightFileError(WeightFileErrc::bad_version, "version " + std::to_string(version));
    }
    ModelWeights mw;
    mw.weight_bits = r.u8();
    mw.act_bits = r.u8();
    if (mw.weight_bits < 2 || mw.weight_bits > 8 || mw.act_bits < 1 || mw.act_bits > 8) {
        throw WeightFileError(WeightFileErrc::bit_width, std::to_string(mw.weight_bits) + "W" +
                                                             std::to_string(mw.act_bits) + "A");
    }
    const auto count = r.u8();
    if (count != kNumConvLayers) {
        throw WeightFileError(WeightFileErrc::layer_count, "file declares " + std::to_string(count) + ", need 10");
    }
    for (int i = 1; i <= kNumConvLayers; ++i) {
        ConvLayer layer;
        layer.index = r.u8();
        if (layer.index != i) {
            throw WeightFileError(WeightFileErrc::layer_header,
                                  "expected layer " + std::to_string(i) + ", found " + std::to_string(layer.index));
        }
        ConvWeights& cw = layer.weights;
        cw.kernel = r.u8();
        cw.in_channels = r.u16();
        cw.out_channels = r.u16();
        if ((cw.kernel != 1 && cw.kernel != 3) || cw.in_channels == 0 || cw.out_channels == 0) {
            throw WeightFileError(WeightFileErrc::layer_header, "layer " + std::to_string(i));
        }
        const float w_scale = r.f32();
        const float in_scale = r.f32();
        const float out_scale = r.f32();
        const std::uint8_t bias_flag = r.u8();
        if (bias_flag > 1) {
            throw WeightFileError(WeightFileErrc::layer_header, "layer " + std::to_string(i) + " bias flag");
        }
        const int wbits = conv_weight_bits(i, mw.weight_bits);
        const int abits = conv_act_bits(i, mw.act_bits);
        cw.w_params = signed_params(wbits, w_scale);
        auto raw = r.bytes(cw.weight_count());
        cw.weights.resize(raw.size());
        for (std::size_t k = 0; k < raw.size(); ++k) {
            cw.weights[k] = static_cast<std::int8_t>(raw[k]);
            if (!cw.w_params.contains(cw.weights[k])) {
                throw WeightFileError(WeightFileErrc::value_range,
                                      "layer " + std::to_string(i) + " weight " + std::to_string(cw.weights[k]) +
                                          " exceeds " + std::to_string(wbits) + " bits");
            }
        }
        if (bias_flag == 1) {
            cw.bias.resize(static_cast<std::size_t>(cw.out_channels));
            for (auto& b : cw.bias) {
                b = r.i32();
            }
        }
        RequantSpec& rq = layer.requant;
        rq.w_scale = w_scale;
        rq.in_scale = i == 1 ? detail::canonical_scale(in_scale, kPixelScale) : static_cast<double>(in_scale);
        rq.activation = conv_activation(i);
        rq.out_bits = abits;
        rq.out_scale = rq.activation == Activation::rescaled_hardtanh
                           ? detail::canonical_scale(out_scale, hardtanh_out_scale(abits))
                           : static_cast<double>(out_scale);
        for (double s : {rq.w_scale, rq.in_scale, rq.out_scale}) {
            if (!(s > 0.0) || !std::isfinite(s)) {
                throw WeightFileError(WeightFileErrc::value_range, "layer " + std::to_string(i) + " scale");
            }
        }
        mw.convs.push_back(std::move(layer));
    }
    if (r.remaining() != 0) {
        throw WeightFileError(WeightFileErrc::trailing_bytes, std::to_string(r.remaining()) + " extra bytes");
    }
    return mw;
}

inline void save_weights(const ModelWeights& mw, const std::string& path) {
    try {
        detail::write_file(path, encode_weights(mw));
    } catch (const std::runtime_error& e) {
        throw WeightFileError(WeightFileErrc::io, e.what());
    }
}

inline void save_weights(const LpyoloModel& model, const std::string& path) { save_weights(model.weights(), path); }

inline ModelWeights load_weights(const std::string& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = detail::read_file(path);
    } catch (const std::runtime_error& e) {
        throw WeightFileError(WeightFileErrc::io, e.what());
    }
    return decode_weights(bytes);
}

}  // namespace lpyolo
