#pragma once

// Quantized tensor representation and scalar quantize/dequantize arithmetic.
//
// All quantization in lpyolo is symmetric (zero-point 0), per-tensor, and
// rounds ties-to-even. Integer elements are stored one per int32_t slot
// regardless of bit width.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpyolo {

class QuantError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Shape {
    int h = 0;
    int w = 0;
    int c = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
    }
    std::size_t index(int y, int x, int ch) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)) *
                   static_cast<std::size_t>(c) +
               static_cast<std::size_t>(ch);
    }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
    }
};

struct QuantParams {
    int bits = 8;
    bool is_signed = false;
    double scale = 1.0;

    std::int64_t min() const { return is_signed ? -(std::int64_t{1} << (bits - 1)) : 0; }
    std::int64_t max() const {
        return is_signed ? (std::int64_t{1} << (bits - 1)) - 1 : (std::int64_t{1} << bits) - 1;
    }
    bool contains(std::int64_t q) const { return q >= min() && q <= max(); }

    void validate() const {
        if (bits < 1 || bits > 8) {
            throw QuantError("bit width " + std::to_string(bits) + " outside 1..8");
        }
        if (!(scale > 0.0) || !std::isfinite(scale)) {
            throw QuantError("scale must be positive and finite");
        }
    }

    bool operator==(const QuantParams&) const = default;
};

inline QuantParams unsigned_params(int bits, double scale) { return {bits, false, scale}; }
inline QuantParams signed_params(int bits, double scale) { return {bits, true, scale}; }

struct QuantTensor {
    Shape shape;
    std::vector<std::int32_t> data;
    QuantParams params;

    QuantTensor() = default;
    QuantTensor(Shape s, QuantParams p) : shape(s), data(s.size(), 0), params(p) {}

    std::int32_t& at(int y, int x, int ch) { return data[shape.index(y, x, ch)]; }
    std::int32_t at(int y, int x, int ch) const { return data[shape.index(y, x, ch)]; }

    bool operator==(const QuantTensor&) const = default;
};

struct FloatTensor {
    Shape shape;
    std::vector<double> data;

    FloatTensor() = default;
    explicit FloatTensor(Shape s, double fill = 0.0) : shape(s), data(s.size(), fill) {}

    double& at(int y, int x, int ch) { return data[shape.index(y, x, ch)]; }
    double at(int y, int x, int ch) const { return data[shape.index(y, x, ch)]; }
};

// Ties-to-even rounding done explicitly so the result never depends on the
// floating-point environment's current rounding mode.
inline double round_half_even_real(double x) {
    const double fl = std::floor(x);
    const double diff = x - fl;
    if (diff < 0.5) {
        return fl;
    }
    if (diff > 0.5) {
        return fl + 1.0;
    }
    return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

/// Nearest integer, ties to even. Throws QuantError for NaN/inf or values
/// outside the int64 range.
inline std::int64_t round_half_even(double x) {
    if (!std::isfinite(x)) {
        throw QuantError("round_half_even: non-finite input");
    }
    const double r = round_half_even_real(x);
    if (std::fabs(r) >= 9.2e18) {
        throw QuantError("round_half_even: magnitude exceeds integer range");
    }
    return static_cast<std::int64_t>(r);
}

inline std::int64_t clamp_to(std::int64_t q, const QuantParams& p) {
    return q < p.min() ? p.min() : (q > p.max() ? p.max() : q);
}

// Rounds then saturates in the real domain, so arbitrarily large inputs clamp
// instead of overflowing.
inline std::int64_t round_clamp(double x, const QuantParams& p) {
    if (std::isnan(x)) {
        throw QuantError("quantize: NaN input");
    }
    const double r = round_half_even_real(x);
    const double lo = static_cast<double>(p.min());
    const double hi = static_cast<double>(p.max());
    return static_cast<std::int64_t>(r < lo ? lo : (r > hi ? hi : r));
}

inline std::int64_t quantize_scalar(double x, const QuantParams& p) {
    p.validate();
    if (!std::isfinite(x)) {
        throw QuantError("quantize: non-finite input");
    }
    return round_clamp(x / p.scale, p);
}

inline double dequantize_scalar(std::int64_t q, const QuantParams& p) {
    p.validate();
    if (!p.contains(q)) {
        throw QuantError("dequantize: value " + std::to_string(q) + " outside quantized range");
    }
    return static_cast<double>(q) * p.scale;
}

inline void check_tensor(const QuantTensor& t) {
    t.params.validate();
    if (t.data.size() != t.shape.size()) {
        throw QuantError("tensor data length does not match shape " + t.shape.str());
    }
    for (auto v : t.data) {
        if (!t.params.contains(v)) {
            throw QuantError("tensor element " + std::to_string(v) + " outside quantized range");
        }
    }
}

inline QuantTensor quantize_tensor(const FloatTensor& t, const QuantParams& p) {
    p.validate();
    QuantTensor out(t.shape, p);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        out.data[i] = static_cast<std::int32_t>(quantize_scalar(t.data[i], p));
    }
    return out;
}

inline FloatTensor dequantize_tensor(const QuantTensor& t) {
    t.params.validate();
    FloatTensor out(t.shape);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        out.data[i] = dequantize_scalar(t.data[i], t.params);
    }
    return out;
}

}  // namespace lpyolo
