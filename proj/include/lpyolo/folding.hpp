#pragma once

// First-order model of dataflow folding: each conv layer is a matrix-vector
// unit of MW = k*k*C_in columns and MH = C_out rows, folded over PE rows and
// SIMD columns, processing one output pixel per (MW/SIMD)*(MH/PE) cycles.
// The slowest layer sets the steady-state frame rate.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <iterator>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpyolo/model.hpp"

namespace lpyolo {

class FoldingError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr double kDefaultClockHz = 100e6;

struct LayerWork {
    std::int64_t mw = 0;
    std::int64_t mh = 0;
    std::int64_t ofm_pixels = 0;
    std::string name;

    std::int64_t macs() const { return mw * mh * ofm_pixels; }
};

/// The ten conv layers of the network as folding work items.
inline std::vector<LayerWork> network_work() {
    std::vector<LayerWork> out;
    for (const auto& l : layer_table()) {
        if (l.kind == LayerKind::conv) {
            out.push_back({static_cast<std::int64_t>(l.kernel) * l.kernel * l.in.c, l.out.c,
                           static_cast<std::int64_t>(l.out.h) * l.out.w, "conv" + std::to_string(l.conv_index)});
        }
    }
    return out;
}

/// Max pools stream one output pixel per cycle.
inline std::vector<std::int64_t> pool_cycles() {
    std::vector<std::int64_t> out;
    for (const auto& l : layer_table()) {
        if (l.kind == LayerKind::maxpool) {
            out.push_back(static_cast<std::int64_t>(l.out.h) * l.out.w);
        }
    }
    return out;
}

struct Fold {
    std::int64_t pe = 1;
    std::int64_t simd = 1;
    bool operator==(const Fold&) const = default;
};

struct FoldingSpec {
    std::vector<Fold> layers;

    std::int64_t cost() const {
        std::int64_t c = 0;
        for (const auto& f : layers) {
            c += f.pe * f.simd;
        }
        return c;
    }
    bool operator==(const FoldingSpec&) const = default;
};

inline std::int64_t layer_cycles(const LayerWork& work, std::int64_t pe, std::int64_t simd) {
    if (pe < 1 || simd < 1 || work.mh % pe != 0 || work.mw % simd != 0) {
        throw FoldingError(work.name + ": pe " + std::to_string(pe) + " must divide MH " + std::to_string(work.mh) +
                           " and simd " + std::to_string(simd) + " must divide MW " + std::to_string(work.mw));
    }
    return (work.mw / simd) * (work.mh / pe) * work.ofm_pixels;
}

struct ThroughputEstimate {
    double fps = 0.0;
    std::size_t bottleneck = 0;  // index into the layer list
    std::int64_t bottleneck_cycles = 0;
};

inline ThroughputEstimate estimate_throughput(std::span<const LayerWork> works, const FoldingSpec& spec,
                                              double clock_hz = kDefaultClockHz) {
    if (spec.layers.size() != works.size()) {
        throw FoldingError("folding spec has " + std::to_string(spec.layers.size()) + " layers, expected " +
                           std::to_string(works.size()));
    }
    if (works.empty()) {
        throw FoldingError("no layers to estimate");
    }
    ThroughputEstimate est;
    for (std::size_t i = 0; i < works.size(); ++i) {
        const auto c = layer_cycles(works[i], spec.layers[i].pe, spec.layers[i].simd);
        if (c > est.bottleneck_cycles) {
            est.bottleneck_cycles = c;
            est.bottleneck = i;
        }
    }
    est.fps = clock_hz / static_cast<double>(est.bottleneck_cycles);
    return est;
}

inline std::vector<std::int64_t> divisors(std::int64_t n) {
    std::vector<std::int64_t> out;
    for (std::int64_t d = 1; d <= n; ++d) {
        if (n % d == 0) {
            out.push_back(d);
        }
    }
    return out;
}

namespace detail {

struct FoldLadder {
    std::vector<std::int64_t> pe;    // divisors of MH
    std::vector<std::int64_t> simd;  // divisors of MW
};

inline std::int64_t step_value(const std::vector<std::int64_t>& ladder, std::int64_t cur, int dir) {
    const auto it = std::find(ladder.begin(), ladder.end(), cur);
    if (it == ladder.end()) {
        return 0;
    }
    if (dir > 0) {
        return std::next(it) == ladder.end() ? 0 : *std::next(it);
    }
    return it == ladder.begin() ? 0 : *std::prev(it);
}

inline std::int64_t max_cycles(std::span<const LayerWork> works, const FoldingSpec& s) {
    std::int64_t m = 0;
    for (std::size_t i = 0; i < works.size(); ++i) {
        m = std::max(m, layer_cycles(works[i], s.layers[i].pe, s.layers[i].simd));
    }
    return m;
}

/// Applies one divisor step (dir ±1) to layer i's pe (factor 0) or simd
/// (factor 1). Returns false when the ladder has no such step.
inline bool apply_step(const std::vector<FoldLadder>& ladders, FoldingSpec& s, std::size_t i, int factor, int dir) {
    auto& f = s.layers[i];
    std::int64_t& v = factor == 0 ? f.pe : f.simd;
    const auto next = step_value(factor == 0 ? ladders[i].pe : ladders[i].simd, v, dir);
    if (next == 0) {
        return false;
    }
    v = next;
    return true;
}

}  // namespace detail

/// Greedy balancing under a Σ pe*simd budget. Starting from pe = simd = 1,
/// the highest-cycle layer that still has an affordable divisor step takes
/// the step that lowers its cycles most. A final pass accepts single
/// step-ups and step-down/step-up swaps while they shrink the bottleneck.
inline FoldingSpec balance_folding(std::span<const LayerWork> works, std::int64_t budget) {
    const auto n = static_cast<std::int64_t>(works.size());
    if (budget < n) {
        throw FoldingError("budget " + std::to_string(budget) + " below the minimum of " + std::to_string(n) +
                           " (pe = simd = 1 everywhere)");
    }
    std::vector<detail::FoldLadder> ladders;
    for (const auto& w : works) {
        ladders.push_back({divisors(w.mh), divisors(w.mw)});
    }
    FoldingSpec spec;
    spec.layers.assign(works.size(), Fold{});
    std::int64_t cost = spec.cost();

    auto cycles = [&](std::size_t i) { return layer_cycles(works[i], spec.layers[i].pe, spec.layers[i].simd); };

    for (;;) {
        std::size_t best_layer = works.size();
        Fold best_fold;
        std::int64_t best_layer_cycles = -1;
        for (std::size_t i = 0; i < works.size(); ++i) {
            const std::int64_t c = cycles(i);
            if (c <= best_layer_cycles) {
                continue;
            }
            const Fold cur = spec.layers[i];
            std::optional<Fold> choice;
            std::int64_t choice_cycles = 0;
            // simd first so it wins exact ties
            for (int factor : {1, 0}) {
                FoldingSpec trial = spec;
                if (!detail::apply_step(ladders, trial, i, factor, +1)) {
                    continue;
                }
                const Fold f = trial.layers[i];
                if (cost - cur.pe * cur.simd + f.pe * f.simd > budget) {
                    continue;
                }
                const auto fc = layer_cycles(works[i], f.pe, f.simd);
                if (!choice || fc < choice_cycles ||
                    (fc == choice_cycles && f.pe * f.simd < choice->pe * choice->simd)) {
                    choice = f;
                    choice_cycles = fc;
                }
            }
            if (choice) {
                best_layer = i;
                best_fold = *choice;
                best_layer_cycles = c;
            }
        }
        if (best_layer == works.size()) {
            break;
        }
        const Fold old = spec.layers[best_layer];
        cost += best_fold.pe * best_fold.simd - old.pe * old.simd;
        spec.layers[best_layer] = best_fold;
    }

    // Local improvement over the single-move neighbourhood.
    for (;;) {
        const std::int64_t current = detail::max_cycles(works, spec);
        std::optional<FoldingSpec> best;
        std::int64_t best_max = current;
        auto consider = [&](const FoldingSpec& cand) {
            if (cand.cost() > budget) {
                return;
            }
            const auto m = detail::max_cycles(works, cand);
            if (m < best_max) {
                best_max = m;
                best = cand;
            }
        };
        for (std::size_t j = 0; j < works.size(); ++j) {
            for (int g : {0, 1}) {
                FoldingSpec up = spec;
                if (!detail::apply_step(ladders, up, j, g, +1)) {
                    continue;
                }
                consider(up);
                for (std::size_t i = 0; i < works.size(); ++i) {
                    for (int f : {0, 1}) {
                        if (i == j && f == g) {
                            continue;
                        }
                        FoldingSpec swap = up;
                        if (detail::apply_step(ladders, swap, i, f, -1)) {
                            consider(swap);
                        }
                    }
                }
            }
        }
        if (!best) {
            break;
        }
        spec = std::move(*best);
    }
    return spec;
}

/// Parses "layer_index pe simd" lines (1-based conv index). Blank lines and
/// '#' comments are ignored; every layer must appear exactly once.
inline FoldingSpec parse_folding_spec(std::istream& in, std::span<const LayerWork> works) {
    FoldingSpec spec;
    spec.layers.assign(works.size(), Fold{});
    std::vector<bool> seen(works.size(), false);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::istringstream ss(line);
        long long idx, pe, simd;
        std::string extra;
        if (!(ss >> idx >> pe >> simd) || (ss >> extra)) {
            throw FoldingError("folding spec line " + std::to_string(line_no) + ": expected 'layer_index pe simd'");
        }
        if (idx < 1 || idx > static_cast<long long>(works.size())) {
            throw FoldingError("folding spec line " + std::to_string(line_no) + ": layer index " +
                               std::to_string(idx) + " out of range");
        }
        const auto i = static_cast<std::size_t>(idx - 1);
        if (seen[i]) {
            throw FoldingError("folding spec line " + std::to_string(line_no) + ": layer " + std::to_string(idx) +
                               " listed twice");
        }
        seen[i] = true;
        layer_cycles(works[i], pe, simd);  // divisibility check, names the layer
        spec.layers[i] = {pe, simd};
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) {
            throw FoldingError("folding spec is missing layer " + std::to_string(i + 1));
        }
    }
    return spec;
}

inline void write_folding_report(std::ostream& out, std::span<const LayerWork> works, const FoldingSpec& spec,
                                 double clock_hz = kDefaultClockHz) {
    const auto est = estimate_throughput(works, spec, clock_hz);
    const double mhz = clock_hz / 1e6;
    std::ostringstream ms_head;
    ms_head << "ms@" << mhz << "MHz";
    out << std::left << std::setw(8) << "layer" << std::right << std::setw(8) << "MW" << std::setw(8) << "MH"
        << std::setw(6) << "PE" << std::setw(6) << "SIMD" << std::setw(14) << "cycles" << std::setw(14)
        << ms_head.str() << '\n';
    for (std::size_t i = 0; i < works.size(); ++i) {
        const auto c = layer_cycles(works[i], spec.layers[i].pe, spec.layers[i].simd);
        out << std::left << std::setw(8) << works[i].name << std::right << std::setw(8) << works[i].mw
            << std::setw(8) << works[i].mh << std::setw(6) << spec.layers[i].pe << std::setw(6)
            << spec.layers[i].simd << std::setw(14) << c << std::setw(14) << std::fixed << std::setprecision(3)
            << static_cast<double>(c) / clock_hz * 1e3 << '\n';
        out.unsetf(std::ios::fixed);
        out << std::setprecision(6);
    }
    out << "bottleneck: " << works[est.bottleneck].name << " (" << est.bottleneck_cycles << " cycles)\n";
    out << "pe*simd total: " << spec.cost() << '\n';
    out << "estimated fps: " << std::fixed << std::setprecision(2) << est.fps << " at " << std::setprecision(1)
        << mhz << " MHz\n";
    out.unsetf(std::ios::fixed);
    out << std::setprecision(6);
}

}  // namespace lpyolo
