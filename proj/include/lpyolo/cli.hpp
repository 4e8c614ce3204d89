#pragma once

// Command implementations behind the `lpyolo` tool. Each returns a process
// exit code: 0 success, 1 runtime failure, 2 bad input or arguments.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lpyolo/config.hpp"
#include "lpyolo/folding.hpp"
#include "lpyolo/imaging.hpp"
#include "lpyolo/model.hpp"
#include "lpyolo/pipeline.hpp"
#include "lpyolo/postprocess.hpp"

namespace lpyolo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitBadInput = 2;

/// Error tagged with the stage that produced it and the exit code to use.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what, int code)
        : std::runtime_error(what.starts_with(stage + ": ") ? what : stage + ": " + what),
          stage_(std::move(stage)),
          code_(code) {}
    const std::string& stage() const { return stage_; }
    int code() const { return code_; }

private:
    std::string stage_;
    int code_;
};

namespace detail {

/// Runs fn; rethrows any failure as a StageError naming `stage`. Input-type
/// failures (unreadable/malformed files, invalid values) map to exit 2.
template <typename Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const WeightFileError& e) {
        throw StageError(stage, e.what(), kExitBadInput);
    } catch (const PpmError& e) {
        throw StageError(stage, e.what(), kExitBadInput);
    } catch (const GtParseError& e) {
        throw StageError(stage, e.what(), kExitBadInput);
    } catch (const ModelError& e) {
        throw StageError(stage, e.what(), kExitBadInput);
    } catch (const std::invalid_argument& e) {
        throw StageError(stage, e.what(), kExitBadInput);
    } catch (const std::exception& e) {
        throw StageError(stage, e.what(), kExitRuntime);
    }
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const StageError& e) {
        err << "error: " << e.what() << '\n';
        return e.code();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace detail

/// Shared model/config inputs. Flag overrides win over the config file.
struct ModelInputs {
    std::string weights_path;
    std::string config_path;  // optional
    std::optional<double> conf_threshold;
    std::optional<double> nms_iou;
    std::optional<std::string> decode_mode;
};

struct LoadedModel {
    LpyoloModel model;
    PostprocessOptions post;
};

inline LoadedModel load_model(const ModelInputs& in) {
    RunConfig rc = in.config_path.empty() ? RunConfig{}
                                          : detail::in_stage("config", [&] { return load_run_config(in.config_path); });
    detail::in_stage("config", [&] {
        if (in.conf_threshold) {
            rc.post.conf_threshold = *in.conf_threshold;
        }
        if (in.nms_iou) {
            rc.post.nms_iou = *in.nms_iou;
        }
        if (in.decode_mode) {
            try {
                rc.post.decode_mode = parse_decode_mode(*in.decode_mode);
            } catch (const PostprocessError& e) {
                throw ConfigError(e.what());
            }
        }
        return 0;
    });
    auto weights = detail::in_stage("weights", [&] { return load_weights(in.weights_path); });
    auto model = detail::in_stage("weights", [&] { return build_model(rc.model_config(weights), std::move(weights)); });
    return {std::move(model), rc.post};
}

// ---------------------------------------------------------------------------
// infer

struct InferOptions {
    ModelInputs model;
    std::string image_path;
    std::string output_path;
    std::string grid_dump_path;  // optional
};

struct InferResult {
    QuantTensor grid;
    std::vector<Detection> detections;
    Image annotated;
};

inline InferResult run_single(const LpyoloModel& model, const PostprocessOptions& post, const Image& image) {
    InferResult r;
    const QuantTensor input = detail::in_stage("preprocess", [&] { return pack_input(resize_nearest(image)); });
    r.grid = detail::in_stage("infer", [&] { return forward(model, input); });
    r.detections = detail::in_stage("postprocess", [&] {
        const auto real = dequantize_output(r.grid);
        return nms(decode_grid(real, model.config(), post.conf_threshold, post.decode_mode), post.nms_iou);
    });
    r.annotated = draw_detections(image, r.detections);
    return r;
}

inline void print_detections(std::ostream& out, const std::vector<Detection>& dets) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(6);
    for (const auto& d : dets) {
        s << d.score() << ' ' << d.cx << ' ' << d.cy << ' ' << d.w << ' ' << d.h << '\n';
    }
    out << s.str();
}

inline int cmd_infer(const InferOptions& opts, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        auto loaded = load_model(opts.model);
        const Image image = detail::in_stage("image", [&] { return read_ppm(opts.image_path); });
        auto result = run_single(loaded.model, loaded.post, image);
        detail::in_stage("output", [&] {
            write_ppm(result.annotated, opts.output_path);
            if (!opts.grid_dump_path.empty()) {
                std::vector<std::uint8_t> raw(result.grid.data.begin(), result.grid.data.end());
                lpyolo::detail::write_file(opts.grid_dump_path, raw);
            }
            return 0;
        });
        print_detections(out, result.detections);
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// bench

struct StageTiming {
    std::string name;
    double mean_ms = 0, min_ms = 0, max_ms = 0;
};

struct BenchReport {
    int iterations = 0;
    std::vector<StageTiming> stages;  // Preprocessing, CNN, Postprocessing
    StageTiming total;
};

inline StageTiming summarize(std::string name, const std::vector<double>& ms) {
    StageTiming t;
    t.name = std::move(name);
    t.min_ms = *std::min_element(ms.begin(), ms.end());
    t.max_ms = *std::max_element(ms.begin(), ms.end());
    double sum = 0;
    for (double v : ms) {
        sum += v;
    }
    t.mean_ms = std::clamp(sum / static_cast<double>(ms.size()), t.min_ms, t.max_ms);
    return t;
}

inline void write_bench_report(std::ostream& out, const BenchReport& r) {
    std::ostringstream s;
    s << "iterations: " << r.iterations << '\n';
    s << std::left << std::setw(16) << "stage" << std::right << std::setw(12) << "mean_ms" << std::setw(12)
      << "min_ms" << std::setw(12) << "max_ms" << '\n';
    s << std::fixed << std::setprecision(3);
    auto row = [&](const StageTiming& t) {
        s << std::left << std::setw(16) << t.name << std::right << std::setw(12) << t.mean_ms << std::setw(12)
          << t.min_ms << std::setw(12) << t.max_ms << '\n';
    };
    for (const auto& t : r.stages) {
        row(t);
    }
    row(r.total);
    out << s.str();
}

struct BenchOptions {
    ModelInputs model;
    std::string image_path;
    int iterations = 10;
};

/// Times the three stages per iteration after one untimed warm-up run.
/// Preprocessing covers reading the frame, resizing and packing; CNN is the
/// integer forward pass; postprocessing is dequantize, decode, NMS, draw.
inline BenchReport run_bench(const LpyoloModel& model, const PostprocessOptions& post, const std::string& image_path,
                             int iterations) {
    if (iterations < 1) {
        throw std::invalid_argument("iterations must be >= 1");
    }
    using Ms = std::chrono::duration<double, std::milli>;
    std::vector<double> pre, cnn, postp, total;
    for (int it = -1; it < iterations; ++it) {
        const auto t0 = Clock::now();
        const Image image = read_ppm(image_path);
        const QuantTensor input = pack_input(resize_nearest(image));
        const auto t1 = Clock::now();
        const QuantTensor grid = forward(model, input);
        const auto t2 = Clock::now();
        const auto dets =
            nms(decode_grid(dequantize_output(grid), model.config(), post.conf_threshold, post.decode_mode),
                post.nms_iou);
        const Image annotated = draw_detections(image, dets);
        const auto t3 = Clock::now();
        if (it < 0) {
            continue;
        }
        pre.push_back(Ms(t1 - t0).count());
        cnn.push_back(Ms(t2 - t1).count());
        postp.push_back(Ms(t3 - t2).count());
        total.push_back(Ms(t3 - t0).count());
    }
    BenchReport r;
    r.iterations = iterations;
    r.stages = {summarize("Preprocessing", pre), summarize("CNN", cnn), summarize("Postprocessing", postp)};
    r.total = summarize("Total", total);
    return r;
}

inline int cmd_bench(const BenchOptions& opts, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        if (opts.iterations < 1) {
            throw StageError("arguments", "iterations must be >= 1", kExitBadInput);
        }
        auto loaded = load_model(opts.model);
        detail::in_stage("image", [&] { return read_ppm(opts.image_path); });
        auto report = detail::in_stage("bench", [&] {
            return run_bench(loaded.model, loaded.post, opts.image_path, opts.iterations);
        });
        write_bench_report(out, report);
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// serve

struct ServeOptions {
    ModelInputs model;
    std::string source_dir;
    std::string listen = "127.0.0.1:5000";
    std::size_t queue_capacity = 4;
};

inline int cmd_serve(const ServeOptions& opts, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        auto loaded = load_model(opts.model);
        auto source = detail::in_stage("source", [&] { return directory_source(opts.source_dir); });
        TcpServer server = detail::in_stage("listen", [&] { return TcpServer(opts.listen); });
        const auto host = lpyolo::detail::split_address(opts.listen).first;
        out << "listening on " << host << ':' << server.port() << std::endl;
        const auto stats = detail::in_stage("serve", [&] {
            return server.serve(source, loaded.model, PipelineConfig{opts.queue_capacity}, loaded.post, err);
        });
        std::ostringstream s;
        s << std::fixed << std::setprecision(3);
        s << "frames: " << stats.frames << '\n';
        s << "wall_s: " << stats.wall_seconds << '\n';
        s << "fps: " << stats.fps() << '\n';
        for (std::size_t i = 0; i < kStageNames.size(); ++i) {
            s << kStageNames[i] << "_s: " << stats.stage_seconds[i] << '\n';
        }
        out << s.str();
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// recv (client side of serve)

struct RecvOptions {
    std::string address = "127.0.0.1:5000";
    std::string output_dir;  // optional: write annotated frames here
};

inline int cmd_recv(const RecvOptions& opts, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        const auto [host, port] = lpyolo::detail::split_address(opts.address);
        const int port_num = detail::in_stage("arguments", [&] {
            const int p = std::stoi(port);
            if (p < 1 || p > 65535) {
                throw std::invalid_argument("port out of range");
            }
            return p;
        });
        TcpClient client = detail::in_stage("connect", [&] { return TcpClient(host, static_cast<std::uint16_t>(port_num)); });
        std::size_t frames = 0;
        while (auto msg = detail::in_stage("receive", [&] { return client.next(); })) {
            if (msg->is_end()) {
                out << "end of stream after " << frames << " frames\n";
                return kExitOk;
            }
            out << "frame " << msg->frame_id << ' ' << msg->width << 'x' << msg->height << " detections "
                << msg->detections.size() << '\n';
            if (!opts.output_dir.empty()) {
                Image img;
                img.width = msg->width;
                img.height = msg->height;
                img.pixels = msg->payload;
                std::vector<Detection> dets;
                for (const auto& d : msg->detections) {
                    dets.push_back(d.to_detection());
                }
                std::ostringstream name;
                name << "frame_" << std::setw(6) << std::setfill('0') << msg->frame_id << ".ppm";
                const auto path = std::filesystem::path(opts.output_dir) / name.str();
                detail::in_stage("output", [&] {
                    write_ppm(draw_detections(std::move(img), dets), path.string());
                    return 0;
                });
            }
            ++frames;
        }
        throw StageError("receive", "connection closed before end of stream", kExitRuntime);
    });
}

// ---------------------------------------------------------------------------
// eval

using Detector = std::function<std::vector<Detection>(const Image&)>;

/// Image file for a ground-truth id: the id itself under images_dir, or the
/// same path with a .ppm extension.
inline std::filesystem::path resolve_image(const std::filesystem::path& images_dir, const std::string& id) {
    const auto direct = images_dir / id;
    if (direct.extension() == ".ppm" && std::filesystem::is_regular_file(direct)) {
        return direct;
    }
    auto ppm = direct;
    ppm.replace_extension(".ppm");
    if (std::filesystem::is_regular_file(ppm)) {
        return ppm;
    }
    throw PpmError(PpmErrc::io, "no image for '" + id + "' (looked for " + ppm.string() + ")");
}

struct EvalResult {
    double ap = 0.0;
    std::size_t num_images = 0;
    std::size_t num_gt = 0;
    std::size_t num_predictions = 0;
    Predictions predictions;
};

/// Runs the detector over every ground-truth image and scores pixel boxes.
inline EvalResult evaluate_detector(const GroundTruthSet& gt, const std::filesystem::path& images_dir,
                                    const Detector& detect) {
    EvalResult r;
    for (const auto& id : gt.order) {
        if (r.predictions.contains(id)) {
            continue;
        }
        const Image img = detail::in_stage("image", [&] { return read_ppm(resolve_image(images_dir, id).string()); });
        auto& list = r.predictions[id];
        for (const auto& d : detect(img)) {
            list.push_back({d.score(), to_pixel_box(d, img.width, img.height)});
        }
        r.num_predictions += list.size();
        ++r.num_images;
    }
    r.num_gt = gt.num_boxes();
    r.ap = evaluate_ap(r.predictions, gt, 0.5);
    return r;
}

struct EvalOptions {
    ModelInputs model;
    std::string images_dir;
    std::string gt_path;
    std::string detections_out;  // optional "image_id score x y w h" dump
};

inline void write_eval_summary(std::ostream& out, const EvalResult& r) {
    std::ostringstream s;
    s << "images: " << r.num_images << '\n';
    s << "ground_truth_boxes: " << r.num_gt << '\n';
    s << "predictions: " << r.num_predictions << '\n';
    s << std::fixed << std::setprecision(6) << "AP@0.5: " << r.ap;
    if (r.num_gt == 0) {
        s << " (no ground truth)";
    }
    s << '\n';
    out << s.str();
}

inline int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        auto loaded = load_model(opts.model);
        const auto gt = detail::in_stage("ground truth", [&] {
            if (!std::filesystem::is_regular_file(opts.gt_path)) {
                throw std::invalid_argument("cannot open " + opts.gt_path);
            }
            return parse_widerface_gt(opts.gt_path);
        });
        const Detector detect = [&](const Image& img) {
            return run_single(loaded.model, loaded.post, img).detections;
        };
        auto result = detail::in_stage("eval", [&] { return evaluate_detector(gt, opts.images_dir, detect); });
        if (!opts.detections_out.empty()) {
            detail::in_stage("output", [&] {
                std::ofstream f(opts.detections_out);
                if (!f) {
                    throw std::runtime_error("cannot open " + opts.detections_out);
                }
                for (const auto& [id, list] : result.predictions) {
                    write_detections(f, id, list);
                }
                return 0;
            });
        }
        write_eval_summary(out, result);
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// init-weights

struct InitWeightsOptions {
    std::uint64_t seed = 0;
    int weight_bits = 4;
    int act_bits = 4;
    std::string output_path;
    bool biases = true;
};

inline int cmd_init_weights(const InitWeightsOptions& opts, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        ModelConfig cfg;
        cfg.weight_bits = opts.weight_bits;
        cfg.act_bits = opts.act_bits;
        const auto model = detail::in_stage("arguments", [&] { return random_init(cfg, opts.seed, {opts.biases}); });
        detail::in_stage("output", [&] {
            save_weights(model, opts.output_path);
            return 0;
        });
        out << "wrote " << opts.weight_bits << "W" << opts.act_bits << "A weights (seed " << opts.seed << ") to "
            << opts.output_path << '\n';
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// fold

struct FoldOptions {
    std::string spec_path;                // one of spec_path / balance_budget
    std::optional<std::int64_t> balance_budget;
    double clock_mhz = 100.0;
};

inline int cmd_fold(const FoldOptions& opts, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        if (opts.spec_path.empty() == !opts.balance_budget.has_value()) {
            throw StageError("arguments", "give exactly one of a folding spec file or --balance", kExitBadInput);
        }
        if (!(opts.clock_mhz > 0.0) || !std::isfinite(opts.clock_mhz)) {
            throw StageError("arguments", "clock must be positive", kExitBadInput);
        }
        const auto works = network_work();
        const FoldingSpec spec = detail::in_stage("folding", [&] {
            if (opts.balance_budget) {
                return balance_folding(works, *opts.balance_budget);
            }
            std::ifstream in(opts.spec_path);
            if (!in) {
                throw FoldingError("cannot open folding spec " + opts.spec_path);
            }
            return parse_folding_spec(in, works);
        });
        write_folding_report(out, works, spec, opts.clock_mhz * 1e6);
        return kExitOk;
    });
}

}  // namespace lpyolo::cli
