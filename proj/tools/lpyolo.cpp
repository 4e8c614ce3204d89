// lpyolo: single-image inference, stage benchmarking, TCP streaming,
// evaluation, weight generation and folding exploration.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "lpyolo/cli.hpp"

namespace {

using namespace lpyolo::cli;

void add_model_flags(CLI::App* cmd, ModelInputs& m) {
    cmd->add_option("-w,--weights", m.weights_path, "LPYQ weight file")->required();
    cmd->add_option("-c,--config", m.config_path, "JSON run config");
    cmd->add_option("--conf", m.conf_threshold, "confidence threshold (overrides config)");
    cmd->add_option("--nms-iou", m.nms_iou, "NMS IoU threshold (overrides config)");
    cmd->add_option("--decode", m.decode_mode, "box decode: anchor_pow2 or direct (overrides config)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lpyolo: low-precision YOLO face detection"};
    app.require_subcommand(1);

    InferOptions infer;
    auto* infer_cmd = app.add_subcommand("infer", "detect faces in one PPM image");
    add_model_flags(infer_cmd, infer.model);
    infer_cmd->add_option("-i,--image", infer.image_path, "input PPM")->required();
    infer_cmd->add_option("-o,--output", infer.output_path, "annotated output PPM")->required();
    infer_cmd->add_option("--grid-dump", infer.grid_dump_path, "raw 13x13x18 output grid dump");

    BenchOptions bench;
    auto* bench_cmd = app.add_subcommand("bench", "per-stage latency table");
    add_model_flags(bench_cmd, bench.model);
    bench_cmd->add_option("-i,--image", bench.image_path, "input PPM")->required();
    bench_cmd->add_option("-n,--iters", bench.iterations, "timed iterations")->check(CLI::PositiveNumber);

    ServeOptions serve;
    auto* serve_cmd = app.add_subcommand("serve", "stream annotated frames from a directory over TCP");
    add_model_flags(serve_cmd, serve.model);
    serve_cmd->add_option("-s,--source", serve.source_dir, "directory of PPM frames")->required();
    serve_cmd->add_option("-l,--listen", serve.listen, "host:port to listen on");
    serve_cmd->add_option("--queue", serve.queue_capacity, "inter-stage queue capacity")->check(CLI::PositiveNumber);

    RecvOptions recv;
    auto* recv_cmd = app.add_subcommand("recv", "receive a stream from `serve`");
    recv_cmd->add_option("-a,--address", recv.address, "host:port to connect to");
    recv_cmd->add_option("-o,--output-dir", recv.output_dir, "write received frames here");

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "AP@0.5 against WiderFace-format ground truth");
    add_model_flags(eval_cmd, eval.model);
    eval_cmd->add_option("--images", eval.images_dir, "image directory")->required();
    eval_cmd->add_option("--gt", eval.gt_path, "ground-truth file")->required();
    eval_cmd->add_option("--detections", eval.detections_out, "write per-image detections here");

    InitWeightsOptions init;
    auto* init_cmd = app.add_subcommand("init-weights", "write a seeded random LPYQ weight file");
    init_cmd->add_option("--seed", init.seed, "RNG seed");
    init_cmd->add_option("--wbits", init.weight_bits, "weight bits for convs 2-9");
    init_cmd->add_option("--abits", init.act_bits, "activation bits for convs 2-9");
    init_cmd->add_option("-o,--output", init.output_path, "output file")->required();
    init_cmd->add_flag("!--no-bias", init.biases, "omit biases");

    FoldOptions fold;
    std::optional<std::int64_t> budget;
    auto* fold_cmd = app.add_subcommand("fold", "PE/SIMD folding cycle and throughput report");
    fold_cmd->add_option("spec", fold.spec_path, "folding spec file (idx pe simd per line)");
    fold_cmd->add_option("--balance", budget, "search a spec under this total pe*simd budget");
    fold_cmd->add_option("--clock-mhz", fold.clock_mhz, "clock frequency in MHz");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitBadInput;
    }

    if (infer_cmd->parsed()) {
        return cmd_infer(infer, std::cout, std::cerr);
    }
    if (bench_cmd->parsed()) {
        return cmd_bench(bench, std::cout, std::cerr);
    }
    if (serve_cmd->parsed()) {
        return cmd_serve(serve, std::cout, std::cerr);
    }
    if (recv_cmd->parsed()) {
        return cmd_recv(recv, std::cout, std::cerr);
    }
    if (eval_cmd->parsed()) {
        return cmd_eval(eval, std::cout, std::cerr);
    }
    if (init_cmd->parsed()) {
        return cmd_init_weights(init, std::cout, std::cerr);
    }
    fold.balance_budget = budget;
    return cmd_fold(fold, std::cout, std::cerr);
}
