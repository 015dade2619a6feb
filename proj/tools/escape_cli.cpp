// escape: command-line driver for the selective pose-correction pipeline.
//
// Subcommands: synth, train, eval, correlation, bench.
// Exit codes: 0 success, 2 argument error, 3 data error, 4 dependency
// error, 5 training diverged.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "escape/escape.hpp"

namespace {

using namespace escape;

const KeypointSchema& schema_by_name(const std::string& name) {
    if (name == "h36m17") return h36m17_schema();
    throw ArgumentError("unknown schema: " + name);
}

OodDirection direction_from(const std::string& s) {
    if (s == "below") return OodDirection::ood_below;
    if (s == "above") return OodDirection::ood_above;
    throw ArgumentError("--ood-direction must be 'below' or 'above'");
}

struct GlobalOpts {
    std::uint64_t seed = 0;
    std::string schema = "h36m17";
    std::size_t threads = 0; // 0 = hardware
};

void apply_threads(const GlobalOpts& g) {
    std::size_t n = g.threads;
    if (n == 0) n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    gemm_threads() = n;
}

Network load_required(const std::string& path, const char* what) {
    std::ifstream probe(path);
    if (!probe) throw DependencyError(std::string(what) + " checkpoint not found: " + path);
    probe.close();
    return load_checkpoint(path);
}

int cmd_synth(const GlobalOpts& g, const std::string& out_train, const std::string& out_test,
              std::size_t train_n, std::size_t test_n, const CorruptionModel& corr) {
    const KeypointSchema& schema = schema_by_name(g.schema);
    SkeletonModel skel;
    if (train_n == 0 || test_n == 0) throw ArgumentError("sample counts must be positive");
    auto train = generate_records(train_n, skel, corr, Split::train, g.seed, "tr");
    auto test = generate_records(test_n, skel, corr, Split::test, mix_seed(g.seed, 1), "te");
    write_dataset(out_train, train.records, schema);
    write_dataset(out_test, test.records, schema);
    std::printf("wrote %zu train records to %s\n", train.records.size(), out_train.c_str());
    std::printf("wrote %zu test records to %s\n", test.records.size(), out_test.c_str());
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& dataset_path, const std::string& which,
              const std::string& out_path, const std::string& cnet_path, TrainConfig tc,
              NetworkConfig nc, const std::string& loss_log) {
    const KeypointSchema& schema = schema_by_name(g.schema);
    const std::vector<SampleRecord> records = read_dataset(dataset_path, schema);

    std::ofstream log;
    if (!loss_log.empty()) {
        log.open(loss_log, std::ios::trunc);
        if (!log) throw IoError("cannot open loss log " + loss_log);
        log << "epoch,mean_loss\n";
    }
    auto on_epoch = [&](std::size_t epoch, double loss) {
        std::printf("epoch %zu mean loss %.4f\n", epoch, loss);
        if (log.is_open()) log << epoch << ',' << loss << "\n";
    };

    TrainResult result;
    if (which == "cnet") {
        nc.input_dim = schema.joint_count * 3;
        nc.output_dim = schema.distal_indices.size() * 3;
        result = train_cnet(records, schema, tc, nc, on_epoch);
    } else if (which == "rcnet") {
        if (cnet_path.empty())
            throw DependencyError("training rcnet requires --cnet <checkpoint>");
        const Network cnet = load_required(cnet_path, "cnet");
        nc.input_dim = schema.joint_count * 3;
        nc.output_dim = schema.proximal_indices.size() * 3;
        result = train_rcnet(records, cnet, schema, tc, nc, on_epoch);
    } else {
        throw ArgumentError("--which must be 'cnet' or 'rcnet'");
    }
    save_checkpoint(result.net, out_path);
    std::printf("saved %s checkpoint to %s (final epoch loss %.4f)\n", which.c_str(),
                out_path.c_str(), result.epoch_losses.back());
    return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& dataset_path, const std::string& cnet_path,
             const std::string& rcnet_path, const EvalOptions& opt,
             const std::string& report_path) {
    const KeypointSchema& schema = schema_by_name(g.schema);
    const std::vector<SampleRecord> records = read_dataset(dataset_path, schema);
    const Network cnet = load_required(cnet_path, "cnet");
    const Network rcnet = load_required(rcnet_path, "rcnet");

    RunReport report = run_eval(records, cnet, rcnet, schema, opt,
                                {{"seed", std::to_string(g.seed)}, {"dataset", dataset_path}});
    if (!report_path.empty()) {
        std::ofstream os(report_path, std::ios::trunc);
        if (!os) throw IoError("cannot open report path " + report_path);
        emit_report_csv(report, os);
    }
    const Aggregates& a = report.aggregates;
    std::printf("mode %s: %zu samples (%zu fast / %zu adapted / %zu skipped)\n",
                eval_mode_name(opt.mode), a.total, a.fast_count, a.adapted_count,
                a.skipped_count);
    if (a.with_gt) {
        std::printf("  distal MPJPE %.3f -> %.3f (delta %+.3f)\n", a.mean_pre_distal,
                    a.mean_post_distal, a.distal_delta);
        std::printf("  MPJPE        %.3f -> %.3f (delta %+.3f)\n", a.mean_pre_mpjpe,
                    a.mean_post_mpjpe, a.mpjpe_delta);
        std::printf("  PA-MPJPE     %.3f -> %.3f (delta %+.3f)\n", a.mean_pre_pa, a.mean_post_pa,
                    a.pa_delta);
    }
    std::printf("  mean elapsed %.1f us/sample (fast %.1f, adapted %.1f)\n", a.mean_elapsed_us,
                a.mean_elapsed_fast_us, a.mean_elapsed_adapted_us);
    return 0;
}

int cmd_correlation(const GlobalOpts& g, const std::string& dataset_path,
                    const std::string& cnet_path, const std::string& rcnet_path,
                    const std::string& out_path) {
    const KeypointSchema& schema = schema_by_name(g.schema);
    const std::vector<SampleRecord> records = read_dataset(dataset_path, schema);
    Network cnet = load_required(cnet_path, "cnet");
    const Network rcnet = load_required(rcnet_path, "rcnet");

    CorrelationResult res = run_correlation(records, cnet, rcnet, schema);
    if (!out_path.empty()) {
        std::ofstream os(out_path, std::ios::trunc);
        if (!os) throw IoError("cannot open output path " + out_path);
        emit_correlation_csv(res, os);
    }
    if (res.defined)
        std::printf("pearson r = %.4f over %zu samples\n", res.pearson_r, res.rows.size());
    else
        std::printf("pearson r = not applicable (degenerate loss distribution)\n");
    return 0;
}

int cmd_bench(const GlobalOpts& g, const std::string& dataset_path, const std::string& cnet_path,
              const std::string& rcnet_path, const std::vector<std::string>& arm_names,
              const EvalOptions& base_opt) {
    const KeypointSchema& schema = schema_by_name(g.schema);
    const std::vector<SampleRecord> records = read_dataset(dataset_path, schema);
    const Network cnet = load_required(cnet_path, "cnet");
    const Network rcnet = load_required(rcnet_path, "rcnet");

    std::printf("%-14s %8s %12s %12s %8s %12s %12s %12s\n", "arm", "n_fast", "fast_mean_us",
                "fast_p95_us", "n_adapt", "adapt_mean", "adapt_p95", "mean_us");
    for (const std::string& name : arm_names) {
        EvalOptions opt = base_opt;
        opt.mode = eval_mode_from_name(name);
        const BenchArm arm = bench_arm(records, cnet, rcnet, schema, opt);
        std::printf("%-14s %8zu %12.1f %12.1f %8zu %12.1f %12.1f %12.1f\n", arm.name.c_str(),
                    arm.n_fast, arm.mean_fast_us, arm.p95_fast_us, arm.n_adapted,
                    arm.mean_adapted_us, arm.p95_adapted_us, arm.mean_us);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    using namespace escape;
    CLI::App app{"energy-gated selective test-time correction of 3D pose predictions"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global RNG seed");
    app.add_option("--schema", g.schema, "keypoint schema name")->default_val("h36m17");
    app.add_option("--threads", g.threads, "worker threads for batched math (0 = hardware)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic backbone dataset");
    std::string out_train = "train.jsonl", out_test = "test.jsonl";
    std::size_t train_n = 20000, test_n = 4000;
    CorruptionModel corr;
    synth->add_option("--out-train", out_train, "train split output path");
    synth->add_option("--out-test", out_test, "test split output path");
    synth->add_option("--train-n", train_n, "train sample count");
    synth->add_option("--test-n", test_n, "test sample count");
    synth->add_option("--sigma-proximal", corr.sigma_proximal, "proximal noise sigma (mm)");
    synth->add_option("--sigma-distal", corr.sigma_distal, "distal noise sigma (mm)");
    synth->add_option("--ood-fraction", corr.ood_fraction, "OOD sub-population fraction");
    synth->add_option("--limb-rot-sigma", corr.ood_limb_rotation_sigma,
                      "OOD limb rotation sigma (deg)");
    synth->add_option("--torso-sigma", corr.torso_misalignment_sigma,
                      "OOD torso misrotation sigma (deg)");

    // train
    auto* train = app.add_subcommand("train", "train cnet or rcnet on a dataset");
    std::string dataset_path, which = "cnet", ckpt_out = "net.escn", cnet_in, loss_log;
    TrainConfig tc;
    NetworkConfig nc;
    train->add_option("--dataset", dataset_path, "training dataset")->required();
    train->add_option("--which", which, "cnet or rcnet")->required();
    train->add_option("--out", ckpt_out, "checkpoint output path")->required();
    train->add_option("--cnet", cnet_in, "trained cnet checkpoint (required for rcnet)");
    train->add_option("--epochs", tc.epochs, "training epochs");
    train->add_option("--batch-size", tc.batch_size, "batch size");
    train->add_option("--lr", tc.learning_rate, "Adam learning rate");
    train->add_option("--lambda1", tc.lambda1, "plain loss weight");
    train->add_option("--lambda2", tc.lambda2, "aligned loss weight");
    train->add_option("--hidden", nc.hidden_dim, "hidden layer width");
    train->add_option("--blocks", nc.residual_blocks, "residual block count");
    train->add_option("--dropout", nc.dropout_rate, "dropout rate");
    train->add_option("--loss-log", loss_log, "per-epoch loss CSV path");

    // shared eval/bench options
    std::string cnet_path, rcnet_path, report_path, mode_name, selector_name;
    EvalOptions eopt;
    std::string direction_name = "below";
    bool continual = false;

    auto add_pipeline_opts = [&](CLI::App* cmd) {
        cmd->add_option("--dataset", dataset_path, "evaluation dataset")->required();
        cmd->add_option("--cnet", cnet_path, "cnet checkpoint")->required();
        cmd->add_option("--rcnet", rcnet_path, "rcnet checkpoint")->required();
        cmd->add_option("--energy-threshold", eopt.energy_threshold, "energy gate threshold");
        cmd->add_option("--ood-direction", direction_name, "below or above");
        cmd->add_option("--random-rate", eopt.random_rate, "random selector rate");
        cmd->add_option("--selector-seed", eopt.selector_seed, "random selector seed");
        cmd->add_option("--tta-steps", eopt.tta.steps, "adaptation steps per sample");
        cmd->add_option("--tta-lr", eopt.tta.learning_rate, "adaptation learning rate");
        cmd->add_flag("--continual", continual, "carry CNet state across samples");
        cmd->add_option("--workers", eopt.workers, "parallel adaptation workers");
    };

    auto* eval = app.add_subcommand("eval", "run a pipeline arm and report metrics");
    add_pipeline_opts(eval);
    eval->add_option("--mode", mode_name,
                     "baseline | cnet_only | tta_all | escape | random_select");
    eval->add_option("--selector", selector_name, "energy | random | all | none");
    eval->add_option("--report", report_path, "per-sample CSV report path");

    auto* correlation = app.add_subcommand("correlation",
                                           "self-consistency loss vs ground-truth error");
    std::string corr_out;
    correlation->add_option("--dataset", dataset_path, "evaluation dataset")->required();
    correlation->add_option("--cnet", cnet_path, "cnet checkpoint")->required();
    correlation->add_option("--rcnet", rcnet_path, "rcnet checkpoint")->required();
    correlation->add_option("--out", corr_out, "output CSV path");

    auto* bench = app.add_subcommand("bench", "per-arm latency comparison");
    add_pipeline_opts(bench);
    std::vector<std::string> arm_names{"cnet_only", "tta_all", "escape"};
    bench->add_option("--arms", arm_names, "arms to time");

    CLI11_PARSE(app, argc, argv);

    try {
        apply_threads(g);
        if (synth->parsed()) {
            corr.seed = g.seed;
            return cmd_synth(g, out_train, out_test, train_n, test_n, corr);
        }
        if (train->parsed()) {
            tc.seed = g.seed;
            nc.seed = g.seed;
            return cmd_train(g, dataset_path, which, ckpt_out, cnet_in, tc, nc, loss_log);
        }
        if (eval->parsed() || bench->parsed()) {
            eopt.direction = direction_from(direction_name);
            eopt.tta.episodic = !continual;
            if (eopt.selector_seed == 0) eopt.selector_seed = g.seed;
            if (eval->parsed()) {
                if (mode_name.empty() && selector_name.empty())
                    throw ArgumentError("eval requires --mode or --selector");
                if (!selector_name.empty()) {
                    EvalMode from_selector;
                    if (selector_name == "energy") from_selector = EvalMode::escape;
                    else if (selector_name == "random") from_selector = EvalMode::random_select;
                    else if (selector_name == "all") from_selector = EvalMode::tta_all;
                    else if (selector_name == "none") from_selector = EvalMode::cnet_only;
                    else throw ArgumentError("unknown selector: " + selector_name);
                    if (!mode_name.empty() && eval_mode_from_name(mode_name) != from_selector)
                        throw ArgumentError("--mode and --selector disagree");
                    eopt.mode = from_selector;
                } else {
                    eopt.mode = eval_mode_from_name(mode_name);
                }
                return cmd_eval(g, dataset_path, cnet_path, rcnet_path, eopt, report_path);
            }
            return cmd_bench(g, dataset_path, cnet_path, rcnet_path, arm_names, eopt);
        }
        if (correlation->parsed())
            return cmd_correlation(g, dataset_path, cnet_path, rcnet_path, corr_out);
        return 2;
    } catch (const ArgumentError& e) {
        std::fprintf(stderr, "argument error: %s\n", e.what());
        return 2;
    } catch (const TrainingDivergedError& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return 5;
    } catch (const DependencyError& e) {
        std::fprintf(stderr, "dependency error: %s\n", e.what());
        return 4;
    } catch (const IncompatibleCheckpointError& e) {
        std::fprintf(stderr, "dependency error: %s\n", e.what());
        return 4;
    } catch (const Error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
