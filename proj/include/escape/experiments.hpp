#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "escape/common.hpp"
#include "escape/correction.hpp"
#include "escape/report.hpp"
#include "escape/tta.hpp"

namespace escape {

// The pipeline arms the experiments compare: the untouched backbone, fast
// correction everywhere, adaptation everywhere, energy-gated routing, and
// rate-matched random routing.
enum class EvalMode { baseline, cnet_only, tta_all, escape, random_select };

inline const char* eval_mode_name(EvalMode m) {
    switch (m) {
        case EvalMode::baseline: return "baseline";
        case EvalMode::cnet_only: return "cnet_only";
        case EvalMode::tta_all: return "tta_all";
        case EvalMode::escape: return "escape";
        case EvalMode::random_select: return "random_select";
    }
    return "?";
}

inline EvalMode eval_mode_from_name(const std::string& s) {
    if (s == "baseline") return EvalMode::baseline;
    if (s == "cnet_only") return EvalMode::cnet_only;
    if (s == "tta_all") return EvalMode::tta_all;
    if (s == "escape") return EvalMode::escape;
    if (s == "random_select") return EvalMode::random_select;
    throw ArgumentError("unknown eval mode: " + s);
}

struct EvalOptions {
    EvalMode mode = EvalMode::escape;
    double energy_threshold = 800.0;
    OodDirection direction = OodDirection::ood_below;
    double random_rate = 0.0;
    std::uint64_t selector_seed = 0;
    TtaConfig tta;
    std::size_t workers = 1;
    bool require_gt = true; // metric computation needs ground truth
};

inline PipelineConfig pipeline_config_for(const EvalOptions& opt) {
    PipelineConfig pc;
    pc.tta = opt.tta;
    pc.workers = opt.workers;
    pc.selector.threshold = opt.energy_threshold;
    pc.selector.direction = opt.direction;
    pc.selector.random_rate = opt.random_rate;
    pc.selector.seed = opt.selector_seed;
    switch (opt.mode) {
        case EvalMode::baseline:
            pc.selector.kind = SelectorKind::none;
            pc.apply_correction = false;
            break;
        case EvalMode::cnet_only:
            pc.selector.kind = SelectorKind::none;
            break;
        case EvalMode::tta_all:
            pc.selector.kind = SelectorKind::all;
            break;
        case EvalMode::escape:
            pc.selector.kind = SelectorKind::energy;
            break;
        case EvalMode::random_select:
            pc.selector.kind = SelectorKind::random;
            break;
    }
    return pc;
}

// Runs one arm over the dataset and assembles the report, computing
// per-sample metrics against ground truth where it is present.
inline RunReport run_eval(const std::vector<SampleRecord>& records, const Network& cnet,
                          const Network& rcnet, const KeypointSchema& schema,
                          const EvalOptions& opt,
                          std::vector<std::pair<std::string, std::string>> extra_echo = {}) {
    if (opt.require_gt)
        for (const auto& r : records)
            if (!r.ground_truth)
                throw SupervisionUnavailableError("run_eval: record " + r.id +
                                                  " lacks ground truth for metrics");

    const PipelineConfig pc = pipeline_config_for(opt);
    const std::vector<PipelineResult> results = run_pipeline(cnet, rcnet, records, schema, pc);

    RunReport report;
    report.config_echo = {{"mode", eval_mode_name(opt.mode)},
                          {"energy_threshold", std::to_string(opt.energy_threshold)},
                          {"ood_direction",
                           opt.direction == OodDirection::ood_below ? "below" : "above"},
                          {"random_rate", std::to_string(opt.random_rate)},
                          {"selector_seed", std::to_string(opt.selector_seed)},
                          {"tta_steps", std::to_string(opt.tta.steps)},
                          {"tta_lr", std::to_string(opt.tta.learning_rate)},
                          {"episodic", opt.tta.episodic ? "true" : "false"},
                          {"workers", std::to_string(opt.workers)},
                          {"samples", std::to_string(records.size())}};
    for (auto& kv : extra_echo) report.config_echo.push_back(std::move(kv));

    report.rows.reserve(results.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        const PipelineResult& pr = results[i];
        SampleRow row;
        row.id = pr.id;
        row.energy = pr.decision.score;
        row.is_ood = pr.decision.is_ood;
        row.path = pr.path;
        row.skipped = pr.skipped;
        row.diagnostic = pr.diagnostic;
        row.ltt_trace = pr.tta_loss_trace;
        row.elapsed_us = pr.elapsed_us;
        if (!pr.skipped && records[i].ground_truth) {
            row.has_gt = true;
            const Pose x = root_align(records[i].predicted, schema);
            const Pose y = root_align(*records[i].ground_truth, schema);
            row.pre_distal = subset_mpjpe(x, y, schema.distal_indices);
            row.post_distal = subset_mpjpe(pr.corrected, y, schema.distal_indices);
            row.pre_mpjpe = mpjpe(x, y);
            row.post_mpjpe = mpjpe(pr.corrected, y);
            row.pre_pa = pa_mpjpe(x, y);
            row.post_pa = pa_mpjpe(pr.corrected, y);
        }
        report.rows.push_back(std::move(row));
    }
    report.aggregates = compute_aggregates(report.rows);
    return report;
}

// ---------------------------------------------------------------------------
// Self-consistency loss vs ground-truth error (correlation experiment)

struct CorrelationResult {
    struct Row {
        std::string id;
        double ltt = 0.0;
        double gt_distal_err = 0.0; // distal MPJPE of the corrected pose
    };
    struct Bin {
        double lo = 0.0, hi = 0.0;
        std::size_t count = 0;
        double mean_ltt = 0.0, mean_err = 0.0;
    };
    std::vector<Row> rows;
    std::vector<Bin> bins;
    double pearson_r = 0.0;
    bool defined = true; // false when the loss is constant (degenerate)
};

constexpr std::size_t kCorrelationBins = 20;

inline CorrelationResult run_correlation(const std::vector<SampleRecord>& records, Network& cnet,
                                         const Network& rcnet, const KeypointSchema& schema) {
    if (records.size() < 30)
        throw InsufficientDataError("run_correlation: need at least 30 samples");
    CorrelationResult out;
    out.rows.reserve(records.size());
    for (const auto& rec : records) {
        if (!rec.ground_truth)
            throw SupervisionUnavailableError("run_correlation: record " + rec.id + " lacks gt");
        const Pose x = root_align(rec.predicted, schema);
        const Pose y = root_align(*rec.ground_truth, schema);
        ConsistencyLossValue cl = consistency_loss(cnet, rcnet, x, schema);
        out.rows.push_back(
            {rec.id, cl.loss, subset_mpjpe(cl.corrected, y, schema.distal_indices)});
    }

    double lo = out.rows[0].ltt, hi = out.rows[0].ltt;
    for (const auto& r : out.rows) {
        lo = std::min(lo, r.ltt);
        hi = std::max(hi, r.ltt);
    }
    out.bins.assign(kCorrelationBins, {});
    if (hi > lo) {
        const double width = (hi - lo) / static_cast<double>(kCorrelationBins);
        for (std::size_t b = 0; b < kCorrelationBins; ++b) {
            out.bins[b].lo = lo + width * static_cast<double>(b);
            out.bins[b].hi = lo + width * static_cast<double>(b + 1);
        }
        for (const auto& r : out.rows) {
            std::size_t b = static_cast<std::size_t>((r.ltt - lo) / width);
            if (b >= kCorrelationBins) b = kCorrelationBins - 1;
            out.bins[b].count += 1;
            out.bins[b].mean_ltt += r.ltt;
            out.bins[b].mean_err += r.gt_distal_err;
        }
        for (auto& b : out.bins)
            if (b.count) {
                b.mean_ltt /= static_cast<double>(b.count);
                b.mean_err /= static_cast<double>(b.count);
            }
    }

    // Pearson r
    const double n = static_cast<double>(out.rows.size());
    double mx = 0.0, my = 0.0;
    for (const auto& r : out.rows) {
        mx += r.ltt / n;
        my += r.gt_distal_err / n;
    }
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const auto& r : out.rows) {
        sxx += (r.ltt - mx) * (r.ltt - mx);
        syy += (r.gt_distal_err - my) * (r.gt_distal_err - my);
        sxy += (r.ltt - mx) * (r.gt_distal_err - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        out.defined = false;
        out.pearson_r = 0.0;
    } else {
        out.pearson_r = sxy / std::sqrt(sxx * syy);
    }
    return out;
}

// Row contract: one line per sample, then the 20 bins, then one summary.
inline void emit_correlation_csv(const CorrelationResult& res, std::ostream& os) {
    os << "kind,id,ltt,gt_distal_err,count\n";
    for (const auto& r : res.rows)
        os << "sample," << r.id << ',' << detail::fmt(r.ltt) << ','
           << detail::fmt(r.gt_distal_err) << ",\n";
    for (std::size_t b = 0; b < res.bins.size(); ++b) {
        const auto& bin = res.bins[b];
        os << "bin,b" << b << ',' << detail::fmt(bin.mean_ltt) << ','
           << detail::fmt(bin.mean_err) << ',' << bin.count << "\n";
    }
    os << "summary,pearson_r," << (res.defined ? detail::fmt(res.pearson_r) : "na") << ",,"
       << "\n";
}

// ---------------------------------------------------------------------------
// Timing comparison (warm-up excluded)

struct BenchArm {
    std::string name;
    std::size_t n_fast = 0;
    std::size_t n_adapted = 0;
    double mean_fast_us = 0.0, p95_fast_us = 0.0;
    double mean_adapted_us = 0.0, p95_adapted_us = 0.0;
    double mean_us = 0.0;
};

constexpr std::size_t kBenchWarmup = 50;

inline BenchArm bench_arm(const std::vector<SampleRecord>& records, const Network& cnet,
                          const Network& rcnet, const KeypointSchema& schema,
                          const EvalOptions& opt) {
    const PipelineConfig pc = pipeline_config_for(opt);
    const std::vector<PipelineResult> results = run_pipeline(cnet, rcnet, records, schema, pc);
    BenchArm arm;
    arm.name = eval_mode_name(opt.mode);
    std::vector<double> fast, adapted;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (i < kBenchWarmup || results[i].skipped) continue;
        (results[i].path == PipelinePath::adapted ? adapted : fast).push_back(results[i].elapsed_us);
    }
    auto summarize = [](std::vector<double>& v, double& mean, double& p95) {
        if (v.empty()) return;
        std::sort(v.begin(), v.end());
        mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        p95 = v[static_cast<std::size_t>(0.95 * static_cast<double>(v.size() - 1))];
    };
    arm.n_fast = fast.size();
    arm.n_adapted = adapted.size();
    double all_mean = 0.0;
    for (double x : fast) all_mean += x;
    for (double x : adapted) all_mean += x;
    const std::size_t n = fast.size() + adapted.size();
    arm.mean_us = n ? all_mean / static_cast<double>(n) : 0.0;
    summarize(fast, arm.mean_fast_us, arm.p95_fast_us);
    summarize(adapted, arm.mean_adapted_us, arm.p95_adapted_us);
    return arm;
}

} // namespace escape
