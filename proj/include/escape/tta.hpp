#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "escape/common.hpp"
#include "escape/correction.hpp"
#include "escape/net.hpp"
#include "escape/pose.hpp"
#include "escape/selector.hpp"

namespace escape {

struct TtaConfig {
    std::size_t steps = 2;
    double learning_rate = 5e-4;
    bool episodic = true; // reset CNet to the pretrained checkpoint per sample
    std::size_t batch_size = 1;

    void validate() const {
        if (learning_rate <= 0.0) throw ArgumentError("tta learning_rate must be positive");
    }
};

struct ConsistencyLossValue {
    double loss = 0.0;
    Gradients cnet_grads;
    Pose corrected;       // X^C
    Pose twice_corrected; // X^R
};

// Label-free adaptation objective: correct the distal joints with CNet, ask
// the frozen RCNet for the implied proximal errors, and measure how far the
// twice-corrected proximal joints moved from the backbone's. Gradients flow
// through both corrections into CNet only.
inline ConsistencyLossValue consistency_loss(Network& cnet, const Network& rcnet,
                                             const Pose& pose, const KeypointSchema& schema) {
    if (cnet.mode != NetMode::eval || rcnet.mode != NetMode::eval)
        throw SequencingError("consistency_loss: networks must be in eval-statistics mode");
    const std::size_t dim = schema.joint_count * 3;

    Matrix x(1, dim);
    {
        const std::vector<double> f = pose.flatten();
        std::copy(f.begin(), f.end(), x.row(0));
    }
    ForwardTrace ctrace;
    const Matrix cout_m = forward(cnet, x, nullptr, &ctrace);
    const CorrectionOutput distal_deltas =
        CorrectionOutput::unflatten(std::vector<double>(cout_m.data.begin(), cout_m.data.end()));

    ConsistencyLossValue out;
    out.corrected = apply_correction(pose, distal_deltas, schema.distal_indices);

    Matrix xc(1, dim);
    {
        const std::vector<double> f = out.corrected.flatten();
        std::copy(f.begin(), f.end(), xc.row(0));
    }
    ForwardTrace rtrace;
    Network& rc_mut = const_cast<Network&>(rcnet); // eval forward never writes
    const Matrix rout_m = forward(rc_mut, xc, nullptr, &rtrace);
    const CorrectionOutput proximal_deltas =
        CorrectionOutput::unflatten(std::vector<double>(rout_m.data.begin(), rout_m.data.end()));
    out.twice_corrected = apply_correction(out.corrected, proximal_deltas, schema.proximal_indices);

    // L = || X^R_P - X_P ||_2 over the stacked proximal coordinates.
    const std::size_t p = schema.proximal_indices.size();
    std::vector<double> resid(p * 3);
    double ss = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
        const Vec3 d = out.twice_corrected.joints[schema.proximal_indices[i]] -
                       pose.joints[schema.proximal_indices[i]];
        resid[3 * i] = d.x;
        resid[3 * i + 1] = d.y;
        resid[3 * i + 2] = d.z;
        ss += d.dot(d);
    }
    out.loss = std::sqrt(ss);

    // d loss / d residual, then residual = -rcnet_output on the proximal set.
    Matrix d_rout(1, rout_m.cols);
    if (out.loss > 0.0) {
        for (std::size_t i = 0; i < resid.size(); ++i) d_rout.at(0, i) = -resid[i] / out.loss;
    } else {
        d_rout.fill(0.0);
    }

    // Through the frozen reverse net to its input X^C ...
    const BackwardResult rback = backward(rcnet, rtrace, d_rout);

    // ... and X^C = X - scatter(distal deltas), so the distal-delta gradient
    // is the negated gather of the input gradient.
    Matrix d_cout(1, cout_m.cols);
    for (std::size_t i = 0; i < schema.distal_indices.size(); ++i) {
        const std::size_t j = schema.distal_indices[i];
        d_cout.at(0, 3 * i) = -rback.input_grad.at(0, 3 * j);
        d_cout.at(0, 3 * i + 1) = -rback.input_grad.at(0, 3 * j + 1);
        d_cout.at(0, 3 * i + 2) = -rback.input_grad.at(0, 3 * j + 2);
    }
    out.cnet_grads = backward(cnet, ctrace, d_cout).grads;
    return out;
}

struct AdaptOutcome {
    std::vector<double> loss_trace; // L_TT at each step, before the update
    bool aborted = false;           // non-finite loss; caller falls back to fast path
};

// Episodic per-sample adaptation: cfg.steps Adam steps on the consistency
// loss with fresh optimizer state. RCNet is read-only throughout.
inline AdaptOutcome adapt_sample_inplace(Network& cnet, const Network& rcnet, const Pose& pose,
                                         const KeypointSchema& schema, const TtaConfig& cfg) {
    cfg.validate();
    AdaptOutcome outcome;
    AdamState adam = make_adam(cnet, cfg.learning_rate);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        ConsistencyLossValue cl = consistency_loss(cnet, rcnet, pose, schema);
        if (!std::isfinite(cl.loss)) {
            outcome.aborted = true;
            return outcome;
        }
        outcome.loss_trace.push_back(cl.loss);
        try {
            adam_step(cnet, cl.cnet_grads, adam);
        } catch (const UpdateRejectedError&) {
            outcome.aborted = true;
            return outcome;
        }
    }
    return outcome;
}

inline std::pair<Network, AdaptOutcome> adapt_sample(const Network& cnet_pretrained,
                                                     const Network& rcnet, const Pose& pose,
                                                     const KeypointSchema& schema,
                                                     const TtaConfig& cfg) {
    Network adapted = cnet_pretrained;
    AdaptOutcome outcome = adapt_sample_inplace(adapted, rcnet, pose, schema, cfg);
    return {std::move(adapted), std::move(outcome)};
}

// ---------------------------------------------------------------------------
// Full routing pipeline

enum class SelectorKind { energy, random, all, none };

struct SelectorConfig {
    SelectorKind kind = SelectorKind::energy;
    double threshold = 800.0;
    OodDirection direction = OodDirection::ood_below;
    double random_rate = 0.0;
    std::uint64_t seed = 0;
};

enum class PipelinePath { fast, adapted };

struct PipelineResult {
    std::string id;
    EnergyDecision decision;
    Pose corrected;
    PipelinePath path = PipelinePath::fast;
    std::vector<double> tta_loss_trace;
    bool tta_aborted = false;
    double elapsed_us = 0.0;
    bool skipped = false;
    std::string diagnostic;
};

struct PipelineConfig {
    SelectorConfig selector;
    TtaConfig tta;
    std::size_t workers = 1;
    bool apply_correction = true; // false reproduces the uncorrected baseline arm
};

// Scores, routes, and corrects a stream of backbone predictions. Ground
// truth is never read here; malformed samples are skipped with a
// diagnostic. With episodic adaptation every sample is independent, so the
// work may fan out over threads without changing any result.
inline std::vector<PipelineResult> run_pipeline(const Network& cnet, const Network& rcnet,
                                                const std::vector<SampleRecord>& stream,
                                                const KeypointSchema& schema,
                                                const PipelineConfig& cfg) {
    if (cnet.mode != NetMode::eval || rcnet.mode != NetMode::eval)
        throw SequencingError("run_pipeline: networks must be in eval mode");

    // Selection decisions that consume randomness are drawn up front in
    // stream order so worker scheduling cannot perturb them.
    std::vector<std::uint8_t> random_pick;
    if (cfg.selector.kind == SelectorKind::random) {
        RandomSelector rs(cfg.selector.random_rate, cfg.selector.seed);
        random_pick.resize(stream.size());
        for (std::size_t i = 0; i < stream.size(); ++i) random_pick[i] = rs.next();
    }

    std::vector<PipelineResult> results(stream.size());

    auto process = [&](std::size_t i, Network* continual_cnet) {
        const SampleRecord& rec = stream[i];
        PipelineResult& res = results[i];
        res.id = rec.id;
        const auto start = std::chrono::steady_clock::now();
        try {
            if (!rec.predicted.finite() || rec.predicted.joint_count() != schema.joint_count) {
                res.skipped = true;
                res.diagnostic = "malformed predicted pose";
                return;
            }
            const Pose x = root_align(rec.predicted, schema);
            const double score = energy_score(x);
            switch (cfg.selector.kind) {
                case SelectorKind::energy:
                    res.decision = classify(score, cfg.selector.threshold, cfg.selector.direction);
                    break;
                case SelectorKind::random:
                    res.decision = {score, random_pick[i] != 0, cfg.selector.threshold,
                                    cfg.selector.direction};
                    break;
                case SelectorKind::all:
                    res.decision = {score, true, cfg.selector.threshold, cfg.selector.direction};
                    break;
                case SelectorKind::none:
                    res.decision = {score, false, cfg.selector.threshold, cfg.selector.direction};
                    break;
            }

            if (!cfg.apply_correction) {
                res.corrected = x;
                res.path = PipelinePath::fast;
            } else if (res.decision.is_ood && cfg.tta.steps > 0) {
                res.path = PipelinePath::adapted;
                if (cfg.tta.episodic || continual_cnet == nullptr) {
                    auto [adapted, outcome] = adapt_sample(cnet, rcnet, x, schema, cfg.tta);
                    res.tta_loss_trace = std::move(outcome.loss_trace);
                    res.tta_aborted = outcome.aborted;
                    res.corrected =
                        outcome.aborted ? correct_pose(cnet, x, schema) : correct_pose(adapted, x, schema);
                } else {
                    AdaptOutcome outcome =
                        adapt_sample_inplace(*continual_cnet, rcnet, x, schema, cfg.tta);
                    res.tta_loss_trace = std::move(outcome.loss_trace);
                    res.tta_aborted = outcome.aborted;
                    res.corrected = correct_pose(outcome.aborted ? cnet : *continual_cnet, x, schema);
                }
            } else {
                res.path = res.decision.is_ood ? PipelinePath::adapted : PipelinePath::fast;
                res.corrected = correct_pose(cnet, x, schema);
            }
        } catch (const Error& e) {
            res.skipped = true;
            res.diagnostic = e.what();
        }
        const auto stop = std::chrono::steady_clock::now();
        res.elapsed_us =
            std::chrono::duration_cast<std::chrono::duration<double, std::micro>>(stop - start)
                .count();
    };

    const bool parallel = cfg.tta.episodic && cfg.workers > 1 && stream.size() > 1;
    if (!parallel) {
        Network continual = cnet; // evolves across samples in continual mode
        for (std::size_t i = 0; i < stream.size(); ++i)
            process(i, cfg.tta.episodic ? nullptr : &continual);
    } else {
        std::vector<std::thread> pool;
        const std::size_t workers = std::min(cfg.workers, stream.size());
        std::atomic<std::size_t> cursor{0};
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&]() {
                for (;;) {
                    const std::size_t i = cursor.fetch_add(1);
                    if (i >= stream.size()) break;
                    process(i, nullptr);
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    return results;
}

} // namespace escape
