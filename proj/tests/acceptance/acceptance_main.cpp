// Acceptance suite: one check per release criterion, one PASS/FAIL line
// each, nonzero exit if anything fails. Heavy artifacts (datasets, trained
// networks) are built once and shared; the correction-efficacy criterion
// times its own training.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "escape/escape.hpp"
#include "support/test_util.hpp"

using namespace escape;

namespace {

const KeypointSchema& schema() { return h36m17_schema(); }

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct Failure {
    std::string reason;
};

#define REQUIRE_OR_FAIL(cond, ...)                                    \
    do {                                                              \
        if (!(cond)) {                                                \
            char _buf[512];                                           \
            std::snprintf(_buf, sizeof _buf, __VA_ARGS__);            \
            throw Failure{_buf};                                      \
        }                                                             \
    } while (0)

// ---------------------------------------------------------------------------
// Shared fixture

constexpr std::size_t kTrainN = 20000;
constexpr std::size_t kTestN = 4000;
constexpr std::uint64_t kTrainSeed = 42;
constexpr std::uint64_t kTestSeed = 43;

// Training recipes for the synthetic acceptance runs. The mm-scale output
// magnitudes need on the order of a thousand Adam updates to grow into, so
// batch sizes and learning rates here are tuned for this dataset size; they
// are runtime parameters of the trainer, not library defaults. The reverse
// network gets a longer schedule: its OOD signature (severity read from
// limb-vs-torso inconsistency) is a subtler feature than the distal error
// field.
TrainConfig cnet_recipe(std::uint64_t seed) {
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 512;
    tc.learning_rate = 1e-3;
    tc.seed = seed;
    return tc;
}

TrainConfig rcnet_recipe(std::uint64_t seed) {
    TrainConfig tc;
    tc.epochs = 60;
    tc.batch_size = 256;
    tc.learning_rate = 2e-3;
    tc.seed = seed;
    return tc;
}

struct Fixture {
    SkeletonModel skeleton;
    CorruptionModel corruption;
    GeneratedDataset train_set;
    GeneratedDataset test_set;
    std::optional<Network> cnet;
    std::optional<Network> rcnet;
    double cnet_train_seconds = 0.0;

    const GeneratedDataset& train() {
        if (train_set.records.empty())
            train_set = generate_records(kTrainN, skeleton, corruption, Split::train, kTrainSeed,
                                         "tr");
        return train_set;
    }
    const GeneratedDataset& test() {
        if (test_set.records.empty())
            test_set = generate_records(kTestN, skeleton, corruption, Split::test, kTestSeed, "te");
        return test_set;
    }
    const Network& trained_cnet() {
        if (!cnet) {
            const double t0 = now_s();
            TrainResult res = train_cnet(train().records, schema(), cnet_recipe(5));
            cnet_train_seconds = now_s() - t0;
            std::printf("  [fixture] cnet trained in %.1f s (first epoch loss %.2f, last %.2f)\n",
                        cnet_train_seconds, res.epoch_losses.front(), res.epoch_losses.back());
            cnet = std::move(res.net);
        }
        return *cnet;
    }
    const Network& trained_rcnet() {
        if (!rcnet) {
            const double t0 = now_s();
            TrainResult res = train_rcnet(train().records, trained_cnet(), schema(),
                                          rcnet_recipe(6));
            std::printf("  [fixture] rcnet trained in %.1f s (first epoch loss %.2f, last %.2f)\n",
                        now_s() - t0, res.epoch_losses.front(), res.epoch_losses.back());
            rcnet = std::move(res.net);
        }
        return *rcnet;
    }
};

Fixture fx;

GeneratedDataset seeded_test_set(std::uint64_t seed) {
    return generate_records(kTestN, fx.skeleton, fx.corruption, Split::test, seed, "te");
}

// ---------------------------------------------------------------------------
// Independent ridge-regression oracle (criterion 5). Plain normal equations
// with Gaussian elimination; shares nothing with the network code path.

struct RidgeOracle {
    std::vector<std::vector<double>> w; // (dim+1) x out

    void fit(const std::vector<SampleRecord>& records, double alpha) {
        const std::size_t dim = schema().joint_count * 3;
        const std::size_t out = schema().distal_indices.size() * 3;
        const std::size_t d = dim + 1;
        std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
        std::vector<std::vector<double>> b(d, std::vector<double>(out, 0.0));
        std::vector<double> xi(d);
        for (const auto& rec : records) {
            const Pose x = root_align(rec.predicted, schema());
            const Pose y = root_align(*rec.ground_truth, schema());
            const std::vector<double> f = x.flatten();
            std::copy(f.begin(), f.end(), xi.begin());
            xi[d - 1] = 1.0;
            const std::vector<double> t = correction_target(x, y, schema().distal_indices);
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = i; j < d; ++j) a[i][j] += xi[i] * xi[j];
                for (std::size_t j = 0; j < out; ++j) b[i][j] += xi[i] * t[j];
            }
        }
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < i; ++j) a[i][j] = a[j][i];
        for (std::size_t i = 0; i + 1 < d; ++i) a[i][i] += alpha;

        for (std::size_t col = 0; col < d; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < d; ++r)
                if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
            std::swap(a[piv], a[col]);
            std::swap(b[piv], b[col]);
            for (std::size_t r = 0; r < d; ++r) {
                if (r == col || a[r][col] == 0.0) continue;
                const double f = a[r][col] / a[col][col];
                for (std::size_t c = col; c < d; ++c) a[r][c] -= f * a[col][c];
                for (std::size_t c = 0; c < out; ++c) b[r][c] -= f * b[col][c];
            }
        }
        w.assign(d, std::vector<double>(out, 0.0));
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < out; ++j) w[i][j] = b[i][j] / a[i][i];
    }

    CorrectionOutput predict(const Pose& x) const {
        const std::vector<double> f = x.flatten();
        std::vector<double> out(w[0].size(), 0.0);
        for (std::size_t i = 0; i < f.size(); ++i)
            for (std::size_t j = 0; j < out.size(); ++j) out[j] += f[i] * w[i][j];
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += w.back()[j];
        return CorrectionOutput::unflatten(out);
    }
};

double distal_reduction(const std::vector<SampleRecord>& records,
                        const std::function<Pose(const Pose&)>& correct) {
    double pre = 0.0, post = 0.0;
    for (const auto& rec : records) {
        const Pose x = root_align(rec.predicted, schema());
        const Pose y = root_align(*rec.ground_truth, schema());
        pre += subset_mpjpe(x, y, schema().distal_indices);
        post += subset_mpjpe(correct(x), y, schema().distal_indices);
    }
    return 1.0 - post / pre;
}

// ---------------------------------------------------------------------------
// criterion 1: gradient correctness for L_C, L_R, and L_TT

struct LossGrads {
    double loss = 0.0;
    Gradients grads;
};

// L_C = lambda1 * L1 + lambda2 * L2 on a fixed batch with fixed dropout masks.
LossGrads eval_loss_c(Network& net, const Matrix& x, const Matrix& t, const Matrix& xa,
                      const Matrix& ta, bool want_grads) {
    const double lambda1 = 1.0, lambda2 = 0.5;
    Rng drop(4242);
    LossGrads out;
    ForwardTrace tr1;
    const Matrix y1 = forward(net, x, &drop, want_grads ? &tr1 : nullptr, false);
    auto l1 = escape::detail::euclidean_batch_loss(y1, t);
    ForwardTrace tr2;
    const Matrix y2 = forward(net, xa, &drop, want_grads ? &tr2 : nullptr, false);
    auto l2 = escape::detail::euclidean_batch_loss(y2, ta);
    out.loss = lambda1 * l1.loss + lambda2 * l2.loss;
    if (want_grads) {
        for (double& g : l1.dout.data) g *= lambda1;
        for (double& g : l2.dout.data) g *= lambda2;
        out.grads = backward(net, tr1, l1.dout).grads;
        out.grads.add_scaled(backward(net, tr2, l2.dout).grads, 1.0);
    }
    return out;
}

LossGrads eval_loss_r(Network& net, const Matrix& x, const Matrix& t, bool want_grads) {
    Rng drop(777);
    LossGrads out;
    ForwardTrace tr;
    const Matrix y = forward(net, x, &drop, want_grads ? &tr : nullptr, false);
    auto l = escape::detail::euclidean_batch_loss(y, t);
    out.loss = l.loss;
    if (want_grads) out.grads = backward(net, tr, l.dout).grads;
    return out;
}

std::string check_gradients_at(std::size_t hidden, std::size_t max_per_tensor) {
    NetworkConfig cfg;
    cfg.hidden_dim = hidden;
    cfg.seed = 100 + hidden;
    Network net = make_network(cfg);
    net.mode = NetMode::train;

    Rng rng(200 + hidden);
    const Matrix x = testutil::random_batch(rng, 4, 51, 200.0);
    const Matrix t = testutil::random_batch(rng, 4, 12, 20.0);
    const Matrix xa = testutil::random_batch(rng, 4, 51, 200.0);
    const Matrix ta = testutil::random_batch(rng, 4, 12, 20.0);

    // L_C
    {
        const LossGrads an = eval_loss_c(net, x, t, xa, ta, true);
        const auto stats = testutil::fd_check_params(
            net, an.grads, [&] { return eval_loss_c(net, x, t, xa, ta, false).loss; },
            max_per_tensor);
        if (stats.failed)
            return "L_C at hidden " + std::to_string(hidden) + ": " +
                   std::to_string(stats.failed) + "/" + std::to_string(stats.checked) +
                   " coords off (worst rel " + std::to_string(stats.worst_rel) + ")";
    }
    // L_R
    {
        const LossGrads an = eval_loss_r(net, x, t, true);
        const auto stats = testutil::fd_check_params(
            net, an.grads, [&] { return eval_loss_r(net, x, t, false).loss; }, max_per_tensor);
        if (stats.failed)
            return "L_R at hidden " + std::to_string(hidden) + ": " +
                   std::to_string(stats.failed) + "/" + std::to_string(stats.checked) +
                   " coords off";
    }
    // L_TT: gradients w.r.t. cnet through the frozen rcnet
    {
        NetworkConfig rcfg = cfg;
        rcfg.seed = 300 + hidden;
        Network cnet = make_network(cfg);
        Network rcnet = make_network(rcfg);
        Rng prng(400 + hidden);
        const Pose pose = root_align(testutil::random_pose(prng), schema());
        const ConsistencyLossValue cl = consistency_loss(cnet, rcnet, pose, schema());
        if (!(cl.loss > 0.0)) return "L_TT loss unexpectedly zero";
        const auto stats = testutil::fd_check_params(
            cnet, cl.cnet_grads,
            [&] { return consistency_loss(cnet, rcnet, pose, schema()).loss; }, max_per_tensor);
        if (stats.failed)
            return "L_TT at hidden " + std::to_string(hidden) + ": " +
                   std::to_string(stats.failed) + "/" + std::to_string(stats.checked) +
                   " coords off";
    }
    return "";
}

std::string criterion_gradients() {
    const double t0 = now_s();
    std::string err = check_gradients_at(16, 0); // dense: every parameter
    if (!err.empty()) return err;
    // at hidden 512 a dense sweep cannot fit the runtime budget; sample a
    // fixed number of coordinates from every parameter tensor instead
    err = check_gradients_at(512, 25);
    if (!err.empty()) return err;
    const double elapsed = now_s() - t0;
    REQUIRE_OR_FAIL(elapsed < 60.0, "gradient checks took %.1f s (budget 60 s)", elapsed);
    std::printf("  [c1] dense@16 + sampled@512 in %.1f s\n", elapsed);
    return "";
}

// criterion 2: Procrustes recovery and pa_mpjpe dominance

std::string criterion_procrustes() {
    const double t0 = now_s();
    Rng rng(7001);
    for (int i = 0; i < 1000; ++i) {
        const Pose src = testutil::random_pose(rng);
        const Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
        const Mat3 r = axis_angle(axis.normalized(), rng.uniform(-3.14, 3.14));
        const double s = std::exp(rng.uniform(-1.2, 1.2));
        const Vec3 t{rng.normal(0, 200), rng.normal(0, 200), rng.normal(0, 200)};
        Pose dst(src.joint_count());
        for (std::size_t j = 0; j < src.joint_count(); ++j)
            dst.joints[j] = r.apply(src.joints[j]) * s + t;
        const ProcrustesResult res = procrustes_align(src, dst);
        const double residual = mpjpe(res.aligned, dst);
        REQUIRE_OR_FAIL(residual <= 1e-6, "transform %d residual %.3g > 1e-6", i, residual);
    }
    for (int i = 0; i < 10000; ++i) {
        const Pose a = testutil::random_pose(rng);
        const Pose b = testutil::random_pose(rng);
        REQUIRE_OR_FAIL(pa_mpjpe(a, b) <= mpjpe(a, b) + 1e-9, "pa_mpjpe > mpjpe on pair %d", i);
    }
    const double elapsed = now_s() - t0;
    REQUIRE_OR_FAIL(elapsed < 60.0, "procrustes checks took %.1f s (budget 60 s)", elapsed);
    return "";
}

// criterion 3: energy identities

std::string criterion_energy() {
    const Pose zero(17);
    REQUIRE_OR_FAIL(std::abs(energy_score(zero) - std::log(51.0)) < 1e-12,
                    "ln(51) case off by %.3g", std::abs(energy_score(zero) - std::log(51.0)));
    Rng rng(7002);
    for (int i = 0; i < 2000; ++i) {
        const Pose p = testutil::random_pose(rng, 17, 10.0);
        const double c = rng.uniform(-100.0, 100.0);
        Pose shifted = p;
        for (auto& j : shifted.joints) j += {c, c, c};
        REQUIRE_OR_FAIL(std::abs(energy_score(shifted) - (energy_score(p) + c)) < 1e-9,
                        "shift identity violated at trial %d", i);
        // naive form (safe at this coordinate scale)
        double sum = 0.0;
        for (const auto& j : p.joints) sum += std::exp(j.x) + std::exp(j.y) + std::exp(j.z);
        REQUIRE_OR_FAIL(std::abs(energy_score(p) - std::log(sum)) < 1e-9,
                        "stable vs naive mismatch at trial %d", i);
    }
    return "";
}

// criterion 4: energy-selected samples are harder than average

std::string criterion_selection_quality() {
    for (std::uint64_t seed = kTestSeed; seed < kTestSeed + 5; ++seed) {
        const GeneratedDataset ds = seeded_test_set(seed);
        double all_sum = 0.0, sel_sum = 0.0;
        std::size_t sel_n = 0;
        for (const auto& rec : ds.records) {
            const Pose x = root_align(rec.predicted, schema());
            const Pose y = root_align(*rec.ground_truth, schema());
            const double m = mpjpe(x, y);
            all_sum += m;
            const EnergyDecision d = classify(energy_score(x), 800.0, OodDirection::ood_below);
            if (d.is_ood) {
                sel_sum += m;
                sel_n += 1;
            }
        }
        REQUIRE_OR_FAIL(sel_n > 0, "seed %llu selected nothing", (unsigned long long)seed);
        const double mean_all = all_sum / static_cast<double>(ds.records.size());
        const double mean_sel = sel_sum / static_cast<double>(sel_n);
        REQUIRE_OR_FAIL(mean_sel > mean_all,
                        "seed %llu: selected mean %.2f not above overall mean %.2f (n_sel %zu)",
                        (unsigned long long)seed, mean_sel, mean_all, sel_n);
        std::printf("  [c4] seed %llu: selected %zu/%zu, MPJPE %.2f vs %.2f overall\n",
                    (unsigned long long)seed, sel_n, ds.records.size(), mean_sel, mean_all);
    }
    return "";
}

// criterion 5: trained CNet beats 15% reduction and tracks the ridge oracle

std::string criterion_correction_efficacy() {
    const double t0 = now_s();
    const Network& cnet = fx.trained_cnet();
    const double net_red = distal_reduction(
        fx.test().records, [&](const Pose& x) { return correct_pose(cnet, x, schema()); });

    RidgeOracle ridge;
    ridge.fit(fx.train().records, 1e-6 * static_cast<double>(kTrainN));
    const double ridge_red = distal_reduction(fx.test().records, [&](const Pose& x) {
        return apply_correction(x, ridge.predict(x), schema().distal_indices);
    });
    const double elapsed = now_s() - t0;
    std::printf("  [c5] net reduction %.1f%%, ridge oracle %.1f%%, %.1f s total\n",
                100.0 * net_red, 100.0 * ridge_red, elapsed);
    REQUIRE_OR_FAIL(net_red >= 0.15, "net reduction %.2f%% below 15%%", 100.0 * net_red);
    REQUIRE_OR_FAIL(net_red >= 0.9 * ridge_red,
                    "net reduction %.2f%% not within 10%% of ridge %.2f%%", 100.0 * net_red,
                    100.0 * ridge_red);
    REQUIRE_OR_FAIL(elapsed < 600.0, "criterion took %.0f s (budget 600 s)", elapsed);
    return "";
}

// criterion 6: self-consistency loss correlates with ground-truth error

std::string criterion_correlation() {
    Network cnet = fx.trained_cnet(); // run_correlation wants a mutable handle
    const CorrelationResult res =
        run_correlation(fx.test().records, cnet, fx.trained_rcnet(), schema());
    REQUIRE_OR_FAIL(res.defined, "correlation degenerate (constant loss)");
    std::printf("  [c6] pearson r = %.3f over %zu samples\n", res.pearson_r, res.rows.size());
    REQUIRE_OR_FAIL(res.pearson_r > 0.3, "pearson r %.3f below 0.3", res.pearson_r);
    return "";
}

// criterion 7: selective adaptation keeps the improvement at a fraction of
// the cost

std::string criterion_selective_tradeoff() {
    const Network& cnet = fx.trained_cnet();
    const Network& rcnet = fx.trained_rcnet();

    double sum_escape_impr = 0.0, sum_tta_impr = 0.0;
    double sum_escape_over = 0.0, sum_tta_over = 0.0;
    for (std::uint64_t seed = kTestSeed; seed < kTestSeed + 3; ++seed) {
        const GeneratedDataset ds = seeded_test_set(seed);

        // tune the threshold so the selection rate lands mid-window
        std::vector<double> scores;
        scores.reserve(ds.records.size());
        for (const auto& rec : ds.records)
            scores.push_back(energy_score(root_align(rec.predicted, schema())));
        std::vector<double> sorted = scores;
        std::sort(sorted.begin(), sorted.end());
        const double threshold = sorted[static_cast<std::size_t>(0.3 * sorted.size())];

        EvalOptions fast_opt;
        fast_opt.mode = EvalMode::cnet_only;
        const RunReport fast = run_eval(ds.records, cnet, rcnet, schema(), fast_opt);

        EvalOptions esc_opt;
        esc_opt.mode = EvalMode::escape;
        esc_opt.energy_threshold = threshold;
        const RunReport escape = run_eval(ds.records, cnet, rcnet, schema(), esc_opt);

        EvalOptions all_opt;
        all_opt.mode = EvalMode::tta_all;
        const RunReport tta_all = run_eval(ds.records, cnet, rcnet, schema(), all_opt);

        const double frac = static_cast<double>(escape.aggregates.adapted_count) /
                            static_cast<double>(escape.aggregates.total);
        REQUIRE_OR_FAIL(frac >= 0.2 && frac <= 0.5, "selection rate %.2f outside [0.2, 0.5]",
                        frac);

        const double esc_impr = -escape.aggregates.distal_delta;
        const double tta_impr = -tta_all.aggregates.distal_delta;
        const double esc_over =
            escape.aggregates.mean_elapsed_us - fast.aggregates.mean_elapsed_us;
        const double tta_over =
            tta_all.aggregates.mean_elapsed_us - fast.aggregates.mean_elapsed_us;
        std::printf("  [c7] seed %llu: sel %.0f%%, improvement %.3f vs %.3f mm, overhead %.0f vs "
                    "%.0f us\n",
                    (unsigned long long)seed, 100.0 * frac, esc_impr, tta_impr, esc_over,
                    tta_over);
        sum_escape_impr += esc_impr;
        sum_tta_impr += tta_impr;
        sum_escape_over += esc_over;
        sum_tta_over += tta_over;
    }
    REQUIRE_OR_FAIL(sum_tta_impr > 0.0, "tta_all arm did not improve distal error");
    REQUIRE_OR_FAIL(sum_escape_impr >= 0.6 * sum_tta_impr,
                    "escape improvement %.3f below 60%% of tta_all %.3f", sum_escape_impr / 3.0,
                    sum_tta_impr / 3.0);
    REQUIRE_OR_FAIL(sum_escape_over <= 0.5 * sum_tta_over,
                    "escape overhead %.0f us above 50%% of tta_all %.0f us",
                    sum_escape_over / 3.0, sum_tta_over / 3.0);
    return "";
}

// criterion 8: energy selection beats rate-matched random selection

std::string criterion_energy_vs_random() {
    const Network& cnet = fx.trained_cnet();
    const Network& rcnet = fx.trained_rcnet();

    double energy_impr = 0.0, random_impr = 0.0;
    for (std::uint64_t seed = kTestSeed; seed < kTestSeed + 5; ++seed) {
        const GeneratedDataset ds = seeded_test_set(seed);

        EvalOptions esc_opt;
        esc_opt.mode = EvalMode::escape; // default threshold 800
        const RunReport escape = run_eval(ds.records, cnet, rcnet, schema(), esc_opt);
        const double rate = static_cast<double>(escape.aggregates.adapted_count) /
                            static_cast<double>(escape.aggregates.total);

        EvalOptions rnd_opt;
        rnd_opt.mode = EvalMode::random_select;
        rnd_opt.random_rate = rate;
        rnd_opt.selector_seed = seed;
        const RunReport random = run_eval(ds.records, cnet, rcnet, schema(), rnd_opt);

        energy_impr += -escape.aggregates.distal_delta;
        random_impr += -random.aggregates.distal_delta;
        std::printf("  [c8] seed %llu: rate %.2f, energy %.4f mm vs random %.4f mm\n",
                    (unsigned long long)seed, rate, -escape.aggregates.distal_delta,
                    -random.aggregates.distal_delta);
    }
    REQUIRE_OR_FAIL(energy_impr >= random_impr,
                    "energy mean improvement %.4f below random %.4f", energy_impr / 5.0,
                    random_impr / 5.0);
    return "";
}

// criterion 9: determinism and isolation

std::string criterion_determinism() {
    // seeded training is bit-identical
    {
        SkeletonModel skel;
        CorruptionModel corr;
        const auto small = generate_records(1500, skel, corr, Split::train, 77, "d").records;
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 128;
        tc.learning_rate = 1e-3;
        tc.seed = 9;
        NetworkConfig nc;
        nc.hidden_dim = 32;
        const TrainResult a = train_cnet(small, schema(), tc, nc);
        const TrainResult b = train_cnet(small, schema(), tc, nc);
        REQUIRE_OR_FAIL(param_checksum(a.net) == param_checksum(b.net),
                        "same-seed training differs");
        TrainConfig tc2 = tc;
        tc2.seed = 10;
        const TrainResult c = train_cnet(small, schema(), tc2, nc);
        REQUIRE_OR_FAIL(param_checksum(a.net) != param_checksum(c.net),
                        "different seeds produced identical nets");
    }
    const Network& cnet = fx.trained_cnet();
    const Network& rcnet = fx.trained_rcnet();
    std::vector<SampleRecord> slice(fx.test().records.begin(), fx.test().records.begin() + 400);

    PipelineConfig pc;
    pc.selector.kind = SelectorKind::energy;
    pc.workers = 2;

    // identical reruns
    const auto r1 = run_pipeline(cnet, rcnet, slice, schema(), pc);
    const auto r2 = run_pipeline(cnet, rcnet, slice, schema(), pc);
    for (std::size_t i = 0; i < slice.size(); ++i)
        REQUIRE_OR_FAIL(r1[i].corrected == r2[i].corrected, "rerun differs at sample %zu", i);

    // rcnet untouched
    const std::uint64_t rc_sum = param_checksum(rcnet);
    run_pipeline(cnet, rcnet, slice, schema(), pc);
    REQUIRE_OR_FAIL(param_checksum(rcnet) == rc_sum, "rcnet changed by a pipeline run");

    // ground-truth isolation
    auto stripped = slice;
    for (auto& rec : stripped) rec.ground_truth.reset();
    const auto r3 = run_pipeline(cnet, rcnet, stripped, schema(), pc);
    for (std::size_t i = 0; i < slice.size(); ++i)
        REQUIRE_OR_FAIL(r1[i].corrected == r3[i].corrected,
                        "stripping gt changed output at sample %zu", i);

    // permutation invariance (episodic)
    auto permuted = slice;
    std::reverse(permuted.begin(), permuted.end());
    const auto r4 = run_pipeline(cnet, rcnet, permuted, schema(), pc);
    for (std::size_t i = 0; i < slice.size(); ++i) {
        const auto& orig = r1[i];
        const auto& perm = r4[slice.size() - 1 - i];
        REQUIRE_OR_FAIL(orig.id == perm.id && orig.corrected == perm.corrected,
                        "permutation changed per-sample result at %zu", i);
    }
    return "";
}

// criterion 10: round-trips

std::string criterion_roundtrips() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path();

    // checkpoint: the full trained network
    const Network& cnet = fx.trained_cnet();
    const std::string ck = (dir / "acceptance_cnet.escn").string();
    save_checkpoint(cnet, ck);
    const Network loaded = load_checkpoint(ck);
    REQUIRE_OR_FAIL(param_checksum(loaded) == param_checksum(cnet), "checkpoint params differ");
    Rng rng(7010);
    const Matrix probe = testutil::random_batch(rng, 3, 51, 200.0);
    REQUIRE_OR_FAIL(forward_eval(loaded, probe).data == forward_eval(cnet, probe).data,
                    "loaded network disagrees on a probe batch");

    // dataset: bit-exact reread and byte-identical rewrite
    const std::string d1 = (dir / "acceptance_ds1.jsonl").string();
    const std::string d2 = (dir / "acceptance_ds2.jsonl").string();
    std::vector<SampleRecord> slice(fx.test().records.begin(), fx.test().records.begin() + 500);
    write_dataset(d1, slice, schema());
    const auto reread = read_dataset(d1, schema());
    REQUIRE_OR_FAIL(reread.size() == slice.size(), "record count changed");
    for (std::size_t i = 0; i < slice.size(); ++i) {
        REQUIRE_OR_FAIL(reread[i].predicted == slice[i].predicted, "pred differs at %zu", i);
        REQUIRE_OR_FAIL(*reread[i].ground_truth == *slice[i].ground_truth, "gt differs at %zu",
                        i);
    }
    write_dataset(d2, reread, schema());
    std::ifstream f1(d1, std::ios::binary), f2(d2, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE_OR_FAIL(s1 == s2, "rewritten dataset is not byte-identical");
    return "";
}

struct Criterion {
    int number;
    const char* name;
    std::function<std::string()> run;
};

} // namespace

int main() {
    gemm_threads() = 2;
    const std::vector<Criterion> criteria = {
        {1, "gradient correctness (L_C, L_R, L_TT vs finite differences)", criterion_gradients},
        {2, "procrustes recovery and pa_mpjpe dominance", criterion_procrustes},
        {3, "energy identities", criterion_energy},
        {4, "energy selection picks harder samples", criterion_selection_quality},
        {5, "correction efficacy vs ridge oracle", criterion_correction_efficacy},
        {6, "self-consistency correlation", criterion_correlation},
        {7, "selective adaptation trade-off", criterion_selective_tradeoff},
        {8, "energy beats random selection", criterion_energy_vs_random},
        {9, "determinism and isolation", criterion_determinism},
        {10, "checkpoint and dataset round-trips", criterion_roundtrips},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const double t0 = now_s();
        std::string reason;
        try {
            reason = c.run();
        } catch (const Failure& f) {
            reason = f.reason;
        } catch (const std::exception& e) {
            reason = std::string("exception: ") + e.what();
        }
        const double dt = now_s() - t0;
        if (reason.empty()) {
            std::printf("PASS criterion %2d: %s (%.1f s)\n", c.number, c.name, dt);
        } else {
            std::printf("FAIL criterion %2d: %s — %s (%.1f s)\n", c.number, c.name,
                        reason.c_str(), dt);
            failures += 1;
        }
        std::fflush(stdout);
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
