#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "escape/common.hpp"
#include "escape/net.hpp"
#include "escape/pose.hpp"

namespace escape {

// Per-joint error estimates for one target joint set (distal for CNet,
// proximal for RCNet), in millimetres.
struct CorrectionOutput {
    std::vector<Vec3> deltas;

    bool finite() const {
        for (const auto& d : deltas)
            if (!d.finite()) return false;
        return true;
    }

    std::vector<double> flatten() const {
        std::vector<double> f;
        f.reserve(deltas.size() * 3);
        for (const auto& d : deltas) {
            f.push_back(d.x);
            f.push_back(d.y);
            f.push_back(d.z);
        }
        return f;
    }

    static CorrectionOutput unflatten(const std::vector<double>& f) {
        CorrectionOutput o;
        o.deltas.resize(f.size() / 3);
        for (std::size_t i = 0; i < o.deltas.size(); ++i)
            o.deltas[i] = {f[3 * i], f[3 * i + 1], f[3 * i + 2]};
        return o;
    }
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 4096;
    double learning_rate = 1e-4;
    double lambda1 = 1.0;
    double lambda2 = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs == 0) throw ArgumentError("epochs must be positive");
        if (batch_size < 2) throw ArgumentError("batch_size must be >= 2");
        if (learning_rate <= 0.0) throw ArgumentError("learning_rate must be positive");
        if (lambda1 < 0.0 || lambda2 < 0.0) throw ArgumentError("lambdas must be >= 0");
    }
};

class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(const std::string& msg, Network last_good)
        : Error(msg), last_good_checkpoint(std::move(last_good)) {}

    Network last_good_checkpoint;
};

// Subtracts the predicted errors from the indexed joints; all other joints
// are copied bit-for-bit.
inline Pose apply_correction(const Pose& pose, const CorrectionOutput& deltas,
                             const std::vector<std::size_t>& indices) {
    if (deltas.deltas.size() != indices.size())
        throw SchemaError("apply_correction: index/delta count mismatch");
    Pose out = pose;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= out.joint_count()) throw SchemaError("apply_correction: index out of range");
        out.joints[indices[i]] = out.joints[indices[i]] - deltas.deltas[i];
    }
    return out;
}

// Training target for the indexed joints: pred - gt, so that the
// subtraction in apply_correction moves the prediction onto the ground
// truth.
inline std::vector<double> correction_target(const Pose& pred, const Pose& gt,
                                             const std::vector<std::size_t>& indices) {
    std::vector<double> t;
    t.reserve(indices.size() * 3);
    for (std::size_t j : indices) {
        const Vec3 d = pred.joints[j] - gt.joints[j];
        t.push_back(d.x);
        t.push_back(d.y);
        t.push_back(d.z);
    }
    return t;
}

struct LossValue {
    double loss = 0.0;
    std::vector<double> grad; // w.r.t. the predicted deltas, flattened
};

// Euclidean norm of the stacked residual between predicted deltas and the
// supervised target for the distal set.
inline LossValue distal_loss(const std::vector<double>& predicted_deltas, const Pose& pose_pred,
                             const Pose& pose_gt, const KeypointSchema& schema) {
    if (!pose_gt.finite() || pose_gt.joint_count() != schema.joint_count)
        throw SupervisionUnavailableError("distal_loss: ground truth missing or invalid");
    const std::vector<double> target = correction_target(pose_pred, pose_gt, schema.distal_indices);
    if (predicted_deltas.size() != target.size())
        throw SchemaError("distal_loss: delta size mismatch");
    LossValue out;
    out.grad.assign(target.size(), 0.0);
    double ss = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double r = predicted_deltas[i] - target[i];
        out.grad[i] = r;
        ss += r * r;
    }
    out.loss = std::sqrt(ss);
    if (out.loss > 0.0)
        for (double& g : out.grad) g /= out.loss;
    else
        std::fill(out.grad.begin(), out.grad.end(), 0.0);
    return out;
}

struct AlignedLossValue {
    double loss = 0.0;
    Gradients net_grads;
    bool used_fallback = false; // degenerate alignment fell back to the plain loss
};

// Eq-style orientation-robust loss: evaluate the net on the prediction
// Procrustes-aligned to the ground truth and penalize against the aligned
// target. The alignment is data preprocessing; no gradient flows through it.
inline AlignedLossValue aligned_distal_loss(Network& net, const Pose& pose_pred,
                                            const Pose& pose_gt, const KeypointSchema& schema) {
    if (!pose_gt.finite() || pose_gt.joint_count() != schema.joint_count)
        throw SupervisionUnavailableError("aligned_distal_loss: ground truth missing");
    Pose input = pose_pred;
    AlignedLossValue out;
    try {
        input = procrustes_align(pose_pred, pose_gt).aligned;
    } catch (const AlignmentDegenerateError&) {
        out.used_fallback = true;
        input = pose_pred;
    }
    const std::vector<double> target = correction_target(input, pose_gt, schema.distal_indices);

    Matrix x(1, input.joint_count() * 3);
    const std::vector<double> flat = input.flatten();
    std::copy(flat.begin(), flat.end(), x.row(0));
    ForwardTrace trace;
    const NetMode saved = net.mode;
    net.mode = NetMode::eval;
    Matrix y = forward(net, x, nullptr, &trace);
    net.mode = saved;

    double ss = 0.0;
    Matrix dout(1, y.cols);
    for (std::size_t i = 0; i < y.cols; ++i) {
        const double r = y.at(0, i) - target[i];
        dout.at(0, i) = r;
        ss += r * r;
    }
    out.loss = std::sqrt(ss);
    if (out.loss > 0.0)
        for (double& g : dout.data) g /= out.loss;
    else
        dout.fill(0.0);
    out.net_grads = backward(net, trace, dout).grads;
    return out;
}

// ---------------------------------------------------------------------------
// Batched training

namespace detail {

// Mean over the batch of per-sample Euclidean residual norms.
struct BatchLoss {
    double loss = 0.0;
    Matrix dout;
};

inline BatchLoss euclidean_batch_loss(const Matrix& out, const Matrix& target) {
    BatchLoss bl;
    bl.dout = Matrix(out.rows, out.cols);
    const double n = static_cast<double>(out.rows);
    for (std::size_t b = 0; b < out.rows; ++b) {
        const double* ob = out.row(b);
        const double* tb = target.row(b);
        double* db = bl.dout.row(b);
        double ss = 0.0;
        for (std::size_t c = 0; c < out.cols; ++c) {
            const double r = ob[c] - tb[c];
            db[c] = r;
            ss += r * r;
        }
        const double norm = std::sqrt(ss);
        bl.loss += norm / n;
        if (norm > 0.0)
            for (std::size_t c = 0; c < out.cols; ++c) db[c] /= norm * n;
        else
            for (std::size_t c = 0; c < out.cols; ++c) db[c] = 0.0;
    }
    return bl;
}

inline Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& order,
                          std::size_t begin, std::size_t end) {
    Matrix out(end - begin, src.cols);
    for (std::size_t i = begin; i < end; ++i) {
        const double* s = src.row(order[i]);
        std::copy(s, s + src.cols, out.row(i - begin));
    }
    return out;
}

} // namespace detail

struct TrainResult {
    Network net;
    std::vector<double> epoch_losses;
    std::size_t degenerate_alignments = 0;
};

struct TrainingSet {
    Matrix inputs;          // flattened root-aligned predictions
    Matrix targets;         // pred - gt on the supervised joint set
    Matrix aligned_inputs;  // flattened Procrustes-aligned predictions
    Matrix aligned_targets; // aligned pred - gt on the supervised joint set
    std::size_t degenerate = 0;
};

// Materializes the supervised tensors for the distal task (loss terms need
// both the raw and the aligned view of every sample).
inline TrainingSet build_distal_training_set(const std::vector<SampleRecord>& records,
                                             const KeypointSchema& schema) {
    if (records.empty()) throw ArgumentError("training set is empty");
    const std::size_t dim = schema.joint_count * 3;
    const std::size_t out_dim = schema.distal_indices.size() * 3;
    TrainingSet ts;
    ts.inputs = Matrix(records.size(), dim);
    ts.targets = Matrix(records.size(), out_dim);
    ts.aligned_inputs = Matrix(records.size(), dim);
    ts.aligned_targets = Matrix(records.size(), out_dim);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const SampleRecord& rec = records[i];
        if (!rec.ground_truth)
            throw SupervisionUnavailableError("record " + rec.id + " lacks ground truth");
        const Pose x = root_align(rec.predicted, schema);
        const Pose y = root_align(*rec.ground_truth, schema);
        const std::vector<double> fx = x.flatten();
        std::copy(fx.begin(), fx.end(), ts.inputs.row(i));
        const std::vector<double> t = correction_target(x, y, schema.distal_indices);
        std::copy(t.begin(), t.end(), ts.targets.row(i));

        Pose xa = x;
        try {
            xa = procrustes_align(x, y).aligned;
        } catch (const AlignmentDegenerateError&) {
            ts.degenerate += 1;
        }
        const std::vector<double> fa = xa.flatten();
        std::copy(fa.begin(), fa.end(), ts.aligned_inputs.row(i));
        const std::vector<double> ta = correction_target(xa, y, schema.distal_indices);
        std::copy(ta.begin(), ta.end(), ts.aligned_targets.row(i));
    }
    return ts;
}

namespace detail {

struct EpochCallback {
    std::function<void(std::size_t, double)> fn;
    void operator()(std::size_t epoch, double loss) const {
        if (fn) fn(epoch, loss);
    }
};

// Shared epoch/batch loop. `use_aligned` enables the second loss term.
inline TrainResult run_training(const TrainingSet& ts, const NetworkConfig& net_cfg,
                                const TrainConfig& cfg, bool use_aligned,
                                const EpochCallback& on_epoch) {
    cfg.validate();
    NetworkConfig nc = net_cfg;
    nc.seed = cfg.seed;
    Network net = make_network(nc);
    net.mode = NetMode::train;
    AdamState adam = make_adam(net, cfg.learning_rate);
    Rng rng(mix_seed(cfg.seed, 0x7261696eULL));

    const std::size_t n = ts.inputs.rows;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainResult result;
    result.degenerate_alignments = ts.degenerate;
    Network last_good = net;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(begin + cfg.batch_size, n);
            if (end - begin < 2) continue; // batch statistics need >= 2 rows
            const Matrix xb = gather_rows(ts.inputs, order, begin, end);
            const Matrix tb = gather_rows(ts.targets, order, begin, end);

            ForwardTrace trace;
            Matrix out = forward(net, xb, &rng, &trace);
            BatchLoss l1 = euclidean_batch_loss(out, tb);
            for (double& g : l1.dout.data) g *= cfg.lambda1;
            BackwardResult b1 = backward(net, trace, l1.dout);

            double batch_loss = cfg.lambda1 * l1.loss;
            Gradients grads = std::move(b1.grads);

            if (use_aligned && cfg.lambda2 > 0.0) {
                const Matrix xa = gather_rows(ts.aligned_inputs, order, begin, end);
                const Matrix ta = gather_rows(ts.aligned_targets, order, begin, end);
                ForwardTrace trace2;
                Matrix out2 = forward(net, xa, &rng, &trace2);
                BatchLoss l2 = euclidean_batch_loss(out2, ta);
                for (double& g : l2.dout.data) g *= cfg.lambda2;
                BackwardResult b2 = backward(net, trace2, l2.dout);
                grads.add_scaled(b2.grads, 1.0);
                batch_loss += cfg.lambda2 * l2.loss;
            }

            if (!std::isfinite(batch_loss))
                throw TrainingDivergedError("training loss became non-finite", last_good);
            adam_step(net, grads, adam);
            epoch_loss += batch_loss * static_cast<double>(end - begin);
            seen += end - begin;
        }
        if (seen == 0) throw ArgumentError("no usable batches (dataset too small?)");
        const double mean_loss = epoch_loss / static_cast<double>(seen);
        result.epoch_losses.push_back(mean_loss);
        on_epoch(epoch, mean_loss);
        last_good = net;
    }

    net.mode = NetMode::eval;
    result.net = std::move(net);
    return result;
}

} // namespace detail

inline NetworkConfig default_cnet_config(const KeypointSchema& schema) {
    NetworkConfig cfg;
    cfg.input_dim = schema.joint_count * 3;
    cfg.output_dim = schema.distal_indices.size() * 3;
    return cfg;
}

inline NetworkConfig default_rcnet_config(const KeypointSchema& schema) {
    NetworkConfig cfg;
    cfg.input_dim = schema.joint_count * 3;
    cfg.output_dim = schema.proximal_indices.size() * 3;
    return cfg;
}

// Supervised distal-error training with both loss terms.
inline TrainResult train_cnet(const std::vector<SampleRecord>& records,
                              const KeypointSchema& schema, const TrainConfig& cfg,
                              const NetworkConfig& net_cfg,
                              const std::function<void(std::size_t, double)>& on_epoch = {}) {
    const TrainingSet ts = build_distal_training_set(records, schema);
    return detail::run_training(ts, net_cfg, cfg, /*use_aligned=*/true, {on_epoch});
}

inline TrainResult train_cnet(const std::vector<SampleRecord>& records,
                              const KeypointSchema& schema, const TrainConfig& cfg) {
    return train_cnet(records, schema, cfg, default_cnet_config(schema));
}

// Runs the trained CNet over a matrix of flattened poses in eval mode.
inline Matrix predict(const Network& net, const Matrix& inputs) {
    return forward_eval(net, inputs);
}

inline CorrectionOutput predict_one(const Network& net, const Pose& pose) {
    Matrix x(1, pose.joint_count() * 3);
    const std::vector<double> f = pose.flatten();
    std::copy(f.begin(), f.end(), x.row(0));
    const Matrix y = forward_eval(net, x);
    return CorrectionOutput::unflatten(std::vector<double>(y.data.begin(), y.data.end()));
}

// Fast-path correction: X^C = X - C(X) on the distal joints.
inline Pose correct_pose(const Network& cnet, const Pose& root_aligned,
                         const KeypointSchema& schema) {
    return apply_correction(root_aligned, predict_one(cnet, root_aligned), schema.distal_indices);
}

// Trains the reverse network on CNet-corrected poses: inputs are X^C, the
// supervision is the proximal error of X^C. CNet itself is only read.
inline TrainResult train_rcnet(const std::vector<SampleRecord>& records, const Network& cnet,
                               const KeypointSchema& schema, const TrainConfig& cfg,
                               const NetworkConfig& net_cfg,
                               const std::function<void(std::size_t, double)>& on_epoch = {}) {
    if (records.empty()) throw ArgumentError("training set is empty");
    if (cnet.mode != NetMode::eval)
        throw SequencingError("train_rcnet: CNet must be in eval mode");
    const std::size_t dim = schema.joint_count * 3;

    // Materialize X^C for the whole training set in one batched pass.
    Matrix inputs(records.size(), dim);
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].ground_truth)
            throw SupervisionUnavailableError("record " + records[i].id + " lacks ground truth");
        const Pose x = root_align(records[i].predicted, schema);
        const std::vector<double> f = x.flatten();
        std::copy(f.begin(), f.end(), inputs.row(i));
    }
    const Matrix deltas = predict(cnet, inputs);
    TrainingSet ts;
    ts.inputs = Matrix(records.size(), dim);
    ts.targets = Matrix(records.size(), schema.proximal_indices.size() * 3);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Pose x = root_align(records[i].predicted, schema);
        const Pose y = root_align(*records[i].ground_truth, schema);
        CorrectionOutput co = CorrectionOutput::unflatten(
            std::vector<double>(deltas.row(i), deltas.row(i) + deltas.cols));
        const Pose xc = apply_correction(x, co, schema.distal_indices);
        const std::vector<double> f = xc.flatten();
        std::copy(f.begin(), f.end(), ts.inputs.row(i));
        const std::vector<double> t = correction_target(xc, y, schema.proximal_indices);
        std::copy(t.begin(), t.end(), ts.targets.row(i));
    }
    return detail::run_training(ts, net_cfg, cfg, /*use_aligned=*/false, {on_epoch});
}

inline TrainResult train_rcnet(const std::vector<SampleRecord>& records, const Network& cnet,
                               const KeypointSchema& schema, const TrainConfig& cfg) {
    return train_rcnet(records, cnet, schema, cfg, default_rcnet_config(schema));
}

} // namespace escape
