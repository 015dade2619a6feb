#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "escape/common.hpp"
#include "escape/linalg.hpp"
#include "escape/rng.hpp"

namespace escape {

struct NetworkConfig {
    std::size_t input_dim = 51;
    std::size_t hidden_dim = 512;
    std::size_t residual_blocks = 1;
    std::size_t output_dim = 12;
    double dropout_rate = 0.3;
    std::uint64_t seed = 0;

    void validate() const {
        if (input_dim == 0 || hidden_dim == 0 || output_dim == 0)
            throw ArgumentError("network dims must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ArgumentError("dropout_rate must be in [0, 1)");
    }

    bool same_shape(const NetworkConfig& o) const {
        return input_dim == o.input_dim && hidden_dim == o.hidden_dim &&
               residual_blocks == o.residual_blocks && output_dim == o.output_dim;
    }
};

struct LinearLayer {
    Matrix w; // in x out
    std::vector<double> b;
};

struct BatchNormLayer {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
};

enum class NetMode { train, eval };

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.1;

// Residual MLP: embedding sub-block, N residual blocks of two sub-blocks
// each wrapped by an additive skip, and a final linear layer. Every
// sub-block is linear -> batch norm -> ReLU -> dropout.
struct Network {
    NetworkConfig config;
    LinearLayer emb;
    BatchNormLayer emb_bn;
    struct ResidualBlock {
        LinearLayer l1;
        BatchNormLayer bn1;
        LinearLayer l2;
        BatchNormLayer bn2;
    };
    std::vector<ResidualBlock> blocks;
    LinearLayer out;
    NetMode mode = NetMode::eval;
    std::uint64_t param_version = 0; // bumped whenever parameters change
};

namespace detail {

inline LinearLayer make_linear(std::size_t in, std::size_t out, Rng& rng) {
    LinearLayer l;
    l.w = Matrix(in, out);
    l.b.assign(out, 0.0);
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (double& v : l.w.data) v = rng.uniform(-bound, bound);
    return l;
}

inline BatchNormLayer make_bn(std::size_t dim) {
    BatchNormLayer bn;
    bn.gamma.assign(dim, 1.0);
    bn.beta.assign(dim, 0.0);
    bn.running_mean.assign(dim, 0.0);
    bn.running_var.assign(dim, 1.0);
    return bn;
}

} // namespace detail

inline Network make_network(const NetworkConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    Network net;
    net.config = cfg;
    net.emb = detail::make_linear(cfg.input_dim, cfg.hidden_dim, rng);
    net.emb_bn = detail::make_bn(cfg.hidden_dim);
    net.blocks.resize(cfg.residual_blocks);
    for (auto& blk : net.blocks) {
        blk.l1 = detail::make_linear(cfg.hidden_dim, cfg.hidden_dim, rng);
        blk.bn1 = detail::make_bn(cfg.hidden_dim);
        blk.l2 = detail::make_linear(cfg.hidden_dim, cfg.hidden_dim, rng);
        blk.bn2 = detail::make_bn(cfg.hidden_dim);
    }
    net.out = detail::make_linear(cfg.hidden_dim, cfg.output_dim, rng);
    return net;
}

// Trainable tensors in declaration order. Keeping a single enumeration here
// means Adam state, gradients, checkpoints, and checksums can never disagree
// about ordering.
template <typename NetT, typename Fn>
void visit_params(NetT& net, Fn&& fn) {
    fn(net.emb.w.data);
    fn(net.emb.b);
    fn(net.emb_bn.gamma);
    fn(net.emb_bn.beta);
    for (auto& blk : net.blocks) {
        fn(blk.l1.w.data);
        fn(blk.l1.b);
        fn(blk.bn1.gamma);
        fn(blk.bn1.beta);
        fn(blk.l2.w.data);
        fn(blk.l2.b);
        fn(blk.bn2.gamma);
        fn(blk.bn2.beta);
    }
    fn(net.out.w.data);
    fn(net.out.b);
}

// Parameters plus batch-norm running statistics (checkpoint payload order).
template <typename NetT, typename Fn>
void visit_state(NetT& net, Fn&& fn) {
    fn(net.emb.w.data);
    fn(net.emb.b);
    fn(net.emb_bn.gamma);
    fn(net.emb_bn.beta);
    fn(net.emb_bn.running_mean);
    fn(net.emb_bn.running_var);
    for (auto& blk : net.blocks) {
        fn(blk.l1.w.data);
        fn(blk.l1.b);
        fn(blk.bn1.gamma);
        fn(blk.bn1.beta);
        fn(blk.bn1.running_mean);
        fn(blk.bn1.running_var);
        fn(blk.l2.w.data);
        fn(blk.l2.b);
        fn(blk.bn2.gamma);
        fn(blk.bn2.beta);
        fn(blk.bn2.running_mean);
        fn(blk.bn2.running_var);
    }
    fn(net.out.w.data);
    fn(net.out.b);
}

inline std::uint64_t param_checksum(const Network& net) {
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a over raw parameter bytes
    visit_params(net, [&](const std::vector<double>& t) {
        for (double v : t) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xffULL;
                h *= 1099511628211ULL;
            }
        }
    });
    return h;
}

// ---------------------------------------------------------------------------
// Forward / backward

// Everything backward needs, captured per sub-block during the forward pass.
struct SubBlockTrace {
    const Matrix* input = nullptr; // borrowed from the owning trace
    Matrix xhat;                   // normalized pre-activation
    std::vector<double> inv_std;   // per feature
    std::vector<std::uint8_t> relu_keep;
    std::vector<std::uint8_t> drop_keep; // empty when dropout inactive
};

struct ForwardTrace {
    NetMode mode = NetMode::eval;
    std::uint64_t param_version = 0;
    std::size_t batch = 0;
    Matrix input;
    Matrix emb_out; // after embedding sub-block
    SubBlockTrace emb_trace;
    struct BlockTrace {
        SubBlockTrace s1;
        SubBlockTrace s2;
        Matrix mid;      // after first sub-block
        Matrix residual; // block output (input + second sub-block)
    };
    std::vector<BlockTrace> blocks;
};

namespace detail {

// linear -> batch norm -> ReLU -> dropout. `x` must stay alive while the
// trace is used (the trace borrows it).
inline Matrix sub_block_forward(const Matrix& x, const LinearLayer& lin, BatchNormLayer& bn,
                                NetMode mode, double dropout_rate, Rng* rng,
                                SubBlockTrace* trace, bool update_running) {
    const std::size_t batch = x.rows;
    const std::size_t dim = lin.w.cols;
    Matrix z;
    matmul(x, lin.w, z);
    for (std::size_t b = 0; b < batch; ++b) {
        double* zb = z.row(b);
        for (std::size_t f = 0; f < dim; ++f) zb[f] += lin.b[f];
    }

    std::vector<double> mean(dim), inv_std(dim);
    if (mode == NetMode::train) {
        const double n = static_cast<double>(batch);
        std::vector<double> var(dim, 0.0);
        for (std::size_t f = 0; f < dim; ++f) mean[f] = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* zb = z.row(b);
            for (std::size_t f = 0; f < dim; ++f) mean[f] += zb[f];
        }
        for (std::size_t f = 0; f < dim; ++f) mean[f] /= n;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* zb = z.row(b);
            for (std::size_t f = 0; f < dim; ++f) {
                const double d = zb[f] - mean[f];
                var[f] += d * d;
            }
        }
        for (std::size_t f = 0; f < dim; ++f) var[f] /= n;
        for (std::size_t f = 0; f < dim; ++f) inv_std[f] = 1.0 / std::sqrt(var[f] + kBnEpsilon);
        if (update_running) {
            const double unbias = n / (n - 1.0);
            for (std::size_t f = 0; f < dim; ++f) {
                bn.running_mean[f] = (1.0 - kBnMomentum) * bn.running_mean[f] + kBnMomentum * mean[f];
                bn.running_var[f] =
                    (1.0 - kBnMomentum) * bn.running_var[f] + kBnMomentum * var[f] * unbias;
            }
        }
    } else {
        for (std::size_t f = 0; f < dim; ++f) {
            mean[f] = bn.running_mean[f];
            inv_std[f] = 1.0 / std::sqrt(bn.running_var[f] + kBnEpsilon);
        }
    }

    Matrix xhat(batch, dim);
    Matrix y(batch, dim);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* zb = z.row(b);
        double* xh = xhat.row(b);
        double* yb = y.row(b);
        for (std::size_t f = 0; f < dim; ++f) {
            xh[f] = (zb[f] - mean[f]) * inv_std[f];
            yb[f] = bn.gamma[f] * xh[f] + bn.beta[f];
        }
    }

    const bool dropout_active = mode == NetMode::train && dropout_rate > 0.0;
    std::vector<std::uint8_t> relu_keep(batch * dim);
    std::vector<std::uint8_t> drop_keep;
    if (dropout_active) drop_keep.resize(batch * dim);
    const double drop_scale = dropout_active ? 1.0 / (1.0 - dropout_rate) : 1.0;
    for (std::size_t b = 0; b < batch; ++b) {
        double* yb = y.row(b);
        std::uint8_t* rk = relu_keep.data() + b * dim;
        for (std::size_t f = 0; f < dim; ++f) {
            const bool keep = yb[f] > 0.0;
            rk[f] = keep;
            if (!keep) yb[f] = 0.0;
        }
        if (dropout_active) {
            std::uint8_t* dk = drop_keep.data() + b * dim;
            for (std::size_t f = 0; f < dim; ++f) {
                const bool keep = !rng->bernoulli(dropout_rate);
                dk[f] = keep;
                yb[f] = keep ? yb[f] * drop_scale : 0.0;
            }
        }
    }

    if (trace) {
        trace->input = &x;
        trace->xhat = std::move(xhat);
        trace->inv_std = std::move(inv_std);
        trace->relu_keep = std::move(relu_keep);
        trace->drop_keep = std::move(drop_keep);
    }
    return y;
}

} // namespace detail

// Runs the network on a batch (rows = samples). In train mode batch
// statistics require B >= 2 and dropout draws from `rng`; in eval mode the
// pass is deterministic and `rng` is ignored. Pass a trace to enable
// backward().
inline Matrix forward(Network& net, const Matrix& batch, Rng* rng = nullptr,
                      ForwardTrace* trace = nullptr, bool update_running = true) {
    if (batch.cols != net.config.input_dim) throw SchemaError("forward: input dim mismatch");
    for (double v : batch.data)
        if (!std::isfinite(v)) throw InvalidPoseError("forward: non-finite input");
    const bool train = net.mode == NetMode::train;
    if (train && batch.rows < 2)
        throw BatchTooSmallError("forward: train mode needs batch size >= 2");
    if (train && net.config.dropout_rate > 0.0 && rng == nullptr)
        throw ArgumentError("forward: train mode with dropout needs an rng");

    if (trace) {
        trace->mode = net.mode;
        trace->param_version = net.param_version;
        trace->batch = batch.rows;
        trace->input = batch;
        trace->blocks.assign(net.blocks.size(), {});
    }

    const Matrix& in = trace ? trace->input : batch;
    Matrix h = detail::sub_block_forward(in, net.emb, net.emb_bn, net.mode,
                                         net.config.dropout_rate, rng,
                                         trace ? &trace->emb_trace : nullptr, update_running);
    if (trace) trace->emb_out = h;

    for (std::size_t k = 0; k < net.blocks.size(); ++k) {
        auto& blk = net.blocks[k];
        ForwardTrace::BlockTrace* bt = trace ? &trace->blocks[k] : nullptr;
        const Matrix& block_in = trace ? (k == 0 ? trace->emb_out : trace->blocks[k - 1].residual) : h;
        Matrix mid = detail::sub_block_forward(block_in, blk.l1, blk.bn1, net.mode,
                                               net.config.dropout_rate, rng, bt ? &bt->s1 : nullptr,
                                               update_running);
        if (bt) bt->mid = std::move(mid);
        const Matrix& mid_ref = bt ? bt->mid : mid;
        Matrix sub2 = detail::sub_block_forward(mid_ref, blk.l2, blk.bn2, net.mode,
                                                net.config.dropout_rate, rng, bt ? &bt->s2 : nullptr,
                                                update_running);
        // additive skip
        Matrix res(block_in.rows, block_in.cols);
        for (std::size_t i = 0; i < res.data.size(); ++i)
            res.data[i] = block_in.data[i] + sub2.data[i];
        if (bt) {
            bt->residual = std::move(res);
            h = bt->residual;
        } else {
            h = std::move(res);
        }
    }

    Matrix y;
    matmul(h, net.out.w, y);
    for (std::size_t b = 0; b < y.rows; ++b) {
        double* yb = y.row(b);
        for (std::size_t o = 0; o < y.cols; ++o) yb[o] += net.out.b[o];
    }
    return y;
}

// Deterministic eval-statistics pass usable concurrently from many threads.
inline Matrix forward_eval(const Network& net, const Matrix& batch) {
    if (net.mode != NetMode::eval) throw SequencingError("forward_eval: network not in eval mode");
    Network& mut = const_cast<Network&>(net); // eval path never writes
    return forward(mut, batch);
}

struct Gradients {
    std::vector<std::vector<double>> tensors; // visit_params order

    static Gradients zeros_like(const Network& net) {
        Gradients g;
        visit_params(net, [&](const std::vector<double>& t) { g.tensors.emplace_back(t.size(), 0.0); });
        return g;
    }

    void add_scaled(const Gradients& o, double s) {
        for (std::size_t i = 0; i < tensors.size(); ++i)
            for (std::size_t j = 0; j < tensors[i].size(); ++j) tensors[i][j] += s * o.tensors[i][j];
    }
};

struct BackwardResult {
    Gradients grads;
    Matrix input_grad;
};

namespace detail {

struct GradSink {
    std::vector<std::vector<double>>* tensors;
    std::size_t next = 0;
    std::vector<double>& take() { return (*tensors)[next++]; }
};

// Backward through one sub-block. `d` arrives as dL/d(sub-block output) and
// leaves as dL/d(sub-block input); parameter gradients are accumulated.
inline Matrix sub_block_backward(const SubBlockTrace& tr, const LinearLayer& lin,
                                 const BatchNormLayer& bn, NetMode mode, double dropout_rate,
                                 Matrix d, std::vector<double>& dw, std::vector<double>& db,
                                 std::vector<double>& dgamma, std::vector<double>& dbeta) {
    const std::size_t batch = d.rows;
    const std::size_t dim = d.cols;
    const double drop_scale = 1.0 / (1.0 - dropout_rate);

    for (std::size_t b = 0; b < batch; ++b) {
        double* db_row = d.row(b);
        const std::uint8_t* rk = tr.relu_keep.data() + b * dim;
        const std::uint8_t* dk = tr.drop_keep.empty() ? nullptr : tr.drop_keep.data() + b * dim;
        for (std::size_t f = 0; f < dim; ++f) {
            double g = db_row[f];
            if (dk) g = dk[f] ? g * drop_scale : 0.0;
            db_row[f] = rk[f] ? g : 0.0;
        }
    }

    // batch norm
    Matrix dz(batch, dim);
    if (mode == NetMode::train) {
        std::vector<double> sum_dxhat(dim, 0.0), sum_dxhat_xhat(dim, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* dy = d.row(b);
            const double* xh = tr.xhat.row(b);
            for (std::size_t f = 0; f < dim; ++f) {
                dgamma[f] += dy[f] * xh[f];
                dbeta[f] += dy[f];
                const double dxh = dy[f] * bn.gamma[f];
                sum_dxhat[f] += dxh;
                sum_dxhat_xhat[f] += dxh * xh[f];
            }
        }
        const double n = static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* dy = d.row(b);
            const double* xh = tr.xhat.row(b);
            double* dzb = dz.row(b);
            for (std::size_t f = 0; f < dim; ++f) {
                const double dxh = dy[f] * bn.gamma[f];
                dzb[f] = (tr.inv_std[f] / n) * (n * dxh - sum_dxhat[f] - xh[f] * sum_dxhat_xhat[f]);
            }
        }
    } else {
        for (std::size_t b = 0; b < batch; ++b) {
            const double* dy = d.row(b);
            const double* xh = tr.xhat.row(b);
            double* dzb = dz.row(b);
            for (std::size_t f = 0; f < dim; ++f) {
                dgamma[f] += dy[f] * xh[f];
                dbeta[f] += dy[f];
                dzb[f] = dy[f] * bn.gamma[f] * tr.inv_std[f];
            }
        }
    }

    // linear
    Matrix dwm(lin.w.rows, lin.w.cols);
    accumulate_outer(*tr.input, dz, dwm);
    for (std::size_t i = 0; i < dwm.data.size(); ++i) dw[i] += dwm.data[i];
    for (std::size_t b = 0; b < batch; ++b) {
        const double* dzb = dz.row(b);
        for (std::size_t f = 0; f < dim; ++f) db[f] += dzb[f];
    }
    Matrix dx;
    matmul_transposed(dz, lin.w, dx);
    return dx;
}

} // namespace detail

// Exact gradients for every trainable parameter plus the input, given
// dL/d(output). The trace must come from a forward on the current
// parameters.
inline BackwardResult backward(const Network& net, const ForwardTrace& trace,
                               const Matrix& loss_grad) {
    if (trace.param_version != net.param_version)
        throw SequencingError("backward: stale forward trace");
    if (loss_grad.rows != trace.batch || loss_grad.cols != net.config.output_dim)
        throw SchemaError("backward: loss gradient shape mismatch");

    BackwardResult res;
    res.grads = Gradients::zeros_like(net);

    // Map tensors back to named slots (visit order).
    std::vector<std::vector<double>*> slots;
    for (auto& t : res.grads.tensors) slots.push_back(&t);
    std::size_t si = 0;
    auto next = [&]() -> std::vector<double>& { return *slots[si++]; };
    std::vector<double>& g_emb_w = next();
    std::vector<double>& g_emb_b = next();
    std::vector<double>& g_emb_gamma = next();
    std::vector<double>& g_emb_beta = next();
    struct BlockSlots {
        std::vector<double>*w1, *b1, *g1, *be1, *w2, *b2, *g2, *be2;
    };
    std::vector<BlockSlots> bslots;
    for (std::size_t k = 0; k < net.blocks.size(); ++k)
        bslots.push_back({&next(), &next(), &next(), &next(), &next(), &next(), &next(), &next()});
    std::vector<double>& g_out_w = next();
    std::vector<double>& g_out_b = next();

    // output linear
    const Matrix& last = net.blocks.empty() ? trace.emb_out : trace.blocks.back().residual;
    Matrix dwm(net.out.w.rows, net.out.w.cols);
    accumulate_outer(last, loss_grad, dwm);
    for (std::size_t i = 0; i < dwm.data.size(); ++i) g_out_w[i] += dwm.data[i];
    for (std::size_t b = 0; b < loss_grad.rows; ++b) {
        const double* lg = loss_grad.row(b);
        for (std::size_t o = 0; o < loss_grad.cols; ++o) g_out_b[o] += lg[o];
    }
    Matrix d;
    matmul_transposed(loss_grad, net.out.w, d);

    // residual blocks, reversed
    for (std::size_t k = net.blocks.size(); k-- > 0;) {
        const auto& blk = net.blocks[k];
        const auto& bt = trace.blocks[k];
        const auto& sl = bslots[k];
        Matrix d_sub = detail::sub_block_backward(bt.s2, blk.l2, blk.bn2, trace.mode,
                                                  net.config.dropout_rate, d, *sl.w2, *sl.b2,
                                                  *sl.g2, *sl.be2);
        Matrix d_in = detail::sub_block_backward(bt.s1, blk.l1, blk.bn1, trace.mode,
                                                 net.config.dropout_rate, std::move(d_sub), *sl.w1,
                                                 *sl.b1, *sl.g1, *sl.be1);
        // skip connection adds the incoming gradient unchanged
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += d_in.data[i];
    }

    res.input_grad = detail::sub_block_backward(trace.emb_trace, net.emb, net.emb_bn, trace.mode,
                                                net.config.dropout_rate, std::move(d), g_emb_w,
                                                g_emb_b, g_emb_gamma, g_emb_beta);
    return res;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    std::size_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

inline AdamState make_adam(const Network& net, double lr) {
    AdamState st;
    st.lr = lr;
    visit_params(net, [&](const std::vector<double>& t) {
        st.m.emplace_back(t.size(), 0.0);
        st.v.emplace_back(t.size(), 0.0);
    });
    return st;
}

// Bias-corrected Adam update. Non-finite gradients reject the whole step and
// leave parameters untouched.
inline void adam_step(Network& net, const Gradients& grads, AdamState& state) {
    std::size_t idx = 0;
    visit_params(net, [&](std::vector<double>& t) {
        if (idx >= grads.tensors.size() || grads.tensors[idx].size() != t.size())
            throw SchemaError("adam_step: gradient shape mismatch");
        ++idx;
    });
    for (const auto& t : grads.tensors)
        for (double g : t)
            if (!std::isfinite(g)) throw UpdateRejectedError("adam_step: non-finite gradient");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    idx = 0;
    visit_params(net, [&](std::vector<double>& t) {
        const std::vector<double>& g = grads.tensors[idx];
        std::vector<double>& m = state.m[idx];
        std::vector<double>& v = state.v[idx];
        for (std::size_t j = 0; j < t.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            t[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
        ++idx;
    });
    net.param_version += 1;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "ESCN", u32 version, config block, then every state
// tensor in declaration order as a length-prefixed array of doubles. All
// fields little-endian.

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
}

inline bool read_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return true;
}

inline bool read_u64(std::istream& is, std::uint64_t& v) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return true;
}

inline bool read_f64(std::istream& is, double& d) {
    std::uint64_t bits;
    if (!read_u64(is, bits)) return false;
    std::memcpy(&d, &bits, 8);
    return true;
}

} // namespace detail

inline void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("save_checkpoint: cannot open " + path);
    os.write("ESCN", 4);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(net.config.input_dim));
    detail::write_u32(os, static_cast<std::uint32_t>(net.config.hidden_dim));
    detail::write_u32(os, static_cast<std::uint32_t>(net.config.residual_blocks));
    detail::write_u32(os, static_cast<std::uint32_t>(net.config.output_dim));
    detail::write_f64(os, net.config.dropout_rate);
    detail::write_u64(os, net.config.seed);
    visit_state(net, [&](const std::vector<double>& t) {
        detail::write_u64(os, t.size());
        for (double v : t) detail::write_f64(os, v);
    });
    if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

inline Network load_checkpoint(const std::string& path,
                               const NetworkConfig* expected = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "ESCN", 4) != 0)
        throw IncompatibleCheckpointError("load_checkpoint: bad magic");
    std::uint32_t version = 0;
    if (!detail::read_u32(is, version)) throw CorruptCheckpointError("load_checkpoint: truncated header");
    if (version != kCheckpointVersion)
        throw IncompatibleCheckpointError("load_checkpoint: unsupported version");

    NetworkConfig cfg;
    std::uint32_t u = 0;
    if (!detail::read_u32(is, u)) throw CorruptCheckpointError("load_checkpoint: truncated config");
    cfg.input_dim = u;
    if (!detail::read_u32(is, u)) throw CorruptCheckpointError("load_checkpoint: truncated config");
    cfg.hidden_dim = u;
    if (!detail::read_u32(is, u)) throw CorruptCheckpointError("load_checkpoint: truncated config");
    cfg.residual_blocks = u;
    if (!detail::read_u32(is, u)) throw CorruptCheckpointError("load_checkpoint: truncated config");
    cfg.output_dim = u;
    if (!detail::read_f64(is, cfg.dropout_rate))
        throw CorruptCheckpointError("load_checkpoint: truncated config");
    if (!detail::read_u64(is, cfg.seed))
        throw CorruptCheckpointError("load_checkpoint: truncated config");
    cfg.validate();

    if (expected && !cfg.same_shape(*expected))
        throw IncompatibleCheckpointError("load_checkpoint: config mismatch");

    Network net = make_network(cfg);
    visit_state(net, [&](std::vector<double>& t) {
        std::uint64_t count = 0;
        if (!detail::read_u64(is, count)) throw CorruptCheckpointError("load_checkpoint: truncated tensor");
        if (count != t.size()) throw IncompatibleCheckpointError("load_checkpoint: tensor size mismatch");
        for (std::size_t i = 0; i < t.size(); ++i)
            if (!detail::read_f64(is, t[i]))
                throw CorruptCheckpointError("load_checkpoint: truncated tensor data");
    });
    char extra;
    if (is.read(&extra, 1)) throw CorruptCheckpointError("load_checkpoint: trailing bytes");
    net.mode = NetMode::eval;
    net.param_version = 0;
    return net;
}

} // namespace escape
