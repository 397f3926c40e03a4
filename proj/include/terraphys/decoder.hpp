#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "terraphys/common.hpp"
#include "terraphys/episode.hpp"
#include "terraphys/gait.hpp"
#include "terraphys/numkit/rng.hpp"
#include "terraphys/numkit/tape.hpp"
#include "terraphys/numkit/tensor.hpp"
#include "terraphys/numkit/weights_io.hpp"

namespace terraphys::decoder {

using numkit::Tape;
using numkit::Tensor;

// Network sizes. Defaults mirror the deployed decoder; tests shrink every
// dimension so exhaustive finite-difference sweeps stay cheap.
struct DecoderDims {
    int obs_p = sim::kObsProprioDims;
    int obs_g = sim::kObsGeometryDims;
    int hidden = 100;
    int window = 50;
    int head1 = 64, head2 = 32;
    int gate1 = 64, gate2 = 64;
    int outputs = sim::kNumFeet;
    bool gated = true; // false = combined-path-only ablation baseline

    int combined() const { return obs_p + obs_g; }
};

// Flat parameter registry: enum order is the single source of truth for
// initialization draws, optimizer slots, and weight-file layout.
enum Param : int {
    kPwIh, kPuHh, kPb,
    kPwq, kPbq, kPwk, kPbk, kPwv, kPbv,
    kPh1w, kPh1b, kPh2w, kPh2b, kPh3w, kPh3b,
    kCwIh, kCuHh, kCb,
    kCwq, kCbq, kCwk, kCbk, kCwv, kCbv,
    kCh1w, kCh1b, kCh2w, kCh2b, kCh3w, kCh3b,
    kG1w, kG1b, kG2w, kG2b, kG3w, kG3b,
    kParamCount,
};

inline const char* param_name(int i) {
    constexpr const char* names[kParamCount] = {
        "p.gru.w_ih", "p.gru.u_hh", "p.gru.b",
        "p.attn.wq", "p.attn.bq", "p.attn.wk", "p.attn.bk", "p.attn.wv", "p.attn.bv",
        "p.head.w1", "p.head.b1", "p.head.w2", "p.head.b2", "p.head.w3", "p.head.b3",
        "c.gru.w_ih", "c.gru.u_hh", "c.gru.b",
        "c.attn.wq", "c.attn.bq", "c.attn.wk", "c.attn.bk", "c.attn.wv", "c.attn.bv",
        "c.head.w1", "c.head.b1", "c.head.w2", "c.head.b2", "c.head.w3", "c.head.b3",
        "gate.w1", "gate.b1", "gate.w2", "gate.b2", "gate.w3", "gate.b3",
    };
    if (i < 0 || i >= kParamCount) fail("param_name: index ", i, " out of range");
    return names[i];
}

inline std::array<int, 2> param_shape(int i, const DecoderDims& d) {
    const int H = d.hidden;
    switch (i) {
    case kPwIh: return {d.obs_p, 3 * H};
    case kCwIh: return {d.combined(), 3 * H};
    case kPuHh: case kCuHh: return {H, 3 * H};
    case kPb: case kCb: return {1, 3 * H};
    case kPwq: case kPwk: case kPwv: case kCwq: case kCwk: case kCwv: return {H, H};
    case kPbq: case kPbk: case kPbv: case kCbq: case kCbk: case kCbv: return {1, H};
    case kPh1w: case kCh1w: return {H, d.head1};
    case kPh1b: case kCh1b: return {1, d.head1};
    case kPh2w: case kCh2w: return {d.head1, d.head2};
    case kPh2b: case kCh2b: return {1, d.head2};
    case kPh3w: case kCh3w: return {d.head2, d.outputs};
    case kPh3b: case kCh3b: return {1, d.outputs};
    case kG1w: return {2 * H, d.gate1};
    case kG1b: return {1, d.gate1};
    case kG2w: return {d.gate1, d.gate2};
    case kG2b: return {1, d.gate2};
    case kG3w: return {d.gate2, d.outputs};
    case kG3b: return {1, d.outputs};
    default: fail("param_shape: index ", i, " out of range");
    }
}

// The baseline variant only ever touches the combined path.
inline bool is_combined_path_param(int i) { return i >= kCwIh && i <= kCh3b; }

using NetParams = std::vector<Tensor>; // indexed by Param, size kParamCount

inline NetParams init_net(const DecoderDims& d, numkit::Rng& rng) {
    NetParams net(kParamCount);
    for (int i = 0; i < kParamCount; ++i) {
        const auto shape = param_shape(i, d);
        Tensor t = Tensor::zeros({shape[0], shape[1]});
        if (shape[0] > 1) { // weight matrix: scale by fan-in; biases stay zero
            const double scale = 1.0 / std::sqrt(static_cast<double>(shape[0]));
            for (double& v : t.values) v = rng.normal(0.0, scale);
        }
        net[i] = std::move(t);
    }
    return net;
}

inline long long parameter_count(const DecoderDims& d) {
    long long n = 0;
    for (int i = 0; i < kParamCount; ++i) {
        const auto s = param_shape(i, d);
        n += static_cast<long long>(s[0]) * s[1];
    }
    return n;
}

// Frozen normalization for one label kind, fitted once from training labels.
struct LabelNorm {
    double mean = 0.0, std = 1.0;
    double normalize(double y) const { return (y - mean) / std; }
    double denormalize(double z) const { return mean + z * std; }
};

struct DecoderModel {
    DecoderDims dims;
    NetParams friction_net, stiffness_net;
    LabelNorm mu_norm, s_norm;
};

inline DecoderModel init_model(const DecoderDims& d, std::uint64_t seed) {
    numkit::Rng rng(numkit::Rng::derive_seed(seed, 0xdec0));
    DecoderModel m;
    m.dims = d;
    m.friction_net = init_net(d, rng);
    m.stiffness_net = init_net(d, rng);
    return m;
}

// Pushes the network's parameters as tape leaves, in enum order. The baseline
// variant skips the proprioception path and the gate; their slots stay -1.
inline std::vector<int> push_params(Tape& tp, const NetParams& net, const DecoderDims& d,
                                    bool requires_grad) {
    if (net.size() != kParamCount) fail("push_params: registry has ", net.size(), " entries");
    std::vector<int> ids(kParamCount, -1);
    for (int i = 0; i < kParamCount; ++i) {
        if (!d.gated && !is_combined_path_param(i)) continue;
        ids[i] = tp.leaf(net[i], requires_grad);
    }
    return ids;
}

namespace detail {

// Attention mask for one window layout shared by every window in the batch:
// position i may attend to j <= i (prediction at i must not see the future),
// and never to zero-padded history slots j < pad.
inline Tensor causal_mask(int T, int B, int pad) {
    Tensor m = Tensor::zeros({B * T, T});
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < T; ++i)
            for (int j = 0; j < T; ++j)
                if (j > i || j < pad) m.at(b * T + i, j) = -1e9;
    return m;
}

inline int mlp3(Tape& tp, int x, int w1, int b1, int w2, int b2, int w3, int b3,
                bool sigmoid_out) {
    const int h1 = tp.leaky_relu(tp.add(tp.matmul(x, w1), b1));
    const int h2 = tp.leaky_relu(tp.add(tp.matmul(h1, w2), b2));
    const int out = tp.add(tp.matmul(h2, w3), b3);
    return sigmoid_out ? tp.sigmoid(out) : out;
}

// One path: GRU over the window, self-attention over its outputs. Input is
// time-major [T*B, in]; returns per-timestep context, batch-major [B*T, H].
inline int gru_attention_path(Tape& tp, const std::vector<int>& ids, int base, int x_tm,
                              int T, int B, int H, int mask) {
    const int xproj = tp.add(tp.matmul(x_tm, ids[base + 0]), ids[base + 2]); // [T*B, 3H]
    int h = tp.leaf(Tensor::zeros({B, H})); // hidden resets to zeros per window
    std::vector<int> hs;
    hs.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        const int xt = tp.slice(xproj, t * B, (t + 1) * B, 0, 3 * H);
        const int hp = tp.matmul(h, ids[base + 1]);
        const int r = tp.sigmoid(tp.add(tp.slice(xt, 0, B, 0, H), tp.slice(hp, 0, B, 0, H)));
        const int z =
            tp.sigmoid(tp.add(tp.slice(xt, 0, B, H, 2 * H), tp.slice(hp, 0, B, H, 2 * H)));
        const int n = tp.tanh_op(tp.add(tp.slice(xt, 0, B, 2 * H, 3 * H),
                                        tp.mul(r, tp.slice(hp, 0, B, 2 * H, 3 * H))));
        h = tp.add(n, tp.mul(z, tp.sub(h, n)));
        hs.push_back(h);
    }
    const int seq = tp.time_to_batch_major(tp.stack_rows(hs), T, B); // [B*T, H]
    const int q = tp.add(tp.matmul(seq, ids[base + 3]), ids[base + 4]);
    const int k = tp.add(tp.matmul(seq, ids[base + 5]), ids[base + 6]);
    const int v = tp.add(tp.matmul(seq, ids[base + 7]), ids[base + 8]);
    const int scores =
        tp.scale(tp.block_matmul_nt(q, k, T), 1.0 / std::sqrt(static_cast<double>(H)));
    const int weights = tp.softmax_rows(tp.add(scores, mask));
    return tp.block_matmul_nn(weights, v, T);
}

} // namespace detail

struct SeqForward {
    int y_seq = -1; // [B*T, outputs], normalized scale
    int gate = -1;  // [B*T, outputs]; -1 for the baseline variant
    int y_p = -1;   // proprioception-path head output
    int y_c = -1;   // combined-path head output
};

// Full network forward for a batch of equal-length windows. op_tm/og_tm are
// time-major leaves [T*B, obs_p] / [T*B, obs_g]; y_seq row b*T+t holds the
// prediction at window b, timestep t, computed from observations <= t only.
inline SeqForward net_forward(Tape& tp, const std::vector<int>& ids, const DecoderDims& d,
                              int op_tm, int og_tm, int B, int pad = 0) {
    const int T = d.window;
    const Tensor& op = tp.value(op_tm);
    const Tensor& og = tp.value(og_tm);
    if (op.rows() != T * B || op.cols() != d.obs_p)
        fail("decoder-forward: proprioception input ", shape_str(op.shape), " wants [",
             T * B, ", ", d.obs_p, "]");
    if (og.rows() != T * B || og.cols() != d.obs_g)
        fail("decoder-forward: geometry input ", shape_str(og.shape), " wants [",
             T * B, ", ", d.obs_g, "]");
    if (pad < 0 || pad > T) fail("decoder-forward: pad ", pad, " outside [0, ", T, "]");

    const int mask = tp.leaf(detail::causal_mask(T, B, pad));
    const int x_c = tp.concat(op_tm, og_tm, 1);
    const int ctx_c =
        detail::gru_attention_path(tp, ids, kCwIh, x_c, T, B, d.hidden, mask);
    const int y_c = detail::mlp3(tp, ctx_c, ids[kCh1w], ids[kCh1b], ids[kCh2w], ids[kCh2b],
                                 ids[kCh3w], ids[kCh3b], false);
    if (!d.gated) return {y_c, -1, -1, y_c};

    const int ctx_p =
        detail::gru_attention_path(tp, ids, kPwIh, op_tm, T, B, d.hidden, mask);
    const int y_p = detail::mlp3(tp, ctx_p, ids[kPh1w], ids[kPh1b], ids[kPh2w], ids[kPh2b],
                                 ids[kPh3w], ids[kPh3b], false);
    const int g = detail::mlp3(tp, tp.concat(ctx_p, ctx_c, 1), ids[kG1w], ids[kG1b],
                               ids[kG2w], ids[kG2b], ids[kG3w], ids[kG3b], true);
    // y = g (.) y_P + (1 - g) (.) y_C
    const int y = tp.add(y_c, tp.mul(g, tp.sub(y_p, y_c)));
    return {y, g, y_p, y_c};
}

// Fixed-length observation history; the oldest `pad` slots are zeros.
struct ObservationWindow {
    std::vector<sim::Observation> steps;
    int pad = 0;
};

inline ObservationWindow make_window(const std::vector<sim::Observation>& history, int window) {
    if (window <= 0) fail("make_window: window must be positive");
    ObservationWindow w;
    w.steps.resize(static_cast<std::size_t>(window));
    const int have = std::min<int>(window, static_cast<int>(history.size()));
    w.pad = window - have;
    for (int t = 0; t < have; ++t)
        w.steps[static_cast<std::size_t>(w.pad + t)] = history[history.size() - have + t];
    return w;
}

namespace detail {

inline void window_to_leaves(Tape& tp, const ObservationWindow& w, const DecoderDims& d,
                             int& op_tm, int& og_tm) {
    if (static_cast<int>(w.steps.size()) != d.window)
        fail("decoder-forward: window holds ", w.steps.size(), " steps, wants ", d.window);
    if (d.obs_p != sim::kObsProprioDims || d.obs_g != sim::kObsGeometryDims)
        fail("decoder-forward: model dims do not match simulator observations");
    Tensor op = Tensor::zeros({d.window, d.obs_p});
    Tensor og = Tensor::zeros({d.window, d.obs_g});
    for (int t = w.pad; t < d.window; ++t) {
        const sim::Observation& o = w.steps[static_cast<std::size_t>(t)];
        for (int i = 0; i < d.obs_p; ++i) op.at(t, i) = o.o_p[static_cast<std::size_t>(i)];
        for (int i = 0; i < d.obs_g; ++i) og.at(t, i) = o.o_g[static_cast<std::size_t>(i)];
    }
    op_tm = tp.leaf(std::move(op));
    og_tm = tp.leaf(std::move(og));
}

} // namespace detail

struct Prediction {
    std::array<double, sim::kNumFeet> mu{}, stiffness{};
    std::array<double, sim::kNumFeet> gate_mu{}, gate_stiffness{}; // proprio-path share
    std::vector<std::array<double, sim::kNumFeet>> mu_seq, stiffness_seq;
};

// Inference on one window: runs both twins, denormalizes, reads the final
// timestep for the headline values and keeps the per-timestep track.
inline Prediction predict(const DecoderModel& m, const ObservationWindow& w) {
    if (m.dims.outputs != sim::kNumFeet)
        fail("predict: model outputs ", m.dims.outputs, ", expected ", sim::kNumFeet);
    Tape tp;
    int op_tm = -1, og_tm = -1;
    detail::window_to_leaves(tp, w, m.dims, op_tm, og_tm);

    Prediction out;
    const int T = m.dims.window;
    out.mu_seq.resize(static_cast<std::size_t>(T));
    out.stiffness_seq.resize(static_cast<std::size_t>(T));
    auto run = [&](const NetParams& net, const LabelNorm& norm, bool friction) {
        const auto ids = push_params(tp, net, m.dims, false);
        const SeqForward f = net_forward(tp, ids, m.dims, op_tm, og_tm, 1, w.pad);
        const Tensor& y = tp.value(f.y_seq);
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < sim::kNumFeet; ++i) {
                const double v = norm.denormalize(y.at(t, i));
                auto& seq = friction ? out.mu_seq : out.stiffness_seq;
                seq[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = v;
            }
        auto& last = friction ? out.mu : out.stiffness;
        last = (friction ? out.mu_seq : out.stiffness_seq).back();
        if (f.gate >= 0) {
            const Tensor& g = tp.value(f.gate);
            auto& gv = friction ? out.gate_mu : out.gate_stiffness;
            for (int i = 0; i < sim::kNumFeet; ++i) gv[static_cast<std::size_t>(i)] = g.at(T - 1, i);
        }
    };
    run(m.friction_net, m.mu_norm, true);
    run(m.stiffness_net, m.s_norm, false);
    return out;
}

// One prediction per foot touchdown, stamped with the foot's world position.
// Emitted parameters are clamped into their legal ranges.
struct FootholdLabel {
    int foot = 0;
    int tick = 0;
    geom::Vec3 position;
    double mu = 0.0, stiffness = 0.0;
};

inline std::vector<FootholdLabel> label_stream(const DecoderModel& m, const sim::Episode& ep) {
    std::vector<FootholdLabel> out;
    std::vector<sim::Observation> history;
    history.reserve(static_cast<std::size_t>(ep.steps));
    for (int t = 0; t < ep.steps; ++t) {
        history.push_back(ep.obs[static_cast<std::size_t>(t)]);
        if (t == 0) continue; // no prior state: no edge is observable yet
        bool any_touchdown = false;
        for (int i = 0; i < sim::kNumFeet; ++i)
            any_touchdown = any_touchdown || (ep.states[static_cast<std::size_t>(t)].contact[i] &&
                                              !ep.states[static_cast<std::size_t>(t - 1)].contact[i]);
        if (!any_touchdown) continue;
        const Prediction pred = predict(m, make_window(history, m.dims.window));
        for (int i = 0; i < sim::kNumFeet; ++i) {
            if (!(ep.states[static_cast<std::size_t>(t)].contact[i] &&
                  !ep.states[static_cast<std::size_t>(t - 1)].contact[i]))
                continue;
            FootholdLabel label;
            label.foot = i;
            label.tick = t;
            label.position = ep.states[static_cast<std::size_t>(t)].foot_pos[i];
            label.mu = std::clamp(pred.mu[static_cast<std::size_t>(i)], 0.0, 1.0);
            label.stiffness = std::clamp(pred.stiffness[static_cast<std::size_t>(i)], 1.0, 10.0);
            out.push_back(label);
        }
    }
    return out;
}

inline void save_model(const std::string& path, const DecoderModel& m) {
    numkit::NamedTensors arrays;
    Tensor meta = Tensor::zeros({1, 11});
    meta.values = {static_cast<double>(m.dims.obs_p), static_cast<double>(m.dims.obs_g),
                   static_cast<double>(m.dims.hidden), static_cast<double>(m.dims.window),
                   static_cast<double>(m.dims.head1), static_cast<double>(m.dims.head2),
                   static_cast<double>(m.dims.gate1), static_cast<double>(m.dims.gate2),
                   static_cast<double>(m.dims.outputs), m.dims.gated ? 1.0 : 0.0, 0.0};
    arrays.emplace_back("meta", std::move(meta));
    Tensor norm = Tensor::zeros({1, 4});
    norm.values = {m.mu_norm.mean, m.mu_norm.std, m.s_norm.mean, m.s_norm.std};
    arrays.emplace_back("norm", std::move(norm));
    for (int i = 0; i < kParamCount; ++i)
        arrays.emplace_back(cat("friction/", param_name(i)), m.friction_net[i]);
    for (int i = 0; i < kParamCount; ++i)
        arrays.emplace_back(cat("stiffness/", param_name(i)), m.stiffness_net[i]);
    numkit::save_weights(path, arrays);
}

inline DecoderModel load_model(const std::string& path) {
    const numkit::NamedTensors arrays = numkit::load_weights(path);
    auto find = [&](const std::string& name) -> const Tensor& {
        for (const auto& [n, t] : arrays)
            if (n == name) return t;
        fail("load-model: ", path, " is missing array '", name, "'");
    };
    const Tensor& meta = find("meta");
    if (meta.size() != 11) fail("load-model: bad meta block in ", path);
    DecoderModel m;
    m.dims.obs_p = static_cast<int>(meta.values[0]);
    m.dims.obs_g = static_cast<int>(meta.values[1]);
    m.dims.hidden = static_cast<int>(meta.values[2]);
    m.dims.window = static_cast<int>(meta.values[3]);
    m.dims.head1 = static_cast<int>(meta.values[4]);
    m.dims.head2 = static_cast<int>(meta.values[5]);
    m.dims.gate1 = static_cast<int>(meta.values[6]);
    m.dims.gate2 = static_cast<int>(meta.values[7]);
    m.dims.outputs = static_cast<int>(meta.values[8]);
    m.dims.gated = meta.values[9] != 0.0;
    const Tensor& norm = find("norm");
    if (norm.size() != 4) fail("load-model: bad norm block in ", path);
    m.mu_norm = {norm.values[0], norm.values[1]};
    m.s_norm = {norm.values[2], norm.values[3]};
    m.friction_net.resize(kParamCount);
    m.stiffness_net.resize(kParamCount);
    for (int i = 0; i < kParamCount; ++i) {
        m.friction_net[i] = find(cat("friction/", param_name(i)));
        m.stiffness_net[i] = find(cat("stiffness/", param_name(i)));
        const auto want = param_shape(i, m.dims);
        for (const Tensor* t : {&m.friction_net[i], &m.stiffness_net[i]})
            if (t->rows() != want[0] || t->cols() != want[1])
                fail("load-model: ", param_name(i), " has shape ", shape_str(t->shape),
                     ", dims imply [", want[0], ", ", want[1], "]");
    }
    return m;
}

} // namespace terraphys::decoder
