#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "terraphys/decoder.hpp"
#include "terraphys/numkit/adam.hpp"
#include "terraphys/numkit/running_stats.hpp"

namespace terraphys::decoder {

// Inverse-frequency loss weights over equal-width bins of the label range.
// Rare label values would otherwise be drowned out by the common ones.
struct LabelWeighter {
    double lo = 0.0, hi = 1.0;
    int bins = 10;
    double clip_lo = 0.1, clip_hi = 10.0;
    std::vector<long long> counts;
    long long total = 0;

    LabelWeighter(double lo_, double hi_) : lo(lo_), hi(hi_) {
        if (!(hi > lo)) fail("LabelWeighter: empty range [", lo_, ", ", hi_, "]");
        counts.assign(static_cast<std::size_t>(bins), 0);
    }

    int bin(double y) const {
        const int b = static_cast<int>((y - lo) / (hi - lo) * bins);
        return std::clamp(b, 0, bins - 1);
    }

    void add(double y) {
        ++counts[static_cast<std::size_t>(bin(y))];
        ++total;
    }

    double weight(double y) const {
        const long long c = counts[static_cast<std::size_t>(bin(y))];
        if (total == 0 || c == 0) return clip_hi;
        const double w = static_cast<double>(total) / (static_cast<double>(bins) * c);
        return std::clamp(w, clip_lo, clip_hi);
    }
};

struct TrainConfig {
    int batch = 64;
    int epochs = 100;
    double lr = 0.001;
    double weight_decay = 0.00001;
    int window_stride = 10; // offset between training window starts
    std::uint64_t seed = 0;
};

struct TrainLog {
    std::vector<double> friction_loss, stiffness_loss;   // per optimizer step
    std::vector<double> gate_mean_mu, gate_mean_s;       // proprio-path share
    int steps_per_epoch = 0;
};

namespace detail {

struct WindowRef {
    int episode = 0;
    int t0 = 0;
};

inline std::vector<WindowRef> index_windows(const std::vector<sim::Episode>& eps, int window,
                                            int stride) {
    std::vector<WindowRef> refs;
    for (std::size_t e = 0; e < eps.size(); ++e) {
        if (eps[e].steps < window) continue;
        for (int t0 = 0; t0 + window <= eps[e].steps; t0 += stride)
            refs.push_back({static_cast<int>(e), t0});
    }
    return refs;
}

// Time-major observations plus batch-major labels for the selected windows.
struct WindowBatch {
    Tensor op_tm, og_tm; // [T*B, obs_p] / [T*B, obs_g]
    Tensor mu_bm, s_bm;  // [B*T, feet]
    int B = 0;
};

inline WindowBatch fill_batch(const std::vector<sim::Episode>& eps,
                              const std::vector<WindowRef>& picks, int T) {
    const int B = static_cast<int>(picks.size());
    WindowBatch batch;
    batch.B = B;
    batch.op_tm = Tensor::zeros({T * B, sim::kObsProprioDims});
    batch.og_tm = Tensor::zeros({T * B, sim::kObsGeometryDims});
    batch.mu_bm = Tensor::zeros({B * T, sim::kNumFeet});
    batch.s_bm = Tensor::zeros({B * T, sim::kNumFeet});
    for (int b = 0; b < B; ++b) {
        const sim::Episode& ep = eps[static_cast<std::size_t>(picks[b].episode)];
        for (int t = 0; t < T; ++t) {
            const auto& obs = ep.obs[static_cast<std::size_t>(picks[b].t0 + t)];
            const auto& label = ep.labels[static_cast<std::size_t>(picks[b].t0 + t)];
            for (int i = 0; i < sim::kObsProprioDims; ++i)
                batch.op_tm.at(t * B + b, i) = obs.o_p[static_cast<std::size_t>(i)];
            for (int i = 0; i < sim::kObsGeometryDims; ++i)
                batch.og_tm.at(t * B + b, i) = obs.o_g[static_cast<std::size_t>(i)];
            for (int i = 0; i < sim::kNumFeet; ++i) {
                batch.mu_bm.at(b * T + t, i) = label.mu[static_cast<std::size_t>(i)];
                batch.s_bm.at(b * T + t, i) = label.stiffness[static_cast<std::size_t>(i)];
            }
        }
    }
    return batch;
}

inline double param_norm(const NetParams& net, int idx) {
    double acc = 0.0;
    for (double v : net[static_cast<std::size_t>(idx)].values) acc += v * v;
    return std::sqrt(acc);
}

// One optimizer step for one twin. Returns (loss, mean gate value).
inline std::pair<double, double> train_step(NetParams& net, numkit::AdamOptimizer& opt,
                                            const DecoderDims& dims, const WindowBatch& batch,
                                            const Tensor& labels_raw, const LabelNorm& norm,
                                            LabelWeighter& weighter) {
    Tensor targets = labels_raw;
    Tensor weights = labels_raw;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        weighter.add(labels_raw.values[i]);
        targets.values[i] = norm.normalize(labels_raw.values[i]);
    }
    for (std::size_t i = 0; i < weights.size(); ++i)
        weights.values[i] = weighter.weight(labels_raw.values[i]);

    Tape tp;
    const auto ids = push_params(tp, net, dims, true);
    const int op_tm = tp.leaf(batch.op_tm);
    const int og_tm = tp.leaf(batch.og_tm);
    const SeqForward f = net_forward(tp, ids, dims, op_tm, og_tm, batch.B);
    const int diff = tp.sub(f.y_seq, tp.leaf(std::move(targets)));
    const int weighted = tp.mul(tp.mul(diff, diff), tp.leaf(std::move(weights)));
    const int loss = tp.mean_all(weighted);
    tp.backward(loss);

    std::vector<Tensor*> params;
    std::vector<const Tensor*> grads;
    std::vector<std::string> names;
    for (int i = 0; i < kParamCount; ++i) {
        if (ids[i] < 0) continue;
        params.push_back(&net[static_cast<std::size_t>(i)]);
        grads.push_back(&tp.grad(ids[i]));
        names.push_back(param_name(i));
    }
    opt.step(params, grads, names);

    double gate_mean = 0.0;
    if (f.gate >= 0) {
        const Tensor& g = tp.value(f.gate);
        for (double v : g.values) gate_mean += v;
        gate_mean /= static_cast<double>(g.size());
    }
    return {tp.value(loss).values[0], gate_mean};
}

} // namespace detail

struct TrainResult {
    DecoderModel model;
    TrainLog log;
};

// Trains both twins on length-50 windows with weighted seq-to-seq MSE on
// normalized labels. Deterministic given cfg.seed.
inline TrainResult train_decoder(const std::vector<sim::Episode>& dataset, const DecoderDims& dims,
                                 const TrainConfig& cfg) {
    if (dataset.empty()) fail("train-decoder: dataset is empty");
    for (const sim::Episode& ep : dataset)
        for (const sim::StepLabel& l : ep.labels)
            for (int i = 0; i < sim::kNumFeet; ++i) {
                if (l.mu[i] < 0.0 || l.mu[i] > 1.0)
                    fail("train-decoder: friction label ", l.mu[i], " outside [0, 1]");
                if (l.stiffness[i] < 1.0 || l.stiffness[i] > 10.0)
                    fail("train-decoder: stiffness label ", l.stiffness[i], " outside [1, 10]");
            }

    TrainResult res;
    res.model = init_model(dims, cfg.seed);

    numkit::RunningStats mu_stats(1), s_stats(1);
    for (const sim::Episode& ep : dataset)
        for (const sim::StepLabel& l : ep.labels)
            for (int i = 0; i < sim::kNumFeet; ++i) {
                mu_stats.add(&l.mu[i]);
                s_stats.add(&l.stiffness[i]);
            }
    res.model.mu_norm = {mu_stats.mean(0), mu_stats.stddev(0)};
    res.model.s_norm = {s_stats.mean(0), s_stats.stddev(0)};

    auto refs = detail::index_windows(dataset, dims.window, cfg.window_stride);
    if (refs.empty())
        fail("train-decoder: no episode is at least ", dims.window, " steps long");
    const int batch = std::min<int>(cfg.batch, static_cast<int>(refs.size()));

    numkit::AdamOptimizer opt_mu({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    numkit::AdamOptimizer opt_s({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    LabelWeighter weight_mu(0.0, 1.0), weight_s(1.0, 10.0);
    numkit::Rng rng(numkit::Rng::derive_seed(cfg.seed, 0x7a1));

    res.log.steps_per_epoch = static_cast<int>(refs.size()) / batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = refs.size(); i > 1; --i)
            std::swap(refs[i - 1], refs[rng.index(i)]);
        for (int step = 0; step < res.log.steps_per_epoch; ++step) {
            const std::vector<detail::WindowRef> picks(
                refs.begin() + static_cast<std::ptrdiff_t>(step) * batch,
                refs.begin() + static_cast<std::ptrdiff_t>(step + 1) * batch);
            const detail::WindowBatch wb = detail::fill_batch(dataset, picks, dims.window);
            const auto [loss_mu, gate_mu] = detail::train_step(
                res.model.friction_net, opt_mu, dims, wb, wb.mu_bm, res.model.mu_norm, weight_mu);
            const auto [loss_s, gate_s] = detail::train_step(
                res.model.stiffness_net, opt_s, dims, wb, wb.s_bm, res.model.s_norm, weight_s);
            for (double l : {loss_mu, loss_s})
                if (!std::isfinite(l)) {
                    std::string ids_str;
                    for (const auto& p : picks) ids_str += cat(" ", p.episode, ":", p.t0);
                    fail("train-decoder: non-finite loss at epoch ", epoch, " step ", step,
                         " (mu=", loss_mu, " s=", loss_s, "); |w_ih| mu=",
                         detail::param_norm(res.model.friction_net, kCwIh), " s=",
                         detail::param_norm(res.model.stiffness_net, kCwIh),
                         "; batch windows:", ids_str);
                }
            res.log.friction_loss.push_back(loss_mu);
            res.log.stiffness_loss.push_back(loss_s);
            res.log.gate_mean_mu.push_back(gate_mu);
            res.log.gate_mean_s.push_back(gate_s);
        }
    }
    return res;
}

// Causal per-timestep predictions for a full episode, by running consecutive
// windows (hidden state and attention reset at each window boundary). The
// trailing partial window, if any, is padded at its oldest end.
struct EpisodePredictions {
    std::vector<std::array<double, sim::kNumFeet>> mu, stiffness;
    double gate_mean_mu = 0.0, gate_mean_s = 0.0;
};

inline EpisodePredictions predict_episode(const DecoderModel& m, const sim::Episode& ep) {
    const int T = m.dims.window;
    if (ep.steps < T) fail("predict-episode: episode shorter than one window");
    const int chunks = ep.steps / T;
    EpisodePredictions out;
    out.mu.resize(static_cast<std::size_t>(chunks * T));
    out.stiffness.resize(static_cast<std::size_t>(chunks * T));

    std::vector<detail::WindowRef> picks;
    for (int c = 0; c < chunks; ++c) picks.push_back({0, c * T});
    const std::vector<sim::Episode> one = {ep}; // fill_batch indexes a vector
    const detail::WindowBatch wb = detail::fill_batch(one, picks, T);

    Tape tp;
    const int op_tm = tp.leaf(wb.op_tm);
    const int og_tm = tp.leaf(wb.og_tm);
    auto run = [&](const NetParams& net, const LabelNorm& norm, bool friction) {
        const auto ids = push_params(tp, net, m.dims, false);
        const SeqForward f = net_forward(tp, ids, m.dims, op_tm, og_tm, chunks);
        const Tensor& y = tp.value(f.y_seq);
        auto& dst = friction ? out.mu : out.stiffness;
        for (int c = 0; c < chunks; ++c)
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < sim::kNumFeet; ++i)
                    dst[static_cast<std::size_t>(c * T + t)][static_cast<std::size_t>(i)] =
                        norm.denormalize(y.at(c * T + t, i));
        double gate_mean = 0.0;
        if (f.gate >= 0) {
            const Tensor& g = tp.value(f.gate);
            for (double v : g.values) gate_mean += v;
            gate_mean /= static_cast<double>(g.size());
        }
        (friction ? out.gate_mean_mu : out.gate_mean_s) = gate_mean;
    };
    run(m.friction_net, m.mu_norm, true);
    run(m.stiffness_net, m.s_norm, false);
    return out;
}

// Steps from a ground-truth jump to the prediction first crossing the
// midpoint between the old and new values; one entry per detected jump.
inline std::vector<double> transition_delays(
    const std::vector<std::array<double, sim::kNumFeet>>& labels,
    const std::vector<std::array<double, sim::kNumFeet>>& preds, double min_jump = 0.2,
    int horizon = 160) {
    if (labels.size() != preds.size())
        fail("transition-delays: ", labels.size(), " labels vs ", preds.size(), " predictions");
    std::vector<double> delays;
    const int T = static_cast<int>(labels.size());
    for (int i = 0; i < sim::kNumFeet; ++i) {
        for (int t = 1; t < T; ++t) {
            const double before = labels[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i)];
            const double after = labels[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
            if (std::abs(after - before) < min_jump) continue;
            const double mid = 0.5 * (before + after);
            const bool rising = after > before;
            for (int u = t; u < std::min(T, t + horizon); ++u) {
                const double p = preds[static_cast<std::size_t>(u)][static_cast<std::size_t>(i)];
                if ((rising && p >= mid) || (!rising && p <= mid)) {
                    delays.push_back(static_cast<double>(u - t));
                    break;
                }
            }
            // skip the settled region so one physical boundary counts once
            t += 5;
        }
    }
    return delays;
}

struct EvalReport {
    double mae_mu = 0.0, mae_s = 0.0;
    double mae_mu_low = 0.0;    // true mu < 0.6: the observable regime
    double mae_mu_high = 0.0;   // true mu >= 0.6: reported, known-unobservable
    double interval_mae_mu = 0.0; // distance to [0.6, 1] for high-mu labels
    std::array<double, 10> bin_mae_mu{}, bin_mae_s{};
    std::array<long long, 10> bin_count_mu{}, bin_count_s{};
    double gate_mean_mu = 0.0, gate_mean_s = 0.0;
    std::vector<double> delays_mu;
    long long samples = 0;
};

// Metric core over aligned label/prediction series; prediction sources other
// than the decoder (oracles, constant baselines) plug in through this.
inline EvalReport metrics_from_series(
    const std::vector<std::vector<std::array<double, sim::kNumFeet>>>& labels_mu,
    const std::vector<std::vector<std::array<double, sim::kNumFeet>>>& labels_s,
    const std::vector<std::vector<std::array<double, sim::kNumFeet>>>& preds_mu,
    const std::vector<std::vector<std::array<double, sim::kNumFeet>>>& preds_s) {
    if (labels_mu.empty()) fail("evaluate-decoder: empty evaluation set");
    EvalReport rep;
    double acc_mu = 0.0, acc_s = 0.0, acc_low = 0.0, acc_high = 0.0, acc_int = 0.0;
    long long n_low = 0, n_high = 0;
    std::array<double, 10> bin_acc_mu{}, bin_acc_s{};
    for (std::size_t e = 0; e < labels_mu.size(); ++e) {
        const std::size_t T = preds_mu[e].size();
        if (labels_mu[e].size() < T || labels_s[e].size() < T || preds_s[e].size() != T)
            fail("evaluate-decoder: series length mismatch in episode ", e);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < sim::kNumFeet; ++i) {
                const double mu = labels_mu[e][t][i], mu_hat = preds_mu[e][t][i];
                const double s = labels_s[e][t][i], s_hat = preds_s[e][t][i];
                const double err_mu = std::abs(mu_hat - mu);
                const double err_s = std::abs(s_hat - s);
                acc_mu += err_mu;
                acc_s += err_s;
                ++rep.samples;
                if (mu < 0.6) {
                    acc_low += err_mu;
                    acc_int += err_mu;
                    ++n_low;
                } else {
                    acc_high += err_mu;
                    acc_int += std::max(0.0, 0.6 - mu_hat) + std::max(0.0, mu_hat - 1.0);
                    ++n_high;
                }
                const int bmu = std::clamp(static_cast<int>(mu * 10.0), 0, 9);
                const int bs = std::clamp(static_cast<int>((s - 1.0) / 9.0 * 10.0), 0, 9);
                bin_acc_mu[static_cast<std::size_t>(bmu)] += err_mu;
                ++rep.bin_count_mu[static_cast<std::size_t>(bmu)];
                bin_acc_s[static_cast<std::size_t>(bs)] += err_s;
                ++rep.bin_count_s[static_cast<std::size_t>(bs)];
            }
        auto d = transition_delays(
            {labels_mu[e].begin(), labels_mu[e].begin() + static_cast<std::ptrdiff_t>(T)},
            preds_mu[e]);
        rep.delays_mu.insert(rep.delays_mu.end(), d.begin(), d.end());
    }
    const double n = static_cast<double>(rep.samples);
    rep.mae_mu = acc_mu / n;
    rep.mae_s = acc_s / n;
    rep.mae_mu_low = n_low > 0 ? acc_low / static_cast<double>(n_low) : 0.0;
    rep.mae_mu_high = n_high > 0 ? acc_high / static_cast<double>(n_high) : 0.0;
    rep.interval_mae_mu = acc_int / n;
    for (int b = 0; b < 10; ++b) {
        if (rep.bin_count_mu[static_cast<std::size_t>(b)] > 0)
            rep.bin_mae_mu[static_cast<std::size_t>(b)] =
                bin_acc_mu[static_cast<std::size_t>(b)] /
                static_cast<double>(rep.bin_count_mu[static_cast<std::size_t>(b)]);
        if (rep.bin_count_s[static_cast<std::size_t>(b)] > 0)
            rep.bin_mae_s[static_cast<std::size_t>(b)] =
                bin_acc_s[static_cast<std::size_t>(b)] /
                static_cast<double>(rep.bin_count_s[static_cast<std::size_t>(b)]);
    }
    return rep;
}

inline EvalReport evaluate_decoder(const DecoderModel& m, const std::vector<sim::Episode>& eval_set) {
    if (eval_set.empty()) fail("evaluate-decoder: empty evaluation set");
    std::vector<std::vector<std::array<double, sim::kNumFeet>>> lm, ls, pm, ps;
    double gate_mu = 0.0, gate_s = 0.0;
    for (const sim::Episode& ep : eval_set) {
        const EpisodePredictions pred = predict_episode(m, ep);
        std::vector<std::array<double, sim::kNumFeet>> em, es;
        for (const sim::StepLabel& l : ep.labels) {
            em.push_back(l.mu);
            es.push_back(l.stiffness);
        }
        lm.push_back(std::move(em));
        ls.push_back(std::move(es));
        pm.push_back(pred.mu);
        ps.push_back(pred.stiffness);
        gate_mu += pred.gate_mean_mu;
        gate_s += pred.gate_mean_s;
    }
    EvalReport rep = metrics_from_series(lm, ls, pm, ps);
    rep.gate_mean_mu = gate_mu / static_cast<double>(eval_set.size());
    rep.gate_mean_s = gate_s / static_cast<double>(eval_set.size());
    return rep;
}

inline void write_bin_mae_csv(const std::string& path, const EvalReport& rep) {
    std::ofstream out(path);
    if (!out) fail("write-bin-mae: cannot write ", path);
    out << "bin,mu_lo,mu_hi,mae_mu,count_mu,s_lo,s_hi,mae_s,count_s\n";
    for (int b = 0; b < 10; ++b)
        out << b << "," << b * 0.1 << "," << (b + 1) * 0.1 << ","
            << rep.bin_mae_mu[static_cast<std::size_t>(b)] << ","
            << rep.bin_count_mu[static_cast<std::size_t>(b)] << "," << 1.0 + b * 0.9 << ","
            << 1.0 + (b + 1) * 0.9 << "," << rep.bin_mae_s[static_cast<std::size_t>(b)] << ","
            << rep.bin_count_s[static_cast<std::size_t>(b)] << "\n";
}

inline void write_bin_mae_svg(const std::string& path, const EvalReport& rep) {
    std::ofstream out(path);
    if (!out) fail("write-bin-mae: cannot write ", path);
    const int w = 640, h = 360, pad = 44;
    double peak = 0.05;
    for (int b = 0; b < 10; ++b)
        peak = std::max({peak, rep.bin_mae_mu[static_cast<std::size_t>(b)],
                         rep.bin_mae_s[static_cast<std::size_t>(b)] / 9.0});
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << w / 2 << "' y='20' text-anchor='middle' font-size='14'>"
        << "per-bin MAE (friction solid, stiffness/9 hatched)</text>\n";
    const double bw = (w - 2.0 * pad) / 10.0;
    for (int b = 0; b < 10; ++b) {
        const double mu = rep.bin_mae_mu[static_cast<std::size_t>(b)];
        const double s9 = rep.bin_mae_s[static_cast<std::size_t>(b)] / 9.0;
        const double x = pad + b * bw;
        const double hm = (h - 2.0 * pad) * mu / peak;
        const double hs = (h - 2.0 * pad) * s9 / peak;
        out << "<rect x='" << x + 2 << "' y='" << h - pad - hm << "' width='" << bw / 2 - 3
            << "' height='" << hm << "' fill='#3a6ea5'/>\n"
            << "<rect x='" << x + bw / 2 << "' y='" << h - pad - hs << "' width='" << bw / 2 - 3
            << "' height='" << hs << "' fill='#b5651d' fill-opacity='0.7'/>\n"
            << "<text x='" << x + bw / 2 << "' y='" << h - pad + 16
            << "' text-anchor='middle' font-size='11'>" << b << "</text>\n";
    }
    out << "<line x1='" << pad << "' y1='" << h - pad << "' x2='" << w - pad << "' y2='"
        << h - pad << "' stroke='black'/>\n</svg>\n";
}

} // namespace terraphys::decoder
