#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "terraphys/camera.hpp"
#include "terraphys/common.hpp"
#include "terraphys/numkit/adam.hpp"
#include "terraphys/numkit/gmm.hpp"
#include "terraphys/numkit/rng.hpp"
#include "terraphys/numkit/tape.hpp"
#include "terraphys/numkit/tensor.hpp"
#include "terraphys/numkit/weights_io.hpp"

namespace terraphys::vis {

using numkit::Tape;
using numkit::Tensor;

// Per-pixel encoder-decoder: reconstructs the input embedding (the
// reconstruction error drives the confidence mask) and regresses the two
// physical parameters. Output row = [x_recon (input dims), mu, s], with both
// regression targets scaled to [0, 1].
struct VisualDims {
    int input = 64;
    int h1 = 128, h2 = 32, h3 = 128;
    int outputs() const { return input + 2; }
};

enum VisParam : int { kVw1, kVb1, kVw2, kVb2, kVw3, kVb3, kVw4, kVb4, kVisParamCount };

inline const char* vis_param_name(int i) {
    constexpr const char* names[kVisParamCount] = {"w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"};
    if (i < 0 || i >= kVisParamCount) fail("vis-param-name: index ", i, " out of range");
    return names[i];
}

inline std::array<int, 2> vis_param_shape(int i, const VisualDims& d) {
    switch (i) {
    case kVw1: return {d.input, d.h1};
    case kVb1: return {1, d.h1};
    case kVw2: return {d.h1, d.h2};
    case kVb2: return {1, d.h2};
    case kVw3: return {d.h2, d.h3};
    case kVb3: return {1, d.h3};
    case kVw4: return {d.h3, d.outputs()};
    case kVb4: return {1, d.outputs()};
    default: fail("vis-param-shape: index ", i, " out of range");
    }
}

struct VisualModel {
    VisualDims dims;
    std::vector<Tensor> params; // indexed by VisParam
};

inline VisualModel init_visual(const VisualDims& d, std::uint64_t seed) {
    numkit::Rng rng(numkit::Rng::derive_seed(seed, 0x715));
    VisualModel m;
    m.dims = d;
    m.params.resize(kVisParamCount);
    for (int i = 0; i < kVisParamCount; ++i) {
        const auto shape = vis_param_shape(i, d);
        Tensor t = Tensor::zeros({shape[0], shape[1]});
        if (shape[0] > 1) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(shape[0]));
            for (double& v : t.values) v = rng.normal(0.0, scale);
        }
        m.params[static_cast<std::size_t>(i)] = std::move(t);
    }
    return m;
}

// Regression targets live in [0, 1]: friction is already there, stiffness is
// mapped from its native [1, 10].
inline double scale_mu(double mu) { return mu; }
inline double unscale_mu(double z) { return z; }
inline double scale_s(double s) { return (s - 1.0) / 9.0; }
inline double unscale_s(double z) { return z * 9.0 + 1.0; }

constexpr double kLeakySlope = 0.01;

// Fast inference for one pixel; out must hold dims.outputs() doubles.
inline void forward_pixel(const VisualModel& m, const double* x, double* out) {
    const VisualDims& d = m.dims;
    thread_local std::vector<double> h1v, h2v, h3v;
    h1v.resize(static_cast<std::size_t>(d.h1));
    h2v.resize(static_cast<std::size_t>(d.h2));
    h3v.resize(static_cast<std::size_t>(d.h3));
    auto layer = [](const Tensor& w, const Tensor& b, const double* in, double* dst, int n_in,
                    int n_out, bool act) {
        for (int j = 0; j < n_out; ++j) dst[j] = b.values[static_cast<std::size_t>(j)];
        for (int i = 0; i < n_in; ++i) {
            const double xi = in[i];
            const double* row = w.values.data() + static_cast<std::size_t>(i) * n_out;
            for (int j = 0; j < n_out; ++j) dst[j] += xi * row[j];
        }
        if (act)
            for (int j = 0; j < n_out; ++j)
                if (dst[j] < 0.0) dst[j] *= kLeakySlope;
    };
    layer(m.params[kVw1], m.params[kVb1], x, h1v.data(), d.input, d.h1, true);
    layer(m.params[kVw2], m.params[kVb2], h1v.data(), h2v.data(), d.h1, d.h2, true);
    layer(m.params[kVw3], m.params[kVb3], h2v.data(), h3v.data(), d.h2, d.h3, true);
    layer(m.params[kVw4], m.params[kVb4], h3v.data(), out, d.h3, d.outputs(), false);
}

// Batch inference: rows of x are pixels, output rows are [recon, mu, s].
inline Tensor forward_batch(const VisualModel& m, const Tensor& x) {
    if (x.cols() != m.dims.input)
        fail("visual-forward: input has ", x.cols(), " dims, model wants ", m.dims.input);
    Tensor out = Tensor::zeros({x.rows(), m.dims.outputs()});
    for (int r = 0; r < x.rows(); ++r)
        forward_pixel(m, x.values.data() + static_cast<std::size_t>(r) * x.cols(),
                      out.values.data() + static_cast<std::size_t>(r) * out.cols());
    return out;
}

// Tape forward with identical semantics, for training.
inline int forward_tape(Tape& tp, const std::vector<int>& ids, int x) {
    const int h1 = tp.leaky_relu(tp.add(tp.matmul(x, ids[kVw1]), ids[kVb1]), kLeakySlope);
    const int h2 = tp.leaky_relu(tp.add(tp.matmul(h1, ids[kVw2]), ids[kVb2]), kLeakySlope);
    const int h3 = tp.leaky_relu(tp.add(tp.matmul(h2, ids[kVw3]), ids[kVb3]), kLeakySlope);
    return tp.add(tp.matmul(h3, ids[kVw4]), ids[kVb4]);
}

// One training batch: pixel features double as reconstruction targets; the
// regression loss only sees pixels whose validity flag is set.
struct VisualBatch {
    Tensor x;                        // [N, input] features
    Tensor y;                        // [N, 2] scaled targets (mu, s)
    std::vector<std::uint8_t> valid; // per pixel
};

struct VisualLoss {
    double recon = 0.0, pred = 0.0, total = 0.0;
};

// L_total = w_recon * MSE(recon, x) over every pixel
//         + w_pred * MSE(head, y) over valid pixels only (0 if none).
inline VisualLoss visual_loss(const Tensor& outputs, const VisualBatch& batch,
                              double w_recon = 0.9, double w_pred = 0.1) {
    const int N = batch.x.rows(), D = batch.x.cols();
    if (N == 0) fail("visual-loss: empty batch");
    if (outputs.rows() != N || outputs.cols() != D + 2)
        fail("visual-loss: outputs ", shape_str(outputs.shape), " do not match batch");
    if (batch.y.rows() != N || batch.y.cols() != 2 ||
        batch.valid.size() != static_cast<std::size_t>(N))
        fail("visual-loss: target block does not match batch");

    VisualLoss loss;
    long long n_valid = 0;
    for (int r = 0; r < N; ++r) {
        for (int c = 0; c < D; ++c) {
            const double dvc = outputs.at(r, c) - batch.x.at(r, c);
            loss.recon += dvc * dvc;
        }
        if (batch.valid[static_cast<std::size_t>(r)]) {
            ++n_valid;
            for (int c = 0; c < 2; ++c) {
                const double dvc = outputs.at(r, D + c) - batch.y.at(r, c);
                loss.pred += dvc * dvc;
            }
        }
    }
    loss.recon /= static_cast<double>(N) * D;
    loss.pred = n_valid > 0 ? loss.pred / (2.0 * static_cast<double>(n_valid)) : 0.0;
    loss.total = w_recon * loss.recon + w_pred * loss.pred;
    return loss;
}

struct VisTrainConfig {
    double lr = 0.001;
    double weight_decay = 0.001;
    double w_recon = 0.9, w_pred = 0.1;
};

// One Adam step on the batch; returns the loss at the pre-step weights.
inline VisualLoss train_step(VisualModel& m, numkit::AdamOptimizer& opt, const VisualBatch& batch,
                             const VisTrainConfig& cfg = {}) {
    const int N = batch.x.rows(), D = batch.x.cols();
    if (N == 0) fail("visual-train: empty batch");
    if (D != m.dims.input)
        fail("visual-train: batch has ", D, " feature dims, model wants ", m.dims.input);

    Tape tp;
    std::vector<int> ids(kVisParamCount);
    for (int i = 0; i < kVisParamCount; ++i)
        ids[static_cast<std::size_t>(i)] = tp.leaf(m.params[static_cast<std::size_t>(i)], true);
    const int x = tp.leaf(batch.x);
    const int out = forward_tape(tp, ids, x);
    const int recon = tp.mse(tp.slice(out, 0, N, 0, D), x);

    long long n_valid = 0;
    for (std::uint8_t v : batch.valid) n_valid += v ? 1 : 0;
    int total;
    if (n_valid > 0) {
        Tensor mask = Tensor::zeros({N, 2});
        for (int r = 0; r < N; ++r)
            if (batch.valid[static_cast<std::size_t>(r)]) mask.at(r, 0) = mask.at(r, 1) = 1.0;
        const int diff = tp.sub(tp.slice(out, 0, N, D, D + 2), tp.leaf(batch.y));
        const int pred =
            tp.scale(tp.sum_all(tp.mul(tp.mul(diff, diff), tp.leaf(std::move(mask)))),
                     1.0 / (2.0 * static_cast<double>(n_valid)));
        total = tp.add(tp.scale(recon, cfg.w_recon), tp.scale(pred, cfg.w_pred));
    } else {
        total = tp.scale(recon, cfg.w_recon);
    }
    tp.backward(total);

    std::vector<Tensor*> params;
    std::vector<const Tensor*> grads;
    std::vector<std::string> names;
    for (int i = 0; i < kVisParamCount; ++i) {
        params.push_back(&m.params[static_cast<std::size_t>(i)]);
        grads.push_back(&tp.grad(ids[static_cast<std::size_t>(i)]));
        names.push_back(vis_param_name(i));
    }
    opt.step(params, grads, names);

    VisualLoss loss;
    loss.total = tp.value(total).values[0];
    loss.recon = tp.value(recon).values[0];
    loss.pred = n_valid > 0 ? (loss.total - cfg.w_recon * loss.recon) / cfg.w_pred : 0.0;
    return loss;
}

// Dense per-pixel inference over a feature map.
struct DensePrediction {
    int width = 0, height = 0;
    std::vector<double> mu, stiffness; // native units, clamped to legal ranges
    std::vector<double> recon_err;     // mean squared reconstruction error
};

inline DensePrediction dense_predict(const VisualModel& m, const cam::FeatureMap& map) {
    if (map.dim != m.dims.input)
        fail("visual-forward: feature map has ", map.dim, " dims, model wants ", m.dims.input);
    DensePrediction out;
    out.width = map.width;
    out.height = map.height;
    const std::size_t n = static_cast<std::size_t>(map.width) * map.height;
    out.mu.resize(n);
    out.stiffness.resize(n);
    out.recon_err.resize(n);
    std::vector<double> x(static_cast<std::size_t>(map.dim));
    std::vector<double> y(static_cast<std::size_t>(m.dims.outputs()));
    for (std::size_t i = 0; i < n; ++i) {
        const float* f = map.values.data() + i * static_cast<std::size_t>(map.dim);
        for (int d = 0; d < map.dim; ++d) x[static_cast<std::size_t>(d)] = f[d];
        forward_pixel(m, x.data(), y.data());
        double err = 0.0;
        for (int d = 0; d < map.dim; ++d) {
            const double dv = y[static_cast<std::size_t>(d)] - x[static_cast<std::size_t>(d)];
            err += dv * dv;
        }
        out.recon_err[i] = err / static_cast<double>(map.dim);
        out.mu[i] = std::clamp(unscale_mu(y[static_cast<std::size_t>(map.dim)]), 0.0, 1.0);
        out.stiffness[i] =
            std::clamp(unscale_s(y[static_cast<std::size_t>(map.dim) + 1]), 1.0, 10.0);
    }
    return out;
}

// Per-image confidence mask: a two-component mixture fitted to this image's
// reconstruction errors separates in-distribution from novel pixels. A
// degenerate fit means no separation evidence, so nothing is trusted.
struct ConfidenceMask {
    int width = 0, height = 0;
    std::vector<std::uint8_t> confident;
    double threshold = 0.0; // meaningful only when degenerate is false
    numkit::Gmm2 gmm;
    bool degenerate = false;

    double confident_fraction() const {
        if (confident.empty()) return 0.0;
        double n = 0.0;
        for (std::uint8_t c : confident) n += c ? 1.0 : 0.0;
        return n / static_cast<double>(confident.size());
    }
};

// A unimodal error distribution fitted with two components yields overlapping
// halves; requiring the means to sit well apart relative to both spreads keeps
// such fits out. Bimodal in-distribution vs novel errors separate by a much
// larger factor.
constexpr double kMinModeSeparation = 2.0;

inline ConfidenceMask confidence_from_errors(const std::vector<double>& errors, int width,
                                             int height) {
    if (errors.size() < 8)
        fail("confidence: need at least 8 pixels, got ", errors.size());
    if (static_cast<std::size_t>(width) * static_cast<std::size_t>(height) != errors.size())
        fail("confidence: ", width, "x", height, " does not match ", errors.size(), " errors");
    ConfidenceMask mask;
    mask.width = width;
    mask.height = height;
    mask.gmm = numkit::fit_gmm2(errors);
    const std::optional<double> thr = numkit::gmm2_threshold(mask.gmm);
    const double spread = std::sqrt(mask.gmm.v1) + std::sqrt(mask.gmm.v2);
    if (!thr || mask.gmm.m2 - mask.gmm.m1 < kMinModeSeparation * spread) {
        mask.degenerate = true;
        mask.confident.assign(errors.size(), 0);
        return mask;
    }
    mask.threshold = *thr;
    mask.confident.resize(errors.size());
    for (std::size_t i = 0; i < errors.size(); ++i)
        mask.confident[i] = errors[i] <= mask.threshold ? 1 : 0;
    return mask;
}

inline ConfidenceMask confidence(const VisualModel& m, const cam::FeatureMap& map) {
    const DensePrediction pred = dense_predict(m, map);
    return confidence_from_errors(pred.recon_err, map.width, map.height);
}

// Fixed-percentile ablation baseline: confident = error below the q-quantile
// of this image's errors. No bimodality reasoning, included for comparison.
inline ConfidenceMask percentile_mask(const std::vector<double>& errors, int width, int height,
                                      double q) {
    if (errors.empty()) fail("percentile-mask: no errors");
    if (q < 0.0 || q > 1.0) fail("percentile-mask: quantile ", q, " outside [0, 1]");
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    ConfidenceMask mask;
    mask.width = width;
    mask.height = height;
    mask.threshold = sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    mask.confident.resize(errors.size());
    for (std::size_t i = 0; i < errors.size(); ++i)
        mask.confident[i] = errors[i] <= mask.threshold ? 1 : 0;
    return mask;
}

// Intersection-over-union between a mask and a reference region.
inline double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) fail("mask-iou: sizes ", a.size(), " vs ", b.size());
    long long inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool pa = a[i] != 0, pb = b[i] != 0;
        inter += (pa && pb) ? 1 : 0;
        uni += (pa || pb) ? 1 : 0;
    }
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

// Fraction of pixels where the mask agrees with the reference region.
inline double mask_accuracy(const std::vector<std::uint8_t>& mask,
                            const std::vector<std::uint8_t>& truth) {
    if (mask.size() != truth.size() || mask.empty())
        fail("mask-accuracy: sizes ", mask.size(), " vs ", truth.size());
    long long agree = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        agree += (mask[i] != 0) == (truth[i] != 0) ? 1 : 0;
    return static_cast<double>(agree) / static_cast<double>(mask.size());
}

// Order-independent digest of the weights; snapshots carry it so readers can
// verify they never observe a torn update.
inline std::uint64_t weights_checksum(const VisualModel& m) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 0x100000001b3ull;
    };
    mix(static_cast<std::uint64_t>(m.dims.input));
    for (const Tensor& t : m.params)
        for (double v : t.values) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(bits));
            mix(bits);
        }
    return h;
}

inline void save_visual(const std::string& path, const VisualModel& m) {
    numkit::NamedTensors arrays;
    Tensor meta = Tensor::zeros({1, 5});
    meta.values = {static_cast<double>(m.dims.input), static_cast<double>(m.dims.h1),
                   static_cast<double>(m.dims.h2), static_cast<double>(m.dims.h3), 0.0};
    arrays.emplace_back("meta", std::move(meta));
    for (int i = 0; i < kVisParamCount; ++i)
        arrays.emplace_back(vis_param_name(i), m.params[static_cast<std::size_t>(i)]);
    numkit::save_weights(path, arrays);
}

inline VisualModel load_visual(const std::string& path) {
    const numkit::NamedTensors arrays = numkit::load_weights(path);
    auto find = [&](const std::string& name) -> const Tensor& {
        for (const auto& [n, t] : arrays)
            if (n == name) return t;
        fail("load-visual: ", path, " is missing array '", name, "'");
    };
    const Tensor& meta = find("meta");
    if (meta.size() != 5) fail("load-visual: bad meta block in ", path);
    VisualModel m;
    m.dims.input = static_cast<int>(meta.values[0]);
    m.dims.h1 = static_cast<int>(meta.values[1]);
    m.dims.h2 = static_cast<int>(meta.values[2]);
    m.dims.h3 = static_cast<int>(meta.values[3]);
    m.params.resize(kVisParamCount);
    for (int i = 0; i < kVisParamCount; ++i) {
        m.params[static_cast<std::size_t>(i)] = find(vis_param_name(i));
        const auto want = vis_param_shape(i, m.dims);
        const Tensor& t = m.params[static_cast<std::size_t>(i)];
        if (t.rows() != want[0] || t.cols() != want[1])
            fail("load-visual: ", vis_param_name(i), " has shape ", shape_str(t.shape),
                 ", dims imply [", want[0], ", ", want[1], "]");
    }
    return m;
}

// Dense prediction export: four f32 maps in one weights container plus a PPM
// preview (friction colormap; unconfident pixels grayed out).
inline void write_dense_maps(const std::string& path, const DensePrediction& pred,
                             const ConfidenceMask& mask) {
    if (mask.width != pred.width || mask.height != pred.height)
        fail("write-dense-maps: mask ", mask.width, "x", mask.height, " vs prediction ",
             pred.width, "x", pred.height);
    auto as_tensor = [&](const std::vector<double>& v) {
        Tensor t = Tensor::zeros({pred.height, pred.width});
        t.values = v;
        return t;
    };
    Tensor conf = Tensor::zeros({pred.height, pred.width});
    for (std::size_t i = 0; i < mask.confident.size(); ++i)
        conf.values[i] = mask.confident[i] ? 1.0 : 0.0;
    numkit::save_weights(path, {{"mu", as_tensor(pred.mu)},
                                {"s", as_tensor(pred.stiffness)},
                                {"err", as_tensor(pred.recon_err)},
                                {"confident", std::move(conf)}});
}

inline void write_dense_ppm(const std::string& path, const DensePrediction& pred,
                            const ConfidenceMask& mask) {
    std::vector<double> rgb(static_cast<std::size_t>(pred.width) * pred.height * 3);
    for (std::size_t i = 0; i < pred.mu.size(); ++i) {
        if (mask.confident[i]) { // red (slippery) -> green (grippy)
            rgb[i * 3 + 0] = 1.0 - pred.mu[i];
            rgb[i * 3 + 1] = pred.mu[i];
            rgb[i * 3 + 2] = 0.15;
        } else {
            rgb[i * 3 + 0] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = 0.45;
        }
    }
    cam::write_ppm(path, pred.width, pred.height, rgb);
}

} // namespace terraphys::vis
