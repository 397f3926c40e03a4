#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "terraphys/episode.hpp"
#include "terraphys/terrain.hpp"

namespace terraphys::twin {

constexpr int kSnippetSteps = 20; // 400 ms at the 20 ms tick

struct FrictionGrid {
    static constexpr int kCount = 10;
    double value(int i) const {
        if (i < 0 || i >= kCount) fail("friction-grid: index ", i, " outside [0, ", kCount, ")");
        return 0.1 * i;
    }
};

// A recorded motion window plus everything a replay needs. The terrain's
// friction is kept for scoring but never shown to the estimator; stiffness and
// surface height are part of the replay setup (only friction is swept).
struct Snippet {
    std::string tag;      // "WB" = slippage occurred, "GROUND" = firm contact
    int start_tick = 0;   // index of the first replayed step in the source episode
    double true_mu = 0.0;
    double stiffness = 5.0;
    double ground_height = 0.0;
    double accumulated_slip = 0.0; // meters summed over the window, all feet
    sim::RobotState initial;       // state before the first replayed step
    std::vector<sim::RobotState> states;
    std::vector<sim::Command> commands;

    void validate() const {
        if (static_cast<int>(states.size()) != kSnippetSteps ||
            static_cast<int>(commands.size()) != kSnippetSteps)
            fail("snippet: holds ", states.size(), " states and ", commands.size(),
                 " commands, wants exactly ", kSnippetSteps);
        if (tag != "WB" && tag != "GROUND") fail("snippet: unknown tag '", tag, "'");
    }
};

namespace detail {

inline double window_slip(const sim::Episode& ep, int start) {
    double total = 0.0;
    for (int t = start; t < start + kSnippetSteps; ++t) {
        const auto& cur = ep.states[static_cast<std::size_t>(t)].slip_dist;
        const auto& prev = ep.states[static_cast<std::size_t>(t - 1)].slip_dist;
        for (int i = 0; i < sim::kNumFeet; ++i)
            total += std::max(0.0, cur[static_cast<std::size_t>(i)] -
                                       prev[static_cast<std::size_t>(i)]);
    }
    return total;
}

} // namespace detail

// Cuts the episode into consecutive non-overlapping 20-step windows and keeps
// the unambiguous ones: accumulated slip above the threshold -> WB, exactly
// zero -> GROUND, anything between is discarded as mixed.
inline std::vector<Snippet> extract_snippets(const sim::Episode& ep,
                                             const terrain::TerrainGrid& grid,
                                             double slip_threshold) {
    if (slip_threshold <= 0.0) fail("extract-snippets: threshold ", slip_threshold, " <= 0");
    if (static_cast<int>(ep.states.size()) != ep.steps)
        fail("extract-snippets: episode holds ", ep.states.size(), " states for ", ep.steps,
             " steps");
    std::vector<Snippet> out;
    for (int start = 1; start + kSnippetSteps <= ep.steps; start += kSnippetSteps) {
        const double slip = detail::window_slip(ep, start);
        Snippet s;
        if (slip > slip_threshold)
            s.tag = "WB";
        else if (slip == 0.0)
            s.tag = "GROUND";
        else
            continue;
        s.start_tick = start;
        s.accumulated_slip = slip;
        s.initial = ep.states[static_cast<std::size_t>(start - 1)];

        int ref_foot = 0; // terrain sampled under a stance foot of the initial state
        for (int i = 0; i < sim::kNumFeet; ++i)
            if (s.initial.contact[static_cast<std::size_t>(i)]) {
                ref_foot = i;
                break;
            }
        const geom::Vec3& fp = s.initial.foot_pos[static_cast<std::size_t>(ref_foot)];
        const terrain::TerrainCell& cell = grid.cell_at(fp.x, fp.y);
        s.true_mu = cell.mu;
        s.stiffness = cell.stiffness;
        s.ground_height = cell.height;

        s.states.reserve(kSnippetSteps);
        s.commands.reserve(kSnippetSteps);
        for (int t = start; t < start + kSnippetSteps; ++t) {
            s.states.push_back(ep.states[static_cast<std::size_t>(t)]);
            s.commands.push_back(
                sim::command_at(ep.schedule, static_cast<double>(t) * sim::kDt));
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct TwinMetrics {
    double joint = 0.0;       // mean |leg extension| gap, meters
    double orientation = 0.0; // mean geodesic base-rotation gap, radians
    double slip = 0.0;        // mean |slip distance| gap over recorded stance feet
    bool finite = true;

    static TwinMetrics infinite() {
        constexpr double inf = std::numeric_limits<double>::infinity();
        return {inf, inf, inf, false};
    }
};

namespace detail {

inline double geodesic_angle(const geom::Mat3& a, const geom::Mat3& b) {
    const geom::Mat3 rel = a.transposed() * b;
    const double tr = rel.m[0] + rel.m[4] + rel.m[8];
    return std::acos(std::clamp(0.5 * (tr - 1.0), -1.0, 1.0));
}

inline double extension(const sim::RobotState& st, int foot) {
    return (st.foot_pos[static_cast<std::size_t>(foot)] - st.base_pos).norm();
}

inline bool state_finite(const sim::RobotState& st) {
    bool ok = std::isfinite(st.base_pos.x) && std::isfinite(st.base_pos.y) &&
              std::isfinite(st.base_pos.z) && std::isfinite(st.vx) && std::isfinite(st.vy);
    for (int i = 0; i < sim::kNumFeet; ++i) {
        const auto f = static_cast<std::size_t>(i);
        ok = ok && std::isfinite(st.foot_pos[f].x) && std::isfinite(st.foot_pos[f].y) &&
             std::isfinite(st.foot_pos[f].z) && std::isfinite(st.slip_dist[f]);
    }
    return ok;
}

} // namespace detail

// Motion similarity between the recording and a simulated rollout, averaged
// over the window: leg extensions stand in for joint positions (the kinematic
// model has no joints), orientation is the geodesic rotation distance, and
// slippage compares accumulated slip on the feet the recording had in stance.
inline TwinMetrics compare_motion(const Snippet& snip,
                                  const std::vector<sim::RobotState>& sim_states) {
    snip.validate();
    if (sim_states.size() != snip.states.size())
        fail("compare-motion: rollout holds ", sim_states.size(), " states, recording ",
             snip.states.size());
    TwinMetrics m;
    long long stance_terms = 0;
    for (int t = 0; t < kSnippetSteps; ++t) {
        const auto ts = static_cast<std::size_t>(t);
        const sim::RobotState& rec = snip.states[ts];
        const sim::RobotState& rep = sim_states[ts];
        if (!detail::state_finite(rep)) return TwinMetrics::infinite();
        for (int i = 0; i < sim::kNumFeet; ++i) {
            m.joint += std::abs(detail::extension(rec, i) - detail::extension(rep, i));
            if (rec.contact[static_cast<std::size_t>(i)]) {
                m.slip += std::abs(rec.slip_dist[static_cast<std::size_t>(i)] -
                                   rep.slip_dist[static_cast<std::size_t>(i)]);
                ++stance_terms;
            }
        }
        m.orientation += detail::geodesic_angle(rec.orientation(), rep.orientation());
    }
    m.joint /= static_cast<double>(kSnippetSteps * sim::kNumFeet);
    m.orientation /= static_cast<double>(kSnippetSteps);
    m.slip = stance_terms > 0 ? m.slip / static_cast<double>(stance_terms) : 0.0;
    return m;
}

namespace detail {

inline terrain::TerrainGrid uniform_patch(double cx, double cy, double mu, double s,
                                          double height) {
    terrain::TerrainGrid g;
    g.cell_size = 0.5;
    g.nx = g.ny = 40; // 20 m x 20 m centered on the snippet
    g.origin_x = cx - 10.0;
    g.origin_y = cy - 10.0;
    terrain::ClassSpec spec;
    spec.name = "replay";
    spec.mu_lo = spec.mu_hi = mu;
    spec.s_lo = spec.s_hi = s;
    g.classes = {spec};
    terrain::TerrainCell cell;
    cell.mu = mu;
    cell.stiffness = s;
    cell.height = height;
    cell.class_id = 0;
    g.cells.assign(static_cast<std::size_t>(g.nx) * g.ny, cell);
    return g;
}

} // namespace detail

// Noise-free rollout of the recorded commands from the recorded initial state
// on uniform ground with the candidate friction. The base is re-anchored to
// the replay surface, standing in for the one-foot-on-the-ground assumption.
inline std::vector<sim::RobotState> replay_from_state(const Snippet& snip, double mu,
                                                      const sim::GaitParams& gait = {}) {
    snip.validate();
    if (mu < 0.0 || mu > 1.0) fail("replay: friction ", mu, " outside [0, 1]");
    const terrain::TerrainGrid grid = detail::uniform_patch(
        snip.initial.base_pos.x, snip.initial.base_pos.y, mu, snip.stiffness,
        snip.ground_height);
    sim::RobotState st = snip.initial;
    st.base_pos.z = snip.ground_height + gait.base_height;

    numkit::Rng rng(0); // replay is noise-free; the stream is never consumed
    const sim::NoiseConfig no_noise{0.0, 0.0};
    std::vector<sim::RobotState> out;
    out.reserve(kSnippetSteps);
    for (int t = 0; t < kSnippetSteps; ++t) {
        sim::step_gait(st, grid, snip.commands[static_cast<std::size_t>(t)], gait, no_noise,
                       rng);
        out.push_back(st);
    }
    return out;
}

inline TwinMetrics evaluate_mu(const Snippet& snip, double mu,
                               const sim::GaitParams& gait = {}) {
    snip.validate();
    try {
        return compare_motion(snip, replay_from_state(snip, mu, gait));
    } catch (const std::exception&) {
        return TwinMetrics::infinite(); // rollout left the patch or blew up: flagged
    }
}

inline std::vector<TwinMetrics> evaluate_grid(const Snippet& snip,
                                              const sim::GaitParams& gait = {}) {
    const FrictionGrid grid;
    std::vector<TwinMetrics> out;
    out.reserve(FrictionGrid::kCount);
    for (int i = 0; i < FrictionGrid::kCount; ++i)
        out.push_back(evaluate_mu(snip, grid.value(i), gait));
    return out;
}

// Mean of the min-max-normalized metrics; a flat metric contributes zero and
// non-finite entries stay infinite so they can never win.
inline std::vector<double> combined_scores(const std::vector<TwinMetrics>& metrics) {
    if (metrics.empty()) fail("combined-scores: no metrics");
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::array<double, 3> lo{inf, inf, inf}, hi{-inf, -inf, -inf};
    auto dims = [](const TwinMetrics& m) { return std::array<double, 3>{m.joint, m.orientation, m.slip}; };
    for (const TwinMetrics& m : metrics) {
        if (!m.finite) continue;
        const auto v = dims(m);
        for (int d = 0; d < 3; ++d) {
            lo[static_cast<std::size_t>(d)] = std::min(lo[static_cast<std::size_t>(d)], v[static_cast<std::size_t>(d)]);
            hi[static_cast<std::size_t>(d)] = std::max(hi[static_cast<std::size_t>(d)], v[static_cast<std::size_t>(d)]);
        }
    }
    std::vector<double> scores;
    scores.reserve(metrics.size());
    for (const TwinMetrics& m : metrics) {
        if (!m.finite) {
            scores.push_back(inf);
            continue;
        }
        const auto v = dims(m);
        double sum = 0.0;
        for (int d = 0; d < 3; ++d) {
            const auto ds = static_cast<std::size_t>(d);
            sum += hi[ds] > lo[ds] ? (v[ds] - lo[ds]) / (hi[ds] - lo[ds]) : 0.0;
        }
        scores.push_back(sum / 3.0);
    }
    return scores;
}

struct FrictionInterval {
    double lo = 0.0, hi = 0.0;
    int lo_index = 0, hi_index = 0;
};

// The contiguous run of grid frictions around the best score whose scores stay
// within the slack of the minimum; this is the identified plausible range.
inline FrictionInterval infer_valid_range(const std::vector<TwinMetrics>& metrics,
                                          double slack = 0.1) {
    if (static_cast<int>(metrics.size()) != FrictionGrid::kCount)
        fail("valid-range: got ", metrics.size(), " grid entries, wants ", FrictionGrid::kCount);
    if (slack < 0.0) fail("valid-range: slack ", slack, " < 0");
    const std::vector<double> scores = combined_scores(metrics);
    int best = -1;
    for (int i = 0; i < FrictionGrid::kCount; ++i)
        if (std::isfinite(scores[static_cast<std::size_t>(i)]) &&
            (best < 0 || scores[static_cast<std::size_t>(i)] < scores[static_cast<std::size_t>(best)]))
            best = i;
    if (best < 0) fail("valid-range: every grid friction diverged");

    const double cutoff = (1.0 + slack) * scores[static_cast<std::size_t>(best)];
    FrictionInterval iv;
    iv.lo_index = iv.hi_index = best;
    while (iv.lo_index > 0 && scores[static_cast<std::size_t>(iv.lo_index - 1)] <= cutoff)
        --iv.lo_index;
    while (iv.hi_index + 1 < FrictionGrid::kCount &&
           scores[static_cast<std::size_t>(iv.hi_index + 1)] <= cutoff)
        ++iv.hi_index;
    const FrictionGrid grid;
    iv.lo = grid.value(iv.lo_index);
    iv.hi = grid.value(iv.hi_index);
    return iv;
}

// Zero inside the interval, distance to the nearest boundary outside.
inline double interval_error(double x, const FrictionInterval& iv) {
    if (x >= iv.lo && x <= iv.hi) return 0.0;
    return std::min(std::abs(x - iv.lo), std::abs(x - iv.hi));
}

// Per-(snippet, friction) rows for downstream plotting.
inline void write_twin_csv(const std::string& path, const std::vector<Snippet>& snippets,
                           const std::vector<std::vector<TwinMetrics>>& per_snippet) {
    if (snippets.size() != per_snippet.size())
        fail("twin-csv: ", snippets.size(), " snippets vs ", per_snippet.size(), " metric rows");
    std::ofstream out(path);
    if (!out) fail("twin-csv: cannot write ", path);
    out << "snippet,tag,true_mu,mu,joint,orientation,slip,combined\n";
    const FrictionGrid grid;
    char buf[256];
    for (std::size_t s = 0; s < snippets.size(); ++s) {
        const auto scores = combined_scores(per_snippet[s]);
        for (int i = 0; i < FrictionGrid::kCount; ++i) {
            const TwinMetrics& m = per_snippet[s][static_cast<std::size_t>(i)];
            std::snprintf(buf, sizeof(buf), "%zu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s,
                          snippets[s].tag.c_str(), snippets[s].true_mu, grid.value(i), m.joint,
                          m.orientation, m.slip, scores[static_cast<std::size_t>(i)]);
            out << buf;
        }
    }
    if (!out) fail("twin-csv: write failed for ", path);
}

struct BoxStats {
    double lo = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, hi = 0.0;
    long long count = 0;
};

inline BoxStats box_stats(std::vector<double> values) {
    values.erase(std::remove_if(values.begin(), values.end(),
                                [](double v) { return !std::isfinite(v); }),
                 values.end());
    BoxStats b;
    b.count = static_cast<long long>(values.size());
    if (values.empty()) return b;
    std::sort(values.begin(), values.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const std::size_t i = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i);
        return i + 1 < values.size() ? values[i] * (1.0 - frac) + values[i + 1] * frac
                                     : values[i];
    };
    b.lo = values.front();
    b.q1 = quantile(0.25);
    b.median = quantile(0.5);
    b.q3 = quantile(0.75);
    b.hi = values.back();
    return b;
}

// Boxplot-ready rows: one per (tag, metric, grid friction) over all snippets.
inline void write_twin_boxplot_csv(const std::string& path,
                                   const std::vector<Snippet>& snippets,
                                   const std::vector<std::vector<TwinMetrics>>& per_snippet) {
    if (snippets.size() != per_snippet.size())
        fail("twin-boxplot: ", snippets.size(), " snippets vs ", per_snippet.size(), " rows");
    std::ofstream out(path);
    if (!out) fail("twin-boxplot: cannot write ", path);
    out << "tag,metric,mu,count,min,q25,median,q75,max\n";
    const FrictionGrid grid;
    const char* metric_names[3] = {"joint", "orientation", "slip"};
    char buf[256];
    for (const std::string tag : {"WB", "GROUND"}) {
        for (int d = 0; d < 3; ++d) {
            for (int i = 0; i < FrictionGrid::kCount; ++i) {
                std::vector<double> vals;
                for (std::size_t s = 0; s < snippets.size(); ++s) {
                    if (snippets[s].tag != tag) continue;
                    const TwinMetrics& m = per_snippet[s][static_cast<std::size_t>(i)];
                    vals.push_back(d == 0 ? m.joint : d == 1 ? m.orientation : m.slip);
                }
                const BoxStats b = box_stats(std::move(vals));
                std::snprintf(buf, sizeof(buf),
                              "%s,%s,%.17g,%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", tag.c_str(),
                              metric_names[d], grid.value(i), b.count, b.lo, b.q1, b.median,
                              b.q3, b.hi);
                out << buf;
            }
        }
    }
    if (!out) fail("twin-boxplot: write failed for ", path);
}

// Six fixed panels (two tags x three metrics) of per-friction boxes.
inline void write_twin_boxplot_svg(const std::string& path,
                                   const std::vector<Snippet>& snippets,
                                   const std::vector<std::vector<TwinMetrics>>& per_snippet) {
    constexpr int kPanelW = 300, kPanelH = 180, kMargin = 44;
    const int width = 3 * kPanelW + 2 * kMargin;
    const int height = 2 * kPanelH + 2 * kMargin;
    std::ofstream out(path);
    if (!out) fail("twin-svg: cannot write ", path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    const FrictionGrid grid;
    const char* metric_names[3] = {"joint", "orientation", "slip"};
    const char* tags[2] = {"WB", "GROUND"};
    char buf[512];
    for (int row = 0; row < 2; ++row) {
        for (int d = 0; d < 3; ++d) {
            std::vector<BoxStats> boxes;
            double top = 0.0;
            for (int i = 0; i < FrictionGrid::kCount; ++i) {
                std::vector<double> vals;
                for (std::size_t s = 0; s < snippets.size(); ++s) {
                    if (snippets[s].tag != tags[row]) continue;
                    const TwinMetrics& m = per_snippet[s][static_cast<std::size_t>(i)];
                    vals.push_back(d == 0 ? m.joint : d == 1 ? m.orientation : m.slip);
                }
                boxes.push_back(box_stats(std::move(vals)));
                if (boxes.back().count > 0) top = std::max(top, boxes.back().hi);
            }
            if (top <= 0.0) top = 1.0;
            const double x0 = kMargin + d * kPanelW, y0 = kMargin + row * kPanelH;
            const double plot_h = kPanelH - 50.0, plot_w = kPanelW - 40.0;
            auto ypix = [&](double v) { return y0 + plot_h - v / top * plot_h; };
            std::snprintf(buf, sizeof(buf),
                          "<text x=\"%.1f\" y=\"%.1f\">%s / %s (max %.3g)</text>\n",
                          x0, y0 - 6.0, tags[row], metric_names[d], top);
            out << buf;
            std::snprintf(buf, sizeof(buf),
                          "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
                          "fill=\"none\" stroke=\"#999\"/>\n",
                          x0, y0, plot_w, plot_h);
            out << buf;
            for (int i = 0; i < FrictionGrid::kCount; ++i) {
                const BoxStats& b = boxes[static_cast<std::size_t>(i)];
                if (b.count == 0) continue;
                const double cx = x0 + (i + 0.5) / FrictionGrid::kCount * plot_w;
                const double bw = plot_w / FrictionGrid::kCount * 0.6;
                std::snprintf(buf, sizeof(buf),
                              "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                              "stroke=\"#335\"/>\n",
                              cx, ypix(b.lo), cx, ypix(b.hi));
                out << buf;
                std::snprintf(buf, sizeof(buf),
                              "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
                              "fill=\"#88a\" stroke=\"#335\"/>\n",
                              cx - bw / 2, ypix(b.q3), bw, std::max(0.5, ypix(b.q1) - ypix(b.q3)));
                out << buf;
                std::snprintf(buf, sizeof(buf),
                              "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                              "stroke=\"#113\" stroke-width=\"1.5\"/>\n",
                              cx - bw / 2, ypix(b.median), cx + bw / 2, ypix(b.median));
                out << buf;
                std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\">%.1f</text>\n",
                              cx - 7.0, y0 + plot_h + 12.0, grid.value(i));
                out << buf;
            }
        }
    }
    out << "</svg>\n";
    if (!out) fail("twin-svg: write failed for ", path);
}

} // namespace terraphys::twin
