#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "terraphys/common.hpp"
#include "terraphys/decoder_train.hpp"
#include "terraphys/episode.hpp"
#include "terraphys/mission_graph.hpp"
#include "terraphys/runtime.hpp"
#include "terraphys/terrain.hpp"
#include "terraphys/twin.hpp"
#include "terraphys/visual.hpp"

namespace terraphys::config {

// Invalid configuration (malformed JSON, unknown key, bad value). Maps to
// exit code 2 at the command line.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Referenced input artifact missing from disk. Maps to exit code 3.
class ArtifactError : public Error {
public:
    explicit ArtifactError(const std::string& msg) : Error(msg) {}
};

template <typename... Args>
[[noreturn]] void fail_config(const Args&... args) {
    throw ConfigError(cat("config: ", args...));
}

template <typename... Args>
[[noreturn]] void fail_artifact(const Args&... args) {
    throw ArtifactError(cat(args...));
}

inline void require_file(const std::string& path, const char* what) {
    if (!std::filesystem::is_regular_file(path))
        fail_artifact(what, ": no file at ", path);
}

inline void require_dir(const std::string& path, const char* what) {
    if (!std::filesystem::is_directory(path))
        fail_artifact(what, ": no directory at ", path);
}

// ----------------------------------------------------------------------------
// Strict section reader: every key must be consumed, errors carry the full
// dotted path of the offending field.

namespace detail {

class Section {
public:
    Section(const nlohmann::json& j, std::string path) : j_(&j), path_(std::move(path)) {
        if (!j.is_object()) fail_config(label(), ": wants an object");
    }

    bool has(const char* key) const { return j_->contains(key); }

    double num(const char* key, double fallback) {
        if (!has(key)) return fallback;
        const nlohmann::json& v = mark(key);
        if (!v.is_number()) fail_config(key_path(key), ": wants a number");
        return v.get<double>();
    }

    int integer(const char* key, int fallback) {
        if (!has(key)) return fallback;
        const nlohmann::json& v = mark(key);
        if (!v.is_number_integer()) fail_config(key_path(key), ": wants an integer");
        return v.get<int>();
    }

    long long whole(const char* key, long long fallback) {
        if (!has(key)) return fallback;
        const nlohmann::json& v = mark(key);
        if (!v.is_number_integer()) fail_config(key_path(key), ": wants an integer");
        return v.get<long long>();
    }

    std::uint64_t useed(const char* key, std::uint64_t fallback) {
        if (!has(key)) return fallback;
        const nlohmann::json& v = mark(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            fail_config(key_path(key), ": wants a non-negative integer");
        return v.get<std::uint64_t>();
    }

    bool flag(const char* key, bool fallback) {
        if (!has(key)) return fallback;
        const nlohmann::json& v = mark(key);
        if (!v.is_boolean()) fail_config(key_path(key), ": wants a boolean");
        return v.get<bool>();
    }

    std::string text(const char* key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const nlohmann::json& v = mark(key);
        if (!v.is_string()) fail_config(key_path(key), ": wants a string");
        return v.get<std::string>();
    }

    Section child(const char* key) { return Section(mark(key), key_path(key)); }

    const nlohmann::json& list(const char* key) {
        const nlohmann::json& v = mark(key);
        if (!v.is_array()) fail_config(key_path(key), ": wants an array");
        return v;
    }

    std::string key_path(const char* key) const {
        return path_.empty() ? std::string(key) : path_ + "." + key;
    }

    // Every key must have been read by now; anything left is a typo.
    void finish() const {
        for (const auto& item : j_->items())
            if (!seen_.count(item.key())) fail_config(key_path(item.key().c_str()), ": unknown key");
    }

private:
    std::string label() const { return path_.empty() ? std::string("top level") : path_; }

    const nlohmann::json& mark(const char* key) {
        seen_.insert(key);
        if (!has(key)) fail_config(key_path(key), ": missing");
        return j_->at(key);
    }

    const nlohmann::json* j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::string elem_path(const std::string& base, std::size_t i) {
    return cat(base, "[", i, "]");
}

} // namespace detail

// ----------------------------------------------------------------------------
// The one document that drives every pipeline stage. Sub-seeds left unset in
// the JSON derive from the top-level seed, so one --seed override reseeds the
// whole run while an echoed config (which spells them all out) pins them.

struct RunConfig {
    std::uint64_t seed = 1;

    // sim: terrain draw, walking dynamics, dataset recording
    std::uint64_t terrain_seed = 0;
    terrain::TerrainParams terrain;
    std::vector<terrain::ClassSpec> classes; // empty = built-in table
    std::uint64_t collect_seed = 0;
    int episodes = 10;
    int steps = 500;
    double command_hold = 2.0;
    sim::GaitParams gait;
    sim::NoiseConfig noise;

    // decoder: twin recurrent estimator and its offline training
    decoder::DecoderDims dims;
    decoder::TrainConfig train;

    // vision: per-pixel head, online trainer, confidence knobs
    vis::VisualDims visual; // input is overwritten by runtime.feature_dim at use
    vis::VisTrainConfig vis_train;
    std::uint64_t visual_seed = 0;
    double percentile = 0.5;  // fixed-quantile baseline mask
    double walkable_mu = 0.6; // ground-truth walkable region threshold

    // graph: spatial memory
    graph::GraphConfig graph;

    // runtime: mission script and online learning cadence
    long long ticks = 3000;
    int capture_every = 10;
    int image_size = 64;
    int feature_dim = 64;
    std::uint64_t feature_seed = 0;
    std::uint64_t texture_seed = 0;
    double start_x = 0.0, start_y = 0.0, start_yaw = 0.0;
    std::vector<sim::CommandSegment> schedule;
    std::vector<runtime::RemapEvent> remaps;
    int probe_class = -1;
    int learn_every = 25;
    int publish_every = 1;
    int learn_batch = 100;

    // twin: replay recordings and interval identification
    double slip_threshold = 0.01;
    double interval_slack = 0.1;
    double twin_mu_wb = 0.1;
    double twin_mu_ground = 0.9;
    double twin_stiffness = 4.0;
    int twin_steps = 500;
    double twin_burst_period = 1.2;
    double twin_demand = 0.7;
    std::uint64_t twin_seed = 0;

    RunConfig() {
        terrain.extent_x = terrain.extent_y = 30.0;
        noise.obs_std = 0.01;
        schedule = {{0.0, {0.4, 0.0, 0.15}}};
        reseed(seed);
    }

    // Derives every sub-seed from the master; explicit JSON keys override after.
    void reseed(std::uint64_t s) {
        seed = s;
        terrain_seed = numkit::Rng::derive_seed(s, 0x7e88);
        collect_seed = numkit::Rng::derive_seed(s, 0xc011);
        train.seed = numkit::Rng::derive_seed(s, 0x7a19);
        visual_seed = numkit::Rng::derive_seed(s, 0x715a);
        feature_seed = numkit::Rng::derive_seed(s, 0xfea7);
        texture_seed = numkit::Rng::derive_seed(s, 0x7e87);
        twin_seed = numkit::Rng::derive_seed(s, 0x7317);
    }
};

// ----------------------------------------------------------------------------
// Assembled per-stage configs.

inline sim::CollectConfig collect_config(const RunConfig& rc) {
    sim::CollectConfig cc;
    cc.base_seed = rc.collect_seed;
    cc.episodes = rc.episodes;
    cc.steps = rc.steps;
    cc.command_hold = rc.command_hold;
    cc.terrain = rc.terrain;
    cc.gait = rc.gait;
    cc.noise = rc.noise;
    return cc;
}

inline runtime::MissionScript mission_script(const RunConfig& rc) {
    runtime::MissionScript s;
    s.terrain_seed = rc.terrain_seed;
    s.terrain = rc.terrain;
    s.classes = rc.classes;
    s.start_x = rc.start_x;
    s.start_y = rc.start_y;
    s.start_yaw = rc.start_yaw;
    s.schedule = rc.schedule;
    s.gait = rc.gait;
    s.noise = rc.noise;
    s.ticks = rc.ticks;
    s.capture_every = rc.capture_every;
    s.image_size = rc.image_size;
    s.feature_dim = rc.feature_dim;
    s.feature_seed = rc.feature_seed;
    s.texture_seed = rc.texture_seed;
    s.remaps = rc.remaps;
    s.probe_class = rc.probe_class;
    return s;
}

inline runtime::RuntimeConfig runtime_config(const RunConfig& rc) {
    runtime::RuntimeConfig c;
    c.learn_every = rc.learn_every;
    c.publish_every = rc.publish_every;
    c.train = rc.vis_train;
    c.batch = rc.learn_batch;
    c.dims = rc.visual;
    c.dims.input = rc.feature_dim;
    c.visual_seed = rc.visual_seed;
    c.graph = rc.graph;
    return c;
}

// ----------------------------------------------------------------------------
// Parsing.

namespace detail {

inline void parse_classes(Section& sim, RunConfig& rc) {
    const nlohmann::json& arr = sim.list("classes");
    rc.classes.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = elem_path(sim.key_path("classes"), i);
        Section c(arr[i], path);
        terrain::ClassSpec spec;
        spec.name = c.text("name", "");
        if (spec.name.empty()) fail_config(path, ".name: wants a non-empty string");
        const nlohmann::json& mu = c.list("mu");
        const nlohmann::json& s = c.list("s");
        const nlohmann::json& color = c.list("color");
        if (mu.size() != 2 || !mu[0].is_number() || !mu[1].is_number())
            fail_config(path, ".mu: wants [lo, hi]");
        if (s.size() != 2 || !s[0].is_number() || !s[1].is_number())
            fail_config(path, ".s: wants [lo, hi]");
        if (color.size() != 3 || !color[0].is_number() || !color[1].is_number() ||
            !color[2].is_number())
            fail_config(path, ".color: wants [r, g, b]");
        spec.mu_lo = mu[0].get<double>();
        spec.mu_hi = mu[1].get<double>();
        spec.s_lo = s[0].get<double>();
        spec.s_hi = s[1].get<double>();
        spec.color = {color[0].get<double>(), color[1].get<double>(), color[2].get<double>()};
        if (spec.mu_lo < 0.0 || spec.mu_hi > 1.0 || spec.mu_lo > spec.mu_hi)
            fail_config(path, ".mu: [", spec.mu_lo, ", ", spec.mu_hi, "] outside [0, 1] or inverted");
        if (spec.s_lo < 1.0 || spec.s_hi > 10.0 || spec.s_lo > spec.s_hi)
            fail_config(path, ".s: [", spec.s_lo, ", ", spec.s_hi, "] outside [1, 10] or inverted");
        for (double ch : spec.color)
            if (ch < 0.0 || ch > 1.0) fail_config(path, ".color: channel ", ch, " outside [0, 1]");
        c.finish();
        rc.classes.push_back(std::move(spec));
    }
    if (rc.classes.empty()) fail_config(sim.key_path("classes"), ": wants at least one class");
}

inline void parse_gait(Section& sim, RunConfig& rc) {
    Section g = sim.child("gait");
    sim::GaitParams& p = rc.gait;
    p.period = g.num("period", p.period);
    p.duty = g.num("duty", p.duty);
    p.mass = g.num("mass", p.mass);
    p.gravity = g.num("gravity", p.gravity);
    p.k_unit = g.num("k_unit", p.k_unit);
    p.beta = g.num("beta", p.beta);
    p.tau_track = g.num("tau_track", p.tau_track);
    p.kappa = g.num("kappa", p.kappa);
    p.base_height = g.num("base_height", p.base_height);
    p.swing_apex = g.num("swing_apex", p.swing_apex);
    p.ring_radius = g.num("ring_radius", p.ring_radius);
    p.max_speed = g.num("max_speed", p.max_speed);
    p.max_yaw_rate = g.num("max_yaw_rate", p.max_yaw_rate);
    g.finish();
    if (p.period <= 0.0 || p.duty <= 0.0 || p.duty >= 1.0)
        fail_config(sim.key_path("gait"), ": period ", p.period, " / duty ", p.duty, " invalid");
    if (p.mass <= 0.0 || p.gravity <= 0.0 || p.k_unit <= 0.0 || p.tau_track <= 0.0)
        fail_config(sim.key_path("gait"), ": mass, gravity, k_unit, tau_track must be positive");
    if (p.max_speed <= 0.0 || p.max_yaw_rate <= 0.0)
        fail_config(sim.key_path("gait"), ": command envelope must be positive");
}

inline void parse_sim(Section& root, RunConfig& rc) {
    Section s = root.child("sim");
    rc.terrain_seed = s.useed("terrain_seed", rc.terrain_seed);
    rc.terrain.extent_x = s.num("extent_x", rc.terrain.extent_x);
    rc.terrain.extent_y = s.num("extent_y", rc.terrain.extent_y);
    rc.terrain.patch_lo = s.num("patch_lo", rc.terrain.patch_lo);
    rc.terrain.patch_hi = s.num("patch_hi", rc.terrain.patch_hi);
    rc.terrain.cell_size = s.num("cell_size", rc.terrain.cell_size);
    rc.terrain.height_amp = s.num("height_amp", rc.terrain.height_amp);
    if (s.has("classes")) parse_classes(s, rc);
    rc.collect_seed = s.useed("collect_seed", rc.collect_seed);
    rc.episodes = s.integer("episodes", rc.episodes);
    rc.steps = s.integer("steps", rc.steps);
    rc.command_hold = s.num("command_hold", rc.command_hold);
    rc.noise.obs_std = s.num("obs_std", rc.noise.obs_std);
    rc.noise.demand_sigma = s.num("demand_sigma", rc.noise.demand_sigma);
    if (s.has("gait")) parse_gait(s, rc);
    s.finish();
    if (rc.terrain.extent_x <= 0.0 || rc.terrain.extent_y <= 0.0)
        fail_config("sim: extent ", rc.terrain.extent_x, " x ", rc.terrain.extent_y,
                    " must be positive");
    if (rc.terrain.cell_size <= 0.0) fail_config("sim.cell_size: ", rc.terrain.cell_size, " <= 0");
    if (rc.terrain.patch_lo <= 0.0 || rc.terrain.patch_lo > rc.terrain.patch_hi)
        fail_config("sim: patch range [", rc.terrain.patch_lo, ", ", rc.terrain.patch_hi,
                    "] invalid");
    if (rc.terrain.height_amp < 0.0) fail_config("sim.height_amp: ", rc.terrain.height_amp, " < 0");
    if (rc.episodes < 1) fail_config("sim.episodes: ", rc.episodes, " < 1");
    if (rc.steps < 1) fail_config("sim.steps: ", rc.steps, " < 1");
    if (rc.command_hold <= 0.0) fail_config("sim.command_hold: ", rc.command_hold, " <= 0");
    if (rc.noise.obs_std < 0.0) fail_config("sim.obs_std: ", rc.noise.obs_std, " < 0");
    if (rc.noise.demand_sigma < 0.0)
        fail_config("sim.demand_sigma: ", rc.noise.demand_sigma, " < 0");
}

inline void parse_decoder(Section& root, RunConfig& rc) {
    Section d = root.child("decoder");
    rc.dims.hidden = d.integer("hidden", rc.dims.hidden);
    rc.dims.window = d.integer("window", rc.dims.window);
    rc.dims.head1 = d.integer("head1", rc.dims.head1);
    rc.dims.head2 = d.integer("head2", rc.dims.head2);
    rc.dims.gate1 = d.integer("gate1", rc.dims.gate1);
    rc.dims.gate2 = d.integer("gate2", rc.dims.gate2);
    rc.dims.gated = d.flag("gated", rc.dims.gated);
    rc.train.batch = d.integer("batch", rc.train.batch);
    rc.train.epochs = d.integer("epochs", rc.train.epochs);
    rc.train.lr = d.num("lr", rc.train.lr);
    rc.train.weight_decay = d.num("weight_decay", rc.train.weight_decay);
    rc.train.window_stride = d.integer("window_stride", rc.train.window_stride);
    rc.train.seed = d.useed("train_seed", rc.train.seed);
    d.finish();
    if (rc.dims.hidden < 1 || rc.dims.window < 1 || rc.dims.head1 < 1 || rc.dims.head2 < 1 ||
        rc.dims.gate1 < 1 || rc.dims.gate2 < 1)
        fail_config("decoder: every layer width and the window must be >= 1");
    if (rc.train.batch < 1) fail_config("decoder.batch: ", rc.train.batch, " < 1");
    if (rc.train.epochs < 0) fail_config("decoder.epochs: ", rc.train.epochs, " < 0");
    if (rc.train.lr <= 0.0) fail_config("decoder.lr: ", rc.train.lr, " <= 0");
    if (rc.train.weight_decay < 0.0)
        fail_config("decoder.weight_decay: ", rc.train.weight_decay, " < 0");
    if (rc.train.window_stride < 1)
        fail_config("decoder.window_stride: ", rc.train.window_stride, " < 1");
}

inline void parse_vision(Section& root, RunConfig& rc) {
    Section v = root.child("vision");
    rc.visual.h1 = v.integer("h1", rc.visual.h1);
    rc.visual.h2 = v.integer("h2", rc.visual.h2);
    rc.visual.h3 = v.integer("h3", rc.visual.h3);
    rc.vis_train.lr = v.num("lr", rc.vis_train.lr);
    rc.vis_train.weight_decay = v.num("weight_decay", rc.vis_train.weight_decay);
    rc.vis_train.w_recon = v.num("w_recon", rc.vis_train.w_recon);
    rc.vis_train.w_pred = v.num("w_pred", rc.vis_train.w_pred);
    rc.visual_seed = v.useed("init_seed", rc.visual_seed);
    rc.percentile = v.num("percentile", rc.percentile);
    rc.walkable_mu = v.num("walkable_mu", rc.walkable_mu);
    v.finish();
    if (rc.visual.h1 < 1 || rc.visual.h2 < 1 || rc.visual.h3 < 1)
        fail_config("vision: every layer width must be >= 1");
    if (rc.vis_train.lr <= 0.0) fail_config("vision.lr: ", rc.vis_train.lr, " <= 0");
    if (rc.vis_train.weight_decay < 0.0)
        fail_config("vision.weight_decay: ", rc.vis_train.weight_decay, " < 0");
    if (rc.vis_train.w_recon < 0.0 || rc.vis_train.w_pred < 0.0)
        fail_config("vision: loss weights must be >= 0");
    if (rc.percentile < 0.0 || rc.percentile > 1.0)
        fail_config("vision.percentile: ", rc.percentile, " outside [0, 1]");
    if (rc.walkable_mu < 0.0 || rc.walkable_mu > 1.0)
        fail_config("vision.walkable_mu: ", rc.walkable_mu, " outside [0, 1]");
}

inline void parse_graph(Section& root, RunConfig& rc) {
    Section g = root.child("graph");
    rc.graph.d_main = g.num("d_main", rc.graph.d_main);
    rc.graph.d_reproj = g.num("d_reproj", rc.graph.d_reproj);
    rc.graph.foot_radius = g.num("foot_radius", rc.graph.foot_radius);
    rc.graph.capacity = g.integer("capacity", rc.graph.capacity);
    rc.graph.recon_fraction = g.num("recon_fraction", rc.graph.recon_fraction);
    g.finish();
    try {
        rc.graph.validate();
    } catch (const Error& e) {
        fail_config("graph: ", e.what());
    }
}

inline void parse_schedule(Section& rt, RunConfig& rc) {
    const nlohmann::json& arr = rt.list("schedule");
    rc.schedule.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = elem_path(rt.key_path("schedule"), i);
        Section seg(arr[i], path);
        sim::CommandSegment cs;
        cs.t0 = seg.num("t", 0.0);
        cs.cmd.vx = seg.num("vx", 0.0);
        cs.cmd.vy = seg.num("vy", 0.0);
        cs.cmd.omega = seg.num("omega", 0.0);
        seg.finish();
        if (cs.t0 < 0.0) fail_config(path, ".t: ", cs.t0, " < 0");
        rc.schedule.push_back(cs);
    }
}

inline void parse_remaps(Section& rt, RunConfig& rc) {
    const nlohmann::json& arr = rt.list("remaps");
    rc.remaps.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = elem_path(rt.key_path("remaps"), i);
        Section r(arr[i], path);
        runtime::RemapEvent e;
        e.tick = r.whole("tick", 0);
        e.class_id = r.integer("class", -1);
        e.mu = r.num("mu", -1.0);
        e.stiffness = r.num("stiffness", e.stiffness);
        r.finish();
        rc.remaps.push_back(e);
    }
}

inline void parse_runtime(Section& root, RunConfig& rc) {
    Section rt = root.child("runtime");
    rc.ticks = rt.whole("ticks", rc.ticks);
    rc.capture_every = rt.integer("capture_every", rc.capture_every);
    rc.image_size = rt.integer("image_size", rc.image_size);
    rc.feature_dim = rt.integer("feature_dim", rc.feature_dim);
    rc.feature_seed = rt.useed("feature_seed", rc.feature_seed);
    rc.texture_seed = rt.useed("texture_seed", rc.texture_seed);
    if (rt.has("start")) {
        const nlohmann::json& start = rt.list("start");
        if (start.size() != 3 || !start[0].is_number() || !start[1].is_number() ||
            !start[2].is_number())
            fail_config(rt.key_path("start"), ": wants [x, y, yaw]");
        rc.start_x = start[0].get<double>();
        rc.start_y = start[1].get<double>();
        rc.start_yaw = start[2].get<double>();
    }
    if (rt.has("schedule")) parse_schedule(rt, rc);
    if (rt.has("remaps")) parse_remaps(rt, rc);
    rc.probe_class = rt.integer("probe_class", rc.probe_class);
    rc.learn_every = rt.integer("learn_every", rc.learn_every);
    rc.publish_every = rt.integer("publish_every", rc.publish_every);
    rc.learn_batch = rt.integer("batch", rc.learn_batch);
    rt.finish();
}

inline void parse_twin(Section& root, RunConfig& rc) {
    Section t = root.child("twin");
    rc.slip_threshold = t.num("slip_threshold", rc.slip_threshold);
    rc.interval_slack = t.num("slack", rc.interval_slack);
    rc.twin_mu_wb = t.num("mu_wb", rc.twin_mu_wb);
    rc.twin_mu_ground = t.num("mu_ground", rc.twin_mu_ground);
    rc.twin_stiffness = t.num("stiffness", rc.twin_stiffness);
    rc.twin_steps = t.integer("steps", rc.twin_steps);
    rc.twin_burst_period = t.num("burst_period", rc.twin_burst_period);
    rc.twin_demand = t.num("demand", rc.twin_demand);
    rc.twin_seed = t.useed("seed", rc.twin_seed);
    t.finish();
    if (rc.slip_threshold <= 0.0) fail_config("twin.slip_threshold: ", rc.slip_threshold, " <= 0");
    if (rc.interval_slack < 0.0) fail_config("twin.slack: ", rc.interval_slack, " < 0");
    if (rc.twin_mu_wb < 0.0 || rc.twin_mu_wb > 1.0)
        fail_config("twin.mu_wb: ", rc.twin_mu_wb, " outside [0, 1]");
    if (rc.twin_mu_ground < 0.0 || rc.twin_mu_ground > 1.0)
        fail_config("twin.mu_ground: ", rc.twin_mu_ground, " outside [0, 1]");
    if (rc.twin_stiffness < 1.0 || rc.twin_stiffness > 10.0)
        fail_config("twin.stiffness: ", rc.twin_stiffness, " outside [1, 10]");
    if (rc.twin_steps < twin::kSnippetSteps + 1)
        fail_config("twin.steps: ", rc.twin_steps, " leaves no room for a replay window");
    if (rc.twin_burst_period <= 0.0)
        fail_config("twin.burst_period: ", rc.twin_burst_period, " <= 0");
    if (rc.twin_demand <= 0.0 || rc.twin_demand > rc.gait.max_speed)
        fail_config("twin.demand: ", rc.twin_demand, " outside (0, ", rc.gait.max_speed, "]");
}

} // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    detail::Section root(j, "");
    RunConfig rc;
    rc.reseed(root.useed("seed", rc.seed));
    if (root.has("sim")) detail::parse_sim(root, rc);
    if (root.has("decoder")) detail::parse_decoder(root, rc);
    if (root.has("vision")) detail::parse_vision(root, rc);
    if (root.has("graph")) detail::parse_graph(root, rc);
    if (root.has("runtime")) detail::parse_runtime(root, rc);
    if (root.has("twin")) detail::parse_twin(root, rc);
    root.finish();
    try {
        mission_script(rc).validate();
        runtime_config(rc).validate();
    } catch (const Error& e) {
        throw ConfigError(cat("config: ", e.what()));
    }
    return rc;
}

inline nlohmann::json read_config_json(const std::string& path) {
    require_file(path, "config");
    std::ifstream in(path);
    if (!in) fail_artifact("config: cannot open ", path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail_config("invalid JSON in ", path, ": ", e.what());
    }
    return j;
}

inline RunConfig load_config(const std::string& path) { return parse_config(read_config_json(path)); }

// ----------------------------------------------------------------------------
// Effective-config echo. Every accepted key is spelled out, so re-running any
// stage on the echoed file reproduces the run exactly.

inline nlohmann::json config_json(const RunConfig& rc) {
    nlohmann::json classes = nlohmann::json::array();
    for (const terrain::ClassSpec& c :
         rc.classes.empty() ? terrain::default_class_table() : rc.classes)
        classes.push_back({{"name", c.name},
                           {"mu", {c.mu_lo, c.mu_hi}},
                           {"s", {c.s_lo, c.s_hi}},
                           {"color", {c.color[0], c.color[1], c.color[2]}}});
    nlohmann::json schedule = nlohmann::json::array();
    for (const sim::CommandSegment& seg : rc.schedule)
        schedule.push_back(
            {{"t", seg.t0}, {"vx", seg.cmd.vx}, {"vy", seg.cmd.vy}, {"omega", seg.cmd.omega}});
    nlohmann::json remaps = nlohmann::json::array();
    for (const runtime::RemapEvent& e : rc.remaps)
        remaps.push_back(
            {{"tick", e.tick}, {"class", e.class_id}, {"mu", e.mu}, {"stiffness", e.stiffness}});

    return {
        {"seed", rc.seed},
        {"sim",
         {{"terrain_seed", rc.terrain_seed},
          {"extent_x", rc.terrain.extent_x},
          {"extent_y", rc.terrain.extent_y},
          {"patch_lo", rc.terrain.patch_lo},
          {"patch_hi", rc.terrain.patch_hi},
          {"cell_size", rc.terrain.cell_size},
          {"height_amp", rc.terrain.height_amp},
          {"classes", classes},
          {"collect_seed", rc.collect_seed},
          {"episodes", rc.episodes},
          {"steps", rc.steps},
          {"command_hold", rc.command_hold},
          {"obs_std", rc.noise.obs_std},
          {"demand_sigma", rc.noise.demand_sigma},
          {"gait",
           {{"period", rc.gait.period},
            {"duty", rc.gait.duty},
            {"mass", rc.gait.mass},
            {"gravity", rc.gait.gravity},
            {"k_unit", rc.gait.k_unit},
            {"beta", rc.gait.beta},
            {"tau_track", rc.gait.tau_track},
            {"kappa", rc.gait.kappa},
            {"base_height", rc.gait.base_height},
            {"swing_apex", rc.gait.swing_apex},
            {"ring_radius", rc.gait.ring_radius},
            {"max_speed", rc.gait.max_speed},
            {"max_yaw_rate", rc.gait.max_yaw_rate}}}}},
        {"decoder",
         {{"hidden", rc.dims.hidden},
          {"window", rc.dims.window},
          {"head1", rc.dims.head1},
          {"head2", rc.dims.head2},
          {"gate1", rc.dims.gate1},
          {"gate2", rc.dims.gate2},
          {"gated", rc.dims.gated},
          {"batch", rc.train.batch},
          {"epochs", rc.train.epochs},
          {"lr", rc.train.lr},
          {"weight_decay", rc.train.weight_decay},
          {"window_stride", rc.train.window_stride},
          {"train_seed", rc.train.seed}}},
        {"vision",
         {{"h1", rc.visual.h1},
          {"h2", rc.visual.h2},
          {"h3", rc.visual.h3},
          {"lr", rc.vis_train.lr},
          {"weight_decay", rc.vis_train.weight_decay},
          {"w_recon", rc.vis_train.w_recon},
          {"w_pred", rc.vis_train.w_pred},
          {"init_seed", rc.visual_seed},
          {"percentile", rc.percentile},
          {"walkable_mu", rc.walkable_mu}}},
        {"graph",
         {{"d_main", rc.graph.d_main},
          {"d_reproj", rc.graph.d_reproj},
          {"foot_radius", rc.graph.foot_radius},
          {"capacity", rc.graph.capacity},
          {"recon_fraction", rc.graph.recon_fraction}}},
        {"runtime",
         {{"ticks", rc.ticks},
          {"capture_every", rc.capture_every},
          {"image_size", rc.image_size},
          {"feature_dim", rc.feature_dim},
          {"feature_seed", rc.feature_seed},
          {"texture_seed", rc.texture_seed},
          {"start", {rc.start_x, rc.start_y, rc.start_yaw}},
          {"schedule", schedule},
          {"remaps", remaps},
          {"probe_class", rc.probe_class},
          {"learn_every", rc.learn_every},
          {"publish_every", rc.publish_every},
          {"batch", rc.learn_batch}}},
        {"twin",
         {{"slip_threshold", rc.slip_threshold},
          {"slack", rc.interval_slack},
          {"mu_wb", rc.twin_mu_wb},
          {"mu_ground", rc.twin_mu_ground},
          {"stiffness", rc.twin_stiffness},
          {"steps", rc.twin_steps},
          {"burst_period", rc.twin_burst_period},
          {"demand", rc.twin_demand},
          {"seed", rc.twin_seed}}}};
}

inline void write_config(const std::string& path, const RunConfig& rc) {
    std::ofstream out(path);
    if (!out) fail("write-config: cannot write ", path);
    out << config_json(rc).dump(2) << "\n";
    if (!out) fail("write-config: write failed for ", path);
}

} // namespace terraphys::config
