#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "terraphys/camera.hpp"
#include "terraphys/decoder.hpp"
#include "terraphys/episode.hpp"
#include "terraphys/mission_graph.hpp"
#include "terraphys/visual.hpp"

namespace terraphys::runtime {

// Reassigns the physics of every terrain cell of one class mid-mission while
// its appearance stays put, so the vision net's old mapping turns wrong.
struct RemapEvent {
    long long tick = 0;
    int class_id = 0;
    double mu = 0.5;
    double stiffness = -1.0; // < 1 keeps the existing stiffness
};

struct MissionScript {
    std::uint64_t terrain_seed = 0;
    terrain::TerrainParams terrain;
    std::vector<terrain::ClassSpec> classes; // empty = default table
    double start_x = 0.0, start_y = 0.0, start_yaw = 0.0;
    std::vector<sim::CommandSegment> schedule;
    sim::GaitParams gait;
    sim::NoiseConfig noise;
    long long ticks = 3000;
    int capture_every = 10; // sim ticks per camera frame
    int image_size = 64;
    int feature_dim = 64;
    std::uint64_t feature_seed = 42;
    std::uint64_t texture_seed = 7;
    std::vector<RemapEvent> remaps;
    int probe_class = -1; // class whose dense predictions are scored per capture

    void validate() const {
        if (ticks < 0) fail("mission-script: ticks ", ticks, " < 0");
        if (capture_every < 1) fail("mission-script: capture_every ", capture_every, " < 1");
        if (image_size < 8) fail("mission-script: image size ", image_size, " < 8");
        if (feature_dim < 1) fail("mission-script: feature dim ", feature_dim, " < 1");
        for (const RemapEvent& e : remaps) {
            if (e.class_id < 0) fail("mission-script: remap class ", e.class_id, " < 0");
            if (e.mu < 0.0 || e.mu > 1.0)
                fail("mission-script: remap friction ", e.mu, " outside [0, 1]");
            if (e.stiffness > 10.0)
                fail("mission-script: remap stiffness ", e.stiffness, " outside [1, 10]");
        }
    }
};

struct RuntimeConfig {
    int learn_every = 25; // sim ticks per learning step (~2 Hz at the 50 Hz sim rate)
    int publish_every = 1; // learning steps per weight publication
    vis::VisTrainConfig train; // lr 0.001, weight decay 0.001
    int batch = 100;
    vis::VisualDims dims;
    std::uint64_t visual_seed = 7;
    graph::GraphConfig graph;

    void validate() const {
        if (learn_every < 1) fail("runtime-config: learn_every ", learn_every, " < 1");
        if (publish_every < 1) fail("runtime-config: publish_every ", publish_every, " < 1");
        if (batch < 1) fail("runtime-config: batch ", batch, " < 1");
        graph.validate();
    }
};

// Immutable once filled in; inference re-hashes the weights before every use
// so a torn or tampered parameter set is caught instead of silently served.
struct WeightSnapshot {
    int version = -1;
    std::uint64_t checksum = 0;
    vis::VisualModel model;
};

struct ProbePoint {
    long long tick = 0;
    long long learn_steps = 0; // optimizer steps completed before this capture
    double error = 0.0;        // mean |predicted mu - true mu| over probe pixels
    long long pixels = 0;
    double confident_fraction = 0.0; // of the probe pixels
};

struct MissionResult {
    std::vector<nlohmann::json> log; // one event object per line
    vis::VisualModel model;
    graph::MissionGraph graph;
    long long ticks = 0;
    long long captures = 0;
    long long footholds = 0;
    long long foothold_pixels = 0;
    long long learn_invocations = 0; // times the learning task ran
    long long learn_steps = 0;       // optimizer steps actually taken
    long long publishes = 0;
    long long task_errors = 0;
    std::vector<vis::VisualLoss> learn_losses; // per optimizer step, pre-step weights
    std::vector<ProbePoint> probe;
};

// Deterministic round-robin driver for the three mission tasks. Each tick runs
// sim -> inference -> supervision -> learning; a failure in one task is logged
// and the others keep going. All state is public so tests can fault-inject.
class MissionRuntime {
public:
    MissionScript script;
    RuntimeConfig cfg;
    decoder::DecoderModel decoder_model;
    terrain::TerrainGrid grid;
    cam::CameraModel camera;
    sim::RobotState state;
    numkit::Rng sim_rng{0}, learn_rng{0};
    std::vector<sim::Observation> history;
    std::array<bool, sim::kNumFeet> prev_contact{};
    graph::MissionGraph graph;
    vis::VisualModel model; // the learner's working copy
    numkit::AdamOptimizer opt;
    WeightSnapshot published;
    long long tick = 0;
    MissionResult result;

    struct PendingCapture {
        long long tick = 0;
        geom::Pose pose;
        cam::FeatureMap features;
    };
    std::optional<PendingCapture> pending;

    MissionRuntime(MissionScript s, const decoder::DecoderModel& dec, RuntimeConfig rc,
                   std::uint64_t seed)
        : script(std::move(s)), cfg(std::move(rc)), decoder_model(dec),
          graph(cfg.graph), opt(adam_config(cfg)) {
        script.validate();
        cfg.validate();
        if (decoder_model.friction_net.empty() ||
            decoder_model.friction_net.front().size() == 0)
            fail("run-mission: decoder model is empty");
        if (decoder_model.dims.outputs != sim::kNumFeet)
            fail("run-mission: decoder predicts ", decoder_model.dims.outputs, " feet, sim has ",
                 sim::kNumFeet);
        if (cfg.dims.input != script.feature_dim)
            fail("run-mission: model takes ", cfg.dims.input, " feature dims, script extracts ",
                 script.feature_dim);

        grid = script.classes.empty()
                   ? terrain::generate_terrain(script.terrain_seed, script.terrain)
                   : terrain::generate_terrain(script.terrain_seed, script.terrain, script.classes);
        camera = cam::CameraModel::standard(script.image_size);
        state = sim::init_state(grid, script.start_x, script.start_y, script.start_yaw,
                                script.gait);
        prev_contact = state.contact;
        sim_rng = numkit::Rng(numkit::Rng::derive_seed(seed, 0x51e9));
        learn_rng = numkit::Rng(numkit::Rng::derive_seed(seed, 0xba7c));
        model = vis::init_visual(cfg.dims, cfg.visual_seed);
        publish(false); // version 0 exists before the first tick, unlogged
    }

    bool done() const { return tick >= script.ticks; }

    void step() {
        run_task("sim", [&] { sim_task(); });
        if (tick % script.capture_every == 0) run_task("inference", [&] { inference_task(); });
        run_task("supervision", [&] { supervision_task(); });
        if (tick % cfg.learn_every == 0) {
            ++result.learn_invocations;
            run_task("learning", [&] { learning_task(); });
        }
    }

    MissionResult finish() {
        result.ticks = tick;
        result.model = model;
        result.graph = std::move(graph);
        return std::move(result);
    }

private:
    static numkit::AdamConfig adam_config(const RuntimeConfig& rc) {
        numkit::AdamConfig ac;
        ac.lr = rc.train.lr;
        ac.weight_decay = rc.train.weight_decay;
        return ac;
    }

    template <typename Fn> void run_task(const char* name, Fn&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            ++result.task_errors;
            result.log.push_back(
                {{"event", "task-error"}, {"tick", tick}, {"task", name}, {"error", e.what()}});
        }
    }

    void sim_task() {
        ++tick; // events stamped with the tick they complete
        for (const RemapEvent& e : script.remaps)
            if (e.tick == tick) apply_remap(e);
        const sim::Command cmd =
            sim::command_at(script.schedule, static_cast<double>(tick - 1) * sim::kDt);
        const sim::StepOutput out =
            sim::step_gait(state, grid, cmd, script.gait, script.noise, sim_rng);
        history.push_back(out.obs);
    }

    void apply_remap(const RemapEvent& e) {
        long long cells = 0;
        for (terrain::TerrainCell& cell : grid.cells) {
            if (cell.class_id != e.class_id) continue;
            cell.mu = e.mu;
            if (e.stiffness >= 1.0) cell.stiffness = e.stiffness;
            ++cells;
        }
        result.log.push_back({{"event", "remap"},
                              {"tick", tick},
                              {"class", e.class_id},
                              {"mu", e.mu},
                              {"cells", cells}});
    }

    void inference_task() {
        if (vis::weights_checksum(published.model) != published.checksum)
            fail("inference: published snapshot fails its checksum");
        geom::Pose pose;
        pose.R = state.orientation();
        pose.t = state.base_pos;
        const cam::RenderedImage img = cam::render(grid, camera, pose, script.texture_seed);
        cam::FeatureMap features = cam::extract_features(img, script.feature_dim,
                                                         script.feature_seed);
        const vis::DensePrediction dense = vis::dense_predict(published.model, features);
        const vis::ConfidenceMask mask =
            vis::confidence_from_errors(dense.recon_err, img.width, img.height);

        double mean_recon = 0.0;
        for (double e : dense.recon_err) mean_recon += e;
        mean_recon /= static_cast<double>(dense.recon_err.size());

        nlohmann::json ev{{"event", "capture"},
                          {"tick", tick},
                          {"version", published.version},
                          {"mean_recon", mean_recon},
                          {"confident_fraction", mask.confident_fraction()},
                          {"degenerate", mask.degenerate}};
        if (script.probe_class >= 0) {
            ProbePoint p;
            p.tick = tick;
            p.learn_steps = result.learn_steps;
            long long confident = 0;
            for (std::size_t i = 0; i < dense.mu.size(); ++i) {
                if (img.sky[i] || img.class_id[i] != script.probe_class) continue;
                const geom::Vec3& w = img.world[i];
                p.error += std::abs(dense.mu[i] - grid.cell_at(w.x, w.y).mu);
                confident += mask.confident[i];
                ++p.pixels;
            }
            if (p.pixels > 0) {
                p.error /= static_cast<double>(p.pixels);
                p.confident_fraction =
                    static_cast<double>(confident) / static_cast<double>(p.pixels);
            }
            result.probe.push_back(p);
            ev["probe_error"] = p.error;
            ev["probe_pixels"] = p.pixels;
        }
        result.log.push_back(std::move(ev));
        ++result.captures;
        pending = PendingCapture{tick, pose, std::move(features)};
    }

    void supervision_task() {
        if (pending) {
            graph::MissionNode node =
                graph::make_node(pending->tick, pending->pose, camera, std::move(pending->features));
            if (graph::maybe_insert(graph, std::move(node)))
                result.log.push_back(
                    {{"event", "insert"}, {"tick", tick}, {"node", graph.nodes.back().id}});
            pending.reset();
        }
        bool any = false;
        for (int i = 0; i < sim::kNumFeet; ++i)
            any = any || (state.contact[static_cast<std::size_t>(i)] &&
                          !prev_contact[static_cast<std::size_t>(i)]);
        if (any) {
            const decoder::Prediction pred = decoder::predict(
                decoder_model, decoder::make_window(history, decoder_model.dims.window));
            for (int i = 0; i < sim::kNumFeet; ++i) {
                const auto f = static_cast<std::size_t>(i);
                if (!(state.contact[f] && !prev_contact[f])) continue;
                decoder::FootholdLabel label;
                label.foot = i;
                label.tick = static_cast<int>(tick);
                label.position = state.foot_pos[f];
                label.mu = std::clamp(pred.mu[f], 0.0, 1.0);
                label.stiffness = std::clamp(pred.stiffness[f], 1.0, 10.0);
                const long long pixels = graph::apply_foothold(graph, label);
                ++result.footholds;
                result.foothold_pixels += pixels;
                result.log.push_back({{"event", "foothold"},
                                      {"tick", tick},
                                      {"foot", i},
                                      {"mu", label.mu},
                                      {"stiffness", label.stiffness},
                                      {"pixels", pixels}});
            }
        }
        prev_contact = state.contact;
    }

    void learning_task() {
        const auto batch = graph::sample_batch(graph, cfg.batch, learn_rng);
        if (!batch) {
            result.log.push_back({{"event", "learn-idle"}, {"tick", tick}});
            return;
        }
        const vis::VisualLoss loss = vis::train_step(model, opt, *batch, cfg.train);
        ++result.learn_steps;
        result.learn_losses.push_back(loss);
        result.log.push_back({{"event", "learn"},
                              {"tick", tick},
                              {"step", result.learn_steps},
                              {"total", loss.total},
                              {"recon", loss.recon},
                              {"pred", loss.pred},
                              {"batch", cfg.batch}});
        if (result.learn_steps % cfg.publish_every == 0) publish(true);
    }

    void publish(bool log_event) {
        published.version += 1;
        published.model = model;
        published.checksum = vis::weights_checksum(published.model);
        if (!log_event) return;
        ++result.publishes;
        result.log.push_back({{"event", "publish"},
                              {"tick", tick},
                              {"version", published.version},
                              {"checksum", published.checksum}});
    }
};

inline MissionResult run_mission(const MissionScript& script, const decoder::DecoderModel& dec,
                                 const RuntimeConfig& cfg, std::uint64_t seed) {
    MissionRuntime rt(script, dec, cfg, seed);
    while (!rt.done()) rt.step();
    return rt.finish();
}

// JSONL: one event per line, a summary line with the per-task counters last.
inline void write_mission_log(const std::string& path, const MissionResult& r) {
    std::ofstream out(path);
    if (!out) fail("mission-log: cannot write ", path);
    for (const nlohmann::json& ev : r.log) out << ev.dump() << "\n";
    const nlohmann::json summary{{"event", "summary"},
                                 {"ticks", r.ticks},
                                 {"captures", r.captures},
                                 {"footholds", r.footholds},
                                 {"foothold_pixels", r.foothold_pixels},
                                 {"learn_invocations", r.learn_invocations},
                                 {"learn_steps", r.learn_steps},
                                 {"publishes", r.publishes},
                                 {"task_errors", r.task_errors},
                                 {"graph_inserted", r.graph.inserted},
                                 {"graph_evicted", r.graph.evicted}};
    out << summary.dump() << "\n";
    if (!out) fail("mission-log: write failed for ", path);
}

struct AdaptationCurve {
    long long remap_tick = -1;
    long long steps_at_remap = 0;
    double threshold = 0.0;
    long long steps_to_recover = -1; // optimizer steps past the remap; -1 = never
    std::vector<ProbePoint> points;
};

// Runs the mission and scores how fast the vision net re-learns a class whose
// physics were remapped mid-mission. Recovery = first probe capture after the
// remap whose error drops under the threshold.
inline AdaptationCurve adaptation_probe(const MissionScript& script,
                                        const decoder::DecoderModel& dec,
                                        const RuntimeConfig& cfg, std::uint64_t seed,
                                        double threshold = 0.1) {
    if (script.probe_class < 0) fail("adaptation-probe: script has no probe class");
    const MissionResult r = run_mission(script, dec, cfg, seed);

    AdaptationCurve curve;
    curve.threshold = threshold;
    curve.points = r.probe;
    for (const RemapEvent& e : script.remaps)
        if (curve.remap_tick < 0 || e.tick < curve.remap_tick) curve.remap_tick = e.tick;
    if (curve.remap_tick < 0) return curve;

    for (const ProbePoint& p : curve.points)
        if (p.tick < curve.remap_tick) curve.steps_at_remap = p.learn_steps;
    for (const ProbePoint& p : curve.points) {
        if (p.tick < curve.remap_tick || p.pixels == 0) continue;
        if (p.error < threshold) {
            curve.steps_to_recover = p.learn_steps - curve.steps_at_remap;
            break;
        }
    }
    return curve;
}

inline void write_probe_csv(const std::string& path, const AdaptationCurve& curve) {
    std::ofstream out(path);
    if (!out) fail("probe-csv: cannot write ", path);
    out << "tick,learn_steps,probe_error,probe_pixels,confident_fraction\n";
    char buf[128];
    for (const ProbePoint& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%.17g,%lld,%.17g\n", p.tick, p.learn_steps,
                      p.error, p.pixels, p.confident_fraction);
        out << buf;
    }
    if (!out) fail("probe-csv: write failed for ", path);
}

} // namespace terraphys::runtime
