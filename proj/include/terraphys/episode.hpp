#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "terraphys/common.hpp"
#include "terraphys/gait.hpp"
#include "terraphys/terrain.hpp"

namespace terraphys::sim {

constexpr int kStateDims = 37;

struct CommandSegment {
    double t0 = 0.0; // seconds from episode start
    Command cmd;
};

inline Command command_at(const std::vector<CommandSegment>& schedule, double t) {
    Command cmd;
    for (const CommandSegment& seg : schedule)
        if (seg.t0 <= t + 1e-12) cmd = seg.cmd;
    return cmd;
}

struct EpisodeConfig {
    std::uint64_t seed = 0;
    int steps = 500;
    double start_x = 0.0, start_y = 0.0, start_yaw = 0.0;
    std::vector<CommandSegment> schedule; // empty = stand still
    GaitParams gait;
    NoiseConfig noise;
};

struct Episode {
    std::uint64_t seed = 0;
    double dt = kDt;
    int steps = 0;
    std::vector<CommandSegment> schedule;
    double start_x = 0.0, start_y = 0.0, start_yaw = 0.0;
    std::vector<Observation> obs;
    std::vector<StepLabel> labels;
    std::vector<RobotState> states; // state after each tick
};

inline Episode run_episode(const terrain::TerrainGrid& grid, const EpisodeConfig& cfg) {
    Episode ep;
    ep.seed = cfg.seed;
    ep.steps = cfg.steps;
    ep.schedule = cfg.schedule;
    ep.start_x = cfg.start_x;
    ep.start_y = cfg.start_y;
    ep.start_yaw = cfg.start_yaw;
    ep.obs.reserve(cfg.steps);
    ep.labels.reserve(cfg.steps);
    ep.states.reserve(cfg.steps);

    RobotState st = init_state(grid, cfg.start_x, cfg.start_y, cfg.start_yaw, cfg.gait);
    numkit::Rng rng(numkit::Rng::derive_seed(cfg.seed, 0x51e9));
    for (int t = 0; t < cfg.steps; ++t) {
        const Command cmd = command_at(cfg.schedule, t * kDt);
        StepOutput out = step_gait(st, grid, cmd, cfg.gait, cfg.noise, rng);
        ep.obs.push_back(out.obs);
        ep.labels.push_back(out.label);
        ep.states.push_back(st);
    }
    return ep;
}

namespace detail {

inline void flatten_state(const RobotState& st, float* out) {
    int k = 0;
    out[k++] = static_cast<float>(st.base_pos.x);
    out[k++] = static_cast<float>(st.base_pos.y);
    out[k++] = static_cast<float>(st.base_pos.z);
    out[k++] = static_cast<float>(st.yaw);
    out[k++] = static_cast<float>(st.roll);
    out[k++] = static_cast<float>(st.pitch);
    out[k++] = static_cast<float>(st.vx);
    out[k++] = static_cast<float>(st.vy);
    out[k++] = static_cast<float>(st.yaw_rate);
    for (int i = 0; i < kNumFeet; ++i) {
        out[k++] = static_cast<float>(st.foot_pos[i].x);
        out[k++] = static_cast<float>(st.foot_pos[i].y);
        out[k++] = static_cast<float>(st.foot_pos[i].z);
    }
    for (int i = 0; i < kNumFeet; ++i) out[k++] = st.contact[i] ? 1.0f : 0.0f;
    for (int i = 0; i < kNumFeet; ++i) out[k++] = static_cast<float>(st.phase[i]);
    for (int i = 0; i < kNumFeet; ++i) out[k++] = static_cast<float>(st.slip_dist[i]);
    for (int i = 0; i < kNumFeet; ++i) out[k++] = static_cast<float>(st.penetration[i]);
    if (k != kStateDims) fail("episode: state flattened to ", k, " dims, expected ", kStateDims);
}

inline RobotState unflatten_state(const float* in) {
    RobotState st;
    int k = 0;
    st.base_pos = {in[k], in[k + 1], in[k + 2]};
    k += 3;
    st.yaw = in[k++];
    st.roll = in[k++];
    st.pitch = in[k++];
    st.vx = in[k++];
    st.vy = in[k++];
    st.yaw_rate = in[k++];
    for (int i = 0; i < kNumFeet; ++i) {
        st.foot_pos[i] = {in[k], in[k + 1], in[k + 2]};
        k += 3;
    }
    for (int i = 0; i < kNumFeet; ++i) st.contact[i] = in[k++] > 0.5f;
    for (int i = 0; i < kNumFeet; ++i) st.phase[i] = in[k++];
    for (int i = 0; i < kNumFeet; ++i) st.slip_dist[i] = in[k++];
    for (int i = 0; i < kNumFeet; ++i) st.penetration[i] = in[k++];
    return st;
}

inline void write_f32(const std::string& path, const std::vector<float>& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("episode: cannot write ", path);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) fail("episode: write failed for ", path);
}

inline std::vector<float> read_f32(const std::string& path, std::size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("episode: cannot open ", path);
    std::vector<float> data(expected);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(expected * sizeof(float)));
    if (!in) fail("episode: ", path, " shorter than expected ", expected, " floats");
    return data;
}

} // namespace detail

inline void save_episode(const std::string& dir, const Episode& ep) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["seed"] = ep.seed;
    j["dt"] = ep.dt;
    j["steps"] = ep.steps;
    j["dims"] = {{"o_p", kObsProprioDims}, {"o_g", kObsGeometryDims},
                 {"label", kLabelDims}, {"state", kStateDims}};
    j["ranges"] = {{"mu", {0.0, 1.0}}, {"stiffness", {1.0, 10.0}}};
    j["start"] = {{"x", ep.start_x}, {"y", ep.start_y}, {"yaw", ep.start_yaw}};
    j["schedule"] = nlohmann::json::array();
    for (const CommandSegment& seg : ep.schedule)
        j["schedule"].push_back({{"t0", seg.t0}, {"vx", seg.cmd.vx}, {"vy", seg.cmd.vy},
                                 {"omega", seg.cmd.omega}});
    std::ofstream manifest(dir + "/manifest.json");
    if (!manifest) fail("episode: cannot write ", dir, "/manifest.json");
    manifest << j.dump(2) << "\n";

    std::vector<float> obs(static_cast<std::size_t>(ep.steps) * kObsDims);
    std::vector<float> labels(static_cast<std::size_t>(ep.steps) * kLabelDims);
    std::vector<float> states(static_cast<std::size_t>(ep.steps) * kStateDims);
    for (int t = 0; t < ep.steps; ++t) {
        float* o = obs.data() + static_cast<std::size_t>(t) * kObsDims;
        for (int i = 0; i < kObsProprioDims; ++i) o[i] = static_cast<float>(ep.obs[t].o_p[i]);
        for (int i = 0; i < kObsGeometryDims; ++i)
            o[kObsProprioDims + i] = static_cast<float>(ep.obs[t].o_g[i]);
        float* l = labels.data() + static_cast<std::size_t>(t) * kLabelDims;
        for (int i = 0; i < kNumFeet; ++i) {
            l[i] = static_cast<float>(ep.labels[t].mu[i]);
            l[kNumFeet + i] = static_cast<float>(ep.labels[t].stiffness[i]);
        }
        detail::flatten_state(ep.states[t], states.data() + static_cast<std::size_t>(t) * kStateDims);
    }
    detail::write_f32(dir + "/obs.f32", obs);
    detail::write_f32(dir + "/labels.f32", labels);
    detail::write_f32(dir + "/state.f32", states);
}

inline Episode load_episode(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.json");
    if (!manifest) fail("episode: cannot open ", dir, "/manifest.json");
    nlohmann::json j;
    try {
        manifest >> j;
    } catch (const std::exception& e) {
        fail("episode: invalid manifest in ", dir, ": ", e.what());
    }
    Episode ep;
    ep.seed = j.at("seed").get<std::uint64_t>();
    ep.dt = j.at("dt").get<double>();
    ep.steps = j.at("steps").get<int>();
    ep.start_x = j.at("start").at("x").get<double>();
    ep.start_y = j.at("start").at("y").get<double>();
    ep.start_yaw = j.at("start").at("yaw").get<double>();
    for (const auto& seg : j.at("schedule"))
        ep.schedule.push_back({seg.at("t0").get<double>(),
                               {seg.at("vx").get<double>(), seg.at("vy").get<double>(),
                                seg.at("omega").get<double>()}});

    const auto obs = detail::read_f32(dir + "/obs.f32", static_cast<std::size_t>(ep.steps) * kObsDims);
    const auto labels =
        detail::read_f32(dir + "/labels.f32", static_cast<std::size_t>(ep.steps) * kLabelDims);
    const auto states =
        detail::read_f32(dir + "/state.f32", static_cast<std::size_t>(ep.steps) * kStateDims);
    ep.obs.resize(ep.steps);
    ep.labels.resize(ep.steps);
    ep.states.resize(ep.steps);
    for (int t = 0; t < ep.steps; ++t) {
        const float* o = obs.data() + static_cast<std::size_t>(t) * kObsDims;
        for (int i = 0; i < kObsProprioDims; ++i) ep.obs[t].o_p[i] = o[i];
        for (int i = 0; i < kObsGeometryDims; ++i) ep.obs[t].o_g[i] = o[kObsProprioDims + i];
        const float* l = labels.data() + static_cast<std::size_t>(t) * kLabelDims;
        for (int i = 0; i < kNumFeet; ++i) {
            ep.labels[t].mu[i] = l[i];
            ep.labels[t].stiffness[i] = l[kNumFeet + i];
        }
        ep.states[t] = detail::unflatten_state(states.data() + static_cast<std::size_t>(t) * kStateDims);
    }
    return ep;
}

struct CollectConfig {
    std::uint64_t base_seed = 0;
    int episodes = 10;
    int steps = 500;
    double command_hold = 2.0; // seconds between command resamples
    terrain::TerrainParams terrain; // extent must cover the longest possible walk
    GaitParams gait;
    NoiseConfig noise;

    CollectConfig() {
        terrain.extent_x = terrain.extent_y = 30.0;
        noise.obs_std = 0.01;
    }
};

// Random piecewise-constant command schedule inside the envelope.
inline std::vector<CommandSegment> random_schedule(std::uint64_t seed, int steps, double hold,
                                                   const GaitParams& gait) {
    numkit::Rng rng(numkit::Rng::derive_seed(seed, 0xc0de));
    std::vector<CommandSegment> schedule;
    for (double t = 0.0; t < steps * kDt; t += hold) {
        Command cmd;
        cmd.vx = rng.uniform(-gait.max_speed, gait.max_speed);
        cmd.vy = rng.uniform(-gait.max_speed * 0.3, gait.max_speed * 0.3);
        cmd.omega = rng.uniform(-gait.max_yaw_rate, gait.max_yaw_rate);
        schedule.push_back({t, cmd});
    }
    return schedule;
}

// Writes out_dir/ep0000..epNNNN plus a dataset manifest. Every episode gets
// its own terrain so labels cover the full parameter ranges.
inline nlohmann::json collect_dataset(const std::string& out_dir, const CollectConfig& cfg) {
    std::filesystem::create_directories(out_dir);
    nlohmann::json manifest;
    manifest["episodes"] = nlohmann::json::array();
    long long total_steps = 0;
    for (int e = 0; e < cfg.episodes; ++e) {
        const std::uint64_t ep_seed = numkit::Rng::derive_seed(cfg.base_seed, static_cast<std::uint64_t>(e));
        const terrain::TerrainGrid grid = terrain::generate_terrain(ep_seed, cfg.terrain);
        EpisodeConfig ecfg;
        ecfg.seed = ep_seed;
        ecfg.steps = cfg.steps;
        ecfg.schedule = random_schedule(ep_seed, cfg.steps, cfg.command_hold, cfg.gait);
        ecfg.gait = cfg.gait;
        ecfg.noise = cfg.noise;
        const Episode ep = run_episode(grid, ecfg);

        char name[16];
        std::snprintf(name, sizeof(name), "ep%04d", e);
        save_episode(out_dir + "/" + name, ep);
        manifest["episodes"].push_back({{"dir", name}, {"seed", ep_seed}, {"steps", cfg.steps}});
        total_steps += cfg.steps;
    }
    manifest["base_seed"] = cfg.base_seed;
    manifest["total_steps"] = total_steps;
    manifest["dims"] = {{"o_p", kObsProprioDims}, {"o_g", kObsGeometryDims},
                        {"label", kLabelDims}, {"state", kStateDims}};
    manifest["ranges"] = {{"mu", {0.0, 1.0}}, {"stiffness", {1.0, 10.0}}};
    std::ofstream out(out_dir + "/manifest.json");
    if (!out) fail("collect: cannot write ", out_dir, "/manifest.json");
    out << manifest.dump(2) << "\n";
    return manifest;
}

// Loads every episode listed in a dataset manifest.
inline std::vector<Episode> load_dataset(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) fail("dataset: cannot open ", dir, "/manifest.json");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const std::exception& e) {
        fail("dataset: invalid manifest in ", dir, ": ", e.what());
    }
    std::vector<Episode> episodes;
    for (const auto& entry : manifest.at("episodes"))
        episodes.push_back(load_episode(dir + "/" + entry.at("dir").get<std::string>()));
    if (episodes.empty()) fail("dataset: ", dir, " contains no episodes");
    return episodes;
}

} // namespace terraphys::sim
