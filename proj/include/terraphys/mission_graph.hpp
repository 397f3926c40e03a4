#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "terraphys/camera.hpp"
#include "terraphys/common.hpp"
#include "terraphys/decoder.hpp"
#include "terraphys/geometry.hpp"
#include "terraphys/numkit/rng.hpp"
#include "terraphys/visual.hpp"

namespace terraphys::graph {

struct GraphConfig {
    double d_main = 1.0;    // min robot travel between stored captures, meters
    double d_reproj = 5.0;  // footholds label every capture within this range
    double foot_radius = 0.03;
    int capacity = 256;     // node bound; oldest evicted first
    double recon_fraction = 0.0; // share of batch rows drawn label-free

    void validate() const {
        if (!(d_main > 0.0) || !(d_main < d_reproj))
            fail("graph-config: needs 0 < d_main (", d_main, ") < d_reproj (", d_reproj, ")");
        if (capacity < 1) fail("graph-config: capacity ", capacity, " < 1");
        if (recon_fraction < 0.0 || recon_fraction > 1.0)
            fail("graph-config: recon_fraction ", recon_fraction, " outside [0, 1]");
    }
};

// One stored capture: dense features plus the supervision masks that later
// footholds fill in. valid_pixels remembers first-write order so sampling
// stays reproducible across snapshot reloads.
struct MissionNode {
    int id = -1;
    int tick = 0;
    geom::Vec3 robot_position;
    geom::Pose T_world_base;
    cam::CameraModel camera;
    cam::FeatureMap features;
    std::vector<double> mask_mu, mask_s;
    std::vector<std::uint8_t> mask_valid;
    std::vector<int> valid_pixels;

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(features.width) * features.height;
    }
};

inline MissionNode make_node(int tick, const geom::Pose& T_world_base,
                             const cam::CameraModel& camera, cam::FeatureMap features) {
    if (features.width <= 0 || features.height <= 0 || features.dim <= 0)
        fail("mission-node: empty feature map");
    if (features.values.size() !=
        static_cast<std::size_t>(features.width) * features.height * features.dim)
        fail("mission-node: feature map holds ", features.values.size(), " values, wants ",
             static_cast<std::size_t>(features.width) * features.height * features.dim);
    MissionNode node;
    node.tick = tick;
    node.T_world_base = T_world_base;
    node.robot_position = T_world_base.t;
    node.camera = camera;
    node.features = std::move(features);
    const std::size_t n = node.pixel_count();
    node.mask_mu.assign(n, 0.0);
    node.mask_s.assign(n, 0.0);
    node.mask_valid.assign(n, 0);
    return node;
}

struct MissionGraph {
    GraphConfig cfg;
    std::vector<MissionNode> nodes;
    int next_id = 0;
    long long inserted = 0, rejected = 0, evicted = 0;
    bool has_last = false;
    geom::Vec3 last_position; // latest *added* node, survives its eviction

    explicit MissionGraph(const GraphConfig& c = {}) : cfg(c) { cfg.validate(); }
};

namespace detail {

inline double ground_distance(const geom::Vec3& a, const geom::Vec3& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

} // namespace detail

// Distance gate against the latest added node only: a zig-zag path may revisit
// old ground as long as the robot moved since the previous capture.
inline bool maybe_insert(MissionGraph& g, MissionNode candidate) {
    if (g.has_last &&
        detail::ground_distance(candidate.robot_position, g.last_position) < g.cfg.d_main) {
        ++g.rejected;
        return false;
    }
    candidate.id = g.next_id++;
    g.last_position = candidate.robot_position;
    g.has_last = true;
    g.nodes.push_back(std::move(candidate));
    ++g.inserted;
    while (static_cast<int>(g.nodes.size()) > g.cfg.capacity) {
        g.nodes.erase(g.nodes.begin());
        ++g.evicted;
    }
    return true;
}

// Splats the foothold into every capture taken within d_reproj of it.
// Later writes win on overlap. Returns the number of pixel writes.
inline long long apply_foothold(MissionGraph& g, const decoder::FootholdLabel& label) {
    long long written = 0;
    for (MissionNode& node : g.nodes) {
        if (detail::ground_distance(node.robot_position, label.position) > g.cfg.d_reproj)
            continue;
        const cam::CameraView view(node.camera, node.T_world_base);
        for (const auto& [ix, iy] : cam::splat_foothold(view, label.position, g.cfg.foot_radius)) {
            const std::size_t px = static_cast<std::size_t>(iy) * node.features.width + ix;
            node.mask_mu[px] = label.mu;
            node.mask_s[px] = label.stiffness;
            if (!node.mask_valid[px]) {
                node.mask_valid[px] = 1;
                node.valid_pixels.push_back(static_cast<int>(px));
            }
            ++written;
        }
    }
    return written;
}

// Uniform over supervised nodes, then uniform over that node's labeled pixels,
// with replacement; an optional share of rows is drawn from all pixels of the
// node as reconstruction-only data. No supervision anywhere -> idle signal.
inline std::optional<vis::VisualBatch> sample_batch(const MissionGraph& g, int batch_size,
                                                    numkit::Rng& rng) {
    if (batch_size < 1) fail("sample-batch: batch size ", batch_size, " < 1");
    std::vector<const MissionNode*> supervised;
    for (const MissionNode& node : g.nodes)
        if (!node.valid_pixels.empty()) supervised.push_back(&node);
    if (supervised.empty()) return std::nullopt;

    const int dim = supervised.front()->features.dim;
    vis::VisualBatch batch;
    batch.x = numkit::Tensor::zeros({batch_size, dim});
    batch.y = numkit::Tensor::zeros({batch_size, 2});
    batch.valid.assign(static_cast<std::size_t>(batch_size), 0);
    for (int r = 0; r < batch_size; ++r) {
        const MissionNode& node = *supervised[rng.index(supervised.size())];
        if (node.features.dim != dim)
            fail("sample-batch: node ", node.id, " has ", node.features.dim,
                 " feature dims, expected ", dim);
        std::size_t px;
        if (g.cfg.recon_fraction > 0.0 && rng.uniform() < g.cfg.recon_fraction) {
            px = rng.index(node.pixel_count());
        } else {
            px = static_cast<std::size_t>(node.valid_pixels[rng.index(node.valid_pixels.size())]);
            batch.valid[static_cast<std::size_t>(r)] = 1;
            batch.y.at(r, 0) = vis::scale_mu(node.mask_mu[px]);
            batch.y.at(r, 1) = vis::scale_s(node.mask_s[px]);
        }
        const float* f = node.features.values.data() + px * static_cast<std::size_t>(dim);
        for (int c = 0; c < dim; ++c) batch.x.at(r, c) = f[c];
    }
    return batch;
}

namespace detail {

inline void write_bytes(const std::string& path, const void* data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("graph: cannot write ", path);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) fail("graph: write failed for ", path);
}

inline void read_bytes(std::ifstream& in, void* data, std::size_t bytes, const std::string& path) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
    if (!in) fail("graph: ", path, " truncated");
}

inline nlohmann::json pose_json(const geom::Pose& p) {
    nlohmann::json j;
    j["R"] = std::vector<double>(p.R.m, p.R.m + 9);
    j["t"] = {p.t.x, p.t.y, p.t.z};
    return j;
}

inline geom::Pose pose_from_json(const nlohmann::json& j) {
    geom::Pose p;
    const auto R = j.at("R").get<std::vector<double>>();
    if (R.size() != 9) fail("graph: pose rotation needs 9 entries, got ", R.size());
    std::copy(R.begin(), R.end(), p.R.m);
    p.t = {j.at("t")[0].get<double>(), j.at("t")[1].get<double>(), j.at("t")[2].get<double>()};
    return p;
}

inline std::string node_stem(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "node_%06d", id);
    return buf;
}

} // namespace detail

// Snapshot layout: manifest.json + per node a meta JSON, raw f32 features and
// a raw mask block (u8 validity, f64 mu, f64 s). Doubles in JSON round trip
// exactly, so a reloaded graph samples identical batches from the same seed.
inline void save_graph(const std::string& dir, const MissionGraph& g) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["d_main"] = g.cfg.d_main;
    manifest["d_reproj"] = g.cfg.d_reproj;
    manifest["foot_radius"] = g.cfg.foot_radius;
    manifest["capacity"] = g.cfg.capacity;
    manifest["recon_fraction"] = g.cfg.recon_fraction;
    manifest["next_id"] = g.next_id;
    manifest["inserted"] = g.inserted;
    manifest["rejected"] = g.rejected;
    manifest["evicted"] = g.evicted;
    manifest["has_last"] = g.has_last;
    manifest["last_position"] = {g.last_position.x, g.last_position.y, g.last_position.z};
    manifest["nodes"] = nlohmann::json::array();
    for (const MissionNode& node : g.nodes) manifest["nodes"].push_back(node.id);

    for (const MissionNode& node : g.nodes) {
        const std::string stem = dir + "/" + detail::node_stem(node.id);
        nlohmann::json meta;
        meta["id"] = node.id;
        meta["tick"] = node.tick;
        meta["robot_position"] = {node.robot_position.x, node.robot_position.y,
                                  node.robot_position.z};
        meta["pose"] = detail::pose_json(node.T_world_base);
        meta["camera"] = {{"width", node.camera.width},   {"height", node.camera.height},
                          {"fx", node.camera.fx},         {"fy", node.camera.fy},
                          {"cx", node.camera.cx},         {"cy", node.camera.cy},
                          {"mount", detail::pose_json(node.camera.T_base_cam)}};
        meta["features"] = {{"width", node.features.width},
                            {"height", node.features.height},
                            {"dim", node.features.dim},
                            {"seed", node.features.seed}};
        meta["valid_pixels"] = node.valid_pixels;
        std::ofstream mf(stem + ".json");
        if (!mf) fail("graph: cannot write ", stem, ".json");
        mf << meta.dump(2) << "\n";

        detail::write_bytes(stem + ".feat.f32", node.features.values.data(),
                            node.features.values.size() * sizeof(float));
        std::ofstream mask(stem + ".mask.bin", std::ios::binary);
        if (!mask) fail("graph: cannot write ", stem, ".mask.bin");
        const std::size_t n = node.pixel_count();
        mask.write(reinterpret_cast<const char*>(node.mask_valid.data()),
                   static_cast<std::streamsize>(n));
        mask.write(reinterpret_cast<const char*>(node.mask_mu.data()),
                   static_cast<std::streamsize>(n * sizeof(double)));
        mask.write(reinterpret_cast<const char*>(node.mask_s.data()),
                   static_cast<std::streamsize>(n * sizeof(double)));
        if (!mask) fail("graph: write failed for ", stem, ".mask.bin");
    }
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) fail("graph: cannot write ", dir, "/manifest.json");
    mf << manifest.dump(2) << "\n";
}

inline MissionGraph load_graph(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) fail("graph: cannot open ", dir, "/manifest.json");
    nlohmann::json manifest;
    mf >> manifest;

    GraphConfig cfg;
    cfg.d_main = manifest.at("d_main").get<double>();
    cfg.d_reproj = manifest.at("d_reproj").get<double>();
    cfg.foot_radius = manifest.at("foot_radius").get<double>();
    cfg.capacity = manifest.at("capacity").get<int>();
    cfg.recon_fraction = manifest.at("recon_fraction").get<double>();
    MissionGraph g(cfg);
    g.next_id = manifest.at("next_id").get<int>();
    g.inserted = manifest.at("inserted").get<long long>();
    g.rejected = manifest.at("rejected").get<long long>();
    g.evicted = manifest.at("evicted").get<long long>();
    g.has_last = manifest.at("has_last").get<bool>();
    g.last_position = {manifest.at("last_position")[0].get<double>(),
                       manifest.at("last_position")[1].get<double>(),
                       manifest.at("last_position")[2].get<double>()};

    for (const auto& id_json : manifest.at("nodes")) {
        const int id = id_json.get<int>();
        const std::string stem = dir + "/" + detail::node_stem(id);
        std::ifstream meta_in(stem + ".json");
        if (!meta_in) fail("graph: cannot open ", stem, ".json");
        nlohmann::json meta;
        meta_in >> meta;

        MissionNode node;
        node.id = meta.at("id").get<int>();
        node.tick = meta.at("tick").get<int>();
        node.robot_position = {meta.at("robot_position")[0].get<double>(),
                               meta.at("robot_position")[1].get<double>(),
                               meta.at("robot_position")[2].get<double>()};
        node.T_world_base = detail::pose_from_json(meta.at("pose"));
        const auto& cj = meta.at("camera");
        node.camera.width = cj.at("width").get<int>();
        node.camera.height = cj.at("height").get<int>();
        node.camera.fx = cj.at("fx").get<double>();
        node.camera.fy = cj.at("fy").get<double>();
        node.camera.cx = cj.at("cx").get<double>();
        node.camera.cy = cj.at("cy").get<double>();
        node.camera.T_base_cam = detail::pose_from_json(cj.at("mount"));
        const auto& fj = meta.at("features");
        node.features.width = fj.at("width").get<int>();
        node.features.height = fj.at("height").get<int>();
        node.features.dim = fj.at("dim").get<int>();
        node.features.seed = fj.at("seed").get<std::uint64_t>();
        node.valid_pixels = meta.at("valid_pixels").get<std::vector<int>>();

        const std::size_t n = node.pixel_count();
        node.features.values.resize(n * static_cast<std::size_t>(node.features.dim));
        std::ifstream feat(stem + ".feat.f32", std::ios::binary);
        if (!feat) fail("graph: cannot open ", stem, ".feat.f32");
        detail::read_bytes(feat, node.features.values.data(),
                           node.features.values.size() * sizeof(float), stem + ".feat.f32");

        node.mask_valid.resize(n);
        node.mask_mu.resize(n);
        node.mask_s.resize(n);
        std::ifstream mask(stem + ".mask.bin", std::ios::binary);
        if (!mask) fail("graph: cannot open ", stem, ".mask.bin");
        detail::read_bytes(mask, node.mask_valid.data(), n, stem + ".mask.bin");
        detail::read_bytes(mask, node.mask_mu.data(), n * sizeof(double), stem + ".mask.bin");
        detail::read_bytes(mask, node.mask_s.data(), n * sizeof(double), stem + ".mask.bin");

        g.nodes.push_back(std::move(node));
    }
    return g;
}

} // namespace terraphys::graph
