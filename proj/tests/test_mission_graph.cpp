#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "terraphys/mission_graph.hpp"

using namespace terraphys;
using graph::GraphConfig;
using graph::MissionGraph;
using graph::MissionNode;

namespace {

cam::FeatureMap synthetic_features(std::uint64_t seed, int size = 32, int dim = 8) {
    cam::FeatureMap map;
    map.width = map.height = size;
    map.dim = dim;
    map.seed = seed;
    numkit::Rng rng(seed);
    map.values.resize(static_cast<std::size_t>(size) * size * dim);
    for (float& v : map.values) v = static_cast<float>(std::tanh(rng.normal()));
    return map;
}

MissionNode node_at(double x, double y, int tick = 0, std::uint64_t seed = 1) {
    geom::Pose pose;
    pose.t = {x, y, 0.5};
    return graph::make_node(tick, pose, cam::CameraModel::standard(32),
                            synthetic_features(seed));
}

// the 32x32 test images need a fatter foot disk than the deployed 3cm default,
// otherwise no pixel-center ground point lands inside it
MissionGraph coarse_graph() {
    GraphConfig cfg;
    cfg.foot_radius = 0.3;
    return MissionGraph(cfg);
}

decoder::FootholdLabel foothold(const geom::Vec3& position, double mu, double s) {
    decoder::FootholdLabel label;
    label.position = position;
    label.mu = mu;
    label.stiffness = s;
    return label;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("graph configuration is validated") {
    GraphConfig bad;
    bad.d_main = 5.0;
    bad.d_reproj = 5.0;
    REQUIRE_THROWS_AS(MissionGraph(bad), Error);
    bad = {};
    bad.capacity = 0;
    REQUIRE_THROWS_AS(MissionGraph(bad), Error);
    bad = {};
    bad.recon_fraction = 1.5;
    REQUIRE_THROWS_AS(MissionGraph(bad), Error);
    REQUIRE_THROWS_AS(graph::make_node(0, geom::Pose{}, cam::CameraModel::standard(32),
                                       cam::FeatureMap{}),
                      Error);
}

TEST_CASE("insertion is gated by distance to the latest node") {
    MissionGraph g;
    REQUIRE(maybe_insert(g, node_at(0.0, 0.0)));
    REQUIRE_FALSE(maybe_insert(g, node_at(0.0, 0.0))); // no travel since last capture
    REQUIRE_FALSE(maybe_insert(g, node_at(0.9, 0.0)));
    REQUIRE(maybe_insert(g, node_at(1.1, 0.0)));
    // near the first node but far from the latest: the gate only looks back once
    REQUIRE(maybe_insert(g, node_at(0.05, 0.05)));
    REQUIRE(g.nodes.size() == 3);
    REQUIRE(g.inserted == 3);
    REQUIRE(g.rejected == 2);
    REQUIRE(g.nodes[0].id == 0);
    REQUIRE(g.nodes[2].id == 2);

    SECTION("consecutive stored nodes are always d_main apart") {
        numkit::Rng rng(77);
        for (int i = 0; i < 200; ++i)
            maybe_insert(g, node_at(rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), i));
        for (std::size_t i = 1; i < g.nodes.size(); ++i) {
            const auto& a = g.nodes[i - 1].robot_position;
            const auto& b = g.nodes[i].robot_position;
            REQUIRE(std::hypot(a.x - b.x, a.y - b.y) >= g.cfg.d_main);
        }
    }
}

TEST_CASE("the oldest nodes are evicted at capacity") {
    GraphConfig cfg;
    cfg.capacity = 3;
    MissionGraph g(cfg);
    for (int i = 0; i < 5; ++i) REQUIRE(maybe_insert(g, node_at(2.0 * i, 0.0, i)));
    REQUIRE(g.nodes.size() == 3);
    REQUIRE(g.evicted == 2);
    REQUIRE(g.inserted == 5);
    REQUIRE(g.nodes[0].id == 2);
    REQUIRE(g.nodes[2].id == 4);
    // the gate still compares against the latest insert, not the evicted ones
    REQUIRE_FALSE(maybe_insert(g, node_at(8.5, 0.0)));
}

TEST_CASE("footholds label nearby captures through the camera") {
    MissionGraph g = coarse_graph();
    REQUIRE(maybe_insert(g, node_at(0.0, 0.0)));
    MissionNode& node = g.nodes.front();
    const cam::CameraView view(node.camera, node.T_world_base);
    const auto center = view.ground_point(15.5, 15.5);
    REQUIRE(center.has_value());

    const auto oracle = cam::splat_foothold(view, *center, g.cfg.foot_radius);
    REQUIRE_FALSE(oracle.empty());
    const long long written = apply_foothold(g, foothold(*center, 0.3, 4.0));
    REQUIRE(written == static_cast<long long>(oracle.size()));
    REQUIRE(node.valid_pixels.size() == oracle.size());
    for (const auto& [ix, iy] : oracle) {
        const std::size_t px = static_cast<std::size_t>(iy) * 32 + ix;
        REQUIRE(node.mask_valid[px] == 1);
        REQUIRE(node.mask_mu[px] == 0.3);
        REQUIRE(node.mask_s[px] == 4.0);
    }
    long long valid_total = 0;
    for (auto v : node.mask_valid) valid_total += v;
    REQUIRE(valid_total == static_cast<long long>(oracle.size()));

    SECTION("beyond the reprojection window nothing is written") {
        REQUIRE(apply_foothold(g, foothold({6.5, 0.0, 0.0}, 0.5, 5.0)) == 0);
    }
    SECTION("in range but out of view writes nothing") {
        REQUIRE(apply_foothold(g, foothold({-1.0, 0.0, 0.0}, 0.5, 5.0)) == 0);
    }
    SECTION("labeling is idempotent") {
        std::vector<double> mu_before = node.mask_mu;
        const long long again = apply_foothold(g, foothold(*center, 0.3, 4.0));
        REQUIRE(again == written);
        REQUIRE(node.mask_mu == mu_before);
        REQUIRE(node.valid_pixels.size() == oracle.size());
    }
    SECTION("overlapping labels resolve to the last write") {
        apply_foothold(g, foothold(*center, 0.9, 9.0));
        for (const auto& [ix, iy] : oracle) {
            const std::size_t px = static_cast<std::size_t>(iy) * 32 + ix;
            REQUIRE(node.mask_mu[px] == 0.9);
            REQUIRE(node.mask_s[px] == 9.0);
        }
    }
    SECTION("valid pixels back-project onto the foothold disk") {
        for (int px : node.valid_pixels) {
            const auto hit = view.ground_point(px % 32, px / 32, center->z);
            REQUIRE(hit.has_value());
            REQUIRE(std::hypot(hit->x - center->x, hit->y - center->y) <=
                    g.cfg.foot_radius + 1e-12);
        }
    }
    SECTION("only captures within range receive the label") {
        REQUIRE(maybe_insert(g, node_at(20.0, 0.0, 1, 2)));
        const long long more = apply_foothold(g, foothold(*center, 0.6, 6.0));
        REQUIRE(more == written); // the distant node stays untouched
        long long far_valid = 0;
        for (auto v : g.nodes[1].mask_valid) far_valid += v;
        REQUIRE(far_valid == 0);
    }
}

TEST_CASE("batch sampling is node-uniform and reproducible") {
    numkit::Rng rng(5);
    SECTION("no supervision anywhere idles the learner") {
        MissionGraph g;
        REQUIRE_FALSE(graph::sample_batch(g, 10, rng).has_value());
        maybe_insert(g, node_at(0.0, 0.0));
        REQUIRE_FALSE(graph::sample_batch(g, 10, rng).has_value());
    }

    MissionGraph g = coarse_graph();
    REQUIRE(maybe_insert(g, node_at(0.0, 0.0, 0, 1)));
    // far enough that node 1's foothold cannot reproject into node 0
    REQUIRE(maybe_insert(g, node_at(8.0, 0.0, 1, 2)));
    // node 0 gets a single labeled pixel, node 1 a whole disk of them
    g.nodes[0].mask_valid[100] = 1;
    g.nodes[0].mask_mu[100] = 0.2;
    g.nodes[0].mask_s[100] = 2.0;
    g.nodes[0].valid_pixels.push_back(100);
    const cam::CameraView view(g.nodes[1].camera, g.nodes[1].T_world_base);
    const auto center = view.ground_point(15.5, 15.5);
    apply_foothold(g, foothold(*center, 0.8, 8.0));
    REQUIRE(g.nodes[1].valid_pixels.size() > 3);

    SECTION("a single labeled pixel appears in every row drawn from its node") {
        const auto batch = graph::sample_batch(g, 64, rng);
        REQUIRE(batch.has_value());
        REQUIRE(batch->x.rows() == 64);
        int from_node0 = 0;
        for (int r = 0; r < 64; ++r) {
            REQUIRE(batch->valid[static_cast<std::size_t>(r)] == 1);
            if (batch->y.at(r, 0) == vis::scale_mu(0.2)) {
                ++from_node0;
                const float* f = g.nodes[0].features.values.data() + 100 * 8;
                for (int c = 0; c < 8; ++c)
                    REQUIRE(batch->x.at(r, c) == static_cast<double>(f[c]));
                REQUIRE(batch->y.at(r, 1) == vis::scale_s(2.0));
            } else {
                REQUIRE(batch->y.at(r, 0) == vis::scale_mu(0.8));
            }
        }
        REQUIRE(from_node0 > 0);
    }
    SECTION("nodes are drawn uniformly regardless of label counts") {
        const auto batch = graph::sample_batch(g, 10000, rng);
        long long n0 = 0;
        for (int r = 0; r < 10000; ++r)
            if (batch->y.at(r, 0) == vis::scale_mu(0.2)) ++n0;
        REQUIRE(n0 > 4700);
        REQUIRE(n0 < 5300);
    }
    SECTION("equal seeds draw equal batches") {
        numkit::Rng a(99), b(99);
        const auto ba = graph::sample_batch(g, 32, a);
        const auto bb = graph::sample_batch(g, 32, b);
        REQUIRE(ba->x.values == bb->x.values);
        REQUIRE(ba->y.values == bb->y.values);
        REQUIRE(ba->valid == bb->valid);
    }
    SECTION("reconstruction-only rows carry features without labels") {
        g.cfg.recon_fraction = 1.0;
        const auto batch = graph::sample_batch(g, 32, rng);
        for (int r = 0; r < 32; ++r) {
            REQUIRE(batch->valid[static_cast<std::size_t>(r)] == 0);
            REQUIRE(batch->y.at(r, 0) == 0.0);
        }
    }
}

TEST_CASE("snapshots reload into graphs that sample identically") {
    namespace fs = std::filesystem;
    MissionGraph g = coarse_graph();
    REQUIRE(maybe_insert(g, node_at(0.0, 0.0, 3, 11)));
    REQUIRE(maybe_insert(g, node_at(1.5, 0.5, 9, 12)));
    for (std::size_t n = 0; n < g.nodes.size(); ++n) {
        const cam::CameraView view(g.nodes[n].camera, g.nodes[n].T_world_base);
        const auto center = view.ground_point(15.5, 20.0);
        REQUIRE(center.has_value());
        apply_foothold(g, foothold(*center, 0.25 + 0.3 * static_cast<double>(n), 3.7));
    }

    const std::string dir = (fs::temp_directory_path() / "mission_graph_snap").string();
    fs::remove_all(dir);
    graph::save_graph(dir, g);
    const MissionGraph loaded = graph::load_graph(dir);

    REQUIRE(loaded.nodes.size() == g.nodes.size());
    REQUIRE(loaded.next_id == g.next_id);
    REQUIRE(loaded.inserted == g.inserted);
    REQUIRE(loaded.has_last);
    for (std::size_t n = 0; n < g.nodes.size(); ++n) {
        REQUIRE(loaded.nodes[n].id == g.nodes[n].id);
        REQUIRE(loaded.nodes[n].tick == g.nodes[n].tick);
        REQUIRE(loaded.nodes[n].features.values == g.nodes[n].features.values);
        REQUIRE(loaded.nodes[n].mask_mu == g.nodes[n].mask_mu);
        REQUIRE(loaded.nodes[n].mask_s == g.nodes[n].mask_s);
        REQUIRE(loaded.nodes[n].mask_valid == g.nodes[n].mask_valid);
        REQUIRE(loaded.nodes[n].valid_pixels == g.nodes[n].valid_pixels);
    }

    SECTION("same-seed sampling matches across the reload") {
        numkit::Rng a(7), b(7);
        const auto ba = graph::sample_batch(g, 50, a);
        const auto bb = graph::sample_batch(loaded, 50, b);
        REQUIRE(ba->x.values == bb->x.values);
        REQUIRE(ba->y.values == bb->y.values);
        REQUIRE(ba->valid == bb->valid);
    }
    SECTION("the insertion gate state survives the reload") {
        MissionGraph fresh = loaded;
        REQUIRE_FALSE(maybe_insert(fresh, node_at(1.6, 0.5)));
        REQUIRE(maybe_insert(fresh, node_at(3.5, 0.5)));
    }
    SECTION("saving is deterministic byte for byte") {
        const std::string dir2 = (fs::temp_directory_path() / "mission_graph_snap2").string();
        fs::remove_all(dir2);
        graph::save_graph(dir2, g);
        const std::string dir3 = (fs::temp_directory_path() / "mission_graph_snap3").string();
        fs::remove_all(dir3);
        graph::save_graph(dir3, loaded);
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            REQUIRE(slurp(dir2 + "/" + name) == slurp(entry.path().string()));
            REQUIRE(slurp(dir3 + "/" + name) == slurp(entry.path().string()));
        }
        fs::remove_all(dir2);
        fs::remove_all(dir3);
    }
    fs::remove_all(dir);
}
