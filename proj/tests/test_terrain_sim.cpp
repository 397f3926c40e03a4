#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "terraphys/episode.hpp"
#include "terraphys/gait.hpp"
#include "terraphys/terrain.hpp"

using namespace terraphys;
using sim::Command;
using sim::kDt;
using sim::kNumFeet;

namespace {

terrain::TerrainGrid uniform_grid(double mu, double stiffness, double extent = 30.0) {
    terrain::TerrainParams p;
    p.extent_x = p.extent_y = extent;
    return terrain::generate_terrain(1, p, {{"flat", mu, mu, stiffness, stiffness, {0.5, 0.5, 0.5}}});
}

// Left half one class/physics, right half another; boundary at x = split.
terrain::TerrainGrid split_grid(double mu_left, double mu_right, double split, double extent = 30.0) {
    terrain::TerrainGrid g = uniform_grid(mu_left, 8.0, extent);
    g.classes = {{"hold", mu_left, mu_left, 8.0, 8.0, {0.4, 0.3, 0.2}},
                 {"slip", mu_right, mu_right, 8.0, 8.0, {0.6, 0.7, 0.8}}};
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix) {
            const double x = g.origin_x + (ix + 0.5) * g.cell_size;
            terrain::TerrainCell& c = g.cells[static_cast<std::size_t>(iy) * g.nx + ix];
            c.mu = x < split ? mu_left : mu_right;
            c.class_id = x < split ? 0 : 1;
            c.stiffness = 8.0;
        }
    return g;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("terrain generation is deterministic and class-faithful") {
    terrain::TerrainParams p;
    p.extent_x = p.extent_y = 12.0;
    const auto g1 = terrain::generate_terrain(42, p);
    const auto g2 = terrain::generate_terrain(42, p);
    REQUIRE(g1.cells.size() == g2.cells.size());
    for (std::size_t i = 0; i < g1.cells.size(); ++i) {
        REQUIRE(g1.cells[i].mu == g2.cells[i].mu);
        REQUIRE(g1.cells[i].stiffness == g2.cells[i].stiffness);
        REQUIRE(g1.cells[i].class_id == g2.cells[i].class_id);
    }

    SECTION("all parameters stay inside their class ranges") {
        for (const terrain::TerrainCell& c : g1.cells) {
            const terrain::ClassSpec& spec = g1.classes[c.class_id];
            REQUIRE(c.mu >= spec.mu_lo);
            REQUIRE(c.mu <= spec.mu_hi);
            REQUIRE(c.stiffness >= spec.s_lo);
            REQUIRE(c.stiffness <= spec.s_hi);
        }
    }
    SECTION("a degenerate class range pins the parameter exactly") {
        const auto g = uniform_grid(0.05, 3.0, 5.0);
        for (const terrain::TerrainCell& c : g.cells) {
            REQUIRE(c.mu == 0.05);
            REQUIRE(c.stiffness == 3.0);
        }
    }
    SECTION("empty class table is rejected") {
        REQUIRE_THROWS_AS(terrain::generate_terrain(1, p, {}), Error);
    }
    SECTION("bounds checks") {
        REQUIRE(g1.in_bounds(0.0, 0.0));
        REQUIRE_FALSE(g1.in_bounds(100.0, 0.0));
        REQUIRE_THROWS_AS(g1.cell_at(100.0, 0.0), Error);
        // a point maps to exactly one cell: nudging within one cell is stable
        const std::size_t i = g1.cell_index(0.31, -0.27);
        REQUIRE(g1.cell_index(0.33, -0.21) == i);
    }
}

TEST_CASE("terrain friction sampling is unbiased at scale") {
    terrain::TerrainParams p;
    p.extent_x = p.extent_y = 10.0; // 100 x 100 cells
    p.patch_lo = 0.5;
    p.patch_hi = 1.0;
    const auto g = terrain::generate_terrain(2024, p);
    REQUIRE(g.cells.size() == 10000);
    double mean = 0.0;
    for (const terrain::TerrainCell& c : g.cells) mean += c.mu;
    mean /= static_cast<double>(g.cells.size());
    REQUIRE(mean == Catch::Approx(0.5).margin(0.03));
}

TEST_CASE("terrain files round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "terraphys_grid";
    fs::create_directories(dir);
    terrain::TerrainParams p;
    p.extent_x = p.extent_y = 6.0;
    const auto g = terrain::generate_terrain(7, p);
    terrain::save_grid(dir.string(), g);
    const auto loaded = terrain::load_grid(dir.string());
    REQUIRE(loaded.nx == g.nx);
    REQUIRE(loaded.ny == g.ny);
    REQUIRE(loaded.seed == g.seed);
    REQUIRE(loaded.classes.size() == g.classes.size());
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
        REQUIRE(loaded.cells[i].mu == static_cast<double>(static_cast<float>(g.cells[i].mu)));
        REQUIRE(loaded.cells[i].class_id == g.cells[i].class_id);
    }
    fs::remove_all(dir);
}

TEST_CASE("high friction and zero noise produce zero slip") {
    const auto grid = uniform_grid(1.0, 8.0);
    sim::EpisodeConfig cfg;
    cfg.seed = 3;
    cfg.steps = 400;
    cfg.schedule = {{0.0, {1.0, 0.0, 0.0}}, {4.0, {0.6, 0.2, 0.1}}};
    cfg.noise.obs_std = 0.0;
    cfg.noise.demand_sigma = 0.0;
    const sim::Episode ep = sim::run_episode(grid, cfg);
    for (const sim::RobotState& st : ep.states)
        for (int i = 0; i < kNumFeet; ++i) REQUIRE(st.slip_dist[i] == 0.0);

    SECTION("the base tracks the command when nothing slips") {
        const sim::RobotState& late = ep.states[150];
        REQUIRE(late.vx == Catch::Approx(1.0).margin(0.05));
    }
}

TEST_CASE("penetration scales inversely with stiffness") {
    auto stance_penetration = [](double stiffness) {
        const auto grid = uniform_grid(0.9, stiffness);
        sim::EpisodeConfig cfg;
        cfg.seed = 5;
        cfg.steps = 50;
        cfg.schedule = {{0.0, {0.5, 0.0, 0.0}}};
        cfg.noise.obs_std = 0.0;
        cfg.noise.demand_sigma = 0.0;
        const sim::Episode ep = sim::run_episode(grid, cfg);
        for (int i = 0; i < kNumFeet; ++i)
            if (ep.states[30].contact[i]) return ep.states[30].penetration[i];
        return 0.0;
    };
    const double p1 = stance_penetration(1.0);
    const double p10 = stance_penetration(10.0);
    REQUIRE(p1 == Catch::Approx(10.0 * p10).margin(1e-12));
    // two stance feet share 50 kg: 245.25 N over s * 2000 N/m
    REQUIRE(p1 == Catch::Approx(50.0 * 9.81 / 2.0 / 2000.0).margin(1e-12));

    SECTION("penetration strictly decreases in stiffness") {
        const double p2 = stance_penetration(2.0), p5 = stance_penetration(5.0), p8 = stance_penetration(8.0);
        REQUIRE(p2 > p5);
        REQUIRE(p5 > p8);
    }
}

TEST_CASE("contact flags follow the gait phase with half duty") {
    const auto grid = uniform_grid(0.9, 8.0);
    sim::EpisodeConfig cfg;
    cfg.seed = 11;
    cfg.steps = 400;
    cfg.schedule = {{0.0, {0.8, 0.0, 0.0}}};
    const sim::Episode ep = sim::run_episode(grid, cfg);
    std::array<int, kNumFeet> stance_ticks{};
    constexpr double pi = 3.14159265358979323846;
    for (const sim::RobotState& st : ep.states) {
        for (int i = 0; i < kNumFeet; ++i) {
            REQUIRE(st.contact[i] == (st.phase[i] < pi));
            stance_ticks[i] += st.contact[i] ? 1 : 0;
        }
        // trot keeps exactly one diagonal pair on the ground
        REQUIRE(st.contact[0] == st.contact[3]);
        REQUIRE(st.contact[1] == st.contact[2]);
        REQUIRE(st.contact[0] != st.contact[1]);
    }
    for (int i = 0; i < kNumFeet; ++i)
        REQUIRE(static_cast<double>(stance_ticks[i]) / ep.steps == Catch::Approx(0.5).margin(0.03));

}

TEST_CASE("slip accumulates within a stance and resets at touchdown") {
    const auto grid = uniform_grid(0.05, 8.0);
    sim::EpisodeConfig cfg;
    cfg.seed = 17;
    cfg.steps = 500;
    cfg.schedule = {{0.0, {0.8, 0.0, 0.0}}};
    const sim::Episode ep = sim::run_episode(grid, cfg);
    double max_slip = 0.0;
    for (int t = 1; t < ep.steps; ++t)
        for (int i = 0; i < kNumFeet; ++i) {
            max_slip = std::max(max_slip, ep.states[t].slip_dist[i]);
            if (ep.states[t].contact[i] && !ep.states[t - 1].contact[i])
                REQUIRE(ep.states[t].slip_dist[i] < 0.06); // at most one tick of drift
        }
    REQUIRE(max_slip > 0.08); // a full stance accumulates far more than one tick
}

TEST_CASE("command envelope and terrain bounds are enforced") {
    const auto grid = uniform_grid(0.9, 8.0, 4.0);
    sim::RobotState st = sim::init_state(grid, 0, 0, 0);
    sim::GaitParams gait;
    sim::NoiseConfig noise;
    numkit::Rng rng(1);
    REQUIRE_THROWS_AS(sim::step_gait(st, grid, {2.0, 0.0, 0.0}, gait, noise, rng), Error);
    REQUIRE_THROWS_AS(sim::step_gait(st, grid, {0.0, 0.0, 0.5}, gait, noise, rng), Error);

    SECTION("walking off a small grid raises a foot-bounds error") {
        sim::EpisodeConfig cfg;
        cfg.steps = 500;
        cfg.schedule = {{0.0, {1.2, 0.0, 0.0}}};
        REQUIRE_THROWS_MATCHES(sim::run_episode(grid, cfg), Error,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("left the terrain")));
    }
}

TEST_CASE("labels always equal the grid lookup at the recorded foot position") {
    terrain::TerrainParams p;
    p.extent_x = p.extent_y = 30.0;
    const auto grid = terrain::generate_terrain(77, p);
    sim::EpisodeConfig cfg;
    cfg.seed = 77;
    cfg.steps = 300;
    cfg.schedule = sim::random_schedule(77, cfg.steps, 2.0, cfg.gait);
    cfg.noise.obs_std = 0.01;
    const sim::Episode ep = sim::run_episode(grid, cfg);
    for (int t = 0; t < ep.steps; ++t)
        for (int i = 0; i < kNumFeet; ++i) {
            const auto& cell = grid.cell_at(ep.states[t].foot_pos[i].x, ep.states[t].foot_pos[i].y);
            REQUIRE(ep.labels[t].mu[i] == cell.mu);
            REQUIRE(ep.labels[t].stiffness[i] == cell.stiffness);
        }
}

TEST_CASE("mean slip is non-increasing in friction") {
    auto mean_slip = [](double mu) {
        const auto grid = uniform_grid(mu, 8.0);
        sim::EpisodeConfig cfg;
        cfg.seed = 13; // same seed: matched command schedule and noise draws
        cfg.steps = 500;
        cfg.schedule = {{0.0, {1.0, 0.0, 0.0}}};
        cfg.noise.demand_sigma = 0.35;
        const sim::Episode ep = sim::run_episode(grid, cfg);
        double acc = 0.0;
        for (const sim::RobotState& st : ep.states)
            for (int i = 0; i < kNumFeet; ++i) acc += st.slip_dist[i];
        return acc / ep.steps;
    };
    double prev = std::numeric_limits<double>::infinity();
    for (double mu : {0.05, 0.25, 0.45, 0.65, 0.85}) {
        const double s = mean_slip(mu);
        REQUIRE(s <= prev + 1e-9);
        prev = s;
    }
    REQUIRE(mean_slip(0.05) > mean_slip(0.85));
}

TEST_CASE("front feet hit a friction drop at least one gait phase before hind feet") {
    // oscillating speed keeps traction demand active without stochastic noise
    constexpr double pi = 3.14159265358979323846;
    std::vector<sim::CommandSegment> schedule;
    for (int k = 0; k < 125; ++k) {
        const double t = k * 0.15;
        schedule.push_back({t, {0.4 + 0.35 * std::sin(2.0 * pi * t / 0.6), 0.0, 0.0}});
    }
    for (int scenario = 0; scenario < 10; ++scenario) {
        const double split = 1.0 + 0.35 * scenario;
        const auto grid = split_grid(0.95, 0.05, split);
        sim::EpisodeConfig cfg;
        cfg.seed = 100 + scenario;
        cfg.steps = 900;
        cfg.schedule = schedule;
        cfg.noise.obs_std = 0.0;
        cfg.noise.demand_sigma = 0.0;
        cfg.start_x = -2.0;
        const sim::Episode ep = sim::run_episode(grid, cfg);

        auto first_slip = [&](std::initializer_list<int> feet) {
            for (int t = 0; t < ep.steps; ++t)
                for (int i : feet)
                    if (ep.states[t].slip_dist[i] > 1e-6) return t;
            return ep.steps;
        };
        const int front = first_slip({0, 1});
        const int hind = first_slip({2, 3});
        INFO("scenario " << scenario << " front " << front << " hind " << hind);
        REQUIRE(front < ep.steps); // the drop must actually be reached
        REQUIRE(hind - front >= 20); // one gait phase = half a 0.8 s period
    }
}

TEST_CASE("episodes are reproducible and round trip through files") {
    terrain::TerrainParams p;
    p.extent_x = p.extent_y = 30.0;
    const auto grid = terrain::generate_terrain(55, p);
    sim::EpisodeConfig cfg;
    cfg.seed = 55;
    cfg.steps = 200;
    cfg.schedule = sim::random_schedule(55, cfg.steps, 2.0, cfg.gait);
    cfg.noise.obs_std = 0.01;
    const sim::Episode a = sim::run_episode(grid, cfg);
    const sim::Episode b = sim::run_episode(grid, cfg);
    for (int t = 0; t < cfg.steps; ++t) {
        REQUIRE(a.obs[t].o_p == b.obs[t].o_p);
        REQUIRE(a.obs[t].o_g == b.obs[t].o_g);
        REQUIRE(a.labels[t].mu == b.labels[t].mu);
        REQUIRE(a.states[t].base_pos.x == b.states[t].base_pos.x);
    }

    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "terraphys_ep";
    fs::remove_all(dir);
    sim::save_episode(dir.string(), a);
    const sim::Episode loaded = sim::load_episode(dir.string());
    REQUIRE(loaded.steps == a.steps);
    REQUIRE(loaded.schedule.size() == a.schedule.size());
    for (int t = 0; t < cfg.steps; ++t)
        for (int i = 0; i < sim::kObsProprioDims; ++i)
            REQUIRE(loaded.obs[t].o_p[i] == static_cast<double>(static_cast<float>(a.obs[t].o_p[i])));

    const fs::path dir2 = fs::temp_directory_path() / "terraphys_ep2";
    fs::remove_all(dir2);
    sim::save_episode(dir2.string(), loaded);
    REQUIRE(read_file((dir / "obs.f32").string()) == read_file((dir2 / "obs.f32").string()));
    REQUIRE(read_file((dir / "state.f32").string()) == read_file((dir2 / "state.f32").string()));
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("dataset collection is deterministic and covers the friction range") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "terraphys_ds";
    fs::remove_all(dir);
    sim::CollectConfig cfg;
    cfg.base_seed = 9;
    cfg.episodes = 4;
    cfg.steps = 150;
    const auto manifest = sim::collect_dataset(dir.string(), cfg);
    REQUIRE(manifest.at("total_steps").get<long long>() == 600);
    REQUIRE(manifest.at("episodes").size() == 4);

    const std::string first = read_file((dir / "ep0000" / "obs.f32").string());
    const fs::path dir2 = fs::temp_directory_path() / "terraphys_ds2";
    fs::remove_all(dir2);
    sim::collect_dataset(dir2.string(), cfg);
    REQUIRE(first == read_file((dir2 / "ep0000" / "obs.f32").string()));

    const auto episodes = sim::load_dataset(dir.string());
    REQUIRE(episodes.size() == 4);
    fs::remove_all(dir);
    fs::remove_all(dir2);

    SECTION("friction labels cover both extreme bins across many episodes") {
        sim::CollectConfig big;
        big.base_seed = 31;
        big.episodes = 12;
        big.steps = 120;
        int low = 0, high = 0;
        for (int e = 0; e < big.episodes; ++e) {
            const std::uint64_t es = numkit::Rng::derive_seed(big.base_seed, e);
            const auto grid = terrain::generate_terrain(es, big.terrain);
            sim::EpisodeConfig ecfg;
            ecfg.seed = es;
            ecfg.steps = big.steps;
            ecfg.schedule = sim::random_schedule(es, big.steps, 2.0, big.gait);
            ecfg.noise = big.noise;
            const sim::Episode ep = sim::run_episode(grid, ecfg);
            for (const sim::StepLabel& l : ep.labels)
                for (int i = 0; i < kNumFeet; ++i) {
                    low += l.mu[i] < 0.2 ? 1 : 0;
                    high += l.mu[i] > 0.8 ? 1 : 0;
                }
        }
        REQUIRE(low > 0);
        REQUIRE(high > 0);
    }
}

TEST_CASE("replay from a recorded state reproduces and perturbs correctly") {
    const auto grid = uniform_grid(0.5, 6.0);
    sim::EpisodeConfig cfg;
    cfg.seed = 21;
    cfg.steps = 120;
    // ramping commands keep deterministic traction demand nonzero
    cfg.schedule = {{0.0, {0.3, 0.0, 0.0}}, {0.8, {1.1, 0.0, 0.0}}, {1.6, {0.4, 0.0, 0.0}}};
    cfg.noise.obs_std = 0.0;
    cfg.noise.demand_sigma = 0.0;
    const sim::Episode ep = sim::run_episode(grid, cfg);

    const int t0 = 60;
    std::vector<Command> cmds;
    for (int t = t0 + 1; t <= t0 + 20; ++t) cmds.push_back(sim::command_at(cfg.schedule, t * kDt));

    SECTION("same friction reproduces the recording bit for bit") {
        const auto replay = sim::replay_from_state(ep.states[t0], cmds, grid, cfg.gait);
        for (int k = 0; k < 20; ++k) {
            const sim::RobotState& sim_st = replay[k];
            const sim::RobotState& rec_st = ep.states[t0 + 1 + k];
            REQUIRE(sim_st.base_pos.x == rec_st.base_pos.x);
            REQUIRE(sim_st.base_pos.z == rec_st.base_pos.z);
            REQUIRE(sim_st.vx == rec_st.vx);
            for (int i = 0; i < kNumFeet; ++i) {
                REQUIRE(sim_st.foot_pos[i].x == rec_st.foot_pos[i].x);
                REQUIRE(sim_st.slip_dist[i] == rec_st.slip_dist[i]);
            }
        }
    }
    SECTION("zero friction slips strictly more than full friction") {
        const auto slippery = sim::replay_from_state(ep.states[t0], cmds, grid.with_uniform_mu(0.0), cfg.gait);
        const auto grippy = sim::replay_from_state(ep.states[t0], cmds, grid.with_uniform_mu(1.0), cfg.gait);
        auto total_slip = [](const std::vector<sim::RobotState>& tr) {
            double acc = 0.0;
            for (const auto& st : tr)
                for (int i = 0; i < kNumFeet; ++i) acc += st.slip_dist[i];
            return acc;
        };
        REQUIRE(total_slip(slippery) > total_slip(grippy));
    }
}

TEST_CASE("initial state is consistent with the gait contract") {
    const auto grid = uniform_grid(0.8, 5.0);
    const sim::RobotState st = sim::init_state(grid, 0.5, -0.3, 0.4);
    REQUIRE(st.contact[0]);
    REQUIRE(st.contact[3]);
    REQUIRE_FALSE(st.contact[1]);
    REQUIRE_FALSE(st.contact[2]);
    REQUIRE(st.base_pos.z == Catch::Approx(0.5).margin(1e-12));
    for (int i = 0; i < kNumFeet; ++i) {
        const double d = std::hypot(st.foot_pos[i].x - 0.5, st.foot_pos[i].y - (-0.3));
        REQUIRE(d == Catch::Approx(std::hypot(0.3, 0.2)).margin(1e-12));
    }
}
