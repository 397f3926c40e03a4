#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "terraphys/decoder_train.hpp"
#include "terraphys/runtime.hpp"

using namespace terraphys;

namespace {

std::vector<terrain::ClassSpec> one_class_table(double mu, double s,
                                                std::array<double, 3> color = {0.45, 0.35,
                                                                               0.25}) {
    terrain::ClassSpec spec;
    spec.name = "mat";
    spec.mu_lo = spec.mu_hi = mu;
    spec.s_lo = spec.s_hi = s;
    spec.color = color;
    return {spec};
}

// Tiny decoder trained on constant-physics terrain: label quality does not
// matter for runtime plumbing, only that a deterministic stream exists.
const decoder::DecoderModel& fixture_decoder() {
    static const decoder::DecoderModel model = [] {
        terrain::TerrainParams tp;
        tp.extent_x = tp.extent_y = 12.0;
        const terrain::TerrainGrid grid =
            terrain::generate_terrain(3, tp, one_class_table(0.42, 3.3));
        std::vector<sim::Episode> eps;
        for (int e = 0; e < 6; ++e) {
            sim::EpisodeConfig ec;
            ec.seed = numkit::Rng::derive_seed(11, static_cast<std::uint64_t>(e));
            ec.steps = 300;
            ec.noise.obs_std = 0.01;
            ec.schedule = {{0.0, {0.4, 0.0, 0.0}}, {3.0, {0.3, 0.05, 0.1}}};
            eps.push_back(sim::run_episode(grid, ec));
        }
        decoder::DecoderDims dims;
        dims.hidden = 16;
        dims.window = 20;
        dims.head1 = 32;
        dims.head2 = 16;
        dims.gate1 = 16;
        dims.gate2 = 16;
        decoder::TrainConfig tc;
        tc.epochs = 3;
        tc.seed = 5;
        return decoder::train_decoder(eps, dims, tc).model;
    }();
    return model;
}

runtime::MissionScript mat_script(long long ticks, double mu = 0.42, double s = 3.3) {
    runtime::MissionScript script;
    script.terrain_seed = 3;
    script.terrain.extent_x = script.terrain.extent_y = 16.0;
    script.classes = one_class_table(mu, s);
    script.ticks = ticks;
    script.capture_every = 10;
    script.image_size = 48;
    script.feature_dim = 32;
    script.noise.obs_std = 0.01;
    // gentle circle, radius ~2.7m, stays inside the grid indefinitely
    script.schedule = {{0.0, {0.4, 0.0, 0.15}}};
    return script;
}

runtime::RuntimeConfig small_cfg() {
    runtime::RuntimeConfig cfg;
    cfg.learn_every = 10;
    cfg.batch = 64;
    cfg.dims = {32, 64, 16, 64};
    cfg.graph.foot_radius = 0.25;
    return cfg;
}

long long count_events(const runtime::MissionResult& r, const std::string& name) {
    long long n = 0;
    for (const auto& ev : r.log)
        if (ev.at("event").get<std::string>() == name) ++n;
    return n;
}

std::string log_text(const runtime::MissionResult& r) {
    std::ostringstream out;
    for (const auto& ev : r.log) out << ev.dump() << "\n";
    return out.str();
}

} // namespace

TEST_CASE("mission setup is validated") {
    const auto& dec = fixture_decoder();
    const auto cfg = small_cfg();
    REQUIRE_THROWS_WITH(runtime::run_mission(mat_script(10), decoder::DecoderModel{}, cfg, 1),
                        Catch::Matchers::ContainsSubstring("empty"));
    auto bad = mat_script(10);
    bad.capture_every = 0;
    REQUIRE_THROWS_AS(runtime::run_mission(bad, dec, cfg, 1), Error);
    bad = mat_script(10);
    bad.feature_dim = 16; // model still wants 32
    REQUIRE_THROWS_WITH(runtime::run_mission(bad, dec, cfg, 1),
                        Catch::Matchers::ContainsSubstring("feature dims"));
    bad = mat_script(10);
    bad.remaps = {{5, 0, 1.5, -1.0}};
    REQUIRE_THROWS_AS(runtime::run_mission(bad, dec, cfg, 1), Error);
    auto bad_cfg = cfg;
    bad_cfg.learn_every = 0;
    REQUIRE_THROWS_AS(runtime::run_mission(mat_script(10), dec, bad_cfg, 1), Error);
}

TEST_CASE("a zero-length mission returns the untrained model untouched") {
    const auto cfg = small_cfg();
    const auto r = runtime::run_mission(mat_script(0), fixture_decoder(), cfg, 4);
    REQUIRE(r.log.empty());
    REQUIRE(r.ticks == 0);
    REQUIRE(r.captures == 0);
    REQUIRE(r.learn_invocations == 0);
    REQUIRE(r.graph.nodes.empty());
    const auto fresh = vis::init_visual(cfg.dims, cfg.visual_seed);
    REQUIRE(vis::weights_checksum(r.model) == vis::weights_checksum(fresh));

    const std::string path =
        (std::filesystem::temp_directory_path() / "empty_mission.jsonl").string();
    runtime::write_mission_log(path, r);
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    REQUIRE(nlohmann::json::parse(line).at("event") == "summary");
    REQUIRE_FALSE(std::getline(in, line));
    std::filesystem::remove(path);
}

TEST_CASE("identical seeds replay identical missions") {
    const auto script = mat_script(150);
    const auto cfg = small_cfg();
    const auto a = runtime::run_mission(script, fixture_decoder(), cfg, 21);
    const auto b = runtime::run_mission(script, fixture_decoder(), cfg, 21);
    REQUIRE(log_text(a) == log_text(b));
    REQUIRE(vis::weights_checksum(a.model) == vis::weights_checksum(b.model));

    const auto c = runtime::run_mission(script, fixture_decoder(), cfg, 22);
    REQUIRE(log_text(a) != log_text(c));
}

TEST_CASE("per-task throughput is accounted in the log") {
    auto script = mat_script(200);
    auto cfg = small_cfg();
    cfg.learn_every = 25;
    const auto r = runtime::run_mission(script, fixture_decoder(), cfg, 9);

    REQUIRE(r.ticks == 200);
    REQUIRE(r.learn_invocations == 200 / 25);
    REQUIRE(r.captures == 200 / 10);
    REQUIRE(count_events(r, "capture") == r.captures);
    REQUIRE(count_events(r, "learn") == r.learn_steps);
    REQUIRE(count_events(r, "learn-idle") + r.learn_steps == r.learn_invocations);
    REQUIRE(count_events(r, "publish") == r.publishes);
    REQUIRE(r.publishes == r.learn_steps); // publish_every = 1
    REQUIRE(r.task_errors == 0);
    REQUIRE(r.footholds > 0);
    REQUIRE(count_events(r, "foothold") == r.footholds);
    REQUIRE(r.graph.inserted >= 1);
    REQUIRE(count_events(r, "insert") == r.graph.inserted);
    REQUIRE(static_cast<long long>(r.learn_losses.size()) == r.learn_steps);

    // every capture quotes the version of the weights it actually used
    int last_version = 0;
    for (const auto& ev : r.log) {
        if (ev.at("event") == "publish") last_version = ev.at("version").get<int>();
        if (ev.at("event") == "capture") REQUIRE(ev.at("version").get<int>() == last_version);
    }
}

TEST_CASE("a corrupted snapshot stalls only the inference task") {
    // footholds only reproject into nodes whose cameras saw that ground, so
    // supervision starts once the robot reaches terrain captured earlier
    runtime::MissionRuntime rt(mat_script(150), fixture_decoder(), small_cfg(), 9);
    while (rt.tick < 35) rt.step();
    REQUIRE(rt.result.task_errors == 0);
    const long long footholds_before = rt.result.footholds;

    rt.published.model.params[0].values[0] += 1.0; // torn weights: checksum now stale
    while (rt.tick < 45) rt.step();
    REQUIRE(rt.result.task_errors == 1); // the capture at tick 40 refused the weights
    bool saw_error = false;
    for (const auto& ev : rt.result.log)
        if (ev.at("event") == "task-error") {
            saw_error = true;
            REQUIRE(ev.at("task") == "inference");
            REQUIRE_THAT(ev.at("error").get<std::string>(),
                         Catch::Matchers::ContainsSubstring("checksum"));
        }
    REQUIRE(saw_error);
    REQUIRE(rt.result.footholds > footholds_before); // supervision kept running

    while (!rt.done()) rt.step();
    const auto r = rt.finish();
    REQUIRE(r.learn_steps > 0);
    // inference failed exactly until the first real learning step republished
    REQUIRE(r.task_errors >= 1);
    REQUIRE(r.captures == 150 / 10 - r.task_errors);
    long long last_error_tick = 0, first_publish_tick = 0;
    for (const auto& ev : r.log) {
        if (ev.at("event") == "task-error")
            last_error_tick = ev.at("tick").get<long long>();
        if (ev.at("event") == "publish" && first_publish_tick == 0)
            first_publish_tick = ev.at("tick").get<long long>();
    }
    REQUIRE(first_publish_tick > 0);
    REQUIRE(last_error_tick <= first_publish_tick); // inference precedes learning in a tick
    for (const auto& ev : r.log) // recovered captures run on the fresh version
        if (ev.at("event") == "capture" && ev.at("tick").get<long long>() > first_publish_tick)
            REQUIRE(ev.at("version").get<int>() >= 1);
}

TEST_CASE("mid-mission remaps rewrite the terrain physics") {
    auto script = mat_script(20);
    script.remaps = {{5, 0, 0.123, 7.5}};
    runtime::MissionRuntime rt(script, fixture_decoder(), small_cfg(), 2);
    while (rt.tick < 4) rt.step();
    REQUIRE(rt.grid.cells.front().mu == 0.42);
    while (rt.tick < 6) rt.step();
    for (const auto& cell : rt.grid.cells) {
        REQUIRE(cell.mu == 0.123);
        REQUIRE(cell.stiffness == 7.5);
    }
    bool saw = false;
    for (const auto& ev : rt.result.log)
        if (ev.at("event") == "remap") {
            saw = true;
            REQUIRE(ev.at("tick") == 5);
            REQUIRE(ev.at("cells").get<long long>() ==
                    static_cast<long long>(rt.grid.cells.size()));
        }
    REQUIRE(saw);
}

TEST_CASE("supervised regression loss halves over a uniform mission") {
    const auto r = runtime::run_mission(mat_script(1200), fixture_decoder(), small_cfg(), 17);
    REQUIRE(r.learn_steps >= 100);
    const auto& losses = r.learn_losses;
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 5; ++i) {
        head += losses[static_cast<std::size_t>(i)].pred;
        tail += losses[losses.size() - 5 + static_cast<std::size_t>(i)].pred;
    }
    INFO("head " << head / 5 << " tail " << tail / 5);
    REQUIRE(tail < 0.5 * head);
    REQUIRE(r.task_errors == 0);
}

TEST_CASE("the probe tracks a remapped class back under threshold") {
    // the decoder reports ~0.42 regardless; terrain starts at 0.9 so the
    // vision net converges to a wrong value, then the remap makes it right
    auto script = mat_script(1200, 0.9, 3.3);
    script.probe_class = 0;
    script.remaps = {{600, 0, 0.42, -1.0}};
    const auto curve =
        runtime::adaptation_probe(script, fixture_decoder(), small_cfg(), 31, 0.1);

    REQUIRE(curve.remap_tick == 600);
    REQUIRE(curve.points.size() == 120);
    for (const auto& p : curve.points) REQUIRE(p.pixels > 0);

    double pre = 0.0;
    int pre_n = 0;
    for (const auto& p : curve.points)
        if (p.tick > 400 && p.tick < 600) {
            pre += p.error;
            ++pre_n;
        }
    REQUIRE(pre_n > 0);
    REQUIRE(pre / pre_n > 0.3); // converged to the stale mapping
    REQUIRE(curve.steps_to_recover >= 0);
    REQUIRE(curve.steps_to_recover <= 20);

    SECTION("the probe curve writes as CSV") {
        const std::string path =
            (std::filesystem::temp_directory_path() / "probe_curve.csv").string();
        runtime::write_probe_csv(path, curve);
        std::ifstream in(path);
        std::string line;
        REQUIRE(std::getline(in, line));
        REQUIRE(line == "tick,learn_steps,probe_error,probe_pixels,confident_fraction");
        long long rows = 0;
        while (std::getline(in, line)) ++rows;
        REQUIRE(rows == 120);
        std::filesystem::remove(path);
    }
}

TEST_CASE("without a remap the converged probe curve is flat") {
    auto script = mat_script(700);
    script.probe_class = 0;
    const auto curve =
        runtime::adaptation_probe(script, fixture_decoder(), small_cfg(), 13, 0.1);
    REQUIRE(curve.remap_tick == -1);
    REQUIRE(curve.steps_to_recover == -1);
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = curve.points.size() - 5; i < curve.points.size(); ++i) {
        lo = std::min(lo, curve.points[i].error);
        hi = std::max(hi, curve.points[i].error);
    }
    REQUIRE(hi - lo < 0.05);
}

TEST_CASE("a never-walked class stays unconfident through its remap") {
    runtime::MissionScript script;
    script.terrain_seed = 3;
    script.terrain.extent_x = script.terrain.extent_y = 16.0;
    auto table = one_class_table(0.42, 3.3);
    terrain::ClassSpec ice;
    ice.name = "ice";
    ice.mu_lo = ice.mu_hi = 0.9;
    ice.s_lo = ice.s_hi = 8.0;
    ice.color = {0.55, 0.70, 0.85};
    table.push_back(ice);
    script.classes = table;
    script.ticks = 900;
    script.capture_every = 10;
    script.image_size = 48;
    script.feature_dim = 32;
    script.noise.obs_std = 0.01;
    script.start_x = -0.7;
    script.start_y = -5.0;
    script.start_yaw = 1.5707963267948966; // walk +y along the class seam
    script.schedule = {{0.0, {0.35, 0.0, 0.0}}};
    script.probe_class = 1;
    script.remaps = {{450, 1, 0.2, -1.0}};

    runtime::MissionRuntime rt(script, fixture_decoder(), small_cfg(), 23);
    // seam at x = 0: the robot walks +y at x = -0.7, feet never cross it
    for (int iy = 0; iy < rt.grid.ny; ++iy)
        for (int ix = 0; ix < rt.grid.nx; ++ix) {
            auto& cell = rt.grid.cells[static_cast<std::size_t>(iy) * rt.grid.nx + ix];
            const double x = rt.grid.origin_x + (ix + 0.5) * rt.grid.cell_size;
            if (x < 0.0) {
                cell.class_id = 0;
                cell.mu = 0.42;
                cell.stiffness = 3.3;
            } else {
                cell.class_id = 1;
                cell.mu = 0.9;
                cell.stiffness = 8.0;
            }
        }
    while (!rt.done()) rt.step();
    const auto r = rt.finish();
    REQUIRE(r.task_errors == 0);
    REQUIRE(r.learn_steps > 0); // class 0 supervision still flows

    long long probed = 0;
    for (const auto& p : r.probe) {
        if (p.pixels == 0) continue;
        ++probed;
        REQUIRE(p.confident_fraction < 0.3);
        if (p.tick > 450) REQUIRE(p.error > 0.1); // no labels ever arrive: no recovery
    }
    REQUIRE(probed > 50);
}
