// Command-line front end: every pipeline stage behind one binary. Stages are
// deterministic; rerunning a command on the config echoed into its output
// directory reproduces the artifacts byte for byte.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
// 3 missing input artifact.

#include <cstdio>
#include <functional>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "terraphys/cli.hpp"

namespace {

struct Common {
    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_out) {
    c.out = default_out;
    cmd->add_option("--config", c.config_path, "run configuration JSON");
    cmd->add_option("--out", c.out, "output directory")->capture_default_str();
    cmd->add_option("--seed", c.seed, "override the top-level seed");
    cmd->add_flag("--deterministic", c.deterministic,
                  "pin the deterministic execution order (always on; accepted for scripts)");
}

terraphys::config::RunConfig resolve(const Common& c) {
    nlohmann::json j = nlohmann::json::object();
    if (!c.config_path.empty()) j = terraphys::config::read_config_json(c.config_path);
    if (c.seed) {
        if (!j.is_object()) terraphys::config::fail_config("top level: wants an object");
        j["seed"] = *c.seed;
    }
    return terraphys::config::parse_config(j);
}

void print_error(const char* kind, const std::string& msg, int code) {
    const nlohmann::json err = {{"error", kind}, {"message", msg}, {"exit", code}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"terrain physical-parameter identification pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "terraphys 0.1.0");

    std::function<void()> run;

    Common gt;
    CLI::App* gen = app.add_subcommand("gen-terrain", "draw a terrain grid and save it");
    add_common(gen, gt, "out/gen-terrain");
    gen->callback([&] {
        run = [&] { terraphys::cli::gen_terrain(resolve(gt), gt.out); };
    });

    Common co;
    CLI::App* collect = app.add_subcommand("collect", "record a dataset of commanded walks");
    add_common(collect, co, "out/collect");
    collect->callback([&] {
        run = [&] { terraphys::cli::collect(resolve(co), co.out); };
    });

    Common td;
    std::string td_data;
    CLI::App* train = app.add_subcommand("train-decoder", "fit the twin estimator on a dataset");
    add_common(train, td, "out/train-decoder");
    train->add_option("--data", td_data, "dataset directory (from collect)")->required();
    train->callback([&] {
        run = [&] { terraphys::cli::train_decoder_cmd(resolve(td), td_data, td.out); };
    });

    Common ed;
    std::string ed_model, ed_data;
    CLI::App* evald = app.add_subcommand("eval-decoder", "score an estimator on a dataset");
    add_common(evald, ed, "out/eval-decoder");
    evald->add_option("--model", ed_model, "decoder weight file")->required();
    evald->add_option("--data", ed_data, "dataset directory")->required();
    evald->callback([&] {
        run = [&] { terraphys::cli::eval_decoder_cmd(resolve(ed), ed_model, ed_data, ed.out); };
    });

    Common rm;
    std::string rm_decoder;
    CLI::App* mission = app.add_subcommand("run-mission", "run the online mission loop");
    add_common(mission, rm, "out/run-mission");
    mission->add_option("--decoder", rm_decoder, "decoder weight file")->required();
    mission->callback([&] {
        run = [&] { terraphys::cli::run_mission_cmd(resolve(rm), rm_decoder, rm.out); };
    });

    Common ev;
    std::string ev_visual, ev_graph, ev_terrain;
    CLI::App* evalv = app.add_subcommand("eval-vision", "score a visual model on a mission graph");
    add_common(evalv, ev, "out/eval-vision");
    evalv->add_option("--visual", ev_visual, "visual weight file")->required();
    evalv->add_option("--graph", ev_graph, "mission graph directory")->required();
    evalv->add_option("--terrain", ev_terrain, "terrain grid directory")->required();
    evalv->callback([&] {
        run = [&] {
            terraphys::cli::eval_vision_cmd(resolve(ev), ev_visual, ev_graph, ev_terrain, ev.out);
        };
    });

    Common dt;
    CLI::App* twin = app.add_subcommand("digital-twin", "replay recorded walks across frictions");
    add_common(twin, dt, "out/digital-twin");
    twin->callback([&] {
        run = [&] { terraphys::cli::digital_twin_cmd(resolve(dt), dt.out); };
    });

    Common pl;
    std::string pl_in;
    CLI::App* plot = app.add_subcommand("plot", "turn a stage's CSV output into SVG charts");
    add_common(plot, pl, "out/plot");
    plot->add_option("--in", pl_in, "stage output directory to plot")->required();
    plot->callback([&] {
        run = [&] { terraphys::cli::plot_cmd(resolve(pl), pl_in, pl.out); };
    });

    CLI11_PARSE(app, argc, argv);

    try {
        run();
    } catch (const terraphys::config::ConfigError& e) {
        print_error("config", e.what(), 2);
        return 2;
    } catch (const terraphys::config::ArtifactError& e) {
        print_error("artifact", e.what(), 3);
        return 3;
    } catch (const std::exception& e) {
        print_error("runtime", e.what(), 1);
        return 1;
    }
    return 0;
}
