#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "terraphys/camera.hpp"
#include "terraphys/config.hpp"

namespace terraphys::cli {

// Each stage writes into its own directory and echoes the effective config,
// so rerunning a stage on the echoed file reproduces its artifacts.
inline void prepare_out(const std::string& out, const config::RunConfig& rc) {
    std::filesystem::create_directories(out);
    config::write_config(out + "/config.json", rc);
}

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline Csv read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("read-csv: cannot open ", path);
    Csv csv;
    std::string line;
    if (!std::getline(in, line)) fail("read-csv: ", path, " is empty");
    std::stringstream hs(line);
    for (std::string cell; std::getline(hs, cell, ',');) csv.header.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                fail("read-csv: ", path, ": non-numeric cell '", cell, "'");
            }
        }
        if (row.size() != csv.header.size())
            fail("read-csv: ", path, ": row with ", row.size(), " cells, header has ",
                 csv.header.size());
        csv.rows.push_back(std::move(row));
    }
    return csv;
}

struct Series {
    std::string name;
    std::string color;
    std::vector<std::pair<double, double>> points;
};

// Minimal deterministic line chart; axes are padded to the data range.
inline void write_line_svg(const std::string& path, const std::string& title,
                           const std::vector<Series>& series) {
    constexpr int kW = 640, kH = 360, kPad = 48;
    double x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
    bool first = true;
    for (const Series& s : series)
        for (const auto& [x, y] : s.points) {
            if (first) {
                x_lo = x_hi = x;
                y_lo = y_hi = y;
                first = false;
            }
            x_lo = std::min(x_lo, x);
            x_hi = std::max(x_hi, x);
            y_lo = std::min(y_lo, y);
            y_hi = std::max(y_hi, y);
        }
    if (x_hi <= x_lo) x_hi = x_lo + 1.0;
    if (y_hi <= y_lo) y_hi = y_lo + 1.0;
    const auto px = [&](double x) { return kPad + (x - x_lo) / (x_hi - x_lo) * (kW - 2 * kPad); };
    const auto py = [&](double y) {
        return kH - kPad - (y - y_lo) / (y_hi - y_lo) * (kH - 2 * kPad);
    };
    std::ofstream out(path);
    if (!out) fail("line-svg: cannot write ", path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kW << "' height='" << kH << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << kW / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
        << "</text>\n"
        << "<line x1='" << kPad << "' y1='" << kH - kPad << "' x2='" << kW - kPad << "' y2='"
        << kH - kPad << "' stroke='black'/>\n"
        << "<line x1='" << kPad << "' y1='" << kPad << "' x2='" << kPad << "' y2='" << kH - kPad
        << "' stroke='black'/>\n"
        << "<text x='" << kPad << "' y='" << kH - kPad + 16 << "' font-size='11'>" << fmt(x_lo)
        << "</text>\n"
        << "<text x='" << kW - kPad << "' y='" << kH - kPad + 16
        << "' text-anchor='end' font-size='11'>" << fmt(x_hi) << "</text>\n"
        << "<text x='" << kPad - 4 << "' y='" << kH - kPad << "' text-anchor='end' font-size='11'>"
        << fmt(y_lo) << "</text>\n"
        << "<text x='" << kPad - 4 << "' y='" << kPad << "' text-anchor='end' font-size='11'>"
        << fmt(y_hi) << "</text>\n";
    int legend_y = 36;
    for (const Series& s : series) {
        out << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5' points='";
        for (const auto& [x, y] : s.points) out << px(x) << "," << py(y) << " ";
        out << "'/>\n"
            << "<text x='" << kW - kPad << "' y='" << legend_y
            << "' text-anchor='end' font-size='11' fill='" << s.color << "'>" << s.name
            << "</text>\n";
        legend_y += 14;
    }
    out << "</svg>\n";
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) fail("write-json: cannot write ", path);
    out << j.dump(2) << "\n";
}

} // namespace detail

// ----------------------------------------------------------------------------
// gen-terrain: draw the grid and save it with a top-down class-color preview.

inline void gen_terrain(const config::RunConfig& rc, const std::string& out) {
    prepare_out(out, rc);
    const std::vector<terrain::ClassSpec> classes =
        rc.classes.empty() ? terrain::default_class_table() : rc.classes;
    const terrain::TerrainGrid grid = terrain::generate_terrain(rc.terrain_seed, rc.terrain, classes);
    terrain::save_grid(out + "/terrain", grid);
    std::vector<double> rgb(static_cast<std::size_t>(grid.nx) * grid.ny * 3);
    for (int iy = 0; iy < grid.ny; ++iy)
        for (int ix = 0; ix < grid.nx; ++ix) {
            // flip rows so +y points up in the image
            const terrain::TerrainCell& c =
                grid.cells[static_cast<std::size_t>(grid.ny - 1 - iy) * grid.nx + ix];
            const auto& color = grid.classes[static_cast<std::size_t>(c.class_id)].color;
            const std::size_t base = (static_cast<std::size_t>(iy) * grid.nx + ix) * 3;
            rgb[base + 0] = color[0];
            rgb[base + 1] = color[1];
            rgb[base + 2] = color[2];
        }
    cam::write_ppm(out + "/terrain.ppm", grid.nx, grid.ny, rgb);
    log_info("gen-terrain: ", grid.nx, "x", grid.ny, " cells, ", grid.classes.size(),
             " classes -> ", out);
}

// ----------------------------------------------------------------------------
// collect: record a dataset of randomly commanded walks, one fresh terrain per
// episode. Honors a custom class table, unlike the built-in default recorder.

inline void collect(const config::RunConfig& rc, const std::string& out) {
    prepare_out(out, rc);
    const std::vector<terrain::ClassSpec> classes =
        rc.classes.empty() ? terrain::default_class_table() : rc.classes;
    nlohmann::json manifest;
    manifest["episodes"] = nlohmann::json::array();
    long long total_steps = 0;
    for (int e = 0; e < rc.episodes; ++e) {
        const std::uint64_t ep_seed =
            numkit::Rng::derive_seed(rc.collect_seed, static_cast<std::uint64_t>(e));
        const terrain::TerrainGrid grid = terrain::generate_terrain(ep_seed, rc.terrain, classes);
        sim::EpisodeConfig ecfg;
        ecfg.seed = ep_seed;
        ecfg.steps = rc.steps;
        ecfg.schedule = sim::random_schedule(ep_seed, rc.steps, rc.command_hold, rc.gait);
        ecfg.gait = rc.gait;
        ecfg.noise = rc.noise;
        const sim::Episode ep = sim::run_episode(grid, ecfg);
        char name[16];
        std::snprintf(name, sizeof(name), "ep%04d", e);
        sim::save_episode(out + "/" + name, ep);
        manifest["episodes"].push_back({{"dir", name}, {"seed", ep_seed}, {"steps", rc.steps}});
        total_steps += rc.steps;
        log_debug("collect: episode ", e, " seed ", ep_seed);
    }
    manifest["base_seed"] = rc.collect_seed;
    manifest["total_steps"] = total_steps;
    manifest["dims"] = {{"o_p", sim::kObsProprioDims},
                        {"o_g", sim::kObsGeometryDims},
                        {"label", sim::kLabelDims},
                        {"state", sim::kStateDims}};
    manifest["ranges"] = {{"mu", {0.0, 1.0}}, {"stiffness", {1.0, 10.0}}};
    detail::write_json(out + "/manifest.json", manifest);
    log_info("collect: ", rc.episodes, " episodes, ", total_steps, " steps -> ", out);
}

// ----------------------------------------------------------------------------
// train-decoder: fit the twin estimator on a recorded dataset. epochs = 0
// still emits a valid (untrained) model with data-fitted label norms.

inline void train_decoder_cmd(const config::RunConfig& rc, const std::string& data,
                              const std::string& out) {
    config::require_file(data + "/manifest.json", "train-decoder: dataset manifest");
    const std::vector<sim::Episode> eps = sim::load_dataset(data);
    const decoder::TrainResult res = decoder::train_decoder(eps, rc.dims, rc.train);
    prepare_out(out, rc);
    decoder::save_model(out + "/decoder.f32", res.model);

    const decoder::TrainLog& log = res.log;
    const std::size_t n = log.friction_loss.size();
    if (log.stiffness_loss.size() != n || log.gate_mean_mu.size() != n ||
        log.gate_mean_s.size() != n)
        fail("train-decoder: log series lengths disagree");
    std::ofstream csv(out + "/train_log.csv");
    if (!csv) fail("train-decoder: cannot write ", out, "/train_log.csv");
    csv << "step,friction_loss,stiffness_loss,gate_mu,gate_s\n";
    for (std::size_t i = 0; i < n; ++i)
        csv << i << "," << detail::fmt(log.friction_loss[i]) << ","
            << detail::fmt(log.stiffness_loss[i]) << "," << detail::fmt(log.gate_mean_mu[i]) << ","
            << detail::fmt(log.gate_mean_s[i]) << "\n";

    nlohmann::json metrics = {{"steps", n}, {"steps_per_epoch", log.steps_per_epoch}};
    if (n > 0) {
        metrics["final_friction_loss"] = log.friction_loss.back();
        metrics["final_stiffness_loss"] = log.stiffness_loss.back();
    }
    detail::write_json(out + "/metrics.json", metrics);
    log_info("train-decoder: ", n, " steps -> ", out);
}

// ----------------------------------------------------------------------------
// eval-decoder: score a model on a dataset; per-bin MAE feeds the plot stage.

inline void eval_decoder_cmd(const config::RunConfig& rc, const std::string& model_path,
                             const std::string& data, const std::string& out) {
    config::require_file(model_path, "eval-decoder: model");
    config::require_file(data + "/manifest.json", "eval-decoder: dataset manifest");
    const decoder::DecoderModel m = decoder::load_model(model_path);
    const std::vector<sim::Episode> eps = sim::load_dataset(data);
    const decoder::EvalReport rep = decoder::evaluate_decoder(m, eps);
    prepare_out(out, rc);
    decoder::write_bin_mae_csv(out + "/bin_mae.csv", rep);

    std::ofstream delays(out + "/delays.csv");
    if (!delays) fail("eval-decoder: cannot write ", out, "/delays.csv");
    delays << "delay_steps\n";
    for (double d : rep.delays_mu) delays << detail::fmt(d) << "\n";

    double delay_mean = 0.0;
    for (double d : rep.delays_mu) delay_mean += d;
    if (!rep.delays_mu.empty()) delay_mean /= static_cast<double>(rep.delays_mu.size());
    detail::write_json(out + "/metrics.json",
                       {{"mae_mu", rep.mae_mu},
                        {"mae_s", rep.mae_s},
                        {"mae_mu_low", rep.mae_mu_low},
                        {"mae_mu_high", rep.mae_mu_high},
                        {"interval_mae_mu", rep.interval_mae_mu},
                        {"gate_mean_mu", rep.gate_mean_mu},
                        {"gate_mean_s", rep.gate_mean_s},
                        {"samples", rep.samples},
                        {"delay_count", rep.delays_mu.size()},
                        {"delay_mean", delay_mean}});
    log_info("eval-decoder: mae_mu ", rep.mae_mu, ", mae_s ", rep.mae_s, " -> ", out);
}

// ----------------------------------------------------------------------------
// run-mission: the online loop. Saves everything the downstream evaluation
// needs: event log, graph snapshot, visual weights, the true grid, probe CSV.

inline void run_mission_cmd(const config::RunConfig& rc, const std::string& decoder_path,
                            const std::string& out) {
    config::require_file(decoder_path, "run-mission: decoder model");
    const decoder::DecoderModel dec = decoder::load_model(decoder_path);
    const runtime::MissionScript script = config::mission_script(rc);
    const runtime::RuntimeConfig rcfg = config::runtime_config(rc);
    const runtime::MissionResult r = runtime::run_mission(script, dec, rcfg, rc.seed);

    prepare_out(out, rc);
    runtime::write_mission_log(out + "/mission.jsonl", r);
    graph::save_graph(out + "/graph", r.graph);
    vis::save_visual(out + "/visual.f32", r.model);
    const terrain::TerrainGrid grid =
        script.classes.empty()
            ? terrain::generate_terrain(script.terrain_seed, script.terrain)
            : terrain::generate_terrain(script.terrain_seed, script.terrain, script.classes);
    terrain::save_grid(out + "/terrain", grid);

    std::ofstream learn(out + "/learn_log.csv");
    if (!learn) fail("run-mission: cannot write ", out, "/learn_log.csv");
    learn << "step,recon,pred,total\n";
    for (std::size_t i = 0; i < r.learn_losses.size(); ++i)
        learn << i << "," << detail::fmt(r.learn_losses[i].recon) << ","
              << detail::fmt(r.learn_losses[i].pred) << "," << detail::fmt(r.learn_losses[i].total)
              << "\n";

    if (!r.probe.empty()) {
        runtime::AdaptationCurve curve;
        curve.points = r.probe;
        runtime::write_probe_csv(out + "/probe.csv", curve);
    }
    detail::write_json(out + "/metrics.json", {{"ticks", r.ticks},
                                               {"captures", r.captures},
                                               {"footholds", r.footholds},
                                               {"foothold_pixels", r.foothold_pixels},
                                               {"learn_invocations", r.learn_invocations},
                                               {"learn_steps", r.learn_steps},
                                               {"publishes", r.publishes},
                                               {"task_errors", r.task_errors},
                                               {"graph_nodes", r.graph.nodes.size()}});
    log_info("run-mission: ", r.ticks, " ticks, ", r.captures, " captures, ", r.learn_steps,
             " learn steps -> ", out);
}

// ----------------------------------------------------------------------------
// eval-vision: score a visual model against the true grid through a saved
// mission graph. The ground-truth walkable region is every pixel whose ground
// point lands on a class the mission actually supervised (walked over).

struct VisionNodeRow {
    int id = 0;
    int tick = 0;
    double iou = 0.0;
    double confident_fraction = 0.0;
    double gt_fraction = 0.0;
};

struct VisionClassRow {
    int id = 0;
    std::string name;
    long long pixels = 0; // confident pixels whose ground point is this class
    double mean_mu = 0.0;
    double interval_error = 0.0; // mean distance of predictions to class range
};

struct VisionEval {
    std::vector<VisionNodeRow> nodes;
    std::vector<VisionClassRow> classes;
    std::set<int> touched; // classes under labeled pixels
    double mean_iou = 0.0;
};

inline VisionEval eval_vision(const vis::VisualModel& model, const graph::MissionGraph& g,
                              const terrain::TerrainGrid& grid) {
    VisionEval ev;
    for (const graph::MissionNode& node : g.nodes) {
        const cam::CameraView view(node.camera, node.T_world_base);
        for (int px : node.valid_pixels) {
            const int ix = px % node.features.width;
            const int iy = px / node.features.width;
            const auto hit = view.ground_point(ix, iy);
            if (hit && grid.in_bounds(hit->x, hit->y))
                ev.touched.insert(grid.cell_at(hit->x, hit->y).class_id);
        }
    }

    std::map<int, VisionClassRow> per_class;
    for (std::size_t c = 0; c < grid.classes.size(); ++c) {
        VisionClassRow row;
        row.id = static_cast<int>(c);
        row.name = grid.classes[c].name;
        per_class[row.id] = row;
    }

    double iou_sum = 0.0;
    for (const graph::MissionNode& node : g.nodes) {
        const vis::DensePrediction dense = vis::dense_predict(model, node.features);
        const vis::ConfidenceMask mask = vis::confidence(model, node.features);
        const cam::CameraView view(node.camera, node.T_world_base);
        long long inter = 0, uni = 0, conf = 0, gt_count = 0;
        const std::size_t n = node.pixel_count();
        for (std::size_t i = 0; i < n; ++i) {
            const int ix = static_cast<int>(i) % node.features.width;
            const int iy = static_cast<int>(i) / node.features.width;
            const auto hit = view.ground_point(ix, iy);
            const bool on_grid = hit && grid.in_bounds(hit->x, hit->y);
            const int class_id = on_grid ? grid.cell_at(hit->x, hit->y).class_id : -1;
            const bool is_gt = on_grid && ev.touched.count(class_id) > 0;
            const bool is_conf = mask.confident[i] != 0;
            inter += (is_gt && is_conf) ? 1 : 0;
            uni += (is_gt || is_conf) ? 1 : 0;
            conf += is_conf ? 1 : 0;
            gt_count += is_gt ? 1 : 0;
            if (is_conf && on_grid) {
                VisionClassRow& row = per_class[class_id];
                const terrain::ClassSpec& spec = grid.classes[static_cast<std::size_t>(class_id)];
                const double mu = dense.mu[i];
                row.pixels += 1;
                row.mean_mu += mu;
                row.interval_error += std::max({0.0, spec.mu_lo - mu, mu - spec.mu_hi});
            }
        }
        VisionNodeRow row;
        row.id = node.id;
        row.tick = node.tick;
        row.iou = uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
        row.confident_fraction = n > 0 ? static_cast<double>(conf) / static_cast<double>(n) : 0.0;
        row.gt_fraction = n > 0 ? static_cast<double>(gt_count) / static_cast<double>(n) : 0.0;
        ev.nodes.push_back(row);
        iou_sum += row.iou;
    }
    if (!ev.nodes.empty()) ev.mean_iou = iou_sum / static_cast<double>(ev.nodes.size());
    for (auto& [id, row] : per_class) {
        if (row.pixels > 0) {
            row.mean_mu /= static_cast<double>(row.pixels);
            row.interval_error /= static_cast<double>(row.pixels);
        }
        ev.classes.push_back(row);
    }
    return ev;
}

inline void eval_vision_cmd(const config::RunConfig& rc, const std::string& visual_path,
                            const std::string& graph_dir, const std::string& terrain_dir,
                            const std::string& out) {
    config::require_file(visual_path, "eval-vision: visual model");
    config::require_dir(graph_dir, "eval-vision: mission graph");
    config::require_file(terrain_dir + "/grid.json", "eval-vision: terrain grid");
    const vis::VisualModel model = vis::load_visual(visual_path);
    const graph::MissionGraph g = graph::load_graph(graph_dir);
    const terrain::TerrainGrid grid = terrain::load_grid(terrain_dir);
    const VisionEval ev = eval_vision(model, g, grid);

    prepare_out(out, rc);
    std::ofstream nodes(out + "/nodes.csv");
    if (!nodes) fail("eval-vision: cannot write ", out, "/nodes.csv");
    nodes << "node,tick,iou,confident_fraction,gt_fraction\n";
    for (const VisionNodeRow& r : ev.nodes)
        nodes << r.id << "," << r.tick << "," << detail::fmt(r.iou) << ","
              << detail::fmt(r.confident_fraction) << "," << detail::fmt(r.gt_fraction) << "\n";

    std::ofstream classes(out + "/classes.csv");
    if (!classes) fail("eval-vision: cannot write ", out, "/classes.csv");
    classes << "class,name,pixels,mean_mu,interval_error\n";
    for (const VisionClassRow& r : ev.classes)
        classes << r.id << "," << r.name << "," << r.pixels << "," << detail::fmt(r.mean_mu) << ","
                << detail::fmt(r.interval_error) << "\n";

    nlohmann::json touched = nlohmann::json::array();
    for (int c : ev.touched) touched.push_back(c);
    detail::write_json(out + "/metrics.json", {{"mean_iou", ev.mean_iou},
                                               {"nodes", ev.nodes.size()},
                                               {"touched_classes", touched}});
    log_info("eval-vision: mean IoU ", ev.mean_iou, " over ", ev.nodes.size(), " nodes -> ", out);
}

// ----------------------------------------------------------------------------
// digital-twin: record one slipping and one firm walk on uniform ground,
// replay every snippet across the friction grid, identify intervals.

struct TwinRun {
    std::vector<twin::Snippet> snippets;
    std::vector<std::vector<twin::TwinMetrics>> metrics;
    std::vector<twin::FrictionInterval> intervals;
};

// Commands alternate between a demand burst and a stop every burst period;
// the accelerations at the flips are what make a slippery surface slip.
inline std::vector<sim::CommandSegment> burst_schedule(const config::RunConfig& rc) {
    std::vector<sim::CommandSegment> schedule;
    const double total = rc.twin_steps * sim::kDt;
    bool on = true;
    for (double t = 0.0; t < total; t += rc.twin_burst_period) {
        schedule.push_back({t, {on ? rc.twin_demand : 0.0, 0.0, 0.0}});
        on = !on;
    }
    return schedule;
}

inline TwinRun run_twin(const config::RunConfig& rc) {
    TwinRun run;
    const auto record = [&](double mu, std::uint64_t stream) {
        // uniform ground sized to cover the longest possible burst walk
        const double half =
            std::max(10.0, rc.twin_steps * sim::kDt * rc.twin_demand + 5.0);
        terrain::TerrainGrid grid;
        grid.cell_size = 0.5;
        grid.nx = grid.ny = static_cast<int>(std::ceil(2.0 * half / grid.cell_size));
        grid.origin_x = grid.origin_y = -half;
        grid.classes = {{"uniform", mu, mu, rc.twin_stiffness, rc.twin_stiffness, {0.5, 0.5, 0.5}}};
        grid.cells.assign(static_cast<std::size_t>(grid.nx) * grid.ny,
                          terrain::TerrainCell{0.0, mu, rc.twin_stiffness, 0});
        sim::EpisodeConfig ecfg;
        ecfg.seed = numkit::Rng::derive_seed(rc.twin_seed, stream);
        ecfg.steps = rc.twin_steps;
        ecfg.schedule = burst_schedule(rc);
        ecfg.gait = rc.gait;
        ecfg.noise = {0.0, 0.0}; // replay fidelity wants a noise-free recording
        const sim::Episode ep = sim::run_episode(grid, ecfg);
        const std::vector<twin::Snippet> snips =
            twin::extract_snippets(ep, grid, rc.slip_threshold);
        run.snippets.insert(run.snippets.end(), snips.begin(), snips.end());
    };
    record(rc.twin_mu_wb, 0);
    record(rc.twin_mu_ground, 1);
    for (const twin::Snippet& snip : run.snippets) {
        run.metrics.push_back(twin::evaluate_grid(snip, rc.gait));
        run.intervals.push_back(twin::infer_valid_range(run.metrics.back(), rc.interval_slack));
    }
    return run;
}

inline void digital_twin_cmd(const config::RunConfig& rc, const std::string& out) {
    const TwinRun run = run_twin(rc);
    prepare_out(out, rc);
    twin::write_twin_csv(out + "/twin_metrics.csv", run.snippets, run.metrics);
    twin::write_twin_boxplot_csv(out + "/twin_box.csv", run.snippets, run.metrics);
    twin::write_twin_boxplot_svg(out + "/twin_box.svg", run.snippets, run.metrics);

    std::ofstream iv(out + "/intervals.csv");
    if (!iv) fail("digital-twin: cannot write ", out, "/intervals.csv");
    iv << "snippet,tag,true_mu,slip,lo,hi,interval_error\n";
    std::map<std::string, std::pair<long long, long long>> bracket; // tag -> (inside, total)
    std::map<std::string, double> err_sum;
    for (std::size_t i = 0; i < run.snippets.size(); ++i) {
        const twin::Snippet& s = run.snippets[i];
        const twin::FrictionInterval& r = run.intervals[i];
        const double err = twin::interval_error(s.true_mu, r);
        iv << i << "," << s.tag << "," << detail::fmt(s.true_mu) << ","
           << detail::fmt(s.accumulated_slip) << "," << detail::fmt(r.lo) << ","
           << detail::fmt(r.hi) << "," << detail::fmt(err) << "\n";
        bracket[s.tag].second += 1;
        if (err == 0.0) bracket[s.tag].first += 1;
        err_sum[s.tag] += err;
    }
    nlohmann::json tags;
    for (const auto& [tag, counts] : bracket)
        tags[tag] = {{"snippets", counts.second},
                     {"bracketed", counts.first},
                     {"mean_interval_error",
                      counts.second > 0 ? err_sum[tag] / static_cast<double>(counts.second) : 0.0}};
    detail::write_json(out + "/metrics.json", {{"snippets", run.snippets.size()}, {"tags", tags}});
    log_info("digital-twin: ", run.snippets.size(), " snippets -> ", out);
}

// ----------------------------------------------------------------------------
// plot: turn the CSVs of an earlier stage into SVG charts.

inline void plot_cmd(const config::RunConfig& rc, const std::string& in, const std::string& out) {
    config::require_dir(in, "plot: input directory");
    prepare_out(out, rc);
    bool any = false;

    if (std::filesystem::is_regular_file(in + "/bin_mae.csv")) {
        const detail::Csv csv = detail::read_csv(in + "/bin_mae.csv");
        decoder::EvalReport rep;
        for (const auto& row : csv.rows) {
            const int b = static_cast<int>(row[0]);
            if (b < 0 || b >= 10) fail("plot: bin index ", b, " outside [0, 10)");
            rep.bin_mae_mu[static_cast<std::size_t>(b)] = row[3];
            rep.bin_count_mu[static_cast<std::size_t>(b)] = static_cast<long long>(row[4]);
            rep.bin_mae_s[static_cast<std::size_t>(b)] = row[7];
            rep.bin_count_s[static_cast<std::size_t>(b)] = static_cast<long long>(row[8]);
        }
        decoder::write_bin_mae_svg(out + "/bin_mae.svg", rep);
        any = true;
    }
    if (std::filesystem::is_regular_file(in + "/probe.csv")) {
        const detail::Csv csv = detail::read_csv(in + "/probe.csv");
        detail::Series err{"probe error", "#3a6ea5", {}};
        detail::Series conf{"confident fraction", "#b5651d", {}};
        for (const auto& row : csv.rows) {
            err.points.push_back({row[0], row[2]});
            conf.points.push_back({row[0], row[4]});
        }
        detail::write_line_svg(out + "/probe.svg", "dense-prediction probe over the mission",
                               {err, conf});
        any = true;
    }
    if (std::filesystem::is_regular_file(in + "/train_log.csv")) {
        const detail::Csv csv = detail::read_csv(in + "/train_log.csv");
        detail::Series f{"friction loss", "#3a6ea5", {}};
        detail::Series s{"stiffness loss", "#b5651d", {}};
        for (const auto& row : csv.rows) {
            f.points.push_back({row[0], row[1]});
            s.points.push_back({row[0], row[2]});
        }
        detail::write_line_svg(out + "/train_log.svg", "estimator training loss", {f, s});
        any = true;
    }
    if (std::filesystem::is_regular_file(in + "/learn_log.csv")) {
        const detail::Csv csv = detail::read_csv(in + "/learn_log.csv");
        detail::Series t{"total loss", "#3a6ea5", {}};
        for (const auto& row : csv.rows) t.points.push_back({row[0], row[3]});
        detail::write_line_svg(out + "/learn_log.svg", "online visual training loss", {t});
        any = true;
    }
    if (!any) config::fail_artifact("plot: no plottable csv in ", in);
    log_info("plot: charts -> ", out);
}

} // namespace terraphys::cli
