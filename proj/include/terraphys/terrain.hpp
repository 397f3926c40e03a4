#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "terraphys/common.hpp"
#include "terraphys/numkit/rng.hpp"

namespace terraphys::terrain {

// Appearance class: one look, one (mu, stiffness) distribution. A class with
// a wide mu range is deliberately ambiguous — its look does not pin down the
// physics, which is what online adaptation has to handle.
struct ClassSpec {
    std::string name;
    double mu_lo = 0.0, mu_hi = 1.0;
    double s_lo = 1.0, s_hi = 10.0;
    std::array<double, 3> color = {0.5, 0.5, 0.5};
};

inline std::vector<ClassSpec> default_class_table() {
    return {
        {"rough", 0.60, 1.00, 5.0, 10.0, {0.45, 0.35, 0.25}},
        {"slick", 0.00, 0.40, 5.0, 10.0, {0.55, 0.65, 0.75}},
        {"panel", 0.05, 0.95, 4.0, 9.0, {0.35, 0.55, 0.35}},
        {"soft", 0.30, 0.70, 1.0, 4.0, {0.60, 0.55, 0.30}},
    };
}

struct TerrainCell {
    double height = 0.0;
    double mu = 0.5;
    double stiffness = 5.0;
    int class_id = 0;
};

struct TerrainGrid {
    double cell_size = 0.1;
    int nx = 0, ny = 0;
    double origin_x = 0.0, origin_y = 0.0; // world coords of cell (0,0) corner
    std::uint64_t seed = 0;
    std::vector<TerrainCell> cells; // row-major, iy * nx + ix
    std::vector<ClassSpec> classes;

    bool in_bounds(double x, double y) const {
        return x >= origin_x && y >= origin_y && x < origin_x + nx * cell_size &&
               y < origin_y + ny * cell_size;
    }

    std::size_t cell_index(double x, double y) const {
        if (!in_bounds(x, y))
            fail("terrain: point (", x, ", ", y, ") outside grid [", origin_x, ", ",
                 origin_x + nx * cell_size, ") x [", origin_y, ", ", origin_y + ny * cell_size, ")");
        const int ix = static_cast<int>(std::floor((x - origin_x) / cell_size));
        const int iy = static_cast<int>(std::floor((y - origin_y) / cell_size));
        return static_cast<std::size_t>(iy) * nx + ix;
    }

    const TerrainCell& cell_at(double x, double y) const { return cells[cell_index(x, y)]; }

    // Twin replays overlay a single candidate mu on the whole world.
    TerrainGrid with_uniform_mu(double mu) const {
        TerrainGrid g = *this;
        for (TerrainCell& c : g.cells) c.mu = mu;
        return g;
    }
};

struct TerrainParams {
    double extent_x = 20.0, extent_y = 20.0; // meters, grid centered on origin
    double patch_lo = 1.0, patch_hi = 3.0;   // patch edge lengths, meters
    double cell_size = 0.1;
    double height_amp = 0.0; // per-patch base height draw; flat by default
};

// Partitions the world into rectangular patches (independent column widths
// and row heights); each patch draws one class and one (mu, s, height).
inline TerrainGrid generate_terrain(std::uint64_t seed, const TerrainParams& params,
                                    std::vector<ClassSpec> classes = default_class_table()) {
    if (classes.empty()) fail("generate-terrain: class table is empty");
    if (params.extent_x <= 0.0 || params.extent_y <= 0.0)
        fail("generate-terrain: extent must be positive");

    TerrainGrid grid;
    grid.cell_size = params.cell_size;
    grid.nx = static_cast<int>(std::lround(params.extent_x / params.cell_size));
    grid.ny = static_cast<int>(std::lround(params.extent_y / params.cell_size));
    grid.origin_x = -0.5 * grid.nx * params.cell_size;
    grid.origin_y = -0.5 * grid.ny * params.cell_size;
    grid.seed = seed;
    grid.classes = std::move(classes);
    grid.cells.resize(static_cast<std::size_t>(grid.nx) * grid.ny);

    numkit::Rng rng(numkit::Rng::derive_seed(seed, 0x7e5a11));
    auto draw_edges = [&](int total_cells) {
        std::vector<int> edges = {0};
        while (edges.back() < total_cells) {
            const double span = rng.uniform(params.patch_lo, params.patch_hi);
            const int cells_span = std::max(1, static_cast<int>(std::lround(span / params.cell_size)));
            edges.push_back(std::min(total_cells, edges.back() + cells_span));
        }
        return edges;
    };
    const std::vector<int> col_edges = draw_edges(grid.nx);
    const std::vector<int> row_edges = draw_edges(grid.ny);

    for (std::size_t r = 0; r + 1 < row_edges.size(); ++r) {
        for (std::size_t c = 0; c + 1 < col_edges.size(); ++c) {
            const int cls = static_cast<int>(rng.index(grid.classes.size()));
            const ClassSpec& spec = grid.classes[cls];
            TerrainCell cell;
            cell.class_id = cls;
            cell.mu = rng.uniform(spec.mu_lo, spec.mu_hi);
            cell.stiffness = rng.uniform(spec.s_lo, spec.s_hi);
            cell.height = params.height_amp > 0.0 ? rng.uniform(0.0, params.height_amp) : 0.0;
            for (int iy = row_edges[r]; iy < row_edges[r + 1]; ++iy)
                for (int ix = col_edges[c]; ix < col_edges[c + 1]; ++ix)
                    grid.cells[static_cast<std::size_t>(iy) * grid.nx + ix] = cell;
        }
    }
    return grid;
}

inline void save_grid(const std::string& dir, const TerrainGrid& grid) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["cell_size"] = grid.cell_size;
    j["nx"] = grid.nx;
    j["ny"] = grid.ny;
    j["origin_x"] = grid.origin_x;
    j["origin_y"] = grid.origin_y;
    j["seed"] = grid.seed;
    j["classes"] = nlohmann::json::array();
    for (const ClassSpec& c : grid.classes) {
        j["classes"].push_back({{"name", c.name},
                                {"mu", {c.mu_lo, c.mu_hi}},
                                {"s", {c.s_lo, c.s_hi}},
                                {"color", {c.color[0], c.color[1], c.color[2]}}});
    }
    std::ofstream header(dir + "/grid.json");
    if (!header) fail("save-grid: cannot write ", dir, "/grid.json");
    header << j.dump(2) << "\n";

    std::ofstream bin(dir + "/cells.f32", std::ios::binary);
    if (!bin) fail("save-grid: cannot write ", dir, "/cells.f32");
    std::vector<float> buf;
    buf.reserve(grid.cells.size() * 4);
    for (const TerrainCell& c : grid.cells) {
        buf.push_back(static_cast<float>(c.height));
        buf.push_back(static_cast<float>(c.mu));
        buf.push_back(static_cast<float>(c.stiffness));
        buf.push_back(static_cast<float>(c.class_id));
    }
    bin.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!bin) fail("save-grid: write failed in ", dir);
}

inline TerrainGrid load_grid(const std::string& dir) {
    std::ifstream header(dir + "/grid.json");
    if (!header) fail("load-grid: cannot open ", dir, "/grid.json");
    nlohmann::json j;
    try {
        header >> j;
    } catch (const std::exception& e) {
        fail("load-grid: invalid grid.json in ", dir, ": ", e.what());
    }
    TerrainGrid grid;
    grid.cell_size = j.at("cell_size").get<double>();
    grid.nx = j.at("nx").get<int>();
    grid.ny = j.at("ny").get<int>();
    grid.origin_x = j.at("origin_x").get<double>();
    grid.origin_y = j.at("origin_y").get<double>();
    grid.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("classes")) {
        ClassSpec spec;
        spec.name = c.at("name").get<std::string>();
        spec.mu_lo = c.at("mu")[0].get<double>();
        spec.mu_hi = c.at("mu")[1].get<double>();
        spec.s_lo = c.at("s")[0].get<double>();
        spec.s_hi = c.at("s")[1].get<double>();
        spec.color = {c.at("color")[0].get<double>(), c.at("color")[1].get<double>(),
                      c.at("color")[2].get<double>()};
        grid.classes.push_back(std::move(spec));
    }

    std::ifstream bin(dir + "/cells.f32", std::ios::binary);
    if (!bin) fail("load-grid: cannot open ", dir, "/cells.f32");
    const std::size_t n = static_cast<std::size_t>(grid.nx) * grid.ny;
    std::vector<float> buf(n * 4);
    bin.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!bin) fail("load-grid: cells.f32 truncated in ", dir);
    grid.cells.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        grid.cells[i].height = buf[i * 4 + 0];
        grid.cells[i].mu = buf[i * 4 + 1];
        grid.cells[i].stiffness = buf[i * 4 + 2];
        grid.cells[i].class_id = static_cast<int>(buf[i * 4 + 3]);
    }
    return grid;
}

} // namespace terraphys::terrain
