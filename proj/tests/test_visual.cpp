#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "terraphys/visual.hpp"

using namespace terraphys;
using numkit::Tensor;
using vis::VisualDims;

namespace {

VisualDims small_dims() {
    VisualDims d;
    d.input = 16;
    d.h1 = 64;
    d.h2 = 12;
    d.h3 = 64;
    return d;
}

Tensor random_features(numkit::Rng& rng, int n, int dim) {
    Tensor x = Tensor::zeros({n, dim});
    for (double& v : x.values) v = std::tanh(rng.normal());
    return x;
}

// Two feature clusters with distinct physics, mimicking two appearance classes.
struct ClusterScene {
    std::vector<double> center_a, center_b;
    double mu_a = 0.2, s_a = 2.0;
    double mu_b = 0.8, s_b = 8.0;

    ClusterScene(numkit::Rng& rng, int dim) {
        for (int i = 0; i < dim; ++i) {
            center_a.push_back(std::tanh(rng.normal()));
            center_b.push_back(std::tanh(rng.normal()));
        }
    }

    vis::VisualBatch sample(numkit::Rng& rng, int n, bool include_b, bool labels) const {
        const int dim = static_cast<int>(center_a.size());
        vis::VisualBatch batch;
        batch.x = Tensor::zeros({n, dim});
        batch.y = Tensor::zeros({n, 2});
        batch.valid.assign(static_cast<std::size_t>(n), labels ? 1 : 0);
        for (int r = 0; r < n; ++r) {
            const bool b = include_b && rng.uniform() < 0.5;
            const auto& c = b ? center_b : center_a;
            for (int i = 0; i < dim; ++i) batch.x.at(r, i) = c[static_cast<std::size_t>(i)] + 0.05 * rng.normal();
            batch.y.at(r, 0) = vis::scale_mu(b ? mu_b : mu_a);
            batch.y.at(r, 1) = vis::scale_s(b ? s_b : s_a);
        }
        return batch;
    }
};

// Two appearance classes split across the world at x = split.
terrain::TerrainGrid split_scene(double split) {
    terrain::TerrainParams params;
    params.extent_x = params.extent_y = 30.0;
    terrain::TerrainGrid grid = terrain::generate_terrain(
        3, params,
        {{"mat", 0.2, 0.2, 3.0, 3.0, {0.45, 0.35, 0.25}},
         {"ice", 0.05, 0.05, 8.0, 8.0, {0.55, 0.70, 0.85}}});
    for (int iy = 0; iy < grid.ny; ++iy)
        for (int ix = 0; ix < grid.nx; ++ix) {
            const double x = grid.origin_x + (ix + 0.5) * grid.cell_size;
            terrain::TerrainCell& cell = grid.cells[static_cast<std::size_t>(iy) * grid.nx + ix];
            cell.class_id = x < split ? 0 : 1;
            cell.mu = x < split ? 0.2 : 0.05;
            cell.stiffness = x < split ? 3.0 : 8.0;
        }
    return grid;
}

} // namespace

TEST_CASE("visual network initializes to the configured shape") {
    const VisualDims d; // deployed default
    REQUIRE(d.outputs() == d.input + 2);
    const vis::VisualModel m = vis::init_visual(d, 3);
    REQUIRE(m.params.size() == vis::kVisParamCount);
    for (int i = 0; i < vis::kVisParamCount; ++i) {
        const auto want = vis::vis_param_shape(i, d);
        REQUIRE(m.params[static_cast<std::size_t>(i)].rows() == want[0]);
        REQUIRE(m.params[static_cast<std::size_t>(i)].cols() == want[1]);
    }
    for (double v : m.params[vis::kVb1].values) REQUIRE(v == 0.0);

    const vis::VisualModel m2 = vis::init_visual(d, 3);
    REQUIRE(m.params[vis::kVw1].values == m2.params[vis::kVw1].values);
    const vis::VisualModel m3 = vis::init_visual(d, 4);
    REQUIRE(m.params[vis::kVw1].values != m3.params[vis::kVw1].values);
}

TEST_CASE("pixels are evaluated independently and in order") {
    const VisualDims d = small_dims();
    const vis::VisualModel m = vis::init_visual(d, 7);
    numkit::Rng rng(7);
    const Tensor x = random_features(rng, 20, d.input);
    const Tensor out = vis::forward_batch(m, x);
    REQUIRE(out.rows() == 20);
    REQUIRE(out.cols() == d.outputs());
    for (double v : out.values) REQUIRE(std::isfinite(v));

    SECTION("a pixel alone equals the same pixel inside the batch") {
        for (int r : {0, 7, 19}) {
            Tensor one = Tensor::zeros({1, d.input});
            for (int c = 0; c < d.input; ++c) one.at(0, c) = x.at(r, c);
            const Tensor o = vis::forward_batch(m, one);
            for (int c = 0; c < d.outputs(); ++c) REQUIRE(o.at(0, c) == out.at(r, c));
        }
    }
    SECTION("reversing the batch reverses the outputs") {
        Tensor rev = Tensor::zeros({20, d.input});
        for (int r = 0; r < 20; ++r)
            for (int c = 0; c < d.input; ++c) rev.at(r, c) = x.at(19 - r, c);
        const Tensor o = vis::forward_batch(m, rev);
        for (int r = 0; r < 20; ++r)
            for (int c = 0; c < d.outputs(); ++c) REQUIRE(o.at(r, c) == out.at(19 - r, c));
    }
    SECTION("dimension mismatches are rejected") {
        REQUIRE_THROWS_AS(vis::forward_batch(m, Tensor::zeros({4, d.input + 1})), Error);
        cam::FeatureMap map;
        map.width = map.height = 4;
        map.dim = d.input + 1;
        map.values.assign(16 * static_cast<std::size_t>(d.input + 1), 0.1f);
        REQUIRE_THROWS_AS(vis::dense_predict(m, map), Error);
    }
}

TEST_CASE("loss combines reconstruction and masked regression") {
    SECTION("perfect outputs score zero") {
        vis::VisualBatch batch;
        batch.x = Tensor::zeros({3, 4});
        batch.y = Tensor::zeros({3, 2});
        numkit::Rng rng(5);
        for (double& v : batch.x.values) v = rng.normal();
        for (double& v : batch.y.values) v = rng.uniform();
        batch.valid = {1, 0, 1};
        Tensor out = Tensor::zeros({3, 6});
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) out.at(r, c) = batch.x.at(r, c);
            for (int c = 0; c < 2; ++c) out.at(r, 4 + c) = batch.y.at(r, c);
        }
        const auto loss = vis::visual_loss(out, batch);
        REQUIRE(loss.recon == 0.0);
        REQUIRE(loss.pred == 0.0);
        REQUIRE(loss.total == 0.0);
    }
    SECTION("a hand-computed two-pixel example matches") {
        vis::VisualBatch batch;
        batch.x = Tensor::zeros({2, 2});
        batch.x.values = {0.5, -0.25, 1.0, 1.0};
        batch.y = Tensor::zeros({2, 2});
        batch.y.values = {0.3, 0.6, 0.0, 0.0};
        batch.valid = {1, 0};
        Tensor out = Tensor::zeros({2, 4});
        out.values = {0.75, 0.0, 0.4, 0.4,
                      1.0, 1.0, 9.9, -9.9}; // invalid pixel's head is ignored
        const auto loss = vis::visual_loss(out, batch);
        // recon: (0.25^2 + 0.25^2 + 0 + 0) / 4; pred: (0.1^2 + 0.2^2) / 2
        REQUIRE(loss.recon == Catch::Approx(0.03125).margin(1e-12));
        REQUIRE(loss.pred == Catch::Approx(0.025).margin(1e-12));
        REQUIRE(loss.total == Catch::Approx(0.9 * 0.03125 + 0.1 * 0.025).margin(1e-9));
    }
    SECTION("without valid pixels only reconstruction counts") {
        numkit::Rng rng(6);
        vis::VisualBatch batch;
        batch.x = random_features(rng, 5, 3);
        batch.y = Tensor::zeros({5, 2});
        batch.valid.assign(5, 0);
        Tensor out = Tensor::zeros({5, 5});
        for (double& v : out.values) v = rng.normal();
        const auto a = vis::visual_loss(out, batch, 0.9, 0.1);
        REQUIRE(a.pred == 0.0);
        REQUIRE(a.total == Catch::Approx(0.9 * a.recon).margin(1e-15));
        // changing the regression weight must not matter when L_pred = 0
        const auto b = vis::visual_loss(out, batch, 0.9, 0.7);
        REQUIRE(a.total == b.total);
    }
    SECTION("empty batches are rejected") {
        vis::VisualBatch batch;
        batch.x = Tensor::zeros({0, 3});
        REQUIRE_THROWS_AS(vis::visual_loss(Tensor::zeros({0, 5}), batch), Error);
    }
}

TEST_CASE("tape training agrees with the plain-loop loss") {
    const VisualDims d = small_dims();
    vis::VisualModel m = vis::init_visual(d, 11);
    numkit::Rng rng(11);
    ClusterScene scene(rng, d.input);
    const vis::VisualBatch batch = scene.sample(rng, 32, true, true);
    const auto expected = vis::visual_loss(vis::forward_batch(m, batch.x), batch);
    numkit::AdamOptimizer opt({0.001, 0.9, 0.999, 1e-8, 0.001});
    const auto got = vis::train_step(m, opt, batch);
    REQUIRE(got.total == Catch::Approx(expected.total).margin(1e-12));
    REQUIRE(got.recon == Catch::Approx(expected.recon).margin(1e-12));
    REQUIRE(got.pred == Catch::Approx(expected.pred).margin(1e-9));
}

TEST_CASE("training learns a two-cluster regression task") {
    const VisualDims d = small_dims();
    vis::VisualModel m = vis::init_visual(d, 13);
    numkit::Rng rng(13);
    ClusterScene scene(rng, d.input);
    numkit::AdamOptimizer opt({0.003, 0.9, 0.999, 1e-8, 0.0001});
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 400; ++step) {
        const auto loss = vis::train_step(m, opt, scene.sample(rng, 64, true, true));
        if (step == 0) first = loss.total;
        last = loss.total;
    }
    REQUIRE(last < 0.1 * first);

    const vis::VisualBatch heldout = scene.sample(rng, 200, true, true);
    const Tensor out = vis::forward_batch(m, heldout.x);
    double mae_mu = 0.0, mae_s = 0.0;
    for (int r = 0; r < 200; ++r) {
        mae_mu += std::abs(out.at(r, d.input) - heldout.y.at(r, 0));
        mae_s += std::abs(out.at(r, d.input + 1) - heldout.y.at(r, 1));
    }
    REQUIRE(mae_mu / 200.0 < 0.05);
    REQUIRE(mae_s / 200.0 < 0.05);
}

TEST_CASE("confidence marks the trained class and rejects the novel one") {
    const terrain::TerrainGrid grid = split_scene(2.5);
    const cam::CameraModel camera = cam::CameraModel::standard(64);
    geom::Pose pose; // robot at the origin facing +x: near ground class 0, far class 1
    pose.t = {0.0, 0.0, 0.5};
    const cam::RenderedImage img = cam::render(grid, camera, pose, 99);
    const cam::FeatureMap map = cam::extract_features(img, 64, 42);

    std::vector<std::uint8_t> gt_a(map.values.size() / 64, 0);
    std::vector<std::size_t> train_pixels;
    for (std::size_t i = 0; i < gt_a.size(); ++i)
        if (img.class_id[i] == 0) {
            gt_a[i] = 1;
            train_pixels.push_back(i);
        }
    REQUIRE(train_pixels.size() > 500);
    REQUIRE(train_pixels.size() < gt_a.size() - 500); // both classes visible

    VisualDims d; // deployed 64 -> 128 -> 32 -> 128 -> 66
    vis::VisualModel m = vis::init_visual(d, 21);
    numkit::Rng rng(21);
    numkit::AdamOptimizer opt({0.001, 0.9, 0.999, 1e-8, 0.001});
    for (int step = 0; step < 300; ++step) {
        vis::VisualBatch batch;
        batch.x = Tensor::zeros({100, 64});
        batch.y = Tensor::zeros({100, 2});
        batch.valid.assign(100, 0); // reconstruction-only supervision
        for (int r = 0; r < 100; ++r) {
            const std::size_t px = train_pixels[rng.index(train_pixels.size())];
            const float* f = map.values.data() + px * 64;
            for (int c = 0; c < 64; ++c) batch.x.at(r, c) = f[c];
        }
        vis::train_step(m, opt, batch);
    }

    const vis::ConfidenceMask mask = vis::confidence(m, map);
    REQUIRE_FALSE(mask.degenerate);
    const double iou = vis::mask_iou(mask.confident, gt_a);
    INFO("confidence IoU vs trained-class region: " << iou);
    REQUIRE(iou >= 0.9);

    SECTION("thresholds adapt per image, independently") {
        const vis::DensePrediction pred = vis::dense_predict(m, map);
        std::vector<double> scaled = pred.recon_err;
        for (double& e : scaled) e *= 10.0;
        const auto m1 = vis::confidence_from_errors(pred.recon_err, map.width, map.height);
        const auto m2 = vis::confidence_from_errors(scaled, map.width, map.height);
        REQUIRE(m2.threshold == Catch::Approx(10.0 * m1.threshold).epsilon(1e-6));
        REQUIRE(m1.confident == m2.confident);
    }
    SECTION("lowering an error never revokes confidence at a fixed threshold") {
        const vis::DensePrediction pred = vis::dense_predict(m, map);
        for (std::size_t i = 0; i < pred.recon_err.size(); i += 97) {
            const bool before = pred.recon_err[i] <= mask.threshold;
            const bool after = pred.recon_err[i] * 0.5 <= mask.threshold;
            if (before) REQUIRE(after);
        }
    }
}

TEST_CASE("unimodal errors leave every pixel unconfident") {
    numkit::Rng rng(31);
    std::vector<double> errors;
    for (int i = 0; i < 4096; ++i) errors.push_back(0.8 + 0.05 * rng.normal());
    const auto mask = vis::confidence_from_errors(errors, 64, 64);
    REQUIRE(mask.degenerate);
    for (std::uint8_t c : mask.confident) REQUIRE(c == 0);

    SECTION("too few pixels are rejected") {
        REQUIRE_THROWS_AS(vis::confidence_from_errors({0.1, 0.2, 0.3}, 3, 1), Error);
    }
}

TEST_CASE("percentile baseline thresholds at the requested quantile") {
    std::vector<double> errors;
    for (int i = 0; i < 100; ++i) errors.push_back(static_cast<double>(i));
    const auto half = vis::percentile_mask(errors, 100, 1, 0.5);
    long long n = 0;
    for (std::uint8_t c : half.confident) n += c;
    REQUIRE(n == 50);
    const auto all = vis::percentile_mask(errors, 100, 1, 1.0);
    for (std::uint8_t c : all.confident) REQUIRE(c == 1);
    REQUIRE_THROWS_AS(vis::percentile_mask(errors, 100, 1, 1.5), Error);
}

TEST_CASE("mask comparison helpers") {
    const std::vector<std::uint8_t> a = {1, 1, 0, 0}, b = {1, 0, 1, 0};
    REQUIRE(vis::mask_iou(a, b) == Catch::Approx(1.0 / 3.0));
    REQUIRE(vis::mask_iou(a, a) == 1.0);
    REQUIRE(vis::mask_accuracy(a, b) == 0.5);
    REQUIRE(vis::mask_accuracy(a, a) == 1.0);
    REQUIRE_THROWS_AS(vis::mask_iou(a, {1, 0}), Error);
}

TEST_CASE("visual models round trip through weight files") {
    namespace fs = std::filesystem;
    const VisualDims d = small_dims();
    const vis::VisualModel m = vis::init_visual(d, 17);
    const std::string path = (fs::temp_directory_path() / "tiny_visual.tpw").string();
    vis::save_visual(path, m);
    const vis::VisualModel loaded = vis::load_visual(path);
    REQUIRE(loaded.dims.input == d.input);
    REQUIRE(loaded.dims.h2 == d.h2);
    for (int i = 0; i < vis::kVisParamCount; ++i)
        for (std::size_t j = 0; j < m.params[static_cast<std::size_t>(i)].size(); ++j)
            REQUIRE(loaded.params[static_cast<std::size_t>(i)].values[j] ==
                    static_cast<double>(
                        static_cast<float>(m.params[static_cast<std::size_t>(i)].values[j])));
    fs::remove(path);

    SECTION("checksums detect any weight change") {
        vis::VisualModel other = m;
        REQUIRE(vis::weights_checksum(other) == vis::weights_checksum(m));
        other.params[vis::kVw2].values[5] += 1e-12;
        REQUIRE(vis::weights_checksum(other) != vis::weights_checksum(m));
    }
    SECTION("files missing arrays are rejected") {
        const std::string bad = (fs::temp_directory_path() / "bad_visual.tpw").string();
        numkit::save_weights(bad, {{"meta", Tensor::zeros({1, 5})}});
        REQUIRE_THROWS_MATCHES(vis::load_visual(bad), Error,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("missing array")));
        fs::remove(bad);
    }
}

TEST_CASE("dense maps and previews are written to disk") {
    namespace fs = std::filesystem;
    const VisualDims d = small_dims();
    const vis::VisualModel m = vis::init_visual(d, 19);
    cam::FeatureMap map;
    map.width = map.height = 8;
    map.dim = d.input;
    map.seed = 19;
    numkit::Rng rng(19);
    map.values.resize(64 * static_cast<std::size_t>(d.input));
    for (float& v : map.values) v = static_cast<float>(std::tanh(rng.normal()));

    const vis::DensePrediction pred = vis::dense_predict(m, map);
    for (std::size_t i = 0; i < pred.mu.size(); ++i) {
        REQUIRE(pred.mu[i] >= 0.0);
        REQUIRE(pred.mu[i] <= 1.0);
        REQUIRE(pred.stiffness[i] >= 1.0);
        REQUIRE(pred.stiffness[i] <= 10.0);
        REQUIRE(pred.recon_err[i] >= 0.0);
    }
    const auto mask = vis::confidence_from_errors(pred.recon_err, 8, 8);

    const std::string maps = (fs::temp_directory_path() / "dense_maps.tpw").string();
    const std::string ppm = (fs::temp_directory_path() / "dense_maps.ppm").string();
    vis::write_dense_maps(maps, pred, mask);
    vis::write_dense_ppm(ppm, pred, mask);

    const auto arrays = numkit::load_weights(maps);
    REQUIRE(arrays.size() == 4);
    for (const auto& [name, t] : arrays) {
        REQUIRE(t.rows() == 8);
        REQUIRE(t.cols() == 8);
    }
    REQUIRE(fs::file_size(ppm) == 11 + 8 * 8 * 3); // "P6\n8 8\n255\n" + payload
    fs::remove(maps);
    fs::remove(ppm);
}
