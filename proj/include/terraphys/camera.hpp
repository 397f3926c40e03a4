#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "terraphys/common.hpp"
#include "terraphys/geometry.hpp"
#include "terraphys/numkit/rng.hpp"
#include "terraphys/terrain.hpp"

namespace terraphys::cam {

// Camera frame: x right, y down, z forward (optical axis).
struct CameraModel {
    int width = 128, height = 128;
    double fx = 110.0, fy = 110.0, cx = 63.5, cy = 63.5;
    geom::Pose T_base_cam; // camera frame expressed in the base frame

    // Front-mounted camera pitched down so nearby ground fills the frame.
    static CameraModel standard(int size = 128, double pitch_down_rad = 30.0 * 3.14159265358979323846 / 180.0) {
        CameraModel cam;
        cam.width = cam.height = size;
        cam.fx = cam.fy = 110.0 * (size / 128.0);
        cam.cx = cam.cy = (size - 1) / 2.0;
        const double th = pitch_down_rad;
        // base frame: x forward, y left, z up
        const geom::Vec3 right{0.0, -1.0, 0.0};
        const geom::Vec3 down{-std::sin(th), 0.0, -std::cos(th)};
        const geom::Vec3 forward{std::cos(th), 0.0, -std::sin(th)};
        cam.T_base_cam.R = geom::Mat3::from_columns(right, down, forward);
        cam.T_base_cam.t = {0.35, 0.0, 0.15};
        if (!cam.T_base_cam.R.is_orthonormal())
            fail("camera: mount rotation is not orthonormal");
        return cam;
    }
};

struct Pixel {
    double u = 0.0, v = 0.0;
};

// A camera model bound to a world pose; precomputes the world->camera inverse.
struct CameraView {
    CameraModel model;
    geom::Pose T_world_cam;
    geom::Pose T_cam_world;

    CameraView(const CameraModel& m, const geom::Pose& T_world_base)
        : model(m), T_world_cam(T_world_base.compose(m.T_base_cam)),
          T_cam_world(T_world_cam.inverse()) {}

    std::optional<Pixel> project(const geom::Vec3& p_world) const {
        const geom::Vec3 p = T_cam_world.transform(p_world);
        if (p.z <= 1e-9) return std::nullopt;
        const Pixel px{model.fx * p.x / p.z + model.cx, model.fy * p.y / p.z + model.cy};
        if (px.u < -0.5 || px.u >= model.width - 0.5 || px.v < -0.5 || px.v >= model.height - 0.5)
            return std::nullopt;
        return px;
    }

    // World-frame ray through a pixel; direction is unit length.
    std::pair<geom::Vec3, geom::Vec3> ray(double u, double v) const {
        const geom::Vec3 d_cam{(u - model.cx) / model.fx, (v - model.cy) / model.fy, 1.0};
        return {T_world_cam.t, T_world_cam.rotate(d_cam).normalized()};
    }

    geom::Vec3 back_project(double u, double v, double depth) const {
        const geom::Vec3 p_cam{(u - model.cx) / model.fx * depth, (v - model.cy) / model.fy * depth, depth};
        return T_world_cam.transform(p_cam);
    }

    // Intersection of the pixel ray with the horizontal plane z = plane_z.
    std::optional<geom::Vec3> ground_point(double u, double v, double plane_z = 0.0) const {
        const auto [o, d] = ray(u, v);
        if (d.z >= -1e-9) return std::nullopt; // at or above the horizon
        const double t = (plane_z - o.z) / d.z;
        if (t <= 0.0) return std::nullopt;
        return o + d * t;
    }
};

struct RenderedImage {
    int width = 0, height = 0;
    std::vector<double> rgb;        // 3 per pixel, row-major, [0,1]
    std::vector<geom::Vec3> world;  // ground point per pixel (valid when not sky)
    std::vector<std::uint8_t> sky;  // 1 = no terrain under this pixel
    std::vector<int> class_id;      // -1 for sky
    geom::Pose T_world_base;        // robot pose at capture

    std::size_t idx(int ix, int iy) const {
        return static_cast<std::size_t>(iy) * width + ix;
    }
    const double* color(int ix, int iy) const { return rgb.data() + idx(ix, iy) * 3; }
};

namespace detail {

inline std::uint64_t mix_hash(std::uint64_t h) {
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ull;
    h ^= h >> 33;
    return h;
}

// World-anchored noise: same world cell gives the same value from any view.
inline double world_noise(double x, double y, std::uint64_t seed, std::uint64_t channel) {
    const std::int64_t qx = static_cast<std::int64_t>(std::floor(x / 0.025));
    const std::int64_t qy = static_cast<std::int64_t>(std::floor(y / 0.025));
    std::uint64_t h = seed ^ (static_cast<std::uint64_t>(qx) * 0x9e3779b97f4a7c15ull);
    h = mix_hash(h ^ (static_cast<std::uint64_t>(qy) * 0xbf58476d1ce4e5b9ull));
    h = mix_hash(h ^ channel);
    return static_cast<double>(h >> 11) * 0x1.0p-53; // [0,1)
}

} // namespace detail

// Flat-plane ray cast: every ground pixel is the intersection of its ray with
// z = 0, colored by the terrain class plus world-anchored texture noise so the
// same spot looks the same from every camera position.
inline RenderedImage render(const terrain::TerrainGrid& grid, const CameraModel& model,
                            const geom::Pose& T_world_base, std::uint64_t texture_seed) {
    const CameraView view(model, T_world_base);
    if (view.T_world_cam.t.z <= 0.0)
        fail("render: camera at z = ", view.T_world_cam.t.z, " is not above the terrain plane");

    RenderedImage img;
    img.width = model.width;
    img.height = model.height;
    img.T_world_base = T_world_base;
    const std::size_t n = static_cast<std::size_t>(model.width) * model.height;
    img.rgb.resize(n * 3);
    img.world.resize(n);
    img.sky.assign(n, 0);
    img.class_id.assign(n, -1);

    constexpr double kSky[3] = {0.70, 0.85, 1.00};
    constexpr double kNoiseAmp = 0.08;
    for (int iy = 0; iy < model.height; ++iy) {
        for (int ix = 0; ix < model.width; ++ix) {
            const std::size_t i = img.idx(ix, iy);
            const auto hit = view.ground_point(ix, iy);
            if (!hit || !grid.in_bounds(hit->x, hit->y)) {
                img.sky[i] = 1;
                for (int c = 0; c < 3; ++c) img.rgb[i * 3 + c] = kSky[c];
                continue;
            }
            const terrain::TerrainCell& cell = grid.cell_at(hit->x, hit->y);
            const auto& base = grid.classes[cell.class_id].color;
            img.world[i] = *hit;
            img.class_id[i] = cell.class_id;
            for (int c = 0; c < 3; ++c) {
                const double noise =
                    (detail::world_noise(hit->x, hit->y, texture_seed, static_cast<std::uint64_t>(c)) - 0.5) *
                    2.0 * kNoiseAmp;
                img.rgb[i * 3 + c] = std::clamp(base[c] + noise, 0.0, 1.0);
            }
        }
    }
    return img;
}

struct FeatureMap {
    int width = 0, height = 0, dim = 0;
    std::uint64_t seed = 0;
    std::vector<float> values; // dim floats per pixel, row-major

    const float* at(int ix, int iy) const {
        return values.data() + (static_cast<std::size_t>(iy) * width + ix) * dim;
    }
};

// Frozen random local extractor: tanh of a seeded D x 75 projection of the
// flattened 5x5 RGB neighborhood (edge-clamped). Stands in for a pretrained
// per-pixel backbone: fixed weights, deterministic, class structure preserved.
inline FeatureMap extract_features(const RenderedImage& img, int dim, std::uint64_t seed) {
    constexpr int kPatch = 5, kHalf = 2, kIn = kPatch * kPatch * 3;
    numkit::Rng rng(numkit::Rng::derive_seed(seed, 0xfea7));
    std::vector<double> proj(static_cast<std::size_t>(dim) * kIn);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kIn));
    for (double& w : proj) w = rng.normal() * scale;

    FeatureMap map;
    map.width = img.width;
    map.height = img.height;
    map.dim = dim;
    map.seed = seed;
    map.values.resize(static_cast<std::size_t>(img.width) * img.height * dim);

    std::vector<double> patch(kIn);
    for (int iy = 0; iy < img.height; ++iy) {
        for (int ix = 0; ix < img.width; ++ix) {
            int k = 0;
            for (int dy = -kHalf; dy <= kHalf; ++dy)
                for (int dx = -kHalf; dx <= kHalf; ++dx) {
                    const int sx = std::clamp(ix + dx, 0, img.width - 1);
                    const int sy = std::clamp(iy + dy, 0, img.height - 1);
                    const double* c = img.color(sx, sy);
                    patch[k++] = c[0];
                    patch[k++] = c[1];
                    patch[k++] = c[2];
                }
            float* out = map.values.data() + (static_cast<std::size_t>(iy) * img.width + ix) * dim;
            for (int d = 0; d < dim; ++d) {
                double acc = 0.0;
                const double* row = proj.data() + static_cast<std::size_t>(d) * kIn;
                for (int j = 0; j < kIn; ++j) acc += row[j] * patch[j];
                out[d] = static_cast<float>(std::tanh(acc));
            }
        }
    }
    return map;
}

// Binary PPM (P6) writer; rgb01 holds 3 doubles per pixel in [0, 1], row-major.
inline void write_ppm(const std::string& path, int width, int height,
                      const std::vector<double>& rgb01) {
    if (rgb01.size() != static_cast<std::size_t>(width) * height * 3)
        fail("write-ppm: ", rgb01.size(), " values do not fill ", width, "x", height);
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("write-ppm: cannot write ", path);
    out << "P6\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(width) * 3);
    for (int iy = 0; iy < height; ++iy) {
        for (int ix = 0; ix < width * 3; ++ix) {
            const double v = rgb01[static_cast<std::size_t>(iy) * width * 3 + ix];
            row[static_cast<std::size_t>(ix)] =
                static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

inline void write_ppm(const std::string& path, const RenderedImage& img) {
    write_ppm(path, img.width, img.height, img.rgb);
}

// Pixels covered by a ground disk around a foothold. Scans a conservative
// bounding box around the projected center and keeps pixels whose ray lands
// inside the disk; the exhaustive full-image scan is the test oracle.
inline std::vector<std::pair<int, int>> splat_foothold(const CameraView& view,
                                                       const geom::Vec3& foothold,
                                                       double radius = 0.03) {
    std::vector<std::pair<int, int>> out;
    const geom::Vec3 p_cam = view.T_cam_world.transform(foothold);
    if (p_cam.z <= 1e-9) return out;
    const double u = view.model.fx * p_cam.x / p_cam.z + view.model.cx;
    const double v = view.model.fy * p_cam.y / p_cam.z + view.model.cy;
    const double px_radius =
        std::max(view.model.fx, view.model.fy) * radius / p_cam.z * 2.0 + 2.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(u - px_radius)));
    const int x1 = std::min(view.model.width - 1, static_cast<int>(std::ceil(u + px_radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(v - px_radius)));
    const int y1 = std::min(view.model.height - 1, static_cast<int>(std::ceil(v + px_radius)));
    for (int iy = y0; iy <= y1; ++iy)
        for (int ix = x0; ix <= x1; ++ix) {
            const auto hit = view.ground_point(ix, iy, foothold.z);
            if (!hit) continue;
            const double dx = hit->x - foothold.x, dy = hit->y - foothold.y;
            if (dx * dx + dy * dy <= radius * radius) out.emplace_back(ix, iy);
        }
    return out;
}

} // namespace terraphys::cam
