#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "terraphys/common.hpp"
#include "terraphys/geometry.hpp"
#include "terraphys/numkit/rng.hpp"
#include "terraphys/terrain.hpp"

namespace terraphys::sim {

constexpr int kNumFeet = 4; // LF, RF, LH, RH
constexpr double kDt = 0.02;
constexpr int kObsProprioDims = 30;
constexpr int kObsGeometryDims = 28;
constexpr int kObsDims = kObsProprioDims + kObsGeometryDims;
constexpr int kLabelDims = 2 * kNumFeet;

inline const char* foot_name(int i) {
    constexpr const char* names[kNumFeet] = {"LF", "RF", "LH", "RH"};
    return names[i];
}

// Nominal foot offsets in the base frame (x forward, y left).
inline geom::Vec3 foot_offset(int i) {
    constexpr double off[kNumFeet][2] = {{0.3, 0.2}, {0.3, -0.2}, {-0.3, 0.2}, {-0.3, -0.2}};
    return {off[i][0], off[i][1], 0.0};
}

// Trot: diagonal pairs move together, half a period apart.
inline double phase_offset(int i) {
    constexpr double off[kNumFeet] = {0.0, 0.5, 0.5, 0.0};
    return off[i];
}

struct Command {
    double vx = 0.0, vy = 0.0, omega = 0.0; // base frame
};

struct GaitParams {
    double period = 0.8;       // s, full gait cycle
    double duty = 0.5;         // stance fraction
    double mass = 50.0;        // kg
    double gravity = 9.81;     // m/s^2
    double k_unit = 2000.0;    // N/m of ground spring per stiffness unit
    double beta = 1.0;         // m/s slip per unit friction deficit
    double tau_track = 0.25;   // s, velocity tracking time constant
    double kappa = 0.5;        // speed degradation per unit mean slip velocity
    double base_height = 0.5;  // m above stance surface
    double swing_apex = 0.08;  // m
    double ring_radius = 0.1;  // m, geometry sampling ring
    double max_speed = 1.3;    // m/s command envelope
    double max_yaw_rate = 0.3; // rad/s command envelope

    double stance_duration() const { return period * duty; }
};

struct NoiseConfig {
    double obs_std = 0.0;       // additive gaussian on continuous observation channels
    double demand_sigma = 0.35; // half-normal friction-demand noise while moving
};

struct RobotState {
    geom::Vec3 base_pos;
    double yaw = 0.0, roll = 0.0, pitch = 0.0;
    double vx = 0.0, vy = 0.0; // realized base velocity, base frame
    double yaw_rate = 0.0;
    std::array<geom::Vec3, kNumFeet> foot_pos;
    std::array<bool, kNumFeet> contact{};
    std::array<double, kNumFeet> phase{};       // rad in [0, 2pi)
    std::array<double, kNumFeet> slip_dist{};   // m accumulated this stance
    std::array<double, kNumFeet> penetration{}; // m, stance feet only

    geom::Mat3 orientation() const { return geom::Mat3::from_ypr(yaw, pitch, roll); }
};

struct Observation {
    std::array<double, kObsProprioDims> o_p{};
    std::array<double, kObsGeometryDims> o_g{};
};

struct StepLabel {
    std::array<double, kNumFeet> mu{};
    std::array<double, kNumFeet> stiffness{};
};

struct StepOutput {
    Observation obs;
    StepLabel label;
};

namespace detail {

inline double wrap_2pi(double a) {
    const double tau = 2.0 * 3.14159265358979323846;
    a = std::fmod(a, tau);
    return a < 0.0 ? a + tau : a;
}

inline bool in_stance(double phase, const GaitParams& gait) {
    return phase < 2.0 * 3.14159265358979323846 * gait.duty;
}

// Terrain height with ring samples clamped into bounds; the foot itself must
// be inside the grid (checked by the caller via cell lookup).
inline double clamped_height(const terrain::TerrainGrid& grid, double x, double y) {
    const double eps = grid.cell_size * 0.5;
    const double cx = std::clamp(x, grid.origin_x + eps, grid.origin_x + grid.nx * grid.cell_size - eps);
    const double cy = std::clamp(y, grid.origin_y + eps, grid.origin_y + grid.ny * grid.cell_size - eps);
    return grid.cell_at(cx, cy).height;
}

} // namespace detail

// Places the robot at (x, y, yaw) with feet at nominal offsets; diagonal pair
// LF+RH starts in stance.
inline RobotState init_state(const terrain::TerrainGrid& grid, double x, double y, double yaw,
                             const GaitParams& gait = {}) {
    constexpr double pi = 3.14159265358979323846;
    RobotState st;
    st.yaw = yaw;
    const geom::Mat3 R = geom::Mat3::rot_z(yaw);
    int stance_count = 0;
    for (int i = 0; i < kNumFeet; ++i) {
        st.phase[i] = detail::wrap_2pi(2.0 * pi * phase_offset(i));
        st.contact[i] = detail::in_stance(st.phase[i], gait);
        stance_count += st.contact[i] ? 1 : 0;
        const geom::Vec3 w = R * foot_offset(i);
        st.foot_pos[i] = {x + w.x, y + w.y, 0.0};
    }
    double surface_sum = 0.0;
    for (int i = 0; i < kNumFeet; ++i) {
        const auto& cell = grid.cell_at(st.foot_pos[i].x, st.foot_pos[i].y);
        if (st.contact[i]) {
            const double load = gait.mass * gait.gravity / std::max(1, stance_count);
            st.penetration[i] = load / (cell.stiffness * gait.k_unit);
            st.foot_pos[i].z = cell.height - st.penetration[i];
            surface_sum += cell.height;
        } else {
            st.foot_pos[i].z = cell.height;
        }
    }
    st.base_pos = {x, y, gait.base_height + (stance_count > 0 ? surface_sum / stance_count : 0.0)};
    return st;
}

// One 20 ms tick of the scripted trot. Friction shows up as slip (tangential
// foot drift plus degraded base speed) when demanded traction exceeds mu;
// stiffness shows up as stance-foot sinkage under the per-foot load share.
inline StepOutput step_gait(RobotState& st, const terrain::TerrainGrid& grid, const Command& cmd,
                            const GaitParams& gait, const NoiseConfig& noise, numkit::Rng& rng) {
    constexpr double pi = 3.14159265358979323846;
    if (std::abs(cmd.vx) > gait.max_speed + 1e-9 || std::abs(cmd.vy) > gait.max_speed + 1e-9)
        fail("step-gait: command speed (", cmd.vx, ", ", cmd.vy, ") outside envelope ±", gait.max_speed);
    if (std::abs(cmd.omega) > gait.max_yaw_rate + 1e-9)
        fail("step-gait: yaw rate ", cmd.omega, " outside envelope ±", gait.max_yaw_rate);

    const std::array<geom::Vec3, kNumFeet> prev_foot = st.foot_pos;
    const double phase_step = 2.0 * pi * kDt / gait.period;

    // phase advance and touchdown bookkeeping
    std::array<bool, kNumFeet> touchdown{};
    int stance_count = 0;
    for (int i = 0; i < kNumFeet; ++i) {
        const bool was_stance = detail::in_stance(st.phase[i], gait);
        st.phase[i] = detail::wrap_2pi(st.phase[i] + phase_step);
        st.contact[i] = detail::in_stance(st.phase[i], gait);
        touchdown[i] = st.contact[i] && !was_stance;
        if (touchdown[i]) st.slip_dist[i] = 0.0;
        stance_count += st.contact[i] ? 1 : 0;
    }

    // traction demand shared by all stance feet this tick
    const double dvx = cmd.vx - st.vx, dvy = cmd.vy - st.vy;
    const double a_track = std::sqrt(dvx * dvx + dvy * dvy) / gait.tau_track;
    const double speed = std::sqrt(st.vx * st.vx + st.vy * st.vy);
    const double a_cent = std::abs(cmd.omega) * speed;
    const double mu_req_base = (a_track + a_cent) / gait.gravity;
    const bool moving = std::abs(cmd.vx) > 0.01 || std::abs(cmd.vy) > 0.01 || std::abs(cmd.omega) > 0.01;

    const geom::Mat3 R = geom::Mat3::rot_z(st.yaw);
    const geom::Vec3 heading = R * geom::Vec3{cmd.vx, cmd.vy, 0.0};
    const double heading_norm = heading.norm();
    const geom::Vec3 slip_dir =
        heading_norm > 1e-9 ? heading * (-1.0 / heading_norm) : geom::Vec3{-std::cos(st.yaw), -std::sin(st.yaw), 0.0};

    double slip_vel_sum = 0.0;
    for (int i = 0; i < kNumFeet; ++i) {
        const terrain::TerrainCell* cell = nullptr;
        try {
            cell = &grid.cell_at(st.foot_pos[i].x, st.foot_pos[i].y);
        } catch (const Error& e) {
            fail("step-gait: foot ", foot_name(i), " left the terrain: ", e.what());
        }

        if (st.contact[i]) {
            const double load = gait.mass * gait.gravity / std::max(1, stance_count);
            st.penetration[i] = load / (cell->stiffness * gait.k_unit);
            st.foot_pos[i].z = cell->height - st.penetration[i];

            const double xi = moving && noise.demand_sigma > 0.0
                                  ? std::abs(rng.normal(0.0, noise.demand_sigma))
                                  : 0.0;
            const double v_slip = gait.beta * std::max(0.0, mu_req_base + xi - cell->mu);
            if (v_slip > 0.0) {
                st.foot_pos[i].x += slip_dir.x * v_slip * kDt;
                st.foot_pos[i].y += slip_dir.y * v_slip * kDt;
                st.slip_dist[i] += v_slip * kDt;
            }
            slip_vel_sum += v_slip;
        } else {
            st.penetration[i] = 0.0;
        }
    }
    const double mean_slip_vel = stance_count > 0 ? slip_vel_sum / stance_count : 0.0;

    // base velocity: first-order tracking toward the slip-degraded command
    const double degrade = 1.0 - std::min(0.9, gait.kappa * mean_slip_vel);
    const double alpha = kDt / gait.tau_track;
    st.vx += (cmd.vx * degrade - st.vx) * alpha;
    st.vy += (cmd.vy * degrade - st.vy) * alpha;
    st.yaw_rate = cmd.omega;
    st.yaw = detail::wrap_2pi(st.yaw + st.yaw_rate * kDt);

    const geom::Mat3 Rn = geom::Mat3::rot_z(st.yaw);
    const geom::Vec3 world_vel = Rn * geom::Vec3{st.vx, st.vy, 0.0};
    st.base_pos.x += world_vel.x * kDt;
    st.base_pos.y += world_vel.y * kDt;

    // swing feet track a memoryless sweep from behind to ahead of the hip, so
    // a state snapshot fully determines the future (replay needs this)
    const double stance_window = 2.0 * pi * gait.duty;
    const double t_stance = gait.stance_duration();
    for (int i = 0; i < kNumFeet; ++i) {
        if (st.contact[i]) continue;
        const double frac = (st.phase[i] - stance_window) / (2.0 * pi - stance_window);
        const geom::Vec3 sweep{st.vx * t_stance * (frac - 0.5), st.vy * t_stance * (frac - 0.5), 0.0};
        const geom::Vec3 w = Rn * (foot_offset(i) + sweep);
        st.foot_pos[i].x = st.base_pos.x + w.x;
        st.foot_pos[i].y = st.base_pos.y + w.y;
        const double ground = detail::clamped_height(grid, st.foot_pos[i].x, st.foot_pos[i].y);
        st.foot_pos[i].z = ground + gait.swing_apex * std::sin(pi * frac);
    }

    // base height rides on the stance surface; tilt follows sinkage asymmetry
    double surface_sum = 0.0;
    for (int i = 0; i < kNumFeet; ++i)
        if (st.contact[i])
            surface_sum += st.foot_pos[i].z + st.penetration[i];
    if (stance_count > 0) st.base_pos.z = gait.base_height + surface_sum / stance_count;
    {
        // diagonal stance pair: one front/one hind, one left/one right
        double z_front = 0.0, z_hind = 0.0, z_left = 0.0, z_right = 0.0;
        int nf = 0, nh = 0, nl = 0, nr = 0;
        for (int i = 0; i < kNumFeet; ++i) {
            if (!st.contact[i]) continue;
            const geom::Vec3 off = foot_offset(i);
            if (off.x > 0) { z_front += st.foot_pos[i].z; ++nf; } else { z_hind += st.foot_pos[i].z; ++nh; }
            if (off.y > 0) { z_left += st.foot_pos[i].z; ++nl; } else { z_right += st.foot_pos[i].z; ++nr; }
        }
        st.pitch = (nf > 0 && nh > 0) ? (z_hind / nh - z_front / nf) / 0.6 : 0.0;
        st.roll = (nl > 0 && nr > 0) ? (z_left / nl - z_right / nr) / 0.4 : 0.0;
    }

    // labels read at the final foot positions, so a recorded state's foot
    // (x, y) always looks up exactly the label that was emitted with it
    StepOutput out;
    for (int i = 0; i < kNumFeet; ++i) {
        const terrain::TerrainCell* cell = nullptr;
        try {
            cell = &grid.cell_at(st.foot_pos[i].x, st.foot_pos[i].y);
        } catch (const Error& e) {
            fail("step-gait: foot ", foot_name(i), " left the terrain: ", e.what());
        }
        out.label.mu[i] = cell->mu;
        out.label.stiffness[i] = cell->stiffness;
    }

    // observation assembly; sensor noise applied exactly once per channel
    auto jitter = [&](double v) { return noise.obs_std > 0.0 ? v + rng.normal(0.0, noise.obs_std) : v; };
    auto& op = out.obs.o_p;
    int k = 0;
    op[k++] = cmd.vx;
    op[k++] = cmd.vy;
    op[k++] = cmd.omega;
    op[k++] = jitter(st.vx);
    op[k++] = jitter(st.vy);
    op[k++] = jitter(st.yaw_rate);
    for (int i = 0; i < kNumFeet; ++i) {
        op[k++] = std::sin(st.phase[i]);
        op[k++] = std::cos(st.phase[i]);
    }
    for (int i = 0; i < kNumFeet; ++i) op[k++] = st.contact[i] ? 1.0 : 0.0;
    const geom::Mat3 Rt = Rn.transposed();
    for (int i = 0; i < kNumFeet; ++i) {
        const geom::Vec3 foot_vel = (st.foot_pos[i] - prev_foot[i]) * (1.0 / kDt);
        const geom::Vec3 rel = Rt * (foot_vel - world_vel);
        op[k++] = jitter(rel.x);
        op[k++] = jitter(rel.y);
    }
    for (int i = 0; i < kNumFeet; ++i) op[k++] = jitter(st.base_pos.z - st.foot_pos[i].z);
    if (k != kObsProprioDims) fail("step-gait: proprioception assembled ", k, " dims");

    auto& og = out.obs.o_g;
    k = 0;
    for (int i = 0; i < kNumFeet; ++i) {
        const double fx = st.foot_pos[i].x, fy = st.foot_pos[i].y, fz = st.foot_pos[i].z;
        og[k++] = jitter(detail::clamped_height(grid, fx, fy) - fz);
        for (int s = 0; s < 6; ++s) {
            const double ang = st.yaw + s * pi / 3.0;
            const double sx = fx + gait.ring_radius * std::cos(ang);
            const double sy = fy + gait.ring_radius * std::sin(ang);
            og[k++] = jitter(detail::clamped_height(grid, sx, sy) - fz);
        }
    }
    if (k != kObsGeometryDims) fail("step-gait: geometry assembled ", k, " dims");

    for (double v : out.obs.o_p)
        if (!std::isfinite(v)) fail("step-gait: non-finite proprioception value");
    for (double v : out.obs.o_g)
        if (!std::isfinite(v)) fail("step-gait: non-finite geometry value");

    return out;
}

// Deterministic noise-free rollout used by the digital twin.
inline std::vector<RobotState> replay_from_state(const RobotState& initial,
                                                 const std::vector<Command>& commands,
                                                 const terrain::TerrainGrid& grid,
                                                 const GaitParams& gait = {}) {
    RobotState st = initial;
    NoiseConfig quiet;
    quiet.obs_std = 0.0;
    quiet.demand_sigma = 0.0;
    numkit::Rng rng(0);
    std::vector<RobotState> out;
    out.reserve(commands.size());
    for (const Command& cmd : commands) {
        step_gait(st, grid, cmd, gait, quiet, rng);
        out.push_back(st);
    }
    return out;
}

} // namespace terraphys::sim
