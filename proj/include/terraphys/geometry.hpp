#pragma once

#include <cmath>

#include "terraphys/common.hpp"

namespace terraphys::geom {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        if (n < 1e-300) fail("Vec3: cannot normalize a zero vector");
        return {x / n, y / n, z / n};
    }
};

// Row-major 3x3 rotation/linear map.
struct Mat3 {
    double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }

    static Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
        Mat3 r;
        r.m[0] = c0.x; r.m[1] = c1.x; r.m[2] = c2.x;
        r.m[3] = c0.y; r.m[4] = c1.y; r.m[5] = c2.y;
        r.m[6] = c0.z; r.m[7] = c1.z; r.m[8] = c2.z;
        return r;
    }

    static Mat3 rot_z(double a) {
        Mat3 r;
        const double c = std::cos(a), s = std::sin(a);
        r.m[0] = c; r.m[1] = -s; r.m[3] = s; r.m[4] = c;
        return r;
    }
    static Mat3 rot_y(double a) {
        Mat3 r;
        const double c = std::cos(a), s = std::sin(a);
        r.m[0] = c; r.m[2] = s; r.m[6] = -s; r.m[8] = c;
        return r;
    }
    static Mat3 rot_x(double a) {
        Mat3 r;
        const double c = std::cos(a), s = std::sin(a);
        r.m[4] = c; r.m[5] = -s; r.m[7] = s; r.m[8] = c;
        return r;
    }

    // Intrinsic yaw-pitch-roll: R = Rz(yaw) * Ry(pitch) * Rx(roll).
    static Mat3 from_ypr(double yaw, double pitch, double roll) {
        return rot_z(yaw) * rot_y(pitch) * rot_x(roll);
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * o.m[k * 3 + j];
                r.m[i * 3 + j] = acc;
            }
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i * 3 + j] = m[j * 3 + i];
        return r;
    }

    double trace() const { return m[0] + m[4] + m[8]; }

    bool is_orthonormal(double tol = 1e-9) const {
        const Mat3 p = *this * transposed();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const double want = i == j ? 1.0 : 0.0;
                if (std::abs(p.m[i * 3 + j] - want) > tol) return false;
            }
        return true;
    }
};

// Rigid transform: p_out = R * p_in + t.
struct Pose {
    Mat3 R;
    Vec3 t;

    static Pose identity() { return {}; }

    Vec3 transform(const Vec3& p) const { return R * p + t; }
    Vec3 rotate(const Vec3& v) const { return R * v; }

    Pose inverse() const {
        const Mat3 Rt = R.transposed();
        return {Rt, Rt * (t * -1.0)};
    }

    // this ∘ other: apply other first, then this.
    Pose compose(const Pose& other) const { return {R * other.R, R * other.t + t}; }
};

// Angle of the relative rotation between two frames, in [0, pi].
inline double geodesic_angle(const Mat3& a, const Mat3& b) {
    const Mat3 rel = a.transposed() * b;
    const double c = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
}

} // namespace terraphys::geom
