// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/common.hpp"

#include <cmath>
#include <numbers>
#include <optional>

namespace perfield {

/// Pinhole camera with two-term radial distortion. The pose is stored
/// camera-to-world: a camera-space direction d maps to world as R * d, and
/// the camera centre is t. Camera space looks down +z with +y pointing down
/// the image.
struct Camera {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    double k1 = 0.0, k2 = 0.0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    int width = 1, height = 1;

    /// 4x4 camera-to-world matrix.
    Mat4 pose() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = R;
        m.topRightCorner<3, 1>() = t;
        return m;
    }

    void set_pose(const Mat4 &c2w) {
        R = c2w.topLeftCorner<3, 3>();
        t = c2w.topRightCorner<3, 1>();
    }

    bool has_distortion() const { return k1 != 0.0 || k2 != 0.0; }

    /// Throws InvalidArgument when any camera invariant is violated.
    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
        if (width <= 0 || height <= 0) throw InvalidArgument("camera image size must be positive");
        if (!(cx >= 0.0 && cx <= width) || !(cy >= 0.0 && cy <= height))
            throw InvalidArgument("camera principal point outside the image");
        if (!std::isfinite(k1) || !std::isfinite(k2)) throw InvalidArgument("non-finite distortion");
        const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
        if (!(ortho < 1e-6) || !(std::abs(R.determinant() - 1.0) < 1e-6))
            throw InvalidArgument("camera rotation is not a proper rotation");
        if (!t.allFinite()) throw InvalidArgument("non-finite camera translation");
    }
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();
    double t_near = 0.0;
    double t_far = std::numeric_limits<double>::infinity();

    Vec3 at(double t) const { return origin + t * direction; }
};

struct AxisAngle {
    Vec3 axis = Vec3::UnitZ();
    double angle = 0.0;
};

// ---------------------------------------------------------------------------
// Rotations

/// Rodrigues' formula. A zero angle yields the identity for any axis.
inline Mat3 aa_to_rotation(const AxisAngle &a) {
    if (a.angle == 0.0) return Mat3::Identity();
    const Vec3 v = a.axis.normalized();
    Mat3 K;
    K << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return Mat3::Identity() + std::sin(a.angle) * K + (1.0 - std::cos(a.angle)) * (K * K);
}

/// Inverse of aa_to_rotation. Near-identity input returns angle 0 about +z.
/// For angles above pi/2 the axis is read off the symmetric part of R, which
/// stays well conditioned as the angle approaches pi.
inline AxisAngle rotation_to_aa(const Mat3 &R) {
    const Vec3 skew(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    // atan2 keeps the angle accurate near 0 and pi where acos is ill-conditioned.
    const double c = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
    const double angle = std::atan2(0.5 * skew.norm(), c);
    if (angle < 1e-9) return {Vec3::UnitZ(), 0.0};

    if (angle < std::numbers::pi / 2.0) return {skew.normalized(), angle};

    // (R + R^T)/2 = cos(angle) I + (1 - cos(angle)) v v^T
    const Mat3 sym = 0.5 * (R + R.transpose());
    const Mat3 vvt = (sym - c * Mat3::Identity()) / (1.0 - c);
    Eigen::Index pivot = 0;
    vvt.diagonal().maxCoeff(&pivot);
    Vec3 axis = vvt.col(pivot) / std::sqrt(std::max(vvt(pivot, pivot), 1e-300));
    axis.normalize();
    if (axis.dot(skew) < 0.0) axis = -axis;
    return {axis, angle};
}

/// Geodesic distance on SO(3): arccos((trace(R2^T R1) - 1) / 2), in [0, pi].
inline double rotation_distance(const Mat3 &R1, const Mat3 &R2) {
    const double c = ((R2.transpose() * R1).trace() - 1.0) / 2.0;
    return std::acos(std::clamp(c, -1.0, 1.0));
}

/// Squared Euclidean distance between two translations.
inline double translation_distance(const Vec3 &t1, const Vec3 &t2) { return (t2 - t1).squaredNorm(); }

/// Scales the rotation angle of R by s while keeping its axis.
inline Mat3 reduce_angle(const Mat3 &R, double s) {
    const AxisAngle a = rotation_to_aa(R);
    return aa_to_rotation({a.axis, s * a.angle});
}

/// Point at fraction s along the geodesic from R1 to R2.
inline Mat3 intermediate_rotation(const Mat3 &R1, const Mat3 &R2, double s) {
    return reduce_angle(R2 * R1.transpose(), s) * R1;
}

// ---------------------------------------------------------------------------
// Projection

/// Radial distortion factor 1 + k1 r^2 + k2 r^4.
inline double radial_factor(double k1, double k2, double r2) { return 1.0 + k1 * r2 + k2 * r2 * r2; }

/// Generates the world ray through the centre of pixel (u, v). Distortion is
/// applied forward to the normalised coordinates before forming the direction.
inline Ray pixel_to_ray(const Camera &cam, double u, double v) {
    if (!std::isfinite(u) || !std::isfinite(v)) throw InvalidArgument("non-finite pixel coordinate");
    double x = (u + 0.5 - cam.cx) / cam.fx;
    double y = (v + 0.5 - cam.cy) / cam.fy;
    if (cam.has_distortion()) {
        const double f = radial_factor(cam.k1, cam.k2, x * x + y * y);
        x *= f;
        y *= f;
    }
    Ray ray;
    ray.origin = cam.t;
    ray.direction = (cam.R * Vec3(x, y, 1.0)).normalized();
    return ray;
}

/// Projects a world point to continuous pixel coordinates (the inverse of
/// pixel_to_ray, so pixel centres map back to integer u, v). Returns nullopt
/// for points at or behind the camera plane. With distortion, the radial
/// polynomial is inverted by fixed-point iteration.
inline std::optional<Vec3> project_point(const Camera &cam, const Vec3 &world) {
    const Vec3 pc = cam.R.transpose() * (world - cam.t);
    if (!(pc.z() > 0.0)) return std::nullopt;
    double xd = pc.x() / pc.z();
    double yd = pc.y() / pc.z();
    double x = xd, y = yd;
    if (cam.has_distortion()) {
        for (int it = 0; it < 100; ++it) {
            const double f = radial_factor(cam.k1, cam.k2, x * x + y * y);
            const double nx = xd / f, ny = yd / f;
            const bool done = std::abs(nx - x) < 1e-15 && std::abs(ny - y) < 1e-15;
            x = nx;
            y = ny;
            if (done) break;
        }
    }
    return Vec3(x * cam.fx + cam.cx - 0.5, y * cam.fy + cam.cy - 0.5, pc.z());
}

/// Ray/axis-aligned-box slab test. Returns the parametric [near, far] overlap
/// clipped to t >= 0, or nullopt when the ray misses.
inline std::optional<std::pair<double, double>> intersect_box(const Ray &ray, const Vec3 &lo, const Vec3 &hi) {
    double t0 = std::max(0.0, ray.t_near);
    double t1 = ray.t_far;
    for (int a = 0; a < 3; ++a) {
        const double d = ray.direction[a];
        if (d == 0.0) {
            if (ray.origin[a] < lo[a] || ray.origin[a] > hi[a]) return std::nullopt;
            continue;
        }
        const double inv = 1.0 / d;
        double ta = (lo[a] - ray.origin[a]) * inv;
        double tb = (hi[a] - ray.origin[a]) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    return std::make_pair(t0, t1);
}

/// Look-at helper: camera at `eye` looking at `target`, with `up` roughly
/// opposite to image +y.
inline Mat3 look_at_rotation(const Vec3 &eye, const Vec3 &target, const Vec3 &up = Vec3::UnitZ()) {
    const Vec3 z = (target - eye).normalized();
    Vec3 x = z.cross(up);
    if (x.norm() < 1e-12) x = z.cross(Vec3::UnitX());
    x.normalize();
    const Vec3 y = z.cross(x);
    Mat3 R;
    R.col(0) = x;
    R.col(1) = y;
    R.col(2) = z;
    return R;
}

} // namespace perfield
