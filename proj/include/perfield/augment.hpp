// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/renderer.hpp"

#include <random>

namespace perfield {

/// Raised when no pair of training poses is close enough to interpolate
/// between within the attempt budget.
class NoValidPair : public std::runtime_error {
public:
    explicit NoValidPair(std::size_t attempts)
        : std::runtime_error("no pose pair within thresholds after " + std::to_string(attempts) + " attempts") {}
};

// ---------------------------------------------------------------------------
// Pose sampling

struct PoseSampleConfig {
    double rotation_threshold = std::numbers::pi / 24.0; // radians
    double translation_threshold = 0.5;                  // squared world units
    std::size_t max_attempts = 10000;
    uint64_t seed = 0;

    void validate() const {
        if (!(rotation_threshold > 0.0 && rotation_threshold <= std::numbers::pi))
            throw InvalidArgument("rotation threshold must lie in (0, pi]");
        if (!(translation_threshold > 0.0)) throw InvalidArgument("translation threshold must be positive");
        if (max_attempts == 0) throw InvalidArgument("max_attempts must be positive");
    }
};

/// A sampled pose and the pair it was interpolated from.
struct PoseSample {
    Mat4 pose = Mat4::Identity();
    std::size_t j = 0, k = 0;
    double s = 0.0;
};

/// Interpolates between a random close pair of `poses` (camera-to-world) at
/// the given fraction s. Pairs are redrawn while either the rotation or the
/// translation distance is at or above its threshold; j and k are distinct.
inline PoseSample random_pose(const std::vector<Mat4> &poses, const PoseSampleConfig &cfg, std::mt19937_64 &rng,
                              double s) {
    cfg.validate();
    if (poses.size() < 2) throw InvalidArgument("pose sampling needs at least two poses");
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("interpolation fraction must lie in [0, 1]");
    std::uniform_int_distribution<std::size_t> pick(0, poses.size() - 1);
    for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        const std::size_t j = pick(rng);
        std::size_t k = pick(rng);
        if (j == k) continue;
        const Mat3 Rj = poses[j].topLeftCorner<3, 3>(), Rk = poses[k].topLeftCorner<3, 3>();
        const Vec3 tj = poses[j].topRightCorner<3, 1>(), tk = poses[k].topRightCorner<3, 1>();
        if (rotation_distance(Rj, Rk) >= cfg.rotation_threshold ||
            translation_distance(tj, tk) >= cfg.translation_threshold)
            continue;
        PoseSample out{Mat4::Identity(), j, k, s};
        out.pose.topLeftCorner<3, 3>() = intermediate_rotation(Rj, Rk, s);
        out.pose.topRightCorner<3, 1>() = s * tk + (1.0 - s) * tj;
        return out;
    }
    throw NoValidPair(cfg.max_attempts);
}

/// As above with s drawn uniformly from [0, 1] once per call.
inline PoseSample random_pose(const std::vector<Mat4> &poses, const PoseSampleConfig &cfg, std::mt19937_64 &rng) {
    const double s = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return random_pose(poses, cfg, rng, s);
}

/// Draws n poses from a generator seeded with cfg.seed.
inline std::vector<Mat4> sample_poses(const std::vector<Mat4> &poses, const PoseSampleConfig &cfg, std::size_t n) {
    std::mt19937_64 rng(cfg.seed);
    std::vector<Mat4> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(random_pose(poses, cfg, rng).pose);
    return out;
}

// ---------------------------------------------------------------------------
// Intrinsics

/// Picks one camera uniformly and returns its intrinsics and image shape.
/// The pose is reset to identity and the source index is reported.
inline Camera random_intrinsics(const std::vector<Camera> &cams, std::mt19937_64 &rng,
                                std::size_t *source = nullptr) {
    if (cams.empty()) throw InvalidArgument("random_intrinsics needs at least one camera");
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, cams.size() - 1)(rng);
    Camera c;
    c.fx = cams[i].fx;
    c.fy = cams[i].fy;
    c.cx = cams[i].cx;
    c.cy = cams[i].cy;
    c.width = cams[i].width;
    c.height = cams[i].height;
    if (source) *source = i;
    return c;
}

// ---------------------------------------------------------------------------
// Background substitution

struct SceneView {
    const SparseVoxelGrid *grid = nullptr;
    const BackgroundModel *background = nullptr;
};

/// With probability p renders scene A's foreground over scene B's background;
/// otherwise renders scene A as-is. `substituted` reports which branch ran.
inline Image augment_background(const SceneView &a, const SceneView &b, const Camera &cam, const RenderConfig &cfg,
                                double p, std::mt19937_64 &rng, bool *substituted = nullptr) {
    if (!a.grid || !a.background || !b.background)
        throw InvalidArgument("background augmentation needs both scenes' background models");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("substitution probability must lie in [0, 1]");
    const bool swap = std::bernoulli_distribution(p)(rng);
    if (substituted) *substituted = swap;
    if (swap) return composite_foreground_background(*a.grid, b.background, cam, cfg);
    RenderConfig c = cfg;
    c.use_background = true;
    return render_image(*a.grid, a.background, cam, c);
}

// ---------------------------------------------------------------------------
// Camera manipulation

/// Scales both focal lengths and replaces the radial distortion terms.
inline Camera manipulate_camera(const Camera &cam, double focal_scale, double k1, double k2) {
    if (!(focal_scale > 0.0) || !std::isfinite(focal_scale)) throw InvalidArgument("focal scale must be positive");
    if (!std::isfinite(k1) || !std::isfinite(k2)) throw InvalidArgument("non-finite distortion");
    Camera out = cam;
    out.fx *= focal_scale;
    out.fy *= focal_scale;
    out.k1 = k1;
    out.k2 = k2;
    return out;
}

} // namespace perfield
