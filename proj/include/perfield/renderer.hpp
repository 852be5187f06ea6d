// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/background.hpp"
#include "perfield/geometry.hpp"
#include "perfield/grid.hpp"
#include "perfield/image.hpp"
#include "perfield/sh.hpp"

#include <cmath>
#include <optional>

namespace perfield {

struct RenderConfig {
    double step_size = 0.5;        // in units of the smallest voxel edge
    double sigma_threshold = 1e-8; // samples below this density are skipped
    double early_stop_T = 1e-4;    // stop marching once transmittance falls below
    bool use_background = true;
    bool render_foreground = true; // false renders the background as if the grid were empty
    double sample_offset = 0.0;    // anchor shift in [0, 1) steps; 0 = deterministic
    double fallback_brightness = 0.5; // used when use_background is set but no model exists
    int workers = 1;

    void validate() const {
        if (!(step_size > 0.0)) throw InvalidArgument("step_size must be positive");
        if (!(early_stop_T >= 0.0 && early_stop_T < 1.0)) throw InvalidArgument("early_stop_T must be in [0, 1)");
        if (!(sample_offset >= 0.0 && sample_offset < 1.0)) throw InvalidArgument("sample_offset must be in [0, 1)");
        if (!(sigma_threshold >= 0.0)) throw InvalidArgument("sigma_threshold must be non-negative");
    }
};

struct RenderResult {
    Vec3 color = Vec3::Zero();
    double transmittance = 1.0; // foreground transmittance, before the background
};

/// Marks interpolation cells (the box between 8 neighbouring voxel centres)
/// that touch at least one occupied voxel. Cell b in [-1, N-1] per axis is
/// stored at b + 1.
struct OccupancyAccel {
    Vec3i dims = Vec3i::Zero();
    std::vector<uint8_t> active;

    explicit OccupancyAccel(const SparseVoxelGrid &g) {
        dims = g.resolution + Vec3i::Ones();
        active.assign(static_cast<std::size_t>(dims.x()) * dims.y() * dims.z(), 0);
        for (std::size_t s = 0; s < g.slot_count(); ++s) {
            const Vec3i c = g.cell_of(g.slot_cell[s]);
            for (int n = 0; n < 8; ++n) {
                // voxel c is a corner of cells with base c - 1 .. c, stored at c .. c + 1
                const int i = c.x() + (n & 1), j = c.y() + ((n >> 1) & 1), k = c.z() + ((n >> 2) & 1);
                active[(static_cast<std::size_t>(k) * dims.y() + j) * dims.x() + i] = 1;
            }
        }
    }

    bool is_active(int bi, int bj, int bk) const {
        const int i = bi + 1, j = bj + 1, k = bk + 1;
        if (i < 0 || j < 0 || k < 0 || i >= dims.x() || j >= dims.y() || k >= dims.z()) return false;
        return active[(static_cast<std::size_t>(k) * dims.y() + j) * dims.x() + i] != 0;
    }
};

/// Read-only view over a scene with its acceleration structure. Build once
/// per image or batch; the grid must not change while a context exists.
class RenderContext {
public:
    RenderContext(const SparseVoxelGrid &grid, const BackgroundModel *background)
        : grid_(grid), background_(background), accel_(grid) {}

    const SparseVoxelGrid &grid() const { return grid_; }
    const BackgroundModel *background() const { return background_; }
    const OccupancyAccel &accel() const { return accel_; }

private:
    const SparseVoxelGrid &grid_;
    const BackgroundModel *background_;
    OccupancyAccel accel_;
};

/// One evaluated sample along a ray, with what back-propagation needs.
/// Opacity of a segment of length delta with constant density sigma.
inline double segment_alpha(double sigma, double delta) { return 1.0 - std::exp(-sigma * delta); }

struct MarchSample {
    TrilinearStencil stencil;
    double sigma_raw = 0.0;
    double sigma = 0.0;
    double delta = 0.0;
    double alpha = 0.0;
    double T = 1.0;     // transmittance before the sample
    Vec3 color = Vec3::Zero();
};

namespace detail {

inline double cell_exit(const SparseVoxelGrid &g, const Ray &ray, int bi, int bj, int bk) {
    const Vec3 vs = g.voxel_size();
    const Vec3 lo = g.world_min + (Vec3(bi, bj, bk) + Vec3::Constant(0.5)).cwiseProduct(vs);
    const Vec3 hi = lo + vs;
    double t = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double d = ray.direction[a];
        if (d > 0.0) t = std::min(t, (hi[a] - ray.origin[a]) / d);
        else if (d < 0.0) t = std::min(t, (lo[a] - ray.origin[a]) / d);
    }
    return t;
}

} // namespace detail

/// Marches the foreground along `ray` with empty-space skipping and early
/// termination. Samples sit at t0 + (offset + k) * step from the grid entry
/// point t0; every sample's spacing to the next is the step. `on_sample`
/// sees each contributing sample in order. Returns the foreground colour and
/// transmittance.
template <typename OnSample>
RenderResult march_foreground(const RenderContext &ctx, const Ray &ray, const RenderConfig &cfg, const ShBasis &basis,
                              OnSample &&on_sample) {
    RenderResult res;
    const SparseVoxelGrid &g = ctx.grid();
    const auto span = intersect_box(ray, g.world_min, g.world_max);
    if (!span || g.slot_count() == 0) return res;
    const double t0 = span->first, t1 = span->second;
    const double step = cfg.step_size * g.min_voxel_size();

    double T = 1.0;
    MarchSample s;
    SampleValue v;
    int64_t k = 0;
    while (true) {
        const double t = t0 + (cfg.sample_offset + static_cast<double>(k)) * step;
        if (!(t < t1)) break;
        const Vec3 p = ray.at(t);
        const Vec3 vox = g.to_voxel(p);
        const int bi = static_cast<int>(std::floor(vox.x()));
        const int bj = static_cast<int>(std::floor(vox.y()));
        const int bk = static_cast<int>(std::floor(vox.z()));
        if (!ctx.accel().is_active(bi, bj, bk)) {
            const double t_exit = detail::cell_exit(g, ray, bi, bj, bk);
            const double k_exit = std::ceil((t_exit - t0) / step - cfg.sample_offset);
            k = std::max(k + 1, std::isfinite(k_exit) ? static_cast<int64_t>(k_exit) : k + 1);
            continue;
        }
        ++k;
        if (!make_stencil(g, p, s.stencil)) continue;
        blend_stencil(g, s.stencil, v);
        s.sigma_raw = v.sigma;
        s.sigma = std::max(0.0, v.sigma);
        if (s.sigma < cfg.sigma_threshold || s.sigma == 0.0) continue;
        s.delta = step;
        s.alpha = segment_alpha(s.sigma, s.delta);
        s.T = T;
        const Vec3 raw = sh_raw_color(v.sh.data(), basis);
        s.color = Vec3(sigmoid(raw.x()), sigmoid(raw.y()), sigmoid(raw.z()));
        res.color += T * s.alpha * s.color;
        T *= 1.0 - s.alpha;
        on_sample(s, v);
        if (T < cfg.early_stop_T) break;
    }
    res.transmittance = T;
    return res;
}

/// Radiance behind the foreground, before scaling by transmittance.
inline Vec3 background_term(const RenderContext &ctx, const Ray &ray, const RenderConfig &cfg) {
    if (!cfg.use_background) return Vec3::Zero();
    if (ctx.background()) return background_composite(*ctx.background(), ray);
    return cfg.fallback_brightness * Vec3::Ones();
}

/// Volume rendering of one ray: sum of T_i (1 - exp(-sigma_i delta_i)) c_i
/// over the foreground, plus the background seen through the remaining
/// transmittance. The returned transmittance excludes the background.
inline RenderResult render_ray(const RenderContext &ctx, const Ray &ray, const RenderConfig &cfg) {
    RenderResult res;
    if (cfg.render_foreground) {
        const ShBasis basis = sh_basis(ray.direction);
        res = march_foreground(ctx, ray, cfg, basis, [](const MarchSample &, const SampleValue &) {});
    }
    if (res.transmittance > 0.0) res.color += res.transmittance * background_term(ctx, ray, cfg);
    return res;
}

inline RenderResult render_ray(const SparseVoxelGrid &grid, const BackgroundModel *bg, const Ray &ray,
                               const RenderConfig &cfg) {
    return render_ray(RenderContext(grid, bg), ray, cfg);
}

/// Brute-force reference: every sample along the clipped ray is evaluated in
/// order with no skipping and no early termination.
inline RenderResult render_ray_oracle(const SparseVoxelGrid &grid, const BackgroundModel *bg, const Ray &ray,
                                      const RenderConfig &cfg) {
    RenderResult res;
    if (cfg.render_foreground) {
        const auto span = intersect_box(ray, grid.world_min, grid.world_max);
        if (span) {
            const double step = cfg.step_size * grid.min_voxel_size();
            double T = 1.0;
            for (int64_t k = 0;; ++k) {
                const double t = span->first + (cfg.sample_offset + static_cast<double>(k)) * step;
                if (!(t < span->second)) break;
                const SampleValue v = sample_trilinear(grid, ray.at(t));
                const double alpha = segment_alpha(v.sigma, step);
                const Vec3 c = eval_color(v.sh, ray.direction);
                res.color += T * alpha * c;
                T *= 1.0 - alpha;
            }
            res.transmittance = T;
        }
    }
    if (cfg.use_background) {
        const Vec3 b = bg ? background_composite(*bg, ray) : cfg.fallback_brightness * Vec3::Ones();
        res.color += res.transmittance * b;
    }
    return res;
}

/// Renders every pixel of `cam`. Rows are split across cfg.workers threads;
/// the result does not depend on the worker count.
inline Image render_image(const RenderContext &ctx, const Camera &cam, const RenderConfig &cfg,
                          Image *transmittance = nullptr) {
    cfg.validate();
    cam.validate();
    Image img(cam.width, cam.height, 3);
    if (transmittance) *transmittance = Image(cam.width, cam.height, 1);
    parallel_chunks(static_cast<std::size_t>(cam.height), cfg.workers, [&](std::size_t b, std::size_t e, int) {
        for (std::size_t v = b; v < e; ++v) {
            for (int u = 0; u < cam.width; ++u) {
                const RenderResult r = render_ray(ctx, pixel_to_ray(cam, u, static_cast<double>(v)), cfg);
                for (int c = 0; c < 3; ++c) img.at(u, static_cast<int>(v), c) = r.color[c];
                if (transmittance) transmittance->at(u, static_cast<int>(v), 0) = r.transmittance;
            }
        }
    });
    return img;
}

inline Image render_image(const SparseVoxelGrid &grid, const BackgroundModel *bg, const Camera &cam,
                          const RenderConfig &cfg, Image *transmittance = nullptr) {
    return render_image(RenderContext(grid, bg), cam, cfg, transmittance);
}

/// Renders scene A's foreground in front of another scene's background.
inline Image composite_foreground_background(const SparseVoxelGrid &grid_fg, const BackgroundModel *bg_other,
                                             const Camera &cam, const RenderConfig &cfg) {
    if (bg_other == nullptr) throw InvalidArgument("background substitution requires a background model");
    RenderConfig c = cfg;
    c.use_background = true;
    return render_image(grid_fg, bg_other, cam, c);
}

} // namespace perfield
