// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/pipeline.hpp"
#include "perfield/trainer.hpp"

namespace perfield {

/// Analytic test scene: an opaque axis-aligned cube whose faces carry smooth
/// colour patterns, seen against a uniform grey background. Ground truth is
/// exact ray-box intersection, so no renderer code is involved in producing
/// it. The face texture gives multi-view correspondences; flat faces would
/// leave depth constrained by silhouettes alone.
struct ColoredCube {
    Vec3 lo = Vec3::Constant(-0.5);
    Vec3 hi = Vec3::Constant(0.5);
    // Base colour per face, in order -x, +x, -y, +y, -z, +z.
    std::array<Vec3, 6> face_color{Vec3(0.15, 0.75, 0.30), Vec3(0.90, 0.20, 0.20), Vec3(0.95, 0.85, 0.20),
                                   Vec3(0.20, 0.35, 0.90), Vec3(0.20, 0.80, 0.85), Vec3(0.85, 0.30, 0.80)};
    double texture_amplitude = 0.12;
    double texture_frequency = 1.5; // cycles per face edge
    double background = 0.5;
    int supersample = 4; // s x s rays averaged per pixel, like a sensor's pixel area
    Vec3 world_min = Vec3::Constant(-0.7);
    Vec3 world_max = Vec3::Constant(0.7);

    /// Colour of face `face` at face coordinates (p, q) in [0, 1]^2.
    Vec3 face_radiance(int face, double p, double q) const {
        const double w = 2.0 * std::numbers::pi * texture_frequency;
        Vec3 c = face_color[static_cast<std::size_t>(face)];
        for (int ch = 0; ch < 3; ++ch)
            c[ch] += texture_amplitude * std::sin(w * p + 1.3 * ch + face) * std::cos(w * q - 0.7 * ch);
        return c.cwiseMax(0.0).cwiseMin(1.0);
    }

    /// Colour of the face nearest to `x`, evaluated at the projection of `x`
    /// onto the cube.
    Vec3 surface_radiance(const Vec3 &point) const {
        const Vec3 x = point.cwiseMax(lo).cwiseMin(hi);
        int face = 0;
        double best = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
            const double dl = std::abs(x[a] - lo[a]), dh = std::abs(x[a] - hi[a]);
            if (dl < best) best = dl, face = 2 * a;
            if (dh < best) best = dh, face = 2 * a + 1;
        }
        const int a = face / 2, b = (a + 1) % 3, c = (a + 2) % 3;
        const Vec3 rel = (x - lo).cwiseQuotient(hi - lo);
        return face_radiance(face, rel[b], rel[c]);
    }

    Vec3 radiance(const Ray &ray) const {
        const auto span = intersect_box(ray, lo, hi);
        if (!span) return Vec3::Constant(background);
        return surface_radiance(ray.at(span->first));
    }

    Image render(const Camera &cam) const {
        Image img(cam.width, cam.height, 3);
        const int n = std::max(1, supersample);
        for (int v = 0; v < cam.height; ++v)
            for (int u = 0; u < cam.width; ++u) {
                Vec3 c = Vec3::Zero();
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < n; ++i)
                        c += radiance(pixel_to_ray(cam, u + (i + 0.5) / n - 0.5, v + (j + 0.5) / n - 0.5));
                c /= static_cast<double>(n * n);
                for (int ch = 0; ch < 3; ++ch) img.at(u, v, ch) = c[ch];
            }
        return img;
    }
};

/// Camera on a circle of `radius` around the z axis at `height`, looking at the origin.
inline Camera ring_camera(double azimuth, double radius, double height, int size, double focal) {
    Camera cam;
    cam.width = cam.height = size;
    cam.fx = cam.fy = focal;
    cam.cx = cam.cy = 0.5 * size;
    cam.t = Vec3(radius * std::cos(azimuth), radius * std::sin(azimuth), height);
    cam.R = look_at_rotation(cam.t, Vec3::Zero());
    return cam;
}

struct SyntheticViews {
    TrainingSet train;
    TrainingSet test;
};

/// `n_train` views spread over four heights and evenly in azimuth, plus
/// `n_test` held-out views at azimuths between the training ones.
inline SyntheticViews make_cube_views(const ColoredCube &scene, int n_train = 16, int n_test = 4, int size = 64) {
    if (n_train < 2 || n_test < 0 || size < 8) throw InvalidArgument("invalid synthetic view layout");
    SyntheticViews out;
    const double radius = 3.0, focal = 1.1 * size;
    const std::array<double, 4> heights{-0.9, 1.5, 0.2, 2.4};
    for (int i = 0; i < n_train; ++i) {
        const double az = 2.0 * std::numbers::pi * i / n_train;
        const Camera cam = ring_camera(az, radius, heights[static_cast<std::size_t>(i % 4)], size, focal);
        out.train.cameras.push_back(cam);
        out.train.images.push_back(scene.render(cam));
    }
    for (int i = 0; i < n_test; ++i) {
        const double az = 2.0 * std::numbers::pi * (i * n_train / std::max(n_test, 1) + 0.5) / n_train;
        const Camera cam = ring_camera(az, radius, 0.8, size, focal);
        out.test.cameras.push_back(cam);
        out.test.images.push_back(scene.render(cam));
    }
    return out;
}

/// Writes the cube views as a scene directory: PNG frames plus manifest.json
/// with training frames first and held-out frames marked as test.
inline SceneManifest write_cube_scene(const std::filesystem::path &dir, const ColoredCube &scene, int n_train = 16,
                                      int n_test = 4, int size = 64) {
    const SyntheticViews views = make_cube_views(scene, n_train, n_test, size);
    std::filesystem::create_directories(dir);
    SceneManifest m;
    m.scene_id = "synthetic_cube";
    m.base_dir = dir;
    m.bounds = std::make_pair(scene.world_min, scene.world_max);
    auto add = [&](const TrainingSet &set, Split split, const std::string &prefix) {
        for (std::size_t i = 0; i < set.cameras.size(); ++i) {
            FrameEntry f;
            f.image = prefix + std::to_string(i) + ".png";
            f.camera = set.cameras[i];
            f.split = split;
            write_png(dir / f.image, set.images[i]);
            m.frames.push_back(f);
        }
    };
    add(views.train, Split::kTrain, "train_");
    add(views.test, Split::kTest, "test_");
    save_manifest(dir / "manifest.json", m);
    return m;
}

/// Training recipe used for the synthetic cube: dense 64^3 start, no learned
/// background (the grey fallback matches the scene), RMSprop.
inline TrainConfig cube_train_config(int steps = 5000) {
    TrainConfig cfg;
    cfg.total_steps = steps;
    cfg.fg_skip_steps = 0;
    cfg.upsample_at = -1;
    cfg.prune_at = -1;
    cfg.optimizer = Optimizer::kRmsProp;
    cfg.optimizer_sh = Optimizer::kRmsProp;
    cfg.lr_density = 0.3;
    cfg.lr_sh = 0.1;
    cfg.lambda_tv_density = 0.0;
    cfg.lambda_tv_sh = 0.0;
    cfg.lambda_beta = 0.0;
    cfg.lambda_sparsity = 0.0;
    cfg.rays_per_batch = 1024;
    cfg.render.use_background = true;
    cfg.render.fallback_brightness = 0.5;
    return cfg;
}

inline constexpr double kCubeInitialSigma = 0.001;

inline SparseVoxelGrid cube_initial_grid(const ColoredCube &scene, int resolution = 64,
                                         double sigma = kCubeInitialSigma) {
    return make_dense_grid(Vec3i::Constant(resolution), scene.world_min, scene.world_max, sigma);
}

/// Direct voxelisation of the analytic cube: cells whose centre lies inside
/// the cube get density `sigma` and the view-independent colour of the
/// nearest face, all other cells are empty. Opaque by construction, so it
/// serves where a test needs the exact scene rather than a learned fit.
inline SparseVoxelGrid cube_reference_grid(const ColoredCube &scene, int resolution = 64, double sigma = 200.0) {
    SparseVoxelGrid g = make_dense_grid(Vec3i::Constant(resolution), scene.world_min, scene.world_max, 0.0);
    for (std::size_t s = 0; s < g.slot_count(); ++s) {
        const Vec3 c = g.cell_center(g.cell_of(g.slot_cell[s]));
        const bool inside = (c.array() >= scene.lo.array()).all() && (c.array() <= scene.hi.array()).all();
        g.density[s] = inside ? sigma : 0.0;
        const Vec3 col = scene.surface_radiance(c);
        double *sh = g.sh_of(s);
        std::fill(sh, sh + kShCoeffs, 0.0);
        for (int ch = 0; ch < 3; ++ch) {
            const double x = std::clamp(col[ch], 1e-3, 1.0 - 1e-3);
            sh[ch * kShBasis] = std::log(x / (1.0 - x)) / sh_const::kC0;
        }
    }
    return g;
}

/// Mean PSNR of `grid` rendered at the held-out views.
inline double heldout_psnr(const SparseVoxelGrid &grid, const BackgroundModel *bg, const TrainingSet &test,
                           const RenderConfig &cfg) {
    double sum = 0.0;
    for (std::size_t i = 0; i < test.cameras.size(); ++i)
        sum += psnr(render_image(grid, bg, test.cameras[i], cfg), test.images[i]);
    return test.cameras.empty() ? 0.0 : sum / static_cast<double>(test.cameras.size());
}

} // namespace perfield
