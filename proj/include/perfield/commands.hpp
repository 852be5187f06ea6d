// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/augment.hpp"
#include "perfield/pipeline.hpp"
#include "perfield/serialization.hpp"
#include "perfield/synthetic.hpp"
#include "perfield/trainer.hpp"

#include <chrono>
#include <iostream>

namespace perfield::cli {

/// Process exit codes. Usage errors (bad flags or values) are distinct from
/// runtime failures, defective scenes and I/O problems.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2, kExitDefective = 3, kExitIo = 4 };

/// Fixed output names under --out.
inline constexpr const char *kManifestOut = "manifest.json";
inline constexpr const char *kSplitOut = "split.json";
inline constexpr const char *kSceneOut = "scene.prfx";
inline constexpr const char *kMetricsOut = "metrics.csv";
inline constexpr const char *kLossLogOut = "loss_log.csv";
inline constexpr const char *kPosesOut = "poses.json";
inline constexpr const char *kEvalOut = "eval.csv";
inline constexpr const char *kAugmentOut = "augment_bg.csv";

struct JobConfig {
    std::filesystem::path manifest;
    std::filesystem::path out;
    std::string profile = "object";
    uint64_t seed = 0;
    int workers = 1;
    std::optional<int> steps;
    std::optional<int> resolution;
    std::optional<double> prune_threshold;
    double bg_prob = 0.5;
    double blur_threshold = kBlurThreshold;
    std::size_t max_frames = 1500;

    /// Checks every override before any work starts.
    void validate() const {
        if (profile != "object" && profile != "indoor" && profile != "synthetic")
            throw InvalidArgument("profile must be 'object', 'indoor' or 'synthetic'");
        if (workers < 1) throw InvalidArgument("--workers must be at least 1");
        if (steps && *steps < 1) throw InvalidArgument("--steps must be positive");
        if (resolution && (*resolution < 2 || *resolution > kMaxResolution / 2))
            throw InvalidArgument("--resolution must lie in [2, " + std::to_string(kMaxResolution / 2) + "]");
        if (prune_threshold && !std::isfinite(*prune_threshold)) throw InvalidArgument("--prune-threshold must be finite");
        if (!(bg_prob >= 0.0 && bg_prob <= 1.0)) throw InvalidArgument("--bg-prob must lie in [0, 1]");
        if (!(blur_threshold >= 0.0)) throw InvalidArgument("--blur-threshold must be non-negative");
        if (max_frames < 2) throw InvalidArgument("--max-frames must be at least 2");
    }
};

namespace detail {

inline void ensure_out_dir(const std::filesystem::path &out) {
    if (out.empty()) throw InvalidArgument("--out is required");
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec || !std::filesystem::is_directory(out)) throw IoError("cannot create output directory " + out.string());
}

inline std::string json_pose(const Mat4 &m) {
    nlohmann::json row = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) row.push_back(m(r, c));
    return row.dump();
}

} // namespace detail

// ---------------------------------------------------------------------------
// Ingest

/// Scores blur where missing, selects frames, assigns the test split and
/// writes the frozen manifest plus a split listing.
inline SceneManifest cmd_ingest(const JobConfig &job) {
    job.validate();
    detail::ensure_out_dir(job.out);
    SceneManifest m = load_manifest(job.manifest);
    compute_blur_scores(m, job.workers);
    SceneManifest kept = select_frames(m, job.max_frames, job.blur_threshold);
    assign_split(kept, job.seed);

    // Frame paths in the frozen manifest stay valid from the output directory.
    std::error_code ec;
    for (auto &f : kept.frames) {
        const auto rebase = [&](const std::string &rel) {
            const auto abs = std::filesystem::absolute(m.resolve(rel));
            const auto r = std::filesystem::relative(abs, std::filesystem::absolute(job.out), ec);
            return (ec || r.empty()) ? abs.string() : r.generic_string();
        };
        f.image = rebase(f.image);
        if (f.depth) f.depth = rebase(*f.depth);
    }
    kept.base_dir = job.out;

    nlohmann::ordered_json split;
    split["scene_id"] = kept.scene_id;
    split["seed"] = job.seed;
    split["train"] = nlohmann::ordered_json::array();
    split["test"] = nlohmann::ordered_json::array();
    for (const auto &f : kept.frames) split[f.split == Split::kTrain ? "train" : "test"].push_back(f.image);
    save_manifest(job.out / kManifestOut, kept);
    write_file_atomic(job.out / kSplitOut, split.dump(2) + "\n");
    log(LogLevel::kInfo, "ingest: kept ", kept.frames.size(), " of ", m.frames.size(), " frames, ",
        kept.count(Split::kTest), " held out");
    return kept;
}

// ---------------------------------------------------------------------------
// Train

/// Object box from camera geometry: the point closest to all optical axes,
/// with a half-extent of half the median camera distance to it.
inline std::pair<Vec3, Vec3> bounds_from_cameras(const std::vector<Camera> &cams) {
    if (cams.size() < 2) throw InvalidArgument("need at least two cameras to infer bounds");
    Mat3 A = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    for (const auto &c : cams) {
        const Vec3 d = c.R.col(2).normalized();
        const Mat3 P = Mat3::Identity() - d * d.transpose();
        A += P;
        b += P * c.t;
    }
    const Vec3 center = A.ldlt().solve(b);
    std::vector<double> dist;
    for (const auto &c : cams) dist.push_back((c.t - center).norm());
    std::nth_element(dist.begin(), dist.begin() + static_cast<long>(dist.size() / 2), dist.end());
    const double half = 0.5 * dist[dist.size() / 2];
    if (!center.allFinite() || !(half > 0.0)) throw InvalidArgument("cannot infer bounds from camera layout");
    return {center - Vec3::Constant(half), center + Vec3::Constant(half)};
}

/// Indoor initialisation: depth unprojection of training frames (pixels
/// strided so at most ~`max_points` are used), outlier removal, voxelisation.
inline SparseVoxelGrid depth_initial_grid(const SceneManifest &m, int resolution, std::size_t max_points = 2000000) {
    std::size_t total_pixels = 0;
    for (const auto &f : m.frames)
        if (f.split == Split::kTrain) {
            if (!f.depth) throw DefectiveScene(m.scene_id, "indoor profile requires a depth map for every training frame");
            total_pixels += static_cast<std::size_t>(f.camera.width) * f.camera.height;
        }
    const int stride =
        std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(total_pixels) / max_points))));
    std::vector<Vec3> pts;
    for (const auto &f : m.frames) {
        if (f.split != Split::kTrain) continue;
        const DepthMap full = read_depth_png(m.resolve(*f.depth));
        if (full.width != f.camera.width || full.height != f.camera.height)
            throw InvalidArgument("depth size disagrees with intrinsics: " + *f.depth);
        DepthMap d = full;
        for (int v = 0; v < d.height; ++v)
            for (int u = 0; u < d.width; ++u)
                if (u % stride || v % stride) d.depth[static_cast<std::size_t>(v) * d.width + u] = 0.0;
        const auto p = unproject_depth(f.camera, d);
        pts.insert(pts.end(), p.begin(), p.end());
    }
    pts = filter_connected_components(pts);
    if (pts.empty()) throw DefectiveScene(m.scene_id, "depth maps contain no valid points");
    return init_grid_from_points(pts, resolution);
}

struct TrainPlan {
    TrainConfig cfg;
    SparseVoxelGrid grid;
    std::optional<BackgroundModel> background;
};

/// Resolves the named profile plus overrides into a concrete training setup.
inline TrainPlan plan_training(const SceneManifest &m, const JobConfig &job, const TrainingSet &train_set) {
    TrainPlan plan;
    TrainConfig &cfg = plan.cfg;
    cfg.rng_seed = job.seed;
    cfg.workers = job.workers;
    // Schedule event position as a fraction of the run, so --steps keeps the recipe's shape.
    auto at = [&](double fraction) { return static_cast<int>(std::lround(fraction * cfg.total_steps)); };
    if (job.profile == "object") {
        cfg.total_steps = job.steps.value_or(76800);
        cfg.upsample_at = cfg.prune_at = at(1.0 / 3.0);
        const auto [lo, hi] = m.bounds ? *m.bounds : bounds_from_cameras(train_set.cameras);
        plan.grid = make_dense_grid(Vec3i::Constant(job.resolution.value_or(128)), lo, hi, 0.1);
        plan.background = make_background(lo, hi, 16, 512, 0.5);
    } else if (job.profile == "indoor") {
        cfg.total_steps = job.steps.value_or(51200);
        cfg.prune_at = at(0.5);
        cfg.upsample_at = -1;
        cfg.fg_skip_steps = 0;
        plan.grid = depth_initial_grid(m, job.resolution.value_or(256));
    } else {
        cfg = cube_train_config(job.steps.value_or(5000));
        cfg.rng_seed = job.seed;
        cfg.workers = job.workers;
        const auto [lo, hi] = m.bounds ? *m.bounds : bounds_from_cameras(train_set.cameras);
        plan.grid = make_dense_grid(Vec3i::Constant(job.resolution.value_or(64)), lo, hi, kCubeInitialSigma);
    }
    if (job.prune_threshold) cfg.prune_threshold = *job.prune_threshold;
    cfg.render.workers = job.workers;
    cfg.validate();
    return plan;
}

struct TrainReport {
    SceneMetrics metrics;
    QuantizedScene scene;
    std::vector<LossLogEntry> log;
};

/// Trains one scene and writes scene.prfx, metrics.csv and loss_log.csv.
/// Metrics are measured on the test split rendered from the stored
/// (quantised) scene, i.e. on exactly what downstream users load.
inline TrainReport cmd_train(const JobConfig &job) {
    job.validate();
    detail::ensure_out_dir(job.out);
    const SceneManifest m = load_manifest(job.manifest);
    const TrainingSet train_set = load_split(m, Split::kTrain);
    if (train_set.cameras.size() < 2) throw DefectiveScene(m.scene_id, "fewer than two training frames");
    TrainPlan plan = plan_training(m, job, train_set);

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result = train(train_set, std::move(plan.grid), std::move(plan.background), plan.cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    TrainReport report;
    report.scene = quantize(result.grid, result.background ? &*result.background : nullptr);
    report.log = std::move(result.log);
    const std::string bytes = encode_scene(report.scene);
    write_file_atomic(job.out / kSceneOut, bytes);
    write_file_atomic(job.out / kLossLogOut, loss_log_csv(report.log));

    const SparseVoxelGrid stored = dequantize_grid(report.scene);
    const std::optional<BackgroundModel> stored_bg = dequantize_background(report.scene);
    const TrainingSet test_set = load_split(m, Split::kTest);
    RenderConfig rcfg = plan.cfg.render;
    rcfg.sample_offset = 0.0;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (std::size_t i = 0; i < test_set.cameras.size(); ++i) {
        const Image img = render_image(stored, stored_bg ? &*stored_bg : nullptr, test_set.cameras[i], rcfg);
        psnr_sum += psnr(img, test_set.images[i]);
        ssim_sum += ssim(img, test_set.images[i]);
    }
    const double n_test = static_cast<double>(test_set.cameras.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    report.metrics = {m.scene_id,    n_test > 0 ? psnr_sum / n_test : nan, n_test > 0 ? ssim_sum / n_test : nan,
                      seconds,       stored.slot_count(),                  bytes.size()};
    write_file_atomic(job.out / kMetricsOut, metrics_csv({report.metrics}));
    log(LogLevel::kInfo, "train: ", m.scene_id, " psnr ", report.metrics.psnr, " ssim ", report.metrics.ssim, " in ",
        seconds, " s");
    return report;
}

// ---------------------------------------------------------------------------
// Render, eval, pose sampling, background augmentation, info

/// Renders a stored scene at every test frame of the manifest (every frame
/// when there is no test split) to render_<index>.png.
inline std::vector<std::filesystem::path> cmd_render(const std::filesystem::path &scene_path, const JobConfig &job) {
    job.validate();
    detail::ensure_out_dir(job.out);
    const QuantizedScene q = read_scene(scene_path);
    const SparseVoxelGrid grid = dequantize_grid(q);
    const std::optional<BackgroundModel> bg = dequantize_background(q);
    const SceneManifest m = parse_manifest(read_file(job.manifest), job.manifest.parent_path());
    const bool any_test = m.count(Split::kTest) > 0;
    RenderConfig rcfg;
    rcfg.workers = job.workers;
    std::vector<std::filesystem::path> written;
    for (std::size_t i = 0; i < m.frames.size(); ++i) {
        if (any_test && m.frames[i].split != Split::kTest) continue;
        char name[32];
        std::snprintf(name, sizeof name, "render_%04zu.png", i);
        write_png(job.out / name, render_image(grid, bg ? &*bg : nullptr, m.frames[i].camera, rcfg));
        written.push_back(job.out / name);
    }
    return written;
}

struct EvalRow {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

/// Compares prediction/ground-truth image pairs, writes eval.csv and returns
/// the rows; PSNR values from metrics CSV files join the histogram.
inline std::pair<std::vector<EvalRow>, PsnrHistogram> cmd_eval(const std::vector<std::filesystem::path> &pred,
                                                               const std::vector<std::filesystem::path> &gt,
                                                               const std::vector<std::filesystem::path> &metrics,
                                                               const std::filesystem::path &out) {
    if (pred.size() != gt.size()) throw InvalidArgument("--pred and --gt must be given the same number of times");
    if (pred.empty() && metrics.empty()) throw InvalidArgument("nothing to evaluate");
    std::vector<EvalRow> rows;
    std::vector<double> values;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Image a = read_png_rgb(pred[i]), b = read_png_rgb(gt[i]);
        rows.push_back({pred[i].filename().string(), psnr(a, b), ssim(a, b)});
        values.push_back(rows.back().psnr);
    }
    for (const auto &path : metrics) {
        std::istringstream in(read_file(path));
        std::string line;
        std::getline(in, line);
        if (line != "scene_id,psnr,ssim,train_time_s,n_voxels,file_bytes")
            throw InvalidArgument("not a metrics file: " + path.string());
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto a = line.find(','), b = line.find(',', a + 1);
            if (a == std::string::npos || b == std::string::npos) throw InvalidArgument("malformed metrics row");
            values.push_back(std::stod(line.substr(a + 1, b - a - 1)));
        }
    }
    if (!out.empty()) {
        detail::ensure_out_dir(out);
        std::ostringstream csv;
        csv.precision(10);
        csv << "name,psnr,ssim\n";
        for (const auto &r : rows) csv << r.name << ',' << format_metric(r.psnr) << ',' << format_metric(r.ssim) << '\n';
        write_file_atomic(out / kEvalOut, csv.str());
    }
    return {rows, psnr_histogram(values)};
}

/// Samples n poses from the manifest's training cameras, each paired with
/// intrinsics drawn from the training set, and writes poses.json.
inline std::string cmd_pose_sample(const JobConfig &job, std::size_t n) {
    job.validate();
    detail::ensure_out_dir(job.out);
    const SceneManifest m = parse_manifest(read_file(job.manifest), job.manifest.parent_path());
    std::vector<Mat4> poses;
    std::vector<Camera> cams;
    for (const auto &f : m.frames)
        if (f.split == Split::kTrain) {
            poses.push_back(f.camera.pose());
            cams.push_back(f.camera);
        }
    PoseSampleConfig pcfg;
    pcfg.seed = job.seed;
    std::mt19937_64 rng(pcfg.seed);
    std::ostringstream out;
    out << "{\n  \"scene_id\": " << nlohmann::json(m.scene_id).dump() << ",\n  \"poses\": [";
    for (std::size_t i = 0; i < n; ++i) {
        const PoseSample s = random_pose(poses, pcfg, rng);
        const Camera c = random_intrinsics(cams, rng);
        nlohmann::ordered_json intr = {{"fx", c.fx}, {"fy", c.fy},       {"cx", c.cx},
                                       {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
        out << (i ? ",\n    " : "\n    ") << "{\"camera_to_world\": " << detail::json_pose(s.pose)
            << ", \"intrinsics\": " << intr.dump() << "}";
    }
    out << (n ? "\n  ]\n}\n" : "]\n}\n");
    write_file_atomic(job.out / kPosesOut, out.str());
    return out.str();
}

/// Renders scene A's test views with background substitution from scene B
/// at probability job.bg_prob; writes augbg_<index>.png and augment_bg.csv.
inline std::size_t cmd_augment_bg(const std::filesystem::path &scene_a, const std::filesystem::path &scene_b,
                                  const JobConfig &job) {
    job.validate();
    detail::ensure_out_dir(job.out);
    const QuantizedScene qa = read_scene(scene_a), qb = read_scene(scene_b);
    const SparseVoxelGrid ga = dequantize_grid(qa), gb = dequantize_grid(qb);
    const auto bga = dequantize_background(qa), bgb = dequantize_background(qb);
    if (!bga || !bgb) throw InvalidArgument("background augmentation needs scenes trained with a background");
    const SceneManifest m = parse_manifest(read_file(job.manifest), job.manifest.parent_path());
    const bool any_test = m.count(Split::kTest) > 0;
    RenderConfig rcfg;
    rcfg.workers = job.workers;
    std::mt19937_64 rng(job.seed);
    std::ostringstream csv;
    csv << "frame,substituted\n";
    std::size_t swaps = 0;
    for (std::size_t i = 0; i < m.frames.size(); ++i) {
        if (any_test && m.frames[i].split != Split::kTest) continue;
        bool swapped = false;
        const Image img =
            augment_background({&ga, &*bga}, {&gb, &*bgb}, m.frames[i].camera, rcfg, job.bg_prob, rng, &swapped);
        char name[32];
        std::snprintf(name, sizeof name, "augbg_%04zu.png", i);
        write_png(job.out / name, img);
        csv << name << ',' << (swapped ? 1 : 0) << '\n';
        swaps += swapped;
    }
    write_file_atomic(job.out / kAugmentOut, csv.str());
    return swaps;
}

/// Human-readable storage summary of a scene file.
inline std::string cmd_info(const std::filesystem::path &scene_path) {
    const QuantizedScene q = read_scene(scene_path);
    const StorageReport r = storage_report(q);
    std::ostringstream out;
    out << "resolution: " << q.resolution[0] << 'x' << q.resolution[1] << 'x' << q.resolution[2] << '\n'
        << "voxels: " << q.coords.size() << '\n'
        << "background: " << (q.background ? "yes" : "no") << '\n'
        << "header_bytes: " << r.header << '\n'
        << "coords_bytes: " << r.coords << '\n'
        << "density_bytes: " << r.density << '\n'
        << "sh_bytes: " << r.sh << '\n'
        << "background_bytes: " << r.background << '\n'
        << "checksum_bytes: " << r.checksum << '\n'
        << "total_bytes: " << r.total << '\n'
        << "dense_float_bytes: " << static_cast<uint64_t>(r.dense_baseline) << '\n'
        << "ratio: " << r.ratio << '\n';
    return out.str();
}

/// Writes the analytic cube scene (frames, manifest with bounds) to job.out.
inline SceneManifest cmd_synth(const JobConfig &job, int size = 64) {
    detail::ensure_out_dir(job.out);
    const ColoredCube cube;
    SceneManifest m = write_cube_scene(job.out, cube, 16, 4, size);
    return m;
}

} // namespace perfield::cli
