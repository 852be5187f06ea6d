// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/common.hpp"
#include "perfield/geometry.hpp"
#include "perfield/grid.hpp"
#include "perfield/image.hpp"
#include "perfield/trainer.hpp"

#include "json.hpp" // nlohmann/json, vendored

#include <array>
#include <cmath>
#include <deque>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <unordered_map>

namespace perfield {

/// Raised when a scene cannot be used for training (too few usable frames,
/// missing inputs a recipe requires).
class DefectiveScene : public std::runtime_error {
public:
    DefectiveScene(const std::string &scene, const std::string &why)
        : std::runtime_error("defective scene '" + scene + "': " + why), scene_id(scene) {}
    std::string scene_id;
};

inline constexpr int kIgnoreClass = -1;

// ---------------------------------------------------------------------------
// Manifest

enum class Split { kTrain, kTest };

struct FrameEntry {
    std::string image;                // path relative to the manifest directory
    Camera camera;
    std::optional<std::string> depth; // 16-bit PNG in millimetres
    std::optional<double> blur_score;
    Split split = Split::kTrain;
};

struct SceneManifest {
    std::string scene_id;
    std::optional<int> class_label;
    std::vector<FrameEntry> frames;
    std::optional<std::pair<Vec3, Vec3>> bounds; // world box for object scenes
    std::filesystem::path base_dir;               // directory the relative paths resolve against

    std::filesystem::path resolve(const std::string &rel) const { return base_dir / rel; }
    std::size_t count(Split s) const {
        return static_cast<std::size_t>(
            std::count_if(frames.begin(), frames.end(), [&](const FrameEntry &f) { return f.split == s; }));
    }
};

namespace detail {

inline double json_number(const nlohmann::json &j, const char *key) {
    if (!j.contains(key) || !j.at(key).is_number())
        throw InvalidArgument(std::string("manifest: missing numeric field '") + key + "'");
    return j.at(key).get<double>();
}

} // namespace detail

/// Parses manifest JSON text. Relative paths resolve against `base_dir`;
/// file existence is not checked here.
inline SceneManifest parse_manifest(const std::string &text, const std::filesystem::path &base_dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error &e) {
        throw InvalidArgument(std::string("manifest: invalid JSON: ") + e.what());
    }
    SceneManifest m;
    m.base_dir = base_dir;
    try {
        if (!j.is_object() || !j.contains("frames") || !j.at("frames").is_array())
            throw InvalidArgument("manifest: expected an object with a 'frames' array");
        m.scene_id = j.value("scene_id", std::string("scene"));
        if (j.contains("class_label") && !j.at("class_label").is_null()) m.class_label = j.at("class_label").get<int>();
        for (const auto &f : j.at("frames")) {
            FrameEntry e;
            if (!f.contains("image") || !f.at("image").is_string())
                throw InvalidArgument("manifest: frame without image");
            e.image = f.at("image").get<std::string>();
            const auto &m16 = f.at("camera_to_world");
            if (!m16.is_array() || m16.size() != 16)
                throw InvalidArgument("manifest: camera_to_world needs 16 numbers");
            Mat4 c2w;
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) c2w(r, c) = m16.at(static_cast<std::size_t>(r * 4 + c)).get<double>();
            e.camera.set_pose(c2w);
            const auto &in = f.at("intrinsics");
            e.camera.fx = detail::json_number(in, "fx");
            e.camera.fy = detail::json_number(in, "fy");
            e.camera.cx = detail::json_number(in, "cx");
            e.camera.cy = detail::json_number(in, "cy");
            e.camera.width = static_cast<int>(detail::json_number(in, "width"));
            e.camera.height = static_cast<int>(detail::json_number(in, "height"));
            e.camera.k1 = in.value("k1", 0.0);
            e.camera.k2 = in.value("k2", 0.0);
            e.camera.validate();
            if (f.contains("depth") && f.at("depth").is_string()) e.depth = f.at("depth").get<std::string>();
            if (f.contains("blur_score") && f.at("blur_score").is_number())
                e.blur_score = f.at("blur_score").get<double>();
            const std::string split = f.value("split", std::string("train"));
            if (split == "train") e.split = Split::kTrain;
            else if (split == "test") e.split = Split::kTest;
            else throw InvalidArgument("manifest: split must be 'train' or 'test'");
            m.frames.push_back(std::move(e));
        }
        if (j.contains("bounds")) {
            const auto &b = j.at("bounds");
            Vec3 lo, hi;
            for (int a = 0; a < 3; ++a) {
                lo[a] = b.at("min").at(static_cast<std::size_t>(a)).get<double>();
                hi[a] = b.at("max").at(static_cast<std::size_t>(a)).get<double>();
            }
            if (!((hi - lo).array() > 0.0).all()) throw InvalidArgument("manifest: bounds must have positive extent");
            m.bounds = {lo, hi};
        }
    } catch (const nlohmann::json::exception &e) {
        throw InvalidArgument(std::string("manifest: ") + e.what());
    }
    return m;
}

/// Loads a manifest and checks that every referenced file exists.
inline SceneManifest load_manifest(const std::filesystem::path &path) {
    SceneManifest m = parse_manifest(read_file(path), path.parent_path());
    for (const auto &f : m.frames) {
        if (!std::filesystem::exists(m.resolve(f.image))) throw IoError("missing image: " + m.resolve(f.image).string());
        if (f.depth && !std::filesystem::exists(m.resolve(*f.depth)))
            throw IoError("missing depth map: " + m.resolve(*f.depth).string());
    }
    return m;
}

inline std::string manifest_json(const SceneManifest &m) {
    nlohmann::ordered_json j;
    j["scene_id"] = m.scene_id;
    if (m.class_label) j["class_label"] = *m.class_label;
    j["frames"] = nlohmann::ordered_json::array();
    for (const auto &f : m.frames) {
        nlohmann::ordered_json e;
        e["image"] = f.image;
        const Mat4 c2w = f.camera.pose();
        std::vector<double> flat;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) flat.push_back(c2w(r, c));
        e["camera_to_world"] = flat;
        e["intrinsics"] = {{"fx", f.camera.fx},         {"fy", f.camera.fy},          {"cx", f.camera.cx},
                           {"cy", f.camera.cy},         {"width", f.camera.width},    {"height", f.camera.height},
                           {"k1", f.camera.k1},         {"k2", f.camera.k2}};
        if (f.depth) e["depth"] = *f.depth;
        if (f.blur_score) e["blur_score"] = *f.blur_score;
        e["split"] = f.split == Split::kTrain ? "train" : "test";
        j["frames"].push_back(std::move(e));
    }
    if (m.bounds) {
        const auto &[lo, hi] = *m.bounds;
        j["bounds"] = {{"min", {lo.x(), lo.y(), lo.z()}}, {"max", {hi.x(), hi.y(), hi.z()}}};
    }
    return j.dump(2) + "\n";
}

inline void save_manifest(const std::filesystem::path &path, const SceneManifest &m) {
    write_file_atomic(path, manifest_json(m));
}

// ---------------------------------------------------------------------------
// Blur detection

inline constexpr double kBlurThreshold = 10.0;

/// Variance of the 3x3 Laplacian response over the valid region of a
/// single-channel image on the 0-255 scale.
inline double blur_score_gray255(const Image &gray) {
    if (gray.channels != 1) throw InvalidArgument("blur score expects a single-channel image");
    if (gray.width < 3 || gray.height < 3) throw InvalidArgument("blur score needs at least a 3x3 image");
    double sum = 0.0, sum_sq = 0.0;
    const double n = static_cast<double>(gray.width - 2) * (gray.height - 2);
    // Two passes for the variance keep cancellation error small.
    std::vector<double> resp;
    resp.reserve(static_cast<std::size_t>(n));
    for (int v = 1; v + 1 < gray.height; ++v)
        for (int u = 1; u + 1 < gray.width; ++u) {
            const double l = gray.at(u, v - 1, 0) + gray.at(u, v + 1, 0) + gray.at(u - 1, v, 0) +
                             gray.at(u + 1, v, 0) - 4.0 * gray.at(u, v, 0);
            resp.push_back(l);
            sum += l;
        }
    const double mean = sum / n;
    for (double l : resp) sum_sq += (l - mean) * (l - mean);
    return sum_sq / n;
}

/// Blur score of an image with values in [0, 1] (RGB converted to luma).
inline double blur_score(const Image &img) { return blur_score_gray255(to_grayscale(img, 255.0)); }

/// Fills in missing blur scores by loading each frame's image.
inline void compute_blur_scores(SceneManifest &m, int workers = 1) {
    parallel_chunks(m.frames.size(), workers, [&](std::size_t b, std::size_t e, int) {
        for (std::size_t i = b; i < e; ++i)
            if (!m.frames[i].blur_score) m.frames[i].blur_score = blur_score(read_png_rgb(m.resolve(m.frames[i].image)));
    });
}

/// Frame selection: scenes with more than `max_frames` frames keep every
/// ceil(N / max_frames)-th frame; smaller scenes keep the frames whose blur
/// score reaches `blur_threshold` (frames without a score are kept). Fewer
/// than two survivors mark the scene defective.
inline SceneManifest select_frames(const SceneManifest &m, std::size_t max_frames = 1500,
                                   double blur_threshold = kBlurThreshold) {
    if (max_frames == 0) throw InvalidArgument("max_frames must be positive");
    SceneManifest out = m;
    out.frames.clear();
    const std::size_t n = m.frames.size();
    if (n > max_frames) {
        const std::size_t stride = (n + max_frames - 1) / max_frames;
        for (std::size_t i = 0; i < n; i += stride) out.frames.push_back(m.frames[i]);
    } else {
        for (const auto &f : m.frames)
            if (!f.blur_score || *f.blur_score >= blur_threshold) out.frames.push_back(f);
    }
    if (out.frames.size() < 2)
        throw DefectiveScene(m.scene_id, std::to_string(out.frames.size()) + " usable frame(s) after selection");
    return out;
}

/// Number of held-out frames for `n` usable frames: 10% rounded, at least
/// one when n >= 3, and never leaving fewer than two training frames.
inline std::size_t test_count(std::size_t n, double fraction = 0.1) {
    if (n < 3) return 0;
    const auto t = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    return std::clamp<std::size_t>(t, 1, n - 2);
}

/// Stratified test split: evenly spaced indices with a seed-derived phase.
inline std::vector<std::size_t> test_indices(std::size_t n, uint64_t seed, double fraction = 0.1) {
    const std::size_t k = test_count(n, fraction);
    std::vector<std::size_t> idx;
    if (k == 0) return idx;
    const double stride = static_cast<double>(n) / static_cast<double>(k);
    std::mt19937_64 rng(seed);
    const double phase = std::uniform_real_distribution<double>(0.0, stride)(rng);
    for (std::size_t i = 0; i < k; ++i)
        idx.push_back(std::min(n - 1, static_cast<std::size_t>(std::floor(phase + stride * static_cast<double>(i)))));
    return idx;
}

inline void assign_split(SceneManifest &m, uint64_t seed, double fraction = 0.1) {
    for (auto &f : m.frames) f.split = Split::kTrain;
    for (std::size_t i : test_indices(m.frames.size(), seed, fraction)) m.frames[i].split = Split::kTest;
    if (m.count(Split::kTrain) < 2) throw DefectiveScene(m.scene_id, "fewer than two training frames");
}

/// Loads the images of one split as a training set.
inline TrainingSet load_split(const SceneManifest &m, Split split) {
    TrainingSet data;
    for (const auto &f : m.frames) {
        if (f.split != split) continue;
        Image img = read_png_rgb(m.resolve(f.image));
        if (img.width != f.camera.width || img.height != f.camera.height)
            throw InvalidArgument("image size disagrees with intrinsics: " + f.image);
        data.cameras.push_back(f.camera);
        data.images.push_back(std::move(img));
    }
    return data;
}

// ---------------------------------------------------------------------------
// Depth

/// Per-pixel depth along the optical axis in world units; 0 marks invalid.
struct DepthMap {
    int width = 0, height = 0;
    std::vector<double> depth;
    double at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
};

/// Reads a 16-bit depth PNG; raw values are multiplied by `scale`
/// (0.001 converts millimetres to metres).
inline DepthMap read_depth_png(const std::filesystem::path &path, double scale = 1e-3) {
    const RawPng raw = read_png_raw(path);
    if (raw.channels != 1) throw InvalidArgument("depth map must be single-channel: " + path.string());
    DepthMap d;
    d.width = raw.width;
    d.height = raw.height;
    d.depth.resize(raw.samples.size());
    for (std::size_t i = 0; i < raw.samples.size(); ++i) d.depth[i] = raw.samples[i] * scale;
    return d;
}

/// Lifts every valid depth pixel to world space: p = R (d K^-1 [u+0.5, v+0.5, 1]) + t,
/// with the camera's radial distortion applied as in pixel_to_ray.
inline std::vector<Vec3> unproject_depth(const Camera &cam, const DepthMap &depth) {
    if (depth.width != cam.width || depth.height != cam.height)
        throw InvalidArgument("depth map size disagrees with the camera");
    std::vector<Vec3> pts;
    for (int v = 0; v < depth.height; ++v)
        for (int u = 0; u < depth.width; ++u) {
            const double d = depth.at(u, v);
            if (!(d > 0.0) || !std::isfinite(d)) continue;
            double x = (u + 0.5 - cam.cx) / cam.fx;
            double y = (v + 0.5 - cam.cy) / cam.fy;
            if (cam.has_distortion()) {
                const double f = radial_factor(cam.k1, cam.k2, x * x + y * y);
                x *= f;
                y *= f;
            }
            pts.push_back(cam.R * (d * Vec3(x, y, 1.0)) + cam.t);
        }
    return pts;
}

// ---------------------------------------------------------------------------
// Point-cloud denoising and grid initialisation

namespace detail {

struct CellHash {
    std::size_t operator()(const std::array<int64_t, 3> &c) const {
        uint64_t h = static_cast<uint64_t>(c[0]) * 0x9E3779B97F4A7C15ull;
        h ^= static_cast<uint64_t>(c[1]) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
        h ^= static_cast<uint64_t>(c[2]) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

using CellKey = std::array<int64_t, 3>;

inline CellKey cell_key(const Vec3 &p, double cell) {
    return {static_cast<int64_t>(std::floor(p.x() / cell)), static_cast<int64_t>(std::floor(p.y() / cell)),
            static_cast<int64_t>(std::floor(p.z() / cell))};
}

} // namespace detail

/// Indices of the points that survive connected-component filtering: points
/// are binned into `cell`-sized cubes, cells are linked by 26-connectivity,
/// and components holding fewer than `min_fraction` of the largest
/// component's points are dropped. Order is preserved.
inline std::vector<std::size_t> connected_component_survivors(const std::vector<Vec3> &pts, double cell = 0.05,
                                                              double min_fraction = 0.01) {
    if (!(cell > 0.0)) throw InvalidArgument("component cell size must be positive");
    std::unordered_map<detail::CellKey, int64_t, detail::CellHash> cell_id;
    std::vector<detail::CellKey> cells;
    std::vector<int64_t> point_cell(pts.size());
    std::vector<int64_t> cell_points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (!pts[i].allFinite()) throw InvalidArgument("non-finite point");
        const detail::CellKey k = detail::cell_key(pts[i], cell);
        auto [it, inserted] = cell_id.try_emplace(k, static_cast<int64_t>(cells.size()));
        if (inserted) {
            cells.push_back(k);
            cell_points.push_back(0);
        }
        point_cell[i] = it->second;
        ++cell_points[it->second];
    }
    std::vector<int64_t> comp(cells.size(), -1);
    std::vector<int64_t> comp_points;
    std::deque<int64_t> queue;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (comp[c] >= 0) continue;
        const int64_t id = static_cast<int64_t>(comp_points.size());
        comp_points.push_back(0);
        comp[c] = id;
        queue.push_back(static_cast<int64_t>(c));
        while (!queue.empty()) {
            const int64_t cur = queue.front();
            queue.pop_front();
            comp_points[id] += cell_points[cur];
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy && !dz) continue;
                        const detail::CellKey nk{cells[cur][0] + dx, cells[cur][1] + dy, cells[cur][2] + dz};
                        const auto it = cell_id.find(nk);
                        if (it == cell_id.end() || comp[it->second] >= 0) continue;
                        comp[it->second] = id;
                        queue.push_back(it->second);
                    }
        }
    }
    const int64_t largest = comp_points.empty() ? 0 : *std::max_element(comp_points.begin(), comp_points.end());
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < pts.size(); ++i)
        if (static_cast<double>(comp_points[comp[point_cell[i]]]) >= min_fraction * static_cast<double>(largest))
            keep.push_back(i);
    return keep;
}

inline std::vector<Vec3> filter_connected_components(const std::vector<Vec3> &pts, double cell = 0.05,
                                                     double min_fraction = 0.01) {
    std::vector<Vec3> out;
    for (std::size_t i : connected_component_survivors(pts, cell, min_fraction)) out.push_back(pts[i]);
    if (out.empty()) log(LogLevel::kWarn, "connected-component filter removed every point");
    return out;
}

/// Padded bounds of a point set: the tight box grown by 5% of its extent on
/// each side. Flat axes are padded by a small fraction of the largest extent
/// so the box never degenerates.
inline std::pair<Vec3, Vec3> padded_bounds(const std::vector<Vec3> &pts, double pad = 0.05) {
    if (pts.empty()) throw InvalidArgument("cannot bound an empty point set");
    Vec3 lo = pts.front(), hi = pts.front();
    for (const auto &p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 ext = hi - lo;
    const double floor_ext = 1e-2 * std::max(ext.maxCoeff(), 1.0);
    const Vec3 margin = pad * ext.cwiseMax(Vec3::Constant(floor_ext));
    return {lo - margin, hi + margin};
}

/// Sparse grid occupying every cell that contains a point, dilated by one
/// cell in all 26 directions. Density starts at 0.1 and SH at zero.
inline SparseVoxelGrid init_grid_from_points(const std::vector<Vec3> &pts, int resolution = 256,
                                             double init_density = 0.1) {
    if (pts.empty()) throw InvalidArgument("grid initialisation needs at least one point");
    const auto [lo, hi] = padded_bounds(pts);
    const Vec3i res = Vec3i::Constant(resolution);
    SparseVoxelGrid probe = make_empty_grid(res, lo, hi);
    std::vector<uint8_t> occ(probe.cell_count(), 0);
    for (const auto &p : pts) {
        const Vec3 f = (p - lo).cwiseQuotient(probe.voxel_size());
        const Vec3i c(std::clamp(static_cast<int>(std::floor(f.x())), 0, resolution - 1),
                      std::clamp(static_cast<int>(std::floor(f.y())), 0, resolution - 1),
                      std::clamp(static_cast<int>(std::floor(f.z())), 0, resolution - 1));
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int x = c.x() + dx, y = c.y() + dy, z = c.z() + dz;
                    if (probe.in_range(x, y, z)) occ[probe.linear(x, y, z)] = 1;
                }
    }
    std::vector<int64_t> cells;
    for (std::size_t i = 0; i < occ.size(); ++i)
        if (occ[i]) cells.push_back(static_cast<int64_t>(i));
    return make_grid_from_cells(res, lo, hi, cells, init_density);
}

// ---------------------------------------------------------------------------
// Image metrics

/// 10 log10(1 / MSE) over all channels; identical images give +infinity.
inline double psnr(const Image &a, const Image &b) {
    if (!a.same_shape(b) || a.empty()) throw InvalidArgument("psnr needs two non-empty images of equal shape");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sse += d * d;
    }
    if (sse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(sse / static_cast<double>(a.data.size()));
}

namespace detail {

inline std::array<double, 11> gaussian_window_1d() {
    std::array<double, 11> w{};
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double x = i - 5;
        w[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        sum += w[i];
    }
    for (double &x : w) x /= sum;
    return w;
}

/// Separable "valid" Gaussian filter of a single-channel image.
inline Image gaussian_valid(const Image &img) {
    const auto w = gaussian_window_1d();
    Image rows(img.width - 10, img.height, 1);
    for (int v = 0; v < img.height; ++v)
        for (int u = 0; u < rows.width; ++u) {
            double s = 0.0;
            for (int k = 0; k < 11; ++k) s += w[k] * img.at(u + k, v, 0);
            rows.at(u, v, 0) = s;
        }
    Image out(img.width - 10, img.height - 10, 1);
    for (int v = 0; v < out.height; ++v)
        for (int u = 0; u < out.width; ++u) {
            double s = 0.0;
            for (int k = 0; k < 11; ++k) s += w[k] * rows.at(u, v + k, 0);
            out.at(u, v, 0) = s;
        }
    return out;
}

} // namespace detail

/// Mean SSIM over valid 11x11 windows (Gaussian, sigma 1.5) of the luma of
/// two images in [0, 1], with C1 = (0.01)^2 and C2 = (0.03)^2.
inline double ssim(const Image &a, const Image &b) {
    if (!a.same_shape(b)) throw InvalidArgument("ssim needs images of equal shape");
    if (a.width < 11 || a.height < 11) throw InvalidArgument("ssim needs images of at least 11x11");
    const Image x = to_grayscale(a), y = to_grayscale(b);
    Image xx(x.width, x.height, 1), yy(x.width, x.height, 1), xy(x.width, x.height, 1);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        xx.data[i] = x.data[i] * x.data[i];
        yy.data[i] = y.data[i] * y.data[i];
        xy.data[i] = x.data[i] * y.data[i];
    }
    const Image mx = detail::gaussian_valid(x), my = detail::gaussian_valid(y);
    const Image sxx = detail::gaussian_valid(xx), syy = detail::gaussian_valid(yy), sxy = detail::gaussian_valid(xy);
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double total = 0.0;
    for (std::size_t i = 0; i < mx.data.size(); ++i) {
        const double m1 = mx.data[i], m2 = my.data[i];
        const double v1 = sxx.data[i] - m1 * m1, v2 = syy.data[i] - m2 * m2, c12 = sxy.data[i] - m1 * m2;
        total += ((2.0 * m1 * m2 + C1) * (2.0 * c12 + C2)) / ((m1 * m1 + m2 * m2 + C1) * (v1 + v2 + C2));
    }
    return total / static_cast<double>(mx.data.size());
}

// ---------------------------------------------------------------------------
// Label transfer

struct LabeledPointCloud {
    std::vector<Vec3> points;
    std::vector<int> labels;
};

/// Uniform hash grid over points for radius queries.
class PointIndex {
public:
    PointIndex(const std::vector<Vec3> &pts, double cell) : pts_(pts), cell_(cell) {
        if (!(cell > 0.0)) throw InvalidArgument("index cell size must be positive");
        for (std::size_t i = 0; i < pts.size(); ++i) buckets_[detail::cell_key(pts[i], cell)].push_back(i);
    }

    /// Nearest point strictly within `radius` (<= the cell size); ties go to
    /// the lowest index. Returns -1 when none qualifies.
    int64_t nearest_within(const Vec3 &q, double radius) const {
        const detail::CellKey c = detail::cell_key(q, cell_);
        const double r2 = radius * radius;
        int64_t best = -1;
        double best_d2 = 0.0;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const auto it = buckets_.find({c[0] + dx, c[1] + dy, c[2] + dz});
                    if (it == buckets_.end()) continue;
                    for (std::size_t i : it->second) {
                        const double d2 = (pts_[i] - q).squaredNorm();
                        if (!(d2 < r2)) continue;
                        const auto ii = static_cast<int64_t>(i);
                        if (best < 0 || d2 < best_d2 || (d2 == best_d2 && ii < best)) {
                            best = ii;
                            best_d2 = d2;
                        }
                    }
                }
        return best;
    }

private:
    const std::vector<Vec3> &pts_;
    double cell_;
    std::unordered_map<detail::CellKey, std::vector<std::size_t>, detail::CellHash> buckets_;
};

/// Per-slot class labels: the label of the nearest cloud point when it lies
/// closer than `radius` to the voxel centre, IGNORE_CLASS otherwise.
inline std::vector<int> transfer_labels(const SparseVoxelGrid &g, const LabeledPointCloud &cloud, double radius = 0.05,
                                        int workers = 1) {
    if (cloud.points.size() != cloud.labels.size()) throw InvalidArgument("point and label counts differ");
    std::vector<int> out(g.slot_count(), kIgnoreClass);
    if (cloud.points.empty()) return out;
    const PointIndex index(cloud.points, radius);
    parallel_chunks(g.slot_count(), workers, [&](std::size_t b, std::size_t e, int) {
        for (std::size_t s = b; s < e; ++s) {
            const int64_t i = index.nearest_within(g.cell_center(g.cell_of(g.slot_cell[s])), radius);
            if (i >= 0) out[s] = cloud.labels[static_cast<std::size_t>(i)];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Metrics report

struct SceneMetrics {
    std::string scene_id;
    double psnr = 0.0;
    double ssim = 0.0;
    double train_time_s = 0.0;
    std::size_t n_voxels = 0;
    std::size_t file_bytes = 0;
};

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream o;
    o << std::setprecision(10) << v;
    return o.str();
}

/// CSV with columns scene_id,psnr,ssim,train_time_s,n_voxels,file_bytes.
inline std::string metrics_csv(const std::vector<SceneMetrics> &rows) {
    std::ostringstream out;
    out << "scene_id,psnr,ssim,train_time_s,n_voxels,file_bytes\n";
    for (const auto &r : rows)
        out << r.scene_id << ',' << format_metric(r.psnr) << ',' << format_metric(r.ssim) << ','
            << format_metric(r.train_time_s) << ',' << r.n_voxels << ',' << r.file_bytes << '\n';
    return out.str();
}

/// Scene counts above the PSNR thresholds 15, 20 and 25 dB.
struct PsnrHistogram {
    std::size_t total = 0;
    std::size_t above15 = 0, above20 = 0, above25 = 0;
};

inline PsnrHistogram psnr_histogram(const std::vector<double> &values) {
    PsnrHistogram h;
    for (double v : values) {
        ++h.total;
        h.above15 += v > 15.0;
        h.above20 += v > 20.0;
        h.above25 += v > 25.0;
    }
    return h;
}

} // namespace perfield
