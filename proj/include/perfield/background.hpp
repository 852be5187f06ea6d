// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/common.hpp"
#include "perfield/geometry.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace perfield {

inline constexpr int kBgChannels = 4; // r, g, b, density

/// Layered background: concentric spheres around the foreground bounds, each
/// carrying an equirectangular texture of raw colour and raw density. Colours
/// are clamped to [0, 1] and densities pass through ReLU at lookup time.
/// Layer l has height x (2 * height) texels; texel (l, row, col) starts at
/// ((l * height + row) * width + col) * kBgChannels.
struct BackgroundModel {
    int n_layers = 16;
    int height = 512;
    double brightness = 0.5;
    Vec3 center = Vec3::Zero();
    std::vector<double> radii;   // strictly increasing
    std::vector<double> texels;

    int width() const { return 2 * height; }
    std::size_t texel_count() const {
        return static_cast<std::size_t>(n_layers) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width());
    }
    std::size_t texel_index(int layer, int row, int col) const {
        return (static_cast<std::size_t>(layer) * height + row) * width() + col;
    }
    double *texel(std::size_t i) { return texels.data() + i * kBgChannels; }
    const double *texel(std::size_t i) const { return texels.data() + i * kBgChannels; }
};

/// Inverse-depth spaced radii between 1.01x and 8x the bounding radius.
inline std::vector<double> background_radii(double bounding_radius, int n_layers) {
    std::vector<double> r(static_cast<std::size_t>(n_layers));
    const double inv_near = 1.0 / (1.01 * bounding_radius);
    const double inv_far = 1.0 / (8.0 * bounding_radius);
    for (int l = 0; l < n_layers; ++l) {
        const double s = n_layers == 1 ? 0.0 : static_cast<double>(l) / (n_layers - 1);
        r[l] = 1.0 / (inv_near + s * (inv_far - inv_near));
    }
    return r;
}

/// Background enclosing the box [world_min, world_max], initialised to
/// transparent mid-grey texels.
inline BackgroundModel make_background(const Vec3 &world_min, const Vec3 &world_max, int n_layers = 16,
                                       int height = 512, double brightness = 0.5) {
    if (n_layers <= 0 || height <= 0) throw InvalidArgument("background layers and resolution must be positive");
    if (!(brightness >= 0.0 && brightness <= 1.0)) throw InvalidArgument("background brightness must be in [0, 1]");
    BackgroundModel bg;
    bg.n_layers = n_layers;
    bg.height = height;
    bg.brightness = brightness;
    bg.center = 0.5 * (world_min + world_max);
    bg.radii = background_radii(0.5 * (world_max - world_min).norm(), n_layers);
    bg.texels.assign(bg.texel_count() * kBgChannels, 0.0);
    for (std::size_t i = 0; i < bg.texel_count(); ++i) {
        double *t = bg.texel(i);
        t[0] = t[1] = t[2] = 0.5;
    }
    return bg;
}

/// Bilinear footprint of one layer hit.
struct BgLookup {
    int layer = 0;
    std::array<std::size_t, 4> texel{};
    std::array<double, 4> weight{};
    std::array<double, kBgChannels> raw{}; // interpolated raw values
};

/// Far-side intersection of the ray with sphere (center, radius), or a
/// negative value when there is none in front of the origin.
inline double sphere_exit(const Ray &ray, const Vec3 &center, double radius) {
    const Vec3 oc = ray.origin - center;
    const double b = oc.dot(ray.direction);
    const double c = oc.squaredNorm() - radius * radius;
    const double disc = b * b - c;
    if (disc < 0.0) return -1.0;
    return -b + std::sqrt(disc);
}

inline BgLookup lookup_layer(const BackgroundModel &bg, int layer, const Vec3 &dir) {
    BgLookup lk;
    lk.layer = layer;
    const int H = bg.height, W = bg.width();
    const double theta = std::acos(std::clamp(dir.z(), -1.0, 1.0));
    const double phi = std::atan2(dir.y(), dir.x());
    const double fv = theta / std::numbers::pi * H - 0.5;
    const double fu = (phi + std::numbers::pi) / (2.0 * std::numbers::pi) * W - 0.5;
    const double v0f = std::floor(fv), u0f = std::floor(fu);
    const double wv = fv - v0f, wu = fu - u0f;
    const int v0 = std::clamp(static_cast<int>(v0f), 0, H - 1);
    const int v1 = std::clamp(static_cast<int>(v0f) + 1, 0, H - 1);
    const int u0 = ((static_cast<int>(u0f) % W) + W) % W;
    const int u1 = (u0 + 1) % W;
    lk.texel = {bg.texel_index(layer, v0, u0), bg.texel_index(layer, v0, u1), bg.texel_index(layer, v1, u0),
                bg.texel_index(layer, v1, u1)};
    lk.weight = {(1 - wv) * (1 - wu), (1 - wv) * wu, wv * (1 - wu), wv * wu};
    lk.raw.fill(0.0);
    for (int n = 0; n < 4; ++n) {
        const double *t = bg.texel(lk.texel[n]);
        for (int ch = 0; ch < kBgChannels; ++ch) lk.raw[ch] += lk.weight[n] * t[ch];
    }
    return lk;
}

/// Per-layer state kept for back-propagation.
struct BgLayerSample {
    BgLookup lookup;
    double sigma = 0.0;
    double alpha = 0.0;
    double T = 1.0; // transmittance before this layer
    Vec3 color = Vec3::Zero();
};

/// Front-to-back composite of the layers hit by `ray`, plus brightness for
/// whatever transmittance remains. Not yet scaled by the incoming
/// transmittance. Layer states are appended to `trace` when provided.
inline Vec3 background_composite(const BackgroundModel &bg, const Ray &ray,
                                 std::vector<BgLayerSample> *trace = nullptr) {
    Vec3 acc = Vec3::Zero();
    double T = 1.0;
    // Exit distance grows with radius, so increasing radius is front-to-back.
    for (int l = 0; l < bg.n_layers; ++l) {
        const double t = sphere_exit(ray, bg.center, bg.radii[l]);
        if (!(t > 0.0)) continue;
        const Vec3 dir = (ray.at(t) - bg.center) / bg.radii[l];
        BgLayerSample s;
        s.lookup = lookup_layer(bg, l, dir);
        s.sigma = std::max(0.0, s.lookup.raw[3]);
        s.alpha = 1.0 - std::exp(-s.sigma);
        s.T = T;
        for (int c = 0; c < 3; ++c) s.color[c] = std::clamp(s.lookup.raw[c], 0.0, 1.0);
        acc += T * s.alpha * s.color;
        T *= 1.0 - s.alpha;
        if (trace) trace->push_back(s);
    }
    acc += T * bg.brightness * Vec3::Ones();
    return acc;
}

/// Background radiance seen through incoming transmittance T_in.
inline Vec3 background_radiance(const BackgroundModel &bg, const Ray &ray, double T_in) {
    if (T_in <= 0.0) return Vec3::Zero();
    return T_in * background_composite(bg, ray);
}

} // namespace perfield
