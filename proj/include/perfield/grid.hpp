// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/common.hpp"
#include "perfield/sh.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace perfield {

inline constexpr int32_t kEmpty = -1;
inline constexpr int kMaxResolution = 1024;

/// Sparse voxel scene: a dense cell -> slot index plus compact per-slot
/// parameters. Values live at voxel centres; cell (i, j, k) has its centre at
/// world_min + (i + 0.5) * voxel_size.
///
/// Grids built by this library keep slots ordered by linear cell index.
struct SparseVoxelGrid {
    Vec3i resolution = Vec3i::Ones();
    Vec3 world_min = -Vec3::Ones();
    Vec3 world_max = Vec3::Ones();
    std::vector<int32_t> occupancy;  // Nx*Ny*Nz, kEmpty or slot
    std::vector<int32_t> slot_cell;  // slot -> linear cell index
    std::vector<double> density;     // raw sigma per slot
    std::vector<double> sh;          // kShCoeffs per slot

    std::size_t slot_count() const { return density.size(); }
    std::size_t cell_count() const {
        return static_cast<std::size_t>(resolution.x()) * resolution.y() * resolution.z();
    }

    Vec3 voxel_size() const { return (world_max - world_min).cwiseQuotient(resolution.cast<double>()); }
    double min_voxel_size() const { return voxel_size().minCoeff(); }

    int64_t linear(int i, int j, int k) const {
        return (static_cast<int64_t>(k) * resolution.y() + j) * resolution.x() + i;
    }
    Vec3i cell_of(int64_t lin) const {
        const int nx = resolution.x(), ny = resolution.y();
        return {static_cast<int>(lin % nx), static_cast<int>((lin / nx) % ny), static_cast<int>(lin / (int64_t(nx) * ny))};
    }
    bool in_range(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < resolution.x() && j < resolution.y() && k < resolution.z();
    }
    int32_t slot_at(int i, int j, int k) const { return in_range(i, j, k) ? occupancy[linear(i, j, k)] : kEmpty; }

    Vec3 cell_center(const Vec3i &c) const {
        return world_min + (c.cast<double>() + Vec3::Constant(0.5)).cwiseProduct(voxel_size());
    }
    /// Continuous voxel coordinates in which centres sit on integers.
    Vec3 to_voxel(const Vec3 &p) const {
        return (p - world_min).cwiseQuotient(voxel_size()) - Vec3::Constant(0.5);
    }
    bool contains(const Vec3 &p) const {
        return (p.array() >= world_min.array()).all() && (p.array() <= world_max.array()).all();
    }

    double *sh_of(std::size_t slot) { return sh.data() + slot * kShCoeffs; }
    const double *sh_of(std::size_t slot) const { return sh.data() + slot * kShCoeffs; }
};

/// An all-empty grid.
inline SparseVoxelGrid make_empty_grid(const Vec3i &resolution, const Vec3 &world_min, const Vec3 &world_max) {
    if ((resolution.array() <= 0).any()) throw InvalidArgument("grid resolution must be positive");
    if ((resolution.array() > kMaxResolution).any()) throw InvalidArgument("grid resolution exceeds 1024");
    if (!((world_min.array() < world_max.array()).all())) throw InvalidArgument("grid bounds must satisfy min < max");
    SparseVoxelGrid g;
    g.resolution = resolution;
    g.world_min = world_min;
    g.world_max = world_max;
    g.occupancy.assign(g.cell_count(), kEmpty);
    return g;
}

/// Grid whose occupied cells are exactly `cells` (deduplicated, stored in
/// linear order), each initialised with `sigma` and zero SH.
inline SparseVoxelGrid make_grid_from_cells(const Vec3i &resolution, const Vec3 &world_min, const Vec3 &world_max,
                                            std::vector<int64_t> cells, double sigma) {
    SparseVoxelGrid g = make_empty_grid(resolution, world_min, world_max);
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    g.slot_cell.reserve(cells.size());
    for (int64_t c : cells) {
        if (c < 0 || c >= static_cast<int64_t>(g.cell_count())) throw InvalidArgument("cell index out of range");
        g.occupancy[c] = static_cast<int32_t>(g.slot_cell.size());
        g.slot_cell.push_back(static_cast<int32_t>(c));
    }
    g.density.assign(cells.size(), sigma);
    g.sh.assign(cells.size() * kShCoeffs, 0.0);
    return g;
}

inline SparseVoxelGrid make_dense_grid(const Vec3i &resolution, const Vec3 &world_min, const Vec3 &world_max,
                                       double sigma) {
    SparseVoxelGrid g = make_empty_grid(resolution, world_min, world_max);
    const std::size_t n = g.cell_count();
    g.slot_cell.resize(n);
    for (std::size_t c = 0; c < n; ++c) {
        g.occupancy[c] = static_cast<int32_t>(c);
        g.slot_cell[c] = static_cast<int32_t>(c);
    }
    g.density.assign(n, sigma);
    g.sh.assign(n * kShCoeffs, 0.0);
    return g;
}

/// Full structural audit: occupancy/slot bijection and array sizes. Returns
/// an empty string when consistent, else a description of the first fault.
inline std::string audit_grid(const SparseVoxelGrid &g) {
    if (!((g.world_min.array() < g.world_max.array()).all())) return "bounds not ordered";
    if (g.occupancy.size() != g.cell_count()) return "occupancy size mismatch";
    if (g.slot_cell.size() != g.density.size()) return "slot_cell size mismatch";
    if (g.sh.size() != g.density.size() * kShCoeffs) return "sh size mismatch";
    std::vector<uint8_t> seen(g.slot_count(), 0);
    std::size_t referenced = 0;
    for (std::size_t c = 0; c < g.occupancy.size(); ++c) {
        const int32_t s = g.occupancy[c];
        if (s == kEmpty) continue;
        if (s < 0 || static_cast<std::size_t>(s) >= g.slot_count()) return "slot out of range";
        if (seen[s]++) return "slot referenced twice";
        if (static_cast<std::size_t>(g.slot_cell[s]) != c) return "slot_cell disagrees with occupancy";
        ++referenced;
    }
    if (referenced != g.slot_count()) return "unreferenced slot";
    return {};
}

// ---------------------------------------------------------------------------
// Trilinear sampling

/// The 8 voxels surrounding a point and their trilinear weights. Corner n
/// is offset (n & 1, (n >> 1) & 1, (n >> 2) & 1) from the base voxel.
struct TrilinearStencil {
    std::array<int32_t, 8> slot{};
    std::array<double, 8> weight{};
};

/// Fills the stencil for world point p. Returns false when p lies outside
/// the grid bounds. Corners outside the grid or unoccupied get kEmpty.
inline bool make_stencil(const SparseVoxelGrid &g, const Vec3 &p, TrilinearStencil &st) {
    if (!g.contains(p)) return false;
    const Vec3 v = g.to_voxel(p);
    int base[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        const double fl = std::floor(v[a]);
        base[a] = static_cast<int>(fl);
        f[a] = v[a] - fl;
    }
    for (int n = 0; n < 8; ++n) {
        const int dx = n & 1, dy = (n >> 1) & 1, dz = (n >> 2) & 1;
        st.slot[n] = g.slot_at(base[0] + dx, base[1] + dy, base[2] + dz);
        st.weight[n] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
    }
    return true;
}

struct SampleValue {
    double sigma = 0.0;
    ShCoeffs sh{};
};

/// Raw (pre-activation) trilinear blend of density and SH. Empty corners
/// contribute zero.
inline void blend_stencil(const SparseVoxelGrid &g, const TrilinearStencil &st, SampleValue &out) {
    out.sigma = 0.0;
    out.sh.fill(0.0);
    for (int n = 0; n < 8; ++n) {
        const int32_t s = st.slot[n];
        if (s == kEmpty) continue;
        const double w = st.weight[n];
        out.sigma += w * g.density[s];
        const double *c = g.sh_of(s);
        for (int k = 0; k < kShCoeffs; ++k) out.sh[k] += w * c[k];
    }
}

/// Raw trilinear sample; out-of-bounds points give zeros.
inline SampleValue sample_raw(const SparseVoxelGrid &g, const Vec3 &p) {
    SampleValue out;
    TrilinearStencil st;
    if (make_stencil(g, p, st)) blend_stencil(g, st, out);
    return out;
}

/// Trilinear sample with the density activation (ReLU) applied.
inline SampleValue sample_trilinear(const SparseVoxelGrid &g, const Vec3 &p) {
    SampleValue out = sample_raw(g, p);
    out.sigma = std::max(0.0, out.sigma);
    return out;
}

// ---------------------------------------------------------------------------
// Structural edits

/// Removes voxels with density below `threshold`. Survivors keep their
/// relative slot order and bit-identical values.
inline SparseVoxelGrid prune(const SparseVoxelGrid &g, double threshold) {
    if (std::isnan(threshold)) throw InvalidArgument("prune threshold is NaN");
    SparseVoxelGrid out = make_empty_grid(g.resolution, g.world_min, g.world_max);
    std::size_t keep = 0;
    for (std::size_t s = 0; s < g.slot_count(); ++s) keep += !(g.density[s] < threshold);
    out.slot_cell.reserve(keep);
    out.density.reserve(keep);
    out.sh.reserve(keep * kShCoeffs);
    for (std::size_t s = 0; s < g.slot_count(); ++s) {
        if (g.density[s] < threshold) continue;
        const int32_t cell = g.slot_cell[s];
        out.occupancy[cell] = static_cast<int32_t>(out.slot_cell.size());
        out.slot_cell.push_back(cell);
        out.density.push_back(g.density[s]);
        out.sh.insert(out.sh.end(), g.sh_of(s), g.sh_of(s) + kShCoeffs);
    }
    return out;
}

/// Doubles the resolution. Every occupied voxel spawns its 8 children, each
/// initialised with the raw trilinear interpolant of the coarse grid at the
/// child centre. World bounds are unchanged.
inline SparseVoxelGrid upsample(const SparseVoxelGrid &g, int factor = 2) {
    if (factor != 2) throw InvalidArgument("only factor-2 upsampling is supported");
    const Vec3i fine_res = g.resolution * 2;
    if ((fine_res.array() > kMaxResolution).any()) throw InvalidArgument("upsampled resolution exceeds 1024");

    SparseVoxelGrid out = make_empty_grid(fine_res, g.world_min, g.world_max);
    std::vector<int64_t> cells;
    cells.reserve(g.slot_count() * 8);
    for (std::size_t s = 0; s < g.slot_count(); ++s) {
        const Vec3i c = g.cell_of(g.slot_cell[s]);
        for (int n = 0; n < 8; ++n) {
            const Vec3i child(2 * c.x() + (n & 1), 2 * c.y() + ((n >> 1) & 1), 2 * c.z() + ((n >> 2) & 1));
            cells.push_back(out.linear(child.x(), child.y(), child.z()));
        }
    }
    std::sort(cells.begin(), cells.end());

    out.slot_cell.resize(cells.size());
    out.density.resize(cells.size());
    out.sh.resize(cells.size() * kShCoeffs);
    for (std::size_t s = 0; s < cells.size(); ++s) {
        out.occupancy[cells[s]] = static_cast<int32_t>(s);
        out.slot_cell[s] = static_cast<int32_t>(cells[s]);
        const SampleValue v = sample_raw(g, out.cell_center(out.cell_of(cells[s])));
        out.density[s] = v.sigma;
        std::copy(v.sh.begin(), v.sh.end(), out.sh_of(s));
    }
    return out;
}

} // namespace perfield
