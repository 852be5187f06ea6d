// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/common.hpp"

#include <array>
#include <cmath>

namespace perfield {

inline constexpr int kShBasis = 9;                 // degree <= 2
inline constexpr int kShCoeffs = 3 * kShBasis;     // per voxel, channel-major (r0..r8, g0..g8, b0..b8)
inline constexpr int kVoxelParams = 1 + kShCoeffs; // density + SH

using ShBasis = std::array<double, kShBasis>;
using ShCoeffs = std::array<double, kShCoeffs>;

namespace sh_const {
inline constexpr double kC0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))
inline constexpr double kC1 = 0.48860251190291992;  // sqrt(3 / (4 pi))
inline constexpr double kC2a = 1.0925484305920792;  // sqrt(15 / (4 pi))
inline constexpr double kC2b = 0.31539156525252005; // sqrt(5 / (16 pi))
inline constexpr double kC2c = 0.54627421529603959; // sqrt(15 / (16 pi))
} // namespace sh_const

/// Real orthonormal SH basis up to l = 2, ordered
/// (0,0) (1,-1) (1,0) (1,1) (2,-2) (2,-1) (2,0) (2,1) (2,2).
inline ShBasis sh_basis(const Vec3 &d) {
    using namespace sh_const;
    const double x = d.x(), y = d.y(), z = d.z();
    return {kC0,
            kC1 * y,
            kC1 * z,
            kC1 * x,
            kC2a * x * y,
            kC2a * y * z,
            kC2b * (3.0 * z * z - 1.0),
            kC2a * x * z,
            kC2c * (x * x - y * y)};
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Pre-activation colour: per channel, the SH expansion evaluated at the basis.
inline Vec3 sh_raw_color(const double *sh27, const ShBasis &basis) {
    Vec3 out = Vec3::Zero();
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < kShBasis; ++k) acc += sh27[c * kShBasis + k] * basis[k];
        out[c] = acc;
    }
    return out;
}

/// View-dependent colour in (0, 1): sigmoid of the SH expansion per channel.
inline Vec3 eval_color(const double *sh27, const Vec3 &direction) {
    const Vec3 raw = sh_raw_color(sh27, sh_basis(direction));
    return {sigmoid(raw.x()), sigmoid(raw.y()), sigmoid(raw.z())};
}

inline Vec3 eval_color(const ShCoeffs &sh27, const Vec3 &direction) { return eval_color(sh27.data(), direction); }

} // namespace perfield
