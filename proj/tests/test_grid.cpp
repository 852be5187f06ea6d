// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#include "perfield/background.hpp"
#include "perfield/grid.hpp"
#include "perfield/sh.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace perfield {
namespace {

// ---------------------------------------------------------------- SH

TEST(ShBasis, ConstantBand) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10; ++i) EXPECT_NEAR(sh_basis(testing::random_unit(rng))[0], 0.2820948, 1e-7);
}

TEST(ShBasis, AxisSymmetry) {
    const ShBasis b = sh_basis(Vec3::UnitZ());
    EXPECT_EQ(b[1], 0.0);
    EXPECT_EQ(b[3], 0.0);
    EXPECT_GT(b[2], 0.0);
}

TEST(ShBasis, MonteCarloOrthonormality) {
    std::mt19937_64 rng(2);
    const int n = 100000;
    double gram[kShBasis][kShBasis] = {};
    for (int s = 0; s < n; ++s) {
        const ShBasis b = sh_basis(testing::random_unit(rng));
        for (int i = 0; i < kShBasis; ++i)
            for (int j = 0; j < kShBasis; ++j) gram[i][j] += b[i] * b[j];
    }
    const double area = 4.0 * std::numbers::pi / n;
    for (int i = 0; i < kShBasis; ++i)
        for (int j = 0; j < kShBasis; ++j) EXPECT_NEAR(gram[i][j] * area, i == j ? 1.0 : 0.0, 1e-2) << i << "," << j;
}

TEST(EvalColor, ZeroCoefficientsGiveHalf) {
    ShCoeffs c{};
    EXPECT_EQ(eval_color(c, Vec3::UnitX()), Vec3::Constant(0.5));
}

TEST(EvalColor, DcOnlyIsViewIndependent) {
    ShCoeffs c{};
    c[0] = 1.5;
    c[kShBasis] = -0.7;
    c[2 * kShBasis] = 3.0;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 10; ++i) {
        const Vec3 col = eval_color(c, testing::random_unit(rng));
        EXPECT_NEAR(col[0], sigmoid(1.5 * 0.2820948), 1e-7);
        EXPECT_NEAR(col[1], sigmoid(-0.7 * 0.2820948), 1e-7);
        EXPECT_NEAR(col[2], sigmoid(3.0 * 0.2820948), 1e-7);
    }
}

TEST(EvalColor, EvenBandsAreAntipodallySymmetric) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    ShCoeffs c{};
    for (int ch = 0; ch < 3; ++ch) {
        c[ch * kShBasis] = u(rng);
        for (int k = 4; k < 9; ++k) c[ch * kShBasis + k] = u(rng);
    }
    for (int i = 0; i < 10; ++i) {
        const Vec3 d = testing::random_unit(rng);
        EXPECT_LT((eval_color(c, d) - eval_color(c, -d)).norm(), 1e-15);
    }
}

// ---------------------------------------------------------------- sampling

SparseVoxelGrid line_grid() {
    // 4x1x1 grid over [0,4]x[0,1]x[0,1]; voxel centres at x = 0.5 .. 3.5
    SparseVoxelGrid g = make_grid_from_cells({4, 1, 1}, Vec3::Zero(), Vec3(4, 1, 1), {1, 2}, 0.0);
    g.density = {2.0, 4.0};
    g.sh_of(0)[0] = 1.0;
    g.sh_of(1)[0] = 3.0;
    return g;
}

TEST(SampleTrilinear, VoxelCentreReturnsVoxel) {
    const SparseVoxelGrid g = line_grid();
    const SampleValue v = sample_trilinear(g, Vec3(1.5, 0.5, 0.5));
    EXPECT_EQ(v.sigma, 2.0);
    EXPECT_EQ(v.sh[0], 1.0);
}

TEST(SampleTrilinear, MidpointIsLinear) {
    const SparseVoxelGrid g = line_grid();
    const SampleValue v = sample_trilinear(g, Vec3(2.0, 0.5, 0.5));
    EXPECT_DOUBLE_EQ(v.sigma, 3.0);
    EXPECT_DOUBLE_EQ(v.sh[0], 2.0);
}

TEST(SampleTrilinear, OutOfBoundsIsZero) {
    const SparseVoxelGrid g = line_grid();
    const SampleValue v = sample_trilinear(g, Vec3(4.5, 0.5, 0.5));
    EXPECT_EQ(v.sigma, 0.0);
    EXPECT_EQ(v.sh[0], 0.0);
}

TEST(SampleTrilinear, NegativeDensityIsClamped) {
    SparseVoxelGrid g = line_grid();
    g.density = {-5.0, 1.0};
    EXPECT_EQ(sample_trilinear(g, Vec3(1.5, 0.5, 0.5)).sigma, 0.0);
    EXPECT_EQ(sample_raw(g, Vec3(1.5, 0.5, 0.5)).sigma, -5.0);
}

// Independent oracle: weight of voxel centre c at point p is
// prod_a max(0, 1 - |p_a - c_a| / h_a), summed over all occupied voxels.
SampleValue brute_force_sample(const SparseVoxelGrid &g, const Vec3 &p) {
    SampleValue out;
    if (!g.contains(p)) return out;
    const Vec3 h = g.voxel_size();
    for (std::size_t s = 0; s < g.slot_count(); ++s) {
        const Vec3 c = g.cell_center(g.cell_of(g.slot_cell[s]));
        double w = 1.0;
        for (int a = 0; a < 3; ++a) w *= std::max(0.0, 1.0 - std::abs(p[a] - c[a]) / h[a]);
        if (w == 0.0) continue;
        out.sigma += w * g.density[s];
        for (int k = 0; k < kShCoeffs; ++k) out.sh[k] += w * g.sh_of(s)[k];
    }
    return out;
}

TEST(SampleTrilinear, MatchesCornerSumOracle) {
    std::mt19937_64 rng(5);
    const SparseVoxelGrid g = testing::random_grid(rng, {5, 4, 6}, 0.6, -2.0, 5.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const Vec3 p(u(rng), u(rng), u(rng));
        const SampleValue a = sample_raw(g, p);
        const SampleValue b = brute_force_sample(g, p);
        ASSERT_NEAR(a.sigma, b.sigma, 1e-12);
        for (int k = 0; k < kShCoeffs; ++k) ASSERT_NEAR(a.sh[k], b.sh[k], 1e-12);
    }
}

TEST(SampleTrilinear, Continuous) {
    std::mt19937_64 rng(6);
    const SparseVoxelGrid g = testing::random_grid(rng, {6, 6, 6}, 0.7, 0.0, 4.0);
    std::uniform_real_distribution<double> u(-0.95, 0.95);
    const double eps = 1e-7 * g.min_voxel_size();
    const double range = 4.0;
    for (int i = 0; i < 1000; ++i) {
        const Vec3 p(u(rng), u(rng), u(rng));
        const Vec3 q = p + eps * testing::random_unit(rng);
        EXPECT_LT(std::abs(sample_raw(g, p).sigma - sample_raw(g, q).sigma), 1e-5 * range);
    }
}

// ---------------------------------------------------------------- prune / upsample

TEST(Prune, NegativeInfinityKeepsEverything) {
    std::mt19937_64 rng(7);
    const SparseVoxelGrid g = testing::random_grid(rng, {5, 5, 5}, 0.5, -3.0, 3.0);
    const SparseVoxelGrid p = prune(g, -std::numeric_limits<double>::infinity());
    EXPECT_EQ(p.occupancy, g.occupancy);
    EXPECT_EQ(p.density, g.density);
    EXPECT_EQ(p.sh, g.sh);
}

TEST(Prune, ThresholdRemovesLowDensity) {
    SparseVoxelGrid g = make_grid_from_cells({2, 1, 1}, Vec3::Zero(), Vec3(2, 1, 1), {0, 1}, 0.0);
    g.density = {1.0, 2.0};
    g.sh_of(1)[5] = 0.25;
    const SparseVoxelGrid p = prune(g, 1.28);
    ASSERT_EQ(p.slot_count(), 1u);
    EXPECT_EQ(p.density[0], 2.0);
    EXPECT_EQ(p.sh_of(0)[5], 0.25);
    EXPECT_EQ(p.occupancy[0], kEmpty);
    EXPECT_EQ(p.occupancy[1], 0);
    EXPECT_EQ(audit_grid(p), "");
}

TEST(Prune, IdempotentAndSurvivorsBitIdentical) {
    std::mt19937_64 rng(8);
    const SparseVoxelGrid g = testing::random_grid(rng, {8, 7, 6}, 0.6, 0.0, 3.0);
    const SparseVoxelGrid once = prune(g, 1.28);
    const SparseVoxelGrid twice = prune(once, 1.28);
    EXPECT_EQ(once.occupancy, twice.occupancy);
    EXPECT_EQ(once.density, twice.density);
    EXPECT_EQ(once.sh, twice.sh);
    EXPECT_EQ(audit_grid(once), "");
    for (std::size_t s = 0; s < once.slot_count(); ++s) {
        const int32_t old = g.occupancy[once.slot_cell[s]];
        EXPECT_EQ(once.density[s], g.density[old]);
        EXPECT_TRUE(std::equal(once.sh_of(s), once.sh_of(s) + kShCoeffs, g.sh_of(old)));
        EXPECT_GE(once.density[s], 1.28);
    }
}

TEST(Upsample, ConstantRegionStaysConstant) {
    SparseVoxelGrid g = make_dense_grid({3, 3, 3}, -Vec3::Ones(), Vec3::Ones(), 2.5);
    for (std::size_t s = 0; s < g.slot_count(); ++s) g.sh_of(s)[3] = -0.5;
    const SparseVoxelGrid f = upsample(g);
    EXPECT_EQ(f.resolution, Vec3i(6, 6, 6));
    EXPECT_EQ(f.slot_count(), 8 * g.slot_count());
    EXPECT_EQ(audit_grid(f), "");
    for (std::size_t s = 0; s < f.slot_count(); ++s) {
        const Vec3i c = f.cell_of(f.slot_cell[s]);
        const bool interior = (c.array() > 0).all() && (c.array() < 5).all();
        if (!interior) continue; // boundary children blend with the empty outside
        EXPECT_NEAR(f.density[s], 2.5, 1e-14);
        EXPECT_NEAR(f.sh_of(s)[3], -0.5, 1e-14);
    }
}

TEST(Upsample, DoublesResolutionWithAtMostEightfoldVoxels) {
    std::vector<int64_t> cells = {0, 12345, 128 * 128 * 64 + 128 * 64 + 64, 128 * 128 * 128 - 1};
    const SparseVoxelGrid g = make_grid_from_cells({128, 128, 128}, -Vec3::Ones(), Vec3::Ones(), cells, 1.0);
    const SparseVoxelGrid f = upsample(g);
    EXPECT_EQ(f.resolution, Vec3i(256, 256, 256));
    EXPECT_LE(f.slot_count(), 8 * g.slot_count());
    EXPECT_EQ(f.world_min, g.world_min);
    EXPECT_EQ(f.world_max, g.world_max);
    EXPECT_EQ(audit_grid(f), "");
}

TEST(Upsample, RejectsResolutionOverflow) {
    const SparseVoxelGrid g = make_grid_from_cells({600, 1, 1}, Vec3::Zero(), Vec3::Ones(), {0}, 1.0);
    EXPECT_THROW(upsample(g), InvalidArgument);
}

/// Affine field a + b.p on a dense grid.
SparseVoxelGrid affine_grid(const Vec3i &res, const Vec3 &b, double a) {
    SparseVoxelGrid g = make_dense_grid(res, -Vec3::Ones(), Vec3::Ones(), 0.0);
    for (std::size_t s = 0; s < g.slot_count(); ++s) {
        const Vec3 c = g.cell_center(g.cell_of(g.slot_cell[s]));
        g.density[s] = a + b.dot(c);
        for (int k = 0; k < kShCoeffs; ++k) g.sh_of(s)[k] = 0.1 * k - b.dot(c);
    }
    return g;
}

TEST(Upsample, LinearRampExactAtChildCentres) {
    const SparseVoxelGrid g = affine_grid({6, 6, 6}, Vec3(1.5, 0.0, 0.0), 4.0);
    const SparseVoxelGrid f = upsample(g);
    for (std::size_t s = 0; s < f.slot_count(); ++s) {
        const Vec3i c = f.cell_of(f.slot_cell[s]);
        if ((c.array() == 0).any() || (c.array() == 11).any()) continue;
        EXPECT_NEAR(f.density[s], 4.0 + 1.5 * f.cell_center(c).x(), 1e-12);
    }
}

TEST(Upsample, PreservesAffineFieldInInterior) {
    const SparseVoxelGrid g = affine_grid({5, 6, 7}, Vec3(0.4, -1.1, 0.7), 2.0);
    const SparseVoxelGrid f = upsample(g);
    std::mt19937_64 rng(9);
    // interior: at least one coarse voxel away from the boundary
    const Vec3 lo = g.world_min + 1.0 * g.voxel_size(), hi = g.world_max - 1.0 * g.voxel_size();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const Vec3 p = lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(hi - lo);
        const SampleValue a = sample_raw(g, p), b = sample_raw(f, p);
        ASSERT_NEAR(a.sigma, b.sigma, 1e-6);
        for (int k = 0; k < kShCoeffs; ++k) ASSERT_NEAR(a.sh[k], b.sh[k], 1e-6);
    }
}

TEST(Upsample, GeneralFieldOnlyApproximatelyPreserved) {
    // A non-affine field is not exactly representable after upsampling: the
    // coarse interpolant has creases at coarse centres that the fine grid
    // cannot reproduce. The error is bounded by the field's curvature.
    std::mt19937_64 rng(10);
    const SparseVoxelGrid g = testing::random_grid(rng, {6, 6, 6}, 1.0, 0.0, 1.0);
    const SparseVoxelGrid f = upsample(g);
    std::uniform_real_distribution<double> u(-0.6, 0.6);
    double worst = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const Vec3 p(u(rng), u(rng), u(rng));
        worst = std::max(worst, std::abs(sample_raw(g, p).sigma - sample_raw(f, p).sigma));
    }
    EXPECT_LT(worst, 0.5);
}

TEST(GridAudit, StructureSurvivesEditSequences) {
    std::mt19937_64 rng(11);
    SparseVoxelGrid g = testing::random_grid(rng, {4, 5, 3}, 0.5, 0.0, 3.0);
    for (int round = 0; round < 3; ++round) {
        g = upsample(g);
        ASSERT_EQ(audit_grid(g), "");
        std::uniform_real_distribution<double> u(0.0, 3.0);
        for (auto &d : g.density) d = u(rng);
        g = prune(g, 1.28);
        ASSERT_EQ(audit_grid(g), "");
    }
}

TEST(GridAudit, DetectsCorruption) {
    SparseVoxelGrid g = make_dense_grid({2, 2, 2}, -Vec3::Ones(), Vec3::Ones(), 1.0);
    g.occupancy[3] = 0;
    EXPECT_NE(audit_grid(g), "");
}

// ---------------------------------------------------------------- background

BackgroundModel small_background() { return make_background(-Vec3::Ones(), Vec3::Ones(), 4, 8, 0.5); }

TEST(Background, RadiiIncreaseAndEncloseForeground) {
    const BackgroundModel bg = make_background(-Vec3::Ones(), Vec3::Ones());
    ASSERT_EQ(bg.radii.size(), 16u);
    EXPECT_NEAR(bg.radii.front(), 1.01 * std::sqrt(3.0), 1e-12);
    EXPECT_NEAR(bg.radii.back(), 8.0 * std::sqrt(3.0), 1e-12);
    for (std::size_t i = 1; i < bg.radii.size(); ++i) EXPECT_GT(bg.radii[i], bg.radii[i - 1]);
    EXPECT_EQ(bg.width(), 1024);
}

TEST(Background, TransparentLayersGiveBrightness) {
    const BackgroundModel bg = small_background();
    std::mt19937_64 rng(12);
    for (int i = 0; i < 20; ++i) {
        Ray r = testing::random_ray_into_box(rng);
        const Vec3 c = background_radiance(bg, r, 0.8);
        EXPECT_LT((c - Vec3::Constant(0.4)).norm(), 1e-15);
    }
}

TEST(Background, FullyOccludedGivesZero) {
    const BackgroundModel bg = small_background();
    EXPECT_EQ(background_radiance(bg, Ray{}, 0.0), Vec3::Zero());
}

TEST(Background, OpaqueRedLayerAbsorbsEverything) {
    BackgroundModel bg = small_background();
    bg.brightness = 0.9;
    for (std::size_t i = 0; i < bg.texel_count(); ++i) {
        double *t = bg.texel(i);
        if (i / (static_cast<std::size_t>(bg.height) * bg.width()) == 1) {
            t[0] = 1.0;
            t[1] = t[2] = 0.0;
            t[3] = 1e3;
        }
    }
    std::mt19937_64 rng(13);
    for (int i = 0; i < 20; ++i) {
        const Vec3 c = background_radiance(bg, testing::random_ray_into_box(rng), 0.3);
        EXPECT_LT((c - Vec3(0.3, 0.0, 0.0)).norm(), 1e-12);
    }
}

TEST(Background, RayLeavingAllSpheresSeesBrightness) {
    BackgroundModel bg = small_background();
    for (std::size_t i = 0; i < bg.texel_count(); ++i) bg.texel(i)[3] = 5.0;
    Ray r;
    r.origin = Vec3(100, 0, 0);
    r.direction = Vec3::UnitX();
    EXPECT_LT((background_radiance(bg, r, 0.7) - Vec3::Constant(0.35)).norm(), 1e-15);
}

} // namespace
} // namespace perfield
