// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "perfield/background.hpp"
#include "perfield/geometry.hpp"
#include "perfield/grid.hpp"
#include "perfield/image.hpp"
#include "perfield/renderer.hpp"
#include "perfield/sh.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <sstream>

namespace perfield {

enum class Optimizer { kSgd, kRmsProp };

struct TrainConfig {
    // Per-group learning rates.
    double lr_density = 30.0;
    double lr_sh = 1e-2;
    double lr_bg_color = 1e-1;
    double lr_bg_density = 1.0;
    Optimizer optimizer = Optimizer::kSgd;    // density and background
    Optimizer optimizer_sh = Optimizer::kSgd; // foreground SH coefficients
    double rms_decay = 0.95;
    double lr_final_fraction = 1.0; // < 1: rates decay exponentially to this fraction at the last step
    double rms_eps = 1e-8;

    // Regulariser weights.
    double lambda_tv_density = 5e-5;
    double lambda_tv_sh = 5e-3;
    double lambda_tv_bg_color = 1e-3;
    double lambda_tv_bg_density = 1e-3;
    double lambda_beta = 1e-5;
    double lambda_sparsity = 1e-10;

    // Schedule; negative step numbers disable an event.
    int fg_skip_steps = 1000;
    int total_steps = 76800;
    int upsample_at = 25600;
    int prune_at = 25600;
    double prune_threshold = 1.28;
    double tv_sample_fraction = 1.0; // < 1: TV on a random voxel subset per step

    int rays_per_batch = 5000;
    int sparsity_samples = -1; // < 0: one per ray in the batch
    uint64_t rng_seed = 0;
    int workers = 1;
    bool jitter = false; // randomise the sample anchor per ray

    RenderConfig render{};

    void validate() const {
        for (double l : {lambda_tv_density, lambda_tv_sh, lambda_tv_bg_color, lambda_tv_bg_density, lambda_beta,
                         lambda_sparsity})
            if (!(l >= 0.0)) throw InvalidArgument("regulariser weights must be non-negative");
        for (double lr : {lr_density, lr_sh, lr_bg_color, lr_bg_density})
            if (!(lr > 0.0)) throw InvalidArgument("learning rates must be positive");
        if (total_steps < 0) throw InvalidArgument("total_steps must be non-negative");
        if (prune_at > total_steps) throw InvalidArgument("prune_at must not exceed total_steps");
        if (rays_per_batch <= 0) throw InvalidArgument("rays_per_batch must be positive");
        if (!(rms_decay >= 0.0 && rms_decay < 1.0)) throw InvalidArgument("rms_decay must be in [0, 1)");
        if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0))
            throw InvalidArgument("lr_final_fraction must lie in (0, 1]");
        if (!(tv_sample_fraction > 0.0 && tv_sample_fraction <= 1.0))
            throw InvalidArgument("tv_sample_fraction must lie in (0, 1]");
        render.validate();
    }
};

// ---------------------------------------------------------------------------
// Gradient storage

/// Gradient over fixed-stride parameter units with a touched list, so that
/// clearing costs only what the previous step wrote.
class SparseGradient {
public:
    SparseGradient() = default;
    SparseGradient(std::size_t units, int stride) { reset(units, stride); }

    void reset(std::size_t units, int stride) {
        stride_ = stride;
        values_.assign(units * static_cast<std::size_t>(stride), 0.0);
        mark_.assign(units, 0);
        touched_.clear();
    }

    double *touch(std::size_t unit) {
        if (!mark_[unit]) {
            mark_[unit] = 1;
            touched_.push_back(static_cast<int32_t>(unit));
        }
        return values_.data() + unit * static_cast<std::size_t>(stride_);
    }

    void clear() {
        for (int32_t u : touched_) {
            mark_[u] = 0;
            std::fill_n(values_.data() + static_cast<std::size_t>(u) * stride_, stride_, 0.0);
        }
        touched_.clear();
    }

    /// Adds `other` unit by unit, in other's touch order.
    void accumulate(const SparseGradient &other) {
        for (int32_t u : other.touched_) {
            double *dst = touch(static_cast<std::size_t>(u));
            const double *src = other.at(static_cast<std::size_t>(u));
            for (int k = 0; k < stride_; ++k) dst[k] += src[k];
        }
    }

    const double *at(std::size_t unit) const { return values_.data() + unit * static_cast<std::size_t>(stride_); }
    /// Value of one entry; untouched entries are zero.
    double value(std::size_t unit, int k) const { return values_[unit * static_cast<std::size_t>(stride_) + k]; }
    const std::vector<int32_t> &touched() const { return touched_; }
    std::size_t units() const { return mark_.size(); }
    int stride() const { return stride_; }

private:
    int stride_ = 1;
    std::vector<double> values_;
    std::vector<uint8_t> mark_;
    std::vector<int32_t> touched_;
};

/// Gradients for one optimisation step. Grid units hold density at offset 0
/// followed by the 27 SH coefficients; background units hold one texel.
struct GradientBuffer {
    SparseGradient grid;
    SparseGradient background;
    std::size_t ray_count = 0;

    void resize(const SparseVoxelGrid &g, const BackgroundModel *bg) {
        grid.reset(g.slot_count(), kVoxelParams);
        background.reset(bg ? bg->texel_count() : 0, kBgChannels);
        ray_count = 0;
    }
    void clear() {
        grid.clear();
        background.clear();
        ray_count = 0;
    }
};

struct TrainRay {
    Ray ray;
    Vec3 target = Vec3::Zero();
};

struct LossTerms {
    double mse = 0.0;
    double tv = 0.0;
    double sparsity = 0.0;
    double beta = 0.0;
    double total() const { return mse + tv + sparsity + beta; }
};

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(std::size_t ray, const std::string &what) : std::runtime_error(what), ray_index(ray) {}
    std::size_t ray_index;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Regularisers

/// Weighted total variation of density and of each SH coefficient, summed
/// over occupied voxels: per channel, sqrt(dx^2 + dy^2 + dz^2 + eps) with
/// forward differences; axes whose neighbour is empty are dropped. All
/// channels are handled in one pass so neighbour lookups are shared.
/// Gradients are added to `grad` when given.
///
/// When `slots` is given only those voxels contribute, each weighted by
/// `scale`; with a uniform random subset and scale = N / |slots| this is an
/// unbiased estimate of the full sum.
inline double tv_loss(const SparseVoxelGrid &g, double lambda_density, double lambda_sh,
                      GradientBuffer *grad = nullptr, const std::vector<int32_t> *slots = nullptr,
                      double scale = 1.0) {
    constexpr double kEps = 1e-12;
    const bool use_d = lambda_density > 0.0, use_sh = lambda_sh > 0.0;
    if (!use_d && !use_sh) return 0.0;
    lambda_density *= scale;
    lambda_sh *= scale;
    SparseGradient *gg = grad ? &grad->grid : nullptr;
    double total_d = 0.0, total_sh = 0.0;
    const std::size_t count = slots ? slots->size() : g.slot_count();
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t s = slots ? static_cast<std::size_t>((*slots)[i]) : i;
        const Vec3i c = g.cell_of(g.slot_cell[s]);
        int32_t nb[3];
        for (int a = 0; a < 3; ++a) {
            Vec3i n = c;
            n[a] += 1;
            nb[a] = g.slot_at(n.x(), n.y(), n.z());
        }
        double *gs = nullptr;
        double *gn[3] = {nullptr, nullptr, nullptr};
        if (gg) {
            gs = gg->touch(s);
            for (int a = 0; a < 3; ++a)
                if (nb[a] != kEmpty) gn[a] = gg->touch(static_cast<std::size_t>(nb[a]));
        }
        // Channel k: 0 is density, 1..27 are SH coefficients.
        auto channel = [&](int k, const double *self, const double *const nbv[3], double weight) {
            double d[3];
            double sq = kEps;
            for (int a = 0; a < 3; ++a) {
                d[a] = nbv[a] ? nbv[a][0] - self[0] : 0.0;
                sq += d[a] * d[a];
            }
            const double r = std::sqrt(sq);
            if (gs) {
                const double inv = weight / r;
                double acc = 0.0;
                for (int a = 0; a < 3; ++a) {
                    if (!gn[a]) continue;
                    gn[a][k] += inv * d[a];
                    acc -= inv * d[a];
                }
                gs[k] += acc;
            }
            return r;
        };
        if (use_d) {
            const double *nbv[3];
            for (int a = 0; a < 3; ++a) nbv[a] = nb[a] == kEmpty ? nullptr : &g.density[nb[a]];
            total_d += channel(0, &g.density[s], nbv, lambda_density);
        }
        if (use_sh) {
            const double *self = g.sh_of(s);
            const double *base[3];
            for (int a = 0; a < 3; ++a) base[a] = nb[a] == kEmpty ? nullptr : g.sh_of(static_cast<std::size_t>(nb[a]));
            for (int k = 0; k < kShCoeffs; ++k) {
                const double *nbv[3];
                for (int a = 0; a < 3; ++a) nbv[a] = base[a] ? base[a] + k : nullptr;
                total_sh += channel(1 + k, self + k, nbv, lambda_sh);
            }
        }
    }
    return lambda_density * total_d + lambda_sh * total_sh;
}

/// TV over background texels: neighbours along longitude (wrapping),
/// latitude and layer, for colour channels and density separately.
inline double tv_loss_background(const BackgroundModel &bg, double lambda_color, double lambda_density,
                                 GradientBuffer *grad = nullptr) {
    constexpr double kEps = 1e-12;
    const int H = bg.height, W = bg.width();
    double total = 0.0;
    for (int ch = 0; ch < kBgChannels; ++ch) {
        const double weight = ch < 3 ? lambda_color : lambda_density;
        if (!(weight > 0.0)) continue;
        for (int l = 0; l < bg.n_layers; ++l)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    const std::size_t i0 = bg.texel_index(l, r, c);
                    std::size_t nb[3];
                    bool has[3] = {W > 1, r + 1 < H, l + 1 < bg.n_layers};
                    nb[0] = bg.texel_index(l, r, (c + 1) % W);
                    nb[1] = has[1] ? bg.texel_index(l, r + 1, c) : i0;
                    nb[2] = has[2] ? bg.texel_index(l + 1, r, c) : i0;
                    const double v0 = bg.texel(i0)[ch];
                    double d[3];
                    double sq = kEps;
                    for (int a = 0; a < 3; ++a) {
                        d[a] = has[a] ? bg.texel(nb[a])[ch] - v0 : 0.0;
                        sq += d[a] * d[a];
                    }
                    const double rr = std::sqrt(sq);
                    total += weight * rr;
                    if (grad) {
                        const double inv = weight / rr;
                        double self = 0.0;
                        for (int a = 0; a < 3; ++a) {
                            if (!has[a]) continue;
                            grad->background.touch(nb[a])[ch] += inv * d[a];
                            self -= inv * d[a];
                        }
                        grad->background.touch(i0)[ch] += self;
                    }
                }
    }
    return total;
}

/// Cauchy sparsity penalty lambda * sum log(1 + 2 sigma^2) over the raw
/// densities of the given slots (repeats allowed).
inline double sparsity_loss(const SparseVoxelGrid &g, std::span<const int32_t> slots, double lambda,
                            GradientBuffer *grad = nullptr) {
    double total = 0.0;
    for (int32_t s : slots) {
        const double sigma = g.density[s];
        total += std::log1p(2.0 * sigma * sigma);
        if (grad) grad->grid.touch(s)[0] += lambda * 4.0 * sigma / (1.0 + 2.0 * sigma * sigma);
    }
    return lambda * total;
}

inline constexpr double kBetaClamp = 1e-6;

/// Beta prior on final foreground transmittance:
///   lambda * mean(log T + log(1 - T)),  T clamped to [1e-6, 1 - 1e-6].
/// It is largest at T = 0.5 and decreases toward T in {0, 1}, so descent
/// pushes rays to be either fully opaque or fully clear. `dT` receives the
/// per-ray derivative (zero where the clamp is active).
inline double beta_loss(std::span<const double> T, double lambda, std::vector<double> *dT = nullptr) {
    if (T.empty()) return 0.0;
    const double n = static_cast<double>(T.size());
    double total = 0.0;
    if (dT) dT->assign(T.size(), 0.0);
    for (std::size_t i = 0; i < T.size(); ++i) {
        const double t = std::clamp(T[i], kBetaClamp, 1.0 - kBetaClamp);
        total += std::log(t) + std::log1p(-t);
        if (dT && T[i] > kBetaClamp && T[i] < 1.0 - kBetaClamp) (*dT)[i] = lambda / n * (1.0 / t - 1.0 / (1.0 - t));
    }
    return lambda * total / n;
}

// ---------------------------------------------------------------------------
// Rendering loss

namespace detail {

struct RayWorkspace {
    std::vector<MarchSample> samples;
    std::vector<BgLayerSample> layers;
};

/// Back-propagates adjoint `gB` on the background composite into texels.
inline void backprop_background(const BackgroundModel &bg, const std::vector<BgLayerSample> &layers, const Vec3 &gB,
                                SparseGradient &grad) {
    double T_end = layers.empty() ? 1.0 : layers.back().T * (1.0 - layers.back().alpha);
    Vec3 after = T_end * bg.brightness * Vec3::Ones();
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        const BgLayerSample &s = *it;
        const double T_next = s.T * (1.0 - s.alpha);
        const double d_sigma = gB.dot(T_next * s.color - after);
        const double w = s.T * s.alpha;
        double d_raw[kBgChannels] = {0, 0, 0, 0};
        for (int c = 0; c < 3; ++c) {
            const double raw = s.lookup.raw[c];
            if (raw >= 0.0 && raw <= 1.0) d_raw[c] = w * gB[c];
        }
        if (s.lookup.raw[3] > 0.0) d_raw[3] = d_sigma;
        for (int n = 0; n < 4; ++n) {
            const double wn = s.lookup.weight[n];
            if (wn == 0.0) continue;
            double *dst = grad.touch(s.lookup.texel[n]);
            for (int ch = 0; ch < kBgChannels; ++ch) dst[ch] += wn * d_raw[ch];
        }
        after += w * s.color;
    }
}

} // namespace detail

/// Forward and backward pass of the photometric loss over a batch of rays:
///   mse = sum over rays and channels of (C(r) - target)^2 / (3 * batch)
/// Returns the mean squared error and the final foreground transmittance per
/// ray; gradients are added into `grad` (which must be sized for the scene).
/// `dT_final` optionally supplies an extra adjoint on each ray's final
/// transmittance (used by the beta prior).
inline double photometric_loss_and_grad(const RenderContext &ctx, std::span<const TrainRay> batch,
                                        const RenderConfig &rcfg, GradientBuffer &grad, std::vector<double> &T_final,
                                        const std::vector<double> *dT_final = nullptr, std::size_t index_base = 0,
                                        std::size_t batch_total = 0) {
    const SparseVoxelGrid &g = ctx.grid();
    const BackgroundModel *bg = ctx.background();
    if (batch_total == 0) batch_total = batch.size();
    const double norm = 1.0 / (3.0 * static_cast<double>(batch_total));
    double sse = 0.0;
    detail::RayWorkspace ws;
    T_final.resize(batch.size());

    for (std::size_t r = 0; r < batch.size(); ++r) {
        const Ray &ray = batch[r].ray;
        ws.samples.clear();
        ws.layers.clear();
        const ShBasis basis = sh_basis(ray.direction);

        RenderResult fg;
        if (rcfg.render_foreground)
            fg = march_foreground(ctx, ray, rcfg, basis,
                                  [&](const MarchSample &s, const SampleValue &) { ws.samples.push_back(s); });
        Vec3 bcomp = Vec3::Zero();
        if (rcfg.use_background) {
            if (bg) bcomp = background_composite(*bg, ray, &ws.layers);
            else bcomp = rcfg.fallback_brightness * Vec3::Ones();
        }
        const double TN = fg.transmittance;
        const Vec3 color = fg.color + TN * bcomp;
        const Vec3 err = color - batch[r].target;
        if (!color.allFinite()) {
            std::ostringstream msg;
            msg << "non-finite render at ray " << (index_base + r);
            throw NonFiniteLoss(index_base + r, msg.str());
        }
        sse += err.squaredNorm();
        T_final[r] = TN;

        const Vec3 gC = 2.0 * norm * err;
        const double gT = dT_final ? (*dT_final)[index_base + r] : 0.0;

        // Foreground: walk samples back to front keeping the radiance behind.
        Vec3 after = TN * bcomp;
        for (auto it = ws.samples.rbegin(); it != ws.samples.rend(); ++it) {
            const MarchSample &s = *it;
            const double T_next = s.T * (1.0 - s.alpha);
            const double d_sigma = s.delta * (gC.dot(T_next * s.color - after) - gT * TN);
            const double w = s.T * s.alpha;
            double d_raw_color[3];
            for (int c = 0; c < 3; ++c) d_raw_color[c] = w * gC[c] * s.color[c] * (1.0 - s.color[c]);
            const double d_sigma_raw = s.sigma_raw > 0.0 ? d_sigma : 0.0;
            for (int n = 0; n < 8; ++n) {
                const int32_t slot = s.stencil.slot[n];
                const double wn = s.stencil.weight[n];
                if (slot == kEmpty || wn == 0.0) continue;
                double *dst = grad.grid.touch(static_cast<std::size_t>(slot));
                dst[0] += wn * d_sigma_raw;
                for (int c = 0; c < 3; ++c) {
                    const double a = wn * d_raw_color[c];
                    double *shd = dst + 1 + c * kShBasis;
                    for (int k = 0; k < kShBasis; ++k) shd[k] += a * basis[k];
                }
            }
            after += w * s.color;
        }
        if (bg && rcfg.use_background && TN > 0.0) detail::backprop_background(*bg, ws.layers, TN * gC, grad.background);
    }
    grad.ray_count += batch.size();
    return sse * norm;
}

/// Full training objective for one batch: photometric MSE, TV on grid and
/// background, sparsity on `sparsity_slots`, and the beta prior on final
/// transmittance. Gradients are accumulated into `grad`.
///
/// The beta prior depends on the final transmittances, so the batch is
/// rendered twice when lambda_beta > 0: once to obtain T, once to
/// back-propagate with the beta adjoint folded in.
inline LossTerms loss_and_grad(const SparseVoxelGrid &g, const BackgroundModel *bg, std::span<const TrainRay> batch,
                               const TrainConfig &cfg, std::span<const int32_t> sparsity_slots, GradientBuffer &grad,
                               bool update_foreground = true, const std::vector<int32_t> *tv_slots = nullptr) {
    if (batch.empty()) throw InvalidArgument("loss_and_grad needs a non-empty batch");
    if (grad.grid.units() != g.slot_count() || grad.background.units() != (bg ? bg->texel_count() : 0))
        grad.resize(g, bg);
    const RenderContext ctx(g, bg);
    RenderConfig rcfg = cfg.render;
    if (!update_foreground) rcfg.render_foreground = false;

    LossTerms out;
    std::vector<double> T_final;
    std::vector<double> dT;
    const bool with_beta = cfg.lambda_beta > 0.0 && rcfg.render_foreground;
    if (with_beta) {
        T_final.resize(batch.size());
        for (std::size_t r = 0; r < batch.size(); ++r) {
            RenderConfig fg_only = rcfg;
            fg_only.use_background = false;
            T_final[r] = render_ray(ctx, batch[r].ray, fg_only).transmittance;
        }
        out.beta = beta_loss(T_final, cfg.lambda_beta, &dT);
    }

    const int workers = std::max(1, cfg.workers);
    if (workers == 1) {
        out.mse = photometric_loss_and_grad(ctx, batch, rcfg, grad, T_final, with_beta ? &dT : nullptr);
    } else {
        std::vector<GradientBuffer> local(static_cast<std::size_t>(workers));
        std::vector<double> partial(static_cast<std::size_t>(workers), 0.0);
        std::vector<std::string> errors(static_cast<std::size_t>(workers));
        std::vector<std::size_t> error_ray(static_cast<std::size_t>(workers), 0);
        parallel_chunks(batch.size(), workers, [&](std::size_t b, std::size_t e, int w) {
            try {
                local[w].resize(g, bg);
                std::vector<double> Tw;
                partial[w] = photometric_loss_and_grad(ctx, batch.subspan(b, e - b), rcfg, local[w], Tw,
                                                       with_beta ? &dT : nullptr, b, batch.size());
            } catch (const NonFiniteLoss &ex) {
                errors[w] = ex.what();
                error_ray[w] = ex.ray_index;
            }
        });
        for (int w = 0; w < workers; ++w)
            if (!errors[w].empty()) throw NonFiniteLoss(error_ray[w], errors[w]);
        for (int w = 0; w < workers; ++w) {
            out.mse += partial[w];
            grad.grid.accumulate(local[w].grid);
            grad.background.accumulate(local[w].background);
            grad.ray_count += local[w].ray_count;
        }
    }

    if (update_foreground) {
        const double tv_scale =
            tv_slots && !tv_slots->empty() ? static_cast<double>(g.slot_count()) / tv_slots->size() : 1.0;
        out.tv += tv_loss(g, cfg.lambda_tv_density, cfg.lambda_tv_sh, &grad, tv_slots, tv_scale);
        if (cfg.lambda_sparsity > 0.0) out.sparsity = sparsity_loss(g, sparsity_slots, cfg.lambda_sparsity, &grad);
    }
    if (bg) out.tv += tv_loss_background(*bg, cfg.lambda_tv_bg_color, cfg.lambda_tv_bg_density, &grad);

    if (!std::isfinite(out.total())) throw NonFiniteLoss(0, "non-finite regulariser value");
    return out;
}

// ---------------------------------------------------------------------------
// Optimiser

/// Per-parameter optimiser state (RMSprop second moments).
struct OptimizerState {
    std::vector<double> grid_sq;
    std::vector<double> bg_sq;

    void reset(const SparseVoxelGrid &g, const BackgroundModel *bg) {
        grid_sq.assign(g.slot_count() * kVoxelParams, 0.0);
        bg_sq.assign(bg ? bg->texels.size() : 0, 0.0);
    }
};

namespace detail {

inline double step_value(double g, double lr, Optimizer opt, double decay, double eps, double &sq) {
    if (opt == Optimizer::kSgd) return lr * g;
    sq = decay * sq + (1.0 - decay) * g * g;
    return lr * g / (std::sqrt(sq) + eps);
}

} // namespace detail

/// Applies one descent step to every touched parameter.
inline void apply_gradients(SparseVoxelGrid &g, BackgroundModel *bg, const GradientBuffer &grad, const TrainConfig &cfg,
                            OptimizerState &state, bool update_foreground = true) {
    if (state.grid_sq.size() != g.slot_count() * kVoxelParams || state.bg_sq.size() != (bg ? bg->texels.size() : 0))
        state.reset(g, bg);
    if (update_foreground) {
        for (int32_t s : grad.grid.touched()) {
            const double *gs = grad.grid.at(static_cast<std::size_t>(s));
            double *sq = state.grid_sq.data() + static_cast<std::size_t>(s) * kVoxelParams;
            g.density[s] -= detail::step_value(gs[0], cfg.lr_density, cfg.optimizer, cfg.rms_decay, cfg.rms_eps, sq[0]);
            double *sh = g.sh_of(static_cast<std::size_t>(s));
            for (int k = 0; k < kShCoeffs; ++k)
                sh[k] -= detail::step_value(gs[1 + k], cfg.lr_sh, cfg.optimizer_sh, cfg.rms_decay, cfg.rms_eps, sq[1 + k]);
        }
    }
    if (bg) {
        for (int32_t t : grad.background.touched()) {
            const double *gt = grad.background.at(static_cast<std::size_t>(t));
            double *p = bg->texel(static_cast<std::size_t>(t));
            double *sq = state.bg_sq.data() + static_cast<std::size_t>(t) * kBgChannels;
            for (int ch = 0; ch < kBgChannels; ++ch) {
                const double lr = ch < 3 ? cfg.lr_bg_color : cfg.lr_bg_density;
                p[ch] -= detail::step_value(gt[ch], lr, cfg.optimizer, cfg.rms_decay, cfg.rms_eps, sq[ch]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop

struct LossLogEntry {
    int iteration = 0;
    double mse = 0.0;
    double tv = 0.0;
    double sparsity = 0.0;
    double beta = 0.0;
    double psnr_train = 0.0;
};

/// Posed training views. Images are RGB in [0, 1] and match their camera's size.
struct TrainingSet {
    std::vector<Camera> cameras;
    std::vector<Image> images;
};

struct TrainResult {
    SparseVoxelGrid grid;
    std::optional<BackgroundModel> background;
    std::vector<LossLogEntry> log;
};

/// Optional per-step observer: (iteration, loss terms).
using TrainObserver = std::function<void(int, const LossTerms &)>;

/// Least-squares slope of log[i].mse over i in [begin, end).
inline double loss_slope(const std::vector<LossLogEntry> &log, std::size_t begin, std::size_t end) {
    end = std::min(end, log.size());
    if (end <= begin + 1) return 0.0;
    const double n = static_cast<double>(end - begin);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = begin; i < end; ++i) {
        const double x = static_cast<double>(i - begin), y = log[i].mse;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Optimises `grid` (and `background`, when present) against the training
/// views. Batches are drawn in order from a pixel pool that is reshuffled
/// with the seeded generator at each epoch.
inline TrainResult train(const TrainingSet &data, SparseVoxelGrid grid, std::optional<BackgroundModel> background,
                         const TrainConfig &cfg, const TrainObserver &observer = {}) {
    cfg.validate();
    if (data.cameras.size() < 2 || data.cameras.size() != data.images.size())
        throw InvalidArgument("training needs at least two posed images");
    for (std::size_t i = 0; i < data.cameras.size(); ++i) {
        data.cameras[i].validate();
        if (data.images[i].width != data.cameras[i].width || data.images[i].height != data.cameras[i].height ||
            data.images[i].channels != 3)
            throw InvalidArgument("training image does not match its camera");
    }

    // Pixel pool: (frame, v, u) packed as frame * 2^40 + v * 2^20 + u.
    std::vector<uint64_t> pool;
    for (std::size_t f = 0; f < data.cameras.size(); ++f)
        for (int v = 0; v < data.cameras[f].height; ++v)
            for (int u = 0; u < data.cameras[f].width; ++u)
                pool.push_back((static_cast<uint64_t>(f) << 40) | (static_cast<uint64_t>(v) << 20) | u);

    std::mt19937_64 rng(cfg.rng_seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t cursor = 0;

    TrainResult result;
    BackgroundModel *bg = background ? &*background : nullptr;
    GradientBuffer grad;
    grad.resize(grid, bg);
    OptimizerState opt;
    opt.reset(grid, bg);

    std::vector<TrainRay> batch(static_cast<std::size_t>(cfg.rays_per_batch));
    std::vector<int32_t> sparse_slots, tv_slots;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double initial_loss = -1.0;
    int diverging = 0;

    for (int step = 0; step < cfg.total_steps; ++step) {
        if (step == cfg.prune_at) {
            grid = prune(grid, cfg.prune_threshold);
            log(LogLevel::kInfo, "step ", step, ": pruned to ", grid.slot_count(), " voxels");
        }
        if (step == cfg.upsample_at) {
            grid = upsample(grid);
            log(LogLevel::kInfo, "step ", step, ": upsampled to ", grid.resolution.x(), "^3, ", grid.slot_count(),
                " voxels");
        }
        if (step == cfg.prune_at || step == cfg.upsample_at) {
            grad.resize(grid, bg);
            opt.reset(grid, bg);
        }

        for (auto &tr : batch) {
            if (cursor == pool.size()) {
                std::shuffle(pool.begin(), pool.end(), rng);
                cursor = 0;
            }
            const uint64_t id = pool[cursor++];
            const std::size_t f = static_cast<std::size_t>(id >> 40);
            const int v = static_cast<int>((id >> 20) & 0xfffff), u = static_cast<int>(id & 0xfffff);
            tr.ray = pixel_to_ray(data.cameras[f], u, v);
            const Image &img = data.images[f];
            tr.target = Vec3(img.at(u, v, 0), img.at(u, v, 1), img.at(u, v, 2));
        }
        sparse_slots.clear();
        if (grid.slot_count() > 0 && cfg.lambda_sparsity > 0.0) {
            const int n = cfg.sparsity_samples < 0 ? cfg.rays_per_batch : cfg.sparsity_samples;
            std::uniform_int_distribution<int32_t> pick(0, static_cast<int32_t>(grid.slot_count()) - 1);
            for (int i = 0; i < n; ++i) sparse_slots.push_back(pick(rng));
        }

        tv_slots.clear();
        if (cfg.tv_sample_fraction < 1.0 && grid.slot_count() > 0) {
            const auto n = static_cast<std::size_t>(
                std::max(1.0, std::ceil(cfg.tv_sample_fraction * static_cast<double>(grid.slot_count()))));
            std::uniform_int_distribution<int32_t> pick(0, static_cast<int32_t>(grid.slot_count()) - 1);
            for (std::size_t i = 0; i < n; ++i) tv_slots.push_back(pick(rng));
        }

        const bool update_fg = !(bg && step < cfg.fg_skip_steps);
        TrainConfig step_cfg = cfg;
        if (cfg.jitter) step_cfg.render.sample_offset = unit(rng);
        if (cfg.lr_final_fraction < 1.0) {
            const double k = std::pow(cfg.lr_final_fraction, step / std::max(1.0, cfg.total_steps - 1.0));
            step_cfg.lr_density *= k;
            step_cfg.lr_sh *= k;
            step_cfg.lr_bg_color *= k;
            step_cfg.lr_bg_density *= k;
        }

        grad.clear();
        const LossTerms terms = loss_and_grad(grid, bg, batch, step_cfg, sparse_slots, grad, update_fg,
                                               cfg.tv_sample_fraction < 1.0 ? &tv_slots : nullptr);
        apply_gradients(grid, bg, grad, step_cfg, opt, update_fg);

        LossLogEntry e;
        e.iteration = step;
        e.mse = terms.mse;
        e.tv = terms.tv;
        e.sparsity = terms.sparsity;
        e.beta = terms.beta;
        e.psnr_train = terms.mse > 0.0 ? -10.0 * std::log10(terms.mse) : std::numeric_limits<double>::infinity();
        result.log.push_back(e);
        if (observer) observer(step, terms);

        // Divergence is judged on the data term: the regularisers start near
        // zero on a uniform grid and legitimately grow as structure appears.
        const double loss = terms.mse;
        if (initial_loss < 0.0) initial_loss = std::abs(loss);
        diverging = loss > 10.0 * initial_loss ? diverging + 1 : 0;
        if (diverging >= 500) {
            std::ostringstream msg;
            msg << "training diverged at step " << step << ": loss " << loss << " vs initial " << initial_loss;
            throw TrainingDiverged(msg.str());
        }
        if (step % 500 == 0) log(LogLevel::kInfo, "step ", step, " mse ", terms.mse, " psnr ", e.psnr_train);
    }
    // Events scheduled exactly at the end still apply to the returned grid.
    if (cfg.total_steps == cfg.prune_at) grid = prune(grid, cfg.prune_threshold);
    if (cfg.total_steps == cfg.upsample_at) grid = upsample(grid);
    result.grid = std::move(grid);
    result.background = std::move(background);
    return result;
}

/// CSV: iteration,mse,tv,sparsity,beta,psnr_train
inline std::string loss_log_csv(const std::vector<LossLogEntry> &log) {
    std::ostringstream out;
    out.precision(10);
    out << "iteration,mse,tv,sparsity,beta,psnr_train\n";
    for (const auto &e : log)
        out << e.iteration << ',' << e.mse << ',' << e.tv << ',' << e.sparsity << ',' << e.beta << ',' << e.psnr_train
            << '\n';
    return out.str();
}

} // namespace perfield
