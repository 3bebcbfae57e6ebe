#pragma once
// Loss terms and their aggregation. Conventions, pinned here and by tests:
//  - pixel loss: sqrt( sum mask(h,w) * (x-y)^2 / (C*H*W) ), a mask-weighted
//    RMS; the center/outer lambda split is baked into the mask values.
//  - perceptual loss: sum over pyramid levels of sqrt( sum diff^2 / numel );
//    region weighting enters by pre-masking the images (center-masked and
//    outer-masked evaluations with their own lambdas).
//  - aging loss: ((target - A(y)) / 100)^2, ages normalized to [0,1].
//  - identity loss: w(delta) * 0.5*||R(x)-R(y)||^2, which equals
//    w(delta)*(1 - <R(x),R(y)>) for unit embeddings but is exactly zero for
//    identical inputs.
//  - latent regularization: mean squared distance of the final code to the
//    average latent, over all L*D coordinates.

#include <cmath>
#include <stdexcept>

#include "sam/config.hpp"
#include "sam/encoder.hpp"
#include "sam/generator.hpp"
#include "sam/image.hpp"
#include "sam/oracles.hpp"

namespace sam {

inline double delta_age(double source_age, double target_age) {
    return std::abs(source_age - target_age) / 100.0;
}

/// 0.25*cos(pi*delta) + 0.75: weight 1 at no age change, floor 0.5.
inline double age_weight(double delta) {
    if (delta < 0.0 || delta > 1.0)
        throw std::invalid_argument("age_weight: delta outside [0,1]");
    return 0.25 * std::cos(kPi * delta) + 0.75;
}

// ---------------------------------------------------------------------------
// individual terms
// ---------------------------------------------------------------------------

inline Var pixel_loss_t(Tape& t, Var x, Var y, const RegionMask& mask) {
    const Tensor& xv = t.val(x);
    if (!xv.same_shape(t.val(y))) throw std::invalid_argument("pixel_loss: shape mismatch");
    if (mask.weights.size() != xv.dim(1) * xv.dim(2))
        throw std::invalid_argument("pixel_loss: mask resolution mismatch");
    const double numel = static_cast<double>(xv.size());
    Var diff = ad::sub(t, x, y);
    Var wss = ad::weighted_sq_sum(t, diff, mask.weights);
    return ad::sqrt_shift(t, ad::scale(t, wss, 1.0 / numel), 0.0);
}

inline double pixel_loss(const Tensor& x, const Tensor& y, const RegionMask& mask) {
    Tape t;
    return t.val(pixel_loss_t(t, t.constant(x), t.constant(y), mask)).item();
}

inline Var perceptual_loss_t(Tape& t, const PerceptualExtractor& f, Var x, Var y) {
    if (!t.val(x).same_shape(t.val(y)))
        throw std::invalid_argument("perceptual_loss: shape mismatch");
    auto fx = perceptual_features_t(t, f, x);
    auto fy = perceptual_features_t(t, f, y);
    Var total = t.constant(0.0);
    for (std::size_t l = 0; l < fx.size(); ++l) {
        Var diff = ad::sub(t, fx[l], fy[l]);
        const double n = static_cast<double>(t.val(diff).size());
        Var level = ad::sqrt_shift(t, ad::scale(t, ad::sq_sum(t, diff), 1.0 / n), 0.0);
        total = ad::add(t, total, level);
    }
    return total;
}

inline double perceptual_loss(const Tensor& x, const Tensor& y, const PerceptualExtractor& f) {
    Tape t;
    return t.val(perceptual_loss_t(t, f, t.constant(x), t.constant(y))).item();
}

/// 0.5*||ex - ey||^2; equals 1 - cosine for unit-norm embeddings.
inline Var embedding_gap_t(Tape& t, Var ex, Var ey) {
    return ad::scale(t, ad::sq_sum(t, ad::sub(t, ex, ey)), 0.5);
}

inline double identity_loss(const Tensor& x, const Tensor& y, double source_age,
                            double target_age, const IdentityEmbedder& r) {
    Tape t;
    Var ex = identity_embedding_t(t, r, t.constant(x));
    Var ey = identity_embedding_t(t, r, t.constant(y));
    const double w = age_weight(delta_age(source_age, target_age));
    return w * t.val(embedding_gap_t(t, ex, ey)).item();
}

inline Var aging_loss_t(Tape& t, Var predicted_age, double target_age) {
    Var err = ad::scale(t, ad::offset(t, predicted_age, -target_age), 1.0 / 100.0);
    return ad::mul(t, err, err);
}

inline double aging_loss(const Tensor& y, double target_age, const AgePredictor& a) {
    Tape t;
    return t.val(aging_loss_t(t, predict_age_t(t, a, t.constant(y)), target_age)).item();
}

inline Var latent_regularization_t(Tape& t, Var code, const LatentCode& wbar) {
    if (!t.val(code).same_shape(wbar))
        throw std::invalid_argument("latent_regularization: shape mismatch");
    Var diff = ad::sub(t, code, t.constant(wbar));
    return ad::scale(t, ad::sq_sum(t, diff), 1.0 / static_cast<double>(wbar.size()));
}

inline double latent_regularization(const LatentCode& code, const LatentCode& wbar) {
    Tape t;
    return t.val(latent_regularization_t(t, t.constant(code), wbar)).item();
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

/// Weighted contributions of one pass (forward or cycle); total is their sum
/// in the fixed order l2, lpips, reg, id, age.
struct PassBreakdown {
    double l2 = 0, lpips = 0, reg = 0, id = 0, age = 0;
    double total = 0;
    double delta_age = 0;
    double id_weight = 1;
    bool finite() const {
        return std::isfinite(l2) && std::isfinite(lpips) && std::isfinite(reg) &&
               std::isfinite(id) && std::isfinite(age) && std::isfinite(total);
    }
};

struct LossBreakdown {
    double l2 = 0, lpips = 0, reg = 0, id = 0, age = 0;  // forward-pass terms
    double cycle_total = 0;
    double forward_total = 0;
    double grand_total = 0;  // == forward_total + lambda_cycle * cycle_total, exactly
    double delta_age = 0;
    double id_weight = 1;
};

struct LossContext {
    LossWeights weights;
    std::size_t loss_resolution = 32;
    RegionMask l2_mask;        // lambda_l2 values baked into the weights
    Tensor center_mask;        // indicator planes for the perceptual split
    Tensor outer_mask;
    const PerceptualExtractor* perceptual = nullptr;
    const IdentityEmbedder* embedder = nullptr;
    const AgePredictor* age_predictor = nullptr;
    LatentCode wbar;
};

inline LossContext make_loss_context(const RunConfig& cfg, const PerceptualExtractor& f,
                                     const IdentityEmbedder& r, const AgePredictor& a,
                                     const LatentCode& wbar) {
    if (cfg.loss_downscale == 0 || cfg.resolution % cfg.loss_downscale != 0)
        throw std::invalid_argument("loss_downscale must divide the resolution");
    LossContext ctx;
    ctx.weights = cfg.weights;
    ctx.loss_resolution = cfg.resolution / cfg.loss_downscale;
    // Built from the indicator planes instead of make_region_mask so that
    // ablations may zero the lambdas.
    RegionMask regions = make_region_mask(ctx.loss_resolution, cfg.center_fraction, 1.0, 0.5);
    ctx.center_mask = center_indicator(regions);
    ctx.outer_mask = outer_indicator(regions);
    ctx.l2_mask = regions;
    for (std::size_t i = 0; i < ctx.l2_mask.weights.size(); ++i)
        ctx.l2_mask.weights.v[i] = cfg.weights.l2_center * ctx.center_mask.v[i] +
                                   cfg.weights.l2_outer * ctx.outer_mask.v[i];
    ctx.l2_mask.center_w = cfg.weights.l2_center;
    ctx.l2_mask.outer_w = cfg.weights.l2_outer;
    ctx.perceptual = &f;
    ctx.embedder = &r;
    ctx.age_predictor = &a;
    ctx.wbar = wbar;
    return ctx;
}

struct PassVars {
    Var total;
    PassBreakdown values;
};

/// All forward-pass terms for one (x, y, code) triple. `target_age` is the
/// conditioning age of this pass; for the cycle pass both the comparison
/// target and the aging-loss target are the estimated source age.
inline PassVars objective_t(Tape& t, const LossContext& ctx, Var x, Var y, Var code,
                            double source_age, double target_age) {
    const LossWeights& w = ctx.weights;
    Var x_l = ad::resize_bilinear(t, x, ctx.loss_resolution, ctx.loss_resolution);
    Var y_l = ad::resize_bilinear(t, y, ctx.loss_resolution, ctx.loss_resolution);

    Var l2 = pixel_loss_t(t, x_l, y_l, ctx.l2_mask);

    Var lp_center = perceptual_loss_t(t, *ctx.perceptual, ad::mul_chan(t, x_l, ctx.center_mask),
                                      ad::mul_chan(t, y_l, ctx.center_mask));
    Var lp_outer = perceptual_loss_t(t, *ctx.perceptual, ad::mul_chan(t, x_l, ctx.outer_mask),
                                     ad::mul_chan(t, y_l, ctx.outer_mask));
    Var lpips = ad::add(t, ad::scale(t, lp_center, w.lpips_center),
                        ad::scale(t, lp_outer, w.lpips_outer));

    Var reg = ad::scale(t, latent_regularization_t(t, code, ctx.wbar), w.reg);

    const double delta = delta_age(source_age, target_age);
    const double idw = age_weight(delta);
    Var ex = identity_embedding_t(t, *ctx.embedder, x_l);
    Var ey = identity_embedding_t(t, *ctx.embedder, y_l);
    Var id = ad::scale(t, embedding_gap_t(t, ex, ey), w.id * idw);

    Var pred = predict_age_t(t, *ctx.age_predictor, y_l);
    Var age = ad::scale(t, aging_loss_t(t, pred, target_age), w.age);

    Var total = ad::add(t, ad::add(t, ad::add(t, ad::add(t, l2, lpips), reg), id), age);

    PassVars out;
    out.total = total;
    out.values.l2 = t.val(l2).item();
    out.values.lpips = t.val(lpips).item();
    out.values.reg = t.val(reg).item();
    out.values.id = t.val(id).item();
    out.values.age = t.val(age).item();
    out.values.total = t.val(total).item();
    out.values.delta_age = delta;
    out.values.id_weight = idw;
    return out;
}

/// Plain-value forward objective over a complete sample.
inline PassBreakdown forward_objective(const LossContext& ctx, const Tensor& x,
                                       const LatentCode& code, const Tensor& y,
                                       double source_age, double target_age) {
    Tape t;
    return objective_t(t, ctx, t.constant(x), t.constant(y), t.constant(code), source_age,
                       target_age)
        .values;
}

/// Combine the two passes; grand_total is forward + lambda_cycle * cycle by
/// construction.
inline LossBreakdown total_objective(const PassBreakdown& fwd, const PassBreakdown& cyc,
                                     const LossWeights& w) {
    LossBreakdown out;
    out.l2 = fwd.l2;
    out.lpips = fwd.lpips;
    out.reg = fwd.reg;
    out.id = fwd.id;
    out.age = fwd.age;
    out.forward_total = fwd.total;
    out.cycle_total = cyc.total;
    out.grand_total = fwd.total + w.cycle * cyc.total;
    out.delta_age = fwd.delta_age;
    out.id_weight = fwd.id_weight;
    return out;
}

}  // namespace sam
