#pragma once
// The three fixed networks the losses lean on: an age regressor A, an
// identity embedder R, and a perceptual feature pyramid F. All are
// desk-scale stand-ins trained (or seeded) in-repo and then frozen: A is a
// small conv regressor fit to the renderer's exact age labels, R is a
// contrastive embedder whose "identity" is the scene's hue/position/radius
// with ring frequency as the nuisance, and F is a fixed random-weight
// pyramid. Every stand-in serializes to the checkpoint container.

#include <cmath>
#include <string>
#include <vector>

#include "sam/checkpoint.hpp"
#include "sam/config.hpp"
#include "sam/generator.hpp"
#include "sam/nn.hpp"
#include "sam/optimizer.hpp"

namespace sam {

// ---------------------------------------------------------------------------
// age predictor
// ---------------------------------------------------------------------------

struct AgePredictor {
    std::size_t input_resolution = 32;  // inputs are resized here first
    std::size_t width = 12;
    std::vector<ConvLayer> convs;  // strides 2,2,2,2
    Tensor head_w, head_b;         // [1, 2*width]

    std::vector<Param> params() {
        std::vector<Param> out;
        for (std::size_t i = 0; i < convs.size(); ++i)
            register_conv(out, "conv" + std::to_string(i), convs[i]);
        out.push_back({"head.w", &head_w});
        out.push_back({"head.b", &head_b});
        return out;
    }
    std::uint64_t checksum_all() {
        return params_checksum(params());
    }
};

inline AgePredictor make_age_predictor(std::size_t resolution, std::size_t width,
                                       std::uint64_t seed) {
    AgePredictor a;
    a.input_resolution = resolution;
    a.width = width;
    Rng rng(derive_seed(seed, "age_predictor"));
    a.convs.push_back(make_conv(3, width, 2, rng));
    a.convs.push_back(make_conv(width, 2 * width, 2, rng));
    a.convs.push_back(make_conv(2 * width, 2 * width, 2, rng));
    a.convs.push_back(make_conv(2 * width, 2 * width, 2, rng));
    a.head_w = Tensor::randn({1, 2 * width}, rng, 1.0 / std::sqrt(2.0 * width));
    a.head_b = Tensor::zeros({1});
    return a;
}

/// A(img): scalar years in (kAgeMin, kAgeMax), differentiable in the image.
inline Var predict_age_t(Tape& t, const AgePredictor& a, Var img,
                         const std::vector<Var>* bound = nullptr) {
    BindCursor bind(bound);
    Var x = ad::resize_bilinear(t, img, a.input_resolution, a.input_resolution);
    for (const ConvLayer& c : a.convs) x = ad::tanh_t(t, conv_fwd(t, x, c, bind));
    Var pooled = ad::channel_mean(t, x);
    Var s = affine_fwd(t, pooled, a.head_w, a.head_b, bind);
    bind.finish();
    return ad::offset(t, ad::scale(t, ad::sigmoid_t(t, s), kAgeMax - kAgeMin), kAgeMin);
}

inline double predict_age(const AgePredictor& a, const Tensor& img) {
    Tape t;
    return t.val(predict_age_t(t, a, t.constant(img))).item();
}

// ---------------------------------------------------------------------------
// identity embedder
// ---------------------------------------------------------------------------

struct IdentityEmbedder {
    double crop_fraction = 0.7;
    std::size_t embed_resolution = 16;
    std::size_t embed_dim = 16;
    std::vector<ConvLayer> convs;  // strides 2,2,2
    Tensor fc_w, fc_b;

    std::vector<Param> params() {
        std::vector<Param> out;
        for (std::size_t i = 0; i < convs.size(); ++i)
            register_conv(out, "conv" + std::to_string(i), convs[i]);
        out.push_back({"fc.w", &fc_w});
        out.push_back({"fc.b", &fc_b});
        return out;
    }
    std::uint64_t checksum_all() { return params_checksum(params()); }
};

inline IdentityEmbedder make_identity_embedder(double crop_fraction, std::size_t embed_resolution,
                                               std::size_t embed_dim, std::uint64_t seed) {
    if (embed_resolution % 8 != 0)
        throw std::invalid_argument("identity embedder: embed_resolution must be divisible by 8");
    IdentityEmbedder r;
    r.crop_fraction = crop_fraction;
    r.embed_resolution = embed_resolution;
    r.embed_dim = embed_dim;
    Rng rng(derive_seed(seed, "identity_embedder"));
    r.convs.push_back(make_conv(3, 12, 2, rng));
    r.convs.push_back(make_conv(12, 20, 2, rng));
    r.convs.push_back(make_conv(20, 28, 2, rng));
    const std::size_t flat = 28 * (embed_resolution / 8) * (embed_resolution / 8);
    r.fc_w = Tensor::randn({embed_dim, flat}, rng, 1.0 / std::sqrt(static_cast<double>(flat)));
    r.fc_b = Tensor::zeros({embed_dim});
    return r;
}

/// R(img): unit-norm embedding. Center crop by crop_fraction, resize, embed.
inline Var identity_embedding_t(Tape& t, const IdentityEmbedder& r, Var img,
                                const std::vector<Var>* bound = nullptr) {
    BindCursor bind(bound);
    const Tensor& iv = t.val(img);
    const std::size_t H = iv.dim(1);
    const auto side = static_cast<std::size_t>(
        std::max<long>(1, std::lround(r.crop_fraction * static_cast<double>(H))));
    const std::size_t off = (H - side) / 2;
    Var x = ad::crop2d(t, img, off, off, side, side);
    x = ad::resize_bilinear(t, x, r.embed_resolution, r.embed_resolution);
    for (const ConvLayer& c : r.convs) x = ad::tanh_t(t, conv_fwd(t, x, c, bind));
    Var flat = ad::reshape(t, x, {t.val(x).size()});
    Var e = affine_fwd(t, flat, r.fc_w, r.fc_b, bind);
    bind.finish();
    Var norm = ad::sqrt_shift(t, ad::sq_sum(t, e), 1e-24);
    return ad::mul_b(t, e, ad::recip(t, norm));
}

inline Tensor identity_embedding(const IdentityEmbedder& r, const Tensor& img) {
    Tape t;
    return t.val(identity_embedding_t(t, r, t.constant(img)));
}

// ---------------------------------------------------------------------------
// perceptual extractor: fixed random conv pyramid. For input resolution R
// the levels are [8,R/2,R/2], [12,R/4,R/4], [16,R/8,R/8].
// ---------------------------------------------------------------------------

struct PerceptualExtractor {
    std::vector<ConvLayer> convs;  // strides 2,2,2

    std::vector<Param> params() {
        std::vector<Param> out;
        for (std::size_t i = 0; i < convs.size(); ++i)
            register_conv(out, "conv" + std::to_string(i), convs[i]);
        return out;
    }
    std::uint64_t checksum_all() { return params_checksum(params()); }
};

inline PerceptualExtractor make_perceptual(std::uint64_t seed) {
    PerceptualExtractor f;
    Rng rng(derive_seed(seed, "perceptual"));
    f.convs.push_back(make_conv(3, 8, 2, rng));
    f.convs.push_back(make_conv(8, 12, 2, rng));
    f.convs.push_back(make_conv(12, 16, 2, rng));
    return f;
}

inline std::vector<Var> perceptual_features_t(Tape& t, const PerceptualExtractor& f, Var img) {
    std::vector<Var> levels;
    BindCursor frozen;
    Var x = img;
    for (const ConvLayer& c : f.convs) {
        x = ad::tanh_t(t, conv_fwd(t, x, c, frozen));
        levels.push_back(x);
    }
    return levels;
}

inline std::vector<Tensor> perceptual_features(const PerceptualExtractor& f, const Tensor& img) {
    Tape t;
    std::vector<Tensor> out;
    for (Var v : perceptual_features_t(t, f, t.constant(img))) out.push_back(t.val(v));
    return out;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace detail {
inline void arrays_to_checkpoint(Checkpoint& ck, std::vector<Param> params) {
    for (const Param& p : params) ck.arrays[p.name] = *p.tensor;
}
inline void arrays_from_checkpoint(const Checkpoint& ck, std::vector<Param> params) {
    for (const Param& p : params) {
        const Tensor& t = ck.array(p.name);
        if (t.shape != p.tensor->shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        *p.tensor = t;
    }
}
}  // namespace detail

inline Checkpoint to_checkpoint(AgePredictor& a) {
    Checkpoint ck;
    ck.meta["kind"] = "age_predictor";
    ck.meta["resolution"] = std::to_string(a.input_resolution);
    ck.meta["width"] = std::to_string(a.width);
    detail::arrays_to_checkpoint(ck, a.params());
    return ck;
}

inline AgePredictor age_predictor_from_checkpoint(const Checkpoint& ck) {
    if (ck.meta_at("kind") != "age_predictor")
        throw std::runtime_error("checkpoint: not an age predictor");
    AgePredictor a = make_age_predictor(std::stoull(ck.meta_at("resolution")),
                                        std::stoull(ck.meta_at("width")), 0);
    detail::arrays_from_checkpoint(ck, a.params());
    return a;
}

inline Checkpoint to_checkpoint(IdentityEmbedder& r) {
    Checkpoint ck;
    ck.meta["kind"] = "identity_embedder";
    ck.meta["crop_fraction"] = detail::format_double(r.crop_fraction);
    ck.meta["embed_resolution"] = std::to_string(r.embed_resolution);
    ck.meta["embed_dim"] = std::to_string(r.embed_dim);
    detail::arrays_to_checkpoint(ck, r.params());
    return ck;
}

inline IdentityEmbedder identity_embedder_from_checkpoint(const Checkpoint& ck) {
    if (ck.meta_at("kind") != "identity_embedder")
        throw std::runtime_error("checkpoint: not an identity embedder");
    IdentityEmbedder r = make_identity_embedder(
        std::stod(ck.meta_at("crop_fraction")), std::stoull(ck.meta_at("embed_resolution")),
        std::stoull(ck.meta_at("embed_dim")), 0);
    detail::arrays_from_checkpoint(ck, r.params());
    return r;
}

inline Checkpoint to_checkpoint(PerceptualExtractor& f) {
    Checkpoint ck;
    ck.meta["kind"] = "perceptual";
    detail::arrays_to_checkpoint(ck, f.params());
    return ck;
}

inline PerceptualExtractor perceptual_from_checkpoint(const Checkpoint& ck) {
    if (ck.meta_at("kind") != "perceptual")
        throw std::runtime_error("checkpoint: not a perceptual extractor");
    PerceptualExtractor f = make_perceptual(0);
    detail::arrays_from_checkpoint(ck, f.params());
    return f;
}

// ---------------------------------------------------------------------------
// pretraining
// ---------------------------------------------------------------------------

struct PredictorReport {
    double holdout_mae = 0.0;
};

/// Fits the regressor on rendered scenes with exact age labels, then
/// freezes it. Reports held-out MAE in years.
inline AgePredictor pretrain_age_predictor(std::size_t resolution, std::size_t width,
                                           std::uint64_t seed, std::size_t steps,
                                           std::size_t batch, double lr,
                                           PredictorReport* report = nullptr) {
    AgePredictor a = make_age_predictor(resolution, width, seed);
    auto params = a.params();
    OptimizerConfig ocfg;
    ocfg.lr = lr;
    Optimizer opt(ocfg, params);
    Rng data_rng(derive_seed(seed, "age_predictor.data"));

    for (std::size_t s = 0; s < steps; ++s) {
        Tape t;
        auto bound = bind_trainable(t, params);
        Var loss = t.constant(0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            ToySceneParams p = sample_scene_params(data_rng);
            Var img = t.constant(render_scene(p, resolution));
            Var pred = predict_age_t(t, a, img, &bound);
            Var err = ad::scale(t, ad::offset(t, pred, -toy_true_age(p)), 1.0 / 100.0);
            loss = ad::add(t, loss, ad::mul(t, err, err));
        }
        loss = ad::scale(t, loss, 1.0 / static_cast<double>(batch));
        t.backward(loss);
        std::vector<Tensor> grads;
        for (Var v : bound) grads.push_back(t.grad(v));
        opt.step(params, grads);
    }

    if (report) {
        Rng hold_rng(derive_seed(seed, "age_predictor.holdout"));
        double mae = 0.0;
        const int n = 64;
        for (int i = 0; i < n; ++i) {
            ToySceneParams p = sample_scene_params(hold_rng);
            mae += std::abs(predict_age(a, render_scene(p, resolution)) - toy_true_age(p));
        }
        report->holdout_mae = mae / n;
    }
    return a;
}

struct EmbedderReport {
    double positive_cosine = 0.0;  // same identity, different age
    double negative_cosine = 0.0;  // independent identity
};

inline ToySceneParams same_identity_other_age(const ToySceneParams& p, Rng& rng) {
    ToySceneParams q = p;
    q.ring_frequency = frequency_for_age(rng.uniform(kAgeMin, kAgeMax));
    return q;
}

/// Cosine statistics over n positive and n negative pairs; used both to
/// freeze thresholds at construction time and by the evaluation suite.
inline EmbedderReport measure_embedder(const IdentityEmbedder& r, std::size_t resolution,
                                       std::size_t n_pairs, std::uint64_t seed) {
    EmbedderReport rep;
    Rng rng(seed);
    for (std::size_t i = 0; i < n_pairs; ++i) {
        ToySceneParams anchor = sample_scene_params(rng);
        ToySceneParams pos = same_identity_other_age(anchor, rng);
        ToySceneParams neg = sample_scene_params(rng);
        Tensor ea = identity_embedding(r, render_scene(anchor, resolution));
        Tensor ep = identity_embedding(r, render_scene(pos, resolution));
        Tensor en = identity_embedding(r, render_scene(neg, resolution));
        double cp = 0.0, cn = 0.0;
        for (std::size_t d = 0; d < ea.size(); ++d) {
            cp += ea.v[d] * ep.v[d];
            cn += ea.v[d] * en.v[d];
        }
        rep.positive_cosine += cp;
        rep.negative_cosine += cn;
    }
    rep.positive_cosine /= static_cast<double>(n_pairs);
    rep.negative_cosine /= static_cast<double>(n_pairs);
    return rep;
}

/// Contrastive pretraining: pull same-identity pairs together, push
/// independent identities below a margin. Age (ring frequency) is the
/// nuisance variable the embedding learns to ignore.
inline IdentityEmbedder pretrain_identity_embedder(std::size_t resolution, double crop_fraction,
                                                   std::size_t embed_resolution,
                                                   std::size_t embed_dim, std::uint64_t seed,
                                                   std::size_t steps, std::size_t batch, double lr,
                                                   EmbedderReport* report = nullptr) {
    IdentityEmbedder r = make_identity_embedder(crop_fraction, embed_resolution, embed_dim, seed);
    auto params = r.params();
    OptimizerConfig ocfg;
    ocfg.lr = lr;
    Optimizer opt(ocfg, params);
    Rng data_rng(derive_seed(seed, "embedder.data"));
    const double margin = 0.1;

    for (std::size_t s = 0; s < steps; ++s) {
        Tape t;
        auto bound = bind_trainable(t, params);
        Var loss = t.constant(0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            ToySceneParams anchor = sample_scene_params(data_rng);
            ToySceneParams pos = same_identity_other_age(anchor, data_rng);
            ToySceneParams neg = sample_scene_params(data_rng);
            Var ea = identity_embedding_t(t, r, t.constant(render_scene(anchor, resolution)), &bound);
            Var ep = identity_embedding_t(t, r, t.constant(render_scene(pos, resolution)), &bound);
            Var en = identity_embedding_t(t, r, t.constant(render_scene(neg, resolution)), &bound);
            Var pull = ad::offset(t, ad::scale(t, ad::dot(t, ea, ep), -1.0), 1.0);
            Var push = ad::relu_t(t, ad::offset(t, ad::dot(t, ea, en), -margin));
            loss = ad::add(t, loss, ad::add(t, pull, ad::mul(t, push, push)));
        }
        loss = ad::scale(t, loss, 1.0 / static_cast<double>(batch));
        t.backward(loss);
        std::vector<Tensor> grads;
        for (Var v : bound) grads.push_back(t.grad(v));
        opt.step(params, grads);
    }

    if (report) *report = measure_embedder(r, resolution, 200, derive_seed(seed, "embedder.meter"));
    return r;
}

}  // namespace sam
