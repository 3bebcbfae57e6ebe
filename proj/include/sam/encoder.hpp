#pragma once
// The aging encoder, the frozen inversion encoder, and their composition
// with the frozen generator. Both encoders share one architecture: a small
// conv pyramid exposing features at three spatial scales, and one
// map2style head per style row. Each head is a chain of stride-2 3x3
// convolutions only, reducing its feature map to a single D-vector (the
// final projection is linear, so zeroing it forces an exactly-zero style).
//
// Row groups follow the generator convention: coarse rows read the deepest
// feature map, fine rows the shallowest.

#include <string>
#include <vector>

#include "sam/generator.hpp"
#include "sam/nn.hpp"
#include "sam/oracles.hpp"

namespace sam {

inline constexpr double kAgePlaneScale = 100.0;  // plane value = years / 100

struct StyleHead {
    std::vector<ConvLayer> convs;  // all stride 2; last one linear to D channels
    std::size_t source_scale = 0;  // 0 coarse (deepest), 1 middle, 2 fine
};

struct EncoderHandle {
    std::size_t in_channels = 4;
    std::size_t latent_rows = 8;
    std::size_t style_dim = 64;
    std::size_t resolution = 32;
    std::vector<ConvLayer> backbone;  // strides 1,2,2,2
    std::vector<StyleHead> heads;     // one per style row, row order

    std::vector<Param> params() {
        std::vector<Param> out;
        for (std::size_t i = 0; i < backbone.size(); ++i)
            register_conv(out, "backbone." + std::to_string(i), backbone[i]);
        for (std::size_t h = 0; h < heads.size(); ++h)
            for (std::size_t c = 0; c < heads[h].convs.size(); ++c)
                register_conv(out, "head." + std::to_string(h) + "." + std::to_string(c),
                              heads[h].convs[c]);
        return out;
    }
    std::uint64_t checksum_all() { return params_checksum(params()); }
};

namespace detail {

inline bool power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t log2_of(std::size_t n) {
    std::size_t k = 0;
    while ((std::size_t{1} << k) < n) ++k;
    return k;
}

}  // namespace detail

/// `head_final_scale` scales the init of each head's final projection; the
/// aging encoder starts near zero so the residual formulation begins at
/// plain inversion.
inline EncoderHandle make_encoder(std::size_t in_channels, std::size_t latent_rows,
                                  std::size_t style_dim, std::size_t resolution,
                                  std::uint64_t seed, double head_final_scale = 1.0) {
    if (!detail::power_of_two(resolution) || resolution < 16)
        throw std::invalid_argument("encoder: resolution must be a power of two >= 16");
    EncoderHandle e;
    e.in_channels = in_channels;
    e.latent_rows = latent_rows;
    e.style_dim = style_dim;
    e.resolution = resolution;
    Rng rng(derive_seed(seed, "encoder"));

    const std::size_t ch[4] = {12, 16, 24, 32};
    e.backbone.push_back(make_conv(in_channels, ch[0], 1, rng));
    e.backbone.push_back(make_conv(ch[0], ch[1], 2, rng));  // fine scale, res/2
    e.backbone.push_back(make_conv(ch[1], ch[2], 2, rng));  // middle scale, res/4
    e.backbone.push_back(make_conv(ch[2], ch[3], 2, rng));  // coarse scale, res/8

    const auto split = row_split(latent_rows);
    const std::size_t hid = std::min<std::size_t>(48, std::max<std::size_t>(16, style_dim / 2));
    const std::size_t scale_spatial[3] = {resolution / 8, resolution / 4, resolution / 2};
    const std::size_t scale_channels[3] = {ch[3], ch[2], ch[1]};

    for (std::size_t group = 0; group < 3; ++group) {
        for (std::size_t k = 0; k < split[group]; ++k) {
            StyleHead head;
            head.source_scale = group;
            const std::size_t n = detail::log2_of(scale_spatial[group]);
            std::size_t in = scale_channels[group];
            for (std::size_t c = 0; c < n; ++c) {
                const bool last = (c + 1 == n);
                const std::size_t out = last ? style_dim : hid;
                head.convs.push_back(make_conv(in, out, 2, rng, last ? head_final_scale : 1.0));
                in = out;
            }
            e.heads.push_back(std::move(head));
        }
    }
    return e;
}

/// E(img) -> [L,D]. Pass `bound` (from bind_trainable over params()) to run
/// with gradient-carrying weights; otherwise weights are frozen constants.
inline Var encode_t(Tape& t, const EncoderHandle& e, Var img,
                    const std::vector<Var>* bound = nullptr) {
    const Tensor& iv = t.val(img);
    if (iv.ndim() != 3 || iv.dim(0) != e.in_channels)
        throw std::invalid_argument("encode: channel count mismatch");
    if (iv.dim(1) != e.resolution || iv.dim(2) != e.resolution)
        throw std::invalid_argument("encode: resolution mismatch");
    BindCursor bind(bound);

    Var x = ad::tanh_t(t, conv_fwd(t, img, e.backbone[0], bind));
    Var fine = ad::tanh_t(t, conv_fwd(t, x, e.backbone[1], bind));
    Var middle = ad::tanh_t(t, conv_fwd(t, fine, e.backbone[2], bind));
    Var coarse = ad::tanh_t(t, conv_fwd(t, middle, e.backbone[3], bind));
    const Var scales[3] = {coarse, middle, fine};

    std::vector<Var> rows;
    rows.reserve(e.latent_rows);
    for (const StyleHead& head : e.heads) {
        Var h = scales[head.source_scale];
        for (std::size_t c = 0; c < head.convs.size(); ++c) {
            h = conv_fwd(t, h, head.convs[c], bind);
            if (c + 1 < head.convs.size()) h = ad::tanh_t(t, h);
        }
        rows.push_back(ad::reshape(t, h, {1, e.style_dim}));
    }
    bind.finish();
    return ad::concat0(t, rows);
}

inline LatentCode encode(const EncoderHandle& e, const Tensor& img) {
    Tape t;
    return t.val(encode_t(t, e, t.constant(img)));
}

/// Test/diagnostic hook: zeroes every head's final projection so the
/// encoder output is exactly the zero code.
inline void zero_head_finals(EncoderHandle& e) {
    for (StyleHead& h : e.heads) {
        ConvLayer& last = h.convs.back();
        std::fill(last.w.v.begin(), last.w.v.end(), 0.0);
        std::fill(last.b.v.begin(), last.b.v.end(), 0.0);
    }
}

// ---------------------------------------------------------------------------
// conditioned input
// ---------------------------------------------------------------------------

struct ConditionedInput {
    Tensor planes;  // [4,H,W]: image channels + constant age plane
    double target_age = 0.0;
};

inline ConditionedInput condition(const Tensor& image, double target_age) {
    validate_image(image);
    if (target_age < kAgeMin || target_age > kAgeMax)
        throw std::invalid_argument("condition: target age outside [5,100]");
    const std::size_t H = image.dim(1), W = image.dim(2);
    ConditionedInput ci;
    ci.target_age = target_age;
    ci.planes = Tensor({4, H, W});
    std::copy(image.v.begin(), image.v.end(), ci.planes.v.begin());
    const double value = target_age / kAgePlaneScale;
    std::fill(ci.planes.v.begin() + 3 * H * W, ci.planes.v.end(), value);
    return ci;
}

/// Inverse of condition(): the image channels bit-exactly, plus the stored
/// target age. The age plane's unique value times 100 recovers the same age
/// up to rounding.
inline std::pair<Tensor, double> un_condition(const ConditionedInput& ci) {
    const std::size_t H = ci.planes.dim(1), W = ci.planes.dim(2);
    Tensor img({3, H, W});
    std::copy(ci.planes.v.begin(), ci.planes.v.begin() + 3 * H * W, img.v.begin());
    return {std::move(img), ci.target_age};
}

inline double age_plane_value(const ConditionedInput& ci) { return ci.planes.v.back(); }

// ---------------------------------------------------------------------------
// SAM composition
// ---------------------------------------------------------------------------

enum class SamMode { residual, direct };

inline SamMode parse_mode(const std::string& s) {
    if (s == "residual") return SamMode::residual;
    if (s == "direct") return SamMode::direct;
    throw std::invalid_argument("mode must be residual or direct");
}

struct SamModel {
    EncoderHandle aging;     // trainable, 4-channel input
    EncoderHandle inversion; // frozen, 3-channel input
    GeneratorHandle generator;
    SamMode mode = SamMode::residual;
};

inline SamModel make_sam_model(const GeneratorSpec& gspec, std::uint64_t seed,
                               SamMode mode = SamMode::residual) {
    SamModel m;
    m.generator = make_generator(gspec);
    m.aging = make_encoder(4, gspec.latent_rows, gspec.style_dim, gspec.resolution,
                           derive_seed(seed, "aging"), 0.02);
    m.inversion = make_encoder(3, gspec.latent_rows, gspec.style_dim, gspec.resolution,
                               derive_seed(seed, "inversion"));
    m.mode = mode;
    return m;
}

/// One application of the model on the tape. `image3` may be a constant
/// (source image) or a tape value (cycle pass input); gradients flow
/// through both the aging path and, in residual mode, the frozen inversion
/// encoder's input.
struct SamApply {
    Var code;   // final latent fed to the generator
    Var image;  // synthesized output
};

inline SamApply sam_apply_t(Tape& t, const SamModel& m, Var image3, double target_age,
                            const std::vector<Var>* aging_bound = nullptr) {
    const Tensor& iv = t.val(image3);
    const std::size_t H = iv.dim(1), W = iv.dim(2);
    Var plane = t.constant(Tensor::full({1, H, W}, target_age / kAgePlaneScale));
    Var x_age = ad::concat0(t, {image3, plane});
    Var code = encode_t(t, m.aging, x_age, aging_bound);
    if (m.mode == SamMode::residual) {
        Var wstar = encode_t(t, m.inversion, image3);
        code = ad::add(t, code, wstar);
    }
    SamApply out;
    out.code = code;
    out.image = synthesize_t(t, m.generator, code);
    return out;
}

/// w* from the frozen inversion encoder; constant in downstream gradients.
inline LatentCode invert(const SamModel& m, const Tensor& image) {
    validate_image(image, m.inversion.resolution);
    return encode(m.inversion, image);
}

inline LatentCode encode_age(const SamModel& m, const ConditionedInput& ci) {
    return encode(m.aging, ci.planes);
}

/// E_age(x_age) in the residual formulation.
inline LatentCode encode_age_residual(const SamModel& m, const ConditionedInput& ci) {
    if (m.mode != SamMode::residual)
        throw std::logic_error("encode_age_residual: model is not in residual mode");
    return encode_age(m, ci);
}

inline LatentCode sam_code(const SamModel& m, const Tensor& image, double target_age) {
    Tape t;
    SamApply a = sam_apply_t(t, m, t.constant(image), target_age);
    return t.val(a.code);
}

inline Tensor sam_transform(const SamModel& m, const Tensor& image, double target_age) {
    Tape t;
    SamApply a = sam_apply_t(t, m, t.constant(image), target_age);
    return t.val(a.image);
}

struct CycleResult {
    Tensor y_out;
    Tensor y_cycle;
    double source_age_est = 0.0;
};

/// Forward pass to the target age, then a second pass back to the
/// (estimated) source age. Plain-value variant; the trainer builds the same
/// composition on a gradient tape.
inline CycleResult sam_cycle(const SamModel& m, const AgePredictor& predictor,
                             const Tensor& image, double target_age) {
    CycleResult r;
    r.source_age_est = predict_age(predictor, image);
    Tape t;
    SamApply fwd = sam_apply_t(t, m, t.constant(image), target_age);
    SamApply cyc = sam_apply_t(t, m, fwd.image, r.source_age_est);
    r.y_out = t.val(fwd.image);
    r.y_cycle = t.val(cyc.image);
    return r;
}

}  // namespace sam
