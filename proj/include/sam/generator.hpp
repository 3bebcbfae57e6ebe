#pragma once
// Frozen style-based generator, desk scale. A two-layer mapping network
// turns Gaussian latents into style vectors; a procedural differentiable
// renderer turns a [L,D] style matrix into a radial ring scene. The style
// rows follow the coarse/middle/fine convention: the coarse third controls
// position and envelope radius, the middle third the ring frequency (the
// scene's "age" axis), the fine third the hue.
//
// The ring pattern is cos(pi * f * r), so the number of zero crossings of
// any channel along a unit radius equals round(f); f maps affinely onto
// [5,100] years, which gives the evaluation suite an exact age oracle.

#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sam/autodiff.hpp"
#include "sam/image.hpp"
#include "sam/rng.hpp"
#include "sam/tensor.hpp"

namespace sam {

inline constexpr double kAgeMin = 5.0;
inline constexpr double kAgeMax = 100.0;
inline constexpr double kFreqMin = 2.0;
inline constexpr double kFreqMax = 10.0;
inline constexpr double kFreqMid = 0.5 * (kFreqMin + kFreqMax);
inline constexpr double kFreqAmp = 0.5 * (kFreqMax - kFreqMin);
inline constexpr double kPi = 3.14159265358979323846;

struct GeneratorSpec {
    std::size_t latent_rows = 8;  // L
    std::size_t style_dim = 64;   // D
    std::size_t resolution = 32;
    std::uint64_t seed = 7;
    std::size_t n_avg = 4096;
};

struct ToySceneParams {
    double center_x = 0.0;
    double center_y = 0.0;
    double radius = 0.675;        // envelope scale, plane units
    double ring_frequency = kFreqMid;
    double hue = 0.0;
};

/// Affine map from ring frequency onto [kAgeMin, kAgeMax] years. Exact.
inline double toy_true_age(const ToySceneParams& p) {
    return kAgeMin + (p.ring_frequency - kFreqMin) * (kAgeMax - kAgeMin) / (kFreqMax - kFreqMin);
}

inline double frequency_for_age(double age) {
    return kFreqMin + (age - kAgeMin) * (kFreqMax - kFreqMin) / (kAgeMax - kAgeMin);
}

/// Rows split into coarse/middle/fine groups, as even as possible with the
/// remainder going to the front (coarse first).
inline std::array<std::size_t, 3> row_split(std::size_t L) {
    if (L < 3) throw std::invalid_argument("row_split: need at least 3 style rows");
    const std::size_t base = L / 3, rem = L % 3;
    return {base + (rem > 0 ? 1 : 0), base + (rem > 1 ? 1 : 0), base};
}

struct GeneratorHandle {
    GeneratorSpec spec;
    // mapping network z -> w
    Tensor map_w1, map_b1, map_w2, map_b2;
    // scene parameter projections, one per attribute
    Tensor proj_cx, proj_cy, proj_radius, proj_freq, proj_hue;
    // average latent, cached at construction (mean of spec.n_avg mapped samples)
    LatentCode wbar;

    std::uint64_t params_checksum() const {
        std::uint64_t h = checksum(map_w1);
        for (const Tensor* t : {&map_b1, &map_w2, &map_b2, &proj_cx, &proj_cy, &proj_radius,
                                &proj_freq, &proj_hue})
            h = combine_checksum(h, checksum(*t));
        return h;
    }
};

// ---------------------------------------------------------------------------
// construction / latent sampling
// ---------------------------------------------------------------------------

inline Tensor map_latent(const GeneratorHandle& g, const Tensor& z) {
    const std::size_t D = g.spec.style_dim;
    if (z.size() != D) throw std::invalid_argument("map_latent: latent size mismatch");
    Tensor h({D});
    for (std::size_t o = 0; o < D; ++o) {
        double acc = g.map_b1.v[o];
        const double* row = g.map_w1.v.data() + o * D;
        for (std::size_t i = 0; i < D; ++i) acc += row[i] * z.v[i];
        h.v[o] = std::tanh(acc);
    }
    Tensor w({D});
    for (std::size_t o = 0; o < D; ++o) {
        double acc = g.map_b2.v[o];
        const double* row = g.map_w2.v.data() + o * D;
        for (std::size_t i = 0; i < D; ++i) acc += row[i] * h.v[i];
        w.v[o] = std::tanh(acc);
    }
    return w;
}

inline LatentCode broadcast_rows(const Tensor& w, std::size_t L) {
    LatentCode code({L, w.size()});
    for (std::size_t r = 0; r < L; ++r)
        std::copy(w.v.begin(), w.v.end(), code.v.begin() + r * w.size());
    return code;
}

/// W-space sample: one mapped vector broadcast to every row.
inline LatentCode sample_latent(const GeneratorHandle& g, std::uint64_t seed) {
    Rng rng(seed);
    Tensor z({g.spec.style_dim});
    for (double& x : z.v) x = rng.normal();
    return broadcast_rows(map_latent(g, z), g.spec.latent_rows);
}

/// Mean of explicitly supplied latents after mapping (test hook for
/// symmetric constructions).
inline LatentCode mean_mapped(const GeneratorHandle& g, const std::vector<Tensor>& zs) {
    if (zs.empty()) throw std::invalid_argument("mean_mapped: no samples");
    Tensor acc({g.spec.style_dim});
    for (const Tensor& z : zs) {
        Tensor w = map_latent(g, z);
        for (std::size_t i = 0; i < acc.size(); ++i) acc.v[i] += w.v[i];
    }
    for (double& x : acc.v) x /= static_cast<double>(zs.size());
    return broadcast_rows(acc, g.spec.latent_rows);
}

/// Arithmetic mean over n_avg mapped samples, drawn from the generator's
/// dedicated averaging stream (recomputation is reproducible).
inline LatentCode average_latent(const GeneratorHandle& g, std::size_t n_avg) {
    if (n_avg < 1) throw std::invalid_argument("average_latent: n_avg must be >= 1");
    Rng rng(derive_seed(g.spec.seed, "gen.wbar"));
    const std::size_t D = g.spec.style_dim;
    Tensor acc({D});
    Tensor z({D});
    for (std::size_t s = 0; s < n_avg; ++s) {
        for (double& x : z.v) x = rng.normal();
        Tensor w = map_latent(g, z);
        for (std::size_t i = 0; i < D; ++i) acc.v[i] += w.v[i];
    }
    for (double& x : acc.v) x /= static_cast<double>(n_avg);
    return broadcast_rows(acc, g.spec.latent_rows);
}

inline GeneratorHandle make_generator(const GeneratorSpec& spec) {
    if (spec.resolution < 8) throw std::invalid_argument("generator: resolution too small");
    GeneratorHandle g;
    g.spec = spec;
    const std::size_t D = spec.style_dim;
    Rng rng(derive_seed(spec.seed, "gen.params"));
    const double ws = 1.2 / std::sqrt(static_cast<double>(D));
    g.map_w1 = Tensor::randn({D, D}, rng, ws);
    g.map_b1 = Tensor::randn({D}, rng, 0.1);
    g.map_w2 = Tensor::randn({D, D}, rng, ws);
    g.map_b2 = Tensor::randn({D}, rng, 0.1);
    const double ps = 1.0 / std::sqrt(static_cast<double>(D));
    g.proj_cx = Tensor::randn({D}, rng, ps);
    g.proj_cy = Tensor::randn({D}, rng, ps);
    g.proj_radius = Tensor::randn({D}, rng, ps);
    g.proj_freq = Tensor::randn({D}, rng, ps);
    g.proj_hue = Tensor::randn({D}, rng, ps);
    g.wbar = average_latent(g, spec.n_avg);
    return g;
}

// ---------------------------------------------------------------------------
// differentiable scene rendering
// ---------------------------------------------------------------------------

struct SceneVars {
    Var center_x, center_y, radius, ring_frequency, hue;
};

namespace detail {

inline Var group_mean(Tape& t, Var code, std::size_t r0, std::size_t r1,
                          std::size_t D) {
    Var acc = ad::reshape(t, ad::slice0(t, code, r0, r0 + 1), {D});
    for (std::size_t r = r0 + 1; r < r1; ++r)
        acc = ad::add(t, acc, ad::reshape(t, ad::slice0(t, code, r, r + 1), {D}));
    return ad::scale(t, acc, 1.0 / static_cast<double>(r1 - r0));
}

inline Var squash(Tape& t, Var raw, double gain, double amp, double mid) {
    return ad::offset(t, ad::scale(t, ad::tanh_t(t, ad::scale(t, raw, gain)), amp), mid);
}

inline Tensor coordinate_plane(std::size_t res, bool horizontal) {
    Tensor p({res, res});
    for (std::size_t y = 0; y < res; ++y)
        for (std::size_t x = 0; x < res; ++x) {
            const std::size_t i = horizontal ? x : y;
            p.at(y, x) = (static_cast<double>(i) + 0.5) / static_cast<double>(res) * 2.0 - 1.0;
        }
    return p;
}

}  // namespace detail

inline SceneVars scene_vars(Tape& t, const GeneratorHandle& g, Var code) {
    const Tensor& cv = t.val(code);
    if (cv.ndim() != 2 || cv.dim(0) != g.spec.latent_rows || cv.dim(1) != g.spec.style_dim)
        throw std::invalid_argument("scene_vars: code shape mismatch");
    const std::size_t D = g.spec.style_dim;
    const auto split = row_split(g.spec.latent_rows);
    const std::size_t c0 = 0, c1 = split[0];
    const std::size_t m0 = c1, m1 = c1 + split[1];
    const std::size_t f0 = m1, f1 = m1 + split[2];

    Var gc = detail::group_mean(t, code, c0, c1, D);
    Var gm = detail::group_mean(t, code, m0, m1, D);
    Var gf = detail::group_mean(t, code, f0, f1, D);

    SceneVars s;
    s.center_x = detail::squash(t, ad::dot(t, gc, t.constant(g.proj_cx)), 1.2, 0.35, 0.0);
    s.center_y = detail::squash(t, ad::dot(t, gc, t.constant(g.proj_cy)), 1.2, 0.35, 0.0);
    s.radius = detail::squash(t, ad::dot(t, gc, t.constant(g.proj_radius)), 1.2, 0.175, 0.675);
    s.ring_frequency =
        detail::squash(t, ad::dot(t, gm, t.constant(g.proj_freq)), 1.3, kFreqAmp, kFreqMid);
    s.hue = detail::squash(t, ad::dot(t, gf, t.constant(g.proj_hue)), 1.2, kPi, 0.0);
    return s;
}

inline Var render_scene_t(Tape& t, const SceneVars& s, std::size_t resolution) {
    using namespace ad;
    Var X = t.constant(sam::detail::coordinate_plane(resolution, true));
    Var Y = t.constant(sam::detail::coordinate_plane(resolution, false));
    Var dx = sub_b(t, X, s.center_x);
    Var dy = sub_b(t, Y, s.center_y);
    Var r = sqrt_shift(t, add(t, mul(t, dx, dx), mul(t, dy, dy)), 1e-6);
    Var ring = cos_t(t, scale(t, mul_b(t, r, s.ring_frequency), kPi));
    Var rn = mul_b(t, r, recip(t, s.radius));
    Var env = exp_t(t, scale(t, mul(t, rn, rn), -1.0));
    Var pattern = mul(t, ring, env);

    std::vector<Var> chans;
    const double phases[3] = {0.0, -2.1, 2.1};
    for (double ph : phases) {
        Var w = offset(t, scale(t, cos_t(t, offset(t, s.hue, ph)), 0.4), 0.6);
        Var chan = tanh_t(t, scale(t, mul_b(t, pattern, w), 1.5));
        chans.push_back(reshape(t, chan, {1, resolution, resolution}));
    }
    return concat0(t, chans);
}

/// G(code): deterministic, differentiable in `code`; generator parameters
/// enter as constants and receive no gradient.
inline Var synthesize_t(Tape& t, const GeneratorHandle& g, Var code) {
    return render_scene_t(t, scene_vars(t, g, code), g.spec.resolution);
}

inline Tensor synthesize(const GeneratorHandle& g, const LatentCode& code) {
    Tape t;
    return t.val(synthesize_t(t, g, t.constant(code)));
}

inline ToySceneParams scene_params(const GeneratorHandle& g, const LatentCode& code) {
    Tape t;
    SceneVars s = scene_vars(t, g, t.constant(code));
    ToySceneParams p;
    p.center_x = t.val(s.center_x).item();
    p.center_y = t.val(s.center_y).item();
    p.radius = t.val(s.radius).item();
    p.ring_frequency = t.val(s.ring_frequency).item();
    p.hue = t.val(s.hue).item();
    return p;
}

inline Tensor render_scene(const ToySceneParams& p, std::size_t resolution) {
    Tape t;
    SceneVars s;
    s.center_x = t.constant(p.center_x);
    s.center_y = t.constant(p.center_y);
    s.radius = t.constant(p.radius);
    s.ring_frequency = t.constant(p.ring_frequency);
    s.hue = t.constant(p.hue);
    return t.val(render_scene_t(t, s, resolution));
}

// ---------------------------------------------------------------------------
// datasets: rendered scenes with uniformly distributed true ages
// ---------------------------------------------------------------------------

struct ToyDataset {
    std::vector<Tensor> images;
    std::vector<double> ages;
    std::vector<ToySceneParams> params;
    std::size_t size() const { return images.size(); }
};

inline ToySceneParams sample_scene_params(Rng& rng) {
    ToySceneParams p;
    const double age = rng.uniform(kAgeMin, kAgeMax);
    p.ring_frequency = frequency_for_age(age);
    p.center_x = rng.uniform(-0.35, 0.35);
    p.center_y = rng.uniform(-0.35, 0.35);
    p.radius = rng.uniform(0.5, 0.85);
    p.hue = rng.uniform(-kPi, kPi);
    return p;
}

inline ToyDataset make_scene_dataset(std::size_t resolution, std::size_t n, std::uint64_t seed) {
    ToyDataset ds;
    Rng rng(seed);
    ds.images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ToySceneParams p = sample_scene_params(rng);
        ds.params.push_back(p);
        ds.ages.push_back(toy_true_age(p));
        ds.images.push_back(render_scene(p, resolution));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// generator spec file (key=value), pins a toy generator exactly
// ---------------------------------------------------------------------------

inline void save_generator_spec(const std::string& path, const GeneratorSpec& s) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_generator_spec: cannot write " + path);
    f << "l=" << s.latent_rows << "\nd=" << s.style_dim << "\nresolution=" << s.resolution
      << "\nseed=" << s.seed << "\nn_avg=" << s.n_avg << "\n";
}

inline GeneratorSpec load_generator_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_generator_spec: cannot open " + path);
    GeneratorSpec s;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("generator spec: malformed line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "l") s.latent_rows = std::stoull(val);
        else if (key == "d") s.style_dim = std::stoull(val);
        else if (key == "resolution") s.resolution = std::stoull(val);
        else if (key == "seed") s.seed = std::stoull(val);
        else if (key == "n_avg") s.n_avg = std::stoull(val);
        else throw std::runtime_error("generator spec: unknown key " + key);
    }
    return s;
}

}  // namespace sam
