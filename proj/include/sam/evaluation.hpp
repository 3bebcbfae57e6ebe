#pragma once
// Evaluation protocols: nearest-age candidate selection over a uniform
// target grid, per-target aging error under a held-out predictor, identity
// similarity across growing age gaps, and the ablation harness that trains
// variants under a shared seed and reports both metrics.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "sam/analysis.hpp"
#include "sam/training.hpp"

namespace sam {

/// argmin |predicted_i - target|, ties to the lowest index.
inline std::size_t select_nearest_age(const std::vector<double>& predicted, double target) {
    if (predicted.empty()) throw std::invalid_argument("select_nearest_age: empty candidates");
    std::size_t best = 0;
    double best_gap = std::abs(predicted[0] - target);
    for (std::size_t i = 1; i < predicted.size(); ++i) {
        const double gap = std::abs(predicted[i] - target);
        if (gap < best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    return best;
}

/// Uniform candidate grid over [lo, hi], endpoints inclusive; n == 1 gives
/// the low endpoint (a subset of every larger grid, so more candidates can
/// only lower the selection error).
inline std::vector<double> candidate_grid(std::size_t n, double lo = kAgeMin,
                                          double hi = kAgeMax) {
    if (n == 0) throw std::invalid_argument("candidate_grid: n must be positive");
    std::vector<double> out;
    out.reserve(n);
    if (n == 1) {
        out.push_back(lo);
        return out;
    }
    for (std::size_t j = 0; j < n; ++j)
        out.push_back(lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(n - 1));
    return out;
}

struct AgingAccuracyRow {
    double target = 0.0;
    double mae = 0.0;
};

/// For each source: synthesize one candidate per grid age, score each with
/// the (held-out) predictor, and per requested target keep the candidate
/// whose predicted age is nearest; the row reports mean |target - predicted|.
inline std::vector<AgingAccuracyRow> aging_accuracy(const SamModel& m,
                                                    const AgePredictor& eval_predictor,
                                                    const ToyDataset& dataset,
                                                    const std::vector<double>& targets,
                                                    std::size_t n_candidates = 80) {
    if (dataset.size() == 0) throw std::invalid_argument("aging_accuracy: empty dataset");
    const std::vector<double> grid = candidate_grid(n_candidates);
    std::vector<AgingAccuracyRow> rows;
    for (double t : targets) rows.push_back({t, 0.0});

    for (std::size_t i = 0; i < dataset.size(); ++i) {
        std::vector<double> predicted;
        predicted.reserve(grid.size());
        for (double age : grid) {
            Tape tape;
            SamApply a = sam_apply_t(tape, m, tape.constant(dataset.images[i]), age);
            predicted.push_back(
                tape.val(predict_age_t(tape, eval_predictor, a.image)).item());
        }
        for (std::size_t r = 0; r < targets.size(); ++r) {
            const std::size_t sel = select_nearest_age(predicted, targets[r]);
            rows[r].mae += std::abs(targets[r] - predicted[sel]);
        }
    }
    for (auto& r : rows) r.mae /= static_cast<double>(dataset.size());
    return rows;
}

struct IdentityGapRow {
    double gap = 0.0;
    double mean_cosine = 0.0;
};

/// cosine(R(x), R(SAM(x, alpha_s + gap))) averaged over the dataset, one row
/// per gap. Targets are clamped into the supported age range.
inline std::vector<IdentityGapRow> identity_vs_age_gap(const SamModel& m,
                                                       const AgePredictor& predictor,
                                                       const IdentityEmbedder& embedder,
                                                       const ToyDataset& dataset,
                                                       const std::vector<double>& gaps) {
    if (dataset.size() == 0) throw std::invalid_argument("identity_vs_age_gap: empty dataset");
    std::vector<IdentityGapRow> rows;
    for (double g : gaps) rows.push_back({g, 0.0});
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Tensor& x = dataset.images[i];
        const double source = predict_age(predictor, x);
        const Tensor ex = identity_embedding(embedder, x);
        for (std::size_t r = 0; r < gaps.size(); ++r) {
            const double target = std::clamp(source + gaps[r], kAgeMin, kAgeMax);
            Tensor ey = identity_embedding(embedder, sam_transform(m, x, target));
            double cos = 0.0;
            for (std::size_t d = 0; d < ex.size(); ++d) cos += ex.v[d] * ey.v[d];
            rows[r].mean_cosine += cos;
        }
    }
    for (auto& r : rows) r.mean_cosine /= static_cast<double>(dataset.size());
    return rows;
}

/// Spearman rank correlation with average ranks for ties; defined as 0 when
/// either side has zero rank variance.
inline double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("spearman_rho: need matched samples");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(xs), ry = ranks(ys);
    const std::size_t n = xs.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

struct AblationVariant {
    std::string name;
    SamMode mode = SamMode::residual;
    bool drop_l2_lpips_forward = false;
    bool drop_cycle = false;
    bool drop_w_reg = false;
    bool drop_all = false;  // every lambda zero: training must be a no-op
};

inline std::vector<AblationVariant> default_ablation_variants() {
    return {
        {"sam", SamMode::residual, false, false, false, false},
        {"sam_direct", SamMode::direct, false, false, false, false},
        {"no_l2_lpips_forward", SamMode::residual, true, false, false, false},
        {"no_cycle", SamMode::residual, false, true, false, false},
        {"no_w_reg", SamMode::residual, false, false, true, false},
    };
}

struct AblationRow {
    std::string name;
    std::vector<AgingAccuracyRow> aging;
    std::vector<IdentityGapRow> identity;
    double mean_identity_cosine = 0.0;
};

struct EvalOracles {
    const AgePredictor* train_predictor = nullptr;
    const AgePredictor* eval_predictor = nullptr;
    const IdentityEmbedder* embedder = nullptr;
    const PerceptualExtractor* perceptual = nullptr;
};

/// Trains every variant under the shared seed/dataset, then reports both
/// metrics per variant. The forward and cycle passes may carry different
/// lambda sets (the no-L2&LPIPS variant drops them from the forward pass
/// only).
inline std::vector<AblationRow> ablation_run(const RunConfig& base_cfg,
                                             const EvalOracles& oracles,
                                             const ToyDataset& train_data,
                                             const ToyDataset& holdout,
                                             const std::vector<double>& targets,
                                             const std::vector<double>& gaps,
                                             const std::vector<AblationVariant>& variants,
                                             std::size_t n_candidates = 80) {
    std::vector<AblationRow> rows;
    for (const AblationVariant& var : variants) {
        RunConfig cfg = base_cfg;
        cfg.mode = var.mode == SamMode::residual ? "residual" : "direct";
        RunConfig fwd_cfg = cfg, cyc_cfg = cfg;
        if (var.drop_l2_lpips_forward) {
            fwd_cfg.weights.l2_center = fwd_cfg.weights.l2_outer = 0.0;
            fwd_cfg.weights.lpips_center = fwd_cfg.weights.lpips_outer = 0.0;
        }
        if (var.drop_cycle) {
            fwd_cfg.weights.cycle = 0.0;
            cyc_cfg.weights.cycle = 0.0;
        }
        if (var.drop_w_reg) {
            fwd_cfg.weights.reg = 0.0;
            cyc_cfg.weights.reg = 0.0;
        }
        if (var.drop_all) {
            fwd_cfg.weights = LossWeights{0, 0, 0, 0, 0, 0, 0, 0};
            cyc_cfg.weights = fwd_cfg.weights;
        }

        GeneratorSpec gspec{cfg.latent_rows, cfg.style_dim, cfg.resolution, cfg.gen_seed,
                            cfg.n_avg};
        SamModel model = make_sam_model(gspec, cfg.seed, var.mode);
        LossContext fwd_ctx = make_loss_context(fwd_cfg, *oracles.perceptual, *oracles.embedder,
                                                *oracles.train_predictor, model.generator.wbar);
        LossContext cyc_ctx = make_loss_context(cyc_cfg, *oracles.perceptual, *oracles.embedder,
                                                *oracles.train_predictor, model.generator.wbar);
        Trainer trainer(model, train_data, fwd_ctx, cfg, &cyc_ctx);
        trainer.run(nullptr);

        AblationRow row;
        row.name = var.name;
        row.aging = aging_accuracy(model, *oracles.eval_predictor, holdout, targets, n_candidates);
        row.identity =
            identity_vs_age_gap(model, *oracles.train_predictor, *oracles.embedder, holdout, gaps);
        for (const auto& g : row.identity) row.mean_identity_cosine += g.mean_cosine;
        row.mean_identity_cosine /= static_cast<double>(row.identity.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

inline void write_aging_csv(const std::string& path, const std::vector<AgingAccuracyRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_aging_csv: cannot write " + path);
    f << "target,mae\n";
    for (const auto& r : rows) f << csv_double(r.target) << ',' << csv_double(r.mae) << "\n";
}

inline void write_identity_csv(const std::string& path, const std::vector<IdentityGapRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_identity_csv: cannot write " + path);
    f << "gap,mean_cosine\n";
    for (const auto& r : rows) f << csv_double(r.gap) << ',' << csv_double(r.mean_cosine) << "\n";
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_ablation_csv: cannot write " + path);
    f << "variant";
    if (!rows.empty()) {
        for (const auto& a : rows[0].aging) f << ",mae_" << a.target;
        for (const auto& g : rows[0].identity) f << ",cos_" << g.gap;
        f << ",mean_cosine";
    }
    f << "\n";
    for (const auto& r : rows) {
        f << r.name;
        for (const auto& a : r.aging) f << ',' << csv_double(a.mae);
        for (const auto& g : r.identity) f << ',' << csv_double(g.mean_cosine);
        f << ',' << csv_double(r.mean_identity_cosine) << "\n";
    }
}

}  // namespace sam
