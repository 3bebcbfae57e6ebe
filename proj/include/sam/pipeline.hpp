#pragma once
// End-to-end orchestration over a working directory: pretraining stages
// write oracle/inverter checkpoints, training writes the model checkpoint
// plus metrics, evaluation stages read everything back. The CLI and the
// acceptance suite both drive these entry points, so file formats and
// determinism are exercised identically from either side.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sam/analysis.hpp"
#include "sam/editing.hpp"
#include "sam/evaluation.hpp"
#include "sam/training.hpp"

namespace sam {

namespace fs = std::filesystem;

inline GeneratorSpec generator_spec(const RunConfig& cfg) {
    return {cfg.latent_rows, cfg.style_dim, cfg.resolution, cfg.gen_seed, cfg.n_avg};
}

struct OracleSet {
    AgePredictor train_predictor;
    AgePredictor eval_predictor;
    IdentityEmbedder embedder;
    PerceptualExtractor perceptual;

    EvalOracles view() const {
        return {&train_predictor, &eval_predictor, &embedder, &perceptual};
    }
};

struct OracleReports {
    PredictorReport train_predictor;
    PredictorReport eval_predictor;
    EmbedderReport embedder;
};

/// Trains and freezes the two age predictors (training + held-out
/// evaluation stand-in, distinct widths and seeds) and the identity
/// embedder; the perceptual pyramid is seed-constructed. Reports land in
/// each checkpoint's metadata.
inline OracleReports run_pretrain_oracles(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    OracleReports reports;

    AgePredictor train_pred = pretrain_age_predictor(
        cfg.resolution, cfg.predictor_width, derive_seed(cfg.seed, "oracle.train"),
        cfg.oracle_steps, cfg.oracle_batch, cfg.oracle_lr, &reports.train_predictor);
    Checkpoint ck = to_checkpoint(train_pred);
    ck.meta["holdout_mae"] = csv_double(reports.train_predictor.holdout_mae);
    save_checkpoint(out_dir + "/age_predictor.ckpt", ck);

    AgePredictor eval_pred = pretrain_age_predictor(
        cfg.resolution, cfg.eval_predictor_width, derive_seed(cfg.seed, "oracle.eval"),
        cfg.oracle_steps, cfg.oracle_batch, cfg.oracle_lr, &reports.eval_predictor);
    Checkpoint eck = to_checkpoint(eval_pred);
    eck.meta["holdout_mae"] = csv_double(reports.eval_predictor.holdout_mae);
    save_checkpoint(out_dir + "/eval_age_predictor.ckpt", eck);

    IdentityEmbedder emb = pretrain_identity_embedder(
        cfg.resolution, cfg.identity_crop_fraction, cfg.embed_resolution, cfg.embed_dim,
        derive_seed(cfg.seed, "oracle.embed"), cfg.embedder_steps, cfg.embedder_batch,
        cfg.embedder_lr, &reports.embedder);
    Checkpoint rck = to_checkpoint(emb);
    rck.meta["positive_cosine"] = csv_double(reports.embedder.positive_cosine);
    rck.meta["negative_cosine"] = csv_double(reports.embedder.negative_cosine);
    save_checkpoint(out_dir + "/identity_embedder.ckpt", rck);

    PerceptualExtractor per = make_perceptual(derive_seed(cfg.seed, "oracle.percep"));
    save_checkpoint(out_dir + "/perceptual.ckpt", to_checkpoint(per));
    return reports;
}

inline OracleSet load_oracles(const std::string& dir) {
    OracleSet o;
    o.train_predictor = age_predictor_from_checkpoint(load_checkpoint(dir + "/age_predictor.ckpt"));
    o.eval_predictor =
        age_predictor_from_checkpoint(load_checkpoint(dir + "/eval_age_predictor.ckpt"));
    o.embedder =
        identity_embedder_from_checkpoint(load_checkpoint(dir + "/identity_embedder.ckpt"));
    o.perceptual = perceptual_from_checkpoint(load_checkpoint(dir + "/perceptual.ckpt"));
    return o;
}

inline InverterReport run_pretrain_inverter(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    PerceptualExtractor per;
    try {
        per = perceptual_from_checkpoint(load_checkpoint(out_dir + "/perceptual.ckpt"));
    } catch (const std::exception&) {
        throw std::runtime_error("pretrain-inverter: missing oracles in " + out_dir +
                                 " (run pretrain-oracles first)");
    }
    GeneratorHandle gen = make_generator(generator_spec(cfg));
    InverterReport report;
    EncoderHandle inv = pretrain_inverter(gen, cfg, per, &report);
    Checkpoint ck = encoder_to_checkpoint(inv, "inversion_encoder");
    ck.meta["holdout_mse"] = csv_double(report.holdout_mse);
    save_checkpoint(out_dir + "/inverter.ckpt", ck);
    return report;
}

/// Generator + frozen inverter + fresh aging encoder, ready to train.
inline SamModel assemble_model(const RunConfig& cfg, const std::string& dir) {
    SamModel m = make_sam_model(generator_spec(cfg), cfg.seed, parse_mode(cfg.mode));
    m.inversion = encoder_from_checkpoint(load_checkpoint(dir + "/inverter.ckpt"),
                                          "inversion_encoder");
    return m;
}

inline SamModel load_trained_model(const RunConfig& cfg, const std::string& dir,
                                   const std::string& ckpt = "sam.ckpt") {
    SamModel m = assemble_model(cfg, dir);
    Checkpoint ck = load_checkpoint(dir + "/" + ckpt);
    apply_model_checkpoint(ck, m);
    return m;
}

/// Full training stage: datasets from config seeds, metrics CSV, periodic
/// and final checkpoints, the pinned generator spec. Optionally resumes
/// from an earlier checkpoint.
inline void run_train(const RunConfig& cfg, const std::string& out_dir,
                      const std::string& resume_from = "") {
    fs::create_directories(out_dir);
    OracleSet oracles = load_oracles(out_dir);
    SamModel model = assemble_model(cfg, out_dir);
    ToyDataset data = make_scene_dataset(cfg.resolution, cfg.dataset_size, cfg.dataset_seed);
    LossContext ctx = make_loss_context(cfg, oracles.perceptual, oracles.embedder,
                                        oracles.train_predictor, model.generator.wbar);
    Trainer trainer(model, data, ctx, cfg);
    if (!resume_from.empty()) trainer.restore(load_checkpoint(resume_from));

    save_generator_spec(out_dir + "/generator.spec", generator_spec(cfg));
    save_config(out_dir + "/config.txt", cfg);
    std::ofstream metrics(out_dir + "/losses.csv");
    if (!metrics) throw std::runtime_error("run_train: cannot write losses.csv");
    metrics << loss_csv_header() << "\n";
    trainer.run(&metrics, out_dir);
}

inline std::vector<AgingAccuracyRow> run_eval_aging(const RunConfig& cfg,
                                                    const std::string& dir,
                                                    const std::vector<double>& targets,
                                                    std::size_t n_candidates = 80,
                                                    const std::string& ckpt = "sam.ckpt") {
    OracleSet oracles = load_oracles(dir);
    SamModel model = load_trained_model(cfg, dir, ckpt);
    ToyDataset holdout = make_scene_dataset(cfg.resolution, cfg.holdout_size, cfg.holdout_seed);
    auto rows = aging_accuracy(model, oracles.eval_predictor, holdout, targets, n_candidates);
    write_aging_csv(dir + "/aging_accuracy.csv", rows);
    return rows;
}

inline std::vector<IdentityGapRow> run_eval_identity(const RunConfig& cfg,
                                                     const std::string& dir,
                                                     const std::vector<double>& gaps,
                                                     const std::string& ckpt = "sam.ckpt") {
    OracleSet oracles = load_oracles(dir);
    SamModel model = load_trained_model(cfg, dir, ckpt);
    ToyDataset holdout = make_scene_dataset(cfg.resolution, cfg.holdout_size, cfg.holdout_seed);
    auto rows = identity_vs_age_gap(model, oracles.train_predictor, oracles.embedder, holdout, gaps);
    write_identity_csv(dir + "/identity_gap.csv", rows);
    return rows;
}

inline std::vector<AblationRow> run_ablate(const RunConfig& cfg, const std::string& dir,
                                           const std::vector<double>& targets,
                                           const std::vector<double>& gaps,
                                           const std::vector<AblationVariant>& variants,
                                           std::size_t n_candidates = 80) {
    OracleSet oracles = load_oracles(dir);
    ToyDataset data = make_scene_dataset(cfg.resolution, cfg.dataset_size, cfg.dataset_seed);
    ToyDataset holdout = make_scene_dataset(cfg.resolution, cfg.holdout_size, cfg.holdout_seed);
    // every variant trains against the pretrained frozen inverter
    RunConfig base = cfg;
    auto rows_run = [&](const std::vector<AblationVariant>& vars) {
        std::vector<AblationRow> rows;
        for (const AblationVariant& var : vars) {
            RunConfig vcfg = base;
            vcfg.mode = var.mode == SamMode::residual ? "residual" : "direct";
            RunConfig fwd_cfg = vcfg, cyc_cfg = vcfg;
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
            SamModel model = assemble_model(vcfg, dir);
            model.mode = var.mode;
            LossContext fwd_ctx =
                make_loss_context(fwd_cfg, oracles.perceptual, oracles.embedder,
                                  oracles.train_predictor, model.generator.wbar);
            LossContext cyc_ctx =
                make_loss_context(cyc_cfg, oracles.perceptual, oracles.embedder,
                                  oracles.train_predictor, model.generator.wbar);
            Trainer trainer(model, data, fwd_ctx, vcfg, &cyc_ctx);
            trainer.run(nullptr);

            AblationRow row;
            row.name = var.name;
            row.aging =
                aging_accuracy(model, oracles.eval_predictor, holdout, targets, n_candidates);
            row.identity = identity_vs_age_gap(model, oracles.train_predictor, oracles.embedder,
                                               holdout, gaps);
            for (const auto& g : row.identity) row.mean_identity_cosine += g.mean_cosine;
            row.mean_identity_cosine /= static_cast<double>(row.identity.size());
            rows.push_back(std::move(row));
        }
        return rows;
    };
    auto rows = rows_run(variants);
    write_ablation_csv(dir + "/ablation.csv", rows);
    return rows;
}

/// Traces held-out images over the target grid; writes per-image trace CSVs
/// plus the 2D projection (plane fit on the first trace).
inline std::vector<PathTrace> run_trace(const RunConfig& cfg, const std::string& dir,
                                        const std::vector<double>& targets,
                                        std::size_t n_images,
                                        const std::string& ckpt = "sam.ckpt") {
    OracleSet oracles = load_oracles(dir);
    SamModel model = load_trained_model(cfg, dir, ckpt);
    ToyDataset holdout = make_scene_dataset(cfg.resolution, cfg.holdout_size, cfg.holdout_seed);
    const std::size_t n = std::min(n_images, holdout.size());
    std::vector<PathTrace> traces;
    for (std::size_t i = 0; i < n; ++i) {
        traces.push_back(trace_age_path(model, oracles.train_predictor, holdout.images[i],
                                        targets));
        write_trace_csv(dir + "/trace_" + std::to_string(i) + ".csv", traces.back());
    }
    if (!traces.empty() && traces[0].size() >= 2) {
        auto proj = pca_project(traces, 0);
        write_projection_csv(dir + "/trace_projection.csv", traces, proj);
    }
    return traces;
}

/// Codes over held-out images x target grid, labels = targets; logistic
/// direction saved for traversal.
inline LinearDirection run_fit_linear(const RunConfig& cfg, const std::string& dir,
                                      double threshold = 50.0,
                                      const std::string& ckpt = "sam.ckpt") {
    SamModel model = load_trained_model(cfg, dir, ckpt);
    ToyDataset holdout = make_scene_dataset(cfg.resolution, cfg.holdout_size, cfg.holdout_seed);
    const std::size_t n = std::min<std::size_t>(holdout.size(), 24);
    std::vector<LatentCode> codes;
    std::vector<double> ages;
    for (std::size_t i = 0; i < n; ++i)
        for (double t : {10.0, 30.0, 50.0, 70.0, 90.0}) {
            codes.push_back(sam_code(model, holdout.images[i], t));
            ages.push_back(t);
        }
    LinearDirection d = fit_linear_direction(codes, ages, threshold);
    save_direction(dir + "/direction.ckpt", d);
    return d;
}

struct TraverseResult {
    std::vector<Tensor> images;
    std::vector<double> predicted_ages;
};

inline TraverseResult run_traverse(const RunConfig& cfg, const std::string& dir,
                                   std::size_t steps, double stride, std::uint64_t sample_seed) {
    OracleSet oracles = load_oracles(dir);
    GeneratorHandle gen = make_generator(generator_spec(cfg));
    LinearDirection d = load_direction(dir + "/direction.ckpt");
    LatentCode base = sample_latent(gen, sample_seed);
    TraverseResult r;
    r.images = traverse(gen, base, d, steps, stride);
    for (std::size_t i = 0; i < r.images.size(); ++i) {
        r.predicted_ages.push_back(predict_age(oracles.train_predictor, r.images[i]));
        write_png(dir + "/traverse_" + std::to_string(i) + ".png", r.images[i]);
    }
    std::ofstream f(dir + "/traverse_ages.csv");
    f << "index,predicted_age\n";
    for (std::size_t i = 0; i < r.predicted_ages.size(); ++i)
        f << i << ',' << csv_double(r.predicted_ages[i]) << "\n";
    return r;
}

}  // namespace sam
