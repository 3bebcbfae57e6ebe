#pragma once
// Training loop: target-age sampling, the forward + cycle passes on one
// tape per sample, batch-mean gradients, the adaptive optimizer, metrics
// CSV, and bit-exact checkpoint/resume. Also the in-repo pretraining of the
// frozen inversion encoder.
//
// Determinism contract: all randomness of a run flows through one serialized
// stream, samples are processed in draw order, and gradients are reduced in
// batch-slot order, so equal (config, seed, dataset) replays byte-for-byte.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sam/checkpoint.hpp"
#include "sam/config.hpp"
#include "sam/encoder.hpp"
#include "sam/losses.hpp"
#include "sam/optimizer.hpp"

namespace sam {

/// With probability p_same the (estimated) source age, else uniform on
/// [age_min, age_max]. Draw order: coin first, then the uniform age.
inline double sample_target_age(Rng& rng, double source_age, double p_same, double age_min = kAgeMin,
                                double age_max = kAgeMax) {
    if (p_same < 0.0 || p_same > 1.0)
        throw std::invalid_argument("sample_target_age: p_same outside [0,1]");
    const double coin = rng.uniform();
    const double uniform_age = rng.uniform(age_min, age_max);
    return coin < p_same ? source_age : uniform_age;
}

inline std::string csv_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline std::string loss_csv_header() {
    return "step,l2,lpips,reg,id,age,cycle_total,forward_total,grand_total";
}

inline std::string loss_csv_row(std::size_t step, const LossBreakdown& b) {
    std::ostringstream os;
    os << step << ',' << csv_double(b.l2) << ',' << csv_double(b.lpips) << ','
       << csv_double(b.reg) << ',' << csv_double(b.id) << ',' << csv_double(b.age) << ','
       << csv_double(b.cycle_total) << ',' << csv_double(b.forward_total) << ','
       << csv_double(b.grand_total);
    return os.str();
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

class Trainer {
public:
    /// `cycle_ctx` lets ablations train the two passes under different
    /// lambda sets; it defaults to the forward context. The cycle
    /// combination weight is the forward context's lambda_cycle; when it is
    /// zero the cycle pass is skipped outright (identical losses and
    /// gradients, no wasted compute).
    Trainer(SamModel& model, const ToyDataset& dataset, const LossContext& ctx,
            const RunConfig& cfg, const LossContext* cycle_ctx = nullptr)
        : model_(&model),
          dataset_(&dataset),
          ctx_(&ctx),
          cycle_ctx_(cycle_ctx ? cycle_ctx : &ctx),
          cfg_(cfg),
          params_(model.aging.params()),
          rng_(derive_seed(cfg.seed, "train.loop")) {
        if (dataset.size() == 0) throw std::invalid_argument("Trainer: empty dataset");
        OptimizerConfig ocfg;
        ocfg.lr = cfg.learning_rate;
        opt_ = Optimizer(ocfg, params_);
    }

    std::size_t step_count() const { return step_; }
    double running_grand_mean() const { return steps_seen_ ? grand_sum_ / steps_seen_ : 0.0; }

    /// One optimization step over a freshly drawn batch. Only aging-encoder
    /// parameters move.
    LossBreakdown step() {
        std::vector<Tensor> grads;
        grads.reserve(params_.size());
        for (const Param& p : params_) grads.push_back(Tensor::zeros(p.tensor->shape));
        LossBreakdown mean{};

        for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
            const std::size_t idx = rng_.index(dataset_->size());
            Tensor x = dataset_->images[idx];
            if (rng_.uniform() < 0.5) x = hflip(x);  // the only augmentation
            const double source_age = predict_age(*ctx_->age_predictor, x);
            const double target_age =
                sample_target_age(rng_, source_age, cfg_.same_age_probability, cfg_.age_min,
                                  cfg_.age_max);

            Tape t;
            auto bound = bind_trainable(t, params_);
            Var xv = t.constant(x);
            SamApply fwd = sam_apply_t(t, *model_, xv, target_age, &bound);
            PassVars fobj = objective_t(t, *ctx_, xv, fwd.image, fwd.code, source_age, target_age);
            const double lambda_cycle = ctx_->weights.cycle;
            PassVars cobj;
            Var grand;
            if (lambda_cycle != 0.0) {
                SamApply cyc = sam_apply_t(t, *model_, fwd.image, source_age, &bound);
                cobj = objective_t(t, *cycle_ctx_, xv, cyc.image, cyc.code, source_age,
                                   source_age);
                grand = ad::add(t, fobj.total, ad::scale(t, cobj.total, lambda_cycle));
            } else {
                cobj.total = t.constant(0.0);
                grand = fobj.total;
            }

            const double grand_value = t.val(grand).item();
            if (!std::isfinite(grand_value) || !fobj.values.finite() || !cobj.values.finite()) {
                std::ostringstream os;
                os << "non-finite loss at step " << step_ << " (batch slot " << b
                   << "): forward=" << fobj.values.total << " cycle=" << cobj.values.total
                   << " l2=" << fobj.values.l2 << " lpips=" << fobj.values.lpips
                   << " reg=" << fobj.values.reg << " id=" << fobj.values.id
                   << " age=" << fobj.values.age;
                throw std::runtime_error(os.str());
            }

            t.backward(grand);
            for (std::size_t p = 0; p < params_.size(); ++p) {
                const Tensor& g = t.grad(bound[p]);
                for (std::size_t i = 0; i < g.size(); ++i) grads[p].v[i] += g.v[i];
            }
            mean.l2 += fobj.values.l2;
            mean.lpips += fobj.values.lpips;
            mean.reg += fobj.values.reg;
            mean.id += fobj.values.id;
            mean.age += fobj.values.age;
            mean.forward_total += fobj.values.total;
            mean.cycle_total += cobj.values.total;
            mean.delta_age += fobj.values.delta_age;
            mean.id_weight += fobj.values.id_weight;
        }

        const double inv_b = 1.0 / static_cast<double>(cfg_.batch_size);
        for (Tensor& g : grads)
            for (double& v : g.v) v *= inv_b;
        mean.l2 *= inv_b;
        mean.lpips *= inv_b;
        mean.reg *= inv_b;
        mean.id *= inv_b;
        mean.age *= inv_b;
        mean.forward_total *= inv_b;
        mean.cycle_total *= inv_b;
        mean.delta_age *= inv_b;
        mean.id_weight *= inv_b;
        mean.grand_total = mean.forward_total + ctx_->weights.cycle * mean.cycle_total;

        opt_.step(params_, grads);
        ++step_;
        ++steps_seen_;
        grand_sum_ += mean.grand_total;
        return mean;
    }

    /// Runs until cfg.steps, appending one CSV row per step. Periodic and
    /// final checkpoints land in `out_dir` when non-empty.
    void run(std::ostream* metrics, const std::string& out_dir = "") {
        while (step_ < cfg_.steps) {
            LossBreakdown b = step();
            if (metrics) *metrics << loss_csv_row(step_, b) << "\n";
            if (!out_dir.empty() && cfg_.checkpoint_every > 0 &&
                step_ % cfg_.checkpoint_every == 0 && step_ < cfg_.steps)
                save(out_dir + "/sam_step_" + std::to_string(step_) + ".ckpt");
        }
        if (!out_dir.empty()) save(out_dir + "/sam.ckpt");
    }

    Checkpoint to_checkpoint() const {
        Checkpoint ck;
        ck.meta["kind"] = "sam_model";
        ck.meta["config"] = serialize_config(cfg_);
        ck.meta["step"] = std::to_string(step_);
        ck.meta["rng"] = rng_.serialize();
        ck.meta["grand_sum"] = csv_double(grand_sum_);
        ck.meta["steps_seen"] = std::to_string(steps_seen_);
        for (const Param& p : params_) ck.arrays["aging." + p.name] = *p.tensor;
        opt_.save_state(ck, params_);
        return ck;
    }

    void save(const std::string& path) const { save_checkpoint(path, to_checkpoint()); }

    /// Restores parameters, optimizer state, step counter and the random
    /// stream; resuming replays the uninterrupted run bit-exactly.
    void restore(const Checkpoint& ck) {
        if (ck.meta_at("kind") != "sam_model")
            throw std::runtime_error("Trainer::restore: not a model checkpoint");
        for (const Param& p : params_) {
            const Tensor& t = ck.array("aging." + p.name);
            if (t.shape != p.tensor->shape)
                throw std::runtime_error("Trainer::restore: shape mismatch for " + p.name);
            *p.tensor = t;
        }
        opt_.load_state(ck, params_);
        step_ = std::stoull(ck.meta_at("step"));
        rng_.deserialize(ck.meta_at("rng"));
        grand_sum_ = std::stod(ck.meta_at("grand_sum"));
        steps_seen_ = std::stoull(ck.meta_at("steps_seen"));
    }

private:
    SamModel* model_;
    const ToyDataset* dataset_;
    const LossContext* ctx_;
    const LossContext* cycle_ctx_;
    RunConfig cfg_;
    std::vector<Param> params_;
    Optimizer opt_;
    Rng rng_;
    std::size_t step_ = 0;
    std::size_t steps_seen_ = 0;
    double grand_sum_ = 0.0;
};

/// Loads aging-encoder parameters from a model checkpoint (inference use).
inline void apply_model_checkpoint(const Checkpoint& ck, SamModel& m) {
    if (ck.meta_at("kind") != "sam_model")
        throw std::runtime_error("apply_model_checkpoint: not a model checkpoint");
    for (const Param& p : m.aging.params()) {
        const Tensor& t = ck.array("aging." + p.name);
        if (t.shape != p.tensor->shape)
            throw std::runtime_error("apply_model_checkpoint: shape mismatch for " + p.name);
        *p.tensor = t;
    }
}

// ---------------------------------------------------------------------------
// encoder serialization + inversion-encoder pretraining
// ---------------------------------------------------------------------------

inline Checkpoint encoder_to_checkpoint(EncoderHandle& e, const std::string& kind) {
    Checkpoint ck;
    ck.meta["kind"] = kind;
    ck.meta["in_channels"] = std::to_string(e.in_channels);
    ck.meta["l"] = std::to_string(e.latent_rows);
    ck.meta["d"] = std::to_string(e.style_dim);
    ck.meta["resolution"] = std::to_string(e.resolution);
    for (const Param& p : e.params()) ck.arrays[p.name] = *p.tensor;
    return ck;
}

inline EncoderHandle encoder_from_checkpoint(const Checkpoint& ck, const std::string& kind) {
    if (ck.meta_at("kind") != kind)
        throw std::runtime_error("encoder checkpoint kind mismatch: want " + kind);
    EncoderHandle e = make_encoder(std::stoull(ck.meta_at("in_channels")),
                                   std::stoull(ck.meta_at("l")), std::stoull(ck.meta_at("d")),
                                   std::stoull(ck.meta_at("resolution")), 0);
    for (const Param& p : e.params()) {
        const Tensor& t = ck.array(p.name);
        if (t.shape != p.tensor->shape)
            throw std::runtime_error("encoder checkpoint: shape mismatch for " + p.name);
        *p.tensor = t;
    }
    return e;
}

struct InverterReport {
    double holdout_mse = 0.0;  // plain per-pixel MSE on held-out scenes
};

inline double reconstruction_mse(const GeneratorHandle& gen, const EncoderHandle& inv,
                                 const Tensor& image) {
    Tensor recon = synthesize(gen, encode(inv, image));
    double acc = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double d = image.v[i] - recon.v[i];
        acc += d * d;
    }
    return acc / static_cast<double>(image.size());
}

/// Trains the inversion encoder to reconstruct through the frozen
/// generator (pixel + perceptual + a light pull toward the average latent),
/// then reports held-out reconstruction MSE. Training images mix generator
/// samples with rendered scenes so the encoder also inverts dataset images.
inline EncoderHandle pretrain_inverter(const GeneratorHandle& gen, const RunConfig& cfg,
                                       const PerceptualExtractor& percep,
                                       InverterReport* report = nullptr) {
    EncoderHandle inv = make_encoder(3, gen.spec.latent_rows, gen.spec.style_dim,
                                     gen.spec.resolution, derive_seed(cfg.seed, "inverter.init"));
    auto params = inv.params();
    OptimizerConfig ocfg;
    ocfg.lr = cfg.inverter_lr;
    Optimizer opt(ocfg, params);
    Rng rng(derive_seed(cfg.seed, "inverter.data"));
    RegionMask uniform = make_region_mask(gen.spec.resolution, 1.0, 1.0, 1.0);

    for (std::size_t s = 0; s < cfg.inverter_steps; ++s) {
        Tape t;
        auto bound = bind_trainable(t, params);
        Var loss = t.constant(0.0);
        for (std::size_t b = 0; b < cfg.inverter_batch; ++b) {
            Tensor x;
            if (rng.uniform() < 0.5) {
                x = synthesize(gen, sample_latent(gen, rng.next_u64()));
            } else {
                x = render_scene(sample_scene_params(rng), gen.spec.resolution);
            }
            Var xv = t.constant(x);
            Var code = encode_t(t, inv, xv, &bound);
            Var recon = synthesize_t(t, gen, code);
            Var lpix = pixel_loss_t(t, xv, recon, uniform);
            Var lper = ad::scale(t, perceptual_loss_t(t, percep, xv, recon), 0.6);
            Var lreg = ad::scale(t, latent_regularization_t(t, code, gen.wbar), 0.005);
            loss = ad::add(t, loss, ad::add(t, ad::add(t, lpix, lper), lreg));
        }
        loss = ad::scale(t, loss, 1.0 / static_cast<double>(cfg.inverter_batch));
        t.backward(loss);
        std::vector<Tensor> grads;
        for (Var v : bound) grads.push_back(t.grad(v));
        opt.step(params, grads);
    }

    if (report) {
        Rng hold(derive_seed(cfg.seed, "inverter.holdout"));
        double mse = 0.0;
        const int n = 48;
        for (int i = 0; i < n; ++i) {
            Tensor x;
            if (i % 2 == 0) {
                x = synthesize(gen, sample_latent(gen, hold.next_u64()));
            } else {
                x = render_scene(sample_scene_params(hold), gen.spec.resolution);
            }
            mse += reconstruction_mse(gen, inv, x);
        }
        report->holdout_mse = mse / n;
    }
    return inv;
}

}  // namespace sam
