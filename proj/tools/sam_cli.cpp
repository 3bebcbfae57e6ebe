// Command-line front end: pretraining, training, transformation, analysis
// and evaluation over a working directory of artifacts.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sam/sam.hpp"

namespace {

std::string default_out_dir() {
    const char* env = std::getenv("SAM_OUT_DIR");
    return env && *env ? std::string(env) : std::string("sam_out");
}

// "a:b:step" -> inclusive grid
std::vector<double> parse_grid(const std::string& spec) {
    const auto c1 = spec.find(':');
    const auto c2 = spec.find(':', c1 == std::string::npos ? 0 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw CLI::ValidationError("grid", "expected a:b:step, got '" + spec + "'");
    const double a = std::stod(spec.substr(0, c1));
    const double b = std::stod(spec.substr(c1 + 1, c2 - c1 - 1));
    const double step = std::stod(spec.substr(c2 + 1));
    return sam::age_grid(a, b, step);
}

std::pair<std::size_t, std::size_t> parse_xy(const std::string& spec) {
    const auto comma = spec.find(',');
    if (comma == std::string::npos)
        throw CLI::ValidationError("--at", "expected x,y, got '" + spec + "'");
    return {std::stoull(spec.substr(0, comma)), std::stoull(spec.substr(comma + 1))};
}

std::pair<std::size_t, std::size_t> parse_layers(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos)
        throw CLI::ValidationError("--layers", "expected a:b, got '" + spec + "'");
    return {std::stoull(spec.substr(0, colon)), std::stoull(spec.substr(colon + 1))};
}

struct Common {
    std::string config;
    std::string out = default_out_dir();
    std::optional<std::uint64_t> seed;

    sam::RunConfig load() const {
        sam::RunConfig cfg = config.empty() ? sam::RunConfig{} : sam::load_config(config);
        if (seed) cfg.seed = *seed;
        return cfg;
    }

    /// Artifact-reading commands: an explicit --config wins, otherwise the
    /// config the training stage wrote next to the checkpoint.
    sam::RunConfig load_from(const std::string& dir) const {
        if (config.empty() && std::filesystem::exists(dir + "/config.txt")) {
            sam::RunConfig cfg = sam::load_config(dir + "/config.txt");
            if (seed) cfg.seed = *seed;
            return cfg;
        }
        return load();
    }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "key=value config file");
    cmd->add_option("--seed", c.seed, "override the config seed");
    cmd->add_option("--out", c.out, "working directory for artifacts")
        ->default_str(default_out_dir());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sam: style-based age transformation, desk scale"};
    app.require_subcommand(1);

    Common c;

    auto* cmd_oracles = app.add_subcommand("pretrain-oracles",
                                           "train and freeze the age/identity stand-ins");
    add_common(cmd_oracles, c);

    auto* cmd_inverter =
        app.add_subcommand("pretrain-inverter", "train and freeze the inversion encoder");
    add_common(cmd_inverter, c);

    auto* cmd_train = app.add_subcommand("train", "train the aging encoder");
    add_common(cmd_train, c);
    std::string resume;
    cmd_train->add_option("--resume", resume, "checkpoint to resume from");
    std::optional<std::size_t> steps_override;
    cmd_train->add_option("--steps", steps_override, "override config steps");

    auto* cmd_transform = app.add_subcommand("transform", "age-transform one image");
    std::string in_path, out_path, dir_flag;
    double age = 0.0;
    cmd_transform->add_option("--config", c.config, "key=value config file");
    cmd_transform->add_option("--seed", c.seed, "override the config seed");
    cmd_transform->add_option("--in", in_path, "input PNG")->required();
    cmd_transform->add_option("--age", age, "target age in years")->required();
    cmd_transform->add_option("--out", out_path, "output PNG")->required();
    cmd_transform->add_option("--dir", dir_flag, "artifact directory (default $SAM_OUT_DIR)");

    auto* cmd_trace = app.add_subcommand("trace", "latent path traces over held-out images");
    add_common(cmd_trace, c);
    std::string ages_spec = "5:100:5";
    std::size_t trace_count = 5;
    cmd_trace->add_option("--ages", ages_spec, "target grid a:b:step");
    cmd_trace->add_option("--count", trace_count, "number of held-out images");

    auto* cmd_fit = app.add_subcommand("fit-linear", "fit the linear age direction baseline");
    add_common(cmd_fit, c);
    double threshold = 50.0;
    cmd_fit->add_option("--threshold", threshold, "age binarization threshold");

    auto* cmd_traverse = app.add_subcommand("traverse", "walk a sampled latent along a direction");
    add_common(cmd_traverse, c);
    std::size_t trav_steps = 4;
    double trav_stride = 1.0;
    std::uint64_t trav_seed = 1;
    cmd_traverse->add_option("--steps", trav_steps, "steps on each side of the base code");
    cmd_traverse->add_option("--stride", trav_stride, "latent step size");
    cmd_traverse->add_option("--sample-seed", trav_seed, "seed of the base latent sample");

    auto* cmd_mix = app.add_subcommand("mix", "style-mix references onto a transformed image");
    add_common(cmd_mix, c);
    std::vector<std::string> ref_paths;
    std::string layers_spec;
    std::string mix_in;
    double mix_age = 52.5;
    cmd_mix->add_option("--in", mix_in, "input PNG")->required();
    cmd_mix->add_option("--age", mix_age, "target age in years");
    cmd_mix->add_option("--refs", ref_paths, "reference PNGs")->required()->expected(-1);
    cmd_mix->add_option("--layers", layers_spec, "style row range a:b (default: fine rows)");

    auto* cmd_patch = app.add_subcommand("patch-edit", "paste a patch, optionally re-encode");
    std::string patch_path, at_spec, patch_in, patch_out;
    std::optional<double> patch_age;
    cmd_patch->add_option("--config", c.config, "key=value config file");
    cmd_patch->add_option("--seed", c.seed, "override the config seed");
    cmd_patch->add_option("--in", patch_in, "input PNG")->required();
    cmd_patch->add_option("--patch", patch_path, "patch PNG")->required();
    cmd_patch->add_option("--at", at_spec, "paste position x,y")->required();
    cmd_patch->add_option("--out", patch_out, "output PNG")->required();
    cmd_patch->add_option("--age", patch_age,
                          "re-encode through the model at this target age");
    cmd_patch->add_option("--dir", dir_flag, "artifact directory (default $SAM_OUT_DIR)");

    auto* cmd_eval_aging = app.add_subcommand("eval-aging", "per-target aging accuracy");
    add_common(cmd_eval_aging, c);
    std::string targets_spec = "10:90:20";
    std::size_t candidates = 80;
    cmd_eval_aging->add_option("--targets", targets_spec, "target grid a:b:step");
    cmd_eval_aging->add_option("--candidates", candidates, "candidate grid size");

    auto* cmd_eval_id = app.add_subcommand("eval-identity", "identity similarity vs age gap");
    add_common(cmd_eval_id, c);
    std::string gaps_spec = "0:60:20";
    cmd_eval_id->add_option("--gaps", gaps_spec, "gap grid a:b:step");

    auto* cmd_ablate = app.add_subcommand("ablate", "train and compare formulation variants");
    add_common(cmd_ablate, c);
    std::string abl_targets = "10:90:20", abl_gaps = "0:60:20";
    std::size_t abl_candidates = 80;
    cmd_ablate->add_option("--targets", abl_targets, "target grid a:b:step");
    cmd_ablate->add_option("--gaps", abl_gaps, "gap grid a:b:step");
    cmd_ablate->add_option("--candidates", abl_candidates, "candidate grid size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    const std::string artifact_dir = dir_flag.empty() ? c.out : dir_flag;

    try {
        if (*cmd_oracles) {
            sam::RunConfig cfg = c.load();
            auto rep = sam::run_pretrain_oracles(cfg, c.out);
            std::cout << "age predictor holdout MAE: " << rep.train_predictor.holdout_mae
                      << " years\n"
                      << "eval predictor holdout MAE: " << rep.eval_predictor.holdout_mae
                      << " years\n"
                      << "embedder cosine (same identity / other identity): "
                      << rep.embedder.positive_cosine << " / " << rep.embedder.negative_cosine
                      << "\n";
        } else if (*cmd_inverter) {
            sam::RunConfig cfg = c.load();
            auto rep = sam::run_pretrain_inverter(cfg, c.out);
            std::cout << "inverter holdout reconstruction MSE: " << rep.holdout_mse << "\n";
        } else if (*cmd_train) {
            sam::RunConfig cfg = c.load();
            if (steps_override) cfg.steps = *steps_override;
            sam::run_train(cfg, c.out, resume);
            std::cout << "trained " << cfg.steps << " steps -> " << c.out << "/sam.ckpt\n";
        } else if (*cmd_transform) {
            sam::RunConfig cfg = c.load_from(artifact_dir);
            sam::SamModel model = sam::load_trained_model(cfg, artifact_dir);
            sam::Tensor img = sam::read_png(in_path);
            sam::write_png(out_path, sam::sam_transform(model, img, age));
            std::cout << out_path << "\n";
        } else if (*cmd_trace) {
            sam::RunConfig cfg = c.load_from(c.out);
            auto traces = sam::run_trace(cfg, c.out, parse_grid(ages_spec), trace_count);
            std::cout << traces.size() << " traces -> " << c.out << "\n";
        } else if (*cmd_fit) {
            sam::RunConfig cfg = c.load_from(c.out);
            sam::run_fit_linear(cfg, c.out, threshold);
            std::cout << c.out << "/direction.ckpt\n";
        } else if (*cmd_traverse) {
            sam::RunConfig cfg = c.load_from(c.out);
            auto r = sam::run_traverse(cfg, c.out, trav_steps, trav_stride, trav_seed);
            std::cout << r.images.size() << " frames -> " << c.out << "\n";
        } else if (*cmd_mix) {
            sam::RunConfig cfg = c.load_from(c.out);
            sam::SamModel model = sam::load_trained_model(cfg, c.out);
            sam::Tensor img = sam::read_png(mix_in);
            std::vector<sam::Tensor> refs;
            for (const auto& p : ref_paths) refs.push_back(sam::read_png(p));
            sam::StyleLayerRange range = sam::default_mix_range(cfg.latent_rows);
            if (!layers_spec.empty()) {
                auto [a, b] = parse_layers(layers_spec);
                range = {a, b};
            }
            auto outs = sam::multimodal_transform(model, img, mix_age, refs, range);
            for (std::size_t i = 0; i < outs.size(); ++i)
                sam::write_png(c.out + "/mix_" + std::to_string(i) + ".png", outs[i]);
            std::cout << outs.size() << " images -> " << c.out << "\n";
        } else if (*cmd_patch) {
            sam::RunConfig cfg = c.load_from(artifact_dir);
            sam::Tensor img = sam::read_png(patch_in);
            sam::Tensor patch = sam::read_png(patch_path);
            auto [x, y] = parse_xy(at_spec);
            sam::Tensor edited = sam::patch_edit(img, patch, x, y);
            if (patch_age) {
                sam::SamModel model = sam::load_trained_model(cfg, artifact_dir);
                edited = sam::sam_transform(model, edited, *patch_age);
            }
            sam::write_png(patch_out, edited);
            std::cout << patch_out << "\n";
        } else if (*cmd_eval_aging) {
            sam::RunConfig cfg = c.load_from(c.out);
            auto rows = sam::run_eval_aging(cfg, c.out, parse_grid(targets_spec), candidates);
            for (const auto& r : rows)
                std::cout << "target " << r.target << ": MAE " << r.mae << " years\n";
        } else if (*cmd_eval_id) {
            sam::RunConfig cfg = c.load_from(c.out);
            auto rows = sam::run_eval_identity(cfg, c.out, parse_grid(gaps_spec));
            for (const auto& r : rows)
                std::cout << "gap " << r.gap << ": mean cosine " << r.mean_cosine << "\n";
        } else if (*cmd_ablate) {
            sam::RunConfig cfg = c.load();
            auto rows = sam::run_ablate(cfg, c.out, parse_grid(abl_targets), parse_grid(abl_gaps),
                                        sam::default_ablation_variants(), abl_candidates);
            for (const auto& r : rows)
                std::cout << r.name << ": mean identity cosine " << r.mean_identity_cosine
                          << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
