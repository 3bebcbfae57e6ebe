#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sam/evaluation.hpp"

using namespace sam;

namespace {

struct EvalRig {
    RunConfig cfg;
    SamModel model;
    AgePredictor train_pred;
    AgePredictor eval_pred;
    IdentityEmbedder embedder;
    PerceptualExtractor perceptual;
    ToyDataset holdout;

    EvalRig()
        : cfg(tiny()),
          model(make_sam_model({4, 16, 16, 5, 32}, 61)),
          train_pred(make_age_predictor(16, 6, 62)),
          eval_pred(make_age_predictor(16, 8, 63)),
          embedder(make_identity_embedder(0.7, 16, 8, 64)),
          perceptual(make_perceptual(65)),
          holdout(make_scene_dataset(16, 4, 66)) {}

    static RunConfig tiny() {
        RunConfig c;
        c.resolution = 16;
        c.latent_rows = 4;
        c.style_dim = 16;
        c.gen_seed = 5;
        c.n_avg = 32;
        c.steps = 2;
        c.batch_size = 2;
        c.dataset_size = 6;
        c.dataset_seed = 67;
        return c;
    }

    EvalOracles oracles() const {
        return {&train_pred, &eval_pred, &embedder, &perceptual};
    }
};

}  // namespace

TEST_CASE("select_nearest_age: direct examples and tie rule") {
    CHECK(select_nearest_age({10, 20, 30}, 21) == 1);
    CHECK(select_nearest_age({20, 22}, 21) == 0);  // tie -> lowest index
    CHECK_THROWS_AS(select_nearest_age({}, 10), std::invalid_argument);
}

TEST_CASE("select_nearest_age: matches exhaustive scan on 1000 tie-heavy instances") {
    Rng rng(71);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.index(80);
        std::vector<double> predicted(n);
        for (double& p : predicted) p = 5.0 + static_cast<double>(rng.index(20)) * 5.0;
        const double target = 5.0 + static_cast<double>(rng.index(96));

        std::size_t best = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (std::abs(predicted[i] - target) < std::abs(predicted[best] - target)) best = i;
        REQUIRE(select_nearest_age(predicted, target) == best);
    }
}

TEST_CASE("candidate_grid: span, endpoints, singleton subset") {
    auto g80 = candidate_grid(80);
    REQUIRE(g80.size() == 80);
    CHECK(g80.front() == 5.0);
    CHECK(g80.back() == 100.0);
    for (std::size_t i = 1; i < g80.size(); ++i) CHECK(g80[i] > g80[i - 1]);
    auto g1 = candidate_grid(1);
    REQUIRE(g1.size() == 1);
    CHECK(g1[0] == 5.0);  // subset of every larger grid
    CHECK_THROWS_AS(candidate_grid(0), std::invalid_argument);
}

TEST_CASE("selection over an exact grid has zero error at on-grid targets") {
    auto grid = candidate_grid(80);
    for (std::size_t j : {std::size_t{0}, std::size_t{17}, std::size_t{79}}) {
        const std::size_t sel = select_nearest_age(grid, grid[j]);
        CHECK(std::abs(grid[sel] - grid[j]) == 0.0);
    }
}

TEST_CASE("aging_accuracy: rows per target, single-candidate dominates") {
    EvalRig rig;
    std::vector<double> targets = {10, 50, 90};
    auto full = aging_accuracy(rig.model, rig.eval_pred, rig.holdout, targets, 16);
    REQUIRE(full.size() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(full[r].target == targets[r]);
        CHECK(full[r].mae >= 0.0);
    }
    auto single = aging_accuracy(rig.model, rig.eval_pred, rig.holdout, targets, 1);
    for (std::size_t r = 0; r < 3; ++r) CHECK(single[r].mae >= full[r].mae - 1e-12);
}

TEST_CASE("aging_accuracy: deterministic") {
    EvalRig rig;
    auto a = aging_accuracy(rig.model, rig.eval_pred, rig.holdout, {30, 70}, 8);
    auto b = aging_accuracy(rig.model, rig.eval_pred, rig.holdout, {30, 70}, 8);
    for (std::size_t r = 0; r < a.size(); ++r) CHECK(a[r].mae == b[r].mae);
}

TEST_CASE("identity_vs_age_gap: one row per gap, bounded cosines") {
    EvalRig rig;
    std::vector<double> gaps = {0, 20, 40, 60};
    auto rows = identity_vs_age_gap(rig.model, rig.train_pred, rig.embedder, rig.holdout, gaps);
    REQUIRE(rows.size() == 4);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        CHECK(rows[r].gap == gaps[r]);
        CHECK(rows[r].mean_cosine <= 1.0 + 1e-9);
        CHECK(rows[r].mean_cosine >= -1.0 - 1e-9);
    }
}

TEST_CASE("spearman_rho: monotone, anti-monotone, tied") {
    CHECK(spearman_rho({1, 2, 3, 4}, {10, 20, 25, 40}) == Catch::Approx(1.0));
    CHECK(spearman_rho({1, 2, 3, 4}, {9, 7, 7, 1}) < 0.0);
    CHECK(spearman_rho({1, 2, 3, 4}, {4, 3, 2, 1}) == Catch::Approx(-1.0));
    CHECK(spearman_rho({1, 2, 3, 4}, {5, 5, 5, 5}) == 0.0);
}

TEST_CASE("ablation_run: one row per variant") {
    EvalRig rig;
    auto rows = ablation_run(rig.cfg, rig.oracles(), make_scene_dataset(16, 6, 67), rig.holdout,
                             {30, 70}, {0, 40}, {{"sam", SamMode::residual}}, 8);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].name == "sam");
    CHECK(rows[0].aging.size() == 2);
    CHECK(rows[0].identity.size() == 2);
}

TEST_CASE("ablation: all-zero lambdas leave the model at initialization") {
    EvalRig rig;
    AblationVariant dead{"dead", SamMode::residual, false, false, false, true};
    auto rows = ablation_run(rig.cfg, rig.oracles(), make_scene_dataset(16, 6, 67), rig.holdout,
                             {30, 70}, {0, 40}, {dead}, 8);

    // an untrained model with the same seeds must produce identical metrics
    SamModel fresh = make_sam_model({rig.cfg.latent_rows, rig.cfg.style_dim, rig.cfg.resolution,
                                     rig.cfg.gen_seed, rig.cfg.n_avg},
                                    rig.cfg.seed, SamMode::residual);
    auto aging = aging_accuracy(fresh, rig.eval_pred, rig.holdout, {30, 70}, 8);
    auto ident = identity_vs_age_gap(fresh, rig.train_pred, rig.embedder, rig.holdout, {0, 40});
    for (std::size_t r = 0; r < aging.size(); ++r)
        CHECK(rows[0].aging[r].mae == aging[r].mae);
    for (std::size_t r = 0; r < ident.size(); ++r)
        CHECK(rows[0].identity[r].mean_cosine == ident[r].mean_cosine);
}

TEST_CASE("evaluation CSV exports") {
    write_aging_csv("/tmp/sam_eval_aging.csv", {{10, 3.5}, {90, 7.25}});
    std::ifstream f("/tmp/sam_eval_aging.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "target,mae");
    std::getline(f, line);
    CHECK(line == "10,3.5");

    write_identity_csv("/tmp/sam_eval_id.csv", {{0, 1.0}, {40, 0.5}});
    std::ifstream f2("/tmp/sam_eval_id.csv");
    std::getline(f2, line);
    CHECK(line == "gap,mean_cosine");

    AblationRow row;
    row.name = "sam";
    row.aging = {{35, 1.0}};
    row.identity = {{0, 0.9}};
    row.mean_identity_cosine = 0.9;
    write_ablation_csv("/tmp/sam_eval_abl.csv", {row});
    std::ifstream f3("/tmp/sam_eval_abl.csv");
    std::getline(f3, line);
    CHECK(line == "variant,mae_35,cos_0,mean_cosine");
}
