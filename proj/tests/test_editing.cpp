#include <catch2/catch_amalgamated.hpp>

#include "sam/editing.hpp"

using namespace sam;

namespace {

GeneratorSpec toy_spec() { return {8, 64, 32, 7, 64}; }

}  // namespace

TEST_CASE("style_mix: self-mix identity, full replacement, idempotence") {
    GeneratorHandle g = make_generator(toy_spec());
    LatentCode a = sample_latent(g, 1);
    LatentCode b = sample_latent(g, 2);

    CHECK(style_mix(a, a, {2, 5}).bit_equal(a));
    CHECK(style_mix(a, b, {0, 7}).bit_equal(b));

    LatentCode mixed = style_mix(a, b, {3, 5});
    CHECK(style_mix(mixed, b, {3, 5}).bit_equal(mixed));
}

TEST_CASE("style_mix: row-wise provenance and bounds") {
    Rng rng(5);
    LatentCode a = Tensor::randn({8, 64}, rng);
    LatentCode b = Tensor::randn({8, 64}, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t start = rng.index(8);
        const std::size_t end = start + rng.index(8 - start);
        LatentCode m = style_mix(a, b, {start, end});
        for (std::size_t r = 0; r < 8; ++r) {
            const LatentCode& src = (r >= start && r <= end) ? b : a;
            for (std::size_t d = 0; d < 64; ++d) REQUIRE(m.at(r, d) == src.at(r, d));
        }
    }
    CHECK_THROWS_AS(style_mix(a, b, {5, 8}), std::invalid_argument);
    CHECK_THROWS_AS(style_mix(a, b, {6, 5}), std::invalid_argument);
    CHECK_THROWS_AS(style_mix(a, Tensor::zeros({4, 64}), {0, 1}), std::invalid_argument);
}

TEST_CASE("default mix range: literal rows 8-9 at paper shape, fine third otherwise") {
    StyleLayerRange paper = default_mix_range(18);
    CHECK(paper.start == 8);
    CHECK(paper.end == 9);
    StyleLayerRange toy = default_mix_range(8);
    CHECK(toy.start == 6);
    CHECK(toy.end == 7);
}

TEST_CASE("fine-row mixing changes hue, leaves ring frequency untouched") {
    GeneratorHandle g = make_generator(toy_spec());
    StyleLayerRange fine = default_mix_range(8);
    int hue_changed = 0;
    for (int i = 0; i < 20; ++i) {
        LatentCode base = sample_latent(g, 100 + i);
        LatentCode ref = sample_latent(g, 200 + i);
        LatentCode mixed = style_mix(base, ref, fine);
        ToySceneParams pb = scene_params(g, base);
        ToySceneParams pr = scene_params(g, ref);
        ToySceneParams pm = scene_params(g, mixed);
        CHECK(pm.ring_frequency == pb.ring_frequency);  // middle rows untouched
        CHECK(pm.center_x == pb.center_x);
        CHECK(pm.hue == pr.hue);  // fine rows fully replaced
        if (pm.hue != pb.hue) ++hue_changed;
    }
    CHECK(hue_changed >= 19);  // distinct references almost surely move the hue
}

TEST_CASE("multimodal_transform: self-reference reproduces the plain transform") {
    SamModel m = make_sam_model(toy_spec(), 9);
    Rng rng(3);
    Tensor x = render_scene(sample_scene_params(rng), 32);
    Tensor plain = sam_transform(m, x, 64.0);
    auto outs = multimodal_transform(m, x, 64.0, {x}, default_mix_range(8));
    REQUIRE(outs.size() == 1);
    CHECK(outs[0].bit_equal(plain));
}

TEST_CASE("multimodal_transform: one output per reference") {
    SamModel m = make_sam_model(toy_spec(), 9);
    Rng rng(4);
    Tensor x = render_scene(sample_scene_params(rng), 32);
    std::vector<Tensor> refs;
    for (int i = 0; i < 3; ++i) refs.push_back(render_scene(sample_scene_params(rng), 32));
    auto outs = multimodal_transform(m, x, 30.0, refs, default_mix_range(8));
    CHECK(outs.size() == 3);
    for (const auto& o : outs) validate_image(o, 32);
    CHECK_THROWS_AS(multimodal_transform(m, x, 30.0, {}, default_mix_range(8)),
                    std::invalid_argument);
}

TEST_CASE("patch_edit: zero-area no-op, bit-exact readback, bounds") {
    Rng rng(6);
    Tensor img = render_scene(sample_scene_params(rng), 32);
    Tensor empty({3, 0, 0});
    CHECK(patch_edit(img, empty, 5, 5).bit_equal(img));

    Tensor patch({3, 6, 4});
    for (double& v : patch.v) v = rng.uniform(-1, 1);
    Tensor edited = patch_edit(img, patch, 10, 20);
    CHECK(read_patch(edited, 10, 20, 6, 4).bit_equal(patch));
    // pixels outside the rectangle untouched
    CHECK(edited.at(0, 0, 0) == img.at(0, 0, 0));
    CHECK(edited.at(2, 31, 31) == img.at(2, 31, 31));

    CHECK_THROWS_AS(patch_edit(img, patch, 30, 30), std::invalid_argument);
}
