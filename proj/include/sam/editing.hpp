#pragma once
// Editing on top of a trained model: style mixing on a row range (fine rows
// carry hue in the toy generator) and rectangular patch pasting, with the
// re-encoding pass doing the fusion.

#include <vector>

#include "sam/encoder.hpp"

namespace sam {

struct StyleLayerRange {
    std::size_t start = 0;
    std::size_t end = 0;  // inclusive
};

/// Rows in [start, end] from the reference, everything else from the base.
inline LatentCode style_mix(const LatentCode& base, const LatentCode& reference,
                            StyleLayerRange layers) {
    if (!base.same_shape(reference)) throw std::invalid_argument("style_mix: shape mismatch");
    if (base.ndim() != 2) throw std::invalid_argument("style_mix: codes must be [L,D]");
    if (layers.start > layers.end || layers.end >= base.dim(0))
        throw std::invalid_argument("style_mix: layer range out of bounds");
    LatentCode out = base;
    const std::size_t D = base.dim(1);
    std::copy(reference.v.begin() + layers.start * D,
              reference.v.begin() + (layers.end + 1) * D, out.v.begin() + layers.start * D);
    return out;
}

/// Mixing range used by the multimodal pipeline: literal rows 8-9 in the
/// 18-row configuration, the fine third of rows otherwise.
inline StyleLayerRange default_mix_range(std::size_t latent_rows) {
    if (latent_rows == 18) return {8, 9};
    const auto split = row_split(latent_rows);
    return {split[0] + split[1], latent_rows - 1};
}

/// Age-transform the input, age-transform each reference to the same
/// target, replace the mixing rows with the reference's, synthesize. With
/// the input itself as reference this reproduces the plain transform
/// bit-exactly.
inline std::vector<Tensor> multimodal_transform(const SamModel& m, const Tensor& image,
                                                double target_age,
                                                const std::vector<Tensor>& references,
                                                StyleLayerRange layers) {
    if (references.empty()) throw std::invalid_argument("multimodal_transform: no references");
    const LatentCode base = sam_code(m, image, target_age);
    std::vector<Tensor> out;
    out.reserve(references.size());
    for (const Tensor& ref : references) {
        const LatentCode ref_code = sam_code(m, ref, target_age);
        out.push_back(synthesize(m.generator, style_mix(base, ref_code, layers)));
    }
    return out;
}

/// Rectangular overwrite; downstream callers re-encode through the model to
/// fuse the patch. A zero-area patch leaves the image untouched.
inline Tensor patch_edit(const Tensor& image, const Tensor& patch, std::size_t x, std::size_t y) {
    validate_image(image);
    if (patch.ndim() != 3 || patch.dim(0) != 3)
        throw std::invalid_argument("patch_edit: patch must be [3,h,w]");
    const std::size_t H = image.dim(1), W = image.dim(2);
    const std::size_t ph = patch.dim(1), pw = patch.dim(2);
    if (ph == 0 || pw == 0) return image;
    if (y + ph > H || x + pw > W) throw std::invalid_argument("patch_edit: out of bounds");
    Tensor out = image;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < ph; ++j)
            for (std::size_t i = 0; i < pw; ++i) out.at(c, y + j, x + i) = patch.at(c, j, i);
    return out;
}

inline Tensor read_patch(const Tensor& image, std::size_t x, std::size_t y, std::size_t h,
                         std::size_t w) {
    if (y + h > image.dim(1) || x + w > image.dim(2))
        throw std::invalid_argument("read_patch: out of bounds");
    Tensor out({3, h, w});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < h; ++j)
            for (std::size_t i = 0; i < w; ++i) out.at(c, j, i) = image.at(c, y + j, x + i);
    return out;
}

}  // namespace sam
