#pragma once
// Shared building blocks for the small convolutional networks: 3x3 conv
// layers, parameter registries (name -> tensor) used by checkpoints and the
// optimizer, and the binding cursor that swaps frozen weights for tape
// leaves when a network is being trained.

#include <string>
#include <vector>

#include "sam/autodiff.hpp"
#include "sam/rng.hpp"
#include "sam/tensor.hpp"

namespace sam {

struct ConvLayer {
    Tensor w;  // [OC,IC,3,3]
    Tensor b;  // [OC]
    std::size_t stride = 1;
};

inline ConvLayer make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t stride, Rng& rng,
                           double scale = 1.0) {
    ConvLayer c;
    const double std_w = scale / std::sqrt(static_cast<double>(in_ch) * 9.0);
    c.w = Tensor::randn({out_ch, in_ch, 3, 3}, rng, std_w);
    c.b = Tensor::zeros({out_ch});
    c.stride = stride;
    return c;
}

struct Param {
    std::string name;
    Tensor* tensor;
};

inline void register_conv(std::vector<Param>& out, const std::string& prefix, ConvLayer& c) {
    out.push_back({prefix + ".w", &c.w});
    out.push_back({prefix + ".b", &c.b});
}

inline std::uint64_t params_checksum(const std::vector<Param>& params) {
    std::uint64_t h = 0x811c9dc5;
    for (const Param& p : params) h = combine_checksum(h, checksum(*p.tensor));
    return h;
}

/// Walks a parameter list that has been mirrored onto the tape as leaves.
/// When inactive, forwards fall back to the frozen tensors.
class BindCursor {
public:
    BindCursor() = default;
    explicit BindCursor(const std::vector<Var>* vars) : vars_(vars) {}
    bool active() const { return vars_ != nullptr; }
    Var take() {
        if (i_ >= vars_->size()) throw std::logic_error("BindCursor: parameter list exhausted");
        return (*vars_)[i_++];
    }
    void finish() const {
        if (vars_ && i_ != vars_->size())
            throw std::logic_error("BindCursor: unconsumed parameters");
    }

private:
    const std::vector<Var>* vars_ = nullptr;
    std::size_t i_ = 0;
};

inline Var conv_fwd(Tape& t, Var x, const ConvLayer& c, BindCursor& bind) {
    if (bind.active()) {
        Var w = bind.take();
        Var b = bind.take();
        return ad::conv2d(t, x, w, b, c.stride, 1);
    }
    return ad::conv2d(t, x, c.w, c.b, c.stride, 1);
}

inline Var affine_fwd(Tape& t, Var x, const Tensor& w, const Tensor& b, BindCursor& bind) {
    if (bind.active()) {
        Var wv = bind.take();
        Var bv = bind.take();
        return ad::affine(t, x, wv, bv);
    }
    return ad::affine(t, x, w, b);
}

/// Mirrors every parameter onto the tape as a gradient-carrying leaf.
inline std::vector<Var> bind_trainable(Tape& t, const std::vector<Param>& params) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Param& p : params) vars.push_back(t.leaf(*p.tensor, true));
    return vars;
}

}  // namespace sam
