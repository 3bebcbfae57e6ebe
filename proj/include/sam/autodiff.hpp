#pragma once
// Tape-based reverse-mode autodiff over Tensor. One tape per forward pass;
// nodes are appended in evaluation order, so walking the tape backwards is a
// valid topological order. Gradients are only allocated (and only computed)
// for nodes that can reach a differentiable leaf; frozen networks run
// through the same ops with constant weights and cost no gradient work.

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "sam/tensor.hpp"

namespace sam {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    struct Node {
        Tensor val;
        Tensor grad;  // allocated iff needs_grad
        bool needs_grad = false;
        std::function<void(Tape&)> back;  // empty for leaves/constants
    };

    void reset() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

    const Tensor& val(Var x) const { return nodes_[x.id].val; }
    Tensor& grad(Var x) { return nodes_[x.id].grad; }
    const Tensor& grad(Var x) const { return nodes_[x.id].grad; }
    bool needs_grad(Var x) const { return nodes_[x.id].needs_grad; }

    Var leaf(Tensor t, bool requires_grad) {
        Node n;
        n.val = std::move(t);
        n.needs_grad = requires_grad;
        if (requires_grad) n.grad = Tensor::zeros(n.val.shape);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Tensor t) { return leaf(std::move(t), false); }
    Var constant(double x) { return leaf(Tensor::scalar(x), false); }

    Var make(Tensor value, bool needs, std::function<void(Tape&)> back) {
        Node n;
        n.val = std::move(value);
        n.needs_grad = needs;
        if (needs) {
            n.grad = Tensor::zeros(n.val.shape);
            n.back = std::move(back);
        }
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    /// Seeds d(root)/d(root) = 1 and propagates to every leaf that requires
    /// gradient. `root` must be a scalar.
    void backward(Var root) {
        if (nodes_[root.id].val.size() != 1)
            throw std::logic_error("Tape::backward: root is not a scalar");
        if (!nodes_[root.id].needs_grad) return;
        nodes_[root.id].grad.v[0] = 1.0;
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.back) n.back(*this);
        }
    }

private:
    // Contiguous storage; ops must not hold val()/grad() references across
    // node creation (references move when the vector grows).
    std::vector<Node> nodes_;
};

namespace ad {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

inline Var add(Tape& t, Var a, Var b) {
    check_same_shape(t.val(a), t.val(b), "add");
    Tensor out = t.val(a) + t.val(b);
    bool needs = t.needs_grad(a) || t.needs_grad(b);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), needs, [a, b, r](Tape& tp) {
        const Tensor& g = tp.grad(r);
        if (tp.needs_grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i] += g.v[i];
        if (tp.needs_grad(b))
            for (std::size_t i = 0; i < g.size(); ++i) tp.grad(b).v[i] += g.v[i];
    });
}

inline Var sub(Tape& t, Var a, Var b) {
    check_same_shape(t.val(a), t.val(b), "sub");
    Tensor out = t.val(a) - t.val(b);
    bool needs = t.needs_grad(a) || t.needs_grad(b);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), needs, [a, b, r](Tape& tp) {
        const Tensor& g = tp.grad(r);
        if (tp.needs_grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i] += g.v[i];
        if (tp.needs_grad(b))
            for (std::size_t i = 0; i < g.size(); ++i) tp.grad(b).v[i] -= g.v[i];
    });
}

inline Var mul(Tape& t, Var a, Var b) {
    check_same_shape(t.val(a), t.val(b), "mul");
    Tensor out = t.val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= t.val(b).v[i];
    bool needs = t.needs_grad(a) || t.needs_grad(b);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), needs, [a, b, r](Tape& tp) {
        const Tensor& g = tp.grad(r);
        if (tp.needs_grad(a)) {
            const Tensor& bv = tp.val(b);
            for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i] += g.v[i] * bv.v[i];
        }
        if (tp.needs_grad(b)) {
            const Tensor& av = tp.val(a);
            for (std::size_t i = 0; i < g.size(); ++i) tp.grad(b).v[i] += g.v[i] * av.v[i];
        }
    });
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

inline Var scale(Tape& t, Var a, double c) {
    Tensor out = t.val(a) * c;
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), t.needs_grad(a), [a, c, r](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const Tensor& g = tp.grad(r);
        for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i] += c * g.v[i];
    });
}

inline Var offset(Tape& t, Var a, double c) {
    Tensor out = t.val(a);
    for (double& x : out.v) x += c;
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), t.needs_grad(a), [a, r](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const Tensor& g = tp.grad(r);
        for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i] += g.v[i];
    });
}

namespace detail {
template <class F, class DF>
Var unary(Tape& t, Var a, F f, DF df) {
    Tensor out = t.val(a);
    for (double& x : out.v) x = f(x);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), t.needs_grad(a), [a, r, df](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const Tensor& g = tp.grad(r);
        const Tensor& x = tp.val(a);
        const Tensor& y = tp.val(r);
        for (std::size_t i = 0; i < g.size(); ++i)
            tp.grad(a).v[i] += df(x.v[i], y.v[i]) * g.v[i];
    });
}
}  // namespace detail

inline Var tanh_t(Tape& t, Var a) {
    return detail::unary(t, a, [](double x) { return std::tanh(x); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid_t(Tape& t, Var a) {
    return detail::unary(t, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                         [](double, double y) { return y * (1.0 - y); });
}

inline Var sin_t(Tape& t, Var a) {
    return detail::unary(t, a, [](double x) { return std::sin(x); },
                         [](double x, double) { return std::cos(x); });
}

inline Var cos_t(Tape& t, Var a) {
    return detail::unary(t, a, [](double x) { return std::cos(x); },
                         [](double x, double) { return -std::sin(x); });
}

inline Var exp_t(Tape& t, Var a) {
    return detail::unary(t, a, [](double x) { return std::exp(x); },
                         [](double, double y) { return y; });
}

inline Var relu_t(Tape& t, Var a) {
    return detail::unary(t, a, [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var recip(Tape& t, Var a) {
    return detail::unary(t, a, [](double x) { return 1.0 / x; },
                         [](double, double y) { return -y * y; });
}

/// sqrt(x + shift). With shift 0 the derivative at x == 0 is defined as 0
/// (subgradient choice) so exact self-comparison losses stay finite.
inline Var sqrt_shift(Tape& t, Var a, double shift) {
    return detail::unary(t, a, [shift](double x) { return std::sqrt(x + shift); },
                         [shift](double x, double y) {
                             return (x + shift) == 0.0 ? 0.0 : 0.5 / y;
                         });
}

// ---------------------------------------------------------------------------
// scalar broadcast (s is a 1-element Var)
// ---------------------------------------------------------------------------

namespace detail {
inline void check_scalar(const Tensor& s, const char* op) {
    if (s.size() != 1) throw std::invalid_argument(std::string(op) + ": broadcast arg not scalar");
}
}  // namespace detail

inline Var add_b(Tape& t, Var a, Var s) {
    detail::check_scalar(t.val(s), "add_b");
    Tensor out = t.val(a);
    const double sv = t.val(s).v[0];
    for (double& x : out.v) x += sv;
    bool needs = t.needs_grad(a) || t.needs_grad(s);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), needs, [a, s, r](Tape& tp) {
        const Tensor& g = tp.grad(r);
        if (tp.needs_grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i] += g.v[i];
        if (tp.needs_grad(s)) {
            double acc = 0.0;
            for (double gv : g.v) acc += gv;
            tp.grad(s).v[0] += acc;
        }
    });
}

inline Var sub_b(Tape& t, Var a, Var s) {
    detail::check_scalar(t.val(s), "sub_b");
    Tensor out = t.val(a);
    const double sv = t.val(s).v[0];
    for (double& x : out.v) x -= sv;
    bool needs = t.needs_grad(a) || t.needs_grad(s);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), needs, [a, s, r](Tape& tp) {
        const Tensor& g = tp.grad(r);
        if (tp.needs_grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i] += g.v[i];
        if (tp.needs_grad(s)) {
            double acc = 0.0;
            for (double gv : g.v) acc += gv;
            tp.grad(s).v[0] -= acc;
        }
    });
}

inline Var mul_b(Tape& t, Var a, Var s) {
    detail::check_scalar(t.val(s), "mul_b");
    Tensor out = t.val(a);
    const double sv = t.val(s).v[0];
    for (double& x : out.v) x *= sv;
    bool needs = t.needs_grad(a) || t.needs_grad(s);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), needs, [a, s, r](Tape& tp) {
        const Tensor& g = tp.grad(r);
        if (tp.needs_grad(a)) {
            const double sv2 = tp.val(s).v[0];
            for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i] += sv2 * g.v[i];
        }
        if (tp.needs_grad(s)) {
            const Tensor& av = tp.val(a);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += av.v[i] * g.v[i];
            tp.grad(s).v[0] += acc;
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Var sum(Tape& t, Var a) {
    double acc = 0.0;
    for (double x : t.val(a).v) acc += x;
    Var r{static_cast<int>(t.size())};
    return t.make(Tensor::scalar(acc), t.needs_grad(a), [a, r](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const double g = tp.grad(r).v[0];
        for (double& gx : tp.grad(a).v) gx += g;
    });
}

inline Var mean(Tape& t, Var a) { return scale(t, sum(t, a), 1.0 / static_cast<double>(t.val(a).size())); }

inline Var sq_sum(Tape& t, Var a) {
    double acc = 0.0;
    for (double x : t.val(a).v) acc += x * x;
    Var r{static_cast<int>(t.size())};
    return t.make(Tensor::scalar(acc), t.needs_grad(a), [a, r](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const double g = tp.grad(r).v[0];
        const Tensor& x = tp.val(a);
        for (std::size_t i = 0; i < x.size(); ++i) tp.grad(a).v[i] += 2.0 * x.v[i] * g;
    });
}

inline Var dot(Tape& t, Var a, Var b) {
    check_same_shape(t.val(a), t.val(b), "dot");
    double acc = 0.0;
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    for (std::size_t i = 0; i < av.size(); ++i) acc += av.v[i] * bv.v[i];
    bool needs = t.needs_grad(a) || t.needs_grad(b);
    Var r{static_cast<int>(t.size())};
    return t.make(Tensor::scalar(acc), needs, [a, b, r](Tape& tp) {
        const double g = tp.grad(r).v[0];
        if (tp.needs_grad(a)) {
            const Tensor& bb = tp.val(b);
            for (std::size_t i = 0; i < bb.size(); ++i) tp.grad(a).v[i] += bb.v[i] * g;
        }
        if (tp.needs_grad(b)) {
            const Tensor& aa = tp.val(a);
            for (std::size_t i = 0; i < aa.size(); ++i) tp.grad(b).v[i] += aa.v[i] * g;
        }
    });
}

/// sum_i w_i * x_i^2 where `w` has the trailing shape of `x` (broadcast over
/// the leading axis) or exactly x's shape.
inline Var weighted_sq_sum(Tape& t, Var a, const Tensor& w) {
    const Tensor& x = t.val(a);
    std::size_t inner = w.size();
    if (x.size() % inner != 0)
        throw std::invalid_argument("weighted_sq_sum: weight shape incompatible");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += w.v[i % inner] * x.v[i] * x.v[i];
    Var r{static_cast<int>(t.size())};
    return t.make(Tensor::scalar(acc), t.needs_grad(a), [a, r, &w](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const double g = tp.grad(r).v[0];
        const Tensor& x2 = tp.val(a);
        const std::size_t inner2 = w.size();
        for (std::size_t i = 0; i < x2.size(); ++i)
            tp.grad(a).v[i] += 2.0 * w.v[i % inner2] * x2.v[i] * g;
    });
}

/// x[C,H,W] * plane[H,W], plane broadcast over channels. The plane is a
/// fixed tensor (masking), not a tape node.
inline Var mul_chan(Tape& t, Var a, const Tensor& plane) {
    const Tensor& x = t.val(a);
    if (x.ndim() != 3 || plane.size() != x.dim(1) * x.dim(2))
        throw std::invalid_argument("mul_chan: shape mismatch");
    Tensor out = x;
    const std::size_t HW = plane.size();
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= plane.v[i % HW];
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), t.needs_grad(a), [a, r, &plane](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const Tensor& g = tp.grad(r);
        const std::size_t HW2 = plane.size();
        for (std::size_t i = 0; i < g.size(); ++i)
            tp.grad(a).v[i] += plane.v[i % HW2] * g.v[i];
    });
}

/// [C,H,W] -> [C], spatial mean per channel.
inline Var channel_mean(Tape& t, Var a) {
    const Tensor& x = t.val(a);
    if (x.ndim() != 3) throw std::invalid_argument("channel_mean: expects [C,H,W]");
    const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    Tensor out({C});
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) acc += x.v[c * HW + i];
        out.v[c] = acc / static_cast<double>(HW);
    }
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), t.needs_grad(a), [a, r, C, HW](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const Tensor& g = tp.grad(r);
        for (std::size_t c = 0; c < C; ++c) {
            const double gc = g.v[c] / static_cast<double>(HW);
            for (std::size_t i = 0; i < HW; ++i) tp.grad(a).v[c * HW + i] += gc;
        }
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Var reshape(Tape& t, Var a, std::vector<std::size_t> shape) {
    if (Tensor::numel(shape) != t.val(a).size())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(std::move(shape), t.val(a).v);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), t.needs_grad(a), [a, r](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const Tensor& g = tp.grad(r);
        for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i] += g.v[i];
    });
}

inline Var concat0(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat0: no inputs");
    const Tensor& first = t.val(parts[0]);
    std::vector<std::size_t> tail(first.shape.begin() + 1, first.shape.end());
    std::size_t total0 = 0;
    bool needs = false;
    for (Var p : parts) {
        const Tensor& pv = t.val(p);
        std::vector<std::size_t> ptail(pv.shape.begin() + 1, pv.shape.end());
        if (ptail != tail) throw std::invalid_argument("concat0: trailing shape mismatch");
        total0 += pv.dim(0);
        needs = needs || t.needs_grad(p);
    }
    std::vector<std::size_t> oshape;
    oshape.push_back(total0);
    oshape.insert(oshape.end(), tail.begin(), tail.end());
    Tensor out(oshape);
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& pv = t.val(p);
        std::copy(pv.v.begin(), pv.v.end(), out.v.begin() + off);
        off += pv.size();
    }
    Var r{static_cast<int>(t.size())};
    std::vector<Var> ps = parts;
    return t.make(std::move(out), needs, [ps, r](Tape& tp) {
        const Tensor& g = tp.grad(r);
        std::size_t o = 0;
        for (Var p : ps) {
            const std::size_t n = tp.val(p).size();
            if (tp.needs_grad(p))
                for (std::size_t i = 0; i < n; ++i) tp.grad(p).v[i] += g.v[o + i];
            o += n;
        }
    });
}

inline Var slice0(Tape& t, Var a, std::size_t i0, std::size_t i1) {
    const Tensor& x = t.val(a);
    if (x.ndim() == 0 || i0 >= i1 || i1 > x.dim(0))
        throw std::invalid_argument("slice0: bad range");
    const std::size_t inner = x.size() / x.dim(0);
    std::vector<std::size_t> oshape = x.shape;
    oshape[0] = i1 - i0;
    Tensor out(oshape);
    std::copy(x.v.begin() + i0 * inner, x.v.begin() + i1 * inner, out.v.begin());
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), t.needs_grad(a), [a, r, i0, inner](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const Tensor& g = tp.grad(r);
        for (std::size_t i = 0; i < g.size(); ++i) tp.grad(a).v[i0 * inner + i] += g.v[i];
    });
}

inline Var crop2d(Tape& t, Var a, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    const Tensor& x = t.val(a);
    if (x.ndim() != 3) throw std::invalid_argument("crop2d: expects [C,H,W]");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (y0 + h > H || x0 + w > W) throw std::invalid_argument("crop2d: out of bounds");
    Tensor out({C, h, w});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
                out.at(c, y, xx) = x.at(c, y0 + y, x0 + xx);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), t.needs_grad(a), [a, r, y0, x0, h, w](Tape& tp) {
        if (!tp.needs_grad(a)) return;
        const Tensor& g = tp.grad(r);
        Tensor& ga = tp.grad(a);
        const std::size_t C2 = g.dim(0);
        for (std::size_t c = 0; c < C2; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx)
                    ga.at(c, y0 + y, x0 + xx) += g.at(c, y, xx);
    });
}

/// Bilinear resize [C,H,W] -> [C,H2,W2]; source coordinate convention
/// src = (dst + 0.5) * (in/out) - 0.5 with edge clamping. Resize to the same
/// size is an exact copy.
inline Var resize_bilinear(Tape& t, Var a, std::size_t H2, std::size_t W2) {
    const Tensor& x = t.val(a);
    if (x.ndim() != 3) throw std::invalid_argument("resize_bilinear: expects [C,H,W]");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    struct Tap {
        std::size_t lo, hi;
        double w_hi;
    };
    auto make_taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> taps(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t d = 0; d < out; ++d) {
            double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
            if (src < 0.0) src = 0.0;
            if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
            const auto lo = static_cast<std::size_t>(src);
            const std::size_t hi = std::min(lo + 1, in - 1);
            taps[d] = Tap{lo, hi, src - static_cast<double>(lo)};
        }
        return taps;
    };
    auto ytaps = make_taps(H, H2);
    auto xtaps = make_taps(W, W2);
    Tensor out({C, H2, W2});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H2; ++y) {
            const Tap& ty = ytaps[y];
            for (std::size_t xx = 0; xx < W2; ++xx) {
                const Tap& tx = xtaps[xx];
                const double v00 = x.at(c, ty.lo, tx.lo), v01 = x.at(c, ty.lo, tx.hi);
                const double v10 = x.at(c, ty.hi, tx.lo), v11 = x.at(c, ty.hi, tx.hi);
                const double top = v00 + (v01 - v00) * tx.w_hi;
                const double bot = v10 + (v11 - v10) * tx.w_hi;
                out.at(c, y, xx) = top + (bot - top) * ty.w_hi;
            }
        }
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), t.needs_grad(a),
                  [a, r, C, H2, W2, ytaps, xtaps](Tape& tp) {
                      if (!tp.needs_grad(a)) return;
                      const Tensor& g = tp.grad(r);
                      Tensor& ga = tp.grad(a);
                      for (std::size_t c = 0; c < C; ++c)
                          for (std::size_t y = 0; y < H2; ++y) {
                              const Tap& ty = ytaps[y];
                              for (std::size_t xx = 0; xx < W2; ++xx) {
                                  const Tap& tx = xtaps[xx];
                                  const double gv = g.at(c, y, xx);
                                  const double wy1 = ty.w_hi, wy0 = 1.0 - wy1;
                                  const double wx1 = tx.w_hi, wx0 = 1.0 - wx1;
                                  ga.at(c, ty.lo, tx.lo) += gv * wy0 * wx0;
                                  ga.at(c, ty.lo, tx.hi) += gv * wy0 * wx1;
                                  ga.at(c, ty.hi, tx.lo) += gv * wy1 * wx0;
                                  ga.at(c, ty.hi, tx.hi) += gv * wy1 * wx1;
                              }
                          }
                  });
}

// ---------------------------------------------------------------------------
// linear layers. Weights may be tape Vars (trained) or external const
// tensors (frozen); frozen weights never get gradient work.
// ---------------------------------------------------------------------------

namespace detail {

struct WeightRef {
    Var var{};             // valid if on tape
    const Tensor* fixed = nullptr;
    const Tensor& value(const Tape& t) const { return var.valid() ? t.val(var) : *fixed; }
    bool trainable(const Tape& t) const { return var.valid() && t.needs_grad(var); }
};

inline void conv_shape(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad,
                       std::size_t& OC, std::size_t& OH, std::size_t& OW) {
    if (x.ndim() != 3 || w.ndim() != 4) throw std::invalid_argument("conv2d: bad ranks");
    if (w.dim(1) != x.dim(0)) throw std::invalid_argument("conv2d: channel mismatch");
    const std::size_t H = x.dim(1), W = x.dim(2), K = w.dim(2);
    if (w.dim(3) != K) throw std::invalid_argument("conv2d: non-square kernel");
    if (H + 2 * pad < K || W + 2 * pad < K) throw std::invalid_argument("conv2d: kernel too large");
    OC = w.dim(0);
    OH = (H + 2 * pad - K) / stride + 1;
    OW = (W + 2 * pad - K) / stride + 1;
}

// valid output range for a kernel offset: in = out*stride + k - pad in [0, n).
// Returns false when the range is empty.
inline bool conv_bounds(std::size_t n_in, std::size_t n_out, std::size_t stride, std::size_t pad,
                        std::size_t k, std::size_t& lo, std::size_t& hi) {
    const long off = static_cast<long>(k) - static_cast<long>(pad);
    long lo_l = 0;
    if (off < 0) lo_l = (-off + static_cast<long>(stride) - 1) / static_cast<long>(stride);
    const long num = static_cast<long>(n_in) - 1 - off;
    if (num < 0) return false;
    long hi_l = num / static_cast<long>(stride);
    if (hi_l >= static_cast<long>(n_out)) hi_l = static_cast<long>(n_out) - 1;
    if (hi_l < lo_l) return false;
    lo = static_cast<std::size_t>(lo_l);
    hi = static_cast<std::size_t>(hi_l);
    return true;
}

// conv2d runs as im2col + GEMM: the patch matrix [IC*K*K, OH*OW] is built
// once, cached on the node, and reused by the weight-gradient GEMM.

inline std::vector<double> im2col(const Tensor& x, std::size_t K, std::size_t stride,
                                  std::size_t pad, std::size_t OH, std::size_t OW) {
    const std::size_t IC = x.dim(0), H = x.dim(1), W = x.dim(2);
    std::vector<double> patches(IC * K * K * OH * OW, 0.0);
    for (std::size_t ic = 0; ic < IC; ++ic) {
        const double* in = x.v.data() + ic * H * W;
        for (std::size_t ky = 0; ky < K; ++ky) {
            std::size_t oy0, oy1;
            if (!conv_bounds(H, OH, stride, pad, ky, oy0, oy1)) continue;
            for (std::size_t kx = 0; kx < K; ++kx) {
                std::size_t ox0, ox1;
                if (!conv_bounds(W, OW, stride, pad, kx, ox0, ox1)) continue;
                double* prow = patches.data() + (ic * K * K + ky * K + kx) * OH * OW;
                for (std::size_t oy = oy0; oy <= oy1; ++oy) {
                    const std::size_t iy = oy * stride + ky - pad;
                    const double* irow = in + iy * W + (ox0 * stride + kx - pad);
                    double* pr = prow + oy * OW + ox0;
                    const std::size_t n = ox1 - ox0 + 1;
                    if (stride == 1) {
                        for (std::size_t i = 0; i < n; ++i) pr[i] = irow[i];
                    } else {
                        for (std::size_t i = 0; i < n; ++i) pr[i] = irow[i * stride];
                    }
                }
            }
        }
    }
    return patches;
}

inline void col2im_add(const std::vector<double>& patches, Tensor& gx, std::size_t K,
                       std::size_t stride, std::size_t pad, std::size_t OH, std::size_t OW) {
    const std::size_t IC = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
    for (std::size_t ic = 0; ic < IC; ++ic) {
        double* gi = gx.v.data() + ic * H * W;
        for (std::size_t ky = 0; ky < K; ++ky) {
            std::size_t oy0, oy1;
            if (!conv_bounds(H, OH, stride, pad, ky, oy0, oy1)) continue;
            for (std::size_t kx = 0; kx < K; ++kx) {
                std::size_t ox0, ox1;
                if (!conv_bounds(W, OW, stride, pad, kx, ox0, ox1)) continue;
                const double* prow = patches.data() + (ic * K * K + ky * K + kx) * OH * OW;
                for (std::size_t oy = oy0; oy <= oy1; ++oy) {
                    const std::size_t iy = oy * stride + ky - pad;
                    double* girow = gi + iy * W + (ox0 * stride + kx - pad);
                    const double* pr = prow + oy * OW + ox0;
                    const std::size_t n = ox1 - ox0 + 1;
                    if (stride == 1) {
                        for (std::size_t i = 0; i < n; ++i) girow[i] += pr[i];
                    } else {
                        for (std::size_t i = 0; i < n; ++i) girow[i * stride] += pr[i];
                    }
                }
            }
        }
    }
}

// C[M,N] (+)= A[M,K] * B[K,N], saxpy over contiguous rows.
inline void gemm_add(const double* A, const double* B, double* C, std::size_t M, std::size_t K,
                     std::size_t N, bool accumulate) {
    for (std::size_t m = 0; m < M; ++m) {
        double* crow = C + m * N;
        if (!accumulate)
            for (std::size_t n = 0; n < N; ++n) crow[n] = 0.0;
        const double* arow = A + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double a = arow[k];
            if (a == 0.0) continue;
            const double* brow = B + k * N;
            for (std::size_t n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

inline Var conv2d_impl(Tape& t, Var x, WeightRef w, WeightRef b, std::size_t stride,
                       std::size_t pad) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = w.value(t);
    const Tensor& bv = b.value(t);
    std::size_t OC, OH, OW;
    conv_shape(xv, wv, stride, pad, OC, OH, OW);
    if (bv.size() != OC) throw std::invalid_argument("conv2d: bias size mismatch");
    const std::size_t IC = xv.dim(0), K = wv.dim(2);
    const std::size_t KK = IC * K * K, OHW = OH * OW;

    auto patches = std::make_shared<std::vector<double>>(im2col(xv, K, stride, pad, OH, OW));
    Tensor out({OC, OH, OW});
    gemm_add(wv.v.data(), patches->data(), out.v.data(), OC, KK, OHW, false);
    for (std::size_t oc = 0; oc < OC; ++oc) {
        double* o = out.v.data() + oc * OHW;
        const double bias = bv.v[oc];
        for (std::size_t i = 0; i < OHW; ++i) o[i] += bias;
    }

    bool needs = t.needs_grad(x) || w.trainable(t) || b.trainable(t);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), needs, [x, w, b, stride, pad, r, patches, KK, OHW](Tape& tp) {
        const Tensor& g = tp.grad(r);
        const Tensor& wv2 = w.value(tp);
        const std::size_t OC = g.dim(0), OH = g.dim(1), OW = g.dim(2), K = wv2.dim(2);

        if (tp.needs_grad(x)) {
            // dPatches = W^T * gout, scattered back to the input
            std::vector<double> dpatch(KK * OHW, 0.0);
            for (std::size_t j = 0; j < KK; ++j) {
                double* drow = dpatch.data() + j * OHW;
                for (std::size_t oc = 0; oc < OC; ++oc) {
                    const double a = wv2.v[oc * KK + j];
                    if (a == 0.0) continue;
                    const double* grow = g.v.data() + oc * OHW;
                    for (std::size_t n = 0; n < OHW; ++n) drow[n] += a * grow[n];
                }
            }
            col2im_add(dpatch, tp.grad(x), K, stride, pad, OH, OW);
        }

        if (w.trainable(tp)) {
            // dW[oc, j] += <gout_row(oc), patches_row(j)>
            Tensor& gw = tp.grad(w.var);
            for (std::size_t oc = 0; oc < OC; ++oc) {
                const double* grow = g.v.data() + oc * OHW;
                double* gwrow = gw.v.data() + oc * KK;
                for (std::size_t j = 0; j < KK; ++j) {
                    const double* prow = patches->data() + j * OHW;
                    double acc = 0.0;
                    for (std::size_t n = 0; n < OHW; ++n) acc += grow[n] * prow[n];
                    gwrow[j] += acc;
                }
            }
        }

        if (b.trainable(tp)) {
            Tensor& gb = tp.grad(b.var);
            for (std::size_t oc = 0; oc < OC; ++oc) {
                const double* grow = g.v.data() + oc * OHW;
                double acc = 0.0;
                for (std::size_t i = 0; i < OHW; ++i) acc += grow[i];
                gb.v[oc] += acc;
            }
        }
    });
}

inline Var affine_impl(Tape& t, Var x, WeightRef w, WeightRef b) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = w.value(t);
    const Tensor& bv = b.value(t);
    if (wv.ndim() != 2) throw std::invalid_argument("affine: weight must be [out,in]");
    const std::size_t OUT = wv.dim(0), IN = wv.dim(1);
    if (xv.size() != IN) throw std::invalid_argument("affine: input size mismatch");
    if (bv.size() != OUT) throw std::invalid_argument("affine: bias size mismatch");
    Tensor out({OUT});
    for (std::size_t o = 0; o < OUT; ++o) {
        const double* row = wv.v.data() + o * IN;
        double acc = bv.v[o];
        for (std::size_t i = 0; i < IN; ++i) acc += row[i] * xv.v[i];
        out.v[o] = acc;
    }
    bool needs = t.needs_grad(x) || w.trainable(t) || b.trainable(t);
    Var r{static_cast<int>(t.size())};
    return t.make(std::move(out), needs, [x, w, b, r, OUT, IN](Tape& tp) {
        const Tensor& g = tp.grad(r);
        const Tensor& wv2 = w.value(tp);
        const Tensor& xv2 = tp.val(x);
        if (tp.needs_grad(x)) {
            Tensor& gx = tp.grad(x);
            for (std::size_t o = 0; o < OUT; ++o) {
                const double go = g.v[o];
                const double* row = wv2.v.data() + o * IN;
                for (std::size_t i = 0; i < IN; ++i) gx.v[i] += row[i] * go;
            }
        }
        if (w.trainable(tp)) {
            Tensor& gw = tp.grad(w.var);
            for (std::size_t o = 0; o < OUT; ++o) {
                const double go = g.v[o];
                double* row = gw.v.data() + o * IN;
                for (std::size_t i = 0; i < IN; ++i) row[i] += xv2.v[i] * go;
            }
        }
        if (b.trainable(tp)) {
            Tensor& gb = tp.grad(b.var);
            for (std::size_t o = 0; o < OUT; ++o) gb.v[o] += g.v[o];
        }
    });
}

}  // namespace detail

inline Var conv2d(Tape& t, Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
    return detail::conv2d_impl(t, x, detail::WeightRef{w, nullptr},
                               detail::WeightRef{b, nullptr}, stride, pad);
}

inline Var conv2d(Tape& t, Var x, const Tensor& w, const Tensor& b, std::size_t stride,
                  std::size_t pad) {
    return detail::conv2d_impl(t, x, detail::WeightRef{{}, &w}, detail::WeightRef{{}, &b}, stride,
                               pad);
}

inline Var affine(Tape& t, Var x, Var w, Var b) {
    return detail::affine_impl(t, x, detail::WeightRef{w, nullptr}, detail::WeightRef{b, nullptr});
}

inline Var affine(Tape& t, Var x, const Tensor& w, const Tensor& b) {
    return detail::affine_impl(t, x, detail::WeightRef{{}, &w}, detail::WeightRef{{}, &b});
}

}  // namespace ad
}  // namespace sam
