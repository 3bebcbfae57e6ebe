#pragma once
// Adaptive per-parameter optimizer with bias-rectified warmup plus an outer
// slow-weights interpolation (rectified first/second moments; every k inner
// steps the fast weights are pulled halfway back to a slow copy). Zero
// gradients produce bit-exactly zero updates.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sam/checkpoint.hpp"
#include "sam/nn.hpp"
#include "sam/tensor.hpp"

namespace sam {

struct OptimizerConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t lookahead_k = 5;
    double lookahead_alpha = 0.5;
};

class Optimizer {
public:
    Optimizer() = default;
    Optimizer(OptimizerConfig cfg, const std::vector<Param>& params) : cfg_(cfg) {
        for (const Param& p : params) {
            m_.push_back(Tensor::zeros(p.tensor->shape));
            v_.push_back(Tensor::zeros(p.tensor->shape));
            slow_.push_back(*p.tensor);
        }
    }

    std::size_t inner_steps() const { return t_; }

    void step(const std::vector<Param>& params, const std::vector<Tensor>& grads) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            throw std::invalid_argument("Optimizer::step: parameter/gradient count mismatch");
        ++t_;
        const double td = static_cast<double>(t_);
        const double b1t = std::pow(cfg_.beta1, td);
        const double b2t = std::pow(cfg_.beta2, td);
        const double rho_inf = 2.0 / (1.0 - cfg_.beta2) - 1.0;
        const double rho_t = rho_inf - 2.0 * td * b2t / (1.0 - b2t);
        const bool rectified = rho_t > 4.0;
        double rect = 0.0;
        if (rectified)
            rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                             ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& theta = *params[p].tensor;
            const Tensor& g = grads[p];
            if (!theta.same_shape(g))
                throw std::invalid_argument("Optimizer::step: gradient shape mismatch for " +
                                            params[p].name);
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m.v[i] = cfg_.beta1 * m.v[i] + (1.0 - cfg_.beta1) * g.v[i];
                v.v[i] = cfg_.beta2 * v.v[i] + (1.0 - cfg_.beta2) * g.v[i] * g.v[i];
                const double mhat = m.v[i] / (1.0 - b1t);
                double update;
                if (rectified) {
                    const double vhat = std::sqrt(v.v[i] / (1.0 - b2t));
                    update = cfg_.lr * rect * mhat / (vhat + cfg_.eps);
                } else {
                    update = cfg_.lr * mhat;
                }
                theta.v[i] -= update;
            }
        }
        if (cfg_.lookahead_k > 0 && t_ % cfg_.lookahead_k == 0) {
            for (std::size_t p = 0; p < params.size(); ++p) {
                Tensor& theta = *params[p].tensor;
                Tensor& slow = slow_[p];
                for (std::size_t i = 0; i < theta.size(); ++i) {
                    slow.v[i] += cfg_.lookahead_alpha * (theta.v[i] - slow.v[i]);
                    theta.v[i] = slow.v[i];
                }
            }
        }
    }

    void save_state(Checkpoint& ck, const std::vector<Param>& params) const {
        for (std::size_t p = 0; p < params.size(); ++p) {
            ck.arrays["opt.m." + params[p].name] = m_[p];
            ck.arrays["opt.v." + params[p].name] = v_[p];
            ck.arrays["opt.slow." + params[p].name] = slow_[p];
        }
        ck.meta["opt.t"] = std::to_string(t_);
    }

    void load_state(const Checkpoint& ck, const std::vector<Param>& params) {
        m_.clear();
        v_.clear();
        slow_.clear();
        for (const Param& p : params) {
            m_.push_back(ck.array("opt.m." + p.name));
            v_.push_back(ck.array("opt.v." + p.name));
            slow_.push_back(ck.array("opt.slow." + p.name));
        }
        t_ = std::stoull(ck.meta_at("opt.t"));
    }

private:
    OptimizerConfig cfg_;
    std::vector<Tensor> m_, v_, slow_;
    std::size_t t_ = 0;
};

}  // namespace sam
