#pragma once

// Adam optimizer with global-norm gradient clipping.

#include <cmath>
#include <cstdint>
#include <vector>

#include "codesum/tensor.hpp"

namespace codesum {

struct AdamOptions {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
        if (opts_.lr <= 0.0) throw contract_error("Adam: learning rate must be positive");
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // One Adam update over all parameters; increments step_count by exactly 1.
    void step() {
        for (const auto& p : params_)
            if (!p.has_grad()) throw contract_error("Adam::step: parameter gradient missing");

        if (opts_.clip_norm > 0.0) clip_by_global_norm();

        ++step_count_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& val = params_[i].values();
            const auto& grad = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < val.size(); ++j) {
                const double g = grad[j];
                m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g;
                v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                val[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
            }
        }
    }

    std::uint64_t step_count() const { return step_count_; }
    const AdamOptions& options() const { return opts_; }
    void set_lr(double lr) {
        if (lr <= 0.0) throw contract_error("Adam: learning rate must be positive");
        opts_.lr = lr;
    }

    double last_grad_norm() const { return last_grad_norm_; }

private:
    void clip_by_global_norm() {
        double sq = 0.0;
        for (auto& p : params_)
            for (double g : p.grad()) sq += g * g;
        last_grad_norm_ = std::sqrt(sq);
        if (last_grad_norm_ <= opts_.clip_norm) return;
        const double s = opts_.clip_norm / last_grad_norm_;
        for (auto& p : params_) {
            auto& g = p.node()->grad;
            for (double& x : g) x *= s;
        }
    }

    std::vector<Tensor> params_;
    AdamOptions opts_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::uint64_t step_count_ = 0;
    double last_grad_norm_ = 0.0;
};

}  // namespace codesum
