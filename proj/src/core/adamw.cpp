#include "isinv/core/adamw.hpp"

#include <cmath>

#include "isinv/core/errors.hpp"

namespace isinv {

void AdamW::step(std::span<Tensor* const> vars, std::span<const Tensor> grads) {
    if (vars.size() != grads.size()) throw DimensionError("AdamW: variable/gradient count mismatch");
    if (m_.empty()) {
        m_.resize(vars.size());
        v_.resize(vars.size());
        for (std::size_t i = 0; i < vars.size(); ++i) {
            m_[i].assign(vars[i]->numel(), 0.0);
            v_[i].assign(vars[i]->numel(), 0.0);
        }
    }
    if (m_.size() != vars.size()) throw DimensionError("AdamW: variable list changed between steps");

    ++t_;
    const auto& p = params_;
    const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < vars.size(); ++i) {
        Tensor& w = *vars[i];
        const Tensor& g = grads[i];
        if (g.numel() != w.numel() || m_[i].size() != w.numel()) {
            throw DimensionError("AdamW: gradient shape does not match variable");
        }
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.numel(); ++j) {
            const double gj = g.data[j];
            m[j] = p.beta1 * m[j] + (1.0 - p.beta1) * gj;
            v[j] = p.beta2 * v[j] + (1.0 - p.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w.data[j] -= p.lr * (mhat / (std::sqrt(vhat) + p.eps) + p.weight_decay * w.data[j]);
        }
    }
}

void AdamW::step(Tensor& var, const Tensor& grad) {
    Tensor* vars[] = {&var};
    step(std::span<Tensor* const>(vars), std::span<const Tensor>(&grad, 1));
}

}  // namespace isinv
