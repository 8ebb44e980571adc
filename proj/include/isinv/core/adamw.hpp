#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "isinv/core/tensor.hpp"

namespace isinv {

struct AdamWParams {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Adam with decoupled weight decay over a fixed list of tensors.
///
/// Moments are allocated lazily on the first step and keyed by position, so
/// callers must pass the same variables in the same order every step.
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamWParams params) : params_(params) {}

    void step(std::span<Tensor* const> vars, std::span<const Tensor> grads);
    void step(Tensor& var, const Tensor& grad);

    const AdamWParams& params() const { return params_; }
    void set_lr(double lr) { params_.lr = lr; }
    std::size_t step_count() const { return t_; }

private:
    AdamWParams params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

}  // namespace isinv
