#pragma once

#include <cstdint>
#include <functional>

#include "isinv/core/autodiff.hpp"

namespace isinv::ad {

struct GradCheckOptions {
    double step = 1e-5;
    /// Number of coordinates to probe; 0 probes every coordinate.
    std::size_t coordinates = 0;
    std::uint64_t seed = 0;
    /// Relative errors use max(|autodiff|, |numeric|, floor) as denominator.
    double floor = 1e-10;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t probed = 0;
};

using ScalarFn = std::function<Var(const Var&)>;

/// Compares reverse-mode gradients of `f` at `x` against central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h on a sampled coordinate subset.
GradCheckReport check_gradient(const ScalarFn& f, const Tensor& x, const GradCheckOptions& opts = {});

}  // namespace isinv::ad
