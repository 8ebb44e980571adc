#include "isinv/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace isinv::ad {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
    Tape tape;
    Tensor copy = x;
    copy.requires_grad = false;
    return f(tape.variable(std::move(copy))).value().item();
}

}  // namespace

GradCheckReport check_gradient(const ScalarFn& f, const Tensor& x, const GradCheckOptions& opts) {
    Tensor analytic;
    {
        Tape tape;
        Tensor var = x;
        var.requires_grad = true;
        Var xv = tape.variable(std::move(var));
        Var loss = f(xv);
        analytic = tape.grad(loss, {xv}).grads.front();
    }

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.coordinates != 0 && opts.coordinates < coords.size()) {
        std::mt19937_64 rng(opts.seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(opts.coordinates);
    }

    GradCheckReport report;
    Tensor probe = x;
    for (std::size_t i : coords) {
        const double orig = probe.data[i];
        probe.data[i] = orig + opts.step;
        const double up = evaluate(f, probe);
        probe.data[i] = orig - opts.step;
        const double down = evaluate(f, probe);
        probe.data[i] = orig;

        const double numeric = (up - down) / (2.0 * opts.step);
        const double abs_err = std::abs(numeric - analytic.data[i]);
        const double denom = std::max({std::abs(numeric), std::abs(analytic.data[i]), opts.floor});
        report.max_abs_err = std::max(report.max_abs_err, abs_err);
        report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
        ++report.probed;
    }
    return report;
}

}  // namespace isinv::ad
