#pragma once

#include <functional>
#include <span>
#include <string>

#include "vmsst/numcore/tensor.hpp"

namespace vmsst::num {

struct NamedTensor {
    std::string name;
    Tensor<double> tensor;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    std::size_t entries_checked = 0;
    bool passed = true;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-6;
    // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor),
    // so entries whose true gradient is ~0 are judged on absolute error.
    double abs_floor = 1e-8;
};

// Compares tape gradients of loss_fn against central differences
// (f(p+h) - f(p-h)) / 2h for every entry of every parameter. loss_fn must be
// a deterministic function of the parameter values; it is called once under a
// recording tape and 2x per entry with recording off.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           std::span<const NamedTensor> params, const GradCheckOptions& options = {});

}  // namespace vmsst::num
