#include "vmsst/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "vmsst/numcore/tape.hpp"

namespace vmsst::num {

namespace {

double probe(const std::function<Tensor<double>()>& loss_fn, const std::string& name, std::size_t index) {
    double value;
    try {
        value = loss_fn().item();
    } catch (const NumericalError& e) {
        throw NumericalError("grad_check probe on " + name + "[" + std::to_string(index) + "]: " + e.what());
    }
    if (!std::isfinite(value)) {
        throw NumericalError("grad_check: non-finite loss when perturbing " + name + "[" +
                             std::to_string(index) + "]");
    }
    return value;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           std::span<const NamedTensor> params, const GradCheckOptions& options) {
    std::vector<Tensor<double>> handles;
    for (const auto& p : params) {
        handles.push_back(p.tensor);
        handles.back().zero_grad();
        handles.back().set_requires_grad(true);
    }
    {
        Tape<double> tape;
        Tensor<double> loss;
        {
            auto recording = tape.record();
            loss = loss_fn();
        }
        if (loss.requires_grad()) {
            tape.backward(loss);
        }
    }

    GradCheckReport report;
    const double h = options.step;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor<double>& t = handles[p];
        const std::vector<double> analytic =
            t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                         : std::vector<double>(t.size(), 0.0);
        auto values = t.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double plus = probe(loss_fn, params[p].name, i);
            values[i] = saved - h;
            const double minus = probe(loss_fn, params[p].name, i);
            values[i] = saved;

            const double numeric = (plus - minus) / (2.0 * h);
            const double abs_err = std::abs(numeric - analytic[i]);
            const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), options.abs_floor});
            const double rel_err = abs_err / denom;
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel_err > report.max_rel_error || report.entries_checked == 0) {
                report.max_rel_error = std::max(report.max_rel_error, rel_err);
                report.worst_parameter = params[p].name;
                report.worst_index = i;
            }
            ++report.entries_checked;
        }
        t.zero_grad();
    }
    report.passed = report.max_rel_error < options.tolerance;
    return report;
}

}  // namespace vmsst::num
