#include "koala/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace koala {

namespace {

double loss_value(ParamStore& store, const LossBuilder& build) {
    Tape tape;
    ParamCtx ctx(tape, store);
    const NodeId loss = build(tape, ctx);
    return tape.value(loss).v[0];
}

} // namespace

GradCheckReport grad_check(ParamStore& store, const std::vector<std::string>& param_names,
                           const LossBuilder& build, double h,
                           std::size_t max_coords_per_param) {
    PrecisionGuard guard(Precision::f64);

    Tape tape;
    ParamCtx ctx(tape, store);
    const NodeId loss = build(tape, ctx);
    tape.backward(loss);
    const std::map<std::string, Tensor> grads = ctx.grads();

    GradCheckReport report;
    for (const std::string& name : param_names) {
        Tensor& value = store.value(name);
        auto git = grads.find(name);
        // A parameter that never entered the graph has an all-zero gradient.
        const Tensor* analytic = git == grads.end() ? nullptr : &git->second;

        const std::size_t n = value.numel();
        std::size_t stride = 1;
        if (max_coords_per_param > 0 && n > max_coords_per_param)
            stride = (n + max_coords_per_param - 1) / max_coords_per_param;
        for (std::size_t i = 0; i < n; i += stride) {
            const double keep = value.v[i];
            value.v[i] = keep + h;
            const double fp = loss_value(store, build);
            value.v[i] = keep - h;
            const double fm = loss_value(store, build);
            value.v[i] = keep;

            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic ? analytic->v[i] : 0.0;
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace koala
