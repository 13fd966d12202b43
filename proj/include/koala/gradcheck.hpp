#pragma once

#include <functional>
#include <string>
#include <vector>

#include "koala/params.hpp"

namespace koala {

// Builds the scalar loss node for the current store contents.
using LossBuilder = std::function<NodeId(Tape&, ParamCtx&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

// Central finite differences against the tape gradients, in 64-bit mode.
// Relative error per coordinate: |analytic - numeric| / max(1, |analytic|, |numeric|).
// max_coords_per_param == 0 checks every coordinate; otherwise coordinates are
// sampled with a deterministic stride.
GradCheckReport grad_check(ParamStore& store, const std::vector<std::string>& param_names,
                           const LossBuilder& build, double h = 1e-5,
                           std::size_t max_coords_per_param = 0);

} // namespace koala
