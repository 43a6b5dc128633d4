#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "g2d/tensor.hpp"

namespace g2d {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;   // coordinate with the largest error
    double analytic = 0.0;         // gradient components at that coordinate
    double numeric = 0.0;
};

// Central-difference check of d f / d x against the tape. f must be a
// deterministic map from x to a scalar tensor and must rebuild its graph
// on every call. Error per coordinate is |a-n| / max(1e-8, |a|+|n|).
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps = 1e-5);

// Same check applied to a parameter slot inside a larger closure: the
// probe tensor is swapped into the slot for the duration of each call.
GradCheckResult grad_check_param(const std::function<Tensor()>& loss_fn, Tensor& slot,
                                 double eps = 1e-5);

struct NamedCheck {
    std::string name;
    GradCheckResult result;
    bool passed(double tol = 1e-4) const { return result.max_rel_err < tol; }
};

// Checks every differentiable op on seeded random inputs, each model
// component, each loss, and the full training objective on a reduced
// configuration (pseudo masks injected as the constants they are).
std::vector<NamedCheck> gradcheck_suite(std::uint64_t seed, double eps = 1e-5);

}  // namespace g2d
