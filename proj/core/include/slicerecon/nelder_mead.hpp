#pragma once

#include <functional>
#include <span>
#include <vector>

namespace slicerecon {

struct NelderMeadOptions {
    double f_rel_tol = 1e-6;
    double f_abs_tol = 1e-12;
    double x_tol = 1e-10;
    int max_evaluations = 2000;
};

struct NelderMeadResult {
    std::vector<double> x;
    double f = 0.0;
    int evaluations = 0;
    bool converged = false;
};

using Objective = std::function<double(std::span<const double>)>;

/// Unconstrained downhill simplex (reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2). `simplex` holds n+1 vertices of dimension n. Converged means the
/// spread of simplex values fell under the f tolerances, or the simplex
/// collapsed below x_tol, before the evaluation budget ran out.
NelderMeadResult nelder_mead(const Objective &f, std::vector<std::vector<double>> simplex,
                             const NelderMeadOptions &opts = {});

} // namespace slicerecon
