#include "slicerecon/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "slicerecon/error.hpp"

namespace slicerecon {

NelderMeadResult nelder_mead(const Objective &f, std::vector<std::vector<double>> simplex,
                             const NelderMeadOptions &opts) {
    const std::size_t n = simplex.empty() ? 0 : simplex.front().size();
    if (simplex.size() != n + 1) {
        throw Error(ErrorCode::InvalidConfig, "simplex must have dimension+1 vertices");
    }
    NelderMeadResult res;
    if (n == 0) {
        res.x = {};
        res.f = f(res.x);
        res.evaluations = 1;
        res.converged = true;
        return res;
    }

    int evals = 0;
    auto eval = [&](const std::vector<double> &x) {
        ++evals;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(simplex[i]);

    std::vector<std::size_t> order(n + 1);
    std::vector<double> centroid(n), xr(n), xe(n), xc(n);
    bool converged = false;

    while (true) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

        const double spread = std::abs(fv[worst] - fv[best]);
        if (spread <= opts.f_rel_tol * (std::abs(fv[best]) + std::abs(fv[worst])) * 0.5 + opts.f_abs_tol) {
            converged = true;
            break;
        }
        double diameter = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
            for (std::size_t k = 0; k < n; ++k) {
                diameter = std::max(diameter, std::abs(simplex[i][k] - simplex[best][k]));
            }
        }
        if (diameter <= opts.x_tol) {
            converged = true;
            break;
        }
        if (evals >= opts.max_evaluations) break;

        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == worst) continue;
            for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[i][k];
        }
        for (auto &c : centroid) c /= static_cast<double>(n);

        for (std::size_t k = 0; k < n; ++k) xr[k] = centroid[k] + (centroid[k] - simplex[worst][k]);
        const double fr = eval(xr);

        if (fr < fv[best]) {
            for (std::size_t k = 0; k < n; ++k) xe[k] = centroid[k] + 2.0 * (centroid[k] - simplex[worst][k]);
            const double fe = eval(xe);
            if (fe < fr) {
                simplex[worst] = xe;
                fv[worst] = fe;
            } else {
                simplex[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            simplex[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        // contraction: outside if the reflected point beat the worst, inside otherwise
        const bool outside = fr < fv[worst];
        for (std::size_t k = 0; k < n; ++k) {
            xc[k] = outside ? centroid[k] + 0.5 * (xr[k] - centroid[k])
                            : centroid[k] + 0.5 * (simplex[worst][k] - centroid[k]);
        }
        const double fc = eval(xc);
        if (fc < (outside ? fr : fv[worst])) {
            simplex[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == best) continue;
            for (std::size_t k = 0; k < n; ++k) {
                simplex[i][k] = simplex[best][k] + 0.5 * (simplex[i][k] - simplex[best][k]);
            }
            fv[i] = eval(simplex[i]);
        }
    }

    const auto best_it = std::min_element(fv.begin(), fv.end());
    res.x = simplex[static_cast<std::size_t>(best_it - fv.begin())];
    res.f = *best_it;
    res.evaluations = evals;
    res.converged = converged;
    return res;
}

} // namespace slicerecon
