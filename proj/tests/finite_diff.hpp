// Central-difference gradient verification harness (64-bit).
#pragma once

#include <cmath>
#include <cstdint>

#include "cpgait/tape.hpp"

namespace cpgait::testing {

using DTape = ad::Tape<double>;
using DTensor = ad::Tensor<double>;

// fn(tape, x_var) -> scalar var. Must be pure given (tape, x): any
// parameters, rng streams and running stats are re-created inside fn, so
// repeated evaluations see identical state.
template <class Fn>
double finite_diff_check(Fn&& fn, const DTensor& x, double h = 1e-3) {
    DTensor analytic;
    {
        DTape tape;
        auto xv = tape.leaf(x, true);
        auto loss = fn(tape, xv);
        tape.backward(loss);
        analytic = tape.grad(xv);
    }
    auto eval = [&fn](const DTensor& xe) {
        DTape tape;
        auto xv = tape.leaf(xe, false);
        return tape.val(fn(tape, xv))[0];
    };
    double max_rel = 0.0;
    DTensor xp = x;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double lp = eval(xp);
        xp[i] = orig - h;
        const double lm = eval(xp);
        xp[i] = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
    return max_rel;
}

inline DTensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    DTensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Values bounded away from zero; keeps relu kinks out of the h-neighborhood.
inline DTensor random_nonzero_tensor(std::vector<std::int64_t> shape, Rng& rng,
                                     double margin = 0.05) {
    DTensor t(std::move(shape));
    for (auto& v : t.data) {
        double u = rng.uniform(margin, 1.0);
        v = rng.uniform() < 0.5 ? -u : u;
    }
    return t;
}

}  // namespace cpgait::testing
