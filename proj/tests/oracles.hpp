#pragma once

// Independent reference values used by the tests. Everything here is computed
// without touching the solver code paths it is checking.

#include <cmath>
#include <functional>
#include <stdexcept>

namespace oracles {

// Mittag-Leffler E_alpha(z) by its power series sum_k z^k / Gamma(alpha k + 1),
// compensated summation; adequate for |z| <= ~2 where the series is benign.
inline double mittag_leffler(double alpha, double z) {
    double sum = 0.0, comp = 0.0;
    double term = 1.0;  // k = 0
    for (int k = 0; k < 400; ++k) {
        const double y = term - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        const double next = std::lgamma(alpha * k + 1.0) - std::lgamma(alpha * (k + 1) + 1.0);
        term *= z * std::exp(next);
        if (std::fabs(term) < 1e-18 * (1.0 + std::fabs(sum))) break;
    }
    return sum;
}

// Closed form E_{1/2}(-sqrt(t)) = exp(t) erfc(sqrt(t)); cross-checks the series.
inline double ml_half_closed_form(double t) { return std::exp(t) * std::erfc(std::sqrt(t)); }

// Composite Simpson on [a, b] with an even subinterval count.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
    if (n % 2 != 0) throw std::invalid_argument("simpson: n must be even");
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

}  // namespace oracles
