#include "lucca/statmath.hpp"

#include <cmath>
#include <stdexcept>

namespace lucca {

namespace {

constexpr int kMaxIter = 500;
constexpr double kEps = 1e-15;

// Series expansion of P(a, x), valid for x < a + 1.
double gamma_p_series(double a, double x) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int i = 0; i < kMaxIter; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for Q(a, x) = 1 - P(a, x) by modified Lentz, valid
// for x >= a + 1.
double gamma_q_contfrac(double a, double x) {
    const double fpmin = std::numeric_limits<double>::min() / kEps;
    double b = x + 1.0 - a;
    double c = 1.0 / fpmin;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < fpmin) d = fpmin;
        c = b + an / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) <= kEps) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_p(double a, double x) {
    if (!(a > 0.0)) throw std::invalid_argument("regularized_gamma_p: a must be > 0");
    if (x < 0.0) throw std::invalid_argument("regularized_gamma_p: x must be >= 0");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return gamma_p_series(a, x);
    return 1.0 - gamma_q_contfrac(a, x);
}

double chi2_quantile(int dof, double p) {
    if (dof < 1) throw std::invalid_argument("chi2_quantile: dof must be >= 1");
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("chi2_quantile: p must lie in (0, 1)");
    }
    const double a = 0.5 * dof;
    auto cdf = [a](double x) { return regularized_gamma_p(a, 0.5 * x); };

    // Bracket the root, then bisect. The CDF is strictly increasing.
    double lo = 0.0;
    double hi = std::max(2.0 * dof, 10.0);
    while (cdf(hi) < p) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e12) throw std::runtime_error("chi2_quantile: bracket failure");
    }
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (cdf(mid) < p) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-12 * (1.0 + hi)) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace lucca
