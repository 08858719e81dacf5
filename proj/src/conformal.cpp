#include "lucca/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lucca {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

LiftedInput lift(const Vec4& state, const Vec2& action, const Mat4& sigma0) {
    return LiftedInput{Gaussian(state, sigma0), action};
}

double residual(const LinearModel& model, const LiftedInput& x, const Vec4& next_state) {
    return approx_propagate(model, x.belief, x.action).mahalanobis(next_state);
}

double conformal_quantile(const ResidualSet& residuals, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ValidationError("conformal_quantile: alpha must lie in (0, 1)");
    }
    const std::size_t n = residuals.values.size();
    if (n == 0) throw EmptyCalibrationSet("conformal_quantile: no residuals");
    for (double v : residuals.values) {
        if (!(v >= 0.0) || std::isinf(v)) {
            throw ValidationError("conformal_quantile: residuals must be finite and >= 0");
        }
    }
    const double level = 1.0 - alpha;

    if (!residuals.weights) {
        // Unweighted path: k-th order statistic with the smallest k such
        // that k/(n+1) >= 1-alpha; the +infinity element occupies rank n+1.
        std::size_t k = n + 1;
        for (std::size_t c = 1; c <= n; ++c) {
            if (static_cast<double>(c) / static_cast<double>(n + 1) >= level) {
                k = c;
                break;
            }
        }
        if (k > n) return kInf;
        std::vector<double> sorted(residuals.values);
        std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
        return sorted[k - 1];
    }

    const std::vector<double>& w = *residuals.weights;
    if (w.size() != n) throw ValidationError("conformal_quantile: weight/value size mismatch");
    double total = 0.0;
    for (double wi : w) {
        if (!(wi >= 0.0)) throw ValidationError("conformal_quantile: negative weight");
        total += wi;
    }
    if (!(total > 0.0)) throw ValidationError("conformal_quantile: all weights zero");
    // The virtual +infinity element carries unit raw weight, matching the
    // indicator weighting used for partition-local calibration.
    total += 1.0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return residuals.values[a] < residuals.values[b];
    });
    double cum = 0.0;
    for (std::size_t i = 0; i < n;) {
        // Tied values share a single CDF step.
        std::size_t j = i;
        double block = 0.0;
        while (j < n && residuals.values[order[j]] == residuals.values[order[i]]) {
            block += w[order[j]];
            ++j;
        }
        cum += block;
        if (cum / total >= level) return residuals.values[order[i]];
        i = j;
    }
    return kInf;
}

double scaling_factor(double q_hat, int dof, double alpha) {
    if (!(q_hat >= 0.0)) throw ValidationError("scaling_factor: q_hat must be >= 0");
    if (std::isinf(q_hat)) return kInf;
    return q_hat * q_hat / chi2_quantile(dof, 1.0 - alpha);
}

CalibrationResult calibrate_global(const LinearModel& model,
                                   std::span<const TransitionTuple> tuples,
                                   const Mat4& sigma0, double alpha) {
    if (tuples.empty()) throw EmptyCalibrationSet("calibrate_global: no tuples");
    ResidualSet rs;
    rs.values.reserve(tuples.size());
    for (const TransitionTuple& t : tuples) {
        rs.values.push_back(residual(model, lift(t.state, t.action, sigma0), t.next_state));
    }
    CalibrationResult out;
    out.q_hat = conformal_quantile(rs, alpha);
    out.dof = 4;
    out.alpha = alpha;
    out.xi = scaling_factor(out.q_hat, out.dof, alpha);
    out.n_effective = tuples.size();
    return out;
}

Gaussian calibrated_gaussian(const Gaussian& bel_pred, double xi) {
    if (std::isinf(xi)) {
        throw UnboundedRegion("calibrated_gaussian: infinite scaling factor");
    }
    if (!(xi > 0.0)) {
        throw ValidationError("calibrated_gaussian: xi must be > 0");
    }
    // chol(xi * cov) = sqrt(xi) * chol(cov), so the factor carries over.
    return Gaussian::from_validated_parts(bel_pred.mean(), xi * bel_pred.cov(),
                                          std::sqrt(xi) * bel_pred.chol_lower());
}

}  // namespace lucca
