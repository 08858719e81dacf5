#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lucca/dynamics.hpp"
#include "lucca/statmath.hpp"

namespace lucca {

/// A calibration input lifted to distribution space: the recorded state
/// becomes the mean of a Gaussian with the configured initial covariance.
struct LiftedInput {
    Gaussian belief;
    Vec2 action = Vec2::Zero();
};

LiftedInput lift(const Vec4& state, const Vec2& action, const Mat4& sigma0);

/// Nonconformity score: Mahalanobis distance of the true next state under
/// the propagated belief.
double residual(const LinearModel& model, const LiftedInput& x, const Vec4& next_state);

/// Residuals with optional nonnegative weights (absent means equal weights).
struct ResidualSet {
    std::vector<double> values;
    std::optional<std::vector<double>> weights;
};

/// Conservative empirical quantile over the residuals augmented with a
/// virtual +infinity element of unit raw weight: returns
/// inf{x : F(x) >= 1-alpha}, which for n equally-weighted residuals is the
/// k-th order statistic with k = ceil((n+1)(1-alpha)), or +infinity when
/// k > n. Level comparisons are performed in double precision so ties at
/// the threshold resolve identically everywhere.
double conformal_quantile(const ResidualSet& residuals, double alpha);

/// xi = q_hat^2 / chi2_quantile(dof, 1-alpha); +infinity maps to +infinity.
double scaling_factor(double q_hat, int dof, double alpha);

struct CalibrationResult {
    double q_hat = 0.0;  // >= 0, may be +infinity
    double xi = 0.0;     // >= 0, may be +infinity
    double alpha = 0.0;
    int dof = 0;
    std::size_t n_effective = 0;
};

/// Single global factor over all tuples (no partitioning).
CalibrationResult calibrate_global(const LinearModel& model,
                                   std::span<const TransitionTuple> tuples,
                                   const Mat4& sigma0, double alpha);

/// Scales the covariance by xi, leaving the mean untouched. Throws
/// UnboundedRegion for infinite xi: the caller decides the fallback.
Gaussian calibrated_gaussian(const Gaussian& bel_pred, double xi);

}  // namespace lucca
