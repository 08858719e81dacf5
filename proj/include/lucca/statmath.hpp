#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "lucca/errors.hpp"
#include "lucca/rng.hpp"

namespace lucca {

template <int N>
using Vec = Eigen::Matrix<double, N, 1>;
template <int N>
using Mat = Eigen::Matrix<double, N, N>;

using Vec2 = Vec<2>;
using Vec4 = Vec<4>;
using Mat2 = Mat<2>;
using Mat4 = Mat<4>;

/// Pivot floor for Cholesky factorizations: a diagonal pivot below this is
/// treated as a positive-definiteness failure.
inline constexpr double kCholeskyPivotFloor = 1e-12;

/// Absolute/relative tolerance for symmetry of covariance matrices.
inline constexpr double kSymmetryTol = 1e-10;

template <int N>
bool is_symmetric(const Mat<N>& m, double tol = kSymmetryTol) {
    const double scale = std::max(1.0, m.template lpNorm<Eigen::Infinity>());
    return (m - m.transpose()).template lpNorm<Eigen::Infinity>() <= tol * scale;
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Throws NotPositiveDefinite if any pivot falls below the pivot floor.
template <int N>
Mat<N> cholesky_lower(const Mat<N>& m) {
    Mat<N> L = Mat<N>::Zero();
    for (int j = 0; j < N; ++j) {
        double d = m(j, j);
        for (int k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
        if (!(d >= kCholeskyPivotFloor)) {  // negated so NaN also fails
            throw NotPositiveDefinite("cholesky_lower: pivot " + std::to_string(d) +
                                      " at index " + std::to_string(j));
        }
        L(j, j) = std::sqrt(d);
        for (int i = j + 1; i < N; ++i) {
            double s = m(i, j);
            for (int k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            L(i, j) = s / L(j, j);
        }
    }
    return L;
}

/// Multivariate normal belief with a cached Cholesky factor. Construction
/// validates finiteness, symmetry (then symmetrizes to kill floating-point
/// drift from repeated propagation) and positive definiteness.
template <int N>
class GaussianT {
public:
    GaussianT(const Vec<N>& mean, const Mat<N>& cov) : mean_(mean) {
        if (!mean.allFinite() || !cov.allFinite()) {
            throw ValidationError("Gaussian: non-finite mean or covariance entry");
        }
        if (!is_symmetric<N>(cov)) {
            throw ValidationError("Gaussian: covariance asymmetry exceeds tolerance");
        }
        cov_ = 0.5 * (cov + cov.transpose());
        chol_ = cholesky_lower<N>(cov_);
    }

    /// Assembles a Gaussian from parts whose invariants the caller already
    /// guarantees (e.g. scaling a valid covariance by a positive factor,
    /// where the factor of the scaled matrix is known in closed form). The
    /// pivot floor is still enforced so degenerate covariances fail loudly.
    static GaussianT from_validated_parts(const Vec<N>& mean, const Mat<N>& cov,
                                          const Mat<N>& chol) {
        for (int i = 0; i < N; ++i) {
            if (!(chol(i, i) * chol(i, i) >= kCholeskyPivotFloor)) {
                throw NotPositiveDefinite("Gaussian: scaled covariance lost definiteness");
            }
        }
        GaussianT g;
        g.mean_ = mean;
        g.cov_ = cov;
        g.chol_ = chol;
        return g;
    }

    const Vec<N>& mean() const { return mean_; }
    const Mat<N>& cov() const { return cov_; }
    const Mat<N>& chol_lower() const { return chol_; }

    double mahalanobis2(const Vec<N>& y) const {
        // Triangular solve on the cached factor; never forms the inverse.
        const Vec<N> w = chol_.template triangularView<Eigen::Lower>().solve(y - mean_);
        return w.squaredNorm();
    }

    double mahalanobis(const Vec<N>& y) const { return std::sqrt(mahalanobis2(y)); }

private:
    GaussianT() = default;

    Vec<N> mean_;
    Mat<N> cov_;
    Mat<N> chol_;
};

using Gaussian = GaussianT<4>;
using Gaussian2 = GaussianT<2>;

template <int N>
double mahalanobis(const GaussianT<N>& g, const Vec<N>& y) {
    return g.mahalanobis(y);
}

/// Solid hyperellipsoid {y : (y-center)^T shape^{-1} (y-center) <= radius2}.
template <int N>
struct ConfidenceEllipsoidT {
    Vec<N> center;
    Mat<N> shape;     // positive definite
    double radius2 = 0.0;  // squared Mahalanobis threshold, >= 0
};

using ConfidenceEllipsoid = ConfidenceEllipsoidT<4>;
using ConfidenceEllipsoid2 = ConfidenceEllipsoidT<2>;

/// Boundary-inclusive membership test.
template <int N>
bool ellipsoid_contains(const ConfidenceEllipsoidT<N>& e, const Vec<N>& y) {
    if (!(e.radius2 >= 0.0)) throw ValidationError("ellipsoid: negative radius2");
    const Mat<N> L = cholesky_lower<N>(e.shape);
    const Vec<N> w = L.template triangularView<Eigen::Lower>().solve(y - e.center);
    return w.squaredNorm() <= e.radius2;
}

double chi2_quantile(int dof, double p);

/// Regularized lower incomplete gamma P(a, x) (series + continued fraction).
double regularized_gamma_p(double a, double x);

/// (1-alpha) confidence region of a Gaussian.
template <int N>
ConfidenceEllipsoidT<N> confidence_ellipsoid(const GaussianT<N>& g, double alpha) {
    return {g.mean(), g.cov(), chi2_quantile(N, 1.0 - alpha)};
}

/// Loewner comparison m >= n: smallest eigenvalue of (m - n) >= -tol.
template <int N>
bool loewner_geq(const Mat<N>& m, const Mat<N>& n, double tol = 1e-10) {
    const Mat<N> d = 0.5 * ((m - n) + (m - n).transpose());
    Eigen::SelfAdjointEigenSolver<Mat<N>> es(d, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -tol;
}

/// Draws n samples mean + L z with standard-normal z. Mutates only the
/// caller-provided stream; deterministic given the stream state.
template <int N>
std::vector<Vec<N>> sample_gaussian(const GaussianT<N>& g, RngStream& rng, int n) {
    std::vector<Vec<N>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Vec<N> z;
        for (int j = 0; j < N; ++j) z[j] = rng.normal();
        out.push_back(g.mean() + g.chol_lower() * z);
    }
    return out;
}

template <int N>
Vec<N> sample_gaussian_one(const GaussianT<N>& g, RngStream& rng) {
    Vec<N> z;
    for (int j = 0; j < N; ++j) z[j] = rng.normal();
    return g.mean() + g.chol_lower() * z;
}

}  // namespace lucca
