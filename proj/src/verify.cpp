#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "lucca/harness.hpp"
#include "lucca/textio.hpp"

namespace lucca {

namespace {

Mat4 random_spd4(RngStream& rng, double base = 0.1) {
    Mat4 g;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) g(i, j) = rng.normal();
    }
    return Mat4(g * g.transpose()) + base * Mat4::Identity();
}

struct Check {
    std::string name;
    std::function<std::string()> body;  // returns "" on pass, detail on fail
};

// Self-sampled squared Mahalanobis distances follow the chi-square law with
// N degrees of freedom; checked with a Kolmogorov-Smirnov test at 0.01.
std::string check_chi2_law(int n_samples) {
    RngStream rng(42);
    RngStream g_rng = rng.substream("gaussian");
    const Mat4 cov = random_spd4(g_rng);
    Vec4 mean;
    for (int i = 0; i < 4; ++i) mean[i] = g_rng.normal();
    const Gaussian g(mean, cov);
    RngStream s_rng = rng.substream("samples");
    std::vector<double> d2;
    d2.reserve(n_samples);
    for (int i = 0; i < n_samples; ++i) {
        d2.push_back(g.mahalanobis2(sample_gaussian_one(g, s_rng)));
    }
    std::sort(d2.begin(), d2.end());
    double ks = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        const double cdf = regularized_gamma_p(2.0, 0.5 * d2[i]);
        ks = std::max(ks, std::abs(cdf - (i + 1.0) / n_samples));
        ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n_samples));
    }
    const double crit = 1.628 / std::sqrt(static_cast<double>(n_samples));
    if (ks > crit) {
        return "KS statistic " + format_double(ks) + " exceeds 0.01 critical value " +
               format_double(crit);
    }
    return "";
}

std::string check_whitening(int n_samples) {
    RngStream rng(7);
    const Mat4 cov = random_spd4(rng);
    Vec4 mean;
    for (int i = 0; i < 4; ++i) mean[i] = 2.0 * rng.normal();
    const Gaussian g(mean, cov);
    const Mat4 L = g.chol_lower();
    Vec4 wsum = Vec4::Zero();
    Mat4 wsq = Mat4::Zero();
    RngStream s_rng = rng.substream("samples");
    for (int i = 0; i < n_samples; ++i) {
        const Vec4 y = sample_gaussian_one(g, s_rng);
        const Vec4 w = L.triangularView<Eigen::Lower>().solve(y - mean);
        wsum += w;
        wsq += w * w.transpose();
    }
    const Vec4 wmean = wsum / n_samples;
    const Mat4 wcov = wsq / n_samples - wmean * wmean.transpose();
    if (wmean.lpNorm<Eigen::Infinity>() > 0.02) {
        return "whitened sample mean off by " + format_double(wmean.lpNorm<Eigen::Infinity>());
    }
    const double cov_err = (wcov - Mat4::Identity()).lpNorm<Eigen::Infinity>();
    if (cov_err > 0.05) return "whitened sample covariance off by " + format_double(cov_err);
    return "";
}

std::string check_ellipsoid_mass(int n_samples) {
    RngStream rng(11);
    const Mat4 cov = random_spd4(rng);
    const Gaussian g(Vec4(0.3, -0.2, 1.0, 0.0), cov);
    for (double alpha : {0.05, 0.1, 0.25}) {
        const ConfidenceEllipsoid e = confidence_ellipsoid(g, alpha);
        RngStream s_rng = rng.substream(static_cast<std::uint64_t>(alpha * 1000));
        int inside = 0;
        for (int i = 0; i < n_samples; ++i) {
            if (ellipsoid_contains(e, sample_gaussian_one(g, s_rng))) ++inside;
        }
        const double frac = static_cast<double>(inside) / n_samples;
        if (std::abs(frac - (1.0 - alpha)) > 0.01) {
            return "alpha=" + format_double(alpha) + ": fraction inside " +
                   format_double(frac);
        }
    }
    return "";
}

std::string check_chi2_monotone() {
    for (int dof = 1; dof <= 8; ++dof) {
        double prev = 0.0;
        for (double p : {0.05, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99}) {
            const double q = chi2_quantile(dof, p);
            if (!(q > prev)) return "not increasing in p at dof " + std::to_string(dof);
            prev = q;
        }
    }
    for (double p : {0.05, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99}) {
        double prev = 0.0;
        for (int dof = 1; dof <= 8; ++dof) {
            const double q = chi2_quantile(dof, p);
            if (!(q > prev)) return "not increasing in dof at p " + format_double(p);
            prev = q;
        }
    }
    return "";
}

std::string check_loewner_properties() {
    RngStream rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const Mat4 a = random_spd4(rng);
        if (!loewner_geq<4>(a, a)) return "not reflexive";
        Mat4 bump;
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) bump(i, j) = rng.normal();
        }
        const Mat4 b = Mat4(a + bump * bump.transpose()) + 0.05 * Mat4::Identity();
        const Mat4 c = Mat4(b + bump.transpose() * bump) + 0.05 * Mat4::Identity();
        if (!loewner_geq<4>(b, a) || !loewner_geq<4>(c, b)) return "constructed order broken";
        if (!loewner_geq<4>(c, a)) return "not transitive";
        if (loewner_geq<4>(a, b)) return "antisymmetry violated for strictly larger matrix";
    }
    return "";
}

std::string check_mahalanobis_translation() {
    RngStream rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat4 cov = random_spd4(rng);
        Vec4 mean, y, shift;
        for (int i = 0; i < 4; ++i) {
            mean[i] = rng.normal();
            y[i] = rng.normal();
            shift[i] = 3.0 * rng.normal();
        }
        const double d0 = Gaussian(mean, cov).mahalanobis(y);
        const double d1 = Gaussian(mean + shift, cov).mahalanobis(y + shift);
        if (std::abs(d0 - d1) > 1e-9) return "translation changed the distance";
    }
    return "";
}

std::string check_conformal_mechanics() {
    RngStream rng(19);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform() * 40);
        std::vector<double> values(n);
        for (double& v : values) v = 5.0 * rng.uniform();
        const double alpha = 0.05 + 0.9 * rng.uniform();
        const double q = conformal_quantile({values, std::nullopt}, alpha);
        std::vector<double> shuffled = values;
        for (int i = n; i > 1; --i) {
            std::swap(shuffled[i - 1],
                      shuffled[static_cast<std::size_t>(rng.uniform() * i)]);
        }
        if (conformal_quantile({shuffled, std::nullopt}, alpha) != q) {
            return "quantile not permutation invariant";
        }
        const double alpha2 = alpha * rng.uniform();  // alpha2 <= alpha
        const double q2 = conformal_quantile({values, std::nullopt}, alpha2);
        if (!(q <= q2)) return "nesting violated: larger alpha gave larger quantile";
    }
    return "";
}

std::string check_dynamics_consistency() {
    const LinearModel model = double_integrator_model(0.05, 0.1);
    const Environment env = builtin_environment("corridor");
    const Mat4 sigma0 = 2e-5 * Mat4::Identity();
    RngStream rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        Vec4 s(0.3 + 3.6 * rng.uniform(), 0.3 + 3.6 * rng.uniform(), 2.0 * rng.normal(),
               2.0 * rng.normal());
        const Vec2 u(rng.normal(), rng.normal());
        const Vec4 mean_true = true_step_mean(env, model, s, u);
        const Vec4 mean_approx = approx_propagate(model, Gaussian(s, sigma0), u).mean();
        const bool shifted = in_shifted(env, s.head<2>());
        const double gap = (mean_true.head<2>() - mean_approx.head<2>()).norm();
        if (!shifted && gap > 1e-12) return "white-region one-step mismatch " + format_double(gap);
        if (shifted && (s.head<2>().squaredNorm() > 0 || u.squaredNorm() > 0) &&
            s.tail<2>().squaredNorm() + u.squaredNorm() > 1e-12 && !(gap > 0.0)) {
            return "shifted-region mismatch unexpectedly zero";
        }
    }
    return "";
}

std::string check_propagation_monotone(int n_pairs) {
    const LinearModel model = double_integrator_model(0.05, 0.1);
    RngStream rng(29);
    const Vec2 u(0.1, -0.2);
    for (int trial = 0; trial < n_pairs; ++trial) {
        const Mat4 small = random_spd4(rng, 0.01);
        Mat4 g;
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) g(i, j) = rng.normal();
        }
        const Mat4 big = Mat4(small + g * g.transpose()) + 1e-6 * Mat4::Identity();
        const Gaussian pa = approx_propagate(model, Gaussian(Vec4::Zero(), big), u);
        const Gaussian pb = approx_propagate(model, Gaussian(Vec4::Zero(), small), u);
        if (!loewner_geq<4>(pa.cov(), pb.cov())) return "Loewner order not preserved";
    }
    // Trace monotonicity holds along rollouts: starting from an isotropic
    // covariance the position-velocity cross block stays PSD, so the
    // dt-coupling term cannot shrink the trace.
    for (int trial = 0; trial < 20; ++trial) {
        Gaussian bel(Vec4::Zero(), (1e-5 + 0.1 * rng.uniform()) * Mat4::Identity());
        for (int step = 0; step < 50; ++step) {
            const Gaussian next = approx_propagate(model, bel, u);
            if (next.cov().trace() < bel.cov().trace() * (1.0 - 1e-12)) {
                return "trace decreased along a rollout";
            }
            bel = next;
        }
    }
    return "";
}

std::string check_identity_rollout() {
    const LinearModel model = double_integrator_model(0.05, 0.1);
    const Mat4 sigma0 = 2e-5 * Mat4::Identity();
    const LocartModel ident = LocartModel::identity(0.1, sigma0);
    const std::vector<Vec2> controls(8, Vec2(0.3, -0.1));
    const Gaussian start(Vec4(1.0, 2.0, 0.5, -0.5), sigma0);
    const RolloutResult r = calibrated_rollout(model, ident, start, controls);
    Vec4 mean = start.mean();
    Mat4 cov = start.cov();
    for (std::size_t i = 0; i < controls.size(); ++i) {
        mean = model.A * mean + model.B * controls[i];
        cov = model.A * cov * model.A.transpose() + model.Q;
        if ((r.beliefs[i].mean() - mean).lpNorm<Eigen::Infinity>() > 1e-12 ||
            (r.beliefs[i].cov() - cov).lpNorm<Eigen::Infinity>() > 1e-12) {
            return "identity-factor rollout diverged from the closed-form recursion at step " +
                   std::to_string(i);
        }
        if (r.xis[i] != 1.0) return "identity model produced xi != 1";
    }
    return "";
}

std::string check_marginal_coverage(int n_tuples, int n_seeds) {
    const Environment env = builtin_environment("corridor");
    const LinearModel model = double_integrator_model(0.05, 0.1);
    const Mat4 sigma0 = 2e-5 * Mat4::Identity();
    for (double alpha : {0.05, 0.1, 0.2}) {
        double cov_sum = 0.0;
        for (int seed = 0; seed < n_seeds; ++seed) {
            RngStream rng(1000 + seed);
            std::vector<TransitionTuple> tuples;
            while (static_cast<int>(tuples.size()) < n_tuples) {
                Vec4 s(env.bounds.xmin + (env.bounds.xmax - env.bounds.xmin) * rng.uniform(),
                       env.bounds.ymin + (env.bounds.ymax - env.bounds.ymin) * rng.uniform(),
                       2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0);
                if (!in_free_space(env, s.head<2>())) continue;
                const Vec2 u(1.6 * rng.uniform() - 0.8, 1.6 * rng.uniform() - 0.8);
                tuples.push_back({s, u, true_step(env, model, s, u, rng)});
            }
            const std::size_t half = tuples.size() / 2;
            const std::span<const TransitionTuple> cal(tuples.data(), half);
            const CalibrationResult res = calibrate_global(model, cal, sigma0, alpha);
            const double q2 = res.q_hat * res.q_hat;
            int inside = 0;
            for (std::size_t i = half; i < tuples.size(); ++i) {
                const LiftedInput x = lift(tuples[i].state, tuples[i].action, sigma0);
                const Gaussian pred = approx_propagate(model, x.belief, x.action);
                if (pred.mahalanobis2(tuples[i].next_state) <= q2) ++inside;
            }
            cov_sum += static_cast<double>(inside) / static_cast<double>(tuples.size() - half);
        }
        const double mean_cov = cov_sum / n_seeds;
        if (mean_cov < 1.0 - alpha - 0.02) {
            return "alpha=" + format_double(alpha) + ": held-out coverage " +
                   format_double(mean_cov);
        }
    }
    return "";
}

}  // namespace

std::vector<CheckResult> run_property_suite(bool fast) {
    const int big = fast ? 20000 : 100000;
    const std::vector<Check> checks = {
        {"whitening-identity", [&] { return check_whitening(big); }},
        {"mahalanobis-chi2-law", [&] { return check_chi2_law(big); }},
        {"ellipsoid-probability-mass", [&] { return check_ellipsoid_mass(big); }},
        {"chi2-quantile-monotone", check_chi2_monotone},
        {"loewner-order-properties", check_loewner_properties},
        {"mahalanobis-translation-invariance", check_mahalanobis_translation},
        {"conformal-quantile-mechanics", check_conformal_mechanics},
        {"hybrid-dynamics-consistency", check_dynamics_consistency},
        {"propagation-matrix-monotone", [&] { return check_propagation_monotone(fast ? 200 : 1000); }},
        {"identity-rollout-baseline", check_identity_rollout},
        {"marginal-coverage-splitcp", [&] { return check_marginal_coverage(2000, fast ? 3 : 10); }},
    };
    std::vector<CheckResult> results;
    for (const Check& c : checks) {
        CheckResult r;
        r.name = c.name;
        try {
            r.detail = c.body();
            r.pass = r.detail.empty();
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = std::string("exception: ") + e.what();
        }
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace lucca
