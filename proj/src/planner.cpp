#include "lucca/planner.hpp"

#include <algorithm>
#include <cmath>

namespace lucca {

namespace {

// Lower Cholesky factor of the 2x2 position block of a 4x4 covariance.
struct Chol2 {
    double l00 = 0.0, l10 = 0.0, l11 = 0.0;
};

Chol2 position_block_factor(const Mat4& cov) {
    const double d0 = cov(0, 0);
    if (!(d0 >= kCholeskyPivotFloor)) {
        throw NotPositiveDefinite("collision check: degenerate position covariance");
    }
    Chol2 L;
    L.l00 = std::sqrt(d0);
    L.l10 = cov(1, 0) / L.l00;
    const double d1 = cov(1, 1) - L.l10 * L.l10;
    if (!(d1 >= kCholeskyPivotFloor)) {
        throw NotPositiveDefinite("collision check: degenerate position covariance");
    }
    L.l11 = std::sqrt(d1);
    return L;
}

// Distance test between the unit disk at the origin and a convex
// quadrilateral (the whitened rectangle). Boundary inclusive.
bool disk_hits_quad(const double qx[4], const double qy[4]) {
    bool all_nonneg = true, all_nonpos = true;
    for (int i = 0; i < 4; ++i) {
        const int j = (i + 1) & 3;
        const double cross = (qx[j] - qx[i]) * (-qy[i]) - (qy[j] - qy[i]) * (-qx[i]);
        if (cross < 0.0) all_nonneg = false;
        if (cross > 0.0) all_nonpos = false;
    }
    if (all_nonneg || all_nonpos) return true;  // origin inside the quad
    for (int i = 0; i < 4; ++i) {
        const int j = (i + 1) & 3;
        const double ex = qx[j] - qx[i];
        const double ey = qy[j] - qy[i];
        const double len2 = ex * ex + ey * ey;
        double t = len2 > 0.0 ? (-(qx[i] * ex + qy[i] * ey)) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double px = qx[i] + t * ex;
        const double py = qy[i] + t * ey;
        if (px * px + py * py <= 1.0) return true;
    }
    return false;
}

bool ellipse_intersects_rect(double cx, double cy, const Chol2& L, double r, double ext_x,
                             double ext_y, const Rect& rect) {
    // Bounding-box reject keeps the exact test off the common path.
    if (cx + ext_x < rect.xmin || cx - ext_x > rect.xmax || cy + ext_y < rect.ymin ||
        cy - ext_y > rect.ymax) {
        return false;
    }
    const double corner_x[4] = {rect.xmin, rect.xmax, rect.xmax, rect.xmin};
    const double corner_y[4] = {rect.ymin, rect.ymin, rect.ymax, rect.ymax};
    double qx[4], qy[4];
    const double inv_r = 1.0 / r;
    for (int i = 0; i < 4; ++i) {
        const double dx = corner_x[i] - cx;
        const double dy = corner_y[i] - cy;
        const double v0 = dx / L.l00;
        const double v1 = (dy - L.l10 * v0) / L.l11;
        qx[i] = v0 * inv_r;
        qy[i] = v1 * inv_r;
    }
    return disk_hits_quad(qx, qy);
}

struct StepOut {
    double xi = 0.0;
    bool fallback = false;
};

inline Gaussian advance_belief(const LinearModel& model, const LocartModel& locart,
                               const Gaussian& bel, const Vec2& u, StepOut& out) {
    const XiQuery q = query_xi(locart, make_feature(bel.mean(), u));
    out.xi = q.xi;
    out.fallback = q.fallback_used;
    return calibrated_gaussian(approx_propagate(model, bel, u), q.xi);
}

inline double goal_distance(const Gaussian& bel, const Vec2& goal) {
    return (bel.mean().head<2>() - goal).norm();
}

}  // namespace

bool collision_with_radius2(const Gaussian& bel, const Environment& env, double radius2) {
    if (!(radius2 >= 0.0)) throw ValidationError("collision check: negative radius2");
    const Chol2 L = position_block_factor(bel.cov());
    const double r = std::sqrt(radius2);
    const double cx = bel.mean()[0];
    const double cy = bel.mean()[1];
    const double ext_x = r * L.l00;
    const double ext_y = r * std::sqrt(L.l10 * L.l10 + L.l11 * L.l11);
    const Rect& b = env.bounds;
    if (cx - ext_x < b.xmin || cx + ext_x > b.xmax || cy - ext_y < b.ymin ||
        cy + ext_y > b.ymax) {
        return true;  // confidence ellipse exits the workspace
    }
    if (r == 0.0) return in_obstacle(env, bel.mean().head<2>());
    for (const Rect& rect : env.obstacles) {
        if (ellipse_intersects_rect(cx, cy, L, r, ext_x, ext_y, rect)) return true;
    }
    return false;
}

bool collision_indicator(const Gaussian& bel, const Environment& env, double alpha) {
    return collision_with_radius2(bel, env, chi2_quantile(2, 1.0 - alpha));
}

RolloutResult calibrated_rollout(const LinearModel& model, const LocartModel& locart,
                                 const Gaussian& start, std::span<const Vec2> controls) {
    if (controls.empty()) throw ValidationError("calibrated_rollout: empty control sequence");
    RolloutResult r;
    r.beliefs.reserve(controls.size());
    r.xis.reserve(controls.size());
    r.fallback_flags.reserve(controls.size());
    Gaussian bel = start;
    for (const Vec2& u : controls) {
        StepOut s;
        bel = advance_belief(model, locart, bel, u, s);
        r.beliefs.push_back(bel);
        r.xis.push_back(s.xi);
        r.fallback_flags.push_back(s.fallback ? 1 : 0);
    }
    return r;
}

double rollout_cost(const RolloutResult& r, const Environment& env, const CostParams& params,
                    const Vec2& goal, double alpha) {
    if (r.beliefs.empty()) throw ValidationError("rollout_cost: empty rollout");
    const double radius2 = chi2_quantile(2, 1.0 - alpha);
    const std::size_t H = r.beliefs.size();
    double cost = params.w_terminal * goal_distance(r.beliefs[H - 1], goal);
    for (std::size_t i = 0; i + 1 < H; ++i) {
        cost += params.w_running * goal_distance(r.beliefs[i], goal);
        cost += params.w_trace * r.beliefs[i].cov().trace();
        if (collision_with_radius2(r.beliefs[i], env, radius2)) cost += params.w_collision;
    }
    if (params.terminal_collision &&
        collision_with_radius2(r.beliefs[H - 1], env, radius2)) {
        cost += params.w_collision;
    }
    return cost;
}

MppiStepResult mppi_step(const LinearModel& model, const LocartModel& locart,
                         const Environment& env, const Vec4& current,
                         std::span<const Vec2> warm_start, const MppiConfig& cfg,
                         const CostParams& params, const Vec2& goal, RngStream rng) {
    const int H = cfg.horizon;
    const int ns = cfg.n_samples;
    if (H < 1) throw ValidationError("mppi_step: horizon must be >= 1");
    if (ns < 1) throw ValidationError("mppi_step: n_samples must be >= 1");
    if (static_cast<int>(warm_start.size()) != H) {
        throw ValidationError("mppi_step: warm start length must equal the horizon");
    }
    for (int a = 0; a < 2; ++a) {
        if (!(cfg.control_lo[a] < cfg.control_hi[a])) {
            throw ValidationError("mppi_step: control bounds must satisfy lo < hi");
        }
    }
    const Mat2 noise_chol = cholesky_lower<2>(cfg.control_noise_cov);
    const double radius2 = chi2_quantile(2, 1.0 - locart.alpha);
    const Gaussian start(current, locart.sigma0);

    std::vector<Vec2> controls(static_cast<std::size_t>(ns) * H);
    std::vector<double> base_cost(ns, 0.0);
    std::vector<double> terminal_dist(ns, 0.0);
    double first_xi_sum = 0.0;

    for (int j = 0; j < ns; ++j) {
        RngStream sample_rng = rng.substream(static_cast<std::uint64_t>(j));
        Vec2* u = &controls[static_cast<std::size_t>(j) * H];
        for (int i = 0; i < H; ++i) {
            const Vec2 z(sample_rng.normal(), sample_rng.normal());
            const Vec2 eps = noise_chol * z;
            u[i][0] = std::clamp(warm_start[i][0] + eps[0], cfg.control_lo[0], cfg.control_hi[0]);
            u[i][1] = std::clamp(warm_start[i][1] + eps[1], cfg.control_lo[1], cfg.control_hi[1]);
        }

        Gaussian bel = start;
        double cost = 0.0;
        for (int i = 0; i < H; ++i) {
            StepOut s;
            bel = advance_belief(model, locart, bel, u[i], s);
            if (i == 0) first_xi_sum += s.xi;
            const bool last = (i == H - 1);
            if (!last) {
                cost += params.w_running * goal_distance(bel, goal);
                cost += params.w_trace * bel.cov().trace();
                if (collision_with_radius2(bel, env, radius2)) cost += params.w_collision;
            } else {
                terminal_dist[j] = goal_distance(bel, goal);
                if (params.terminal_collision && collision_with_radius2(bel, env, radius2)) {
                    cost += params.w_collision;
                }
            }
        }
        base_cost[j] = cost;
    }

    // Optionally min-max rescale the terminal distance across the batch
    // before it enters the weighting.
    std::vector<double> total(ns);
    double dmin = terminal_dist[0], dmax = terminal_dist[0];
    for (int j = 1; j < ns; ++j) {
        dmin = std::min(dmin, terminal_dist[j]);
        dmax = std::max(dmax, terminal_dist[j]);
    }
    const double dspan = dmax - dmin;
    for (int j = 0; j < ns; ++j) {
        const double term = params.normalize_terminal
                                ? (dspan > 0.0 ? (terminal_dist[j] - dmin) / dspan : 0.0)
                                : terminal_dist[j];
        total[j] = base_cost[j] + params.w_terminal * term;
    }

    double cmin = total[0], csum = 0.0;
    for (int j = 0; j < ns; ++j) cmin = std::min(cmin, total[j]);
    std::vector<double> weight(ns);
    double wsum = 0.0;
    for (int j = 0; j < ns; ++j) {
        weight[j] = std::exp(-(total[j] - cmin) / cfg.lambda);
        wsum += weight[j];
        csum += total[j];
    }

    MppiStepResult out;
    out.controls.assign(H, Vec2::Zero());
    for (int j = 0; j < ns; ++j) {
        const double w = weight[j] / wsum;
        const Vec2* u = &controls[static_cast<std::size_t>(j) * H];
        for (int i = 0; i < H; ++i) out.controls[i] += w * u[i];
    }
    out.min_cost = cmin;
    out.mean_cost = csum / ns;
    out.mean_first_xi = first_xi_sum / ns;
    return out;
}

EpisodeRecord mpc_run(const LinearModel& model_true, const LinearModel& model_approx,
                      const LocartModel& locart, const Environment& env,
                      const MppiConfig& cfg, const CostParams& params, int max_steps,
                      RngStream rng) {
    EpisodeRecord rec;
    const RngStream plan_streams = rng.substream("mppi");
    const RngStream noise_streams = rng.substream("episode-noise");
    const std::size_t last_goal = env.subgoals.size() - 1;

    Vec4 state = env.start;
    std::size_t target = 0;
    std::vector<Vec2> warm(cfg.horizon, Vec2::Zero());

    for (int t = 0; t < max_steps; ++t) {
        const Vec2 pos = state.head<2>();
        if (env.subgoals[last_goal].contains(pos)) {
            rec.outcome = EpisodeOutcome::Success;
            rec.steps = t;
            return rec;
        }
        if (target < last_goal && env.subgoals[target].contains(pos)) ++target;

        const MppiStepResult plan =
            mppi_step(model_approx, locart, env, state, warm, cfg, params,
                      env.subgoals[target].center, plan_streams.substream(t));
        const Vec2 u = plan.controls[0];

        RngStream step_rng = noise_streams.substream(t);
        const Vec4 next = true_step(env, model_true, state, u, step_rng);
        const bool collided = !in_free_space(env, next.head<2>());

        rec.trajectory.push_back({t, state, u, static_cast<int>(target), plan.min_cost,
                                  plan.mean_first_xi, collided});
        state = next;
        if (collided) {
            rec.outcome = EpisodeOutcome::Collision;
            rec.steps = t + 1;
            return rec;
        }

        // Warm-start shift with zero padding for the next iteration.
        for (int i = 0; i + 1 < cfg.horizon; ++i) warm[i] = plan.controls[i + 1];
        warm[cfg.horizon - 1] = Vec2::Zero();
    }
    rec.outcome = EpisodeOutcome::Timeout;
    rec.steps = max_steps;
    return rec;
}

const char* to_string(EpisodeOutcome outcome) {
    switch (outcome) {
        case EpisodeOutcome::Success: return "success";
        case EpisodeOutcome::Collision: return "collision";
        case EpisodeOutcome::Timeout: return "timeout";
    }
    return "unknown";
}

}  // namespace lucca
