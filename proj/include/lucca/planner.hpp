#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lucca/locart.hpp"

namespace lucca {

struct MppiConfig {
    int horizon = 8;
    int n_samples = 4096;
    double lambda = 1.0;  // softmin temperature
    Vec2 control_lo = Vec2(-0.9, -0.9);
    Vec2 control_hi = Vec2(0.9, 0.9);
    Mat2 control_noise_cov = Mat2::Identity();
};

struct CostParams {
    double w_terminal = 1.15;
    double w_running = 1.1;
    double w_trace = 1.8;
    double w_collision = 1e5;
    bool normalize_terminal = true;
    /// Also run the collision indicator on the terminal belief (the running
    /// sum covers steps t+1 .. t+H-1 only).
    bool terminal_collision = true;
};

/// One sampled control sequence rolled out with per-step local calibration.
struct RolloutResult {
    std::vector<Gaussian> beliefs;       // calibrated, one per horizon step
    std::vector<double> xis;             // scaling factor applied at each step
    std::vector<std::uint8_t> fallback_flags;
    double cost = 0.0;
};

/// Iterates: propagate the belief, query the scaling factor at the
/// pre-transition mean and the applied action, scale the propagated
/// covariance, and feed the calibrated belief into the next step.
RolloutResult calibrated_rollout(const LinearModel& model, const LocartModel& locart,
                                 const Gaussian& start, std::span<const Vec2> controls);

/// True iff the position-marginal (1-alpha) confidence ellipse of the belief
/// intersects an obstacle or is not fully contained in the workspace bounds.
/// Exact ellipse/rectangle test: the rectangle is whitened by the marginal
/// factor and compared against the unit disk.
bool collision_indicator(const Gaussian& bel, const Environment& env, double alpha);

/// Same test with the chi-square radius precomputed by the caller.
bool collision_with_radius2(const Gaussian& bel, const Environment& env, double radius2);

/// Objective over one rollout: weighted terminal distance to the goal
/// center, running distance, covariance trace and collision penalties.
double rollout_cost(const RolloutResult& r, const Environment& env, const CostParams& params,
                    const Vec2& goal, double alpha);

struct MppiStepResult {
    std::vector<Vec2> controls;     // weighted control sequence, length H
    double min_cost = 0.0;
    double mean_cost = 0.0;
    double mean_first_xi = 0.0;     // mean over samples of the first-step factor
};

/// One MPPI planning step: samples control perturbations around the warm
/// start, scores calibrated rollouts, and softmin-combines them. Sample j
/// always draws from substream j of `rng`, so results are independent of
/// evaluation order.
MppiStepResult mppi_step(const LinearModel& model, const LocartModel& locart,
                         const Environment& env, const Vec4& current,
                         std::span<const Vec2> warm_start, const MppiConfig& cfg,
                         const CostParams& params, const Vec2& goal, RngStream rng);

enum class EpisodeOutcome { Success, Collision, Timeout };

struct EpisodeStep {
    int t = 0;
    Vec4 state = Vec4::Zero();
    Vec2 action = Vec2::Zero();
    int subgoal_index = 0;
    double min_cost = 0.0;
    double mean_xi = 0.0;
    bool collision = false;
};

struct EpisodeRecord {
    EpisodeOutcome outcome = EpisodeOutcome::Timeout;
    int steps = 0;
    std::vector<EpisodeStep> trajectory;
};

/// Online MPC loop: plan, execute the first action on the true dynamics,
/// advance the sub-goal when inside its radius; terminates on final-goal
/// arrival, collision/exit of the true state, or max_steps.
EpisodeRecord mpc_run(const LinearModel& model_true, const LinearModel& model_approx,
                      const LocartModel& locart, const Environment& env,
                      const MppiConfig& cfg, const CostParams& params, int max_steps,
                      RngStream rng);

const char* to_string(EpisodeOutcome outcome);

}  // namespace lucca
