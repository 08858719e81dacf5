#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lucca/statmath.hpp"

namespace lucca {

/// Axis-aligned rectangle in workspace coordinates (meters). Membership is
/// boundary inclusive on all edges.
struct Rect {
    double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;

    bool contains(double x, double y) const {
        return x >= xmin && x <= xmax && y >= ymin && y <= ymax;
    }
    bool contains(const Vec2& p) const { return contains(p[0], p[1]); }
    bool contains_rect(const Rect& inner) const {
        return inner.xmin >= xmin && inner.xmax <= xmax && inner.ymin >= ymin &&
               inner.ymax <= ymax;
    }
    bool well_formed() const { return xmin < xmax && ymin < ymax; }
};

struct Subgoal {
    Vec2 center = Vec2::Zero();
    double radius = 0.0;  // meters

    bool contains(const Vec2& p) const { return (p - center).norm() <= radius; }
};

/// Discrete-time linear-Gaussian model s' = A s + B u + d, d ~ N(0, Q).
struct LinearModel {
    Mat4 A = Mat4::Identity();
    Eigen::Matrix<double, 4, 2> B = Eigen::Matrix<double, 4, 2>::Zero();
    Mat4 Q = Mat4::Identity();  // process noise, PD after regularization
    double dt = 0.0;            // seconds
};

/// Velocity-coupling and input gain applied inside shifted-dynamics regions.
inline constexpr double kShiftedGain = 1.3;

/// Regularizer added to Q so that the (rank-deficient) B*B^T noise stays
/// positive definite.
inline constexpr double kNoiseRegularizer = 1e-12;

/// Double integrator over 2-D positions and velocities:
///   A = [[I, dt*I], [0, I]], B = [[dt^2/2 * I], [dt * I]],
///   Q = noise_scale * B * B^T + regularizer * I.
LinearModel double_integrator_model(double dt, double noise_scale);

/// Workspace description: bounds, obstacles, shifted-dynamics regions and
/// an ordered sub-goal sequence. Units are meters / seconds / m/s^2.
struct Environment {
    std::string name;
    Rect bounds;
    std::vector<Rect> obstacles;
    std::vector<Rect> shifted_regions;
    std::vector<Subgoal> subgoals;
    Vec4 start = Vec4::Zero();
};

bool in_obstacle(const Environment& env, const Vec2& p);
bool in_shifted(const Environment& env, const Vec2& p);
/// Inside bounds and outside every obstacle.
bool in_free_space(const Environment& env, const Vec2& p);

/// Throws ValidationError if any invariant is violated (rectangles outside
/// bounds, empty sub-goal list, start not in free space, ...).
void validate_environment(const Environment& env);

Environment parse_environment(std::istream& in, const std::string& source_name);
Environment load_environment(const std::string& path);
void save_environment(const Environment& env, std::ostream& out);
void save_environment(const Environment& env, const std::string& path);

/// Bundled maps: "corridor", "l-turn", "passage", "u-turn". Identical copies
/// ship in data/ as config files.
Environment builtin_environment(const std::string& name);
std::vector<std::string> builtin_environment_names();
/// Raw config text of a bundled map (what save_environment would emit).
std::string builtin_environment_text(const std::string& name);

/// One calibration sample from the true system.
struct TransitionTuple {
    Vec4 state = Vec4::Zero();
    Vec2 action = Vec2::Zero();
    Vec4 next_state = Vec4::Zero();
};

/// Deterministic part of the true hybrid step. The shifted update applies
/// when the PRE-step position lies in a shifted region (boundary inclusive).
Vec4 true_step_mean(const Environment& env, const LinearModel& model, const Vec4& s,
                    const Vec2& u);

/// True hybrid step with process noise drawn from the given stream.
Vec4 true_step(const Environment& env, const LinearModel& model, const Vec4& s,
               const Vec2& u, RngStream& rng);

/// Linear-Gaussian belief propagation: mean' = A mean + B u,
/// cov' = A cov A^T + Q.
Gaussian approx_propagate(const LinearModel& model, const Gaussian& bel, const Vec2& u);

}  // namespace lucca
