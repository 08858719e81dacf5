#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lucca/planner.hpp"

namespace lucca {

/// Cartesian calibration grid: per-axis value lists for positions,
/// velocities and accelerations.
struct GridSpec {
    std::vector<double> px, py;  // m
    std::vector<double> vx, vy;  // m/s
    std::vector<double> ax, ay;  // m/s^2
    bool restrict_to_free_space = true;
};

/// 16 positions per axis across the workspace bounds, velocities
/// {-1,-1/2,0,1/2,1} and accelerations {-0.8,-0.4,0,0.4,0.8}.
GridSpec default_grid(const Environment& env);

/// Rolls every grid state-action pair one step through the true (hybrid,
/// noisy) dynamics. Deterministic given the stream.
std::vector<TransitionTuple> generate_calibration_set(const Environment& env,
                                                      const LinearModel& model_true,
                                                      const GridSpec& spec, RngStream& rng);

struct CoverageStart {
    Vec4 state = Vec4::Zero();
    Vec2 control = Vec2::Zero();  // held constant over the horizon
    std::string label;
};

/// Every run-shaping knob in one place. Serialized as a structured text
/// file; the canonical serialization feeds the manifest's config hash.
struct ExperimentPreset {
    std::string name;
    std::string environment = "corridor";  // builtin name or config path
    double alpha = 0.1;
    std::uint64_t seed = 1;
    double dt = 0.05;
    double noise_scale = 0.1;
    double sigma0_scale = 2e-5;  // Sigma_0 = sigma0_scale * I
    GridSpec grid;               // empty axis lists mean "use default_grid"
    LocartConfig locart;
    MppiConfig mppi;
    CostParams cost;
    int n_runs = 30;
    int max_steps = 1500;
    int coverage_samples = 2500;
    std::vector<CoverageStart> coverage_starts;
};

/// Preset with all defaults for one bundled environment (the coverage
/// starts are defined on the corridor map).
ExperimentPreset make_default_preset(const std::string& environment);

ExperimentPreset parse_preset(std::istream& in, const std::string& source_name);
ExperimentPreset load_preset(const std::string& path);
void save_preset(const ExperimentPreset& p, std::ostream& out);
void save_preset(const ExperimentPreset& p, const std::string& path);
/// Canonical serialization (what save_preset writes).
std::string preset_text(const ExperimentPreset& p);
/// FNV-1a hash of the canonical serialization, hex-encoded.
std::string preset_config_hash(const ExperimentPreset& p);

/// Bundled presets: one planning preset per environment plus
/// "coverage-corridor". Identical copies ship in data/presets/.
ExperimentPreset builtin_preset(const std::string& name);
std::vector<std::string> builtin_preset_names();
std::string builtin_preset_text(const std::string& name);

/// Resolves preset.environment against builtins, then the filesystem.
Environment resolve_environment(const ExperimentPreset& p);
Mat4 preset_sigma0(const ExperimentPreset& p);
LinearModel preset_model(const ExperimentPreset& p);

/// Grid generation + LOCART fit, with wall-clock timings.
struct FitResult {
    LocartModel model;
    std::size_t n_tuples = 0;
    double generate_seconds = 0.0;
    double fit_seconds = 0.0;
};
FitResult fit_from_preset(const ExperimentPreset& p);

struct CoverageScenario {
    std::string label;
    // One entry per horizon step.
    std::vector<double> lucca_coverage;
    std::vector<double> baseline_coverage;
    std::vector<double> lucca_xi;
    std::vector<std::uint8_t> lucca_fallback;
};

struct CoverageReport {
    std::string environment;
    double alpha = 0.0;
    std::uint64_t seed = 0;
    int n_samples = 0;
    int horizon = 0;
    std::vector<CoverageScenario> scenarios;
};

/// For each start: build the locally calibrated rollout and the
/// uncalibrated baseline under the same constant controls, then report the
/// per-step fraction of sampled true trajectories inside each method's
/// (1-alpha) ellipsoid.
CoverageReport run_coverage_experiment(const ExperimentPreset& preset,
                                       std::span<const CoverageStart> starts, int n_samples,
                                       const LocartModel* prefit = nullptr);

struct PlanningRow {
    std::string environment;
    std::string method;  // "lucca" or "baseline"
    int runs = 0;
    double collision_rate = 0.0;
    double success_rate = 0.0;
    double mean_steps = 0.0;  // over successful runs only
    double std_steps = 0.0;
};

/// n_runs seeded MPC episodes per method; the baseline is the identity
/// (xi = 1) model through the same rollout code.
std::vector<PlanningRow> run_planning_benchmark(const ExperimentPreset& preset,
                                                const LocartModel* prefit = nullptr,
                                                std::vector<EpisodeRecord>* episodes = nullptr);

void write_coverage_csv(const CoverageScenario& s, std::ostream& out);
void write_planning_csv(std::span<const PlanningRow> rows, std::ostream& out);
void write_episode_csv(const EpisodeRecord& rec, std::ostream& out);

/// Run manifest: config hash, seed, tool and format versions.
void write_manifest(const ExperimentPreset& p, const std::string& subcommand,
                    std::ostream& out);

inline constexpr const char* kToolVersion = "0.1.0";

/// One named invariant check; run by the `verify` CLI subcommand.
struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Statistical and algebraic property suite over the library invariants.
/// `fast` trims the Monte Carlo sample counts.
std::vector<CheckResult> run_property_suite(bool fast);

int run_cli(int argc, const char* const* argv);

}  // namespace lucca
