#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lucca/harness.hpp"
#include "lucca/textio.hpp"

namespace lucca {

namespace {

namespace fs = std::filesystem;

struct CommonOpts {
    std::string preset;
    std::string env;
    double alpha = -1.0;
    std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--preset", opts.preset, "Preset name (builtin) or preset file path");
    cmd->add_option("--env", opts.env, "Environment name (builtin) or config file path");
    cmd->add_option("--alpha", opts.alpha, "Miscoverage level override, in (0,1)");
    cmd->add_option("--seed", opts.seed, "Seed override (non-negative integer)");
}

ExperimentPreset resolve_preset_opts(const CommonOpts& opts) {
    ExperimentPreset p;
    if (!opts.preset.empty()) {
        const auto names = builtin_preset_names();
        if (std::find(names.begin(), names.end(), opts.preset) != names.end()) {
            p = builtin_preset(opts.preset);
        } else {
            p = load_preset(opts.preset);
        }
        if (!opts.env.empty()) p.environment = opts.env;
    } else if (!opts.env.empty()) {
        const auto names = builtin_environment_names();
        if (std::find(names.begin(), names.end(), opts.env) != names.end()) {
            p = builtin_preset(opts.env);
        } else {
            p = make_default_preset(opts.env);
            p.name = fs::path(opts.env).stem().string();
        }
    } else {
        throw ValidationError("either --preset or --env is required");
    }
    if (opts.alpha >= 0.0) {
        if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) {
            throw ValidationError("--alpha must lie in (0, 1)");
        }
        p.alpha = opts.alpha;
    }
    if (opts.seed >= 0) p.seed = static_cast<std::uint64_t>(opts.seed);
    return p;
}

void write_manifest_file(const ExperimentPreset& p, const std::string& subcommand,
                         const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError(path.string() + ": cannot open file for writing");
    write_manifest(p, subcommand, out);
}

fs::path ensure_out_dir(const std::string& out) {
    fs::path dir(out);
    fs::create_directories(dir);
    return dir;
}

int cmd_calibrate(const CommonOpts& opts, const std::string& out_file) {
    const ExperimentPreset p = resolve_preset_opts(opts);
    const FitResult fit = fit_from_preset(p);
    save_locart(fit.model, out_file);
    write_manifest_file(p, "calibrate", out_file + ".manifest");

    int leaves = 0, unbounded = 0;
    for (const TreeNode& n : fit.model.tree.nodes) {
        if (n.is_leaf()) {
            ++leaves;
            if (n.unbounded) ++unbounded;
        }
    }
    std::cout << "environment " << p.environment << "\n"
              << "tuples " << fit.n_tuples << "\n"
              << "generate_seconds " << format_double(fit.generate_seconds) << "\n"
              << "fit_seconds " << format_double(fit.fit_seconds) << "\n"
              << "leaves " << leaves << "\n"
              << "unbounded_leaves " << unbounded << "\n"
              << "fallback_xi " << format_double(fit.model.global_fallback.xi) << "\n"
              << "model " << out_file << "\n";
    return 0;
}

int cmd_coverage(const CommonOpts& opts, const std::string& out_dir, int samples_override) {
    ExperimentPreset p = resolve_preset_opts(opts);
    if (p.coverage_starts.empty()) {
        throw ValidationError("preset '" + p.name + "' defines no coverage_start entries");
    }
    const int n = samples_override > 0 ? samples_override : p.coverage_samples;
    const CoverageReport report = run_coverage_experiment(p, p.coverage_starts, n);
    const fs::path dir = ensure_out_dir(out_dir);
    for (const CoverageScenario& s : report.scenarios) {
        std::ofstream out(dir / (s.label + ".csv"));
        write_coverage_csv(s, out);
    }
    write_manifest_file(p, "coverage", dir / "manifest.txt");
    std::cout << "scenarios " << report.scenarios.size() << "\n"
              << "samples " << report.n_samples << "\n"
              << "out " << dir.string() << "\n";
    return 0;
}

int cmd_plan(const CommonOpts& opts, const std::string& out_dir, const std::string& method,
             int runs_override) {
    ExperimentPreset p = resolve_preset_opts(opts);
    if (method != "both" && method != "lucca" && method != "baseline") {
        throw ValidationError("--method must be lucca, baseline or both");
    }
    if (runs_override > 0) p.n_runs = runs_override;

    std::vector<EpisodeRecord> episodes;
    std::vector<PlanningRow> rows = run_planning_benchmark(p, nullptr, &episodes);
    if (method != "both") {
        std::vector<PlanningRow> kept;
        for (const PlanningRow& r : rows) {
            if (r.method == method) kept.push_back(r);
        }
        rows = kept;
    }

    const fs::path dir = ensure_out_dir(out_dir);
    {
        std::ofstream out(dir / "summary.csv");
        write_planning_csv(rows, out);
    }
    // Episodes arrive ordered (lucca runs, then baseline runs).
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        const bool is_lucca = i < static_cast<std::size_t>(p.n_runs);
        const std::string m = is_lucca ? "lucca" : "baseline";
        if (method != "both" && m != method) continue;
        const std::size_t run = is_lucca ? i : i - static_cast<std::size_t>(p.n_runs);
        std::ofstream out(dir / ("episode_" + m + "_" + std::to_string(run) + ".csv"));
        write_episode_csv(episodes[i], out);
    }
    write_manifest_file(p, "plan", dir / "manifest.txt");
    for (const PlanningRow& r : rows) {
        std::cout << r.environment << " " << r.method << " collision_rate "
                  << format_double(r.collision_rate) << " success_rate "
                  << format_double(r.success_rate) << " mean_steps "
                  << format_double(r.mean_steps) << "\n";
    }
    return 0;
}

int cmd_heatmap(const CommonOpts& opts, const std::string& out_dir,
                const std::vector<double>& vx_values, int resolution,
                const std::string& model_file) {
    const ExperimentPreset p = resolve_preset_opts(opts);
    const Environment env = resolve_environment(p);
    LocartModel model;
    if (!model_file.empty()) {
        model = load_locart(model_file);
    } else {
        model = fit_from_preset(p).model;
    }
    const std::vector<double> vxs = vx_values.empty() ? std::vector<double>{-2.0, 0.0, 2.0}
                                                      : vx_values;
    const fs::path dir = ensure_out_dir(out_dir);
    for (double vx : vxs) {
        const HeatmapGrid grid = heatmap_grid(model, env, {vx, 0.0, 0.0, 0.0}, resolution);
        std::ofstream out(dir / ("heatmap_vx_" + format_double(vx) + ".csv"));
        write_heatmap_csv(grid, out);
    }
    write_manifest_file(p, "heatmap", dir / "manifest.txt");
    std::cout << "grids " << vxs.size() << "\n"
              << "resolution " << resolution << "\n"
              << "out " << dir.string() << "\n";
    return 0;
}

int cmd_verify(bool fast) {
    const std::vector<CheckResult> results = run_property_suite(fast);
    bool all_pass = true;
    for (const CheckResult& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
        if (!r.pass) std::cout << ": " << r.detail;
        std::cout << "\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Locally conformally calibrated uncertainty propagation toolkit"};
    app.require_subcommand(1);

    CommonOpts calibrate_opts, coverage_opts, plan_opts, heatmap_opts;
    std::string calibrate_out, coverage_out = "coverage-out", plan_out = "plan-out",
                heatmap_out = "heatmap-out";
    std::string plan_method = "both", heatmap_model;
    int coverage_samples = 0, plan_runs = 0, heatmap_resolution = 64;
    std::vector<double> heatmap_vx;
    bool verify_fast = false;

    CLI::App* calibrate = app.add_subcommand(
        "calibrate", "Generate a calibration grid, fit the partition model, save it");
    add_common(calibrate, calibrate_opts);
    calibrate->add_option("--out", calibrate_out, "Output model file")->required();

    CLI::App* coverage = app.add_subcommand(
        "coverage", "Per-step empirical coverage of calibrated vs baseline rollouts");
    add_common(coverage, coverage_opts);
    coverage->add_option("--out", coverage_out, "Output directory");
    coverage->add_option("--samples", coverage_samples, "Sampled true trajectories per scenario");

    CLI::App* plan = app.add_subcommand("plan", "Seeded MPC planning benchmark");
    add_common(plan, plan_opts);
    plan->add_option("--out", plan_out, "Output directory");
    plan->add_option("--method", plan_method, "lucca, baseline or both");
    plan->add_option("--runs", plan_runs, "Episodes per method");

    CLI::App* heatmap = app.add_subcommand(
        "heatmap", "Scaling-factor grids over workspace positions");
    add_common(heatmap, heatmap_opts);
    heatmap->add_option("--out", heatmap_out, "Output directory");
    heatmap->add_option("--vx", heatmap_vx, "Horizontal velocity per grid (repeatable)");
    heatmap->add_option("--resolution", heatmap_resolution, "Grid points per axis");
    heatmap->add_option("--model", heatmap_model, "Reuse a saved model instead of fitting");

    CLI::App* verify = app.add_subcommand("verify", "Run the library property suites");
    verify->add_flag("--fast", verify_fast, "Reduced Monte Carlo sample counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (calibrate->parsed()) return cmd_calibrate(calibrate_opts, calibrate_out);
        if (coverage->parsed()) return cmd_coverage(coverage_opts, coverage_out, coverage_samples);
        if (plan->parsed()) return cmd_plan(plan_opts, plan_out, plan_method, plan_runs);
        if (heatmap->parsed()) {
            return cmd_heatmap(heatmap_opts, heatmap_out, heatmap_vx, heatmap_resolution,
                               heatmap_model);
        }
        if (verify->parsed()) return cmd_verify(verify_fast);
    } catch (const ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace lucca
