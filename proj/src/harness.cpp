#include "lucca/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "lucca/textio.hpp"

namespace lucca {

namespace {

std::vector<double> linspace(double lo, double hi, int count) {
    std::vector<double> out(count);
    for (int i = 0; i < count; ++i) {
        out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    }
    return out;
}

double now_seconds() {
    const auto t = std::chrono::steady_clock::now().time_since_epoch();
    return std::chrono::duration<double>(t).count();
}

}  // namespace

GridSpec default_grid(const Environment& env) {
    GridSpec g;
    g.px = linspace(env.bounds.xmin, env.bounds.xmax, 16);
    g.py = linspace(env.bounds.ymin, env.bounds.ymax, 16);
    g.vx = {-1.0, -0.5, 0.0, 0.5, 1.0};
    g.vy = g.vx;
    g.ax = {-0.8, -0.4, 0.0, 0.4, 0.8};
    g.ay = g.ax;
    g.restrict_to_free_space = true;
    return g;
}

std::vector<TransitionTuple> generate_calibration_set(const Environment& env,
                                                      const LinearModel& model_true,
                                                      const GridSpec& spec, RngStream& rng) {
    for (const auto* axis : {&spec.px, &spec.py, &spec.vx, &spec.vy, &spec.ax, &spec.ay}) {
        if (axis->empty()) throw ValidationError("generate_calibration_set: empty grid axis");
    }
    std::vector<TransitionTuple> out;
    for (double px : spec.px) {
        for (double py : spec.py) {
            if (spec.restrict_to_free_space && !in_free_space(env, Vec2(px, py))) continue;
            for (double vx : spec.vx) {
                for (double vy : spec.vy) {
                    for (double ax : spec.ax) {
                        for (double ay : spec.ay) {
                            TransitionTuple t;
                            t.state = Vec4(px, py, vx, vy);
                            t.action = Vec2(ax, ay);
                            t.next_state = true_step(env, model_true, t.state, t.action, rng);
                            out.push_back(t);
                        }
                    }
                }
            }
        }
    }
    return out;
}

ExperimentPreset make_default_preset(const std::string& environment) {
    ExperimentPreset p;
    p.name = environment;
    p.environment = environment;
    if (environment == "corridor") {
        p.coverage_starts = {
            {Vec4(2.1, 1.5, 0.0, 0.5), Vec2(0.0, 0.5), "yellow-accel"},
            {Vec4(2.1, 1.5, 0.0, 0.5), Vec2(0.0, -0.5), "yellow-decel"},
            {Vec4(3.0, 3.6, 0.5, 0.0), Vec2(0.8, 0.0), "white-accel"},
            {Vec4(3.0, 3.6, 0.5, 0.0), Vec2(-0.8, 0.0), "white-decel"},
        };
    }
    return p;
}

Environment resolve_environment(const ExperimentPreset& p) {
    const auto names = builtin_environment_names();
    if (std::find(names.begin(), names.end(), p.environment) != names.end()) {
        return builtin_environment(p.environment);
    }
    return load_environment(p.environment);
}

Mat4 preset_sigma0(const ExperimentPreset& p) {
    return p.sigma0_scale * Mat4::Identity();
}

LinearModel preset_model(const ExperimentPreset& p) {
    return double_integrator_model(p.dt, p.noise_scale);
}

FitResult fit_from_preset(const ExperimentPreset& p) {
    const Environment env = resolve_environment(p);
    const LinearModel model = preset_model(p);
    const GridSpec grid = p.grid.px.empty() ? default_grid(env) : p.grid;

    FitResult r;
    RngStream rng = RngStream(p.seed).substream("calibration");
    const double t0 = now_seconds();
    const std::vector<TransitionTuple> tuples =
        generate_calibration_set(env, model, grid, rng);
    const double t1 = now_seconds();
    LocartConfig cfg = p.locart;
    cfg.seed = p.seed;
    r.model = fit_locart(model, tuples, preset_sigma0(p), p.alpha, cfg);
    const double t2 = now_seconds();
    r.n_tuples = tuples.size();
    r.generate_seconds = t1 - t0;
    r.fit_seconds = t2 - t1;
    return r;
}

CoverageReport run_coverage_experiment(const ExperimentPreset& preset,
                                       std::span<const CoverageStart> starts, int n_samples,
                                       const LocartModel* prefit) {
    if (starts.empty()) throw ValidationError("run_coverage_experiment: no start scenarios");
    if (n_samples < 1) throw ValidationError("run_coverage_experiment: n_samples must be >= 1");
    const Environment env = resolve_environment(preset);
    const LinearModel model = preset_model(preset);
    const Mat4 sigma0 = preset_sigma0(preset);
    const LocartModel locart = prefit ? *prefit : fit_from_preset(preset).model;
    const LocartModel baseline = LocartModel::identity(preset.alpha, sigma0);
    const int H = preset.mppi.horizon;
    const double chi4 = chi2_quantile(4, 1.0 - preset.alpha);

    CoverageReport report;
    report.environment = env.name;
    report.alpha = preset.alpha;
    report.seed = preset.seed;
    report.n_samples = n_samples;
    report.horizon = H;

    const RngStream sim_streams = RngStream(preset.seed).substream("coverage-sim");
    for (std::size_t sc = 0; sc < starts.size(); ++sc) {
        const CoverageStart& start = starts[sc];
        const std::vector<Vec2> controls(H, start.control);
        const Gaussian start_bel(start.state, sigma0);
        const RolloutResult lucca = calibrated_rollout(model, locart, start_bel, controls);
        const RolloutResult base = calibrated_rollout(model, baseline, start_bel, controls);

        std::vector<int> lucca_in(H, 0), base_in(H, 0);
        const RngStream scenario_streams = sim_streams.substream(sc);
        for (int k = 0; k < n_samples; ++k) {
            RngStream rng = scenario_streams.substream(k);
            Vec4 s = start.state;
            for (int i = 0; i < H; ++i) {
                s = true_step(env, model, s, start.control, rng);
                if (lucca.beliefs[i].mahalanobis2(s) <= chi4) ++lucca_in[i];
                if (base.beliefs[i].mahalanobis2(s) <= chi4) ++base_in[i];
            }
        }

        CoverageScenario out;
        out.label = start.label;
        for (int i = 0; i < H; ++i) {
            out.lucca_coverage.push_back(static_cast<double>(lucca_in[i]) / n_samples);
            out.baseline_coverage.push_back(static_cast<double>(base_in[i]) / n_samples);
        }
        out.lucca_xi = lucca.xis;
        out.lucca_fallback = lucca.fallback_flags;
        report.scenarios.push_back(std::move(out));
    }
    return report;
}

std::vector<PlanningRow> run_planning_benchmark(const ExperimentPreset& preset,
                                                const LocartModel* prefit,
                                                std::vector<EpisodeRecord>* episodes) {
    const Environment env = resolve_environment(preset);
    const LinearModel model = preset_model(preset);
    const Mat4 sigma0 = preset_sigma0(preset);
    const LocartModel lucca = prefit ? *prefit : fit_from_preset(preset).model;
    const LocartModel baseline = LocartModel::identity(preset.alpha, sigma0);

    std::vector<PlanningRow> rows;
    const RngStream episode_streams = RngStream(preset.seed).substream("episode");
    for (const std::string method : {"lucca", "baseline"}) {
        const LocartModel& m = (method == "lucca") ? lucca : baseline;
        int collisions = 0, successes = 0;
        std::vector<double> success_steps;
        for (int run = 0; run < preset.n_runs; ++run) {
            const EpisodeRecord rec = mpc_run(model, model, m, env, preset.mppi, preset.cost,
                                              preset.max_steps, episode_streams.substream(run));
            if (rec.outcome == EpisodeOutcome::Collision) ++collisions;
            if (rec.outcome == EpisodeOutcome::Success) {
                ++successes;
                success_steps.push_back(rec.steps);
            }
            if (episodes) episodes->push_back(rec);
        }
        PlanningRow row;
        row.environment = env.name;
        row.method = method;
        row.runs = preset.n_runs;
        if (preset.n_runs > 0) {
            row.collision_rate = static_cast<double>(collisions) / preset.n_runs;
            row.success_rate = static_cast<double>(successes) / preset.n_runs;
        }
        if (!success_steps.empty()) {
            double mean = 0.0;
            for (double s : success_steps) mean += s;
            mean /= static_cast<double>(success_steps.size());
            double var = 0.0;
            for (double s : success_steps) var += (s - mean) * (s - mean);
            var /= static_cast<double>(success_steps.size());
            row.mean_steps = mean;
            row.std_steps = std::sqrt(var);
        } else {
            row.mean_steps = std::numeric_limits<double>::quiet_NaN();
            row.std_steps = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(row);
    }
    return rows;
}

void write_coverage_csv(const CoverageScenario& s, std::ostream& out) {
    out << "step,lucca_coverage,baseline_coverage,lucca_xi,lucca_fallback\n";
    for (std::size_t i = 0; i < s.lucca_coverage.size(); ++i) {
        out << (i + 1) << "," << format_double(s.lucca_coverage[i]) << ","
            << format_double(s.baseline_coverage[i]) << "," << format_double(s.lucca_xi[i])
            << "," << static_cast<int>(s.lucca_fallback[i]) << "\n";
    }
}

void write_planning_csv(std::span<const PlanningRow> rows, std::ostream& out) {
    // mean/std steps aggregate successful runs only.
    out << "environment,method,runs,collision_rate,success_rate,mean_steps_success,"
           "std_steps_success\n";
    for (const PlanningRow& r : rows) {
        out << r.environment << "," << r.method << "," << r.runs << ","
            << format_double(r.collision_rate) << "," << format_double(r.success_rate) << ","
            << format_double(r.mean_steps) << "," << format_double(r.std_steps) << "\n";
    }
}

void write_episode_csv(const EpisodeRecord& rec, std::ostream& out) {
    out << "t,p_x,p_y,v_x,v_y,a_x,a_y,subgoal_index,min_cost,mean_xi,collision\n";
    for (const EpisodeStep& s : rec.trajectory) {
        out << s.t;
        for (int i = 0; i < 4; ++i) out << "," << format_double(s.state[i]);
        for (int i = 0; i < 2; ++i) out << "," << format_double(s.action[i]);
        out << "," << s.subgoal_index << "," << format_double(s.min_cost) << ","
            << format_double(s.mean_xi) << "," << (s.collision ? 1 : 0) << "\n";
    }
}

void write_manifest(const ExperimentPreset& p, const std::string& subcommand,
                    std::ostream& out) {
    out << "manifest_version 1\n";
    out << "tool_version " << kToolVersion << "\n";
    out << "subcommand " << subcommand << "\n";
    out << "preset " << p.name << "\n";
    out << "config_hash " << preset_config_hash(p) << "\n";
    out << "seed " << p.seed << "\n";
    out << "environment " << p.environment << "\n";
    out << "format_versions environment=1 locart=1 preset=1\n";
}

namespace {

void write_axis(std::ostream& out, const char* key, const std::vector<double>& axis) {
    out << key;
    for (double v : axis) out << " " << format_double(v);
    out << "\n";
}

}  // namespace

void save_preset(const ExperimentPreset& p, std::ostream& out) {
    out << "format_version 1\n";
    out << "kind preset\n";
    out << "name " << p.name << "\n";
    out << "environment " << p.environment << "\n";
    out << "alpha " << format_double(p.alpha) << "\n";
    out << "seed " << p.seed << "\n";
    out << "dt " << format_double(p.dt) << "\n";
    out << "noise_scale " << format_double(p.noise_scale) << "\n";
    out << "sigma0_scale " << format_double(p.sigma0_scale) << "\n";
    if (!p.grid.px.empty()) {
        write_axis(out, "grid_px", p.grid.px);
        write_axis(out, "grid_py", p.grid.py);
        write_axis(out, "grid_vx", p.grid.vx);
        write_axis(out, "grid_vy", p.grid.vy);
        write_axis(out, "grid_ax", p.grid.ax);
        write_axis(out, "grid_ay", p.grid.ay);
    }
    out << "grid_free_space_only " << (p.grid.restrict_to_free_space ? 1 : 0) << "\n";
    out << "locart_max_depth " << p.locart.max_depth << "\n";
    out << "locart_min_samples_split " << p.locart.min_samples_split << "\n";
    out << "locart_part_ratio " << format_double(p.locart.part_ratio) << "\n";
    out << "mppi_horizon " << p.mppi.horizon << "\n";
    out << "mppi_samples " << p.mppi.n_samples << "\n";
    out << "mppi_lambda " << format_double(p.mppi.lambda) << "\n";
    out << "mppi_control_lo " << format_double(p.mppi.control_lo[0]) << " "
        << format_double(p.mppi.control_lo[1]) << "\n";
    out << "mppi_control_hi " << format_double(p.mppi.control_hi[0]) << " "
        << format_double(p.mppi.control_hi[1]) << "\n";
    out << "mppi_noise_cov " << format_double(p.mppi.control_noise_cov(0, 0)) << " "
        << format_double(p.mppi.control_noise_cov(0, 1)) << " "
        << format_double(p.mppi.control_noise_cov(1, 0)) << " "
        << format_double(p.mppi.control_noise_cov(1, 1)) << "\n";
    out << "cost_terminal " << format_double(p.cost.w_terminal) << "\n";
    out << "cost_running " << format_double(p.cost.w_running) << "\n";
    out << "cost_trace " << format_double(p.cost.w_trace) << "\n";
    out << "cost_collision " << format_double(p.cost.w_collision) << "\n";
    out << "cost_normalize_terminal " << (p.cost.normalize_terminal ? 1 : 0) << "\n";
    out << "cost_terminal_collision " << (p.cost.terminal_collision ? 1 : 0) << "\n";
    out << "runs " << p.n_runs << "\n";
    out << "max_steps " << p.max_steps << "\n";
    out << "coverage_samples " << p.coverage_samples << "\n";
    for (const CoverageStart& s : p.coverage_starts) {
        out << "coverage_start " << s.label;
        for (int i = 0; i < 4; ++i) out << " " << format_double(s.state[i]);
        out << " " << format_double(s.control[0]) << " " << format_double(s.control[1]) << "\n";
    }
}

void save_preset(const ExperimentPreset& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open file for writing");
    save_preset(p, out);
}

std::string preset_text(const ExperimentPreset& p) {
    std::ostringstream out;
    save_preset(p, out);
    return out.str();
}

std::string preset_config_hash(const ExperimentPreset& p) {
    std::ostringstream hex;
    hex << std::hex;
    hex.width(16);
    hex.fill('0');
    hex << fnv1a64(preset_text(p));
    return hex.str();
}

ExperimentPreset parse_preset(std::istream& in, const std::string& source_name) {
    ExperimentPreset p;
    p.coverage_starts.clear();
    std::string line;
    int lineno = 0;
    bool saw_version = false;

    auto expect_count = [&](const std::vector<std::string_view>& tok, std::size_t n,
                            const std::string& ctx) {
        if (tok.size() != n) {
            throw ParseError(ctx + ": expected " + std::to_string(n - 1) + " value(s)");
        }
    };
    auto read_axis = [&](const std::vector<std::string_view>& tok, const std::string& ctx) {
        if (tok.size() < 2) throw ParseError(ctx + ": expected at least one value");
        std::vector<double> axis;
        for (std::size_t i = 1; i < tok.size(); ++i) axis.push_back(parse_double(tok[i], ctx));
        return axis;
    };

    while (std::getline(in, line)) {
        ++lineno;
        const auto tok = tokenize_line(line);
        if (tok.empty()) continue;
        const std::string key(tok[0]);
        const std::string ctx = source_name + ":" + std::to_string(lineno) + ": " + key;
        if (key == "format_version") {
            expect_count(tok, 2, ctx);
            if (parse_int(tok[1], ctx) != 1) throw ParseError(ctx + ": unsupported version");
            saw_version = true;
        } else if (key == "kind") {
            expect_count(tok, 2, ctx);
            if (tok[1] != "preset") throw ParseError(ctx + ": expected kind preset");
        } else if (key == "name") {
            expect_count(tok, 2, ctx);
            p.name = std::string(tok[1]);
        } else if (key == "environment") {
            expect_count(tok, 2, ctx);
            p.environment = std::string(tok[1]);
        } else if (key == "alpha") {
            expect_count(tok, 2, ctx);
            p.alpha = parse_double(tok[1], ctx);
        } else if (key == "seed") {
            expect_count(tok, 2, ctx);
            p.seed = static_cast<std::uint64_t>(parse_int(tok[1], ctx));
        } else if (key == "dt") {
            expect_count(tok, 2, ctx);
            p.dt = parse_double(tok[1], ctx);
        } else if (key == "noise_scale") {
            expect_count(tok, 2, ctx);
            p.noise_scale = parse_double(tok[1], ctx);
        } else if (key == "sigma0_scale") {
            expect_count(tok, 2, ctx);
            p.sigma0_scale = parse_double(tok[1], ctx);
        } else if (key == "grid_px") {
            p.grid.px = read_axis(tok, ctx);
        } else if (key == "grid_py") {
            p.grid.py = read_axis(tok, ctx);
        } else if (key == "grid_vx") {
            p.grid.vx = read_axis(tok, ctx);
        } else if (key == "grid_vy") {
            p.grid.vy = read_axis(tok, ctx);
        } else if (key == "grid_ax") {
            p.grid.ax = read_axis(tok, ctx);
        } else if (key == "grid_ay") {
            p.grid.ay = read_axis(tok, ctx);
        } else if (key == "grid_free_space_only") {
            expect_count(tok, 2, ctx);
            p.grid.restrict_to_free_space = parse_int(tok[1], ctx) != 0;
        } else if (key == "locart_max_depth") {
            expect_count(tok, 2, ctx);
            p.locart.max_depth = static_cast<int>(parse_int(tok[1], ctx));
        } else if (key == "locart_min_samples_split") {
            expect_count(tok, 2, ctx);
            p.locart.min_samples_split = static_cast<int>(parse_int(tok[1], ctx));
        } else if (key == "locart_part_ratio") {
            expect_count(tok, 2, ctx);
            p.locart.part_ratio = parse_double(tok[1], ctx);
        } else if (key == "mppi_horizon") {
            expect_count(tok, 2, ctx);
            p.mppi.horizon = static_cast<int>(parse_int(tok[1], ctx));
        } else if (key == "mppi_samples") {
            expect_count(tok, 2, ctx);
            p.mppi.n_samples = static_cast<int>(parse_int(tok[1], ctx));
        } else if (key == "mppi_lambda") {
            expect_count(tok, 2, ctx);
            p.mppi.lambda = parse_double(tok[1], ctx);
        } else if (key == "mppi_control_lo") {
            expect_count(tok, 3, ctx);
            p.mppi.control_lo = Vec2(parse_double(tok[1], ctx), parse_double(tok[2], ctx));
        } else if (key == "mppi_control_hi") {
            expect_count(tok, 3, ctx);
            p.mppi.control_hi = Vec2(parse_double(tok[1], ctx), parse_double(tok[2], ctx));
        } else if (key == "mppi_noise_cov") {
            expect_count(tok, 5, ctx);
            p.mppi.control_noise_cov(0, 0) = parse_double(tok[1], ctx);
            p.mppi.control_noise_cov(0, 1) = parse_double(tok[2], ctx);
            p.mppi.control_noise_cov(1, 0) = parse_double(tok[3], ctx);
            p.mppi.control_noise_cov(1, 1) = parse_double(tok[4], ctx);
        } else if (key == "cost_terminal") {
            expect_count(tok, 2, ctx);
            p.cost.w_terminal = parse_double(tok[1], ctx);
        } else if (key == "cost_running") {
            expect_count(tok, 2, ctx);
            p.cost.w_running = parse_double(tok[1], ctx);
        } else if (key == "cost_trace") {
            expect_count(tok, 2, ctx);
            p.cost.w_trace = parse_double(tok[1], ctx);
        } else if (key == "cost_collision") {
            expect_count(tok, 2, ctx);
            p.cost.w_collision = parse_double(tok[1], ctx);
        } else if (key == "cost_normalize_terminal") {
            expect_count(tok, 2, ctx);
            p.cost.normalize_terminal = parse_int(tok[1], ctx) != 0;
        } else if (key == "cost_terminal_collision") {
            expect_count(tok, 2, ctx);
            p.cost.terminal_collision = parse_int(tok[1], ctx) != 0;
        } else if (key == "runs") {
            expect_count(tok, 2, ctx);
            p.n_runs = static_cast<int>(parse_int(tok[1], ctx));
        } else if (key == "max_steps") {
            expect_count(tok, 2, ctx);
            p.max_steps = static_cast<int>(parse_int(tok[1], ctx));
        } else if (key == "coverage_samples") {
            expect_count(tok, 2, ctx);
            p.coverage_samples = static_cast<int>(parse_int(tok[1], ctx));
        } else if (key == "coverage_start") {
            expect_count(tok, 8, ctx);
            CoverageStart s;
            s.label = std::string(tok[1]);
            for (int i = 0; i < 4; ++i) s.state[i] = parse_double(tok[i + 2], ctx);
            s.control = Vec2(parse_double(tok[6], ctx), parse_double(tok[7], ctx));
            p.coverage_starts.push_back(s);
        } else {
            throw ParseError(ctx + ": unknown keyword");
        }
    }
    if (!saw_version) throw ParseError(source_name + ": missing format_version");
    if (!(p.alpha > 0.0 && p.alpha < 1.0)) {
        throw ValidationError(source_name + ": alpha must lie in (0, 1)");
    }
    return p;
}

ExperimentPreset load_preset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    return parse_preset(in, path);
}

std::vector<std::string> builtin_preset_names() {
    return {"corridor", "l-turn", "passage", "u-turn", "coverage-corridor"};
}

ExperimentPreset builtin_preset(const std::string& name) {
    if (name == "coverage-corridor") {
        ExperimentPreset p = make_default_preset("corridor");
        p.name = "coverage-corridor";
        return p;
    }
    const auto names = builtin_environment_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        throw ValidationError("unknown builtin preset '" + name + "'");
    }
    return make_default_preset(name);
}

std::string builtin_preset_text(const std::string& name) {
    return preset_text(builtin_preset(name));
}

}  // namespace lucca
