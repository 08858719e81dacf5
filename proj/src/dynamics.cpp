#include "lucca/dynamics.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "lucca/textio.hpp"

namespace lucca {

LinearModel double_integrator_model(double dt, double noise_scale) {
    if (!(dt > 0.0)) throw ValidationError("double_integrator_model: dt must be > 0");
    if (noise_scale < 0.0) {
        throw ValidationError("double_integrator_model: noise_scale must be >= 0");
    }
    LinearModel m;
    m.dt = dt;
    m.A = Mat4::Identity();
    m.A(0, 2) = dt;
    m.A(1, 3) = dt;
    m.B.setZero();
    m.B(0, 0) = 0.5 * dt * dt;
    m.B(1, 1) = 0.5 * dt * dt;
    m.B(2, 0) = dt;
    m.B(3, 1) = dt;
    m.Q = noise_scale * m.B * m.B.transpose() + kNoiseRegularizer * Mat4::Identity();
    return m;
}

bool in_obstacle(const Environment& env, const Vec2& p) {
    for (const Rect& r : env.obstacles) {
        if (r.contains(p)) return true;
    }
    return false;
}

bool in_shifted(const Environment& env, const Vec2& p) {
    for (const Rect& r : env.shifted_regions) {
        if (r.contains(p)) return true;
    }
    return false;
}

bool in_free_space(const Environment& env, const Vec2& p) {
    return env.bounds.contains(p) && !in_obstacle(env, p);
}

Vec4 true_step_mean(const Environment& env, const LinearModel& model, const Vec4& s,
                    const Vec2& u) {
    const Vec2 pos = s.head<2>();
    if (in_shifted(env, pos)) {
        Mat4 A = model.A;
        A(0, 2) *= kShiftedGain;
        A(1, 3) *= kShiftedGain;
        return A * s + kShiftedGain * (model.B * u);
    }
    return model.A * s + model.B * u;
}

Vec4 true_step(const Environment& env, const LinearModel& model, const Vec4& s,
               const Vec2& u, RngStream& rng) {
    const Mat4 L = cholesky_lower<4>(model.Q);
    Vec4 z;
    for (int i = 0; i < 4; ++i) z[i] = rng.normal();
    return true_step_mean(env, model, s, u) + L * z;
}

Gaussian approx_propagate(const LinearModel& model, const Gaussian& bel, const Vec2& u) {
    const Vec4 mean = model.A * bel.mean() + model.B * u;
    Mat4 cov = model.A * bel.cov() * model.A.transpose() + model.Q;
    cov = 0.5 * (cov + cov.transpose());
    return Gaussian(mean, cov);
}

void validate_environment(const Environment& env) {
    if (!env.bounds.well_formed()) throw ValidationError("environment: bounds degenerate");
    auto check_rects = [&](const std::vector<Rect>& rects, const char* what) {
        for (std::size_t i = 0; i < rects.size(); ++i) {
            if (!rects[i].well_formed()) {
                throw ValidationError("environment: " + std::string(what) + " " +
                                      std::to_string(i) + " degenerate");
            }
            if (!env.bounds.contains_rect(rects[i])) {
                throw ValidationError("environment: " + std::string(what) + " " +
                                      std::to_string(i) + " extends outside bounds");
            }
        }
    };
    check_rects(env.obstacles, "obstacle");
    check_rects(env.shifted_regions, "shifted region");
    if (env.subgoals.empty()) throw ValidationError("environment: sub-goal list empty");
    for (std::size_t i = 0; i < env.subgoals.size(); ++i) {
        const Subgoal& g = env.subgoals[i];
        if (!(g.radius > 0.0)) {
            throw ValidationError("environment: subgoal " + std::to_string(i) +
                                  " has non-positive radius");
        }
        if (!env.bounds.contains(g.center)) {
            throw ValidationError("environment: subgoal " + std::to_string(i) +
                                  " center outside bounds");
        }
    }
    if (!env.start.allFinite()) throw ValidationError("environment: start not finite");
    const Vec2 p = env.start.head<2>();
    if (!env.bounds.contains(p)) throw ValidationError("environment: start outside bounds");
    if (in_obstacle(env, p)) throw ValidationError("environment: start inside an obstacle");
}

namespace {

Rect parse_rect(const std::vector<std::string_view>& tok, const std::string& ctx) {
    if (tok.size() != 5) throw ParseError(ctx + ": expected 4 numbers (xmin ymin xmax ymax)");
    Rect r;
    r.xmin = parse_double(tok[1], ctx);
    r.ymin = parse_double(tok[2], ctx);
    r.xmax = parse_double(tok[3], ctx);
    r.ymax = parse_double(tok[4], ctx);
    return r;
}

}  // namespace

Environment parse_environment(std::istream& in, const std::string& source_name) {
    Environment env;
    std::string line;
    int lineno = 0;
    bool saw_version = false, saw_bounds = false, saw_start = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto tok = tokenize_line(line);
        if (tok.empty()) continue;
        const std::string ctx = source_name + ":" + std::to_string(lineno) + ": " +
                                std::string(tok[0]);
        if (tok[0] == "format_version") {
            if (tok.size() != 2 || parse_int(tok[1], ctx) != 1) {
                throw ParseError(ctx + ": unsupported format version");
            }
            saw_version = true;
        } else if (tok[0] == "name") {
            if (tok.size() != 2) throw ParseError(ctx + ": expected one token");
            env.name = std::string(tok[1]);
        } else if (tok[0] == "bounds") {
            env.bounds = parse_rect(tok, ctx);
            saw_bounds = true;
        } else if (tok[0] == "start") {
            if (tok.size() != 5) throw ParseError(ctx + ": expected 4 numbers (px py vx vy)");
            for (int i = 0; i < 4; ++i) env.start[i] = parse_double(tok[i + 1], ctx);
            saw_start = true;
        } else if (tok[0] == "obstacle") {
            env.obstacles.push_back(parse_rect(tok, ctx));
        } else if (tok[0] == "shifted") {
            env.shifted_regions.push_back(parse_rect(tok, ctx));
        } else if (tok[0] == "subgoal") {
            if (tok.size() != 4) throw ParseError(ctx + ": expected 3 numbers (cx cy radius)");
            Subgoal g;
            g.center[0] = parse_double(tok[1], ctx);
            g.center[1] = parse_double(tok[2], ctx);
            g.radius = parse_double(tok[3], ctx);
            env.subgoals.push_back(g);
        } else {
            throw ParseError(ctx + ": unknown keyword");
        }
    }
    if (!saw_version) throw ParseError(source_name + ": missing format_version");
    if (!saw_bounds) throw ParseError(source_name + ": missing bounds");
    if (!saw_start) throw ParseError(source_name + ": missing start");
    validate_environment(env);
    return env;
}

Environment load_environment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    return parse_environment(in, path);
}

void save_environment(const Environment& env, std::ostream& out) {
    out << "format_version 1\n";
    out << "name " << env.name << "\n";
    out << "bounds " << format_double(env.bounds.xmin) << " " << format_double(env.bounds.ymin)
        << " " << format_double(env.bounds.xmax) << " " << format_double(env.bounds.ymax)
        << "\n";
    out << "start";
    for (int i = 0; i < 4; ++i) out << " " << format_double(env.start[i]);
    out << "\n";
    for (const Rect& r : env.obstacles) {
        out << "obstacle " << format_double(r.xmin) << " " << format_double(r.ymin) << " "
            << format_double(r.xmax) << " " << format_double(r.ymax) << "\n";
    }
    for (const Rect& r : env.shifted_regions) {
        out << "shifted " << format_double(r.xmin) << " " << format_double(r.ymin) << " "
            << format_double(r.xmax) << " " << format_double(r.ymax) << "\n";
    }
    for (const Subgoal& g : env.subgoals) {
        out << "subgoal " << format_double(g.center[0]) << " " << format_double(g.center[1])
            << " " << format_double(g.radius) << "\n";
    }
}

void save_environment(const Environment& env, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open file for writing");
    save_environment(env, out);
}

namespace {

// Bundled maps. Shifted regions sit where momentum is hardest to shed:
// across the corridor, at the turn corners, and around the passage gap.
const std::map<std::string, std::string>& builtin_texts() {
    static const std::map<std::string, std::string> maps = {
        {"corridor",
         "format_version 1\n"
         "name corridor\n"
         "bounds 0 0 4.2 4.2\n"
         "start 2.5 0.4 0 0\n"
         "obstacle 0 0 1.5 4.2\n"
         "obstacle 3.5 0 4.2 4.2\n"
         "shifted 1.5 1.2 3.5 2\n"
         "subgoal 2.5 2.4 0.3\n"
         "subgoal 2.5 3.9 0.25\n"},
        {"l-turn",
         "format_version 1\n"
         "name l-turn\n"
         "bounds 0 0 4.2 4.2\n"
         "start 0.5 0.7 0 0\n"
         "obstacle 0 1.4 2.8 4.2\n"
         "shifted 2.2 0 4.2 1.4\n"
         "subgoal 3.6 0.7 0.3\n"
         "subgoal 3.5 3.8 0.3\n"},
        {"passage",
         "format_version 1\n"
         "name passage\n"
         "bounds 0 0 4.2 4.2\n"
         "start 2.1 0.4 0 0\n"
         "obstacle 0 1.9 1.5 2.3\n"
         "obstacle 2.7 1.9 4.2 2.3\n"
         "shifted 1.3 1.1 2.9 3.1\n"
         "subgoal 2.1 3 0.3\n"
         "subgoal 2.1 3.85 0.25\n"},
        {"u-turn",
         "format_version 1\n"
         "name u-turn\n"
         "bounds 0 0 4.2 4.2\n"
         "start 1 0.4 0 0\n"
         "obstacle 1.9 0 2.3 2.9\n"
         "shifted 1.2 2.9 3 4.2\n"
         "subgoal 2.1 3.55 0.3\n"
         "subgoal 3.2 0.5 0.3\n"},
    };
    return maps;
}

}  // namespace

std::vector<std::string> builtin_environment_names() {
    std::vector<std::string> names;
    for (const auto& [k, v] : builtin_texts()) names.push_back(k);
    return names;
}

std::string builtin_environment_text(const std::string& name) {
    const auto& maps = builtin_texts();
    auto it = maps.find(name);
    if (it == maps.end()) {
        throw ValidationError("unknown builtin environment '" + name + "'");
    }
    return it->second;
}

Environment builtin_environment(const std::string& name) {
    std::istringstream in(builtin_environment_text(name));
    return parse_environment(in, "builtin:" + name);
}

}  // namespace lucca
