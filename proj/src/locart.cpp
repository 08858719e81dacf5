#include "lucca/locart.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "lucca/textio.hpp"

namespace lucca {

int PartitionTree::leaf_node_index(const Feature& f) const {
    int i = 0;
    while (!nodes[i].is_leaf()) {
        const TreeNode& n = nodes[i];
        i = (f[n.feature] < n.threshold) ? n.left : n.right;
    }
    return i;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Builder working on per-feature presorted index arrays. A node owns the
// same contiguous range in all kFeatureDim arrays; splits stable-partition
// every array so the per-feature orderings survive the recursion.
class CartBuilder {
public:
    CartBuilder(std::span<const Feature> features, std::span<const double> residuals,
                int max_depth, int min_samples_split)
        : features_(features),
          residuals_(residuals),
          max_depth_(max_depth),
          min_samples_split_(min_samples_split) {
        const std::size_t n = features.size();
        for (auto& idx : sorted_) {
            idx.resize(n);
            std::iota(idx.begin(), idx.end(), 0);
        }
        for (int f = 0; f < kFeatureDim; ++f) {
            auto& idx = sorted_[f];
            std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
                if (features_[a][f] != features_[b][f]) return features_[a][f] < features_[b][f];
                return a < b;
            });
        }
        scratch_.resize(n);
    }

    PartitionTree build() {
        PartitionTree tree;
        tree.nodes.reserve(64);
        build_node(tree, 0, features_.size(), 0);
        return tree;
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double reduction = 0.0;
        std::size_t left_count = 0;
    };

    int build_node(PartitionTree& tree, std::size_t lo, std::size_t hi, int depth) {
        const int node_index = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();

        const std::size_t n = hi - lo;
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            const double r = residuals_[sorted_[0][i]];
            sum += r;
            sumsq += r * r;
        }
        const double mean = sum / static_cast<double>(n);
        const double sse = sumsq - sum * mean;
        const bool zero_variance = sse <= 1e-12 * static_cast<double>(n) * std::max(1.0, mean * mean);

        Split best;
        if (depth < max_depth_ && n >= static_cast<std::size_t>(min_samples_split_) &&
            !zero_variance) {
            best = best_split(lo, hi, sse);
        }

        if (best.feature < 0 || best.reduction <= 0.0) {
            TreeNode& leaf = tree.nodes[node_index];
            leaf.leaf_id = tree.leaf_count++;
            leaf.n_part = static_cast<int>(n);
            return node_index;
        }

        partition(lo, hi, best);
        const int left = build_node(tree, lo, lo + best.left_count, depth + 1);
        const int right = build_node(tree, lo + best.left_count, hi, depth + 1);
        TreeNode& node = tree.nodes[node_index];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = left;
        node.right = right;
        return node_index;
    }

    Split best_split(std::size_t lo, std::size_t hi, double parent_sse) const {
        Split best;
        const std::size_t n = hi - lo;
        for (int f = 0; f < kFeatureDim; ++f) {
            const auto& idx = sorted_[f];
            double lsum = 0.0, lsumsq = 0.0;
            double rsum = 0.0, rsumsq = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                const double r = residuals_[idx[i]];
                rsum += r;
                rsumsq += r * r;
            }
            for (std::size_t i = lo; i + 1 < hi; ++i) {
                const double r = residuals_[idx[i]];
                lsum += r;
                lsumsq += r * r;
                rsum -= r;
                rsumsq -= r * r;
                const double a = features_[idx[i]][f];
                const double b = features_[idx[i + 1]][f];
                if (a == b) continue;  // candidate boundaries need distinct values
                const std::size_t nl = i - lo + 1;
                const std::size_t nr = n - nl;
                const double sse_l = lsumsq - lsum * lsum / static_cast<double>(nl);
                const double sse_r = rsumsq - rsum * rsum / static_cast<double>(nr);
                const double reduction = parent_sse - (sse_l + sse_r);
                if (reduction > best.reduction) {
                    best.feature = f;
                    best.threshold = 0.5 * (a + b);
                    best.reduction = reduction;
                    best.left_count = nl;
                }
            }
        }
        return best;
    }

    void partition(std::size_t lo, std::size_t hi, const Split& split) {
        for (int f = 0; f < kFeatureDim; ++f) {
            auto& idx = sorted_[f];
            std::size_t l = lo, r = lo + split.left_count;
            for (std::size_t i = lo; i < hi; ++i) {
                const std::uint32_t s = idx[i];
                if (features_[s][split.feature] < split.threshold) {
                    scratch_[l++] = s;
                } else {
                    scratch_[r++] = s;
                }
            }
            std::copy(scratch_.begin() + lo, scratch_.begin() + hi, idx.begin() + lo);
        }
    }

    std::span<const Feature> features_;
    std::span<const double> residuals_;
    int max_depth_;
    int min_samples_split_;
    std::array<std::vector<std::uint32_t>, kFeatureDim> sorted_;
    std::vector<std::uint32_t> scratch_;
};

}  // namespace

PartitionTree fit_cart(std::span<const Feature> features, std::span<const double> residuals,
                       int max_depth, int min_samples_split) {
    if (features.size() != residuals.size()) {
        throw ValidationError("fit_cart: feature/residual size mismatch");
    }
    if (features.empty()) throw EmptyCalibrationSet("fit_cart: no samples");
    if (max_depth < 0) throw ValidationError("fit_cart: max_depth must be >= 0");
    CartBuilder builder(features, residuals, max_depth, min_samples_split);
    return builder.build();
}

LocartModel LocartModel::identity(double alpha, const Mat4& sigma0) {
    LocartModel m;
    m.alpha = alpha;
    m.sigma0 = sigma0;
    const double chi2 = chi2_quantile(4, 1.0 - alpha);
    TreeNode leaf;
    leaf.leaf_id = 0;
    leaf.q_hat = std::sqrt(chi2);
    leaf.xi = 1.0;
    m.tree.nodes.push_back(leaf);
    m.tree.leaf_count = 1;
    m.global_fallback = {leaf.q_hat, 1.0, alpha, 4, 0};
    return m;
}

LocartModel fit_locart(const LinearModel& model, std::span<const TransitionTuple> tuples,
                       const Mat4& sigma0, double alpha, const LocartConfig& config) {
    if (tuples.empty()) throw EmptyCalibrationSet("fit_locart: no tuples");
    if (!(config.part_ratio > 0.0 && config.part_ratio < 1.0)) {
        throw ValidationError("fit_locart: part_ratio must lie in (0, 1)");
    }
    const std::size_t n = tuples.size();

    // Seeded random split into disjoint partition/scale sets.
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    RngStream rng = RngStream(config.seed).substream("locart-split");
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
        std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
    }
    const auto n_part =
        static_cast<std::size_t>(std::ceil(config.part_ratio * static_cast<double>(n)));

    std::vector<Feature> part_features(n_part);
    std::vector<double> part_residuals(n_part);
    for (std::size_t i = 0; i < n_part; ++i) {
        const TransitionTuple& t = tuples[perm[i]];
        part_features[i] = make_feature(t.state, t.action);
        part_residuals[i] = residual(model, lift(t.state, t.action, sigma0), t.next_state);
    }

    LocartModel m;
    m.alpha = alpha;
    m.sigma0 = sigma0;
    m.config = config;
    m.tree = fit_cart(part_features, part_residuals, config.max_depth, config.min_samples_split);

    // Route scale-set residuals to leaves and conformalize each one.
    std::vector<std::vector<double>> leaf_residuals(m.tree.leaf_count);
    std::vector<TransitionTuple> scale_tuples;
    scale_tuples.reserve(n - n_part);
    for (std::size_t i = n_part; i < n; ++i) {
        const TransitionTuple& t = tuples[perm[i]];
        scale_tuples.push_back(t);
        const int node = m.tree.leaf_node_index(make_feature(t.state, t.action));
        leaf_residuals[m.tree.nodes[node].leaf_id].push_back(
            residual(model, lift(t.state, t.action, sigma0), t.next_state));
    }

    m.global_fallback = calibrate_global(model, scale_tuples, sigma0, alpha);

    for (TreeNode& node : m.tree.nodes) {
        if (!node.is_leaf()) continue;
        const std::vector<double>& rs = leaf_residuals[node.leaf_id];
        node.n_scale = static_cast<int>(rs.size());
        node.q_hat = rs.empty() ? kInf : conformal_quantile({rs, std::nullopt}, alpha);
        node.xi = scaling_factor(node.q_hat, 4, alpha);
        node.unbounded = std::isinf(node.xi);
    }
    return m;
}

XiQuery query_xi(const LocartModel& m, const Feature& f) {
    const TreeNode& leaf = m.tree.nodes[m.tree.leaf_node_index(f)];
    if (leaf.unbounded) return {m.global_fallback.xi, leaf.leaf_id, true};
    return {leaf.xi, leaf.leaf_id, false};
}

HeatmapGrid heatmap_grid(const LocartModel& m, const Environment& env,
                         const HeatmapFixed& fixed, int resolution) {
    if (resolution < 2) throw ValidationError("heatmap_grid: resolution must be >= 2");
    HeatmapGrid grid;
    grid.resolution = resolution;
    grid.fixed = fixed;
    grid.cells.reserve(static_cast<std::size_t>(resolution) * resolution);
    const double dx = (env.bounds.xmax - env.bounds.xmin) / (resolution - 1);
    const double dy = (env.bounds.ymax - env.bounds.ymin) / (resolution - 1);
    for (int iy = 0; iy < resolution; ++iy) {
        for (int ix = 0; ix < resolution; ++ix) {
            const double px = env.bounds.xmin + ix * dx;
            const double py = env.bounds.ymin + iy * dy;
            const XiQuery q =
                query_xi(m, Feature{px, py, fixed.vx, fixed.vy, fixed.ax, fixed.ay});
            grid.cells.push_back({px, py, q.xi, q.leaf_id, q.fallback_used});
        }
    }
    return grid;
}

void write_heatmap_csv(const HeatmapGrid& grid, std::ostream& out) {
    out << "p_x,p_y,xi,leaf_id,fallback\n";
    for (const HeatmapCell& c : grid.cells) {
        out << format_double(c.px) << "," << format_double(c.py) << "," << format_double(c.xi)
            << "," << c.leaf_id << "," << (c.fallback ? 1 : 0) << "\n";
    }
}

void save_locart(const LocartModel& m, std::ostream& out) {
    out << "format_version 1\n";
    out << "kind locart\n";
    out << "alpha " << format_double(m.alpha) << "\n";
    out << "sigma0";
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) out << " " << format_double(m.sigma0(i, j));
    }
    out << "\n";
    out << "config " << m.config.max_depth << " " << m.config.min_samples_split << " "
        << format_double(m.config.part_ratio) << " " << m.config.seed << "\n";
    out << "fallback " << format_double(m.global_fallback.q_hat) << " "
        << format_double(m.global_fallback.xi) << " " << m.global_fallback.n_effective << "\n";
    out << "nodes " << m.tree.nodes.size() << "\n";
    for (const TreeNode& n : m.tree.nodes) {
        if (n.is_leaf()) {
            out << "leaf " << n.leaf_id << " " << n.n_part << " " << n.n_scale << " "
                << format_double(n.q_hat) << " " << format_double(n.xi) << " "
                << (n.unbounded ? 1 : 0) << "\n";
        } else {
            out << "split " << n.feature << " " << format_double(n.threshold) << " " << n.left
                << " " << n.right << "\n";
        }
    }
}

void save_locart(const LocartModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open file for writing");
    save_locart(m, out);
}

LocartModel load_locart(std::istream& in, const std::string& source_name) {
    LocartModel m;
    std::string line;
    int lineno = 0;
    std::size_t expected_nodes = 0;
    bool saw_version = false, saw_nodes = false;

    auto next_tokens = [&](const char* what) {
        while (std::getline(in, line)) {
            ++lineno;
            auto tok = tokenize_line(line);
            if (!tok.empty()) return tok;
        }
        throw ParseError(source_name + ": unexpected end of file, expected " +
                         std::string(what));
    };

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
        } else if (tok[0] == "kind") {
            if (tok.size() != 2 || tok[1] != "locart") {
                throw ParseError(ctx + ": expected kind locart");
            }
        } else if (tok[0] == "alpha") {
            if (tok.size() != 2) throw ParseError(ctx + ": expected one number");
            m.alpha = parse_double(tok[1], ctx);
        } else if (tok[0] == "sigma0") {
            if (tok.size() != 17) throw ParseError(ctx + ": expected 16 numbers");
            for (int i = 0; i < 16; ++i) {
                m.sigma0(i / 4, i % 4) = parse_double(tok[i + 1], ctx);
            }
        } else if (tok[0] == "config") {
            if (tok.size() != 5) throw ParseError(ctx + ": expected 4 fields");
            m.config.max_depth = static_cast<int>(parse_int(tok[1], ctx));
            m.config.min_samples_split = static_cast<int>(parse_int(tok[2], ctx));
            m.config.part_ratio = parse_double(tok[3], ctx);
            m.config.seed = static_cast<std::uint64_t>(parse_int(tok[4], ctx));
        } else if (tok[0] == "fallback") {
            if (tok.size() != 4) throw ParseError(ctx + ": expected 3 fields");
            m.global_fallback.q_hat = parse_double(tok[1], ctx);
            m.global_fallback.xi = parse_double(tok[2], ctx);
            m.global_fallback.n_effective = static_cast<std::size_t>(parse_int(tok[3], ctx));
            m.global_fallback.alpha = m.alpha;
            m.global_fallback.dof = 4;
        } else if (tok[0] == "nodes") {
            if (tok.size() != 2) throw ParseError(ctx + ": expected a count");
            expected_nodes = static_cast<std::size_t>(parse_int(tok[1], ctx));
            saw_nodes = true;
            m.tree.nodes.clear();
            m.tree.leaf_count = 0;
            for (std::size_t i = 0; i < expected_nodes; ++i) {
                const auto ntok = next_tokens("a node line");
                const std::string nctx =
                    source_name + ":" + std::to_string(lineno) + ": " + std::string(ntok[0]);
                TreeNode node;
                if (ntok[0] == "split") {
                    if (ntok.size() != 5) throw ParseError(nctx + ": expected 4 fields");
                    node.feature = static_cast<int>(parse_int(ntok[1], nctx));
                    node.threshold = parse_double(ntok[2], nctx);
                    node.left = static_cast<int>(parse_int(ntok[3], nctx));
                    node.right = static_cast<int>(parse_int(ntok[4], nctx));
                    if (node.feature < 0 || node.feature >= kFeatureDim) {
                        throw ParseError(nctx + ": feature index out of range");
                    }
                } else if (ntok[0] == "leaf") {
                    if (ntok.size() != 7) throw ParseError(nctx + ": expected 6 fields");
                    node.leaf_id = static_cast<int>(parse_int(ntok[1], nctx));
                    node.n_part = static_cast<int>(parse_int(ntok[2], nctx));
                    node.n_scale = static_cast<int>(parse_int(ntok[3], nctx));
                    node.q_hat = parse_double(ntok[4], nctx);
                    node.xi = parse_double(ntok[5], nctx);
                    node.unbounded = parse_int(ntok[6], nctx) != 0;
                    m.tree.leaf_count = std::max(m.tree.leaf_count, node.leaf_id + 1);
                } else {
                    throw ParseError(nctx + ": expected split or leaf");
                }
                m.tree.nodes.push_back(node);
            }
        } else {
            throw ParseError(ctx + ": unknown keyword");
        }
    }
    if (!saw_version) throw ParseError(source_name + ": missing format_version");
    if (!saw_nodes || m.tree.nodes.empty()) throw ParseError(source_name + ": missing nodes");
    for (const TreeNode& n : m.tree.nodes) {
        if (!n.is_leaf()) {
            const auto count = static_cast<int>(m.tree.nodes.size());
            if (n.left < 0 || n.left >= count || n.right < 0 || n.right >= count) {
                throw ParseError(source_name + ": child index out of range");
            }
        }
    }
    return m;
}

LocartModel load_locart(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    return load_locart(in, path);
}

}  // namespace lucca
