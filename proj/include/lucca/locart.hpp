#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lucca/conformal.hpp"
#include "lucca/dynamics.hpp"

namespace lucca {

/// Tree input: state mean followed by action. The input covariance is
/// intentionally not part of the feature vector.
inline constexpr int kFeatureDim = 6;
using Feature = std::array<double, kFeatureDim>;  // p_x, p_y, v_x, v_y, a_x, a_y

inline Feature make_feature(const Vec4& state_mean, const Vec2& action) {
    return {state_mean[0], state_mean[1], state_mean[2], state_mean[3], action[0], action[1]};
}

/// Flat binary tree node. Interior nodes route feature < threshold to the
/// left child and >= threshold to the right child.
struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    // Leaf payload:
    int leaf_id = -1;
    int n_part = 0;   // partition-set samples that reached the leaf
    int n_scale = 0;  // scale-set samples routed to the leaf
    double q_hat = 0.0;
    double xi = 0.0;
    bool unbounded = false;

    bool is_leaf() const { return feature < 0; }
};

struct PartitionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    int leaf_count = 0;

    /// Index into `nodes` of the leaf the feature routes to.
    int leaf_node_index(const Feature& f) const;
};

/// Greedy CART regression fit minimizing within-node residual variance.
/// Split candidates are midpoints between consecutive distinct sorted
/// feature values; recursion stops on max depth, node size below
/// min_samples_split, or zero residual variance.
PartitionTree fit_cart(std::span<const Feature> features, std::span<const double> residuals,
                       int max_depth, int min_samples_split);

struct LocartConfig {
    int max_depth = 13;
    int min_samples_split = 40;
    double part_ratio = 0.8;  // fraction of tuples used to fit the partition
    std::uint64_t seed = 0;
};

/// Fitted partition with one conformal scaling factor per leaf plus a
/// global fallback used for leaves whose scale-set is too small to bound
/// the quantile.
struct LocartModel {
    PartitionTree tree;
    double alpha = 0.1;
    Mat4 sigma0 = Mat4::Identity();
    LocartConfig config;
    CalibrationResult global_fallback;

    /// Single-leaf model with xi = 1: rolling out with it reproduces the
    /// raw (uncalibrated) covariance recursion.
    static LocartModel identity(double alpha, const Mat4& sigma0);
};

LocartModel fit_locart(const LinearModel& model, std::span<const TransitionTuple> tuples,
                       const Mat4& sigma0, double alpha, const LocartConfig& config);

struct XiQuery {
    double xi = 0.0;
    int leaf_id = -1;
    bool fallback_used = false;
};

/// Total, deterministic leaf routing; unbounded leaves answer with the
/// global fallback factor and set the flag.
XiQuery query_xi(const LocartModel& m, const Feature& f);

struct HeatmapFixed {
    double vx = 0.0, vy = 0.0, ax = 0.0, ay = 0.0;
};

struct HeatmapCell {
    double px = 0.0, py = 0.0;
    double xi = 0.0;
    int leaf_id = -1;
    bool fallback = false;
};

struct HeatmapGrid {
    int resolution = 0;  // grid points per axis
    HeatmapFixed fixed;
    std::vector<HeatmapCell> cells;  // row-major, px fastest
};

/// Evaluates query_xi over a uniform position grid spanning the workspace
/// bounds, with the non-position features held fixed.
HeatmapGrid heatmap_grid(const LocartModel& m, const Environment& env,
                         const HeatmapFixed& fixed, int resolution);

/// CSV schema: p_x, p_y, xi, leaf_id, fallback.
void write_heatmap_csv(const HeatmapGrid& grid, std::ostream& out);

void save_locart(const LocartModel& m, std::ostream& out);
void save_locart(const LocartModel& m, const std::string& path);
LocartModel load_locart(std::istream& in, const std::string& source_name);
LocartModel load_locart(const std::string& path);

}  // namespace lucca
