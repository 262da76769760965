#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hedet/geometry.hpp"

namespace hedet {

/// Result of matching predictions (rows) to targets (columns).
/// pairs is sorted by prediction index; min(rows, cols) pairs are returned.
struct MatchResult {
    std::vector<std::pair<int, int>> pairs;
    std::vector<int> unmatched_predictions;

    double total_cost(const Eigen::MatrixXd& costs) const {
        double t = 0.0;
        for (auto [i, j] : pairs) t += costs(i, j);
        return t;
    }
};

/// Minimum-cost bipartite assignment of the smaller side into the larger.
/// Throws std::invalid_argument on non-finite entries. Deterministic: the
/// augmenting scan visits rows and columns in ascending index order, so ties
/// resolve toward lower prediction indices.
MatchResult hungarian(const Eigen::MatrixXd& costs);

/// Matching-cost weights for prediction/target pairs.
struct MatchCostWeights {
    double cls = 2.0;
    double l1 = 5.0;
    double giou = 2.0;
};

/// Pairwise matching cost:
///   cls * (1 - p[gt_category]) + l1 * |pred - gt|_1 + giou * (1 - giou(pred, gt))
/// with the L1 taken over center-size coordinates.
double matching_cost(const Eigen::VectorXd& class_probs, const Box& pred_box, const Box& gt_box,
                     int gt_category, const MatchCostWeights& w = {});

} // namespace hedet
