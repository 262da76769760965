#include "hedet/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hedet {

// Jonker-Volgenant style shortest augmenting path on a zero-padded square
// matrix. Padding entries cost 0 for every row/column, which leaves the
// optimal assignment of the real submatrix unchanged.
MatchResult hungarian(const Eigen::MatrixXd& costs) {
    const int rows = static_cast<int>(costs.rows());
    const int cols = static_cast<int>(costs.cols());
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            if (!std::isfinite(costs(i, j)))
                throw std::invalid_argument("hungarian: non-finite cost entry");

    MatchResult out;
    if (rows == 0 || cols == 0) {
        for (int i = 0; i < rows; ++i) out.unmatched_predictions.push_back(i);
        return out;
    }

    const int n = std::max(rows, cols);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    m.topLeftCorner(rows, cols) = costs;

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match_col(n + 1, 0); // 1-based: column -> row
    std::vector<int> way(n + 1, 0);

    for (int i = 1; i <= n; ++i) {
        match_col[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const int i0 = match_col[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = m(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match_col[j0] != 0);
        do {
            const int j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<bool> matched(rows, false);
    for (int j = 1; j <= n; ++j) {
        const int i = match_col[j] - 1;
        if (i < rows && j - 1 < cols) {
            out.pairs.emplace_back(i, j - 1);
            matched[i] = true;
        }
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    for (int i = 0; i < rows; ++i)
        if (!matched[i]) out.unmatched_predictions.push_back(i);
    return out;
}

double matching_cost(const Eigen::VectorXd& class_probs, const Box& pred_box, const Box& gt_box,
                     int gt_category, const MatchCostWeights& w) {
    if (gt_category < 0 || gt_category >= class_probs.size())
        throw std::invalid_argument("matching_cost: category out of range");
    const double p = class_probs(gt_category);
    const double l1 = std::abs(pred_box.cx - gt_box.cx) + std::abs(pred_box.cy - gt_box.cy) +
                      std::abs(pred_box.w - gt_box.w) + std::abs(pred_box.h - gt_box.h);
    return w.cls * (1.0 - p) + w.l1 * l1 + w.giou * (1.0 - giou(pred_box, gt_box));
}

} // namespace hedet
