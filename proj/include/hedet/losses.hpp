#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hedet/assignment.hpp"
#include "hedet/autodiff.hpp"
#include "hedet/geometry.hpp"

namespace hedet {

/// One annotated object: normalized box plus category id.
struct GtObject {
    Box box;
    int category = 0;
};

/// One query's raw prediction at value level.
struct QueryPrediction {
    Eigen::VectorXd logits;
    Box box;
};

struct LossWeights {
    double lambda_cls = 1.0;
    double lambda_box_l1 = 5.0;
    double lambda_box_giou = 2.0;
    double lambda_dn = 1.0;

    void validate() const;
};

/// Unweighted component sums plus the weighted total.
struct LossBreakdown {
    double cls = 0.0;
    double box_l1 = 0.0;
    double box_giou = 0.0;
    double dn = 0.0;
    double total = 0.0;
};

/// Tape-level loss: differentiable total plus the value breakdown.
struct TapeLoss {
    ad::Var total;
    LossBreakdown values;
};

/// Cost matrix for hungarian matching, built from plain values (the matching
/// is a constant during backpropagation). probs is N x C post-sigmoid,
/// boxes_cs is N x 4 center-size.
Eigen::MatrixXd match_cost_matrix(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& boxes_cs,
                                  const std::vector<GtObject>& gts,
                                  const MatchCostWeights& w = {});

/// Matched-pair classification + box losses with background BCE on unmatched
/// queries (all-zero targets). logits is N x C, boxes_cs is N x 4.
TapeLoss match_loss_tape(ad::Tape& t, ad::Var logits, ad::Var boxes_cs,
                         const std::vector<GtObject>& gts, const MatchResult& match,
                         const LossWeights& w);

/// Denoising loss for one group: same form as match_loss with the pairing
/// computed group-locally (or forced to identity when identity_map is set).
/// The group carries exactly one query per clean target.
TapeLoss dn_group_loss_tape(ad::Tape& t, ad::Var logits, ad::Var boxes_cs,
                            const std::vector<GtObject>& clean_targets, bool identity_map,
                            const LossWeights& w);

// Value-level surface (computed through the same tape builders).

/// Sum of per-category sigmoid BCE against a one-hot target, or all-zero when
/// target_category < 0 (background).
double cls_loss(const Eigen::VectorXd& logits, int target_category);

/// (l1 over center-size coordinates, 1 - giou).
std::pair<double, double> box_loss(const Box& pred, const Box& gt);

LossBreakdown match_loss(const std::vector<QueryPrediction>& preds,
                         const std::vector<GtObject>& gts, const MatchResult& match,
                         const LossWeights& w);

/// Per-branch denoising losses averaged arithmetically.
double dn_loss(const std::vector<double>& per_branch_losses);

/// Eq. 4: L_match + lambda_dn * L_dn.
double total_loss(const LossBreakdown& match, double dn, const LossWeights& w);

} // namespace hedet
