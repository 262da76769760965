#include "hedet/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace hedet {

void LossWeights::validate() const {
    for (double v : {lambda_cls, lambda_box_l1, lambda_box_giou, lambda_dn})
        if (!(std::isfinite(v) && v >= 0.0))
            throw std::invalid_argument("loss weights must be finite and >= 0");
}

Eigen::MatrixXd match_cost_matrix(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& boxes_cs,
                                  const std::vector<GtObject>& gts, const MatchCostWeights& w) {
    const int n = static_cast<int>(probs.rows());
    const int m = static_cast<int>(gts.size());
    if (boxes_cs.rows() != n || boxes_cs.cols() != 4)
        throw std::invalid_argument("match_cost_matrix: boxes must be N x 4");
    Eigen::MatrixXd costs(n, m);
    for (int i = 0; i < n; ++i) {
        Box pred;
        pred.cx = boxes_cs(i, 0);
        pred.cy = boxes_cs(i, 1);
        pred.w = boxes_cs(i, 2);
        pred.h = boxes_cs(i, 3);
        for (int j = 0; j < m; ++j)
            costs(i, j) = matching_cost(probs.row(i), pred, gts[static_cast<std::size_t>(j)].box,
                                        gts[static_cast<std::size_t>(j)].category, w);
    }
    return costs;
}

namespace {

TapeLoss assemble_loss(ad::Tape& t, ad::Var logits, ad::Var boxes_cs,
                       const std::vector<GtObject>& gts,
                       const std::vector<std::pair<int, int>>& pairs, const LossWeights& w) {
    const int n = static_cast<int>(t.value(logits).rows());
    const int c = static_cast<int>(t.value(logits).cols());
    if (t.value(boxes_cs).rows() != n || t.value(boxes_cs).cols() != 4)
        throw std::invalid_argument("loss: boxes must be N x 4");

    Eigen::MatrixXd cls_targets = Eigen::MatrixXd::Zero(n, c);
    std::vector<int> matched_rows;
    Eigen::MatrixXd box_targets(static_cast<int>(pairs.size()), 4);
    int k = 0;
    for (auto [i, j] : pairs) {
        if (i < 0 || i >= n || j < 0 || j >= static_cast<int>(gts.size()))
            throw std::out_of_range("loss: match index out of range");
        const GtObject& gt = gts[static_cast<std::size_t>(j)];
        if (gt.category < 0 || gt.category >= c)
            throw std::out_of_range("loss: gt category out of range");
        cls_targets(i, gt.category) = 1.0;
        matched_rows.push_back(i);
        box_targets.row(k) << gt.box.cx, gt.box.cy, gt.box.w, gt.box.h;
        ++k;
    }

    ad::Var cls = ad::bce_with_logits_sum(t, logits, cls_targets);
    TapeLoss out;
    out.values.cls = t.value(cls)(0, 0);
    if (pairs.empty()) {
        out.total = ad::scale(t, cls, w.lambda_cls);
        out.values.total = w.lambda_cls * out.values.cls;
        return out;
    }

    ad::Var matched = ad::gather_rows(t, boxes_cs, matched_rows);
    ad::Var l1 = ad::l1_sum(t, matched, box_targets);
    ad::Var giou_term = ad::sum(t, ad::giou_terms(t, matched, box_targets));
    out.values.box_l1 = t.value(l1)(0, 0);
    out.values.box_giou = t.value(giou_term)(0, 0);

    ad::Var total = ad::add(t, ad::scale(t, cls, w.lambda_cls),
                            ad::add(t, ad::scale(t, l1, w.lambda_box_l1),
                                    ad::scale(t, giou_term, w.lambda_box_giou)));
    out.total = total;
    out.values.total = t.value(total)(0, 0);
    return out;
}

} // namespace

TapeLoss match_loss_tape(ad::Tape& t, ad::Var logits, ad::Var boxes_cs,
                         const std::vector<GtObject>& gts, const MatchResult& match,
                         const LossWeights& w) {
    return assemble_loss(t, logits, boxes_cs, gts, match.pairs, w);
}

TapeLoss dn_group_loss_tape(ad::Tape& t, ad::Var logits, ad::Var boxes_cs,
                            const std::vector<GtObject>& clean_targets, bool identity_map,
                            const LossWeights& w) {
    const int n = static_cast<int>(t.value(logits).rows());
    if (n != static_cast<int>(clean_targets.size()))
        throw std::invalid_argument("dn loss: group size must equal clean target count");
    std::vector<std::pair<int, int>> pairs;
    if (identity_map) {
        for (int i = 0; i < n; ++i) pairs.emplace_back(i, i);
    } else {
        Eigen::MatrixXd probs =
            t.value(logits).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
        pairs = hungarian(match_cost_matrix(probs, t.value(boxes_cs), clean_targets)).pairs;
    }
    return assemble_loss(t, logits, boxes_cs, clean_targets, pairs, w);
}

double cls_loss(const Eigen::VectorXd& logits, int target_category) {
    ad::Tape t;
    const int c = static_cast<int>(logits.size());
    if (target_category >= c) throw std::out_of_range("cls_loss: category out of range");
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(1, c);
    if (target_category >= 0) target(0, target_category) = 1.0;
    ad::Var z = t.leaf(logits.transpose());
    return t.value(ad::bce_with_logits_sum(t, z, target))(0, 0);
}

std::pair<double, double> box_loss(const Box& pred, const Box& gt) {
    const double l1 = std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) +
                      std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h);
    return {l1, 1.0 - giou(pred, gt)};
}

LossBreakdown match_loss(const std::vector<QueryPrediction>& preds,
                         const std::vector<GtObject>& gts, const MatchResult& match,
                         const LossWeights& w) {
    if (preds.empty()) return {};
    const int n = static_cast<int>(preds.size());
    const int c = static_cast<int>(preds[0].logits.size());
    Eigen::MatrixXd logits(n, c), boxes(n, 4);
    for (int i = 0; i < n; ++i) {
        const auto& p = preds[static_cast<std::size_t>(i)];
        if (p.logits.size() != c) throw std::invalid_argument("match_loss: ragged logits");
        logits.row(i) = p.logits.transpose();
        boxes.row(i) << p.box.cx, p.box.cy, p.box.w, p.box.h;
    }
    ad::Tape t;
    return match_loss_tape(t, t.leaf(logits), t.leaf(boxes), gts, match, w).values;
}

double dn_loss(const std::vector<double>& per_branch_losses) {
    if (per_branch_losses.empty()) return 0.0;
    double s = 0.0;
    for (double v : per_branch_losses) s += v;
    return s / static_cast<double>(per_branch_losses.size());
}

double total_loss(const LossBreakdown& match, double dn, const LossWeights& w) {
    if (!(std::isfinite(match.total) && std::isfinite(dn)))
        throw std::invalid_argument("total_loss: non-finite input");
    return match.total + w.lambda_dn * dn;
}

} // namespace hedet
