#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace hedet::ad {

using Mat = Eigen::MatrixXd;

/// Handle into a Tape node.
struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape over dense Eigen matrices. Nodes are created by the
/// free functions below; backward() walks the tape once in reverse and
/// accumulates gradients into every node. Scalars are 1x1 matrices.
class Tape {
public:
    Var leaf(Mat value);
    Var emit(Mat value, std::function<void(Tape&)> backward);

    const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].value; }

    /// Gradient of the last backward() root w.r.t. this node. Zeros if the
    /// node does not influence the root.
    const Mat& grad(Var v) {
        auto& n = nodes_[static_cast<std::size_t>(v.idx)];
        ensure_grad(n);
        return n.grad;
    }

    void accumulate(Var v, const Mat& g) {
        auto& n = nodes_[static_cast<std::size_t>(v.idx)];
        ensure_grad(n);
        n.grad += g;
    }

    /// Seeds the (scalar) root with gradient 1 and propagates backward.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Mat value;
        Mat grad; // lazily sized
        std::function<void(Tape&)> backward;
    };

    void ensure_grad(Node& n) {
        if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols())
            n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }

    std::vector<Node> nodes_;
};

// Arithmetic
Var add(Tape& t, Var a, Var b);              // same shape
Var sub(Tape& t, Var a, Var b);
Var cmul(Tape& t, Var a, Var b);             // elementwise
Var scale(Tape& t, Var a, double s);
Var add_rowvec(Tape& t, Var a, Var row);     // broadcast a 1xN row over all rows
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);

// Shape ops
Var slice_rows(Tape& t, Var a, int start, int count);
Var slice_cols(Tape& t, Var a, int start, int count);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var gather_rows(Tape& t, Var a, std::vector<int> indices);

// Nonlinearities
Var sigmoid(Tape& t, Var a);
Var relu(Tape& t, Var a);

/// Row-wise softmax with an optional additive mask (use -inf to forbid an
/// entry; fully masked rows are not allowed).
Var softmax_rows(Tape& t, Var scores, const Mat* add_mask = nullptr);

/// Row-wise layer normalization with learned gain/bias (1xN each).
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);

// Reductions
Var sum(Tape& t, Var a);                     // 1x1
Var mean(Tape& t, Var a);                    // 1x1

// Loss kernels (targets are constants)
/// Sum over all entries of sigmoid binary cross-entropy between logits and
/// targets in [0,1].
Var bce_with_logits_sum(Tape& t, Var logits, const Mat& targets);
/// Sum of absolute differences.
Var l1_sum(Tape& t, Var pred, const Mat& target);
/// Per-row (1 - giou) between predicted center-size boxes (Nx4) and fixed
/// target boxes (Nx4); returns Nx1.
Var giou_terms(Tape& t, Var boxes_cs, const Mat& target_cs);

} // namespace hedet::ad
