#include "hedet/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace hedet::ad {

Var Tape::leaf(Mat value) {
    nodes_.push_back(Node{std::move(value), Mat(), nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::emit(Mat value, std::function<void(Tape&)> backward) {
    nodes_.push_back(Node{std::move(value), Mat(), std::move(backward)});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
    auto& r = nodes_[static_cast<std::size_t>(root.idx)];
    if (r.value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    for (auto& n : nodes_)
        if (n.grad.size() != 0) n.grad.setZero();
    ensure_grad(r);
    r.grad(0, 0) = 1.0;
    for (int i = root.idx; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.backward) continue;
        if (n.grad.size() == 0 || n.grad.isZero(0.0)) continue;
        n.backward(*this);
    }
}

Var add(Tape& t, Var a, Var b) {
    Mat v = t.value(a) + t.value(b);
    return t.emit(std::move(v), [a, b, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        tp.accumulate(a, tp.grad(out));
        tp.accumulate(b, tp.grad(out));
    });
}

Var sub(Tape& t, Var a, Var b) {
    Mat v = t.value(a) - t.value(b);
    return t.emit(std::move(v), [a, b, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        tp.accumulate(a, tp.grad(out));
        tp.accumulate(b, -tp.grad(out));
    });
}

Var cmul(Tape& t, Var a, Var b) {
    Mat v = t.value(a).cwiseProduct(t.value(b));
    return t.emit(std::move(v), [a, b, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        tp.accumulate(a, tp.grad(out).cwiseProduct(tp.value(b)));
        tp.accumulate(b, tp.grad(out).cwiseProduct(tp.value(a)));
    });
}

Var scale(Tape& t, Var a, double s) {
    Mat v = t.value(a) * s;
    return t.emit(std::move(v), [a, s, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        tp.accumulate(a, tp.grad(out) * s);
    });
}

Var add_rowvec(Tape& t, Var a, Var row) {
    if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols())
        throw std::invalid_argument("add_rowvec: row must be 1 x cols(a)");
    Mat v = t.value(a).rowwise() + t.value(row).row(0);
    return t.emit(std::move(v), [a, row, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        tp.accumulate(a, tp.grad(out));
        tp.accumulate(row, tp.grad(out).colwise().sum());
    });
}

Var matmul(Tape& t, Var a, Var b) {
    if (t.value(a).cols() != t.value(b).rows())
        throw std::invalid_argument("matmul: inner dimensions disagree");
    Mat v = t.value(a) * t.value(b);
    return t.emit(std::move(v), [a, b, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        tp.accumulate(a, tp.grad(out) * tp.value(b).transpose());
        tp.accumulate(b, tp.value(a).transpose() * tp.grad(out));
    });
}

Var transpose(Tape& t, Var a) {
    Mat v = t.value(a).transpose();
    return t.emit(std::move(v), [a, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        tp.accumulate(a, tp.grad(out).transpose());
    });
}

Var slice_rows(Tape& t, Var a, int start, int count) {
    if (start < 0 || count < 0 || start + count > t.value(a).rows())
        throw std::invalid_argument("slice_rows: out of range");
    Mat v = t.value(a).middleRows(start, count);
    return t.emit(std::move(v), [a, start, count, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        Mat g = Mat::Zero(tp.value(a).rows(), tp.value(a).cols());
        g.middleRows(start, count) = tp.grad(out);
        tp.accumulate(a, g);
    });
}

Var slice_cols(Tape& t, Var a, int start, int count) {
    if (start < 0 || count < 0 || start + count > t.value(a).cols())
        throw std::invalid_argument("slice_cols: out of range");
    Mat v = t.value(a).middleCols(start, count);
    return t.emit(std::move(v), [a, start, count, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        Mat g = Mat::Zero(tp.value(a).rows(), tp.value(a).cols());
        g.middleCols(start, count) = tp.grad(out);
        tp.accumulate(a, g);
    });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int rows = 0;
    const int cols = static_cast<int>(t.value(parts[0]).cols());
    for (Var p : parts) rows += static_cast<int>(t.value(p).rows());
    Mat v(rows, cols);
    int at = 0;
    for (Var p : parts) {
        v.middleRows(at, t.value(p).rows()) = t.value(p);
        at += static_cast<int>(t.value(p).rows());
    }
    return t.emit(std::move(v), [parts, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        int at2 = 0;
        for (Var p : parts) {
            const int r = static_cast<int>(tp.value(p).rows());
            tp.accumulate(p, tp.grad(out).middleRows(at2, r));
            at2 += r;
        }
    });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int cols = 0;
    const int rows = static_cast<int>(t.value(parts[0]).rows());
    for (Var p : parts) cols += static_cast<int>(t.value(p).cols());
    Mat v(rows, cols);
    int at = 0;
    for (Var p : parts) {
        v.middleCols(at, t.value(p).cols()) = t.value(p);
        at += static_cast<int>(t.value(p).cols());
    }
    return t.emit(std::move(v), [parts, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        int at2 = 0;
        for (Var p : parts) {
            const int c = static_cast<int>(tp.value(p).cols());
            tp.accumulate(p, tp.grad(out).middleCols(at2, c));
            at2 += c;
        }
    });
}

Var gather_rows(Tape& t, Var a, std::vector<int> indices) {
    Mat v(static_cast<int>(indices.size()), t.value(a).cols());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] < 0 || indices[k] >= t.value(a).rows())
            throw std::invalid_argument("gather_rows: index out of range");
        v.row(static_cast<int>(k)) = t.value(a).row(indices[k]);
    }
    return t.emit(std::move(v),
                  [a, idx = std::move(indices), out = Var{static_cast<int>(t.size())}](Tape& tp) {
                      Mat g = Mat::Zero(tp.value(a).rows(), tp.value(a).cols());
                      for (std::size_t k = 0; k < idx.size(); ++k)
                          g.row(idx[k]) += tp.grad(out).row(static_cast<int>(k));
                      tp.accumulate(a, g);
                  });
}

Var sigmoid(Tape& t, Var a) {
    Mat v = t.value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    return t.emit(std::move(v), [a, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        const Mat& y = tp.value(out);
        tp.accumulate(a, tp.grad(out).cwiseProduct(y.cwiseProduct(Mat::Ones(y.rows(), y.cols()) - y)));
    });
}

Var relu(Tape& t, Var a) {
    Mat v = t.value(a).cwiseMax(0.0);
    return t.emit(std::move(v), [a, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        const Mat& x = tp.value(a);
        Mat g = tp.grad(out);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j)
                if (x(i, j) <= 0.0) g(i, j) = 0.0;
        tp.accumulate(a, g);
    });
}

Var softmax_rows(Tape& t, Var scores, const Mat* add_mask) {
    Mat s = t.value(scores);
    if (add_mask) {
        if (add_mask->rows() != s.rows() || add_mask->cols() != s.cols())
            throw std::invalid_argument("softmax_rows: mask shape mismatch");
        s += *add_mask;
    }
    Mat y(s.rows(), s.cols());
    for (int i = 0; i < s.rows(); ++i) {
        const double m = s.row(i).maxCoeff();
        if (!std::isfinite(m)) throw std::invalid_argument("softmax_rows: fully masked row");
        Eigen::RowVectorXd e = (s.row(i).array() - m).exp();
        y.row(i) = e / e.sum();
    }
    return t.emit(std::move(y), [scores, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        const Mat& y2 = tp.value(out);
        const Mat& gy = tp.grad(out);
        Mat gyy = gy.cwiseProduct(y2);
        Eigen::VectorXd rowsum = gyy.rowwise().sum();
        Mat gs = gyy - y2.cwiseProduct(rowsum.replicate(1, y2.cols()));
        tp.accumulate(scores, gs);
    });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Mat& xv = t.value(x);
    const int n = static_cast<int>(xv.cols());
    if (t.value(gamma).rows() != 1 || t.value(gamma).cols() != n || t.value(beta).rows() != 1 ||
        t.value(beta).cols() != n)
        throw std::invalid_argument("layer_norm: gain/bias must be 1 x cols(x)");
    Eigen::VectorXd mu = xv.rowwise().mean();
    Mat centered = xv - mu.replicate(1, n);
    Eigen::VectorXd var = centered.array().square().rowwise().mean();
    Eigen::VectorXd inv_std = (var.array() + eps).rsqrt();
    Mat xhat = centered.cwiseProduct(inv_std.replicate(1, n));
    Mat v = xhat.cwiseProduct(t.value(gamma).replicate(xv.rows(), 1)).rowwise() +
            t.value(beta).row(0);
    return t.emit(std::move(v), [x, gamma, beta, xhat = std::move(xhat),
                                 inv_std = std::move(inv_std),
                                 out = Var{static_cast<int>(t.size())}](Tape& tp) {
        const Mat& gy = tp.grad(out);
        const int cols = static_cast<int>(gy.cols());
        const Mat& g = tp.value(gamma);
        tp.accumulate(gamma, xhat.cwiseProduct(gy).colwise().sum());
        tp.accumulate(beta, gy.colwise().sum());
        // d xhat = gy * gamma; dx = inv_std/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
        Mat dxhat = gy.cwiseProduct(g.replicate(gy.rows(), 1));
        Eigen::VectorXd s1 = dxhat.rowwise().sum();
        Eigen::VectorXd s2 = dxhat.cwiseProduct(xhat).rowwise().sum();
        Mat dx = (dxhat * static_cast<double>(cols) - s1.replicate(1, cols) -
                  xhat.cwiseProduct(s2.replicate(1, cols)))
                     .cwiseProduct(inv_std.replicate(1, cols)) /
                 static_cast<double>(cols);
        tp.accumulate(x, dx);
    });
}

Var sum(Tape& t, Var a) {
    Mat v(1, 1);
    v(0, 0) = t.value(a).sum();
    return t.emit(std::move(v), [a, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        const double g = tp.grad(out)(0, 0);
        tp.accumulate(a, Mat::Constant(tp.value(a).rows(), tp.value(a).cols(), g));
    });
}

Var mean(Tape& t, Var a) {
    const double n = static_cast<double>(t.value(a).size());
    return scale(t, sum(t, a), 1.0 / n);
}

Var bce_with_logits_sum(Tape& t, Var logits, const Mat& targets) {
    const Mat& z = t.value(logits);
    if (z.rows() != targets.rows() || z.cols() != targets.cols())
        throw std::invalid_argument("bce_with_logits_sum: shape mismatch");
    double total = 0.0;
    for (int i = 0; i < z.rows(); ++i)
        for (int j = 0; j < z.cols(); ++j) {
            const double x = z(i, j), y = targets(i, j);
            // max(x,0) - x*y + log(1 + exp(-|x|)): stable for large |x|
            total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
        }
    Mat v(1, 1);
    v(0, 0) = total;
    return t.emit(std::move(v), [logits, targets, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        const double g = tp.grad(out)(0, 0);
        const Mat& z2 = tp.value(logits);
        Mat dz = z2.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }) - targets;
        tp.accumulate(logits, dz * g);
    });
}

Var l1_sum(Tape& t, Var pred, const Mat& target) {
    const Mat& p = t.value(pred);
    if (p.rows() != target.rows() || p.cols() != target.cols())
        throw std::invalid_argument("l1_sum: shape mismatch");
    Mat v(1, 1);
    v(0, 0) = (p - target).cwiseAbs().sum();
    return t.emit(std::move(v), [pred, target, out = Var{static_cast<int>(t.size())}](Tape& tp) {
        const double g = tp.grad(out)(0, 0);
        Mat d = (tp.value(pred) - target).unaryExpr([](double x) {
            return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        });
        tp.accumulate(pred, d * g);
    });
}

namespace {

// (1 - giou) of one center-size box pair plus the gradient w.r.t. the
// predicted box. Target is constant.
struct GiouTerm {
    double value;
    Eigen::Vector4d grad;
};

GiouTerm giou_term_one(const Eigen::Vector4d& p, const Eigen::Vector4d& q) {
    const double ax1 = p(0) - 0.5 * p(2), ax2 = p(0) + 0.5 * p(2);
    const double ay1 = p(1) - 0.5 * p(3), ay2 = p(1) + 0.5 * p(3);
    const double bx1 = q(0) - 0.5 * q(2), bx2 = q(0) + 0.5 * q(2);
    const double by1 = q(1) - 0.5 * q(3), by2 = q(1) + 0.5 * q(3);

    const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
    const double ih = std::min(ay2, by2) - std::max(ay1, by1);
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double area_a = p(2) * p(3);
    const double area_b = q(2) * q(3);
    const double uni = area_a + area_b - inter;
    const double cw = std::max(ax2, bx2) - std::min(ax1, bx1);
    const double ch = std::max(ay2, by2) - std::min(ay1, by1);
    const double enclose = cw * ch;
    const double iou_v = inter / uni;
    const double giou_v = iou_v - (enclose - uni) / enclose;

    // Partials of inter/enclose w.r.t. the predicted corners.
    double di_dax1 = 0, di_dax2 = 0, di_day1 = 0, di_day2 = 0;
    if (inter > 0.0) {
        di_dax1 = (ax1 > bx1) ? -ih : 0.0;
        di_dax2 = (ax2 < bx2) ? ih : 0.0;
        di_day1 = (ay1 > by1) ? -iw : 0.0;
        di_day2 = (ay2 < by2) ? iw : 0.0;
    }
    const double dc_dax1 = (ax1 < bx1) ? -ch : 0.0;
    const double dc_dax2 = (ax2 > bx2) ? ch : 0.0;
    const double dc_day1 = (ay1 < by1) ? -cw : 0.0;
    const double dc_day2 = (ay2 > by2) ? cw : 0.0;

    // Area of the prediction in corner coordinates.
    const double da_dax1 = -(ay2 - ay1), da_dax2 = (ay2 - ay1);
    const double da_day1 = -(ax2 - ax1), da_day2 = (ax2 - ax1);

    auto dgiou_dcorner = [&](double di, double dc, double da) {
        const double du = da - di;
        double d = di / uni - inter * du / (uni * uni); // d(iou)
        d += du / enclose - uni * dc / (enclose * enclose); // d(U/C)
        return d;
    };
    const double g_ax1 = dgiou_dcorner(di_dax1, dc_dax1, da_dax1);
    const double g_ax2 = dgiou_dcorner(di_dax2, dc_dax2, da_dax2);
    const double g_ay1 = dgiou_dcorner(di_day1, dc_day1, da_day1);
    const double g_ay2 = dgiou_dcorner(di_day2, dc_day2, da_day2);

    GiouTerm out;
    out.value = 1.0 - giou_v;
    // Chain to center-size; the loss is (1 - giou) so signs flip.
    out.grad(0) = -(g_ax1 + g_ax2);
    out.grad(1) = -(g_ay1 + g_ay2);
    out.grad(2) = -0.5 * (g_ax2 - g_ax1);
    out.grad(3) = -0.5 * (g_ay2 - g_ay1);
    return out;
}

} // namespace

Var giou_terms(Tape& t, Var boxes_cs, const Mat& target_cs) {
    const Mat& b = t.value(boxes_cs);
    if (b.cols() != 4 || target_cs.cols() != 4 || b.rows() != target_cs.rows())
        throw std::invalid_argument("giou_terms: expected matching Nx4 matrices");
    const int n = static_cast<int>(b.rows());
    Mat v(n, 1);
    Mat jac(n, 4);
    for (int i = 0; i < n; ++i) {
        GiouTerm g = giou_term_one(b.row(i).transpose(), target_cs.row(i).transpose());
        v(i, 0) = g.value;
        jac.row(i) = g.grad.transpose();
    }
    return t.emit(std::move(v),
                  [boxes_cs, jac = std::move(jac), out = Var{static_cast<int>(t.size())}](Tape& tp) {
                      const Mat& gy = tp.grad(out); // Nx1
                      Mat g = jac.cwiseProduct(gy.replicate(1, 4));
                      tp.accumulate(boxes_cs, g);
                  });
}

} // namespace hedet::ad
