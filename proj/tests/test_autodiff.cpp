#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "hedet/autodiff.hpp"
#include "hedet/geometry.hpp"
#include "hedet/rng.hpp"

namespace ad = hedet::ad;
using ad::Mat;
using ad::Tape;
using ad::Var;
using hedet::RandomStream;

namespace {

Mat randn(int r, int c, RandomStream& rng) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

using BuildFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central finite differences vs the tape's analytic gradient, every entry of
// every input.
void check_gradients(const BuildFn& f, const std::vector<Mat>& inputs, double tol = 1e-6,
                     double h = 1e-5) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& m : inputs) vars.push_back(t.leaf(m));
    Var loss = f(t, vars);
    REQUIRE(t.value(loss).size() == 1);
    t.backward(loss);
    std::vector<Mat> analytic;
    analytic.reserve(vars.size());
    for (Var v : vars) analytic.push_back(t.grad(v));

    auto eval = [&](std::size_t k, int i, int j, double delta) {
        Tape t2;
        std::vector<Var> vs;
        vs.reserve(inputs.size());
        for (std::size_t m = 0; m < inputs.size(); ++m) {
            Mat mm = inputs[m];
            if (m == k) mm(i, j) += delta;
            vs.push_back(t2.leaf(mm));
        }
        return t2.value(f(t2, vs))(0, 0);
    };

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (int i = 0; i < inputs[k].rows(); ++i) {
            for (int j = 0; j < inputs[k].cols(); ++j) {
                const double fd = (eval(k, i, j, h) - eval(k, i, j, -h)) / (2.0 * h);
                const double a = analytic[k](i, j);
                const double denom = std::max({std::abs(a), std::abs(fd), 1.0});
                INFO("input ", k, " entry (", i, ",", j, ") analytic ", a, " fd ", fd);
                CHECK(std::abs(a - fd) / denom < tol);
            }
        }
    }
}

// Weighted sum turns any output into a scalar with non-uniform upstream grads.
Var weighted(Tape& t, Var out, const Mat& w) {
    return ad::sum(t, ad::cmul(t, out, t.leaf(w)));
}

} // namespace

TEST_CASE("elementwise and broadcast ops") {
    RandomStream rng(10);
    Mat a = randn(3, 4, rng), b = randn(3, 4, rng), w = randn(3, 4, rng);
    Mat row = randn(1, 4, rng), wr = randn(3, 4, rng);

    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::add(t, v[0], v[1]), w); },
        {a, b});
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::sub(t, v[0], v[1]), w); },
        {a, b});
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::cmul(t, v[0], v[1]), w); },
        {a, b});
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::scale(t, v[0], -2.5), w); },
        {a});
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return weighted(t, ad::add_rowvec(t, v[0], v[1]), wr);
        },
        {a, row});
}

TEST_CASE("matmul and transpose") {
    RandomStream rng(11);
    Mat a = randn(3, 5, rng), b = randn(5, 2, rng), w = randn(3, 2, rng), wt = randn(5, 3, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::matmul(t, v[0], v[1]), w); },
        {a, b});
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::transpose(t, v[0]), wt); },
        {a});

    Tape t;
    Var x = t.leaf(a), y = t.leaf(randn(4, 5, rng));
    CHECK_THROWS_AS(ad::matmul(t, x, y), std::invalid_argument);
}

TEST_CASE("shape ops") {
    RandomStream rng(12);
    Mat a = randn(5, 4, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return weighted(t, ad::slice_rows(t, v[0], 1, 3), Mat::Ones(3, 4) * 0.7);
        },
        {a});
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return weighted(t, ad::slice_cols(t, v[0], 2, 2), Mat::Ones(5, 2) * -1.3);
        },
        {a});
    Mat b = randn(2, 4, rng), w7 = randn(7, 4, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return weighted(t, ad::concat_rows(t, {v[0], v[1]}), w7);
        },
        {a, b});
    Mat c = randn(5, 3, rng), w57 = randn(5, 7, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return weighted(t, ad::concat_cols(t, {v[0], v[1]}), w57);
        },
        {a, c});
    // Repeated gather index accumulates gradient.
    Mat wg = randn(3, 4, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return weighted(t, ad::gather_rows(t, v[0], {2, 0, 2}), wg);
        },
        {a});

    Tape t;
    Var x = t.leaf(a);
    CHECK_THROWS_AS(ad::slice_rows(t, x, 4, 3), std::invalid_argument);
    CHECK_THROWS_AS(ad::gather_rows(t, x, {5}), std::invalid_argument);
}

TEST_CASE("nonlinearities") {
    RandomStream rng(13);
    Mat a = randn(4, 3, rng), w = randn(4, 3, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::sigmoid(t, v[0]), w); },
        {a});
    // Keep relu inputs away from the kink.
    Mat r = a;
    for (int i = 0; i < r.size(); ++i)
        if (std::abs(r(i)) < 0.1) r(i) += (r(i) >= 0 ? 0.2 : -0.2);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ad::relu(t, v[0]), w); },
        {r});
}

TEST_CASE("softmax rows") {
    RandomStream rng(14);
    Mat s = randn(3, 5, rng), w = randn(3, 5, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return weighted(t, ad::softmax_rows(t, v[0]), w);
        },
        {s});

    // Rows sum to one.
    Tape t;
    Var y = ad::softmax_rows(t, t.leaf(s));
    for (int i = 0; i < 3; ++i) CHECK(t.value(y).row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax mask forces exact zeros in value and gradient") {
    RandomStream rng(15);
    Mat s = randn(4, 6, rng), w = randn(4, 6, rng);
    const double ninf = -std::numeric_limits<double>::infinity();
    Mat mask = Mat::Zero(4, 6);
    mask(0, 1) = ninf;
    mask(0, 4) = ninf;
    mask(2, 0) = ninf;
    mask(3, 5) = ninf;

    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return weighted(t, ad::softmax_rows(t, v[0], &mask), w);
        },
        {s});

    Tape t;
    Var sv = t.leaf(s);
    Var y = ad::softmax_rows(t, sv, &mask);
    Var loss = weighted(t, y, w);
    t.backward(loss);
    const Mat& yv = t.value(y);
    const Mat& g = t.grad(sv);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j)
            if (std::isinf(mask(i, j))) {
                CHECK(yv(i, j) == 0.0);
                CHECK(g(i, j) == 0.0);
            }

    Mat all = Mat::Constant(4, 6, ninf);
    CHECK_THROWS_AS(ad::softmax_rows(t, sv, &all), std::invalid_argument);
}

TEST_CASE("layer norm") {
    RandomStream rng(16);
    Mat x = randn(3, 6, rng);
    Mat gamma = randn(1, 6, rng);
    gamma.array() += 2.0; // keep the gain away from zero
    Mat beta = randn(1, 6, rng), w = randn(3, 6, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return weighted(t, ad::layer_norm(t, v[0], v[1], v[2]), w);
        },
        {x, gamma, beta}, 1e-5);

    // Output rows are normalized before gain/bias.
    Tape t;
    Var y = ad::layer_norm(t, t.leaf(x), t.leaf(Mat::Ones(1, 6)), t.leaf(Mat::Zero(1, 6)));
    for (int i = 0; i < 3; ++i) {
        CHECK(t.value(y).row(i).mean() == doctest::Approx(0.0).epsilon(1e-9));
        const double var = t.value(y).row(i).array().square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("reductions") {
    RandomStream rng(17);
    Mat a = randn(3, 4, rng);
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return ad::sum(t, v[0]); }, {a});
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return ad::mean(t, v[0]); }, {a});
}

TEST_CASE("bce with logits") {
    RandomStream rng(18);
    Mat z = randn(4, 3, rng) * 3.0;
    Mat targets(4, 3);
    for (int i = 0; i < targets.size(); ++i) targets(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            return ad::bce_with_logits_sum(t, v[0], targets);
        },
        {z});

    // Stable at extreme logits.
    Tape t;
    Mat big(1, 2);
    big << 500.0, -500.0;
    Mat tt(1, 2);
    tt << 1.0, 0.0;
    Var loss = ad::bce_with_logits_sum(t, t.leaf(big), tt);
    CHECK(std::isfinite(t.value(loss)(0, 0)));
    CHECK(t.value(loss)(0, 0) < 1e-200);

    // Worked values: logit 0 against target 1 -> ln 2.
    Mat z0 = Mat::Zero(1, 1), t1 = Mat::Ones(1, 1);
    CHECK(t.value(ad::bce_with_logits_sum(t, t.leaf(z0), t1))(0, 0) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // logits (1, -1), target one-hot on 0: -ln sigma(1) - ln(1 - sigma(-1)).
    Mat z2(1, 2);
    z2 << 1.0, -1.0;
    Mat t2(1, 2);
    t2 << 1.0, 0.0;
    const double expect = -std::log(1.0 / (1.0 + std::exp(-1.0))) -
                          std::log(1.0 - 1.0 / (1.0 + std::exp(1.0)));
    CHECK(t.value(ad::bce_with_logits_sum(t, t.leaf(z2), t2))(0, 0) ==
          doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("l1 sum") {
    RandomStream rng(19);
    Mat p = randn(3, 4, rng);
    Mat target = randn(3, 4, rng);
    // Keep differences away from the kink.
    for (int i = 0; i < p.size(); ++i)
        if (std::abs(p(i) - target(i)) < 0.1) p(i) += 0.3;
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return ad::l1_sum(t, v[0], target); }, {p});
}

TEST_CASE("giou terms") {
    // Overlapping, disjoint, and contained pairs, all off tie points.
    Mat boxes(3, 4), targets(3, 4);
    boxes << 0.42, 0.40, 0.30, 0.28, // overlaps target
        0.15, 0.17, 0.11, 0.12,      // disjoint from target
        0.52, 0.49, 0.45, 0.47;      // contains target
    targets << 0.50, 0.52, 0.30, 0.31, 0.80, 0.78, 0.13, 0.14, 0.50, 0.51, 0.20, 0.19;

    // Values match the scalar geometry oracle.
    Tape t;
    Var b = t.leaf(boxes);
    Var terms = ad::giou_terms(t, b, targets);
    for (int i = 0; i < 3; ++i) {
        hedet::Box pb = hedet::Box::center_size(boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3));
        hedet::Box tb =
            hedet::Box::center_size(targets(i, 0), targets(i, 1), targets(i, 2), targets(i, 3));
        CHECK(t.value(terms)(i, 0) == doctest::Approx(1.0 - giou(pb, tb)).epsilon(1e-12));
    }

    check_gradients(
        [&](Tape& t2, const std::vector<Var>& v) {
            return weighted(t2, ad::giou_terms(t2, v[0], targets), Mat::Ones(3, 1));
        },
        {boxes}, 1e-5);

    // Random pairs.
    RandomStream rng(20);
    for (int trial = 0; trial < 20; ++trial) {
        Mat bb(2, 4), tt(2, 4);
        for (int i = 0; i < 2; ++i) {
            bb(i, 0) = rng.uniform(0.2, 0.8);
            bb(i, 1) = rng.uniform(0.2, 0.8);
            bb(i, 2) = rng.uniform(0.05, 0.4);
            bb(i, 3) = rng.uniform(0.05, 0.4);
            tt(i, 0) = rng.uniform(0.2, 0.8);
            tt(i, 1) = rng.uniform(0.2, 0.8);
            tt(i, 2) = rng.uniform(0.05, 0.4);
            tt(i, 3) = rng.uniform(0.05, 0.4);
        }
        check_gradients(
            [&](Tape& t2, const std::vector<Var>& v) {
                return weighted(t2, ad::giou_terms(t2, v[0], tt), Mat::Ones(2, 1) * 0.5);
            },
            {bb}, 1e-4);
    }
}

TEST_CASE("composite network gradient") {
    RandomStream rng(21);
    Mat x = randn(4, 6, rng), w1 = randn(6, 8, rng) * 0.5, b1 = randn(1, 8, rng) * 0.1;
    Mat w2 = randn(8, 3, rng) * 0.5, b2 = randn(1, 3, rng) * 0.1;
    Mat targets(4, 3);
    for (int i = 0; i < targets.size(); ++i) targets(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) {
            Var h = ad::sigmoid(t, ad::add_rowvec(t, ad::matmul(t, v[0], v[1]), v[2]));
            Var logits = ad::add_rowvec(t, ad::matmul(t, h, v[3]), v[4]);
            return ad::bce_with_logits_sum(t, logits, targets);
        },
        {x, w1, b1, w2, b2}, 1e-5);
}

TEST_CASE("tape mechanics") {
    Tape t;
    Mat a(1, 1), b(1, 1);
    a << 2.0;
    b << 5.0;
    Var va = t.leaf(a), vb = t.leaf(b);
    Var loss = ad::sum(t, ad::cmul(t, va, vb));
    t.backward(loss);
    CHECK(t.grad(va)(0, 0) == 5.0);
    CHECK(t.grad(vb)(0, 0) == 2.0);
    // Re-running backward resets rather than accumulates.
    t.backward(loss);
    CHECK(t.grad(va)(0, 0) == 5.0);

    // Unused leaf keeps a zero gradient.
    Var unused = t.leaf(Mat::Ones(2, 2));
    t.backward(loss);
    CHECK(t.grad(unused).isZero(0.0));

    Var nonscalar = t.leaf(Mat::Ones(2, 2));
    CHECK_THROWS_AS(t.backward(nonscalar), std::invalid_argument);
}
