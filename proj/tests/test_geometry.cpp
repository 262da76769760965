#include <doctest.h>

#include <cmath>

#include "hedet/geometry.hpp"
#include "hedet/rng.hpp"

using hedet::Box;
using hedet::CornerRect;
using hedet::DenoisingConfig;
using hedet::RandomStream;

namespace {

Box random_box(RandomStream& r) {
    const double w = r.uniform(0.01, 0.6);
    const double h = r.uniform(0.01, 0.6);
    const double cx = r.uniform(0.0, 1.0);
    const double cy = r.uniform(0.0, 1.0);
    return Box::center_size(cx, cy, w, h);
}

} // namespace

TEST_CASE("iou worked examples") {
    CornerRect<double> a{0, 0, 1, 1};
    CHECK(hedet::iou(a, a) == 1.0);
    CornerRect<double> b{1, 0, 2, 1};
    CHECK(hedet::iou(a, b) == 0.0);
    CornerRect<double> c{0, 0, 2, 2}, d{1, 1, 3, 3};
    CHECK(hedet::iou(c, d) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("giou worked examples") {
    CornerRect<double> a{0, 0, 1, 1};
    CHECK(hedet::giou(a, a) == 1.0);
    CornerRect<double> b{1, 0, 2, 1};
    CHECK(hedet::giou(a, b) == 0.0);
    CornerRect<double> e{2, 2, 3, 3};
    CHECK(std::abs(hedet::giou(a, e) - (-7.0 / 9.0)) < 1e-12);
}

TEST_CASE("giou bounded by iou and symmetric") {
    RandomStream r(2024);
    for (int i = 0; i < 10000; ++i) {
        Box a = random_box(r), b = random_box(r);
        const double g = giou(a, b), v = iou(a, b);
        CHECK(g <= v + 1e-15);
        CHECK(g == giou(b, a));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(g > -1.0);
        CHECK(g <= 1.0);
    }
}

TEST_CASE("center-size <-> corner round trip") {
    RandomStream r(7);
    for (int i = 0; i < 1000; ++i) {
        Box b = random_box(r);
        auto c = b.corner_form();
        Box back = Box::corners(c.x1, c.y1, c.x2, c.y2);
        CHECK(std::abs(back.cx - b.cx) < 1e-12);
        CHECK(std::abs(back.cy - b.cy) < 1e-12);
        CHECK(std::abs(back.w - b.w) < 1e-12);
        CHECK(std::abs(back.h - b.h) < 1e-12);
    }
}

TEST_CASE("box construction rejects invalid inputs") {
    CHECK_THROWS_AS(Box::center_size(0.5, 0.5, 0.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(Box::center_size(0.5, 0.5, 1e-7, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(Box::center_size(-0.1, 0.5, 0.5, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(Box::center_size(0.5, 1.2, 0.5, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(Box::center_size(0.5, 0.5, 1.5, 0.5), std::invalid_argument);
    const double nan = std::nan("");
    CHECK_THROWS_AS(Box::center_size(nan, 0.5, 0.5, 0.5), std::invalid_argument);
}

TEST_CASE("perturb_box with epsilon 0 is the identity") {
    RandomStream r(1);
    DenoisingConfig cfg;
    cfg.epsilon = 0.0;
    for (int i = 0; i < 200; ++i) {
        Box b = random_box(r);
        Box p = perturb_box(b, cfg, r);
        CHECK(p.cx == b.cx);
        CHECK(p.cy == b.cy);
        CHECK(p.w == b.w);
        CHECK(p.h == b.h);
    }
    // Thinner than the clamp floor: still untouched.
    Box thin = Box::center_size(0.5, 0.5, 5e-4, 5e-4);
    Box p = perturb_box(thin, cfg, r);
    CHECK(p.w == thin.w);
    CHECK(p.h == thin.h);
}

TEST_CASE("perturb_box shift statistics at epsilon 0.1") {
    RandomStream r(33);
    DenoisingConfig cfg;
    cfg.epsilon = 0.1;
    const Box b = Box::center_size(0.5, 0.5, 0.5, 0.5); // clamps never fire
    double sum_dcx = 0.0, sum_dcy = 0.0, sum_dw = 0.0, sum_dh = 0.0;
    double max_abs = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        Box p = perturb_box(b, cfg, r);
        const double dcx = p.cx - b.cx, dcy = p.cy - b.cy;
        const double dw = p.w - b.w, dh = p.h - b.h;
        sum_dcx += dcx;
        sum_dcy += dcy;
        sum_dw += dw;
        sum_dh += dh;
        for (double d : {dcx, dcy, dw, dh}) max_abs = std::max(max_abs, std::abs(d));
    }
    CHECK(std::abs(sum_dcx / n) < 0.01);
    CHECK(std::abs(sum_dcy / n) < 0.01);
    CHECK(std::abs(sum_dw / n) < 0.01);
    CHECK(std::abs(sum_dh / n) < 0.01);
    CHECK(max_abs <= 0.1);
}

TEST_CASE("perturb_box clamps near the border") {
    RandomStream r(5);
    DenoisingConfig cfg;
    cfg.epsilon = 0.1;
    const Box b = Box::center_size(0.02, 0.5, 0.1, 0.1);
    for (int i = 0; i < 1000; ++i) {
        Box p = perturb_box(b, cfg, r);
        CHECK(p.cx >= 0.0);
        CHECK(p.cx <= 0.12);
        CHECK(p.w > 0.0);
        CHECK(p.h > 0.0);
        // Result must round-trip through the validating constructor.
        CHECK_NOTHROW(Box::center_size(p.cx, p.cy, p.w, p.h));
    }
}

TEST_CASE("perturb_box draws exactly four uniforms") {
    RandomStream a(9), b(9);
    DenoisingConfig cfg;
    cfg.epsilon = 0.05;
    Box box = Box::center_size(0.5, 0.5, 0.3, 0.3);
    perturb_box(box, cfg, a);
    for (int i = 0; i < 4; ++i) b.uniform();
    CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("denoising config validation") {
    DenoisingConfig ok;
    CHECK_NOTHROW(ok.validate());
    DenoisingConfig bad1;
    bad1.epsilon = 0.5;
    CHECK_THROWS_AS(bad1.validate(), std::invalid_argument);
    DenoisingConfig bad2;
    bad2.groups = 0;
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
    DenoisingConfig bad3;
    bad3.lambda_dn = -1.0;
    CHECK_THROWS_AS(bad3.validate(), std::invalid_argument);
}
