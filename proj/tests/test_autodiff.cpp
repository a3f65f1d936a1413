#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "advdrive/gradcheck.hpp"
#include "advdrive/rng.hpp"
#include "advdrive/tensor.hpp"

using namespace advdrive;

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(shape, std::move(v), requires_grad);
}

// Direct convolution, written independently of the library kernel: pads
// explicitly and sums naively over the window.
std::vector<double> conv_oracle(const std::vector<double>& x, int n, int c, int h, int w,
                                const std::vector<double>& ker, int k, int r, int s,
                                const std::vector<double>& bias, int stride) {
    const int oh = (h + stride - 1) / stride;
    const int ow = (w + stride - 1) / stride;
    const int pad_top = std::max(0, (oh - 1) * stride + r - h) / 2;
    const int pad_left = std::max(0, (ow - 1) * stride + s - w) / 2;
    std::vector<double> y(static_cast<size_t>(n) * k * oh * ow, 0.0);
    for (int ni = 0; ni < n; ++ni)
        for (int ki = 0; ki < k; ++ki)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias[ki];
                    for (int ci = 0; ci < c; ++ci)
                        for (int ri = 0; ri < r; ++ri)
                            for (int si = 0; si < s; ++si) {
                                const int iy = oy * stride + ri - pad_top;
                                const int ix = ox * stride + si - pad_left;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += x[((static_cast<size_t>(ni) * c + ci) * h + iy) * w + ix] *
                                       ker[((static_cast<size_t>(ki) * c + ci) * r + ri) * s + si];
                            }
                    y[((static_cast<size_t>(ni) * k + ki) * oh + oy) * ow + ox] = acc;
                }
    return y;
}

}  // namespace

TEST_CASE("tensor construction") {
    Tensor t(Shape{2, 2}, {1, 2, 3, 4});
    CHECK(t.shape() == Shape{2, 2});
    CHECK(t.values()[3] == 4.0);

    Tensor s(Shape{1}, {0.0});
    CHECK(s.size() == 1);
    CHECK_FALSE(s.has_grad());

    CHECK_THROWS_AS(Tensor(Shape{2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(Shape{1}, {std::nan("")}), std::invalid_argument);
}

TEST_CASE("elementwise op values") {
    Tensor x(Shape{2}, {-1.0, 2.0});
    CHECK(relu(x).values() == std::vector<double>{0.0, 2.0});

    CHECK(mse_loss(Tensor(Shape{1}, {0.5}), Tensor(Shape{1}, {0.5})).item() == 0.0);

    Tensor a(Shape{2}, {1.0, -2.0});
    Tensor b(Shape{2}, {0.5, 0.5});
    CHECK(add(a, b).values() == std::vector<double>{1.5, -1.5});
    CHECK(sub(a, b).values() == std::vector<double>{0.5, -2.5});
    CHECK(scale(a, 2.0).values() == std::vector<double>{2.0, -4.0});
    CHECK(bce_loss(Tensor(Shape{1}, {0.5}), Tensor(Shape{1}, {1.0})).item() ==
          doctest::Approx(std::log(2.0)));
}

TEST_CASE("conv2d matches a brute-force direct convolution") {
    // All-ones 5x5 image, all-ones 3x3 kernel: the center of the same-padded
    // output sees the full window.
    Tensor x(Shape{1, 1, 5, 5}, std::vector<double>(25, 1.0));
    Tensor w(Shape{1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor b(Shape{1}, {0.0});
    Tensor y = conv2d(x, w, b, 1);
    CHECK(y.shape() == Shape{1, 1, 5, 5});
    CHECK(y.values()[2 * 5 + 2] == 9.0);
    CHECK(y.values()[0] == 4.0);  // corner sees a 2x2 window

    Rng rng(7);
    for (int stride : {1, 2}) {
        Tensor xr = random_tensor(rng, {2, 3, 7, 6});
        Tensor wr = random_tensor(rng, {4, 3, 3, 3});
        Tensor br = random_tensor(rng, {4});
        Tensor out = conv2d(xr, wr, br, stride);
        const std::vector<double> expect =
            conv_oracle(xr.values(), 2, 3, 7, 6, wr.values(), 4, 3, 3, br.values(), stride);
        REQUIRE(out.values().size() == expect.size());
        for (size_t i = 0; i < expect.size(); ++i) {
            CHECK(out.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward basics") {
    // d(x^2)/dx at 3 is 6; x^2 expressed as squared error against zero.
    Tensor x = Tensor::scalar(3.0, true);
    Tensor loss = mse_loss(x, Tensor::scalar(0.0));
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(6.0));

    Tensor neg = Tensor::scalar(-1.0, true);
    Tensor r = l2_norm(relu(neg));
    r.backward();
    CHECK(neg.grad()[0] == 0.0);

    // Accumulation: a second sweep doubles the stored gradient.
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(12.0));
    x.zero_grad();
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(6.0));

    CHECK_THROWS_AS(Tensor(Shape{2}, {1, 2}, true).backward(), std::invalid_argument);
    Tensor vec(Shape{2}, {1, 2}, true);
    CHECK_THROWS_AS(add(vec, vec).backward(), std::invalid_argument);  // non-scalar loss
}

TEST_CASE("l2_norm subgradient at zero") {
    Tensor z(Shape{3}, {0.0, 0.0, 0.0}, true);
    Tensor n = l2_norm(z);
    n.backward();
    CHECK(z.grad() == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(n.kink_hits() == 1);
}

TEST_CASE("clamp is a detached projection") {
    Tensor x(Shape{3}, {1.2, -0.4, 0.1}, true);
    Tensor c = clamp(x, 0.0, 1.0);
    CHECK(c.values() == std::vector<double>{1.0, 0.0, 0.1});
    CHECK(c.is_leaf());
    CHECK_FALSE(c.requires_grad());

    Tensor d = clamp(Tensor(Shape{1}, {-0.4}), -0.3, 0.3);
    CHECK(d.values()[0] == -0.3);
    Tensor inside = clamp(Tensor(Shape{1}, {0.12}), 0.0, 1.0);
    CHECK(inside.values()[0] == 0.12);
    CHECK_THROWS_AS(clamp(x, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("forward determinism") {
    Rng rng(11);
    Tensor x = random_tensor(rng, {1, 3, 8, 8});
    Tensor w = random_tensor(rng, {4, 3, 3, 3});
    Tensor b = random_tensor(rng, {4});
    Tensor y1 = conv2d(x, w, b, 2);
    Tensor y2 = conv2d(x, w, b, 2);
    CHECK(y1.values() == y2.values());
}

TEST_CASE("activation ranges") {
    Rng rng(13);
    Tensor x = random_tensor(rng, {64}, -5.0, 5.0, false);
    const Tensor th = tanh(x), sg = sigmoid(x), rl = relu(x);
    for (double v : th.values()) CHECK((v > -1.0 && v < 1.0));
    for (double v : sg.values()) CHECK((v > 0.0 && v < 1.0));
    for (double v : rl.values()) CHECK(v >= 0.0);
}

TEST_CASE("grad_check: linear model is exact") {
    Rng rng(3);
    Tensor x = random_tensor(rng, {1, 6});
    Tensor w = random_tensor(rng, {1, 6});
    Tensor b = random_tensor(rng, {1});
    std::vector<Tensor> params{x, w, b};
    const double err = grad_check(
        [](const std::vector<Tensor>& p) { return dense(p[0], p[1], p[2]); }, params);
    CHECK(err < 1e-10);
}

TEST_CASE("grad_check: relu at its kink is skipped") {
    Tensor x = Tensor::scalar(0.0, true);
    std::vector<Tensor> params{x};
    const double err =
        grad_check([](const std::vector<Tensor>& p) { return l2_norm(relu(p[0])); }, params);
    CHECK(err == 0.0);  // the only coordinate is skipped
}

TEST_CASE("grad_check: conv-dense pipeline") {
    Rng rng(17);
    Tensor x = random_tensor(rng, {1, 2, 6, 6});
    Tensor wc = random_tensor(rng, {3, 2, 3, 3});
    Tensor bc = random_tensor(rng, {3});
    Tensor wd = random_tensor(rng, {1, 27});
    Tensor bd = random_tensor(rng, {1});
    std::vector<Tensor> params{x, wc, bc, wd, bd};
    const double err = grad_check(
        [](const std::vector<Tensor>& p) {
            Tensor t = relu(conv2d(p[0], p[1], p[2], 2));
            t = dense(flatten(t), p[3], p[4]);
            return mse_loss(t, Tensor::scalar(0.25));
        },
        params);
    CHECK(err < 1e-4);
}

TEST_CASE("grad_check: every op, seeded random instances") {
    Rng rng(29);
    auto check_op = [&](const char* name, const LossBuilder& builder,
                        std::vector<Tensor> params) {
        CAPTURE(name);
        const double err = grad_check(builder, params);
        CHECK(err < 1e-4);
    };
    for (int inst = 0; inst < 3; ++inst) {
        check_op("dense",
                 [](const std::vector<Tensor>& p) { return l2_norm(dense(p[0], p[1], p[2])); },
                 {random_tensor(rng, {2, 5}), random_tensor(rng, {3, 5}),
                  random_tensor(rng, {3})});
        for (int stride : {1, 2}) {
            check_op("conv2d",
                     [stride](const std::vector<Tensor>& p) {
                         return l2_norm(conv2d(p[0], p[1], p[2], stride));
                     },
                     {random_tensor(rng, {1, 2, 5, 4}), random_tensor(rng, {3, 2, 3, 3}),
                      random_tensor(rng, {3})});
        }
        check_op("relu",
                 [](const std::vector<Tensor>& p) { return l2_norm(relu(p[0])); },
                 {random_tensor(rng, {4, 5})});
        check_op("tanh",
                 [](const std::vector<Tensor>& p) { return l2_norm(advdrive::tanh(p[0])); },
                 {random_tensor(rng, {4, 5})});
        check_op("sigmoid",
                 [](const std::vector<Tensor>& p) { return l2_norm(sigmoid(p[0])); },
                 {random_tensor(rng, {4, 5})});
        check_op("flatten",
                 [](const std::vector<Tensor>& p) { return l2_norm(flatten(p[0])); },
                 {random_tensor(rng, {2, 3, 2, 2})});
        check_op("add",
                 [](const std::vector<Tensor>& p) { return l2_norm(add(p[0], p[1])); },
                 {random_tensor(rng, {3, 3}), random_tensor(rng, {3, 3})});
        check_op("sub",
                 [](const std::vector<Tensor>& p) { return l2_norm(sub(p[0], p[1])); },
                 {random_tensor(rng, {3, 3}), random_tensor(rng, {3, 3})});
        check_op("scale",
                 [](const std::vector<Tensor>& p) { return l2_norm(scale(p[0], -1.7)); },
                 {random_tensor(rng, {3, 3})});
        check_op("upsample2x",
                 [](const std::vector<Tensor>& p) { return l2_norm(upsample2x(p[0])); },
                 {random_tensor(rng, {1, 2, 3, 3})});
        check_op("mse_loss",
                 [](const std::vector<Tensor>& p) { return mse_loss(p[0], p[1]); },
                 {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})});
        check_op("l2_norm",
                 [](const std::vector<Tensor>& p) { return l2_norm(p[0]); },
                 {random_tensor(rng, {7})});
        check_op("bce_loss",
                 [](const std::vector<Tensor>& p) {
                     return bce_loss(sigmoid(p[0]), Tensor(Shape{3}, {1.0, 0.0, 1.0}));
                 },
                 {random_tensor(rng, {3})});
    }
}

TEST_CASE("op validation errors") {
    Tensor x(Shape{1, 3, 4, 4}, std::vector<double>(48, 0.1));
    Tensor w(Shape{2, 3, 3, 3}, std::vector<double>(54, 0.1));
    Tensor b(Shape{2}, {0.0, 0.0});
    CHECK_THROWS_AS(conv2d(x, w, b, 0), std::invalid_argument);
    Tensor wrong_b(Shape{3}, {0, 0, 0});
    CHECK_THROWS_AS(conv2d(x, w, wrong_b, 1), std::invalid_argument);
    CHECK_THROWS_AS(add(Tensor(Shape{2}, {1, 2}), Tensor(Shape{3}, {1, 2, 3})),
                    std::invalid_argument);
}
