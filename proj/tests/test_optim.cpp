#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "advdrive/optim.hpp"

using namespace advdrive;

namespace {

Tensor param_with_grad(double value, double grad) {
    Tensor p = Tensor::scalar(value, true);
    p.mutable_grad()[0] = grad;
    return p;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    std::vector<Tensor> params{param_with_grad(1.25, 0.0)};
    OptimizerState st = make_optimizer(OptimizerKind::Adam, 0.01);
    adam_step(params, st);
    CHECK(params[0].values()[0] == 1.25);
}

TEST_CASE("adam: bias-corrected first step moves by about lr") {
    std::vector<Tensor> params{param_with_grad(1.0, 4.0)};
    OptimizerState st = make_optimizer(OptimizerKind::Adam, 0.005);
    adam_step(params, st);
    CHECK(params[0].values()[0] == doctest::Approx(0.995).epsilon(1e-7));
    CHECK(st.step_count == 1);
    // gradient untouched
    CHECK(params[0].grad()[0] == 4.0);
}

TEST_CASE("adam: step counter increments per update") {
    std::vector<Tensor> params{param_with_grad(1.0, 4.0)};
    OptimizerState st = make_optimizer(OptimizerKind::Adam, 0.005);
    adam_step(params, st);
    adam_step(params, st);
    CHECK(st.step_count == 2);
}

TEST_CASE("adam: moment accumulators shape-match parameters") {
    std::vector<Tensor> params{Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, 6}, true)};
    params[0].mutable_grad();
    OptimizerState st = make_optimizer(OptimizerKind::Adam, 0.001);
    adam_step(params, st);
    REQUIRE(st.first_moment.size() == 1);
    CHECK(st.first_moment[0].size() == 6);
    CHECK(st.second_moment[0].size() == 6);
}

TEST_CASE("adam: missing gradients rejected") {
    std::vector<Tensor> params{Tensor::scalar(1.0, true)};
    OptimizerState st = make_optimizer(OptimizerKind::Adam, 0.01);
    CHECK_THROWS_AS(adam_step(params, st), std::invalid_argument);
    OptimizerState sgd = make_optimizer(OptimizerKind::Sgd, 0.01);
    CHECK_THROWS_AS(adam_step(params, sgd), std::invalid_argument);
}

TEST_CASE("sgd update") {
    std::vector<Tensor> params{param_with_grad(1.0, 2.0)};
    OptimizerState st = make_optimizer(OptimizerKind::Sgd, 0.1);
    sgd_step(params, st);
    CHECK(params[0].values()[0] == doctest::Approx(0.8));

    std::vector<Tensor> zero_grad{param_with_grad(0.7, 0.0)};
    OptimizerState st2 = make_optimizer(OptimizerKind::Sgd, 0.1);
    sgd_step(zero_grad, st2);
    CHECK(zero_grad[0].values()[0] == 0.7);

    std::vector<Tensor> zero_lr{param_with_grad(0.7, 2.0)};
    OptimizerState st3 = make_optimizer(OptimizerKind::Sgd, 0.0);
    sgd_step(zero_lr, st3);
    CHECK(zero_lr[0].values()[0] == 0.7);
}
