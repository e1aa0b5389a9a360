// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "textforge/adam.hpp"
#include "textforge/autodiff.hpp"
#include "textforge/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>

using namespace textforge;

namespace {

/// Scalar sum(weights * y) with its obvious gradient, so any op can be checked through backward().
ad::Var weighted_sum(const ad::Var& y, const Matrix& weights) {
    Matrix v(1, 1);
    v(0, 0) = y.value().cwiseProduct(weights).sum();
    return ad::custom({y}, v, [weights](const Matrix& g) { return std::vector<Matrix>{g(0, 0) * weights}; });
}

using Build = std::function<ad::Var(const std::vector<ad::Var>&)>;

/// Compares reverse-mode gradients with central differences for every input entry.
void check_gradients(const std::vector<Matrix>& inputs, const Build& build) {
    std::srand(7);
    const Matrix probe = build([&] {
        std::vector<ad::Var> c;
        for (const Matrix& m : inputs) c.push_back(ad::Var::constant(m));
        return c;
    }()).value();
    const Matrix weights = Matrix::Random(probe.rows(), probe.cols());

    auto eval = [&](const std::vector<Matrix>& xs) {
        std::vector<ad::Var> vars;
        for (const Matrix& m : xs) vars.push_back(ad::Var::constant(m));
        return build(vars).value().cwiseProduct(weights).sum();
    };

    std::vector<ad::Var> params;
    for (const Matrix& m : inputs) params.push_back(ad::Var::parameter(m));
    ad::backward(weighted_sum(build(params), weights));

    const double h = 1e-6;
    for (size_t k = 0; k < inputs.size(); ++k) {
        REQUIRE(params[k].grad().rows() == inputs[k].rows());
        for (Eigen::Index i = 0; i < inputs[k].rows(); ++i)
            for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
                std::vector<Matrix> up = inputs, down = inputs;
                up[k](i, j) += h;
                down[k](i, j) -= h;
                const double fd = (eval(up) - eval(down)) / (2 * h);
                CHECK(std::abs(fd - params[k].grad()(i, j)) < 1e-6 * std::max(1.0, std::abs(fd)));
            }
    }
}

}  // namespace

TEST_CASE("autodiff: matmul and matmul_transposed") {
    check_gradients({Matrix::Random(3, 4), Matrix::Random(4, 2)}, [](const auto& v) { return ad::matmul(v[0], v[1]); });
    check_gradients({Matrix::Random(3, 4), Matrix::Random(5, 4)},
                    [](const auto& v) { return ad::matmul_transposed(v[0], v[1]); });
}

TEST_CASE("autodiff: elementwise ops") {
    check_gradients({Matrix::Random(3, 3), Matrix::Random(3, 3)}, [](const auto& v) { return ad::add(v[0], v[1]); });
    check_gradients({Matrix::Random(2, 5)}, [](const auto& v) { return ad::scale(v[0], -1.7); });
    check_gradients({Matrix::Random(4, 3)}, [](const auto& v) { return ad::tanh(v[0]); });
    check_gradients({Matrix::Random(4, 3), Matrix::Random(1, 3)},
                    [](const auto& v) { return ad::add_row_broadcast(v[0], v[1]); });
}

TEST_CASE("autodiff: softmax_rows and concat_cols") {
    check_gradients({Matrix::Random(4, 6) * 3.0}, [](const auto& v) { return ad::softmax_rows(v[0]); });
    check_gradients({Matrix::Random(3, 2), Matrix::Random(3, 4)}, [](const auto& v) { return ad::concat_cols({v[0], v[1]}); });
}

TEST_CASE("autodiff: shared subexpressions accumulate") {
    check_gradients({Matrix::Random(3, 3)}, [](const auto& v) {
        const ad::Var t = ad::tanh(v[0]);
        return ad::add(ad::matmul(t, t), ad::softmax_rows(t));
    });
}

TEST_CASE("autodiff: constants receive no gradient and shape errors are contract errors") {
    const ad::Var c = ad::Var::constant(Matrix::Random(2, 2));
    const ad::Var p = ad::Var::parameter(Matrix::Random(2, 2));
    ad::backward(weighted_sum(ad::matmul(c, p), Matrix::Ones(2, 2)));
    CHECK_FALSE(c.requires_grad());
    CHECK(p.grad().size() == 4);
    CHECK_THROWS_AS(ad::matmul(c, ad::Var::constant(Matrix::Zero(3, 1))), ContractError);
    CHECK_THROWS_AS(ad::backward(p), ContractError);
}

TEST_CASE("Adam: first step moves each coordinate by the learning rate") {
    pipeline::Adam adam({0.1, 0.9, 0.999, 1e-8});
    Matrix x(1, 3);
    x << 1.0, -2.0, 0.5;
    Matrix g(1, 3);
    g << 3.0, -0.01, 0.0;
    adam.step(x, g);
    CHECK(x(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(x(0, 1) == doctest::Approx(-1.9).epsilon(1e-5));
    CHECK(x(0, 2) == 0.5);
    CHECK(adam.iterations() == 1);
}

TEST_CASE("optimize_latent: convex quadratic loss never increases") {
    Matrix target = Matrix::Constant(4, 3, 2.0);
    Matrix x = Matrix::Constant(4, 3, -1.0);
    const pipeline::LatentObjective quadratic = [&](const Matrix& z, Matrix& grad) {
        grad = z - target;
        return 0.5 * grad.squaredNorm();
    };
    std::vector<double> trace;
    const pipeline::OptimizationOutcome out = pipeline::optimize_latent(x, 200, {}, quadratic, &trace);
    CHECK(out.iterations == 200);
    CHECK_FALSE(out.aborted);
    REQUIRE(trace.size() == 200);
    for (size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
    CHECK(trace.back() < trace.front());
}

TEST_CASE("optimize_latent: non-finite loss restores the last finite latent") {
    Matrix x = Matrix::Constant(2, 2, 1.0);
    int calls = 0;
    Matrix last_seen;
    const pipeline::LatentObjective objective = [&](const Matrix& z, Matrix& grad) {
        if (++calls == 4) return std::numeric_limits<double>::quiet_NaN();
        last_seen = z;
        grad = z;
        return 0.5 * z.squaredNorm();
    };
    const pipeline::OptimizationOutcome out = pipeline::optimize_latent(x, 10, {}, objective);
    CHECK(out.aborted);
    CHECK(out.iterations == 3);
    CHECK(x == last_seen);

    Matrix y = Matrix::Constant(2, 2, 1.0);
    const pipeline::LatentObjective bad_grad = [](const Matrix&, Matrix& grad) {
        grad.setConstant(std::numeric_limits<double>::infinity());
        return 1.0;
    };
    CHECK(pipeline::optimize_latent(y, 5, {}, bad_grad).aborted);
    CHECK(y == Matrix::Constant(2, 2, 1.0));
}
