// SPDX-License-Identifier: Apache-2.0
#include "textforge/adam.hpp"

#include <cmath>

namespace textforge::pipeline {

void Adam::step(Matrix& param, const Matrix& grad) {
    if (grad.rows() != param.rows() || grad.cols() != param.cols()) throw ContractError("Adam: gradient shape mismatch");
    if (t_ == 0) {
        first_moment_ = Matrix::Zero(param.rows(), param.cols());
        second_moment_ = Matrix::Zero(param.rows(), param.cols());
    }
    ++t_;
    first_moment_ = options_.beta1 * first_moment_ + (1.0 - options_.beta1) * grad;
    second_moment_ = options_.beta2 * second_moment_ + (1.0 - options_.beta2) * grad.cwiseProduct(grad);
    const double bias1 = 1.0 - std::pow(options_.beta1, t_);
    const double bias2 = 1.0 - std::pow(options_.beta2, t_);
    const double step_size = options_.learning_rate / bias1;
    const Eigen::ArrayXXd denom = (second_moment_.array() / bias2).sqrt() + options_.epsilon;
    param.array() -= step_size * first_moment_.array() / denom;
}

}  // namespace textforge::pipeline
