// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "textforge/types.hpp"

namespace textforge::pipeline {

struct AdamOptions {
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam over one dense parameter block.
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    void step(Matrix& param, const Matrix& grad);
    int iterations() const { return t_; }

private:
    AdamOptions options_;
    Matrix first_moment_;
    Matrix second_moment_;
    int t_ = 0;
};

}  // namespace textforge::pipeline
