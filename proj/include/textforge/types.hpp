// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace textforge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Height/width of a spatial feature grid. Flattened index of (y, x) is y * width + x.
struct SpatialDims {
    int height = 0;
    int width = 0;

    int cells() const { return height * width; }
    bool operator==(const SpatialDims&) const = default;
};

/// A caller broke an operation's precondition (shapes, indices, kinds).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// User-supplied input is unusable (empty mask, missing reference, bad payload).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The sampling pipeline or backbone failed while running.
class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace textforge
