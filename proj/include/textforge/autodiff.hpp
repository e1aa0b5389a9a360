// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode differentiation over dense matrices. Each operation records a node
// holding its value, its parents and a closure that pushes the node's gradient back to them.

#include "textforge/types.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace textforge::ad {

struct Node;

class Var {
public:
    Var() = default;

    static Var constant(Matrix value);
    static Var parameter(Matrix value);

    const Matrix& value() const;
    /// Gradient accumulated by the last backward(); zero-sized when none reached this node.
    const Matrix& grad() const;
    bool requires_grad() const;
    bool defined() const { return node_ != nullptr; }

    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }

private:
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;

    friend struct Node;
    friend Var make_node(Matrix value, std::vector<Var> parents, std::function<void(const Matrix&, std::vector<Matrix*>&)> backward);
    friend void backward(const Var& output);
};

/// Vector-Jacobian product: receives the gradient of the output and returns one gradient per input.
using Vjp = std::function<std::vector<Matrix>(const Matrix& grad_output)>;

Var matmul(const Var& a, const Var& b);
Var matmul_transposed(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var tanh(const Var& a);
Var softmax_rows(const Var& logits);
Var concat_cols(const std::vector<Var>& parts);
/// Adds a row vector to every row of `a`.
Var add_row_broadcast(const Var& a, const Var& row);

/// Wraps an externally computed value with a caller-supplied VJP.
Var custom(const std::vector<Var>& inputs, Matrix value, Vjp vjp);

/// Seeds d(output)/d(output) = 1 for a 1x1 output and propagates to every parameter.
void backward(const Var& output);

}  // namespace textforge::ad
