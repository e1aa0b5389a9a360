// SPDX-License-Identifier: Apache-2.0
#include "textforge/autodiff.hpp"

#include <unordered_set>

namespace textforge::ad {

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Receives this node's gradient and pointers to parent gradient accumulators
    // (nullptr for parents that do not require gradients).
    std::function<void(const Matrix&, std::vector<Matrix*>&)> backward;
};

Var make_node(Matrix value, std::vector<Var> parents, std::function<void(const Matrix&, std::vector<Matrix*>&)> backward);

Var Var::constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var Var::parameter(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

const Matrix& Var::value() const {
    if (!node_) throw ContractError("ad::Var: undefined variable");
    return node_->value;
}

const Matrix& Var::grad() const {
    if (!node_) throw ContractError("ad::Var: undefined variable");
    return node_->grad;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

Var make_node(Matrix value, std::vector<Var> parents, std::function<void(const Matrix&, std::vector<Matrix*>&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    for (const Var& p : parents) {
        if (!p.node_) throw ContractError("ad: undefined input");
        node->requires_grad = node->requires_grad || p.node_->requires_grad;
        node->parents.push_back(p.node_);
    }
    if (node->requires_grad) node->backward = std::move(backward);
    else node->parents.clear();
    return Var(std::move(node));
}

namespace {

void require(bool ok, const char* message) {
    if (!ok) throw ContractError(message);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "ad::matmul: inner dimension mismatch");
    Matrix av = a.value(), bv = b.value();
    return make_node(av * bv, {a, b}, [av, bv](const Matrix& g, std::vector<Matrix*>& out) {
        if (out[0]) *out[0] += g * bv.transpose();
        if (out[1]) *out[1] += av.transpose() * g;
    });
}

Var matmul_transposed(const Var& a, const Var& b) {
    require(a.cols() == b.cols(), "ad::matmul_transposed: inner dimension mismatch");
    Matrix av = a.value(), bv = b.value();
    return make_node(av * bv.transpose(), {a, b}, [av, bv](const Matrix& g, std::vector<Matrix*>& out) {
        if (out[0]) *out[0] += g * bv;
        if (out[1]) *out[1] += g.transpose() * av;
    });
}

Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "ad::add: shape mismatch");
    return make_node(a.value() + b.value(), {a, b}, [](const Matrix& g, std::vector<Matrix*>& out) {
        if (out[0]) *out[0] += g;
        if (out[1]) *out[1] += g;
    });
}

Var scale(const Var& a, double factor) {
    return make_node(a.value() * factor, {a}, [factor](const Matrix& g, std::vector<Matrix*>& out) {
        if (out[0]) *out[0] += g * factor;
    });
}

Var tanh(const Var& a) {
    Matrix y = a.value().array().tanh().matrix();
    return make_node(y, {a}, [y](const Matrix& g, std::vector<Matrix*>& out) {
        if (out[0]) *out[0] += (g.array() * (1.0 - y.array().square())).matrix();
    });
}

Var softmax_rows(const Var& logits) {
    const Matrix& x = logits.value();
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double peak = x.row(i).maxCoeff();
        y.row(i) = (x.row(i).array() - peak).exp().matrix();
        y.row(i) /= y.row(i).sum();
    }
    return make_node(y, {logits}, [y](const Matrix& g, std::vector<Matrix*>& out) {
        if (!out[0]) return;
        // dL/dx_ij = y_ij * (g_ij - sum_k g_ik y_ik)
        const Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
        *out[0] += (y.array() * (g.array().colwise() - dots.array())).matrix();
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "ad::concat_cols: no inputs");
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    std::vector<Eigen::Index> widths;
    for (const Var& p : parts) {
        require(p.rows() == rows, "ad::concat_cols: row mismatch");
        widths.push_back(p.cols());
        cols += p.cols();
    }
    Matrix y(rows, cols);
    Eigen::Index offset = 0;
    for (const Var& p : parts) {
        y.middleCols(offset, p.cols()) = p.value();
        offset += p.cols();
    }
    return make_node(std::move(y), parts, [widths](const Matrix& g, std::vector<Matrix*>& out) {
        Eigen::Index off = 0;
        for (size_t k = 0; k < widths.size(); ++k) {
            if (out[k]) *out[k] += g.middleCols(off, widths[k]);
            off += widths[k];
        }
    });
}

Var add_row_broadcast(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "ad::add_row_broadcast: shape mismatch");
    Matrix y = a.value().rowwise() + row.value().row(0);
    return make_node(std::move(y), {a, row}, [](const Matrix& g, std::vector<Matrix*>& out) {
        if (out[0]) *out[0] += g;
        if (out[1]) *out[1] += g.colwise().sum();
    });
}

Var custom(const std::vector<Var>& inputs, Matrix value, Vjp vjp) {
    const size_t n = inputs.size();
    return make_node(std::move(value), inputs, [vjp = std::move(vjp), n](const Matrix& g, std::vector<Matrix*>& out) {
        std::vector<Matrix> grads = vjp(g);
        if (grads.size() != n) throw ContractError("ad::custom: VJP returned the wrong number of gradients");
        for (size_t k = 0; k < n; ++k)
            if (out[k] && grads[k].size() != 0) *out[k] += grads[k];
    });
}

void backward(const Var& output) {
    if (!output.node_) throw ContractError("ad::backward: undefined output");
    if (output.rows() != 1 || output.cols() != 1) throw ContractError("ad::backward: output must be a scalar");

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack{{output.node_.get(), 0}};
    visited.insert(output.node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order) node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
    output.node_->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward) continue;
        std::vector<Matrix*> targets;
        targets.reserve(node->parents.size());
        for (const auto& p : node->parents) targets.push_back(p->requires_grad ? &p->grad : nullptr);
        node->backward(node->grad, targets);
    }
}

}  // namespace textforge::ad
