#pragma once

#include <vector>

#include "palora/matrix.hpp"

namespace palora {

using NodeId = int;

enum class Reduction { mean, sum };

// Reverse-mode autodiff over matrices. Define-by-run: ops append nodes in
// topological order (inputs always precede consumers), backward() walks the
// record in reverse. A tape is single-owner; training loops build a fresh
// graph per step.
class Tape {
public:
    NodeId leaf(Matrix value, bool requires_grad);
    NodeId constant(Matrix value) { return leaf(std::move(value), false); }

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId add_bias(NodeId a, NodeId bias);
    NodeId hadamard(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    NodeId relu(NodeId a);
    NodeId gelu(NodeId a);
    NodeId sum(NodeId a);  // 1x1
    // Mean/sum cross-entropy over columns; labels[j] in [0, rows). 1x1 output.
    NodeId softmax_cross_entropy(NodeId logits, const std::vector<int>& labels,
                                 Reduction reduction = Reduction::mean);

    // Populates gradients of every grad-requiring node reachable from loss;
    // leaves off the path keep zero gradients. loss must be 1x1.
    void backward(NodeId loss);

    const Matrix& value(NodeId id) const { return nodes_[check(id)].value; }
    const Matrix& grad(NodeId id) const { return nodes_[check(id)].grad; }
    bool requires_grad(NodeId id) const { return nodes_[check(id)].requires_grad; }
    size_t node_count() const { return nodes_.size(); }
    void clear();

private:
    enum class Op {
        leaf, matmul, add, sub, add_bias, hadamard, scale, relu, gelu, sum, softmax_ce,
    };

    struct Node {
        Op op;
        NodeId a = -1;
        NodeId b = -1;
        Matrix value;
        Matrix grad;             // allocated on demand, value-shaped
        bool requires_grad = false;
        double scalar = 0.0;     // scale factor
        Matrix saved;            // softmax probabilities for CE backward
        std::vector<int> labels;
        Reduction reduction = Reduction::mean;
    };

    size_t check(NodeId id) const;
    NodeId push(Node n);
    void accumulate(NodeId id, const Matrix& g);

    std::vector<Node> nodes_;
};

}  // namespace palora
