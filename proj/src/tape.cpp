#include "palora/tape.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "palora/kernels.hpp"

namespace palora {

size_t Tape::check(NodeId id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
        throw DimensionError("tape: invalid node id " + std::to_string(id));
    return static_cast<size_t>(id);
}

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::clear() { nodes_.clear(); }

NodeId Tape::leaf(Matrix value, bool requires_grad) {
    ensure_finite(value, "tape leaf");
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::matmul;
    n.a = a;
    n.b = b;
    n.value = palora::matmul(value(a), value(b));
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    Node n;
    n.op = Op::add;
    n.a = a;
    n.b = b;
    n.value = palora::add(value(a), value(b));
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    Node n;
    n.op = Op::sub;
    n.a = a;
    n.b = b;
    n.value = palora::sub(value(a), value(b));
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

NodeId Tape::add_bias(NodeId a, NodeId bias) {
    Node n;
    n.op = Op::add_bias;
    n.a = a;
    n.b = bias;
    n.value = palora::add_bias(value(a), value(bias));
    n.requires_grad = requires_grad(a) || requires_grad(bias);
    return push(std::move(n));
}

NodeId Tape::hadamard(NodeId a, NodeId b) {
    Node n;
    n.op = Op::hadamard;
    n.a = a;
    n.b = b;
    n.value = palora::hadamard(value(a), value(b));
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double s) {
    Node n;
    n.op = Op::scale;
    n.a = a;
    n.scalar = s;
    n.value = palora::scale(value(a), s);
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
    Node n;
    n.op = Op::relu;
    n.a = a;
    n.value = palora::relu(value(a));
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

NodeId Tape::gelu(NodeId a) {
    Node n;
    n.op = Op::gelu;
    n.a = a;
    n.value = palora::gelu(value(a));
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
    Node n;
    n.op = Op::sum;
    n.a = a;
    n.value = Matrix(1, 1);
    n.value.at(0, 0) = palora::sum(value(a));
    ensure_finite(n.value, "sum");
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

NodeId Tape::softmax_cross_entropy(NodeId logits, const std::vector<int>& labels,
                                   Reduction reduction) {
    const Matrix& z = value(logits);
    if (labels.size() != z.cols)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(z.cols) + " columns");
    for (int y : labels)
        if (y < 0 || static_cast<size_t>(y) >= z.rows)
            throw DimensionError("softmax_cross_entropy: label " + std::to_string(y) +
                                 " out of range [0," + std::to_string(z.rows) + ")");
    Node n;
    n.op = Op::softmax_ce;
    n.a = logits;
    n.labels = labels;
    n.reduction = reduction;
    n.saved = softmax_columns(z);
    double loss = 0.0;
    for (size_t j = 0; j < z.cols; ++j) {
        const double p = n.saved.at(static_cast<size_t>(labels[j]), j);
        loss -= std::log(std::max(p, 1e-300));
    }
    if (reduction == Reduction::mean) loss /= static_cast<double>(z.cols);
    n.value = Matrix(1, 1);
    n.value.at(0, 0) = loss;
    ensure_finite(n.value, "softmax_cross_entropy");
    n.requires_grad = requires_grad(logits);
    return push(std::move(n));
}

void Tape::accumulate(NodeId id, const Matrix& g) {
    Node& n = nodes_[check(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix(n.value.rows, n.value.cols);
    if (!n.grad.same_shape(g)) throw DimensionError("tape: gradient shape mismatch");
    kernels::ops().add(n.grad.data.data(), g.data.data(), n.grad.data.data(), g.size());
}

void Tape::backward(NodeId loss) {
    Node& root = nodes_[check(loss)];
    if (root.value.rows != 1 || root.value.cols != 1)
        throw DimensionError("backward: loss must be 1x1, got " +
                             std::to_string(root.value.rows) + "x" +
                             std::to_string(root.value.cols));
    // Zero-fill gradients of grad-requiring nodes so untouched leaves report
    // zero rather than empty.
    for (Node& n : nodes_)
        if (n.requires_grad) n.grad = Matrix(n.value.rows, n.value.cols);
    if (!root.requires_grad) return;
    root.grad.at(0, 0) = 1.0;

    for (NodeId id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || n.grad.size() == 0) continue;
        const Matrix& g = n.grad;
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::matmul: {
                const Matrix& av = value(n.a);
                const Matrix& bv = value(n.b);
                if (requires_grad(n.a)) accumulate(n.a, palora::matmul(g, transpose(bv)));
                if (requires_grad(n.b)) accumulate(n.b, palora::matmul(transpose(av), g));
                break;
            }
            case Op::add:
                accumulate(n.a, g);
                accumulate(n.b, g);
                break;
            case Op::sub: {
                accumulate(n.a, g);
                if (requires_grad(n.b)) accumulate(n.b, palora::scale(g, -1.0));
                break;
            }
            case Op::add_bias: {
                accumulate(n.a, g);
                if (requires_grad(n.b)) {
                    Matrix gb(g.rows, 1);
                    for (size_t i = 0; i < g.rows; ++i) {
                        double s = 0.0;
                        for (size_t j = 0; j < g.cols; ++j) s += g.at(i, j);
                        gb.at(i, 0) = s;
                    }
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::hadamard: {
                if (requires_grad(n.a)) accumulate(n.a, palora::hadamard(g, value(n.b)));
                if (requires_grad(n.b)) accumulate(n.b, palora::hadamard(g, value(n.a)));
                break;
            }
            case Op::scale:
                if (requires_grad(n.a)) accumulate(n.a, palora::scale(g, n.scalar));
                break;
            case Op::relu: {
                const Matrix& x = value(n.a);
                Matrix gx(x.rows, x.cols);
                kernels::ops().relu_grad(x.data.data(), g.data.data(), gx.data.data(), x.size());
                accumulate(n.a, gx);
                break;
            }
            case Op::gelu:
                accumulate(n.a, palora::hadamard(g, gelu_grad(value(n.a))));
                break;
            case Op::sum: {
                const Matrix& x = value(n.a);
                accumulate(n.a, Matrix::full(x.rows, x.cols, g.at(0, 0)));
                break;
            }
            case Op::softmax_ce: {
                // d logits = (softmax - onehot) * g, divided by batch for mean.
                Matrix gz = n.saved;
                for (size_t j = 0; j < gz.cols; ++j)
                    gz.at(static_cast<size_t>(n.labels[j]), j) -= 1.0;
                double f = g.at(0, 0);
                if (n.reduction == Reduction::mean) f /= static_cast<double>(gz.cols);
                accumulate(n.a, palora::scale(gz, f));
                break;
            }
        }
    }
}

}  // namespace palora
