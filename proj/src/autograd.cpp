// SPDX-License-Identifier: Apache-2.0

#include "slora/autograd.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "slora/attention.h"

namespace slora {

NodeId Tape::push(Node node) {
    for (std::size_t in : node.inputs) {
        node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    nodes_.push_back(std::move(node));
    return NodeId{nodes_.size() - 1};
}

const Tape::Node& Tape::node(NodeId id) const {
    if (id.index >= nodes_.size()) {
        throw std::out_of_range(fmt::format("tape node {} out of range ({} nodes)", id.index, nodes_.size()));
    }
    return nodes_[id.index];
}

const Matrix& Tape::value(NodeId id) const { return node(id).value; }
bool Tape::requires_grad(NodeId id) const { return node(id).requires_grad; }

NodeId Tape::constant(Matrix value) { return push(Node{Op::Constant, {}, std::move(value)}); }

NodeId Tape::parameter(ParamId id, Matrix value) {
    if (std::find(registered_.begin(), registered_.end(), id) != registered_.end()) {
        throw std::invalid_argument(fmt::format("parameter {} registered twice on one tape", id.value));
    }
    registered_.push_back(id);
    Node n{Op::Parameter, {}, std::move(value)};
    n.requires_grad = true;
    n.param = id;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    return push(Node{Op::Matmul, {a.index, b.index}, slora::matmul(value(a), value(b))});
}

NodeId Tape::add(NodeId a, NodeId b) {
    return push(Node{Op::Add, {a.index, b.index}, slora::add(value(a), value(b))});
}

NodeId Tape::scale(NodeId a, double factor) {
    Node n{Op::Scale, {a.index}, slora::scale(value(a), factor)};
    n.scalar = factor;
    return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) { return push(Node{Op::Transpose, {a.index}, slora::transpose(value(a))}); }

NodeId Tape::softmax_rows(NodeId a) { return push(Node{Op::Softmax, {a.index}, slora::softmax_rows(value(a))}); }

NodeId Tape::serial_transform(NodeId x, NodeId b, NodeId a) {
    const Matrix& xv = value(x);
    const Matrix& bv = value(b);
    const Matrix& av = value(a);
    if (bv.cols() != av.rows() || bv.rows() != av.cols() || av.cols() != xv.rows()) {
        throw std::invalid_argument(fmt::format("serial_transform: x {} does not fit B {} A {}", shape_string(xv),
                                                shape_string(bv), shape_string(av)));
    }
    Matrix ax = slora::matmul(av, xv);
    Node n{Op::Serial, {x.index, b.index, a.index}, slora::add(xv, slora::matmul(bv, ax))};
    n.aux = std::move(ax);
    return push(std::move(n));
}

NodeId Tape::slice_rows(NodeId a, std::size_t first, std::size_t count) {
    Node n{Op::SliceRows, {a.index}, slora::slice_rows(value(a), first, count)};
    n.index = first;
    return push(std::move(n));
}

NodeId Tape::concat_rows(std::span<const NodeId> parts) {
    std::vector<Matrix> values;
    std::vector<std::size_t> inputs;
    for (NodeId p : parts) {
        values.push_back(value(p));
        inputs.push_back(p.index);
    }
    return push(Node{Op::ConcatRows, std::move(inputs), slora::concat_rows(values)});
}

NodeId Tape::mean_cols(NodeId a) {
    const Matrix& v = value(a);
    Matrix out(v.rows(), 1);
    for (std::size_t i = 0; i < v.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < v.cols(); ++j) {
            s += v(i, j);
        }
        out(i, 0) = s / static_cast<double>(v.cols());
    }
    return push(Node{Op::MeanCols, {a.index}, std::move(out)});
}

NodeId Tape::sum(NodeId a) {
    double s = 0.0;
    for (double x : value(a).data()) {
        s += x;
    }
    return push(Node{Op::Sum, {a.index}, Matrix(1, 1, {s})});
}

NodeId Tape::sum_squares(NodeId a) {
    double s = 0.0;
    for (double x : value(a).data()) {
        s += x * x;
    }
    return push(Node{Op::SumSquares, {a.index}, Matrix(1, 1, {s})});
}

NodeId Tape::mse(NodeId prediction, const Matrix& target) {
    const Matrix& p = value(prediction);
    if (!p.same_shape(target)) {
        throw std::invalid_argument(
            fmt::format("mse: prediction {} vs target {}", shape_string(p), shape_string(target)));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p.data()[i] - target.data()[i];
        s += d * d;
    }
    Node n{Op::Mse, {prediction.index}, Matrix(1, 1, {s / static_cast<double>(p.size())})};
    n.aux = target;
    return push(std::move(n));
}

NodeId Tape::cross_entropy(NodeId logits, std::size_t label) {
    const Matrix& z = value(logits);
    if (z.cols() != 1 || label >= z.rows()) {
        throw std::invalid_argument(
            fmt::format("cross_entropy: logits {} with label {}", shape_string(z), label));
    }
    const Matrix probs = slora::transpose(slora::softmax_rows(slora::transpose(z)));
    double top = z(0, 0);
    for (std::size_t i = 1; i < z.rows(); ++i) {
        top = std::max(top, z(i, 0));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        s += std::exp(z(i, 0) - top);
    }
    const double loss = top + std::log(s) - z(label, 0);
    Node n{Op::CrossEntropy, {logits.index}, Matrix(1, 1, {loss})};
    n.index = label;
    n.aux = probs;
    return push(std::move(n));
}

GradientMap Tape::backward(NodeId loss) const {
    const Node& root = node(loss);
    if (root.value.rows() != 1 || root.value.cols() != 1) {
        throw std::invalid_argument(fmt::format("backward: loss must be 1x1, got {}", shape_string(root.value)));
    }
    GradientMap grads;
    if (!root.requires_grad) {
        return grads;
    }
    std::vector<std::optional<Matrix>> adj(loss.index + 1);
    adj[loss.index] = Matrix(1, 1, {1.0});

    auto accumulate = [&](std::size_t target, Matrix g) {
        if (!nodes_[target].requires_grad) {
            return;
        }
        if (adj[target]) {
            auto dst = adj[target]->data();
            auto src = g.data();
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += src[i];
            }
        } else {
            adj[target] = std::move(g);
        }
    };

    for (std::size_t idx = loss.index + 1; idx-- > 0;) {
        if (!adj[idx]) {
            continue;
        }
        const Node& n = nodes_[idx];
        const Matrix g = std::move(*adj[idx]);
        adj[idx].reset();
        const auto& in = n.inputs;
        switch (n.op) {
        case Op::Constant:
            break;
        case Op::Parameter:
            grads.emplace(*n.param, g);
            break;
        case Op::Matmul: {
            const Matrix& a = nodes_[in[0]].value;
            const Matrix& b = nodes_[in[1]].value;
            if (nodes_[in[0]].requires_grad) accumulate(in[0], slora::matmul(g, slora::transpose(b)));
            if (nodes_[in[1]].requires_grad) accumulate(in[1], slora::matmul(slora::transpose(a), g));
            break;
        }
        case Op::Add:
            accumulate(in[0], g);
            accumulate(in[1], g);
            break;
        case Op::Scale:
            accumulate(in[0], slora::scale(g, n.scalar));
            break;
        case Op::Transpose:
            accumulate(in[0], slora::transpose(g));
            break;
        case Op::Softmax: {
            const Matrix& y = n.value;
            Matrix dx(y.rows(), y.cols());
            for (std::size_t i = 0; i < y.rows(); ++i) {
                double inner = 0.0;
                for (std::size_t j = 0; j < y.cols(); ++j) {
                    inner += g(i, j) * y(i, j);
                }
                for (std::size_t j = 0; j < y.cols(); ++j) {
                    dx(i, j) = y(i, j) * (g(i, j) - inner);
                }
            }
            accumulate(in[0], std::move(dx));
            break;
        }
        case Op::Serial: {
            const Matrix& x = nodes_[in[0]].value;
            const Matrix& b = nodes_[in[1]].value;
            const Matrix& a = nodes_[in[2]].value;
            const Matrix btg = slora::matmul(slora::transpose(b), g);
            if (nodes_[in[0]].requires_grad) accumulate(in[0], slora::add(g, slora::matmul(slora::transpose(a), btg)));
            if (nodes_[in[1]].requires_grad) accumulate(in[1], slora::matmul(g, slora::transpose(*n.aux)));
            if (nodes_[in[2]].requires_grad) accumulate(in[2], slora::matmul(btg, slora::transpose(x)));
            break;
        }
        case Op::SliceRows: {
            const Matrix& src = nodes_[in[0]].value;
            Matrix dx(src.rows(), src.cols());
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    dx(n.index + i, j) = g(i, j);
                }
            }
            accumulate(in[0], std::move(dx));
            break;
        }
        case Op::ConcatRows: {
            std::size_t row = 0;
            for (std::size_t part : in) {
                const std::size_t count = nodes_[part].value.rows();
                if (nodes_[part].requires_grad) accumulate(part, slora::slice_rows(g, row, count));
                row += count;
            }
            break;
        }
        case Op::MeanCols: {
            const Matrix& src = nodes_[in[0]].value;
            Matrix dx(src.rows(), src.cols());
            const double inv = 1.0 / static_cast<double>(src.cols());
            for (std::size_t i = 0; i < src.rows(); ++i) {
                for (std::size_t j = 0; j < src.cols(); ++j) {
                    dx(i, j) = g(i, 0) * inv;
                }
            }
            accumulate(in[0], std::move(dx));
            break;
        }
        case Op::Sum: {
            const Matrix& src = nodes_[in[0]].value;
            Matrix dx(src.rows(), src.cols());
            for (double& v : dx.data()) v = g(0, 0);
            accumulate(in[0], std::move(dx));
            break;
        }
        case Op::SumSquares:
            accumulate(in[0], slora::scale(nodes_[in[0]].value, 2.0 * g(0, 0)));
            break;
        case Op::Mse: {
            const Matrix& p = nodes_[in[0]].value;
            const double coef = 2.0 * g(0, 0) / static_cast<double>(p.size());
            Matrix dp(p.rows(), p.cols());
            for (std::size_t i = 0; i < p.size(); ++i) {
                dp.data()[i] = coef * (p.data()[i] - n.aux->data()[i]);
            }
            accumulate(in[0], std::move(dp));
            break;
        }
        case Op::CrossEntropy: {
            Matrix dz = slora::scale(*n.aux, g(0, 0));
            dz(n.index, 0) -= g(0, 0);
            accumulate(in[0], std::move(dz));
            break;
        }
        }
    }
    return grads;
}

}  // namespace slora
