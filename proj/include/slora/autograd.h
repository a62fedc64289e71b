// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over a closed set of primitives.
//
// Nodes are appended in evaluation order, so the tape is topologically
// sorted by construction. A node requires a gradient iff it is a parameter
// leaf or depends on one; backward() walks the tape once in reverse and
// skips everything else. Constant leaves (frozen weights, inputs, targets)
// therefore never receive a gradient.
//
// Vector-Jacobian products, with G the adjoint of the output Y:
//   matmul        Y = A B         dA = G B^T,  dB = A^T G
//   add           Y = A + B       dA = G,      dB = G
//   scale         Y = c A         dA = c G
//   transpose     Y = A^T         dA = G^T
//   softmax_rows  Y = softmax(A)  dA_i = Y_i * (G_i - <G_i, Y_i>)  per row i
//   serial        Y = X + B(A X)  dX = G + A^T (B^T G),  dB = G (A X)^T,  dA = (B^T G) X^T
//   slice_rows    scatter G into the sliced rows
//   concat_rows   split G by rows
//   mean_cols     Y = X 1 / n     dX = G 1^T / n
//   sum           Y = sum(A)      dA = G * ones
//   sum_squares   Y = sum(A^2)    dA = 2 G A
//   mse           Y = mean((P - T)^2)         dP = 2 G (P - T) / N
//   cross_entropy Y = lse(z) - z_label        dz = G (softmax(z) - e_label)

#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "slora/linalg.h"

namespace slora {

struct NodeId {
    std::size_t index;
};

struct ParamId {
    std::size_t value;
    auto operator<=>(const ParamId&) const = default;
};

/// Gradients keyed by trainable parameter; shapes match the parameter values.
using GradientMap = std::map<ParamId, Matrix>;

class Tape {
public:
    NodeId constant(Matrix value);
    /// Trainable leaf. Each ParamId may be registered once per tape.
    NodeId parameter(ParamId id, Matrix value);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    NodeId transpose(NodeId a);
    NodeId softmax_rows(NodeId a);
    /// x + b (a x) as one fused node.
    NodeId serial_transform(NodeId x, NodeId b, NodeId a);
    NodeId slice_rows(NodeId a, std::size_t first, std::size_t count);
    NodeId concat_rows(std::span<const NodeId> parts);
    NodeId mean_cols(NodeId a);

    NodeId sum(NodeId a);
    NodeId sum_squares(NodeId a);
    NodeId mse(NodeId prediction, const Matrix& target);
    /// Softmax cross-entropy of a k x 1 logit column against `label`.
    NodeId cross_entropy(NodeId logits, std::size_t label);

    const Matrix& value(NodeId id) const;
    bool requires_grad(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }

    /// Reverse pass from a 1x1 node; each node is visited exactly once.
    GradientMap backward(NodeId loss) const;

private:
    enum class Op {
        Constant,
        Parameter,
        Matmul,
        Add,
        Scale,
        Transpose,
        Softmax,
        Serial,
        SliceRows,
        ConcatRows,
        MeanCols,
        Sum,
        SumSquares,
        Mse,
        CrossEntropy,
    };

    struct Node {
        Node(Op o, std::vector<std::size_t> in, Matrix v) : op(o), inputs(std::move(in)), value(std::move(v)) {}

        Op op;
        std::vector<std::size_t> inputs;
        Matrix value;
        bool requires_grad = false;
        std::optional<ParamId> param;
        double scalar = 0.0;
        std::size_t index = 0;
        // Serial: A x. Mse: the target. CrossEntropy: softmax(z).
        std::optional<Matrix> aux;
    };

    NodeId push(Node node);
    const Node& node(NodeId id) const;

    std::vector<Node> nodes_;
    std::vector<ParamId> registered_;
};

}  // namespace slora
