#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "falcon/tensor.hpp"

namespace falcon::autodiff {

using NodeId = std::size_t;

/// Reverse-mode tape over 64-bit matrices. Nodes are recorded in evaluation
/// order, so walking the tape backwards is a valid topological order.
class Tape {
public:
    NodeId leaf(TensorD value);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    NodeId transpose(NodeId a);
    NodeId softmax_rows(NodeId a);
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps);
    NodeId gelu(NodeId a);
    NodeId slice_rows(NodeId a, std::size_t begin, std::size_t end);
    NodeId slice_cols(NodeId a, std::size_t begin, std::size_t end);
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId sum(NodeId a);

    /// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
    void backward(NodeId root);

    const TensorD& value(NodeId id) const { return nodes_.at(id).value; }
    const TensorD& grad(NodeId id) const { return nodes_.at(id).grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        TensorD value;
        TensorD grad;
        std::function<void(Tape&, NodeId)> backward;
    };

    NodeId push(TensorD value, std::function<void(Tape&, NodeId)> backward);
    TensorD& grad_ref(NodeId id) { return nodes_[id].grad; }
    void accumulate(NodeId id, const TensorD& g);

    std::vector<Node> nodes_;
};

} // namespace falcon::autodiff
