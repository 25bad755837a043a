#pragma once

#include <cstddef>
#include <unordered_map>
#include <vector>

#include "sled/tensor.hpp"

namespace sled {

enum class OpKind {
    leaf,
    add,
    mul,
    matmul,
    reduce_sum,
    reduce_mean,
    softmax,
    layernorm,
    gelu,
    embed_lookup,
    concat,
    slice,
    scatter_rows,
    scale,
};

const char* op_name(OpKind kind);

/// Single-use reverse-mode tape over dense tensors.
///
/// Every op appends a topologically ordered node recording its kind, input
/// ids and whatever forward values its gradient rule needs. Outputs are
/// validated finite as they are produced. backward() may be called exactly
/// once per graph; graphs are rebuilt per training step.
class Graph {
public:
    using NodeId = int;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    NodeId leaf(Tensor value, bool requires_grad = false);

    /// Elementwise sum; also accepts a rank-1 right operand matching the
    /// left operand's columns (row broadcast).
    NodeId add(NodeId a, NodeId b);

    /// Elementwise product, same shapes only.
    NodeId mul(NodeId a, NodeId b);

    /// a[m x k] * b[k x n], or a[m x k] * b[n x k]^T when transpose_b.
    NodeId matmul(NodeId a, NodeId b, bool transpose_b = false);

    NodeId reduce_sum(NodeId a);
    NodeId reduce_mean(NodeId a);

    /// Row-wise softmax over the last axis (rank 1 treated as one row).
    NodeId softmax(NodeId a);

    /// Row-wise layer normalization, eps = 1e-5, no affine parameters.
    NodeId layernorm(NodeId a);

    NodeId gelu(NodeId a);

    /// Rows of `table` gathered by index; gradients accumulate per row
    /// (repeated ids sum).
    NodeId embed_lookup(NodeId table, const std::vector<int>& ids);

    NodeId concat_rows(NodeId a, NodeId b);
    NodeId concat_cols(NodeId a, NodeId b);

    /// Contiguous sub-range along rows/columns, end exclusive.
    NodeId slice_rows(NodeId a, std::size_t r0, std::size_t r1);
    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1);

    /// Rows of `base` at `indices` replaced by the rows of `updates`;
    /// indices must be distinct and in range. Gradients route to the
    /// non-selected rows of `base` and to `updates`.
    NodeId scatter_rows(NodeId base, NodeId updates,
                        const std::vector<std::size_t>& indices);

    NodeId scale(NodeId a, double c);

    const Tensor& value(NodeId id) const;
    OpKind kind(NodeId id) const;
    bool requires_grad(NodeId id) const;
    std::size_t node_count() const { return nodes_.size(); }

    /// Reverse pass from a scalar loss. Returns the gradient of the loss
    /// with respect to every requires_grad leaf, keyed by node id. A graph
    /// can run backward exactly once.
    std::unordered_map<NodeId, Tensor> backward(NodeId loss);

    /// Gradient buffer of any node after backward (zeros if untouched).
    const Tensor& grad(NodeId id) const;

    static constexpr double layernorm_eps = 1e-5;

private:
    struct Node {
        OpKind kind = OpKind::leaf;
        NodeId in0 = -1, in1 = -1;
        Tensor value;
        bool requires_grad = false;
        // op attributes / saved forward values
        double scalar = 0.0;            // scale factor
        std::size_t a0 = 0, a1 = 0;     // slice range / concat split / axis
        bool flag = false;              // matmul transpose_b, concat axis
        std::vector<int> ids;           // embed_lookup
        std::vector<std::size_t> indices; // scatter_rows
        Tensor saved;                   // layernorm inv_std
    };

    NodeId push(Node node, const char* what);
    const Node& node(NodeId id) const;
    void check_id(NodeId id) const;
    void backprop_node(NodeId id);
    Tensor& grad_buffer(NodeId id);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool backward_done_ = false;
};

} // namespace sled
