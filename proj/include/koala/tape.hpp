#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "koala/tensor.hpp"

namespace koala {

using NodeId = int;

// Reverse-mode tape. Primitives append nodes; backward() walks the recorded
// nodes once in reverse creation order (a valid topological order) and keeps
// gradients only for leaves marked retain (parameter leaves).
class Tape {
public:
    NodeId constant(Tensor value, const char* op = "constant");
    NodeId leaf(Tensor value, bool retain_grad);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    std::size_t size() const { return nodes_.size(); }
    void clear();

    // loss must be a scalar node (numel 1).
    void backward(NodeId loss);
    bool has_grad(NodeId id) const;
    const Tensor& grad(NodeId id) const;

    using BackFn = std::function<void(Tape&, NodeId)>;
    NodeId push(Tensor value, std::vector<NodeId> parents, BackFn back, const char* op);
    void accumulate(NodeId id, const Tensor& g);
    const Tensor& out_grad(NodeId id) const { return grads_[static_cast<std::size_t>(id)]; }
    const char* op_name(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].op; }

private:
    struct Node {
        Tensor value;
        std::vector<NodeId> parents;
        BackFn back;
        bool retain = false;
        const char* op = "";
    };
    // Deque keeps value() references stable while further nodes are pushed.
    std::deque<Node> nodes_;
    std::vector<Tensor> grads_;
    bool ran_backward_ = false;
};

// ---- primitives -----------------------------------------------------------

NodeId add(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId scale(Tape& t, NodeId a, double c);
// out = a * s where s is a one-element node (the learnable scalar w).
NodeId scale_by(Tape& t, NodeId a, NodeId s);
NodeId add_bias(Tape& t, NodeId x, NodeId b);
NodeId matmul(Tape& t, NodeId a, NodeId b);
// out = a . b^T
NodeId matmul_nt(Tape& t, NodeId a, NodeId b);
NodeId softmax_rows(Tape& t, NodeId x);
NodeId log_softmax_rows(Tape& t, NodeId x);
NodeId layer_norm(Tape& t, NodeId x, NodeId gain, NodeId bias);
NodeId gelu(Tape& t, NodeId x);
NodeId concat_rows(Tape& t, const std::vector<NodeId>& parts);
NodeId slice_rows(Tape& t, NodeId x, std::size_t r0, std::size_t r1);
NodeId concat_cols(Tape& t, const std::vector<NodeId>& parts);
NodeId slice_cols(Tape& t, NodeId x, std::size_t c0, std::size_t c1);
NodeId gather_rows(Tape& t, NodeId table, std::vector<std::size_t> indices);
NodeId sum_all(Tape& t, NodeId x);

// -sum over (row, column) picks of a log-probability matrix.
struct TokenPick {
    std::size_t row;
    std::size_t token;
};
NodeId nll_picks(Tape& t, NodeId logp, std::vector<TokenPick> picks);

// ---- composites ------------------------------------------------------------

// x[n x a] . W[a x b] + bias[b]
NodeId affine(Tape& t, NodeId x, NodeId w, NodeId b);

struct AttentionResult {
    NodeId out;
    std::vector<NodeId> head_weights; // softmax nodes, one per head, [nq x nk]
};

// Multi-head scaled dot-product attention: per head softmax(q.k^T/sqrt(d/h)).v,
// heads concatenated. The output projection is the enclosing block's affine.
AttentionResult cross_attention(Tape& t, NodeId q, NodeId k, NodeId v, std::size_t heads,
                                bool causal = false);

// Mean over same-shape nodes.
NodeId mean_of(Tape& t, const std::vector<NodeId>& parts);

} // namespace koala
