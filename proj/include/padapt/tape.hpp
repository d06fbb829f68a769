#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "padapt/tensor.hpp"

namespace padapt {

enum class OpKind {
    kLeaf,
    kAdd,
    kMul,  // elementwise
    kConv2d,
    kRelu,
    kAffine,  // x[B,I] * W[O,I]^T + b[O]
    kAvgPool2,
    kFlatten,
    kSoftmax,
    kLog,
    kLogSoftmax,
    kSoftCrossEntropy,
    kAddPatch,  // broadcast-add a [C,h,w] patch onto [B,C,H,W] at an anchor
    kSum,
};

enum class ConvPad { kValid, kSame };

const char* op_name(OpKind kind);

struct OpAttrs {
    ConvPad pad = ConvPad::kValid;  // kConv2d
    int row = 0;                    // kAddPatch anchor
    int col = 0;
};

using NodeId = int;

// Gradients of a scalar loss with respect to the armed leaves.
class GradientMap {
  public:
    bool contains(NodeId id) const { return grads_.count(id) > 0; }
    const Tensor& at(NodeId id) const;
    void insert(NodeId id, Tensor grad) { grads_.emplace(id, std::move(grad)); }
    std::size_t size() const { return grads_.size(); }

  private:
    std::unordered_map<NodeId, Tensor> grads_;
};

// Append-only reverse-mode tape. A tape lives for one forward pass; the
// adaptation loop rebuilds it every step. backward() walks nodes in strict
// reverse creation order.
class Tape {
  public:
    NodeId leaf(Tensor value, bool requires_grad = false);

    // Generic dispatcher; validates shapes and records the node.
    NodeId apply(OpKind kind, const std::vector<NodeId>& inputs, const OpAttrs& attrs = {});

    NodeId add(NodeId a, NodeId b) { return apply(OpKind::kAdd, {a, b}); }
    NodeId mul(NodeId a, NodeId b) { return apply(OpKind::kMul, {a, b}); }
    NodeId conv2d(NodeId x, NodeId w, NodeId bias, ConvPad pad);
    NodeId relu(NodeId x) { return apply(OpKind::kRelu, {x}); }
    NodeId affine(NodeId x, NodeId w, NodeId bias) { return apply(OpKind::kAffine, {x, w, bias}); }
    NodeId avgpool2(NodeId x) { return apply(OpKind::kAvgPool2, {x}); }
    NodeId flatten(NodeId x) { return apply(OpKind::kFlatten, {x}); }
    NodeId softmax(NodeId x) { return apply(OpKind::kSoftmax, {x}); }
    NodeId log(NodeId x) { return apply(OpKind::kLog, {x}); }
    NodeId log_softmax(NodeId x) { return apply(OpKind::kLogSoftmax, {x}); }
    NodeId soft_cross_entropy(NodeId teacher_probs, NodeId student_log_probs) {
        return apply(OpKind::kSoftCrossEntropy, {teacher_probs, student_log_probs});
    }
    NodeId add_patch(NodeId images, NodeId patch, int row, int col);
    NodeId sum(NodeId x) { return apply(OpKind::kSum, {x}); }

    const Tensor& value(NodeId id) const;
    bool requires_grad(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }

    // Reverse-mode gradients of a scalar loss node for every armed leaf.
    GradientMap backward(NodeId loss) const;

  private:
    struct Node {
        OpKind kind;
        std::vector<NodeId> inputs;
        OpAttrs attrs;
        Tensor value;
        bool requires_grad = false;  // leaves only
        bool needs_grad = false;     // reachable from an armed leaf
    };

    const Node& node(NodeId id) const;
    std::vector<Node> nodes_;
};

}  // namespace padapt
