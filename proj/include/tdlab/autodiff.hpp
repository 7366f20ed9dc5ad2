#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tdlab/tensor.hpp"

namespace tdlab {

using NodeId = int32_t;

enum class OpKind : uint8_t {
    kConstant,
    kParam,
    kInput,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kNeg,
    kExp,
    kLog,
    kTanh,
    kLeakyRelu,
    kLeakyReluMask,  // piecewise-constant local slope; derivative zero a.e.
    kSoftmax,
    kMatmul,
    kTranspose,
    kReshape,
    kBroadcast,       // scalar -> shape
    kBroadcastRows,   // [n] -> [m,n]
    kReduceSum,       // -> scalar
    kReduceSumRows,   // [m,n] -> [n]
    kReduceMax,       // [n] -> scalar, first maximum on ties
    kArgmaxOnehot,    // [n] -> [n] one-hot at first maximum; derivative zero a.e.
    kGatherRows,      // [m,n] -> [m] picking column idx[i] in row i
    kScatterRows,     // [m] -> [m,n] adjoint of gather
    kPick,            // [n] -> scalar at fixed index
    kScatterPick,     // scalar -> [n] at fixed index
    kConv2d,          // x [1,C,H,W] * w [O,C,kh,kw]
    kConv2dDx,        // adjoint w.r.t. the conv image
    kConv2dDw,        // adjoint w.r.t. the conv filter
};

struct Conv2dSpec {
    int64_t stride = 1;
    int64_t pad = 0;
};

struct Node {
    OpKind op;
    NodeId a = -1;
    NodeId b = -1;
    std::vector<int64_t> shape;
    double slope = 0.0;               // kLeakyRelu / kLeakyReluMask
    int64_t iattr = 0;                // broadcast rows m / pick index / scatter width
    std::vector<int64_t> indices;     // gather/scatter row indices
    Conv2dSpec conv;
    std::string name;                 // kParam / kInput
    Tensor payload;                   // kConstant
};

// Append-only operation tape. Node inputs always precede the node, so index
// order is a valid topological order. backward() appends the adjoint
// computation to the same tape using the same op set, which is what makes a
// second differentiation pass (reverse-over-reverse) possible.
class CompGraph {
public:
    NodeId constant(Tensor value);
    NodeId scalar_constant(double value);
    NodeId param(const std::string& name, std::vector<int64_t> shape);
    NodeId input(const std::string& name, std::vector<int64_t> shape);

    // elementwise; scalar and row-vector operands are broadcast-normalized here
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId div(NodeId a, NodeId b);
    NodeId neg(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId tanh(NodeId a);
    NodeId leaky_relu(NodeId a, double slope = 0.01);
    NodeId softmax(NodeId a);  // rank 1, or rank 2 row-wise

    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId reshape(NodeId a, std::vector<int64_t> shape);

    NodeId broadcast(NodeId scalar, std::vector<int64_t> shape);
    NodeId broadcast_rows(NodeId vec, int64_t m);
    NodeId reduce_sum(NodeId a);
    NodeId reduce_sum_rows(NodeId a);
    NodeId reduce_mean(NodeId a);                  // composite
    NodeId row_sums(NodeId a);                     // composite: [m,n] -> [m]
    NodeId broadcast_cols(NodeId vec, int64_t n);  // composite: [m] -> [m,n]
    NodeId reduce_max(NodeId vec);
    NodeId argmax_onehot(NodeId vec);

    NodeId gather_rows(NodeId mat, std::vector<int64_t> idx);
    NodeId pick(NodeId vec, int64_t index);
    NodeId conv2d(NodeId x, NodeId w, Conv2dSpec spec);

    NodeId square(NodeId a);                    // composite
    NodeId squared_error(NodeId a, NodeId b);   // composite, elementwise (a-b)^2
    // composite: mean over batch of -log softmax(logits)[i, label_i]
    NodeId cross_entropy(NodeId logits, std::vector<int64_t> labels);

    // Appends the adjoint computation of a scalar node and returns, per leaf,
    // the node holding d(out)/d(leaf). Leaves without influence map to zeros.
    std::vector<NodeId> backward(NodeId out, const std::vector<NodeId>& leaves);

    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }
    std::vector<NodeId> param_nodes() const;
    std::vector<NodeId> input_nodes() const;

private:
    NodeId push(Node n);
    NodeId binary_elementwise(OpKind op, NodeId a, NodeId b);
    NodeId raw_binary(OpKind op, NodeId a, NodeId b, std::vector<int64_t> shape);
    NodeId conv2d_dx(NodeId g, NodeId w, Conv2dSpec spec, std::vector<int64_t> x_shape);
    NodeId conv2d_dw(NodeId x, NodeId g, Conv2dSpec spec, std::vector<int64_t> w_shape);
    NodeId scatter_rows(NodeId vec, std::vector<int64_t> idx, int64_t n_cols);
    NodeId scatter_pick(NodeId scalar, int64_t index, int64_t n);
    NodeId leaky_relu_mask(NodeId a, double slope);

    std::vector<Node> nodes_;
};

using Inputs = std::map<std::string, Tensor>;

// Evaluates the requested nodes; pure function of (graph, params, inputs).
std::vector<Tensor> evaluate_nodes(const CompGraph& g, std::span<const NodeId> outs,
                                   const ParamVector& params, const Inputs& inputs);
Tensor evaluate(const CompGraph& g, NodeId out, const ParamVector& params,
                const Inputs& inputs = {});

struct GradResult {
    double value = 0.0;
    ParamVector grad;
};

// Reverse-mode gradient of a scalar node with respect to all graph parameters.
GradResult grad(const CompGraph& g, NodeId out, const ParamVector& params,
                const Inputs& inputs = {});

// One GradResult per example; plain per-sample backward loop.
std::vector<GradResult> per_example_grads(const CompGraph& g, NodeId out,
                                          const ParamVector& params,
                                          const std::vector<Inputs>& batch);

// Hessian-vector product H v of a scalar node, computed by differentiating
// dot(grad, v) a second time through the adjoint tape.
ParamVector hvp(const CompGraph& g, NodeId out, const ParamVector& params,
                const Inputs& inputs, const ParamVector& v);

// hvp applied to a scalarized model-output graph; the Hessian is then the
// Hessian of the function itself rather than of a loss.
inline ParamVector function_hvp(const CompGraph& g, NodeId out, const ParamVector& params,
                                const Inputs& inputs, const ParamVector& v) {
    return hvp(g, out, params, inputs, v);
}

// Central-difference gradient oracle, O(h^2).
ParamVector finite_diff_grad(const CompGraph& g, NodeId out, const ParamVector& params,
                             const Inputs& inputs, double h);

}  // namespace tdlab
