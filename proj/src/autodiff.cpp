#include "tdlab/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace tdlab {

namespace {

std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

bool is_scalar_shape(const std::vector<int64_t>& s) { return s.empty(); }

}  // namespace

NodeId CompGraph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId CompGraph::constant(Tensor value) {
    Node n;
    n.op = OpKind::kConstant;
    n.shape = value.shape;
    n.payload = std::move(value);
    return push(std::move(n));
}

NodeId CompGraph::scalar_constant(double value) { return constant(Tensor::scalar(value)); }

NodeId CompGraph::param(const std::string& name, std::vector<int64_t> shape) {
    Node n;
    n.op = OpKind::kParam;
    n.name = name;
    n.shape = std::move(shape);
    return push(std::move(n));
}

NodeId CompGraph::input(const std::string& name, std::vector<int64_t> shape) {
    Node n;
    n.op = OpKind::kInput;
    n.name = name;
    n.shape = std::move(shape);
    return push(std::move(n));
}

NodeId CompGraph::raw_binary(OpKind op, NodeId a, NodeId b, std::vector<int64_t> shape) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.shape = std::move(shape);
    return push(std::move(n));
}

NodeId CompGraph::binary_elementwise(OpKind op, NodeId a, NodeId b) {
    const auto& sa = node(a).shape;
    const auto& sb = node(b).shape;
    if (sa == sb) return raw_binary(op, a, b, sa);
    if (is_scalar_shape(sa)) return raw_binary(op, broadcast(a, sb), b, sb);
    if (is_scalar_shape(sb)) return raw_binary(op, a, broadcast(b, sa), sa);
    if (sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0])
        return raw_binary(op, a, broadcast_rows(b, sa[0]), sa);
    if (sb.size() == 2 && sa.size() == 1 && sb[1] == sa[0])
        return raw_binary(op, broadcast_rows(a, sb[0]), b, sb);
    throw std::invalid_argument("elementwise shape mismatch " + shape_str(sa) + " vs " +
                                shape_str(sb));
}

NodeId CompGraph::add(NodeId a, NodeId b) { return binary_elementwise(OpKind::kAdd, a, b); }
NodeId CompGraph::sub(NodeId a, NodeId b) { return binary_elementwise(OpKind::kSub, a, b); }
NodeId CompGraph::mul(NodeId a, NodeId b) { return binary_elementwise(OpKind::kMul, a, b); }
NodeId CompGraph::div(NodeId a, NodeId b) { return binary_elementwise(OpKind::kDiv, a, b); }

NodeId CompGraph::neg(NodeId a) {
    Node n;
    n.op = OpKind::kNeg;
    n.a = a;
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::exp(NodeId a) {
    Node n;
    n.op = OpKind::kExp;
    n.a = a;
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::log(NodeId a) {
    Node n;
    n.op = OpKind::kLog;
    n.a = a;
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::tanh(NodeId a) {
    Node n;
    n.op = OpKind::kTanh;
    n.a = a;
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::leaky_relu(NodeId a, double slope) {
    Node n;
    n.op = OpKind::kLeakyRelu;
    n.a = a;
    n.slope = slope;
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::leaky_relu_mask(NodeId a, double slope) {
    Node n;
    n.op = OpKind::kLeakyReluMask;
    n.a = a;
    n.slope = slope;
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::softmax(NodeId a) {
    const auto& s = node(a).shape;
    check(s.size() == 1 || s.size() == 2, "softmax expects rank 1 or 2, got " + shape_str(s));
    Node n;
    n.op = OpKind::kSoftmax;
    n.a = a;
    n.shape = s;
    return push(std::move(n));
}

NodeId CompGraph::matmul(NodeId a, NodeId b) {
    const auto& sa = node(a).shape;
    const auto& sb = node(b).shape;
    check(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0],
          "matmul shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
    return raw_binary(OpKind::kMatmul, a, b, {sa[0], sb[1]});
}

NodeId CompGraph::transpose(NodeId a) {
    const auto& s = node(a).shape;
    check(s.size() == 2, "transpose expects rank 2");
    Node n;
    n.op = OpKind::kTranspose;
    n.a = a;
    n.shape = {s[1], s[0]};
    return push(std::move(n));
}

NodeId CompGraph::reshape(NodeId a, std::vector<int64_t> shape) {
    check(Tensor::numel_of(shape) == Tensor::numel_of(node(a).shape),
          "reshape element count mismatch");
    Node n;
    n.op = OpKind::kReshape;
    n.a = a;
    n.shape = std::move(shape);
    return push(std::move(n));
}

NodeId CompGraph::broadcast(NodeId scalar, std::vector<int64_t> shape) {
    check(node(scalar).shape.empty(), "broadcast expects a scalar source");
    Node n;
    n.op = OpKind::kBroadcast;
    n.a = scalar;
    n.shape = std::move(shape);
    return push(std::move(n));
}

NodeId CompGraph::broadcast_rows(NodeId vec, int64_t m) {
    const auto& s = node(vec).shape;
    check(s.size() == 1, "broadcast_rows expects rank 1");
    Node n;
    n.op = OpKind::kBroadcastRows;
    n.a = vec;
    n.iattr = m;
    n.shape = {m, s[0]};
    return push(std::move(n));
}

NodeId CompGraph::reduce_sum(NodeId a) {
    Node n;
    n.op = OpKind::kReduceSum;
    n.a = a;
    return push(std::move(n));
}

NodeId CompGraph::reduce_sum_rows(NodeId a) {
    const auto& s = node(a).shape;
    check(s.size() == 2, "reduce_sum_rows expects rank 2");
    Node n;
    n.op = OpKind::kReduceSumRows;
    n.a = a;
    n.shape = {s[1]};
    return push(std::move(n));
}

NodeId CompGraph::reduce_mean(NodeId a) {
    const int64_t n = Tensor::numel_of(node(a).shape);
    check(n > 0, "reduce_mean over empty tensor");
    return mul(reduce_sum(a), scalar_constant(1.0 / static_cast<double>(n)));
}

NodeId CompGraph::row_sums(NodeId a) { return reduce_sum_rows(transpose(a)); }

NodeId CompGraph::broadcast_cols(NodeId vec, int64_t n) {
    return transpose(broadcast_rows(vec, n));
}

NodeId CompGraph::reduce_max(NodeId vec) {
    check(node(vec).shape.size() == 1, "reduce_max expects rank 1");
    Node n;
    n.op = OpKind::kReduceMax;
    n.a = vec;
    return push(std::move(n));
}

NodeId CompGraph::argmax_onehot(NodeId vec) {
    const auto& s = node(vec).shape;
    check(s.size() == 1, "argmax_onehot expects rank 1");
    Node n;
    n.op = OpKind::kArgmaxOnehot;
    n.a = vec;
    n.shape = s;
    return push(std::move(n));
}

NodeId CompGraph::gather_rows(NodeId mat, std::vector<int64_t> idx) {
    const auto& s = node(mat).shape;
    check(s.size() == 2, "gather_rows expects rank 2");
    check(static_cast<int64_t>(idx.size()) == s[0], "gather_rows index count mismatch");
    for (int64_t i : idx) check(i >= 0 && i < s[1], "gather_rows index out of range");
    Node n;
    n.op = OpKind::kGatherRows;
    n.a = mat;
    n.indices = std::move(idx);
    n.shape = {s[0]};
    return push(std::move(n));
}

NodeId CompGraph::scatter_rows(NodeId vec, std::vector<int64_t> idx, int64_t n_cols) {
    const auto& s = node(vec).shape;
    check(s.size() == 1 && static_cast<int64_t>(idx.size()) == s[0],
          "scatter_rows shape mismatch");
    Node n;
    n.op = OpKind::kScatterRows;
    n.a = vec;
    n.indices = std::move(idx);
    n.iattr = n_cols;
    n.shape = {s[0], n_cols};
    return push(std::move(n));
}

NodeId CompGraph::pick(NodeId vec, int64_t index) {
    const auto& s = node(vec).shape;
    check(s.size() == 1 && index >= 0 && index < s[0], "pick index out of range");
    Node n;
    n.op = OpKind::kPick;
    n.a = vec;
    n.iattr = index;
    return push(std::move(n));
}

NodeId CompGraph::scatter_pick(NodeId scalar, int64_t index, int64_t n) {
    check(node(scalar).shape.empty(), "scatter_pick expects a scalar");
    Node nd;
    nd.op = OpKind::kScatterPick;
    nd.a = scalar;
    nd.iattr = index;
    nd.shape = {n};
    return push(std::move(nd));
}

namespace {

int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

NodeId CompGraph::conv2d(NodeId x, NodeId w, Conv2dSpec spec) {
    const auto& sx = node(x).shape;
    const auto& sw = node(w).shape;
    check(sx.size() == 4 && sw.size() == 4, "conv2d expects rank-4 image and filter");
    check(sx[1] == sw[1], "conv2d channel mismatch");
    check(spec.stride >= 1 && spec.pad >= 0, "bad conv2d spec");
    const int64_t ho = conv_out_dim(sx[2], sw[2], spec.stride, spec.pad);
    const int64_t wo = conv_out_dim(sx[3], sw[3], spec.stride, spec.pad);
    check(ho >= 1 && wo >= 1, "conv2d output would be empty");
    Node n;
    n.op = OpKind::kConv2d;
    n.a = x;
    n.b = w;
    n.conv = spec;
    n.shape = {sx[0], sw[0], ho, wo};
    return push(std::move(n));
}

NodeId CompGraph::conv2d_dx(NodeId g, NodeId w, Conv2dSpec spec, std::vector<int64_t> x_shape) {
    Node n;
    n.op = OpKind::kConv2dDx;
    n.a = g;
    n.b = w;
    n.conv = spec;
    n.shape = std::move(x_shape);
    return push(std::move(n));
}

NodeId CompGraph::conv2d_dw(NodeId x, NodeId g, Conv2dSpec spec, std::vector<int64_t> w_shape) {
    Node n;
    n.op = OpKind::kConv2dDw;
    n.a = x;
    n.b = g;
    n.conv = spec;
    n.shape = std::move(w_shape);
    return push(std::move(n));
}

NodeId CompGraph::square(NodeId a) { return mul(a, a); }

NodeId CompGraph::squared_error(NodeId a, NodeId b) { return square(sub(a, b)); }

NodeId CompGraph::cross_entropy(NodeId logits, std::vector<int64_t> labels) {
    const auto& s = node(logits).shape;
    check(s.size() == 2, "cross_entropy expects [batch, classes] logits");
    const NodeId logp = log(softmax(logits));
    const NodeId picked = gather_rows(logp, std::move(labels));
    return neg(reduce_mean(picked));
}

std::vector<NodeId> CompGraph::param_nodes() const {
    std::vector<NodeId> out;
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].op == OpKind::kParam) out.push_back(static_cast<NodeId>(i));
    return out;
}

std::vector<NodeId> CompGraph::input_nodes() const {
    std::vector<NodeId> out;
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].op == OpKind::kInput) out.push_back(static_cast<NodeId>(i));
    return out;
}

std::vector<NodeId> CompGraph::backward(NodeId out, const std::vector<NodeId>& leaves) {
    check(out >= 0 && out < size(), "backward: node out of range");
    check(node(out).shape.empty(), "backward requires a scalar output node");

    const int32_t frontier = static_cast<int32_t>(nodes_.size());
    std::vector<NodeId> adj(static_cast<size_t>(frontier), -1);
    adj[static_cast<size_t>(out)] = scalar_constant(1.0);

    auto accum = [&](NodeId target, NodeId contrib) {
        NodeId& slot = adj[static_cast<size_t>(target)];
        slot = (slot < 0) ? contrib : add(slot, contrib);
    };

    for (NodeId id = out; id >= 0; --id) {
        const NodeId g = adj[static_cast<size_t>(id)];
        if (g < 0) continue;
        // copy: push() may reallocate nodes_
        const Node n = nodes_[static_cast<size_t>(id)];
        switch (n.op) {
            case OpKind::kConstant:
            case OpKind::kParam:
            case OpKind::kInput:
            case OpKind::kLeakyReluMask:
            case OpKind::kArgmaxOnehot:
                break;  // leaves, or piecewise-constant values with zero derivative a.e.
            case OpKind::kAdd:
                accum(n.a, g);
                accum(n.b, g);
                break;
            case OpKind::kSub:
                accum(n.a, g);
                accum(n.b, neg(g));
                break;
            case OpKind::kMul:
                accum(n.a, mul(g, n.b));
                accum(n.b, mul(g, n.a));
                break;
            case OpKind::kDiv:
                accum(n.a, div(g, n.b));
                accum(n.b, neg(div(mul(g, id), n.b)));
                break;
            case OpKind::kNeg:
                accum(n.a, neg(g));
                break;
            case OpKind::kExp:
                accum(n.a, mul(g, id));
                break;
            case OpKind::kLog:
                accum(n.a, div(g, n.a));
                break;
            case OpKind::kTanh: {
                const NodeId ones = constant(Tensor::full(n.shape, 1.0));
                accum(n.a, mul(g, sub(ones, mul(id, id))));
                break;
            }
            case OpKind::kLeakyRelu:
                accum(n.a, mul(g, leaky_relu_mask(n.a, n.slope)));
                break;
            case OpKind::kSoftmax: {
                // dx = y * (g - rowwise_sum(g * y))
                if (n.shape.size() == 1) {
                    const NodeId s = reduce_sum(mul(g, id));
                    accum(n.a, mul(id, sub(g, broadcast(s, n.shape))));
                } else {
                    const NodeId s = row_sums(mul(g, id));
                    accum(n.a, mul(id, sub(g, broadcast_cols(s, n.shape[1]))));
                }
                break;
            }
            case OpKind::kMatmul:
                accum(n.a, matmul(g, transpose(n.b)));
                accum(n.b, matmul(transpose(n.a), g));
                break;
            case OpKind::kTranspose:
                accum(n.a, transpose(g));
                break;
            case OpKind::kReshape:
                accum(n.a, reshape(g, node(n.a).shape));
                break;
            case OpKind::kBroadcast:
                accum(n.a, reduce_sum(g));
                break;
            case OpKind::kBroadcastRows:
                accum(n.a, reduce_sum_rows(g));
                break;
            case OpKind::kReduceSum:
                accum(n.a, broadcast(g, node(n.a).shape));
                break;
            case OpKind::kReduceSumRows:
                accum(n.a, broadcast_rows(g, node(n.a).shape[0]));
                break;
            case OpKind::kReduceMax:
                accum(n.a, mul(argmax_onehot(n.a), broadcast(g, node(n.a).shape)));
                break;
            case OpKind::kGatherRows:
                accum(n.a, scatter_rows(g, n.indices, node(n.a).shape[1]));
                break;
            case OpKind::kScatterRows:
                accum(n.a, gather_rows(g, n.indices));
                break;
            case OpKind::kPick:
                accum(n.a, scatter_pick(g, n.iattr, node(n.a).shape[0]));
                break;
            case OpKind::kScatterPick:
                accum(n.a, pick(g, n.iattr));
                break;
            case OpKind::kConv2d:
                accum(n.a, conv2d_dx(g, n.b, n.conv, node(n.a).shape));
                accum(n.b, conv2d_dw(n.a, g, n.conv, node(n.b).shape));
                break;
            case OpKind::kConv2dDx:
                // value = L_w^T(a) with inputs (a = upstream adjoint, b = filter)
                accum(n.a, conv2d(g, n.b, n.conv));
                accum(n.b, conv2d_dw(g, n.a, n.conv, node(n.b).shape));
                break;
            case OpKind::kConv2dDw:
                // value = dL/dw with inputs (a = image, b = upstream adjoint)
                accum(n.a, conv2d_dx(n.b, g, n.conv, node(n.a).shape));
                accum(n.b, conv2d(n.a, g, n.conv));
                break;
        }
    }

    std::vector<NodeId> result;
    result.reserve(leaves.size());
    for (NodeId leaf : leaves) {
        check(leaf >= 0 && leaf < frontier, "backward: leaf out of range");
        const NodeId a = adj[static_cast<size_t>(leaf)];
        result.push_back(a >= 0 ? a : constant(Tensor::zeros(node(leaf).shape)));
    }
    return result;
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

struct Evaluator {
    const CompGraph& g;
    const ParamVector& params;
    const Inputs& inputs;
    std::vector<Tensor> vals;
    std::vector<bool> needed;

    Evaluator(const CompGraph& graph, const ParamVector& p, const Inputs& in)
        : g(graph), params(p), inputs(in) {}

    void mark(std::span<const NodeId> outs) {
        needed.assign(static_cast<size_t>(g.size()), false);
        std::vector<NodeId> stack(outs.begin(), outs.end());
        while (!stack.empty()) {
            const NodeId id = stack.back();
            stack.pop_back();
            check(id >= 0 && id < g.size(), "evaluate: node out of range");
            if (needed[static_cast<size_t>(id)]) continue;
            needed[static_cast<size_t>(id)] = true;
            const Node& n = g.node(id);
            if (n.a >= 0) stack.push_back(n.a);
            if (n.b >= 0) stack.push_back(n.b);
        }
    }

    const Tensor& val(NodeId id) const { return vals[static_cast<size_t>(id)]; }

    void run(std::span<const NodeId> outs) {
        mark(outs);
        vals.assign(static_cast<size_t>(g.size()), Tensor{});
        for (NodeId id = 0; id < g.size(); ++id) {
            if (!needed[static_cast<size_t>(id)]) continue;
            eval_node(id);
        }
    }

    void eval_node(NodeId id) {
        const Node& n = g.node(id);
        Tensor& out = vals[static_cast<size_t>(id)];
        switch (n.op) {
            case OpKind::kConstant:
                out = n.payload;
                break;
            case OpKind::kParam: {
                const ParamSegment* seg = params.layout.find(n.name);
                check(seg != nullptr, "unbound parameter '" + n.name + "' at node " +
                                          std::to_string(id));
                check(seg->shape == n.shape, "parameter shape mismatch for '" + n.name +
                                                 "' at node " + std::to_string(id));
                out = params.segment_tensor(*seg);
                break;
            }
            case OpKind::kInput: {
                auto it = inputs.find(n.name);
                check(it != inputs.end(),
                      "unbound input '" + n.name + "' at node " + std::to_string(id));
                check(it->second.shape == n.shape &&
                          it->second.numel() == Tensor::numel_of(n.shape),
                      "input shape mismatch for '" + n.name + "' at node " +
                          std::to_string(id));
                out = it->second;
                break;
            }
            case OpKind::kAdd:
            case OpKind::kSub:
            case OpKind::kMul:
            case OpKind::kDiv: {
                const Tensor& a = val(n.a);
                const Tensor& b = val(n.b);
                out = Tensor::zeros(n.shape);
                const int64_t m = out.numel();
                switch (n.op) {
                    case OpKind::kAdd:
                        for (int64_t i = 0; i < m; ++i) out.at(i) = a.at(i) + b.at(i);
                        break;
                    case OpKind::kSub:
                        for (int64_t i = 0; i < m; ++i) out.at(i) = a.at(i) - b.at(i);
                        break;
                    case OpKind::kMul:
                        for (int64_t i = 0; i < m; ++i) out.at(i) = a.at(i) * b.at(i);
                        break;
                    default:
                        for (int64_t i = 0; i < m; ++i) out.at(i) = a.at(i) / b.at(i);
                        break;
                }
                break;
            }
            case OpKind::kNeg: {
                out = val(n.a);
                for (auto& v : out.data) v = -v;
                break;
            }
            case OpKind::kExp: {
                out = val(n.a);
                for (auto& v : out.data) v = std::exp(v);
                break;
            }
            case OpKind::kLog: {
                out = val(n.a);
                for (auto& v : out.data) v = std::log(v);
                break;
            }
            case OpKind::kTanh: {
                out = val(n.a);
                for (auto& v : out.data) v = std::tanh(v);
                break;
            }
            case OpKind::kLeakyRelu: {
                out = val(n.a);
                for (auto& v : out.data) v = v > 0.0 ? v : n.slope * v;
                break;
            }
            case OpKind::kLeakyReluMask: {
                out = val(n.a);
                for (auto& v : out.data) v = v > 0.0 ? 1.0 : n.slope;
                break;
            }
            case OpKind::kSoftmax: {
                const Tensor& a = val(n.a);
                out = Tensor::zeros(n.shape);
                const int64_t rows = n.shape.size() == 2 ? n.shape[0] : 1;
                const int64_t cols = n.shape.size() == 2 ? n.shape[1] : n.shape[0];
                for (int64_t r = 0; r < rows; ++r) {
                    const int64_t base = r * cols;
                    double mx = a.at(base);
                    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, a.at(base + c));
                    double z = 0.0;
                    for (int64_t c = 0; c < cols; ++c) {
                        const double e = std::exp(a.at(base + c) - mx);
                        out.at(base + c) = e;
                        z += e;
                    }
                    for (int64_t c = 0; c < cols; ++c) out.at(base + c) /= z;
                }
                break;
            }
            case OpKind::kMatmul: {
                const Tensor& a = val(n.a);
                const Tensor& b = val(n.b);
                const int64_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
                out = Tensor::zeros(n.shape);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < k; ++j) {
                        const double aij = a.at(i, j);
                        if (aij == 0.0) continue;
                        for (int64_t c = 0; c < p; ++c) out.at(i, c) += aij * b.at(j, c);
                    }
                break;
            }
            case OpKind::kTranspose: {
                const Tensor& a = val(n.a);
                out = Tensor::zeros(n.shape);
                for (int64_t i = 0; i < a.shape[0]; ++i)
                    for (int64_t j = 0; j < a.shape[1]; ++j) out.at(j, i) = a.at(i, j);
                break;
            }
            case OpKind::kReshape: {
                out = val(n.a);
                out.shape = n.shape;
                break;
            }
            case OpKind::kBroadcast: {
                out = Tensor::full(n.shape, val(n.a).data[0]);
                break;
            }
            case OpKind::kBroadcastRows: {
                const Tensor& a = val(n.a);
                out = Tensor::zeros(n.shape);
                for (int64_t r = 0; r < n.shape[0]; ++r)
                    for (int64_t c = 0; c < n.shape[1]; ++c) out.at(r, c) = a.at(c);
                break;
            }
            case OpKind::kReduceSum: {
                double s = 0.0;
                for (double v : val(n.a).data) s += v;
                out = Tensor::scalar(s);
                break;
            }
            case OpKind::kReduceSumRows: {
                const Tensor& a = val(n.a);
                out = Tensor::zeros(n.shape);
                for (int64_t r = 0; r < a.shape[0]; ++r)
                    for (int64_t c = 0; c < a.shape[1]; ++c) out.at(c) += a.at(r, c);
                break;
            }
            case OpKind::kReduceMax: {
                const Tensor& a = val(n.a);
                double mx = a.at(0);
                for (int64_t i = 1; i < a.numel(); ++i) mx = std::max(mx, a.at(i));
                out = Tensor::scalar(mx);
                break;
            }
            case OpKind::kArgmaxOnehot: {
                const Tensor& a = val(n.a);
                int64_t arg = 0;
                for (int64_t i = 1; i < a.numel(); ++i)
                    if (a.at(i) > a.at(arg)) arg = i;
                out = Tensor::zeros(n.shape);
                out.at(arg) = 1.0;
                break;
            }
            case OpKind::kGatherRows: {
                const Tensor& a = val(n.a);
                out = Tensor::zeros(n.shape);
                for (int64_t r = 0; r < n.shape[0]; ++r)
                    out.at(r) = a.at(r, n.indices[static_cast<size_t>(r)]);
                break;
            }
            case OpKind::kScatterRows: {
                const Tensor& a = val(n.a);
                out = Tensor::zeros(n.shape);
                for (int64_t r = 0; r < n.shape[0]; ++r)
                    out.at(r, n.indices[static_cast<size_t>(r)]) = a.at(r);
                break;
            }
            case OpKind::kPick: {
                out = Tensor::scalar(val(n.a).at(n.iattr));
                break;
            }
            case OpKind::kScatterPick: {
                out = Tensor::zeros(n.shape);
                out.at(n.iattr) = val(n.a).data[0];
                break;
            }
            case OpKind::kConv2d: {
                const Tensor& x = val(n.a);
                const Tensor& w = val(n.b);
                out = Tensor::zeros(n.shape);
                conv_forward(x, w, out, n.conv);
                break;
            }
            case OpKind::kConv2dDx: {
                const Tensor& gi = val(n.a);
                const Tensor& w = val(n.b);
                out = Tensor::zeros(n.shape);
                conv_dx(gi, w, out, n.conv);
                break;
            }
            case OpKind::kConv2dDw: {
                const Tensor& x = val(n.a);
                const Tensor& gi = val(n.b);
                out = Tensor::zeros(n.shape);
                conv_dw(x, gi, out, n.conv);
                break;
            }
        }
    }

    static void conv_forward(const Tensor& x, const Tensor& w, Tensor& y, Conv2dSpec sp) {
        const int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        const int64_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3];
        const int64_t HO = y.shape[2], WO = y.shape[3];
        for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < O; ++o)
                for (int64_t oi = 0; oi < HO; ++oi)
                    for (int64_t oj = 0; oj < WO; ++oj) {
                        double s = 0.0;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t ki = 0; ki < KH; ++ki) {
                                const int64_t i = oi * sp.stride - sp.pad + ki;
                                if (i < 0 || i >= H) continue;
                                for (int64_t kj = 0; kj < KW; ++kj) {
                                    const int64_t j = oj * sp.stride - sp.pad + kj;
                                    if (j < 0 || j >= W) continue;
                                    s += x.at4(b, c, i, j) * w.at4(o, c, ki, kj);
                                }
                            }
                        y.at4(b, o, oi, oj) = s;
                    }
    }

    static void conv_dx(const Tensor& gy, const Tensor& w, Tensor& gx, Conv2dSpec sp) {
        const int64_t B = gx.shape[0], C = gx.shape[1], H = gx.shape[2], W = gx.shape[3];
        const int64_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3];
        const int64_t HO = gy.shape[2], WO = gy.shape[3];
        for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < O; ++o)
                for (int64_t oi = 0; oi < HO; ++oi)
                    for (int64_t oj = 0; oj < WO; ++oj) {
                        const double gv = gy.at4(b, o, oi, oj);
                        if (gv == 0.0) continue;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t ki = 0; ki < KH; ++ki) {
                                const int64_t i = oi * sp.stride - sp.pad + ki;
                                if (i < 0 || i >= H) continue;
                                for (int64_t kj = 0; kj < KW; ++kj) {
                                    const int64_t j = oj * sp.stride - sp.pad + kj;
                                    if (j < 0 || j >= W) continue;
                                    gx.at4(b, c, i, j) += gv * w.at4(o, c, ki, kj);
                                }
                            }
                    }
    }

    static void conv_dw(const Tensor& x, const Tensor& gy, Tensor& gw, Conv2dSpec sp) {
        const int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        const int64_t O = gw.shape[0], KH = gw.shape[2], KW = gw.shape[3];
        const int64_t HO = gy.shape[2], WO = gy.shape[3];
        for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < O; ++o)
                for (int64_t oi = 0; oi < HO; ++oi)
                    for (int64_t oj = 0; oj < WO; ++oj) {
                        const double gv = gy.at4(b, o, oi, oj);
                        if (gv == 0.0) continue;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t ki = 0; ki < KH; ++ki) {
                                const int64_t i = oi * sp.stride - sp.pad + ki;
                                if (i < 0 || i >= H) continue;
                                for (int64_t kj = 0; kj < KW; ++kj) {
                                    const int64_t j = oj * sp.stride - sp.pad + kj;
                                    if (j < 0 || j >= W) continue;
                                    gw.at4(o, c, ki, kj) += gv * x.at4(b, c, i, j);
                                }
                            }
                    }
    }
};

}  // namespace

std::vector<Tensor> evaluate_nodes(const CompGraph& g, std::span<const NodeId> outs,
                                   const ParamVector& params, const Inputs& inputs) {
    Evaluator ev(g, params, inputs);
    ev.run(outs);
    std::vector<Tensor> result;
    result.reserve(outs.size());
    for (NodeId id : outs) result.push_back(ev.vals[static_cast<size_t>(id)]);
    return result;
}

Tensor evaluate(const CompGraph& g, NodeId out, const ParamVector& params,
                const Inputs& inputs) {
    const NodeId ids[1] = {out};
    return evaluate_nodes(g, ids, params, inputs)[0];
}

namespace {

ParamVector pack_grads(const CompGraph& g, const std::vector<NodeId>& param_ids,
                       const std::vector<Tensor>& grads, const ParamVector& params) {
    ParamVector out = ParamVector::zeros_like(params.layout);
    for (size_t i = 0; i < param_ids.size(); ++i) {
        const ParamSegment* seg = params.layout.find(g.node(param_ids[i]).name);
        check(seg != nullptr, "gradient for parameter missing from layout");
        out.set_segment(*seg, grads[i]);
    }
    return out;
}

}  // namespace

GradResult grad(const CompGraph& g, NodeId out, const ParamVector& params,
                const Inputs& inputs) {
    CompGraph work = g;
    const std::vector<NodeId> param_ids = work.param_nodes();
    const std::vector<NodeId> grad_ids = work.backward(out, param_ids);
    std::vector<NodeId> wanted = grad_ids;
    wanted.push_back(out);
    const std::vector<Tensor> vals = evaluate_nodes(work, wanted, params, inputs);

    GradResult r;
    r.value = vals.back().scalar_value();
    r.grad = pack_grads(work, param_ids,
                        std::vector<Tensor>(vals.begin(), vals.end() - 1), params);
    return r;
}

std::vector<GradResult> per_example_grads(const CompGraph& g, NodeId out,
                                          const ParamVector& params,
                                          const std::vector<Inputs>& batch) {
    check(!batch.empty(), "per_example_grads: empty batch");
    CompGraph work = g;
    const std::vector<NodeId> param_ids = work.param_nodes();
    const std::vector<NodeId> grad_ids = work.backward(out, param_ids);
    std::vector<NodeId> wanted = grad_ids;
    wanted.push_back(out);

    std::vector<GradResult> results;
    results.reserve(batch.size());
    for (const Inputs& in : batch) {
        const std::vector<Tensor> vals = evaluate_nodes(work, wanted, params, in);
        GradResult r;
        r.value = vals.back().scalar_value();
        r.grad = pack_grads(work, param_ids,
                            std::vector<Tensor>(vals.begin(), vals.end() - 1), params);
        results.push_back(std::move(r));
    }
    return results;
}

ParamVector hvp(const CompGraph& g, NodeId out, const ParamVector& params,
                const Inputs& inputs, const ParamVector& v) {
    check(params.layout == v.layout, "hvp: direction layout mismatch");
    CompGraph work = g;
    const std::vector<NodeId> param_ids = work.param_nodes();
    const std::vector<NodeId> grad_ids = work.backward(out, param_ids);

    // s = dot(grad, v); differentiating s once more yields H v
    NodeId s = work.scalar_constant(0.0);
    for (size_t i = 0; i < param_ids.size(); ++i) {
        const Node& pn = work.node(param_ids[i]);
        const ParamSegment* seg = v.layout.find(pn.name);
        check(seg != nullptr, "hvp: direction missing segment " + pn.name);
        const NodeId vi = work.constant(v.segment_tensor(*seg));
        s = work.add(s, work.reduce_sum(work.mul(grad_ids[i], vi)));
    }
    const std::vector<NodeId> h_ids = work.backward(s, param_ids);
    const std::vector<Tensor> vals = evaluate_nodes(work, h_ids, params, inputs);
    return pack_grads(work, param_ids, vals, params);
}

ParamVector finite_diff_grad(const CompGraph& g, NodeId out, const ParamVector& params,
                             const Inputs& inputs, double h) {
    check(h > 0.0, "finite_diff_grad requires h > 0");
    ParamVector result = ParamVector::zeros_like(params.layout);
    ParamVector work = params;
    for (size_t i = 0; i < params.data.size(); ++i) {
        const double saved = work.data[i];
        work.data[i] = saved + h;
        const double up = evaluate(g, out, work, inputs).scalar_value();
        work.data[i] = saved - h;
        const double down = evaluate(g, out, work, inputs).scalar_value();
        work.data[i] = saved;
        result.data[i] = (up - down) / (2.0 * h);
    }
    return result;
}

}  // namespace tdlab
