#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdlab/autodiff.hpp"
#include "tdlab/tensor.hpp"

namespace tdlab {

// Network architecture description. The conv layout follows the fixed schema
// 5x5 stride 2, 3x3, 3x3, n_L padded 3x3 layers, then two dense layers.
struct ModelSpec {
    enum class Kind { mlp, conv };
    enum class Head { value, classifier };

    Kind kind = Kind::mlp;
    Head head = Head::value;
    std::vector<int64_t> input_shape;  // mlp: {d}; conv: {C, H, W}
    int64_t hidden = 32;               // n_h
    int64_t extra_layers = 0;          // n_L
    int64_t outputs = 1;               // n_o
    double slope = 0.01;

    void validate() const;
    int64_t input_numel() const { return Tensor::numel_of(input_shape); }
};

struct ValueModel {
    ModelSpec spec;
    ParamVector params;
    CompGraph graph;      // canonical single-example forward graph, input "x"
    NodeId graph_output = -1;  // [1, n_o]
};

ParamLayout layout_for(const ModelSpec& spec);

// Glorot-uniform weights, zero biases, deterministic in the seed.
ValueModel init(const ModelSpec& spec, uint64_t seed);

// Forward graph over a batch; input name "x" with shape [m, d] (mlp) or
// [1, C, H, W] (conv forward graphs are built one example at a time).
CompGraph build_forward_graph(const ModelSpec& spec, int64_t batch, NodeId* out);

// Batch of raw scores, shape [m, n_o]; no softmax applied.
Tensor forward(const ValueModel& model, const Tensor& batch);
Tensor forward(const ModelSpec& spec, const ParamVector& params, const Tensor& batch);

// Scalarized output used by function interference: classifier heads take the
// softmax probability of the argmax class, value heads the maximal output (or
// the single output when n_o == 1). Argmax ties resolve to the lowest index.
CompGraph scalar_output_graph(const ModelSpec& spec, NodeId* out);
double scalar_output(const ValueModel& model, const Tensor& single_input);

// Q(s, a) for a fixed action as a scalar graph (the prediction a TD or
// distillation loss regresses); action < 0 selects the max output.
CompGraph prediction_graph(const ModelSpec& spec, int64_t action, NodeId* out);

// input tensor shaped for a batch of one
Tensor single_input_tensor(const ModelSpec& spec, const Tensor& x);

struct Checkpoint {
    ModelSpec spec;
    uint64_t seed = 0;
    ParamVector params;
};

// ParamVector in TNSR format plus a JSON sidecar with the spec and seed.
void save_checkpoint(const std::string& path_prefix, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path_prefix);

}  // namespace tdlab
