#include "tdlab/models.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "tdlab/rng.hpp"

namespace tdlab {

void ModelSpec::validate() const {
    check(hidden >= 1, "model spec: n_h must be >= 1");
    check(extra_layers >= 0, "model spec: n_L must be >= 0");
    check(outputs >= 1, "model spec: n_o must be >= 1");
    check(!input_shape.empty(), "model spec: input shape required");
    if (kind == Kind::mlp) {
        check(input_shape.size() == 1 && input_shape[0] >= 1, "mlp input shape must be {d}");
    } else {
        check(input_shape.size() == 3, "conv input shape must be {C, H, W}");
        // the fixed conv stack needs room for 5x5/2 then two unpadded 3x3 layers
        const int64_t h1 = (input_shape[1] - 5) / 2 + 1;
        const int64_t w1 = (input_shape[2] - 5) / 2 + 1;
        check(h1 - 4 >= 1 && w1 - 4 >= 1, "conv input too small for the layer schema");
    }
}

namespace {

struct ConvDims {
    int64_t h0, w0, h1, w1, h2, w2, h3, w3, flat;
};

ConvDims conv_dims(const ModelSpec& s) {
    ConvDims d{};
    d.h0 = s.input_shape[1];
    d.w0 = s.input_shape[2];
    d.h1 = (d.h0 - 5) / 2 + 1;
    d.w1 = (d.w0 - 5) / 2 + 1;
    d.h2 = d.h1 - 2;
    d.w2 = d.w1 - 2;
    d.h3 = d.h2 - 2;
    d.w3 = d.w2 - 2;
    d.flat = 4 * s.hidden * d.h3 * d.w3;
    return d;
}

struct LayerDef {
    std::string name;
    std::vector<int64_t> w_shape;
    int64_t fan_in, fan_out;
};

std::vector<LayerDef> layer_defs(const ModelSpec& s) {
    std::vector<LayerDef> defs;
    if (s.kind == ModelSpec::Kind::mlp) {
        const int64_t n_layers = 1 + s.extra_layers;
        int64_t d_in = s.input_shape[0];
        for (int64_t i = 0; i < n_layers; ++i) {
            defs.push_back({"l" + std::to_string(i), {d_in, s.hidden}, d_in, s.hidden});
            d_in = s.hidden;
        }
        defs.push_back({"l" + std::to_string(n_layers), {d_in, s.outputs}, d_in, s.outputs});
    } else {
        const int64_t c = s.input_shape[0];
        const int64_t nh = s.hidden;
        defs.push_back({"c0", {nh, c, 5, 5}, c * 25, nh * 25});
        defs.push_back({"c1", {2 * nh, nh, 3, 3}, nh * 9, 2 * nh * 9});
        defs.push_back({"c2", {4 * nh, 2 * nh, 3, 3}, 2 * nh * 9, 4 * nh * 9});
        for (int64_t i = 0; i < s.extra_layers; ++i)
            defs.push_back(
                {"c" + std::to_string(3 + i), {4 * nh, 4 * nh, 3, 3}, 4 * nh * 9, 4 * nh * 9});
        const ConvDims d = conv_dims(s);
        defs.push_back({"d0", {d.flat, 4 * nh}, d.flat, 4 * nh});
        defs.push_back({"d1", {4 * nh, s.outputs}, 4 * nh, s.outputs});
    }
    return defs;
}

int64_t bias_count(const LayerDef& def) {
    return def.w_shape.size() == 4 ? def.w_shape[0] : def.w_shape[1];
}

}  // namespace

ParamLayout layout_for(const ModelSpec& spec) {
    spec.validate();
    ParamLayout layout;
    int64_t off = 0;
    for (const LayerDef& def : layer_defs(spec)) {
        ParamSegment w{def.name + ".w", off, def.w_shape};
        off += w.numel();
        layout.segments.push_back(std::move(w));
        ParamSegment b{def.name + ".b", off, {bias_count(def)}};
        off += b.numel();
        layout.segments.push_back(std::move(b));
    }
    layout.total = off;
    return layout;
}

ValueModel init(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    ValueModel m;
    m.spec = spec;
    m.params = ParamVector::zeros_like(layout_for(spec));
    Rng rng(seed);
    size_t seg_i = 0;
    for (const LayerDef& def : layer_defs(spec)) {
        const ParamSegment& wseg = m.params.layout.segments[seg_i];
        const double bound = std::sqrt(6.0 / static_cast<double>(def.fan_in + def.fan_out));
        for (int64_t i = 0; i < wseg.numel(); ++i)
            m.params.data[static_cast<size_t>(wseg.offset + i)] = rng.uniform(-bound, bound);
        seg_i += 2;  // bias segment stays zero
    }
    m.graph = build_forward_graph(spec, 1, &m.graph_output);
    return m;
}

CompGraph build_forward_graph(const ModelSpec& spec, int64_t batch, NodeId* out) {
    spec.validate();
    CompGraph g;
    if (spec.kind == ModelSpec::Kind::mlp) {
        NodeId h = g.input("x", {batch, spec.input_shape[0]});
        const auto defs = layer_defs(spec);
        for (size_t i = 0; i < defs.size(); ++i) {
            const auto& def = defs[i];
            const NodeId w = g.param(def.name + ".w", def.w_shape);
            const NodeId b = g.param(def.name + ".b", {bias_count(def)});
            h = g.add(g.matmul(h, w), b);
            if (i + 1 < defs.size()) h = g.leaky_relu(h, spec.slope);
        }
        *out = h;
        return g;
    }

    check(batch == 1, "conv forward graphs are built one example at a time");
    const ConvDims d = conv_dims(spec);
    NodeId h = g.input("x", {1, spec.input_shape[0], d.h0, d.w0});
    const auto defs = layer_defs(spec);
    struct Stage {
        int64_t ho, wo;
        Conv2dSpec conv;
    };
    std::vector<Stage> stages = {{d.h1, d.w1, {2, 0}}, {d.h2, d.w2, {1, 0}}, {d.h3, d.w3, {1, 0}}};
    for (int64_t i = 0; i < spec.extra_layers; ++i) stages.push_back({d.h3, d.w3, {1, 1}});

    for (size_t i = 0; i < stages.size(); ++i) {
        const auto& def = defs[i];
        const NodeId w = g.param(def.name + ".w", def.w_shape);
        const NodeId b = g.param(def.name + ".b", {bias_count(def)});
        const NodeId y = g.conv2d(h, w, stages[i].conv);
        const int64_t o = def.w_shape[0];
        const int64_t hw = stages[i].ho * stages[i].wo;
        // per-channel bias: [1,O,H,W] -> [O, H*W] + column-broadcast b
        const NodeId flat = g.reshape(y, {o, hw});
        const NodeId biased = g.add(flat, g.broadcast_cols(b, hw));
        h = g.reshape(g.leaky_relu(biased, spec.slope), {1, o, stages[i].ho, stages[i].wo});
    }

    NodeId flat = g.reshape(h, {1, d.flat});
    const auto& d0 = defs[stages.size()];
    flat = g.leaky_relu(
        g.add(g.matmul(flat, g.param(d0.name + ".w", d0.w_shape)),
              g.param(d0.name + ".b", {bias_count(d0)})),
        spec.slope);
    const auto& d1 = defs[stages.size() + 1];
    *out = g.add(g.matmul(flat, g.param(d1.name + ".w", d1.w_shape)),
                 g.param(d1.name + ".b", {bias_count(d1)}));
    return g;
}

Tensor forward(const ModelSpec& spec, const ParamVector& params, const Tensor& batch) {
    if (spec.kind == ModelSpec::Kind::mlp) {
        check(batch.rank() == 2 && batch.shape[1] == spec.input_shape[0],
              "forward: batch shape mismatch");
        NodeId out;
        const CompGraph g = build_forward_graph(spec, batch.shape[0], &out);
        return evaluate(g, out, params, {{"x", batch}});
    }
    check(batch.rank() == 4 && batch.shape[1] == spec.input_shape[0] &&
              batch.shape[2] == spec.input_shape[1] && batch.shape[3] == spec.input_shape[2],
          "forward: batch shape mismatch");
    NodeId out;
    const CompGraph g = build_forward_graph(spec, 1, &out);
    Tensor result = Tensor::zeros({batch.shape[0], spec.outputs});
    Tensor one = Tensor::zeros({1, batch.shape[1], batch.shape[2], batch.shape[3]});
    const int64_t stride = one.numel();
    for (int64_t i = 0; i < batch.shape[0]; ++i) {
        for (int64_t k = 0; k < stride; ++k) one.at(k) = batch.at(i * stride + k);
        const Tensor row = evaluate(g, out, params, {{"x", one}});
        for (int64_t j = 0; j < spec.outputs; ++j) result.at(i, j) = row.at(j);
    }
    return result;
}

Tensor forward(const ValueModel& model, const Tensor& batch) {
    return forward(model.spec, model.params, batch);
}

CompGraph scalar_output_graph(const ModelSpec& spec, NodeId* out) {
    NodeId fwd;
    CompGraph g = build_forward_graph(spec, 1, &fwd);
    if (spec.outputs == 1) {
        *out = g.reshape(fwd, {});
        return g;
    }
    const NodeId v = g.reshape(fwd, {spec.outputs});
    if (spec.head == ModelSpec::Head::classifier) {
        const NodeId p = g.softmax(v);
        *out = g.reduce_sum(g.mul(p, g.argmax_onehot(v)));
    } else {
        *out = g.reduce_max(v);
    }
    return g;
}

double scalar_output(const ValueModel& model, const Tensor& single_input) {
    NodeId out;
    const CompGraph g = scalar_output_graph(model.spec, &out);
    return evaluate(g, out, model.params, {{"x", single_input_tensor(model.spec, single_input)}})
        .scalar_value();
}

CompGraph prediction_graph(const ModelSpec& spec, int64_t action, NodeId* out) {
    NodeId fwd;
    CompGraph g = build_forward_graph(spec, 1, &fwd);
    if (spec.outputs == 1) {
        *out = g.reshape(fwd, {});
        return g;
    }
    const NodeId v = g.reshape(fwd, {spec.outputs});
    *out = action >= 0 ? g.pick(v, action) : g.reduce_max(v);
    return g;
}

Tensor single_input_tensor(const ModelSpec& spec, const Tensor& x) {
    if (spec.kind == ModelSpec::Kind::mlp) {
        const int64_t d = spec.input_shape[0];
        check(x.numel() == d, "input size mismatch");
        Tensor t = x;
        t.shape = {1, d};
        return t;
    }
    check(x.numel() == spec.input_numel(), "input size mismatch");
    Tensor t = x;
    t.shape = {1, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    return t;
}

namespace {

nlohmann::json spec_to_json(const ModelSpec& s) {
    return {{"kind", s.kind == ModelSpec::Kind::mlp ? "mlp" : "conv"},
            {"head", s.head == ModelSpec::Head::value ? "value" : "classifier"},
            {"input_shape", s.input_shape},
            {"hidden", s.hidden},
            {"extra_layers", s.extra_layers},
            {"outputs", s.outputs},
            {"slope", s.slope}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    const std::string kind = j.at("kind").get<std::string>();
    check(kind == "mlp" || kind == "conv", "bad model kind: " + kind);
    s.kind = kind == "mlp" ? ModelSpec::Kind::mlp : ModelSpec::Kind::conv;
    const std::string head = j.at("head").get<std::string>();
    check(head == "value" || head == "classifier", "bad model head: " + head);
    s.head = head == "value" ? ModelSpec::Head::value : ModelSpec::Head::classifier;
    s.input_shape = j.at("input_shape").get<std::vector<int64_t>>();
    s.hidden = j.at("hidden").get<int64_t>();
    s.extra_layers = j.at("extra_layers").get<int64_t>();
    s.outputs = j.at("outputs").get<int64_t>();
    s.slope = j.at("slope").get<double>();
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path_prefix, const Checkpoint& ckpt) {
    Tensor flat = Tensor::zeros({static_cast<int64_t>(ckpt.params.data.size())});
    flat.data = ckpt.params.data;
    write_tnsr(path_prefix + ".tnsr", flat);
    nlohmann::json side = {{"model", spec_to_json(ckpt.spec)}, {"seed", ckpt.seed}};
    std::ofstream os(path_prefix + ".json");
    check(os.good(), "cannot write checkpoint sidecar");
    os << side.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path_prefix) {
    std::ifstream is(path_prefix + ".json");
    check(is.good(), "cannot read checkpoint sidecar");
    nlohmann::json side = nlohmann::json::parse(is);
    Checkpoint ckpt;
    ckpt.spec = spec_from_json(side.at("model"));
    ckpt.seed = side.at("seed").get<uint64_t>();
    const Tensor flat = read_tnsr(path_prefix + ".tnsr");
    ckpt.params = ParamVector::zeros_like(layout_for(ckpt.spec));
    check(flat.numel() == ckpt.params.size(), "checkpoint size does not match spec");
    ckpt.params.data = flat.data;
    return ckpt;
}

}  // namespace tdlab
