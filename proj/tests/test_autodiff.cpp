#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tdlab/autodiff.hpp"
#include "tdlab/rng.hpp"
#include "tdlab/tensor.hpp"

using namespace tdlab;

namespace {

ParamVector make_params(std::vector<std::pair<std::string, std::vector<int64_t>>> segs,
                        std::vector<double> values) {
    ParamLayout layout;
    int64_t off = 0;
    for (auto& [name, shape] : segs) {
        ParamSegment s{name, off, shape};
        off += s.numel();
        layout.segments.push_back(std::move(s));
    }
    layout.total = off;
    ParamVector p = ParamVector::zeros_like(layout);
    REQUIRE(static_cast<int64_t>(values.size()) == off);
    p.data = std::move(values);
    return p;
}

// small random MLP graph: x -> lrelu(x W1 + b1) -> W2 + b2 -> scalar via loss
struct RandomNet {
    CompGraph g;
    NodeId loss;      // 1/2 sum((f - y)^2)
    NodeId output;    // scalar model output f (first component)
    ParamVector params;
    Inputs inputs;
};

RandomNet make_random_net(Rng& rng, int64_t d_in = 3, int64_t d_h = 4, int64_t d_out = 2) {
    RandomNet net;
    CompGraph& g = net.g;
    const NodeId x = g.input("x", {1, d_in});
    const NodeId w1 = g.param("w1", {d_in, d_h});
    const NodeId b1 = g.param("b1", {d_h});
    const NodeId w2 = g.param("w2", {d_h, d_out});
    const NodeId b2 = g.param("b2", {d_out});
    const NodeId h = g.leaky_relu(g.add(g.matmul(x, w1), b1), 0.01);
    const NodeId f = g.add(g.matmul(h, w2), b2);
    const NodeId y = g.input("y", {1, d_out});
    net.loss = g.mul(g.reduce_sum(g.squared_error(f, y)), g.scalar_constant(0.5));
    net.output = g.pick(g.reshape(f, {d_out}), 0);

    std::vector<double> vals;
    const int64_t total = d_in * d_h + d_h + d_h * d_out + d_out;
    vals.reserve(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) vals.push_back(rng.uniform(-0.8, 0.8));
    net.params = make_params({{"w1", {d_in, d_h}}, {"b1", {d_h}}, {"w2", {d_h, d_out}},
                              {"b2", {d_out}}},
                             std::move(vals));

    Tensor xin = Tensor::zeros({1, d_in});
    for (auto& v : xin.data) v = rng.uniform(-1.0, 1.0);
    Tensor yt = Tensor::zeros({1, d_out});
    for (auto& v : yt.data) v = rng.uniform(-1.0, 1.0);
    net.inputs = {{"x", xin}, {"y", yt}};
    return net;
}

double max_rel_err(const ParamVector& a, const ParamVector& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), 1e-8});
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("evaluate: leaky relu slope 0.01 at -1") {
    CompGraph g;
    const NodeId x = g.constant(Tensor::scalar(-1.0));
    const NodeId y = g.leaky_relu(x, 0.01);
    ParamVector empty;
    CHECK(evaluate(g, y, empty).scalar_value() == doctest::Approx(-0.01).epsilon(1e-15));
}

TEST_CASE("evaluate: identity graph returns input") {
    CompGraph g;
    const NodeId x = g.input("x", {3});
    ParamVector empty;
    const Tensor in = Tensor::from_data({3}, {1.5, -2.0, 0.25});
    const Tensor out = evaluate(g, x, empty, {{"x", in}});
    CHECK(out.data == in.data);
}

TEST_CASE("evaluate: identity matmul") {
    CompGraph g;
    const NodeId eye = g.constant(Tensor::from_data({2, 2}, {1, 0, 0, 1}));
    const NodeId m = g.input("m", {2, 2});
    const NodeId y = g.matmul(eye, m);
    ParamVector empty;
    const Tensor in = Tensor::from_data({2, 2}, {3.0, -1.0, 2.5, 7.0});
    CHECK(evaluate(g, y, empty, {{"m", in}}).data == in.data);
}

TEST_CASE("evaluate: shape mismatch names the offending node") {
    CompGraph g;
    const NodeId x = g.input("x", {2});
    ParamVector empty;
    const Tensor wrong = Tensor::from_data({3}, {1, 2, 3});
    try {
        evaluate(g, x, empty, {{"x", wrong}});
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("node " + std::to_string(x)) != std::string::npos);
    }
}

TEST_CASE("grad: hand chain rule on half squared error") {
    // f = theta * x, J = 1/2 (f - y)^2, theta = 1, x = 2, y = 0 -> J = 2, dJ = 4
    CompGraph g;
    const NodeId theta = g.param("theta", {1});
    const NodeId f = g.mul(theta, g.constant(Tensor::from_data({1}, {2.0})));
    const NodeId j = g.mul(g.reduce_sum(g.square(f)), g.scalar_constant(0.5));
    ParamVector p = make_params({{"theta", {1}}}, {1.0});
    const GradResult r = grad(g, j, p);
    CHECK(r.value == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(r.grad.data[0] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("grad: constant graph gives zero vector") {
    CompGraph g;
    g.param("theta", {3});
    const NodeId c = g.scalar_constant(7.0);
    ParamVector p = make_params({{"theta", {3}}}, {1, 2, 3});
    const GradResult r = grad(g, c, p);
    for (double v : r.grad.data) CHECK(v == 0.0);
}

TEST_CASE("grad: non-scalar output rejected") {
    CompGraph g;
    const NodeId theta = g.param("theta", {2});
    ParamVector p = make_params({{"theta", {2}}}, {1, 2});
    CHECK_THROWS_AS((void)grad(g, theta, p), std::invalid_argument);
}

TEST_CASE("grad matches finite differences on a random two layer net") {
    Rng rng(11);
    RandomNet net = make_random_net(rng);
    const GradResult r = grad(net.g, net.loss, net.params, net.inputs);
    const ParamVector fd = finite_diff_grad(net.g, net.loss, net.params, net.inputs, 1e-5);
    CHECK(max_rel_err(r.grad, fd) < 1e-6);
}

TEST_CASE("per_example_grads: singleton batch equals grad") {
    Rng rng(5);
    RandomNet net = make_random_net(rng);
    const auto rs = per_example_grads(net.g, net.loss, net.params, {net.inputs});
    const GradResult r = grad(net.g, net.loss, net.params, net.inputs);
    REQUIRE(rs.size() == 1);
    CHECK(rs[0].value == r.value);
    CHECK(rs[0].grad.data == r.grad.data);
}

TEST_CASE("per_example_grads: mean loss gradient equals mean of per-example grads") {
    Rng rng(6);
    const int64_t d_in = 3, d_h = 4, d_out = 2, m = 4;

    // batched mean-loss graph over m examples
    CompGraph g;
    const NodeId x = g.input("x", {m, d_in});
    const NodeId w1 = g.param("w1", {d_in, d_h});
    const NodeId b1 = g.param("b1", {d_h});
    const NodeId w2 = g.param("w2", {d_h, d_out});
    const NodeId b2 = g.param("b2", {d_out});
    const NodeId f = g.add(g.matmul(g.leaky_relu(g.add(g.matmul(x, w1), b1), 0.01), w2), b2);
    const NodeId y = g.input("y", {m, d_out});
    const NodeId mean_loss = g.reduce_mean(g.squared_error(f, y));

    std::vector<double> vals;
    for (int64_t i = 0; i < d_in * d_h + d_h + d_h * d_out + d_out; ++i)
        vals.push_back(rng.uniform(-0.8, 0.8));
    ParamVector p = make_params(
        {{"w1", {d_in, d_h}}, {"b1", {d_h}}, {"w2", {d_h, d_out}}, {"b2", {d_out}}}, vals);

    Tensor xb = Tensor::zeros({m, d_in});
    Tensor yb = Tensor::zeros({m, d_out});
    for (auto& v : xb.data) v = rng.uniform(-1, 1);
    for (auto& v : yb.data) v = rng.uniform(-1, 1);
    const GradResult whole = grad(g, mean_loss, p, {{"x", xb}, {"y", yb}});

    // per-example graph: same weights, one row at a time, loss = mean over d_out... use sum/d? keep same normalization: per-example loss = mean over that row
    CompGraph g1;
    const NodeId x1 = g1.input("x", {1, d_in});
    const NodeId w1b = g1.param("w1", {d_in, d_h});
    const NodeId b1b = g1.param("b1", {d_h});
    const NodeId w2b = g1.param("w2", {d_h, d_out});
    const NodeId b2b = g1.param("b2", {d_out});
    const NodeId f1 =
        g1.add(g1.matmul(g1.leaky_relu(g1.add(g1.matmul(x1, w1b), b1b), 0.01), w2b), b2b);
    const NodeId y1 = g1.input("y", {1, d_out});
    const NodeId loss1 = g1.reduce_mean(g1.squared_error(f1, y1));

    std::vector<Inputs> batch;
    for (int64_t i = 0; i < m; ++i) {
        Tensor xr = Tensor::zeros({1, d_in});
        Tensor yr = Tensor::zeros({1, d_out});
        for (int64_t j = 0; j < d_in; ++j) xr.at(j) = xb.at(i, j);
        for (int64_t j = 0; j < d_out; ++j) yr.at(j) = yb.at(i, j);
        batch.push_back({{"x", xr}, {"y", yr}});
    }
    const auto per = per_example_grads(g1, loss1, p, batch);

    ParamVector mean = ParamVector::zeros_like(p.layout);
    for (const auto& r : per) mean.add_scaled(r.grad, 1.0 / static_cast<double>(m));
    for (size_t i = 0; i < mean.data.size(); ++i)
        CHECK(std::abs(mean.data[i] - whole.grad.data[i]) < 1e-12);
}

TEST_CASE("per_example_grads: duplicated examples give identical results, empty rejected") {
    Rng rng(7);
    RandomNet net = make_random_net(rng);
    const auto rs = per_example_grads(net.g, net.loss, net.params, {net.inputs, net.inputs});
    CHECK(rs[0].grad.data == rs[1].grad.data);
    CHECK_THROWS_AS((void)per_example_grads(net.g, net.loss, net.params, {}),
                    std::invalid_argument);
}

TEST_CASE("hvp: analytic Hessian of a diagonal quadratic") {
    // J = 1/2 theta^T diag(1,2) theta; H v = (v1, 2 v2)
    CompGraph g;
    const NodeId theta = g.param("theta", {2});
    const NodeId d = g.constant(Tensor::from_data({2}, {1.0, 2.0}));
    const NodeId j = g.mul(g.reduce_sum(g.mul(g.mul(d, theta), theta)), g.scalar_constant(0.5));
    ParamVector p = make_params({{"theta", {2}}}, {0.3, -0.7});
    ParamVector v = ParamVector::zeros_like(p.layout);
    v.data = {1.0, 1.0};
    const ParamVector hv = hvp(g, j, p, {}, v);
    CHECK(hv.data[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(hv.data[1] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("hvp: linear scalar has zero curvature") {
    CompGraph g;
    const NodeId theta = g.param("theta", {3});
    const NodeId j = g.reduce_sum(g.mul(theta, g.constant(Tensor::from_data({3}, {1, 2, 3}))));
    ParamVector p = make_params({{"theta", {3}}}, {0.1, 0.2, 0.3});
    ParamVector v = ParamVector::zeros_like(p.layout);
    v.data = {1.0, -1.0, 2.0};
    const ParamVector hv = hvp(g, j, p, {}, v);
    for (double x : hv.data) CHECK(x == 0.0);
}

TEST_CASE("hvp: layout mismatch rejected") {
    CompGraph g;
    const NodeId theta = g.param("theta", {2});
    const NodeId j = g.reduce_sum(g.mul(theta, theta));
    ParamVector p = make_params({{"theta", {2}}}, {1, 2});
    ParamVector v = make_params({{"other", {2}}}, {1, 2});
    CHECK_THROWS_AS((void)hvp(g, j, p, {}, v), std::invalid_argument);
}

TEST_CASE("hvp matches central differences of the gradient on a random net") {
    Rng rng(13);
    RandomNet net = make_random_net(rng);
    ParamVector v = ParamVector::zeros_like(net.params.layout);
    for (auto& x : v.data) x = rng.uniform(-1, 1);

    const ParamVector hv = hvp(net.g, net.loss, net.params, net.inputs, v);

    const double h = 1e-5;
    ParamVector up = net.params;
    up.add_scaled(v, h);
    ParamVector down = net.params;
    down.add_scaled(v, -h);
    const GradResult gu = grad(net.g, net.loss, up, net.inputs);
    const GradResult gd = grad(net.g, net.loss, down, net.inputs);
    ParamVector fd = gu.grad;
    fd.add_scaled(gd.grad, -1.0);
    for (auto& x : fd.data) x /= 2.0 * h;
    CHECK(max_rel_err(hv, fd) < 1e-5);
}

TEST_CASE("function_hvp: hand Hessian of theta1*theta2") {
    CompGraph g;
    const NodeId theta = g.param("theta", {2});
    const NodeId f = g.mul(g.pick(theta, 0), g.pick(theta, 1));
    ParamVector p = make_params({{"theta", {2}}}, {1.0, 1.0});
    ParamVector v = ParamVector::zeros_like(p.layout);
    v.data = {1.0, 0.0};
    const ParamVector hv = function_hvp(g, f, p, {}, v);
    CHECK(hv.data[0] == doctest::Approx(0.0));
    CHECK(hv.data[1] == doctest::Approx(1.0));
}

TEST_CASE("function_hvp: linear model has zero function curvature") {
    CompGraph g;
    const NodeId theta = g.param("theta", {3});
    const NodeId f = g.reduce_sum(g.mul(theta, g.constant(Tensor::from_data({3}, {1, -2, 4}))));
    ParamVector p = make_params({{"theta", {3}}}, {0.5, 1.5, -0.5});
    ParamVector v = ParamVector::zeros_like(p.layout);
    v.data = {1, 1, 1};
    for (double x : function_hvp(g, f, p, {}, v).data) CHECK(x == 0.0);
}

TEST_CASE("function_hvp matches finite differences of the output gradient") {
    Rng rng(17);
    RandomNet net = make_random_net(rng);
    ParamVector v = ParamVector::zeros_like(net.params.layout);
    for (auto& x : v.data) x = rng.uniform(-1, 1);
    const ParamVector hv = function_hvp(net.g, net.output, net.params, net.inputs, v);
    const double h = 1e-5;
    ParamVector up = net.params, down = net.params;
    up.add_scaled(v, h);
    down.add_scaled(v, -h);
    ParamVector fd = grad(net.g, net.output, up, net.inputs).grad;
    fd.add_scaled(grad(net.g, net.output, down, net.inputs).grad, -1.0);
    for (auto& x : fd.data) x /= 2.0 * h;
    CHECK(max_rel_err(hv, fd) < 1e-5);
}

TEST_CASE("finite_diff_grad: quadratic oracle and error handling") {
    CompGraph g;
    const NodeId theta = g.param("theta", {1});
    const NodeId j = g.mul(g.reduce_sum(g.square(theta)), g.scalar_constant(0.5));
    ParamVector p = make_params({{"theta", {1}}}, {3.0});
    const ParamVector fd = finite_diff_grad(g, j, p, {}, 1e-4);
    CHECK(std::abs(fd.data[0] - 3.0) < 1e-8);
    CHECK_THROWS_AS((void)finite_diff_grad(g, j, p, {}, 0.0), std::invalid_argument);

    CompGraph gc;
    gc.param("theta", {1});
    const NodeId c = gc.scalar_constant(2.0);
    const ParamVector z = finite_diff_grad(gc, c, p, {}, 1e-4);
    CHECK(z.data[0] == 0.0);
}

TEST_CASE("dot: hand cases and layout checks") {
    ParamVector a = make_params({{"w", {2}}}, {3, 4});
    CHECK(dot(a, a) == 25.0);
    ParamVector b = make_params({{"w", {2}}}, {4, -3});
    CHECK(dot(a, b) == 0.0);
    ParamVector c = make_params({{"w", {3}}}, {1, 2, 3});
    ParamVector d = make_params({{"w", {3}}}, {4, 5, 6});
    CHECK(dot(c, d) == 32.0);
    CHECK_THROWS_AS((void)dot(a, c), std::invalid_argument);
}

TEST_CASE("property: gradients match finite differences across the op set") {
    // randomized nets exercising matmul/add/mul/lrelu/tanh/softmax/log/pick/max/gather
    Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        RandomNet net = make_random_net(rng);
        const GradResult r = grad(net.g, net.loss, net.params, net.inputs);
        const ParamVector fd =
            finite_diff_grad(net.g, net.loss, net.params, net.inputs, 1e-5);
        CHECK(max_rel_err(r.grad, fd) < 1e-5);
    }

    // a graph touching the remaining smooth ops
    Rng rng2(102);
    for (int trial = 0; trial < 20; ++trial) {
        CompGraph g;
        const NodeId theta = g.param("t", {4});
        const NodeId sm = g.softmax(g.tanh(theta));
        const NodeId mx = g.reduce_max(g.mul(theta, theta));
        const NodeId lg = g.log(g.add(sm, g.broadcast(g.scalar_constant(0.1), {4})));
        const NodeId out = g.add(g.reduce_sum(lg), g.mul(mx, g.scalar_constant(0.5)));
        std::vector<double> vals;
        for (int i = 0; i < 4; ++i) vals.push_back(rng2.uniform(-1.5, 1.5));
        ParamVector p = make_params({{"t", {4}}}, vals);
        const GradResult r = grad(g, out, p);
        const ParamVector fd = finite_diff_grad(g, out, p, {}, 1e-5);
        CHECK(max_rel_err(r.grad, fd) < 1e-5);
    }
}

TEST_CASE("property: hvp symmetry dot(u, Hv) == dot(v, Hu)") {
    Rng rng(103);
    for (int trial = 0; trial < 30; ++trial) {
        RandomNet net = make_random_net(rng);
        ParamVector u = ParamVector::zeros_like(net.params.layout);
        ParamVector v = ParamVector::zeros_like(net.params.layout);
        for (auto& x : u.data) x = rng.uniform(-1, 1);
        for (auto& x : v.data) x = rng.uniform(-1, 1);
        const double a = dot(u, hvp(net.g, net.loss, net.params, net.inputs, v));
        const double b = dot(v, hvp(net.g, net.loss, net.params, net.inputs, u));
        CHECK(std::abs(a - b) < 1e-8);
    }
}

TEST_CASE("double differentiation closes over the op set") {
    // graph reaching every differentiable op; hvp must not hit an unsupported adjoint
    CompGraph g;
    const NodeId theta = g.param("t", {2, 2});
    const NodeId tv = g.reshape(theta, {4});
    const NodeId a = g.tanh(tv);
    const NodeId sm = g.softmax(a);
    const NodeId lg = g.log(sm);
    const NodeId lr = g.leaky_relu(tv, 0.1);
    const NodeId mx = g.reduce_max(lr);
    const NodeId pk = g.pick(lg, 2);
    const NodeId mm = g.matmul(theta, g.transpose(theta));
    const NodeId gr = g.gather_rows(mm, {1, 0});
    const NodeId dv = g.div(gr, g.broadcast(g.scalar_constant(2.0), {2}));
    const NodeId brs = g.reduce_sum_rows(g.broadcast_rows(dv, 3));
    const NodeId s =
        g.add(g.add(g.reduce_sum(brs), mx), g.add(pk, g.reduce_mean(g.exp(g.neg(tv)))));
    ParamVector p = make_params({{"t", {2, 2}}}, {0.3, -0.6, 1.1, 0.2});
    ParamVector v = ParamVector::zeros_like(p.layout);
    v.data = {1, -1, 0.5, 2};
    const ParamVector hv = hvp(g, s, p, {}, v);
    CHECK(hv.data.size() == 4);

    // conv closure: value, input-grad and weight-grad all double-differentiable
    CompGraph gc;
    const NodeId img = gc.param("img", {1, 1, 4, 4});
    const NodeId ker = gc.param("ker", {1, 1, 3, 3});
    const NodeId y = gc.conv2d(img, ker, {1, 1});
    const NodeId out = gc.reduce_sum(gc.square(gc.reshape(y, {16})));
    std::vector<double> vals;
    Rng rng(5);
    for (int i = 0; i < 25; ++i) vals.push_back(rng.uniform(-1, 1));
    ParamVector pc = make_params({{"img", {1, 1, 4, 4}}, {"ker", {1, 1, 3, 3}}}, vals);
    ParamVector vc = ParamVector::zeros_like(pc.layout);
    for (auto& x : vc.data) x = rng.uniform(-1, 1);
    const ParamVector hvc = hvp(gc, out, pc, {}, vc);

    const double h = 1e-5;
    ParamVector up = pc, down = pc;
    up.add_scaled(vc, h);
    down.add_scaled(vc, -h);
    ParamVector fd = grad(gc, out, up).grad;
    fd.add_scaled(grad(gc, out, down).grad, -1.0);
    for (auto& x : fd.data) x /= 2 * h;
    CHECK(max_rel_err(hvc, fd) < 1e-5);
}

TEST_CASE("conv2d: gradient against finite differences with stride and padding") {
    Rng rng(51);
    CompGraph g;
    const NodeId img = g.input("img", {1, 2, 5, 5});
    const NodeId ker = g.param("ker", {3, 2, 3, 3});
    const NodeId y = g.conv2d(img, ker, {2, 1});
    const NodeId out = g.reduce_sum(g.square(g.reshape(y, {3 * 3 * 3})));
    std::vector<double> vals;
    for (int i = 0; i < 54; ++i) vals.push_back(rng.uniform(-1, 1));
    ParamVector p = make_params({{"ker", {3, 2, 3, 3}}}, vals);
    Tensor im = Tensor::zeros({1, 2, 5, 5});
    for (auto& v : im.data) v = rng.uniform(-1, 1);
    const Inputs in = {{"img", im}};
    const GradResult r = grad(g, out, p, in);
    const ParamVector fd = finite_diff_grad(g, out, p, in, 1e-5);
    CHECK(max_rel_err(r.grad, fd) < 1e-6);
}

TEST_CASE("determinism: identical inputs give bit-identical results") {
    Rng rng_a(73), rng_b(73);
    RandomNet a = make_random_net(rng_a);
    RandomNet b = make_random_net(rng_b);
    const GradResult ra = grad(a.g, a.loss, a.params, a.inputs);
    const GradResult rb = grad(b.g, b.loss, b.params, b.inputs);
    CHECK(ra.value == rb.value);
    CHECK(ra.grad.data == rb.grad.data);
}

TEST_CASE("argmax and max reduction break ties toward the first index") {
    CompGraph g;
    const NodeId theta = g.param("t", {3});
    const NodeId mx = g.reduce_max(theta);
    ParamVector p = make_params({{"t", {3}}}, {0.1, 0.9, 0.9});
    CHECK(evaluate(g, mx, p).scalar_value() == 0.9);
    const GradResult r = grad(g, mx, p);
    CHECK(r.grad.data == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("tensor inputs reject NaN at construction; propagation is detectable") {
    CHECK_THROWS_AS((void)Tensor::from_data({1}, {std::nan("")}), std::invalid_argument);
    CompGraph g;
    const NodeId x = g.constant(Tensor::from_data({1}, {0.0}));
    const NodeId y = g.log(x);  // -inf
    ParamVector empty;
    CHECK_FALSE(evaluate(g, y, empty).all_finite());
}

TEST_CASE("TNSR round trip and header layout") {
    const auto dir = std::filesystem::temp_directory_path() / "tdlab_tnsr_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "t.tnsr").string();

    Rng rng(9);
    Tensor t = Tensor::zeros({2, 3, 4});
    for (auto& v : t.data) v = rng.uniform(-10, 10);
    write_tnsr(path, t);
    const Tensor back = read_tnsr(path);
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data);

    FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f != nullptr);
    unsigned char head[14];
    REQUIRE(std::fread(head, 1, 14, f) == 14);
    std::fclose(f);
    CHECK(head[0] == 'T');
    CHECK(head[1] == 'N');
    CHECK(head[2] == 'S');
    CHECK(head[3] == 'R');
    CHECK(head[4] == 1);  // version u32 LE
    CHECK(head[5] == 0);
    CHECK(head[8] == 1);  // dtype f64
    CHECK(head[9] == 3);  // rank
    CHECK(head[10] == 2);  // first dim u64 LE
    std::filesystem::remove_all(dir);
}
