#include "tdlab/learners.hpp"

#include <algorithm>
#include <cmath>

#include "tdlab/rng.hpp"

namespace tdlab {

std::string objective_name(Objective::Kind k) {
    switch (k) {
        case Objective::Kind::squared: return "squared";
        case Objective::Kind::cross_entropy: return "cross_entropy";
        case Objective::Kind::td0: return "td0";
        case Objective::Kind::td_lambda: return "td_lambda";
        case Objective::Kind::q_learning: return "q_learning";
        case Objective::Kind::double_q: return "double_q";
        case Objective::Kind::mc_value: return "mc_value";
        case Objective::Kind::distill_mc: return "distill_mc";
        case Objective::Kind::distill_reg: return "distill_reg";
        case Objective::Kind::distill_tdstar: return "distill_tdstar";
    }
    return "unknown";
}

TargetRule TargetRule::self() { return TargetRule{}; }

TargetRule TargetRule::make_frozen(int64_t refresh_every) {
    TargetRule r;
    r.kind = Kind::frozen;
    r.refresh_every = refresh_every;
    return r;
}

TargetRule TargetRule::make_ema(double tau) {
    TargetRule r;
    r.kind = Kind::ema;
    r.tau = tau;
    return r;
}

void TargetRule::reset(const ParamVector& params) {
    shadow = params;
    counter = 0;
    ++generation;
}

void TargetRule::after_step(const ParamVector& params) {
    ++counter;
    if (kind == Kind::frozen) {
        if (counter % refresh_every == 0) {
            shadow = params;
            ++generation;
        }
    } else if (kind == Kind::ema) {
        check(shadow.layout == params.layout, "target rule not reset for this model");
        for (size_t i = 0; i < shadow.data.size(); ++i)
            shadow.data[i] = (1.0 - tau) * shadow.data[i] + tau * params.data[i];
        ++generation;
    }
}

const ParamVector& TargetRule::target_params(const ParamVector& params) const {
    if (kind == Kind::self_target) return params;
    check(shadow.layout == params.layout, "target rule not reset for this model");
    return shadow;
}

OptimizerState OptimizerState::sgd(double alpha) {
    OptimizerState o;
    o.kind = Kind::sgd;
    o.alpha = alpha;
    return o;
}

OptimizerState OptimizerState::momentum(double alpha, double beta) {
    OptimizerState o;
    o.kind = Kind::momentum;
    o.alpha = alpha;
    o.beta = beta;
    return o;
}

OptimizerState OptimizerState::rmsprop(double alpha, double decay, double eps) {
    OptimizerState o;
    o.kind = Kind::rmsprop;
    o.alpha = alpha;
    o.rms_decay = decay;
    o.eps = eps;
    return o;
}

OptimizerState OptimizerState::adam(double alpha, double beta1, double beta2, double eps) {
    OptimizerState o;
    o.kind = Kind::adam;
    o.alpha = alpha;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.eps = eps;
    return o;
}

std::string optimizer_name(OptimizerState::Kind k) {
    switch (k) {
        case OptimizerState::Kind::sgd: return "sgd";
        case OptimizerState::Kind::momentum: return "momentum";
        case OptimizerState::Kind::rmsprop: return "rmsprop";
        case OptimizerState::Kind::adam: return "adam";
    }
    return "unknown";
}

void OptimizerState::apply(ParamVector& params, const ParamVector& grad) {
    check(params.layout == grad.layout, "optimizer: layout mismatch");
    switch (kind) {
        case Kind::sgd:
            params.add_scaled(grad, -alpha);
            break;
        case Kind::momentum: {
            // mu_t = (1-beta) g + beta mu_{t-1}; theta' = theta - alpha mu_t
            if (m1.data.empty()) m1 = ParamVector::zeros_like(params.layout);
            for (size_t i = 0; i < m1.data.size(); ++i)
                m1.data[i] = (1.0 - beta) * grad.data[i] + beta * m1.data[i];
            params.add_scaled(m1, -alpha);
            break;
        }
        case Kind::rmsprop: {
            if (m2.data.empty()) m2 = ParamVector::zeros_like(params.layout);
            for (size_t i = 0; i < m2.data.size(); ++i) {
                m2.data[i] = rms_decay * m2.data[i] + (1.0 - rms_decay) * grad.data[i] * grad.data[i];
                params.data[i] -= alpha * grad.data[i] / (std::sqrt(m2.data[i]) + eps);
            }
            break;
        }
        case Kind::adam: {
            if (m1.data.empty()) {
                m1 = ParamVector::zeros_like(params.layout);
                m2 = ParamVector::zeros_like(params.layout);
            }
            ++t;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
            for (size_t i = 0; i < m1.data.size(); ++i) {
                m1.data[i] = beta1 * m1.data[i] + (1.0 - beta1) * grad.data[i];
                m2.data[i] = beta2 * m2.data[i] + (1.0 - beta2) * grad.data[i] * grad.data[i];
                params.data[i] -= alpha * (m1.data[i] / c1) / (std::sqrt(m2.data[i] / c2) + eps);
            }
            break;
        }
    }
}

ParamVector optimizer_step(OptimizerState& opt, const ParamVector& params,
                           const ParamVector& grad) {
    ParamVector next = params;
    opt.apply(next, grad);
    return next;
}

// ---------------------------------------------------------------------------
// targets

double td0_target(const std::vector<double>& v_table, const Transition& t, double gamma) {
    if (t.done) return t.reward;
    return t.reward + gamma * v_table[static_cast<size_t>(t.next_state)];
}

namespace {

double v_of(const ModelSpec& spec, const ParamVector& params, const Tensor& x) {
    return forward(spec, params, single_input_tensor(spec, x)).at(0);
}

Tensor encoded(const StateEncoder& enc, const Transition& t, bool next) {
    if (next) {
        if (t.next_obs.numel() > 0) return t.next_obs;
        return enc.encode(t.next_state);
    }
    if (t.obs.numel() > 0) return t.obs;
    return enc.encode(t.state);
}

}  // namespace

double td0_target(const ModelSpec& spec, const ParamVector& target_params,
                  const StateEncoder& enc, const Transition& t, double gamma) {
    if (t.done) return t.reward;
    return t.reward + gamma * v_of(spec, target_params, encoded(enc, t, true));
}

LambdaTargetSet lambda_returns(std::span<const Transition> trajectory,
                               const std::vector<double>& v_next, double gamma, double lambda) {
    check(!trajectory.empty(), "lambda_returns on an empty trajectory");
    check(trajectory.back().done, "lambda_returns requires a terminated trajectory");
    check(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1]");
    check(v_next.size() == trajectory.size(), "bootstrap values sized wrong");

    LambdaTargetSet set;
    set.lambda = lambda;
    set.targets.assign(trajectory.size(), 0.0);
    for (int64_t i = static_cast<int64_t>(trajectory.size()) - 1; i >= 0; --i) {
        const Transition& t = trajectory[static_cast<size_t>(i)];
        if (t.done) {
            set.targets[static_cast<size_t>(i)] = t.reward;
        } else {
            const double tail = set.targets[static_cast<size_t>(i + 1)];
            set.targets[static_cast<size_t>(i)] =
                t.reward + gamma * ((1.0 - lambda) * v_next[static_cast<size_t>(i)] +
                                    lambda * tail);
        }
    }
    return set;
}

LambdaTargetSet lambda_returns(std::span<const Transition> trajectory, const ModelSpec& spec,
                               const ParamVector& params, const TargetRule& rule,
                               const StateEncoder& enc, double gamma, double lambda) {
    const ParamVector& target = rule.target_params(params);
    std::vector<double> v_next(trajectory.size(), 0.0);
    for (size_t i = 0; i < trajectory.size(); ++i) {
        const Transition& t = trajectory[i];
        if (!t.done) v_next[i] = v_of(spec, target, encoded(enc, t, true));
    }
    LambdaTargetSet set = lambda_returns(trajectory, v_next, gamma, lambda);
    set.generation = rule.generation;
    return set;
}

Tensor q_values(const ModelSpec& spec, const ParamVector& params, const Tensor& input) {
    Tensor out = forward(spec, params, single_input_tensor(spec, input));
    out.shape = {spec.outputs};
    return out;
}

double max_q(const ModelSpec& spec, const ParamVector& params, const Tensor& input) {
    const Tensor q = q_values(spec, params, input);
    double best = q.at(0);
    for (int64_t i = 1; i < q.numel(); ++i) best = std::max(best, q.at(i));
    return best;
}

int64_t argmax_q(const ModelSpec& spec, const ParamVector& params, const Tensor& input) {
    const Tensor q = q_values(spec, params, input);
    int64_t arg = 0;
    for (int64_t i = 1; i < q.numel(); ++i)
        if (q.at(i) > q.at(arg)) arg = i;
    return arg;
}

double ql_loss(const ModelSpec& spec, const ParamVector& params, const ParamVector& shadow,
               const StateEncoder& enc, const Transition& t, double gamma) {
    const double target =
        t.done ? t.reward : t.reward + gamma * max_q(spec, shadow, encoded(enc, t, true));
    const Tensor q = q_values(spec, params, encoded(enc, t, false));
    const double d = q.at(t.action) - target;
    return d * d;
}

double ddqn_loss(const ModelSpec& spec, const ParamVector& params, const ParamVector& shadow,
                 const StateEncoder& enc, const Transition& t, double gamma) {
    double target = t.reward;
    if (!t.done) {
        const Tensor next = encoded(enc, t, true);
        const int64_t a_star = argmax_q(spec, params, next);
        target += gamma * q_values(spec, shadow, next).at(a_star);
    }
    const Tensor q = q_values(spec, params, encoded(enc, t, false));
    const double d = q.at(t.action) - target;
    return d * d;
}

DistillLosses distill_losses(const ModelSpec& spec, const ParamVector& params,
                             const StateEncoder& enc, const ReplayBuffer& buffer,
                             int64_t index, const std::vector<double>& expert_q,
                             int64_t n_actions, double gamma) {
    check(!expert_q.empty(), "distillation needs expert values");
    const Transition& t = buffer.transitions[static_cast<size_t>(index)];
    const auto [lo, hi] = buffer.trajectory_bounds(index);
    const std::vector<Transition> traj(buffer.transitions.begin() + lo,
                                       buffer.transitions.begin() + hi);
    const double g = mc_return(traj, index - lo, gamma);

    const double pred = q_values(spec, params, encoded(enc, t, false)).at(t.action);

    DistillLosses out;
    double d = pred - g;
    out.mc = d * d;

    const double q_star = expert_q[static_cast<size_t>(t.state * n_actions + t.action)];
    d = pred - q_star;
    out.reg = d * d;

    double tdstar = t.reward;
    if (!t.done) {
        double best = expert_q[static_cast<size_t>(t.next_state * n_actions)];
        for (int64_t a = 1; a < n_actions; ++a)
            best = std::max(best, expert_q[static_cast<size_t>(t.next_state * n_actions + a)]);
        tdstar += gamma * best;
    }
    d = pred - tdstar;
    out.tdstar = d * d;
    return out;
}

// ---------------------------------------------------------------------------
// gradient helpers

LossGraph single_value_loss_graph(const ModelSpec& spec, const Tensor& x, double target,
                                  int64_t action, LossConvention conv) {
    LossGraph lg;
    NodeId pred;
    lg.g = prediction_graph(spec, action, &pred);
    NodeId loss = lg.g.square(lg.g.sub(pred, lg.g.scalar_constant(target)));
    if (conv == LossConvention::half) loss = lg.g.mul(loss, lg.g.scalar_constant(0.5));
    lg.out = loss;
    lg.inputs = {{"x", single_input_tensor(spec, x)}};
    return lg;
}

GradResult value_batch_grad(const ModelSpec& spec, const ParamVector& params,
                            const std::vector<Tensor>& xs, const std::vector<double>& targets,
                            const std::vector<int64_t>& actions, LossConvention conv) {
    check(!xs.empty(), "empty batch");
    check(xs.size() == targets.size(), "batch size mismatch");
    check(actions.empty() || actions.size() == xs.size(), "action list size mismatch");
    const int64_t m = static_cast<int64_t>(xs.size());

    if (spec.kind == ModelSpec::Kind::mlp) {
        const int64_t d = spec.input_shape[0];
        CompGraph g;
        NodeId fwd;
        g = build_forward_graph(spec, m, &fwd);
        NodeId pred;
        if (!actions.empty()) {
            pred = g.gather_rows(fwd, actions);
        } else {
            check(spec.outputs == 1, "value batch without actions needs a single output");
            pred = g.reshape(fwd, {m});
        }
        Tensor tgt = Tensor::zeros({m});
        tgt.data = targets;
        NodeId loss = g.reduce_mean(g.square(g.sub(pred, g.constant(tgt))));
        if (conv == LossConvention::half) loss = g.mul(loss, g.scalar_constant(0.5));

        Tensor xb = Tensor::zeros({m, d});
        for (int64_t i = 0; i < m; ++i) {
            check(xs[static_cast<size_t>(i)].numel() == d, "input size mismatch in batch");
            for (int64_t j = 0; j < d; ++j)
                xb.at(i, j) = xs[static_cast<size_t>(i)].at(j);
        }
        return grad(g, loss, params, {{"x", xb}});
    }

    // conv models: per-sample loop, mean of gradients
    GradResult total;
    total.grad = ParamVector::zeros_like(params.layout);
    for (int64_t i = 0; i < m; ++i) {
        const LossGraph lg =
            single_value_loss_graph(spec, xs[static_cast<size_t>(i)],
                                    targets[static_cast<size_t>(i)],
                                    actions.empty() ? -1 : actions[static_cast<size_t>(i)], conv);
        const GradResult r = grad(lg.g, lg.out, params, lg.inputs);
        total.value += r.value / static_cast<double>(m);
        total.grad.add_scaled(r.grad, 1.0 / static_cast<double>(m));
    }
    return total;
}

GradResult cross_entropy_batch_grad(const ModelSpec& spec, const ParamVector& params,
                                    const std::vector<Tensor>& xs,
                                    const std::vector<int64_t>& labels) {
    check(!xs.empty() && xs.size() == labels.size(), "bad classification batch");
    const int64_t m = static_cast<int64_t>(xs.size());

    if (spec.kind == ModelSpec::Kind::mlp) {
        const int64_t d = spec.input_shape[0];
        CompGraph g;
        NodeId fwd;
        g = build_forward_graph(spec, m, &fwd);
        const NodeId loss = g.cross_entropy(fwd, labels);
        Tensor xb = Tensor::zeros({m, d});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < d; ++j) xb.at(i, j) = xs[static_cast<size_t>(i)].at(j);
        return grad(g, loss, params, {{"x", xb}});
    }

    GradResult total;
    total.grad = ParamVector::zeros_like(params.layout);
    for (int64_t i = 0; i < m; ++i) {
        CompGraph g;
        NodeId fwd;
        g = build_forward_graph(spec, 1, &fwd);
        const NodeId loss = g.cross_entropy(fwd, {labels[static_cast<size_t>(i)]});
        const GradResult r = grad(g, loss, params,
                                  {{"x", single_input_tensor(spec, xs[static_cast<size_t>(i)])}});
        total.value += r.value / static_cast<double>(m);
        total.grad.add_scaled(r.grad, 1.0 / static_cast<double>(m));
    }
    return total;
}

void reinforce_step(ValueModel& policy, const std::vector<Transition>& episode, double gamma,
                    OptimizerState& opt) {
    check(!episode.empty(), "reinforce_step on an empty episode");
    check(episode.back().done, "reinforce_step requires a terminated episode");

    ParamVector ascent = ParamVector::zeros_like(policy.params.layout);
    for (size_t t = 0; t < episode.size(); ++t) {
        const double g_t = mc_return(episode, static_cast<int64_t>(t), gamma);
        if (g_t == 0.0) continue;
        CompGraph g;
        NodeId fwd;
        g = build_forward_graph(policy.spec, 1, &fwd);
        const NodeId logits = g.reshape(fwd, {policy.spec.outputs});
        const NodeId logp = g.pick(g.log(g.softmax(logits)), episode[t].action);
        const Tensor x = episode[t].obs.numel() > 0
                             ? episode[t].obs
                             : Tensor::scalar(static_cast<double>(episode[t].state));
        const GradResult r =
            grad(g, logp, policy.params, {{"x", single_input_tensor(policy.spec, x)}});
        ascent.add_scaled(r.grad, g_t);
    }
    // optimizers minimize; descend on the negated objective
    for (auto& v : ascent.data) v = -v;
    opt.apply(policy.params, ascent);
}

// ---------------------------------------------------------------------------
// training loops

namespace {

void run_checkpoint_hooks(const TrainHooks& hooks, int64_t step, const ValueModel& model,
                          const TargetRule& rule) {
    if (hooks.on_checkpoint) hooks.on_checkpoint(step, model, rule);
}

struct BatchTargets {
    std::vector<Tensor> xs;
    std::vector<double> targets;
    std::vector<int64_t> actions;
};

}  // namespace

void train_on_buffer(ValueModel& model, const Objective& objective, const ReplayBuffer& buffer,
                     const StateEncoder& enc, const std::vector<double>* expert_q,
                     int64_t mdp_actions, OptimizerState& opt, TargetRule& rule,
                     const TrainSchedule& schedule, uint64_t seed, const TrainHooks& hooks) {
    check(buffer.size() >= 1, "empty replay buffer");
    if (objective.needs_expert())
        check(expert_q != nullptr && !expert_q->empty(), "objective needs expert values");
    rule.reset(model.params);

    const bool uses_q_head = model.spec.outputs > 1;
    const auto kind = objective.kind;

    // Monte-Carlo returns per index; rejects unterminated trajectories up front
    std::vector<double> returns;
    if (kind == Objective::Kind::mc_value || kind == Objective::Kind::distill_mc) {
        returns.resize(static_cast<size_t>(buffer.size()));
        for (int64_t i = 0; i < buffer.size(); ++i) {
            const auto [lo, hi] = buffer.trajectory_bounds(i);
            const std::vector<Transition> traj(buffer.transitions.begin() + lo,
                                               buffer.transitions.begin() + hi);
            returns[static_cast<size_t>(i)] = mc_return(traj, i - lo, objective.gamma);
        }
    }

    // lambda targets, recomputed whenever the shadow changes
    std::vector<double> lambda_targets;
    int64_t lambda_generation = -1;
    auto refresh_lambda = [&]() {
        if (kind != Objective::Kind::td_lambda || lambda_generation == rule.generation) return;
        lambda_targets.assign(static_cast<size_t>(buffer.size()), 0.0);
        int64_t i = 0;
        while (i < buffer.size()) {
            const auto [lo, hi] = buffer.trajectory_bounds(i);
            const std::span<const Transition> traj(buffer.transitions.data() + lo,
                                                   static_cast<size_t>(hi - lo));
            const LambdaTargetSet set = lambda_returns(traj, model.spec, model.params, rule,
                                                       enc, objective.gamma, objective.lambda);
            for (int64_t k = lo; k < hi; ++k)
                lambda_targets[static_cast<size_t>(k)] = set.targets[static_cast<size_t>(k - lo)];
            i = hi;
        }
        lambda_generation = rule.generation;
    };

    auto build_batch = [&](const std::vector<int64_t>& idx) {
        BatchTargets b;
        const ParamVector& shadow = rule.target_params(model.params);
        for (int64_t i : idx) {
            const Transition& t = buffer.transitions[static_cast<size_t>(i)];
            b.xs.push_back(encoded(enc, t, false));
            if (uses_q_head) b.actions.push_back(t.action);
            double target = 0.0;
            switch (kind) {
                case Objective::Kind::td0:
                    target = td0_target(model.spec, shadow, enc, t, objective.gamma);
                    break;
                case Objective::Kind::td_lambda:
                    target = lambda_targets[static_cast<size_t>(i)];
                    break;
                case Objective::Kind::q_learning:
                    target = t.done ? t.reward
                                    : t.reward + objective.gamma *
                                                     max_q(model.spec, shadow,
                                                           encoded(enc, t, true));
                    break;
                case Objective::Kind::double_q: {
                    target = t.reward;
                    if (!t.done) {
                        const Tensor next = encoded(enc, t, true);
                        const int64_t a_star = argmax_q(model.spec, model.params, next);
                        target += objective.gamma *
                                  q_values(model.spec, shadow, next).at(a_star);
                    }
                    break;
                }
                case Objective::Kind::mc_value:
                case Objective::Kind::distill_mc:
                    target = returns[static_cast<size_t>(i)];
                    break;
                case Objective::Kind::distill_reg:
                    target = (*expert_q)[static_cast<size_t>(t.state * mdp_actions + t.action)];
                    break;
                case Objective::Kind::distill_tdstar: {
                    target = t.reward;
                    if (!t.done) {
                        double best =
                            (*expert_q)[static_cast<size_t>(t.next_state * mdp_actions)];
                        for (int64_t a = 1; a < mdp_actions; ++a)
                            best = std::max(
                                best,
                                (*expert_q)[static_cast<size_t>(t.next_state * mdp_actions + a)]);
                        target += objective.gamma * best;
                    }
                    break;
                }
                default:
                    throw std::invalid_argument("objective not supported on a replay buffer");
            }
            b.targets.push_back(target);
        }
        return b;
    };

    Rng rng(derive_seed(seed, "train-buffer"));
    const int64_t batch = std::min<int64_t>(schedule.batch, buffer.size());
    refresh_lambda();
    run_checkpoint_hooks(hooks, 0, model, rule);
    for (int64_t step = 1; step <= schedule.steps; ++step) {
        const std::vector<int64_t> idx = rng.sample_without_replacement(buffer.size(), batch);
        const BatchTargets b = build_batch(idx);
        const GradResult r = value_batch_grad(model.spec, model.params, b.xs, b.targets,
                                              b.actions, LossConvention::plain);
        opt.apply(model.params, r.grad);
        rule.after_step(model.params);
        refresh_lambda();
        if (hooks.on_metric && (schedule.checkpoint_every > 0
                                    ? step % schedule.checkpoint_every == 0
                                    : step == schedule.steps))
            hooks.on_metric(step, "train_loss", r.value);
        if ((schedule.checkpoint_every > 0 && step % schedule.checkpoint_every == 0) ||
            step == schedule.steps)
            run_checkpoint_hooks(hooks, step, model, rule);
    }
}

void train_supervised(ValueModel& model, const Objective& objective, const Tensor& xs,
                      const Tensor& ys, OptimizerState& opt, const TrainSchedule& schedule,
                      uint64_t seed, const TrainHooks& hooks) {
    check(xs.rank() >= 2, "xs must carry a batch dimension");
    const int64_t n = xs.shape[0];
    check(n >= 1 && ys.shape[0] == n, "dataset size mismatch");
    const int64_t row = xs.numel() / n;

    auto nth_input = [&](int64_t i) {
        Tensor t = Tensor::zeros({row});
        for (int64_t k = 0; k < row; ++k) t.at(k) = xs.at(i * row + k);
        if (model.spec.kind == ModelSpec::Kind::conv) t.shape = model.spec.input_shape;
        return t;
    };

    TargetRule rule = TargetRule::self();
    rule.reset(model.params);
    Rng rng(derive_seed(seed, "train-supervised"));
    const int64_t batch = std::min<int64_t>(schedule.batch, n);
    run_checkpoint_hooks(hooks, 0, model, rule);
    for (int64_t step = 1; step <= schedule.steps; ++step) {
        const std::vector<int64_t> idx = rng.sample_without_replacement(n, batch);
        std::vector<Tensor> bx;
        GradResult r;
        if (objective.kind == Objective::Kind::cross_entropy) {
            std::vector<int64_t> labels;
            for (int64_t i : idx) {
                bx.push_back(nth_input(i));
                labels.push_back(static_cast<int64_t>(ys.at(i * ys.shape[1])));
            }
            r = cross_entropy_batch_grad(model.spec, model.params, bx, labels);
        } else {
            check(objective.kind == Objective::Kind::squared,
                  "objective not supported on tensors");
            std::vector<double> targets;
            for (int64_t i : idx) {
                bx.push_back(nth_input(i));
                targets.push_back(ys.at(i * ys.shape[1]));
            }
            r = value_batch_grad(model.spec, model.params, bx, targets, {},
                                 LossConvention::plain);
        }
        opt.apply(model.params, r.grad);
        if (hooks.on_metric && (schedule.checkpoint_every > 0
                                    ? step % schedule.checkpoint_every == 0
                                    : step == schedule.steps))
            hooks.on_metric(step, "train_loss", r.value);
        if ((schedule.checkpoint_every > 0 && step % schedule.checkpoint_every == 0) ||
            step == schedule.steps)
            run_checkpoint_hooks(hooks, step, model, rule);
    }
}

void train_ddqn_control(ValueModel& model, MaskedImageEnv& env,
                        std::span<const int64_t> train_seeds, const ControlConfig& cfg,
                        OptimizerState& opt, TargetRule& rule, const TrainSchedule& schedule,
                        uint64_t seed, const TrainHooks& hooks) {
    check(!train_seeds.empty(), "control training needs train seeds");
    rule.reset(model.params);
    Rng rng(derive_seed(seed, "ddqn-control"));

    ReplayBuffer buffer;
    buffer.capacity = 0;  // capacity handled here so the oldest entries drop
    StateEncoder dummy;   // unused: transitions carry observations

    int64_t traj = 0;
    Tensor obs = env.reset(train_seeds[static_cast<size_t>(rng.index(
        static_cast<int>(train_seeds.size())))]);
    obs.shape = {obs.numel()};
    int64_t ep_step = 0;

    run_checkpoint_hooks(hooks, 0, model, rule);
    for (int64_t step = 1; step <= schedule.steps; ++step) {
        const int64_t action =
            rng.uniform() < cfg.epsilon
                ? rng.index(static_cast<int>(env.n_actions()))
                : argmax_q(model.spec, model.params, obs);
        const auto res = env.step(action);
        Transition t;
        t.state = env.image_index();
        t.next_state = env.image_index();
        t.action = action;
        t.reward = res.reward;
        t.done = res.done;
        t.trajectory_id = traj;
        t.step_index = ep_step;
        t.obs = obs;
        t.next_obs = res.obs;
        t.next_obs.shape = {t.next_obs.numel()};
        buffer.push(std::move(t));
        if (cfg.buffer_capacity > 0 && buffer.size() > cfg.buffer_capacity)
            buffer.transitions.erase(buffer.transitions.begin());

        if (res.done) {
            ++traj;
            ep_step = 0;
            obs = env.reset(train_seeds[static_cast<size_t>(rng.index(
                static_cast<int>(train_seeds.size())))]);
            obs.shape = {obs.numel()};
        } else {
            obs = res.obs;
            obs.shape = {obs.numel()};
            ++ep_step;
        }

        if (buffer.size() >= std::max<int64_t>(cfg.warmup, schedule.batch)) {
            const std::vector<int64_t> idx =
                rng.sample_without_replacement(buffer.size(), schedule.batch);
            std::vector<Tensor> xs;
            std::vector<double> targets;
            std::vector<int64_t> actions;
            const ParamVector& shadow = rule.target_params(model.params);
            for (int64_t i : idx) {
                const Transition& tr = buffer.transitions[static_cast<size_t>(i)];
                xs.push_back(tr.obs);
                actions.push_back(tr.action);
                double target = tr.reward;
                if (!tr.done) {
                    const int64_t a_star = argmax_q(model.spec, model.params, tr.next_obs);
                    target += cfg.gamma * q_values(model.spec, shadow, tr.next_obs).at(a_star);
                }
                targets.push_back(target);
            }
            const GradResult r = value_batch_grad(model.spec, model.params, xs, targets,
                                                  actions, LossConvention::plain);
            opt.apply(model.params, r.grad);
            rule.after_step(model.params);
        }

        if ((schedule.checkpoint_every > 0 && step % schedule.checkpoint_every == 0) ||
            step == schedule.steps)
            run_checkpoint_hooks(hooks, step, model, rule);
    }
    (void)dummy;
}

void train_reinforce(ValueModel& policy, MaskedImageEnv& env,
                     std::span<const int64_t> train_seeds, double gamma, OptimizerState& opt,
                     const TrainSchedule& schedule, uint64_t seed, const TrainHooks& hooks) {
    check(!train_seeds.empty(), "reinforce training needs train seeds");
    check(policy.spec.head == ModelSpec::Head::classifier,
          "reinforce expects a softmax policy head");
    Rng rng(derive_seed(seed, "reinforce"));
    TargetRule rule = TargetRule::self();
    rule.reset(policy.params);

    run_checkpoint_hooks(hooks, 0, policy, rule);
    int64_t steps_used = 0;
    while (steps_used < schedule.steps) {
        Tensor obs = env.reset(train_seeds[static_cast<size_t>(rng.index(
            static_cast<int>(train_seeds.size())))]);
        obs.shape = {obs.numel()};
        std::vector<Transition> episode;
        int64_t ep_step = 0;
        while (!env.done()) {
            const Tensor q = q_values(policy.spec, policy.params, obs);
            // sample from the softmax policy
            double mx = q.at(0);
            for (int64_t i = 1; i < q.numel(); ++i) mx = std::max(mx, q.at(i));
            double z = 0.0;
            std::vector<double> p(static_cast<size_t>(q.numel()));
            for (int64_t i = 0; i < q.numel(); ++i) {
                p[static_cast<size_t>(i)] = std::exp(q.at(i) - mx);
                z += p[static_cast<size_t>(i)];
            }
            double u = rng.uniform() * z;
            int64_t action = q.numel() - 1;
            double acc = 0.0;
            for (int64_t i = 0; i < q.numel(); ++i) {
                acc += p[static_cast<size_t>(i)];
                if (u < acc) {
                    action = i;
                    break;
                }
            }
            const auto res = env.step(action);
            Transition t;
            t.state = env.image_index();
            t.action = action;
            t.reward = res.reward;
            t.done = res.done;
            t.trajectory_id = 0;
            t.step_index = ep_step++;
            t.obs = obs;
            episode.push_back(std::move(t));
            obs = res.obs;
            obs.shape = {obs.numel()};
            ++steps_used;
        }
        reinforce_step(policy, episode, gamma, opt);
        if ((schedule.checkpoint_every > 0 &&
             steps_used / schedule.checkpoint_every !=
                 (steps_used - static_cast<int64_t>(episode.size())) / schedule.checkpoint_every) ||
            steps_used >= schedule.steps)
            run_checkpoint_hooks(hooks, steps_used, policy, rule);
    }
}

std::vector<double> tabular_td0(const TabularMDP& mdp, const std::vector<double>& policy,
                                double alpha, int64_t episodes, uint64_t seed) {
    mdp.validate();
    check(static_cast<int64_t>(policy.size()) == mdp.n_states * mdp.n_actions,
          "policy has wrong size");
    check(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");

    std::vector<double> v(static_cast<size_t>(mdp.n_states), 0.0);
    Rng rng(derive_seed(seed, "tabular-td0"));
    for (int64_t ep = 0; ep < episodes; ++ep) {
        int64_t s = mdp.start_state;
        int64_t guard = 0;
        while (!mdp.terminal[static_cast<size_t>(s)]) {
            check(++guard < 100000, "episode failed to terminate");
            const double u = rng.uniform();
            double acc = 0.0;
            int64_t a = mdp.n_actions - 1;
            for (int64_t cand = 0; cand < mdp.n_actions; ++cand) {
                acc += policy[static_cast<size_t>(s * mdp.n_actions + cand)];
                if (u < acc) {
                    a = cand;
                    break;
                }
            }
            const double u2 = rng.uniform();
            double acc2 = 0.0;
            int64_t s2 = mdp.n_states - 1;
            for (int64_t cand = 0; cand < mdp.n_states; ++cand) {
                acc2 += mdp.p(s, a, cand);
                if (u2 < acc2) {
                    s2 = cand;
                    break;
                }
            }
            const double bootstrap =
                mdp.terminal[static_cast<size_t>(s2)] ? 0.0 : v[static_cast<size_t>(s2)];
            const double target = mdp.r(s, a) + mdp.gamma * bootstrap;
            v[static_cast<size_t>(s)] -= alpha * (v[static_cast<size_t>(s)] - target);
            s = s2;
        }
    }
    return v;
}

}  // namespace tdlab
