#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdlab/autodiff.hpp"
#include "tdlab/env.hpp"
#include "tdlab/models.hpp"

namespace tdlab {

// Squared losses are built either as printed, (f - t)^2, or halved, 1/2 (f - t)^2.
// The halved form keeps delta = dJ/df, which the interference decompositions
// assume; the unhalved form matches the training-loss definitions. Mapping
// between them rescales rho by 4 and rho' by 8.
enum class LossConvention { plain, half };

struct Objective {
    enum class Kind {
        squared,         // supervised regression
        cross_entropy,   // supervised classification
        td0,             // V(s) toward r + gamma V(s')
        td_lambda,       // V(s) toward lambda-returns
        q_learning,      // Q(s,a) toward r + gamma max_a' Q_shadow(s',a')
        double_q,        // bootstrap action from the online net, value from the shadow
        mc_value,        // prediction toward the Monte-Carlo return
        distill_mc,      // Q(s,a) toward the buffer return
        distill_reg,     // Q(s,a) toward Q*(s,a)
        distill_tdstar,  // Q(s,a) toward r + gamma max Q*(s',.)
    };
    Kind kind = Kind::squared;
    double gamma = 0.99;
    double lambda = 0.0;

    bool needs_expert() const {
        return kind == Kind::distill_reg || kind == Kind::distill_tdstar;
    }
};

std::string objective_name(Objective::Kind k);

// Shadow parameters used to compute bootstrap targets.
struct TargetRule {
    enum class Kind { self_target, frozen, ema };
    Kind kind = Kind::self_target;
    int64_t refresh_every = 10000;
    double tau = 0.01;
    ParamVector shadow;
    int64_t counter = 0;
    int64_t generation = 0;  // bumps whenever the shadow content changes

    static TargetRule self();
    static TargetRule make_frozen(int64_t refresh_every);
    static TargetRule make_ema(double tau);

    void reset(const ParamVector& params);
    void after_step(const ParamVector& params);
    const ParamVector& target_params(const ParamVector& params) const;
};

struct OptimizerState {
    enum class Kind { sgd, momentum, rmsprop, adam };
    Kind kind = Kind::sgd;
    double alpha = 0.001;
    double beta = 0.9;        // momentum, convex-combination form
    double rms_decay = 0.99;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    ParamVector m1, m2;
    int64_t t = 0;

    static OptimizerState sgd(double alpha);
    static OptimizerState momentum(double alpha, double beta = 0.9);
    static OptimizerState rmsprop(double alpha, double decay = 0.99, double eps = 1e-8);
    static OptimizerState adam(double alpha, double beta1 = 0.9, double beta2 = 0.999,
                               double eps = 1e-8);

    void apply(ParamVector& params, const ParamVector& grad);
};

std::string optimizer_name(OptimizerState::Kind k);

// non-mutating spec form: returns updated params, advances the state copy
ParamVector optimizer_step(OptimizerState& opt, const ParamVector& params,
                           const ParamVector& grad);

// ---------------------------------------------------------------------------
// targets

// r + gamma V(s'), zero bootstrap on done; table variant
double td0_target(const std::vector<double>& v_table, const Transition& t, double gamma);
// network variant; V read from the given (shadow) parameters
double td0_target(const ModelSpec& spec, const ParamVector& target_params,
                  const StateEncoder& enc, const Transition& t, double gamma);

struct LambdaTargetSet {
    double lambda = 0.0;
    std::vector<double> targets;
    int64_t generation = 0;  // stamp of the shadow params used
};

// Finite-horizon forward view over one terminated trajectory. v_next[i] is the
// bootstrap value at the successor of step i (ignored where done). The
// residual weight lambda^{N-1} falls on the full Monte-Carlo return.
LambdaTargetSet lambda_returns(std::span<const Transition> trajectory,
                               const std::vector<double>& v_next, double gamma, double lambda);

// model-backed convenience: bootstrap values from the rule's target params
LambdaTargetSet lambda_returns(std::span<const Transition> trajectory, const ModelSpec& spec,
                               const ParamVector& params, const TargetRule& rule,
                               const StateEncoder& enc, double gamma, double lambda);

// Q-head evaluation helpers
Tensor q_values(const ModelSpec& spec, const ParamVector& params, const Tensor& input);
double max_q(const ModelSpec& spec, const ParamVector& params, const Tensor& input);
int64_t argmax_q(const ModelSpec& spec, const ParamVector& params, const Tensor& input);

// training losses, printed (unhalved) convention
double ql_loss(const ModelSpec& spec, const ParamVector& params, const ParamVector& shadow,
               const StateEncoder& enc, const Transition& t, double gamma);
double ddqn_loss(const ModelSpec& spec, const ParamVector& params, const ParamVector& shadow,
                 const StateEncoder& enc, const Transition& t, double gamma);

struct DistillLosses {
    double mc = 0.0;
    double reg = 0.0;
    double tdstar = 0.0;
};

// The three distillation targets against a DP-exact expert table.
DistillLosses distill_losses(const ModelSpec& spec, const ParamVector& params,
                             const StateEncoder& enc, const ReplayBuffer& buffer,
                             int64_t index, const std::vector<double>& expert_q,
                             int64_t n_actions, double gamma);

// ---------------------------------------------------------------------------
// gradient helpers shared by the training loops and the measurement code

struct LossGraph {
    CompGraph g;
    NodeId out = -1;
    Inputs inputs;
};

// scalar loss (f(x) - target)^2 for one sample; action < 0 means the V head
LossGraph single_value_loss_graph(const ModelSpec& spec, const Tensor& x, double target,
                                  int64_t action, LossConvention conv);

// mean squared / cross-entropy loss gradient over a batch; conv models fall
// back to a per-sample loop
GradResult value_batch_grad(const ModelSpec& spec, const ParamVector& params,
                            const std::vector<Tensor>& xs, const std::vector<double>& targets,
                            const std::vector<int64_t>& actions, LossConvention conv);
GradResult cross_entropy_batch_grad(const ModelSpec& spec, const ParamVector& params,
                                    const std::vector<Tensor>& xs,
                                    const std::vector<int64_t>& labels);

// REINFORCE ascent step along sum_t G_t grad log pi(a_t | s_t); no baseline
void reinforce_step(ValueModel& policy, const std::vector<Transition>& episode, double gamma,
                    OptimizerState& opt);

// ---------------------------------------------------------------------------
// training loops

struct TrainSchedule {
    int64_t steps = 1000;
    int64_t batch = 32;
    int64_t checkpoint_every = 0;  // 0: only the final checkpoint
};

struct TrainHooks {
    std::function<void(int64_t step, const ValueModel&, const TargetRule&)> on_checkpoint;
    std::function<void(int64_t step, const std::string& metric, double value)> on_metric;
};

// policy evaluation / distillation over a fixed replay buffer
void train_on_buffer(ValueModel& model, const Objective& objective, const ReplayBuffer& buffer,
                     const StateEncoder& enc, const std::vector<double>* expert_q,
                     int64_t mdp_actions, OptimizerState& opt, TargetRule& rule,
                     const TrainSchedule& schedule, uint64_t seed, const TrainHooks& hooks = {});

// supervised learning on fixed tensors; labels are ys.at(i,0) for cross entropy
void train_supervised(ValueModel& model, const Objective& objective, const Tensor& xs,
                      const Tensor& ys, OptimizerState& opt, const TrainSchedule& schedule,
                      uint64_t seed, const TrainHooks& hooks = {});

// DDQN control on the masked-image environment
struct ControlConfig {
    double gamma = 0.99;
    double epsilon = 0.1;           // behavior policy exploration
    int64_t buffer_capacity = 50000;
    int64_t warmup = 64;
};
void train_ddqn_control(ValueModel& model, MaskedImageEnv& env,
                        std::span<const int64_t> train_seeds, const ControlConfig& cfg,
                        OptimizerState& opt, TargetRule& rule, const TrainSchedule& schedule,
                        uint64_t seed, const TrainHooks& hooks = {});

// REINFORCE control; schedule.steps counts environment steps
void train_reinforce(ValueModel& policy, MaskedImageEnv& env,
                     std::span<const int64_t> train_seeds, double gamma, OptimizerState& opt,
                     const TrainSchedule& schedule, uint64_t seed,
                     const TrainHooks& hooks = {});

// literal tabular TD(0): V(s) <- V(s) - alpha (V(s) - (r + gamma V(s')))
std::vector<double> tabular_td0(const TabularMDP& mdp, const std::vector<double>& policy,
                                double alpha, int64_t episodes, uint64_t seed);

}  // namespace tdlab
