#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tdlab/tensor.hpp"

namespace tdlab {

// One (s, a, r, s', done) record. Tabular experiments use the state ids;
// image experiments carry observations (state ids then hold the image index).
struct Transition {
    int64_t state = -1;
    int64_t action = -1;
    double reward = 0.0;
    int64_t next_state = -1;
    bool done = false;
    int64_t trajectory_id = 0;
    int64_t step_index = 0;
    Tensor obs;       // empty for tabular
    Tensor next_obs;  // empty for tabular
};

struct ReplayBuffer {
    std::vector<Transition> transitions;
    int64_t capacity = 0;  // 0 means unbounded

    void push(Transition t);
    int64_t size() const { return static_cast<int64_t>(transitions.size()); }
    // [begin, end) of the trajectory containing index i
    std::pair<int64_t, int64_t> trajectory_bounds(int64_t i) const;
    bool trajectory_terminated(int64_t i) const;
    void write_csv(const std::string& path) const;
};

// <S, A, R, P, gamma> with absorbing terminal states; R is per (s, a) and is
// the reward earned by taking a from s.
struct TabularMDP {
    int64_t n_states = 0;
    int64_t n_actions = 0;
    std::vector<double> P;  // [S, A, S]
    std::vector<double> R;  // [S, A]
    double gamma = 0.99;
    std::vector<bool> terminal;
    int64_t start_state = 0;

    double p(int64_t s, int64_t a, int64_t s2) const {
        return P[static_cast<size_t>((s * n_actions + a) * n_states + s2)];
    }
    double& p_ref(int64_t s, int64_t a, int64_t s2) {
        return P[static_cast<size_t>((s * n_actions + a) * n_states + s2)];
    }
    double r(int64_t s, int64_t a) const { return R[static_cast<size_t>(s * n_actions + a)]; }
    double& r_ref(int64_t s, int64_t a) { return R[static_cast<size_t>(s * n_actions + a)]; }

    void validate() const;  // row-stochastic within 1e-12, terminals absorbing
};

// Linear chain s_0 -> ... -> s_{n-1} -> terminal. With a single action the
// chain is a conveyor; with two actions, action 1 advances (earning the
// state's reward) and action 0 moves back, clipped at the start. slip swaps
// the intended move with the given probability.
TabularMDP chain_mdp(int64_t n_states, const std::vector<double>& rewards, double gamma,
                     int64_t n_actions = 1, double slip = 0.0);

// Deterministic gridworld, 4 actions (up/down/left/right) clipped at walls;
// the last cell is terminal and stepping into it earns reward 1.
TabularMDP grid_mdp(int64_t width, int64_t height, double gamma);

// Iterates V <- R_pi + gamma P_pi V to sup-norm residual < 1e-10.
std::vector<double> dp_policy_evaluation(const TabularMDP& mdp,
                                         const std::vector<double>& policy);

// Bellman-optimality iteration to residual < 1e-10; returns Q* as [S, A].
std::vector<double> value_iteration(const TabularMDP& mdp);

std::vector<int64_t> greedy_policy(const TabularMDP& mdp, const std::vector<double>& q);

// Epsilon-greedy rollouts against Q*; trajectory ids and step indices are
// preserved. With complete_episodes the final episode is played out so every
// trajectory in the buffer terminates.
ReplayBuffer make_expert_buffer(const TabularMDP& mdp, const std::vector<double>& q_star,
                                double epsilon, int64_t n_transitions, uint64_t seed,
                                bool complete_episodes = true);

// Discounted return of a terminated trajectory from step t to the end.
double mc_return(const std::vector<Transition>& trajectory, int64_t t, double gamma);

// ---------------------------------------------------------------------------
// synthetic datasets

struct GlyphDataset {
    int64_t width = 32, height = 32, n_classes = 10;
    Tensor images;  // [N, H, W] in [0, 1]
    std::vector<int64_t> labels;
    std::vector<int64_t> train_seeds;  // example index doubles as environment seed
    std::vector<int64_t> test_seeds;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
    Tensor image(int64_t i) const;
    Tensor flat_image(int64_t i) const;  // [W*H]
};

// Procedurally rendered class-distinct glyphs with seeded jitter and noise;
// example i has label i % n_classes.
GlyphDataset glyph_generate(int64_t n_classes, int64_t n_per_class, uint64_t seed,
                            int64_t width = 32, int64_t height = 32);

// first n_train indices become train seeds, the following n_test test seeds
void assign_split(GlyphDataset& data, int64_t n_train, int64_t n_test);

void save_glyphs(const std::string& dir, const GlyphDataset& data);
GlyphDataset load_glyphs(const std::string& dir);

// Teacher-network regression data: x uniform in [-1,1]^d, y = teacher(x).
struct RegressionDataset {
    Tensor xs;  // [N, d]
    Tensor ys;  // [N, 1]
    std::vector<int64_t> train_seeds, test_seeds;
};
RegressionDataset regression_generate(int64_t n_samples, int64_t n_features, uint64_t seed,
                                      double noise_std = 0.0);

// ---------------------------------------------------------------------------
// masked-image exploration environment

// The agent sees the union of visited w x w windows of one image, starting
// from the centered window; 4 movement actions shift the window by `move`
// pixels (clipped), C classification actions guess the label. A correct guess
// ends the episode with reward 1; the episode also ends after max_steps.
class MaskedImageEnv {
public:
    MaskedImageEnv(const GlyphDataset* data, int64_t window = 8, int64_t move = 8,
                   int64_t max_steps = 20);

    Tensor reset(int64_t seed_index);

    struct StepResult {
        Tensor obs;
        double reward = 0.0;
        bool done = false;
    };
    StepResult step(int64_t action);

    int64_t n_actions() const { return 4 + data_->n_classes; }
    int64_t n_movement_actions() const { return 4; }
    bool done() const { return done_; }
    int64_t step_count() const { return steps_; }
    int64_t image_index() const { return image_; }
    std::pair<int64_t, int64_t> window_origin() const { return {row_, col_}; }
    const Tensor& revealed_mask() const { return mask_; }

private:
    Tensor observation() const;
    void reveal();

    const GlyphDataset* data_;
    int64_t window_, move_, max_steps_;
    int64_t image_ = -1, row_ = 0, col_ = 0, steps_ = 0;
    bool done_ = true;
    Tensor mask_;
};

// Feature encodings of tabular states used as model inputs.
struct StateEncoder {
    enum class Kind { onehot, gaussian };
    Kind kind = Kind::onehot;
    int64_t n_states = 0;
    double sigma = 1.0;

    Tensor encode(int64_t state) const;  // [n_states]
    int64_t dim() const { return n_states; }
};

}  // namespace tdlab
