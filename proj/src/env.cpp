#include "tdlab/env.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tdlab/rng.hpp"

namespace tdlab {

void ReplayBuffer::push(Transition t) {
    check(capacity == 0 || size() < capacity, "replay buffer is full");
    if (!transitions.empty() && transitions.back().trajectory_id == t.trajectory_id)
        check(t.step_index == transitions.back().step_index + 1,
              "step indices must be contiguous within a trajectory");
    transitions.push_back(std::move(t));
}

std::pair<int64_t, int64_t> ReplayBuffer::trajectory_bounds(int64_t i) const {
    check(i >= 0 && i < size(), "buffer index out of range");
    const int64_t id = transitions[static_cast<size_t>(i)].trajectory_id;
    int64_t lo = i, hi = i + 1;
    while (lo > 0 && transitions[static_cast<size_t>(lo - 1)].trajectory_id == id) --lo;
    while (hi < size() && transitions[static_cast<size_t>(hi)].trajectory_id == id) ++hi;
    return {lo, hi};
}

bool ReplayBuffer::trajectory_terminated(int64_t i) const {
    const auto [lo, hi] = trajectory_bounds(i);
    (void)lo;
    return transitions[static_cast<size_t>(hi - 1)].done;
}

void ReplayBuffer::write_csv(const std::string& path) const {
    std::ofstream os(path);
    check(os.good(), "cannot write " + path);
    os << "trajectory_id,step,state_id_or_image_index,action,reward,done\n";
    char buf[64];
    for (const Transition& t : transitions) {
        std::snprintf(buf, sizeof(buf), "%.17g", t.reward);
        os << t.trajectory_id << "," << t.step_index << "," << t.state << "," << t.action
           << "," << buf << "," << (t.done ? 1 : 0) << "\n";
    }
}

void TabularMDP::validate() const {
    check(n_states >= 1 && n_actions >= 1, "mdp needs at least one state and action");
    check(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
    check(static_cast<int64_t>(terminal.size()) == n_states, "terminal flags sized wrong");
    for (int64_t s = 0; s < n_states; ++s)
        for (int64_t a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            for (int64_t s2 = 0; s2 < n_states; ++s2) {
                const double v = p(s, a, s2);
                check(v >= 0.0, "negative transition probability");
                sum += v;
            }
            check(std::abs(sum - 1.0) <= 1e-12, "transition row does not sum to 1");
            if (terminal[static_cast<size_t>(s)]) {
                check(p(s, a, s) == 1.0, "terminal states must be absorbing");
                check(r(s, a) == 0.0, "terminal states must be reward-free");
            }
        }
}

TabularMDP chain_mdp(int64_t n_states, const std::vector<double>& rewards, double gamma,
                     int64_t n_actions, double slip) {
    check(n_states >= 2, "chain needs at least 2 states");
    check(static_cast<int64_t>(rewards.size()) == n_states, "need one reward per chain state");
    check(n_actions == 1 || n_actions == 2, "chain supports 1 or 2 actions");
    check(slip >= 0.0 && slip <= 1.0, "slip must lie in [0, 1]");

    TabularMDP m;
    m.n_states = n_states + 1;  // plus absorbing terminal
    m.n_actions = n_actions;
    m.gamma = gamma;
    m.P.assign(static_cast<size_t>(m.n_states * m.n_actions * m.n_states), 0.0);
    m.R.assign(static_cast<size_t>(m.n_states * m.n_actions), 0.0);
    m.terminal.assign(static_cast<size_t>(m.n_states), false);
    m.terminal[static_cast<size_t>(n_states)] = true;
    m.start_state = 0;

    const int64_t term = n_states;
    for (int64_t s = 0; s < n_states; ++s) {
        const int64_t fwd = (s + 1 <= n_states) ? s + 1 : term;
        const int64_t back = std::max<int64_t>(s - 1, 0);
        if (n_actions == 1) {
            m.p_ref(s, 0, fwd) += 1.0;
            m.r_ref(s, 0) = rewards[static_cast<size_t>(s)];
        } else {
            // action 1 advances and earns the state reward, action 0 retreats
            m.p_ref(s, 1, fwd) += 1.0 - slip;
            m.p_ref(s, 1, back) += slip;
            m.r_ref(s, 1) = rewards[static_cast<size_t>(s)];
            m.p_ref(s, 0, back) += 1.0 - slip;
            m.p_ref(s, 0, fwd) += slip;
        }
    }
    for (int64_t a = 0; a < n_actions; ++a) m.p_ref(term, a, term) = 1.0;
    m.validate();
    return m;
}

TabularMDP grid_mdp(int64_t width, int64_t height, double gamma) {
    check(width >= 2 && height >= 2, "grid needs at least 2x2 cells");
    TabularMDP m;
    m.n_states = width * height;
    m.n_actions = 4;
    m.gamma = gamma;
    m.P.assign(static_cast<size_t>(m.n_states * 4 * m.n_states), 0.0);
    m.R.assign(static_cast<size_t>(m.n_states * 4), 0.0);
    m.terminal.assign(static_cast<size_t>(m.n_states), false);
    const int64_t goal = m.n_states - 1;
    m.terminal[static_cast<size_t>(goal)] = true;
    m.start_state = 0;

    for (int64_t r = 0; r < height; ++r)
        for (int64_t c = 0; c < width; ++c) {
            const int64_t s = r * width + c;
            if (s == goal) {
                for (int64_t a = 0; a < 4; ++a) m.p_ref(s, a, s) = 1.0;
                continue;
            }
            const int64_t dr[4] = {-1, 1, 0, 0};
            const int64_t dc[4] = {0, 0, -1, 1};
            for (int64_t a = 0; a < 4; ++a) {
                const int64_t nr = std::clamp<int64_t>(r + dr[a], 0, height - 1);
                const int64_t nc = std::clamp<int64_t>(c + dc[a], 0, width - 1);
                const int64_t next = nr * width + nc;
                m.p_ref(s, a, next) = 1.0;
                if (next == goal) m.r_ref(s, a) = 1.0;
            }
        }
    m.validate();
    return m;
}

std::vector<double> dp_policy_evaluation(const TabularMDP& mdp,
                                         const std::vector<double>& policy) {
    mdp.validate();
    check(static_cast<int64_t>(policy.size()) == mdp.n_states * mdp.n_actions,
          "policy has wrong size");
    for (int64_t s = 0; s < mdp.n_states; ++s) {
        double sum = 0.0;
        for (int64_t a = 0; a < mdp.n_actions; ++a) {
            const double v = policy[static_cast<size_t>(s * mdp.n_actions + a)];
            check(v >= 0.0, "policy probabilities must be nonnegative");
            sum += v;
        }
        check(std::abs(sum - 1.0) <= 1e-9, "policy rows must sum to 1");
    }

    std::vector<double> v(static_cast<size_t>(mdp.n_states), 0.0);
    for (;;) {
        double residual = 0.0;
        for (int64_t s = 0; s < mdp.n_states; ++s) {
            if (mdp.terminal[static_cast<size_t>(s)]) continue;
            double nv = 0.0;
            for (int64_t a = 0; a < mdp.n_actions; ++a) {
                const double pa = policy[static_cast<size_t>(s * mdp.n_actions + a)];
                if (pa == 0.0) continue;
                double q = mdp.r(s, a);
                for (int64_t s2 = 0; s2 < mdp.n_states; ++s2) {
                    const double pr = mdp.p(s, a, s2);
                    if (pr != 0.0) q += mdp.gamma * pr * v[static_cast<size_t>(s2)];
                }
                nv += pa * q;
            }
            residual = std::max(residual, std::abs(nv - v[static_cast<size_t>(s)]));
            v[static_cast<size_t>(s)] = nv;
        }
        if (residual < 1e-10) break;
    }
    return v;
}

std::vector<double> value_iteration(const TabularMDP& mdp) {
    mdp.validate();
    std::vector<double> q(static_cast<size_t>(mdp.n_states * mdp.n_actions), 0.0);
    std::vector<double> v(static_cast<size_t>(mdp.n_states), 0.0);
    for (;;) {
        double residual = 0.0;
        for (int64_t s = 0; s < mdp.n_states; ++s) {
            if (mdp.terminal[static_cast<size_t>(s)]) continue;
            for (int64_t a = 0; a < mdp.n_actions; ++a) {
                double nq = mdp.r(s, a);
                for (int64_t s2 = 0; s2 < mdp.n_states; ++s2) {
                    const double pr = mdp.p(s, a, s2);
                    if (pr != 0.0) nq += mdp.gamma * pr * v[static_cast<size_t>(s2)];
                }
                residual = std::max(residual, std::abs(nq - q[static_cast<size_t>(s * mdp.n_actions + a)]));
                q[static_cast<size_t>(s * mdp.n_actions + a)] = nq;
            }
        }
        for (int64_t s = 0; s < mdp.n_states; ++s) {
            if (mdp.terminal[static_cast<size_t>(s)]) continue;
            double best = q[static_cast<size_t>(s * mdp.n_actions)];
            for (int64_t a = 1; a < mdp.n_actions; ++a)
                best = std::max(best, q[static_cast<size_t>(s * mdp.n_actions + a)]);
            v[static_cast<size_t>(s)] = best;
        }
        if (residual < 1e-10) break;
    }
    return q;
}

std::vector<int64_t> greedy_policy(const TabularMDP& mdp, const std::vector<double>& q) {
    std::vector<int64_t> pi(static_cast<size_t>(mdp.n_states), 0);
    for (int64_t s = 0; s < mdp.n_states; ++s) {
        int64_t best = 0;
        for (int64_t a = 1; a < mdp.n_actions; ++a)
            if (q[static_cast<size_t>(s * mdp.n_actions + a)] >
                q[static_cast<size_t>(s * mdp.n_actions + best)])
                best = a;
        pi[static_cast<size_t>(s)] = best;
    }
    return pi;
}

namespace {

int64_t sample_next(const TabularMDP& mdp, int64_t s, int64_t a, double u) {
    double acc = 0.0;
    for (int64_t s2 = 0; s2 < mdp.n_states; ++s2) {
        acc += mdp.p(s, a, s2);
        if (u < acc) return s2;
    }
    return mdp.n_states - 1;
}

}  // namespace

ReplayBuffer make_expert_buffer(const TabularMDP& mdp, const std::vector<double>& q_star,
                                double epsilon, int64_t n_transitions, uint64_t seed,
                                bool complete_episodes) {
    mdp.validate();
    check(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must lie in [0, 1]");
    check(n_transitions >= 1, "need at least one transition");
    check(static_cast<int64_t>(q_star.size()) == mdp.n_states * mdp.n_actions,
          "q table has wrong size");

    const std::vector<int64_t> greedy = greedy_policy(mdp, q_star);
    Rng rng(derive_seed(seed, "expert-buffer"));
    ReplayBuffer buf;
    int64_t traj = 0;
    while (buf.size() < n_transitions) {
        int64_t s = mdp.start_state;
        int64_t step = 0;
        const int64_t episode_cap = 100000;
        while (!mdp.terminal[static_cast<size_t>(s)]) {
            check(step < episode_cap, "episode failed to terminate");
            const int64_t a = (rng.uniform() < epsilon)
                                  ? static_cast<int64_t>(rng.index(static_cast<int>(mdp.n_actions)))
                                  : greedy[static_cast<size_t>(s)];
            const int64_t s2 = sample_next(mdp, s, a, rng.uniform());
            Transition t;
            t.state = s;
            t.action = a;
            t.reward = mdp.r(s, a);
            t.next_state = s2;
            t.done = mdp.terminal[static_cast<size_t>(s2)];
            t.trajectory_id = traj;
            t.step_index = step;
            buf.push(std::move(t));
            s = s2;
            ++step;
            if (!complete_episodes && buf.size() >= n_transitions) break;
        }
        ++traj;
    }
    return buf;
}

double mc_return(const std::vector<Transition>& trajectory, int64_t t, double gamma) {
    check(t >= 0 && t < static_cast<int64_t>(trajectory.size()), "step index out of range");
    check(!trajectory.empty() && trajectory.back().done,
          "mc_return requires a terminated trajectory");
    double g = 0.0;
    double w = 1.0;
    for (size_t k = static_cast<size_t>(t); k < trajectory.size(); ++k) {
        g += w * trajectory[k].reward;
        w *= gamma;
    }
    return g;
}

// ---------------------------------------------------------------------------
// glyph rendering

Tensor GlyphDataset::image(int64_t i) const {
    check(i >= 0 && i < size(), "image index out of range");
    Tensor t = Tensor::zeros({height, width});
    const int64_t n = height * width;
    for (int64_t k = 0; k < n; ++k) t.at(k) = images.at(i * n + k);
    return t;
}

Tensor GlyphDataset::flat_image(int64_t i) const {
    Tensor t = image(i);
    t.shape = {height * width};
    return t;
}

namespace {

struct Canvas {
    Tensor& img;
    double value;
    void set(int64_t r, int64_t c) {
        if (r >= 0 && r < img.shape[0] && c >= 0 && c < img.shape[1]) img.at(r, c) = value;
    }
    void rect(int64_t r0, int64_t c0, int64_t h, int64_t w) {
        for (int64_t r = r0; r < r0 + h; ++r)
            for (int64_t c = c0; c < c0 + w; ++c) set(r, c);
    }
};

void draw_glyph(Tensor& img, int64_t cls, int64_t cr, int64_t cc, double value) {
    Canvas cv{img, value};
    switch (cls % 10) {
        case 0:  // filled square
            cv.rect(cr - 5, cc - 5, 10, 10);
            break;
        case 1:  // vertical bar
            cv.rect(cr - 7, cc - 2, 14, 4);
            break;
        case 2:  // horizontal bar
            cv.rect(cr - 2, cc - 7, 4, 14);
            break;
        case 3:  // cross
            cv.rect(cr - 7, cc - 1, 14, 3);
            cv.rect(cr - 1, cc - 7, 3, 14);
            break;
        case 4:  // X
            for (int64_t d = -7; d <= 7; ++d) {
                cv.set(cr + d, cc + d);
                cv.set(cr + d, cc + d + 1);
                cv.set(cr + d, cc - d);
                cv.set(cr + d, cc - d + 1);
            }
            break;
        case 5:  // square outline
            cv.rect(cr - 6, cc - 6, 2, 12);
            cv.rect(cr + 4, cc - 6, 2, 12);
            cv.rect(cr - 6, cc - 6, 12, 2);
            cv.rect(cr - 6, cc + 4, 12, 2);
            break;
        case 6:  // circle outline
            for (int64_t r = -9; r <= 9; ++r)
                for (int64_t c = -9; c <= 9; ++c) {
                    const double d = std::sqrt(static_cast<double>(r * r + c * c));
                    if (std::abs(d - 7.0) < 1.2) cv.set(cr + r, cc + c);
                }
            break;
        case 7:  // filled circle
            for (int64_t r = -7; r <= 7; ++r)
                for (int64_t c = -7; c <= 7; ++c)
                    if (r * r + c * c <= 36) cv.set(cr + r, cc + c);
            break;
        case 8:  // T
            cv.rect(cr - 7, cc - 7, 3, 14);
            cv.rect(cr - 7, cc - 1, 14, 3);
            break;
        default:  // L
            cv.rect(cr - 7, cc - 7, 14, 3);
            cv.rect(cr + 4, cc - 7, 3, 14);
            break;
    }
}

}  // namespace

GlyphDataset glyph_generate(int64_t n_classes, int64_t n_per_class, uint64_t seed,
                            int64_t width, int64_t height) {
    check(n_classes >= 1, "need at least one class");
    check(n_per_class >= 1, "need at least one example per class");
    check(width >= 24 && height >= 24, "glyph canvas must be at least 24x24");

    GlyphDataset d;
    d.width = width;
    d.height = height;
    d.n_classes = n_classes;
    const int64_t n = n_classes * n_per_class;
    d.images = Tensor::zeros({n, height, width});
    d.labels.resize(static_cast<size_t>(n));

    Rng rng(derive_seed(seed, "glyphs"));
    const int64_t pixels = height * width;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t cls = i % n_classes;
        d.labels[static_cast<size_t>(i)] = cls;
        Tensor img = Tensor::zeros({height, width});
        for (auto& v : img.data) v = rng.uniform(0.0, 0.15);
        const int64_t cr = height / 2 + rng.index(7) - 3;
        const int64_t cc = width / 2 + rng.index(7) - 3;
        draw_glyph(img, cls, cr, cc, rng.uniform(0.75, 1.0));
        for (int64_t k = 0; k < pixels; ++k) d.images.at(i * pixels + k) = img.at(k);
    }
    return d;
}

void assign_split(GlyphDataset& data, int64_t n_train, int64_t n_test) {
    check(n_train >= 1 && n_test >= 1, "split needs at least one seed on each side");
    check(n_train + n_test <= data.size(), "split larger than dataset");
    data.train_seeds.clear();
    data.test_seeds.clear();
    for (int64_t i = 0; i < n_train; ++i) data.train_seeds.push_back(i);
    for (int64_t i = n_train; i < n_train + n_test; ++i) data.test_seeds.push_back(i);
}

void save_glyphs(const std::string& dir, const GlyphDataset& data) {
    std::filesystem::create_directories(dir);
    write_tnsr(dir + "/images.tnsr", data.images);
    Tensor labels = Tensor::zeros({data.size()});
    for (int64_t i = 0; i < data.size(); ++i)
        labels.at(i) = static_cast<double>(data.labels[static_cast<size_t>(i)]);
    write_tnsr(dir + "/labels.tnsr", labels);
    nlohmann::json manifest = {{"width", data.width},
                               {"height", data.height},
                               {"n_classes", data.n_classes},
                               {"train_seeds", data.train_seeds},
                               {"test_seeds", data.test_seeds}};
    std::ofstream os(dir + "/manifest.json");
    check(os.good(), "cannot write dataset manifest");
    os << manifest.dump(2) << "\n";
}

GlyphDataset load_glyphs(const std::string& dir) {
    GlyphDataset d;
    d.images = read_tnsr(dir + "/images.tnsr");
    check(d.images.rank() == 3, "dataset images must be [N, H, W]");
    const Tensor labels = read_tnsr(dir + "/labels.tnsr");
    d.labels.resize(static_cast<size_t>(labels.numel()));
    for (int64_t i = 0; i < labels.numel(); ++i)
        d.labels[static_cast<size_t>(i)] = static_cast<int64_t>(labels.at(i));
    std::ifstream is(dir + "/manifest.json");
    check(is.good(), "cannot read dataset manifest");
    nlohmann::json manifest = nlohmann::json::parse(is);
    d.width = manifest.at("width").get<int64_t>();
    d.height = manifest.at("height").get<int64_t>();
    d.n_classes = manifest.at("n_classes").get<int64_t>();
    d.train_seeds = manifest.at("train_seeds").get<std::vector<int64_t>>();
    d.test_seeds = manifest.at("test_seeds").get<std::vector<int64_t>>();
    return d;
}

RegressionDataset regression_generate(int64_t n_samples, int64_t n_features, uint64_t seed,
                                      double noise_std) {
    check(n_samples >= 1 && n_features >= 1, "regression dataset needs data");
    Rng rng(derive_seed(seed, "regression"));

    const int64_t h = 16;
    std::vector<double> w1(static_cast<size_t>(n_features * h));
    std::vector<double> w2(static_cast<size_t>(h * h));
    std::vector<double> w3(static_cast<size_t>(h));
    for (auto& v : w1) v = rng.normal() * 0.8;
    for (auto& v : w2) v = rng.normal() * 0.5;
    for (auto& v : w3) v = rng.normal() * 0.8;

    RegressionDataset d;
    d.xs = Tensor::zeros({n_samples, n_features});
    d.ys = Tensor::zeros({n_samples, 1});
    std::vector<double> h1(static_cast<size_t>(h)), h2(static_cast<size_t>(h));
    for (int64_t i = 0; i < n_samples; ++i) {
        for (int64_t j = 0; j < n_features; ++j) d.xs.at(i, j) = rng.uniform(-1, 1);
        for (int64_t a = 0; a < h; ++a) {
            double s = 0.0;
            for (int64_t j = 0; j < n_features; ++j)
                s += d.xs.at(i, j) * w1[static_cast<size_t>(j * h + a)];
            h1[static_cast<size_t>(a)] = std::tanh(s);
        }
        for (int64_t a = 0; a < h; ++a) {
            double s = 0.0;
            for (int64_t b = 0; b < h; ++b)
                s += h1[static_cast<size_t>(b)] * w2[static_cast<size_t>(b * h + a)];
            h2[static_cast<size_t>(a)] = std::tanh(s);
        }
        double y = 0.0;
        for (int64_t a = 0; a < h; ++a) y += h2[static_cast<size_t>(a)] * w3[static_cast<size_t>(a)];
        d.ys.at(i, 0) = y + noise_std * rng.normal();
    }
    return d;
}

// ---------------------------------------------------------------------------
// masked-image environment

MaskedImageEnv::MaskedImageEnv(const GlyphDataset* data, int64_t window, int64_t move,
                               int64_t max_steps)
    : data_(data), window_(window), move_(move), max_steps_(max_steps) {
    check(data != nullptr, "environment needs a dataset");
    check(window >= 1 && window <= data->width && window <= data->height, "bad window size");
    check(move >= 1 && max_steps >= 1, "bad move step or horizon");
}

Tensor MaskedImageEnv::reset(int64_t seed_index) {
    check(seed_index >= 0 && seed_index < data_->size(), "seed index out of range");
    image_ = seed_index;
    row_ = (data_->height - window_) / 2;
    col_ = (data_->width - window_) / 2;
    steps_ = 0;
    done_ = false;
    mask_ = Tensor::zeros({data_->height, data_->width});
    reveal();
    return observation();
}

void MaskedImageEnv::reveal() {
    for (int64_t r = row_; r < row_ + window_; ++r)
        for (int64_t c = col_; c < col_ + window_; ++c) mask_.at(r, c) = 1.0;
}

Tensor MaskedImageEnv::observation() const {
    Tensor img = data_->image(image_);
    for (int64_t k = 0; k < img.numel(); ++k) img.at(k) *= mask_.at(k);
    return img;
}

MaskedImageEnv::StepResult MaskedImageEnv::step(int64_t action) {
    check(!done_, "cannot act on a finished episode");
    check(action >= 0 && action < n_actions(), "action out of range");

    double reward = 0.0;
    if (action < 4) {
        const int64_t dr[4] = {-1, 1, 0, 0};
        const int64_t dc[4] = {0, 0, -1, 1};
        row_ = std::clamp<int64_t>(row_ + dr[action] * move_, 0, data_->height - window_);
        col_ = std::clamp<int64_t>(col_ + dc[action] * move_, 0, data_->width - window_);
        reveal();
    } else {
        const int64_t guess = action - 4;
        if (guess == data_->labels[static_cast<size_t>(image_)]) {
            reward = 1.0;
            done_ = true;
        }
    }
    ++steps_;
    if (steps_ >= max_steps_) done_ = true;
    return {observation(), reward, done_};
}

Tensor StateEncoder::encode(int64_t state) const {
    check(n_states >= 1, "encoder not configured");
    check(state >= 0 && state < n_states, "state out of range");
    Tensor t = Tensor::zeros({n_states});
    if (kind == Kind::onehot) {
        t.at(state) = 1.0;
        return t;
    }
    double norm = 0.0;
    for (int64_t i = 0; i < n_states; ++i) {
        const double d = static_cast<double>(i - state);
        const double v = std::exp(-d * d / (2.0 * sigma * sigma));
        t.at(i) = v;
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : t.data) v /= norm;
    return t;
}

}  // namespace tdlab
