#pragma once

#include <array>
#include <optional>
#include <vector>

#include "exposure/edit_script.hpp"
#include "exposure/filters.hpp"
#include "exposure/image.hpp"
#include "exposure/nn.hpp"
#include "exposure/rng.hpp"

namespace exposure {

inline constexpr int kEpisodeSteps = 5;
// 8 used-filter booleans plus the step fraction.
inline constexpr int kStatePlanes = kFilterCount + 1;

struct AgentConfig {
    int side = 64;
    std::array<int, 4> conv_widths{16, 32, 64, 128};
    int fc_width = 128;
    double dropout = 0.5;
    int steps = kEpisodeSteps;
};

struct AgentState {
    LinearImage image;       // side x side working copy
    LinearImage full_image;  // optional full-resolution copy edited alongside
    std::array<bool, kFilterCount> used{};
    int step_index = 0;
    int total_steps = kEpisodeSteps;

    static AgentState start(const LinearImage& proxy, int total_steps = kEpisodeSteps);
    bool finished() const { return step_index >= total_steps; }
    std::array<double, kStatePlanes> planes() const;
};

// One retouching episode: s_0..s_N, a_0..a_{N-1}, r_0..r_{N-1}.
struct Trajectory {
    std::vector<AgentState> states;
    std::vector<FilterAction> actions;
    std::vector<double> rewards;

    // Discounted returns r^g_k = r_k + gamma * r^g_{k+1}.
    std::vector<double> returns(double gamma = 1.0) const;
};

// The actor (filter selection + per-filter parameter heads) and the value
// network. The parameter heads share one convolutional trunk.
class Actor {
public:
    Actor() = default;
    Actor(const AgentConfig& config, std::uint64_t seed);

    const AgentConfig& config() const { return config_; }

    nn::Network policy1;
    nn::Network policy2_trunk;
    std::vector<nn::Network> policy2_heads;  // indexed by filter
    nn::Network value;

    // Sets every weight and bias to zero (the neutral agent).
    void zero_weights();

    void store(nn::Checkpoint& ckpt) const;
    static Actor from_checkpoint(const nn::Checkpoint& ckpt);

private:
    AgentConfig config_;
};

nn::Tensor state_input(const AgentState& state, int side);

struct Policy1Eval {
    std::array<double, kFilterCount> probs{};
    nn::Tape tape;
};
Policy1Eval policy1_distribution(const nn::Network& net, const AgentState& state, Rng* dropout_rng);

std::size_t sample_filter(std::span<const double> dist, Rng& rng);
std::size_t greedy_filter(std::span<const double> dist);

struct Policy2Eval {
    std::vector<double> raw;  // tanh outputs in (-1, 1)
    nn::Tape trunk_tape;
    nn::Tape head_tape;
};
Policy2Eval policy2_params(const nn::Network& trunk, const nn::Network& head, const AgentState& state,
                           Rng* dropout_rng);

struct ValueEval {
    double value = 0.0;
    nn::Tape tape;
};
ValueEval state_value(const nn::Network& net, const AgentState& state, Rng* dropout_rng);

// delta = r + gamma * V(s') * (1 - terminal) - V(s)
double td_error(double reward, double v_s, double v_next, bool terminal, double gamma = 1.0);

// Ascent direction advantage * grad log pi1(a1 | s).
std::vector<double> policy1_gradient(const nn::Network& net, const Policy1Eval& eval, std::size_t action,
                                     double advantage);

struct Policy2Gradient {
    std::vector<double> trunk;
    std::vector<double> head;
};
// Ascent direction dQ/da2 . d pi2 / d theta2 through the tanh head.
Policy2Gradient policy2_gradient(const nn::Network& trunk, const nn::Network& head, const Policy2Eval& eval,
                                 std::span<const double> dq_da2);

// Applies an action to a state: edits the proxy (and full image when
// present), marks the filter used, advances the step counter.
AgentState advance(const AgentState& state, const FilterAction& action);

struct EpisodeOptions {
    bool sample = false;    // sample pi1 instead of taking the argmax
    bool dropout = true;    // keep dropout at inference time
};

// Runs a full episode with the actor and returns the edit script; the final
// state (with the full-resolution image if provided) is written to `final_state`.
EditScript run_episode(const Actor& actor, const AgentState& start, Rng& rng, const EpisodeOptions& options,
                       AgentState* final_state = nullptr);

}  // namespace exposure
