#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "exposure/agent.hpp"
#include "exposure/critic.hpp"
#include "exposure/nn.hpp"
#include "exposure/rng.hpp"

namespace exposure {

struct TrainerConfig {
    int batch_size = 64;
    double lr_actor = 1.5e-5;
    double lr_critic = 5e-5;
    double lr_value = 5e-4;
    int n_critic = 5;
    int buffer_capacity = 2048;
    int steps_per_episode = kEpisodeSteps;
    double discount = 1.0;
    double entropy_coefficient = 0.05;
    double reuse_penalty = 1.0;
    double gp_lambda = 10.0;
    std::int64_t total_iterations = 20000;
    std::uint64_t seed = 0;

    // Desk-scale network and bookkeeping knobs.
    int image_side = 64;
    std::array<int, 4> conv_widths{16, 32, 64, 128};
    int fc_width = 128;
    double dropout = 0.5;
    int finished_pool_capacity = 2048;
    std::int64_t checkpoint_every = 1000;
    std::int64_t eval_every = 500;

    void validate() const;

    // Flat "key = value" text; '#' starts a comment; unknown keys rejected.
    static TrainerConfig parse(const std::string& text);
    static TrainerConfig load(const std::filesystem::path& path);
    std::string to_text() const;
};

struct RewardBreakdown {
    double critic_delta = 0.0;
    double entropy_penalty = 0.0;
    double reuse_penalty = 0.0;
    double total = 0.0;
};

// R' = (D(s') - D(s)) - c (log|F| + sum p log p) - [reused] * penalty
RewardBreakdown compute_reward(double d_before, double d_after, std::span<const double> dist, bool reused,
                               double entropy_coefficient = 0.05, double reuse_penalty = 1.0);

// d(entropy penalty)/d logits for a softmax distribution.
std::vector<double> entropy_penalty_logit_gradient(std::span<const double> dist, double entropy_coefficient);

struct TrajectoryBuffer {
    std::vector<AgentState> entries;
    std::deque<LinearImage> finished_pool;  // FIFO of retired final images
    std::size_t finished_pool_capacity = 2048;

    std::size_t capacity() const { return entries.size(); }
    std::size_t finished_count() const;
    void retire(const LinearImage& image);
};

// Uniform sample of `b` distinct slots.
std::vector<std::size_t> buffer_sample(const TrajectoryBuffer& buffer, std::size_t b, Rng& rng);
void buffer_replace(TrajectoryBuffer& buffer, std::span<const std::size_t> slots, std::vector<AgentState> states);

struct IterationStats {
    std::int64_t iteration = 0;
    double critic_loss = 0.0;
    double mean_reward = 0.0;
    double mean_delta_sq = 0.0;
    double mean_entropy_penalty = 0.0;
    std::size_t finished_count = 0;
    int critic_updates = 0;
    int max_trajectory_length = 0;
    std::vector<RewardBreakdown> rewards;  // per stepped sample
    std::vector<bool> reused;

    // iteration, L_w, mean reward, mean delta^2, entropy-penalty mean, finished count
    std::string log_line() const;
};

// One process owning all weights, optimizer states and the trajectory buffer.
class Trainer {
public:
    // `raws` and `targets` are proxies at config.image_side.
    Trainer(const TrainerConfig& config, std::vector<LinearImage> raws, std::vector<LinearImage> targets);

    // One outer iteration: n_critic discriminator updates, then one agent
    // step on a buffer batch with actor and value updates.
    IterationStats iterate();

    const TrainerConfig& config() const { return config_; }
    const TrajectoryBuffer& buffer() const { return buffer_; }
    const Actor& actor() const { return actor_; }
    const nn::Network& critic() const { return critic_; }
    std::int64_t iteration() const { return iteration_; }

    nn::Checkpoint checkpoint() const;

private:
    void update_critic(IterationStats& stats);
    void step_actor(IterationStats& stats);
    const LinearImage& next_raw();

    TrainerConfig config_;
    std::vector<LinearImage> raws_;
    std::vector<LinearImage> targets_;
    Rng rng_;
    Actor actor_;
    nn::Network critic_;
    nn::AdamState opt_policy1_, opt_policy2_trunk_, opt_value_, opt_critic_;
    std::vector<nn::AdamState> opt_heads_;
    TrajectoryBuffer buffer_;
    std::int64_t iteration_ = 0;
};

// Loads every image in a directory and downsamples it to side x side.
std::vector<LinearImage> load_proxies(const std::filesystem::path& dir, int side);

struct TrainOutputs {
    std::filesystem::path checkpoint;
    std::ostream* metrics = nullptr;  // per-iteration tab-separated lines
    std::ostream* progress = nullptr; // periodic human-readable progress
};

// Runs the full training loop and writes the final checkpoint (plus periodic
// ones). Throws NumericError after writing the last good checkpoint when a
// loss turns non-finite.
void train(const TrainerConfig& config, std::vector<LinearImage> raws, std::vector<LinearImage> targets,
           const TrainOutputs& outputs);

}  // namespace exposure
