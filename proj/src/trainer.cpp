#include "exposure/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "exposure/error.hpp"
#include "exposure/evaluator.hpp"

namespace exposure {

// ---------------------------------------------------------------------------
// Config

void TrainerConfig::validate() const {
    auto positive = [](bool ok, const char* what) {
        if (!ok) throw UsageError(std::string("config: ") + what + " must be positive");
    };
    positive(batch_size > 0, "batch_size");
    positive(lr_actor > 0, "lr_actor");
    positive(lr_critic > 0, "lr_critic");
    positive(lr_value > 0, "lr_value");
    positive(n_critic > 0, "n_critic");
    positive(buffer_capacity > 0, "buffer_capacity");
    positive(steps_per_episode > 0, "steps_per_episode");
    positive(discount > 0, "discount");
    positive(entropy_coefficient >= 0, "entropy_coefficient");
    positive(reuse_penalty >= 0, "reuse_penalty");
    positive(gp_lambda >= 0, "gp_lambda");
    positive(total_iterations > 0, "total_iterations");
    positive(image_side >= 16 && image_side % 16 == 0, "image_side (multiple of 16)");
    for (int w : conv_widths) positive(w > 0, "conv widths");
    positive(fc_width > 0, "fc_width");
    positive(finished_pool_capacity > 0, "finished_pool_capacity");
    positive(checkpoint_every > 0, "checkpoint_every");
    positive(eval_every > 0, "eval_every");
    if (dropout < 0.0 || dropout >= 1.0) throw UsageError("config: dropout must be in [0, 1)");
    if (batch_size > buffer_capacity) throw UsageError("config: batch_size exceeds buffer_capacity");
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* begin = value.data();
    const char* end = begin + value.size();
    if constexpr (std::is_floating_point_v<T>) {
        try {
            std::size_t used = 0;
            out = static_cast<T>(std::stod(value, &used));
            if (used != value.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw UsageError("config: bad number for " + key + ": " + value);
        }
    } else {
        const auto res = std::from_chars(begin, end, out);
        if (res.ec != std::errc() || res.ptr != end) throw UsageError("config: bad integer for " + key + ": " + value);
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrainerConfig TrainerConfig::parse(const std::string& text) {
    TrainerConfig c;
    std::map<std::string, std::function<void(const std::string&)>> setters;
    auto num = [&](const char* key, auto& field) {
        setters[key] = [&field, key](const std::string& v) {
            field = parse_number<std::remove_reference_t<decltype(field)>>(key, v);
        };
    };
    num("batch_size", c.batch_size);
    num("lr_actor", c.lr_actor);
    num("lr_critic", c.lr_critic);
    num("lr_value", c.lr_value);
    num("n_critic", c.n_critic);
    num("buffer_capacity", c.buffer_capacity);
    num("steps_per_episode", c.steps_per_episode);
    num("discount", c.discount);
    num("entropy_coefficient", c.entropy_coefficient);
    num("reuse_penalty", c.reuse_penalty);
    num("gp_lambda", c.gp_lambda);
    num("total_iterations", c.total_iterations);
    num("seed", c.seed);
    num("image_side", c.image_side);
    num("conv1", c.conv_widths[0]);
    num("conv2", c.conv_widths[1]);
    num("conv3", c.conv_widths[2]);
    num("conv4", c.conv_widths[3]);
    num("fc_width", c.fc_width);
    num("dropout", c.dropout);
    num("finished_pool_capacity", c.finished_pool_capacity);
    num("checkpoint_every", c.checkpoint_every);
    num("eval_every", c.eval_every);

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) throw UsageError("config: unknown key '" + key + "'");
        it->second(value);
    }
    if (c.steps_per_episode != kEpisodeSteps)
        throw UsageError("config: steps_per_episode is fixed at " + std::to_string(kEpisodeSteps));
    c.validate();
    return c;
}

TrainerConfig TrainerConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string TrainerConfig::to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "batch_size = " << batch_size << "\nlr_actor = " << lr_actor << "\nlr_critic = " << lr_critic
        << "\nlr_value = " << lr_value << "\nn_critic = " << n_critic << "\nbuffer_capacity = " << buffer_capacity
        << "\nsteps_per_episode = " << steps_per_episode << "\ndiscount = " << discount
        << "\nentropy_coefficient = " << entropy_coefficient << "\nreuse_penalty = " << reuse_penalty
        << "\ngp_lambda = " << gp_lambda << "\ntotal_iterations = " << total_iterations << "\nseed = " << seed
        << "\nimage_side = " << image_side << "\nconv1 = " << conv_widths[0] << "\nconv2 = " << conv_widths[1]
        << "\nconv3 = " << conv_widths[2] << "\nconv4 = " << conv_widths[3] << "\nfc_width = " << fc_width
        << "\ndropout = " << dropout << "\nfinished_pool_capacity = " << finished_pool_capacity
        << "\ncheckpoint_every = " << checkpoint_every << "\neval_every = " << eval_every << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Rewards

RewardBreakdown compute_reward(double d_before, double d_after, std::span<const double> dist, bool reused,
                               double entropy_coefficient, double reuse_penalty) {
    RewardBreakdown r;
    r.critic_delta = d_after - d_before;
    double plogp = 0.0;
    for (double p : dist)
        if (p > 0.0) plogp += p * std::log(p);
    r.entropy_penalty = -entropy_coefficient * (std::log(static_cast<double>(dist.size())) + plogp);
    r.reuse_penalty = reused ? -reuse_penalty : 0.0;
    r.total = r.critic_delta + r.entropy_penalty + r.reuse_penalty;
    return r;
}

std::vector<double> entropy_penalty_logit_gradient(std::span<const double> dist, double c) {
    // penalty = -c (log n + sum p log p); d/dp_i = -c (log p_i + 1)
    std::vector<double> dp(dist.size());
    for (std::size_t i = 0; i < dist.size(); ++i) dp[i] = dist[i] > 0.0 ? -c * (std::log(dist[i]) + 1.0) : 0.0;
    return nn::softmax_backward(dist, dp);
}

// ---------------------------------------------------------------------------
// Buffer

std::size_t TrajectoryBuffer::finished_count() const {
    return static_cast<std::size_t>(std::ranges::count_if(entries, [](const AgentState& s) { return s.finished(); }));
}

void TrajectoryBuffer::retire(const LinearImage& image) {
    finished_pool.push_back(image);
    while (finished_pool.size() > finished_pool_capacity) finished_pool.pop_front();
}

std::vector<std::size_t> buffer_sample(const TrajectoryBuffer& buffer, std::size_t b, Rng& rng) {
    const std::size_t n = buffer.capacity();
    if (b > n) throw UsageError("batch larger than trajectory buffer");
    // Partial Fisher-Yates over slot indices.
    std::vector<std::size_t> slots(n);
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    for (std::size_t i = 0; i < b; ++i) std::swap(slots[i], slots[i + rng.index(n - i)]);
    slots.resize(b);
    return slots;
}

void buffer_replace(TrajectoryBuffer& buffer, std::span<const std::size_t> slots, std::vector<AgentState> states) {
    if (slots.size() != states.size()) throw UsageError("slot/state count mismatch");
    for (std::size_t i = 0; i < slots.size(); ++i) buffer.entries.at(slots[i]) = std::move(states[i]);
}

std::string IterationStats::log_line() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld\t%.9g\t%.9g\t%.9g\t%.9g\t%zu", static_cast<long long>(iteration),
                  critic_loss, mean_reward, mean_delta_sq, mean_entropy_penalty, finished_count);
    return buf;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

AgentConfig agent_config(const TrainerConfig& c) {
    AgentConfig a;
    a.side = c.image_side;
    a.conv_widths = c.conv_widths;
    a.fc_width = c.fc_width;
    a.dropout = c.dropout;
    a.steps = c.steps_per_episode;
    return a;
}

CriticConfig critic_config(const TrainerConfig& c) {
    CriticConfig k;
    k.side = c.image_side;
    k.conv_widths = c.conv_widths;
    k.fc_width = c.fc_width;
    return k;
}

void add_scaled(std::vector<double>& acc, const std::vector<double>& g, double scale) {
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += scale * g[i];
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

}  // namespace

Trainer::Trainer(const TrainerConfig& config, std::vector<LinearImage> raws, std::vector<LinearImage> targets)
    : config_(config), raws_(std::move(raws)), targets_(std::move(targets)), rng_(config.seed) {
    config_.validate();
    if (raws_.empty() || targets_.empty()) throw DataError("training needs non-empty raw and target sets");
    for (const auto* set : {&raws_, &targets_})
        for (const auto& img : *set)
            if (img.width() != config_.image_side || img.height() != config_.image_side)
                throw DataError("training images must be proxies of side " + std::to_string(config_.image_side));

    Rng seeds(config_.seed ^ 0x9E3779B97F4A7C15ULL);
    actor_ = Actor(agent_config(config_), seeds.next_u64());
    critic_ = make_critic(critic_config(config_), seeds.next_u64());

    const auto total = config_.total_iterations;
    opt_policy1_ = nn::AdamState(actor_.policy1.param_count(), config_.lr_actor, total);
    opt_policy2_trunk_ = nn::AdamState(actor_.policy2_trunk.param_count(), config_.lr_actor, total);
    for (const auto& head : actor_.policy2_heads) opt_heads_.emplace_back(head.param_count(), config_.lr_actor, total);
    opt_value_ = nn::AdamState(actor_.value.param_count(), config_.lr_value, total);
    opt_critic_ = nn::AdamState(critic_.param_count(), config_.lr_critic, total);

    // Initialize the trajectory buffer with raw images.
    buffer_.finished_pool_capacity = static_cast<std::size_t>(config_.finished_pool_capacity);
    buffer_.entries.reserve(static_cast<std::size_t>(config_.buffer_capacity));
    for (int i = 0; i < config_.buffer_capacity; ++i)
        buffer_.entries.push_back(AgentState::start(next_raw(), config_.steps_per_episode));
}

const LinearImage& Trainer::next_raw() { return raws_[rng_.index(raws_.size())]; }

void Trainer::update_critic(IterationStats& stats) {
    const auto b = static_cast<std::size_t>(config_.batch_size);
    double loss_sum = 0.0;
    for (int i = 0; i < config_.n_critic; ++i) {
        CriticBatch batch;
        for (std::size_t k = 0; k < b; ++k) {
            // Retired final images; until enough exist, in-flight buffer states.
            if (buffer_.finished_pool.size() >= b) {
                batch.generated.push_back(&buffer_.finished_pool[rng_.index(buffer_.finished_pool.size())]);
            } else {
                batch.generated.push_back(&buffer_.entries[rng_.index(buffer_.capacity())].image);
            }
            batch.targets.push_back(&targets_[rng_.index(targets_.size())]);
            batch.interpolation.push_back(rng_.uniform());
        }
        const auto loss = critic_loss(critic_, batch, config_.gp_lambda);
        check_finite(loss.loss, "critic loss");
        nn::adam_step(opt_critic_, critic_.mutable_params(), loss.grads, iteration_);
        loss_sum += loss.loss;
        ++stats.critic_updates;
    }
    stats.critic_loss = loss_sum / config_.n_critic;
}

void Trainer::step_actor(IterationStats& stats) {
    const auto b = static_cast<std::size_t>(config_.batch_size);
    const auto slots = buffer_sample(buffer_, b, rng_);

    // Evict finished trajectories (in slot order) and start fresh ones.
    std::vector<AgentState> batch;
    batch.reserve(b);
    for (std::size_t slot : slots) {
        const AgentState& s = buffer_.entries[slot];
        if (s.finished()) {
            buffer_.retire(s.image);
            batch.push_back(AgentState::start(next_raw(), config_.steps_per_episode));
        } else {
            batch.push_back(s);
        }
    }

    std::vector<double> g_policy1(actor_.policy1.param_count(), 0.0);
    std::vector<double> g_trunk(actor_.policy2_trunk.param_count(), 0.0);
    std::vector<std::vector<double>> g_heads;
    for (const auto& head : actor_.policy2_heads) g_heads.emplace_back(head.param_count(), 0.0);
    std::vector<double> g_value(actor_.value.param_count(), 0.0);

    const double inv_b = 1.0 / static_cast<double>(b);
    const double gamma = config_.discount;
    const double one = 1.0;
    const std::size_t area = static_cast<std::size_t>(config_.image_side) * config_.image_side;
    std::vector<AgentState> stepped;
    stepped.reserve(b);
    double reward_sum = 0.0, delta_sq_sum = 0.0, entropy_sum = 0.0;

    for (const AgentState& s : batch) {
        const auto p1 = policy1_distribution(actor_.policy1, s, &rng_);
        const std::size_t a1 = sample_filter(p1.probs, rng_);
        const auto& head = actor_.policy2_heads[a1];
        const auto p2 = policy2_params(actor_.policy2_trunk, head, s, &rng_);
        const auto action = FilterAction::make(static_cast<FilterKind>(a1), p2.raw);
        AgentState next = advance(s, action);
        const bool terminal = next.finished();

        const double d_before = score(critic_, s.image);
        const double d_after = score(critic_, next.image);
        const bool reused = s.used[a1];
        const auto reward = compute_reward(d_before, d_after, p1.probs, reused, config_.entropy_coefficient,
                                           config_.reuse_penalty);

        const auto v_s = state_value(actor_.value, s, &rng_);
        const auto v_next = state_value(actor_.value, next, &rng_);
        const double delta = td_error(reward.total, v_s.value, v_next.value, terminal, gamma);
        check_finite(delta, "TD error");

        // pi1: advantage-weighted score function plus the entropy term's
        // direct dependence on the logits.
        std::vector<double> up1(kFilterCount);
        const auto ent = entropy_penalty_logit_gradient(p1.probs, config_.entropy_coefficient);
        for (std::size_t k = 0; k < up1.size(); ++k)
            up1[k] = delta * ((k == a1 ? 1.0 : 0.0) - p1.probs[k]) + ent[k];
        add_scaled(g_policy1, actor_.policy1.backward(p1.tape, up1, false).params, -inv_b);

        // pi2: dQ/da2 with Q = r + gamma V(s'), differentiated through the filter.
        std::vector<double> dq_dimage = score_input_gradient(critic_, next.image);
        if (!terminal) {
            const auto vg = actor_.value.backward(v_next.tape, std::span<const double>(&one, 1), true, false);
            for (std::size_t i = 0; i < area; ++i)
                for (int c = 0; c < 3; ++c) dq_dimage[3 * i + c] += gamma * vg.input.data[c * area + i];
        }
        const auto fg = filter_vjp(action, s.image, dq_dimage);
        const auto g2 = policy2_gradient(actor_.policy2_trunk, head, p2, fg.grad_raw);
        add_scaled(g_trunk, g2.trunk, -inv_b);
        add_scaled(g_heads[a1], g2.head, -inv_b);

        // Value: semi-gradient of 1/2 delta^2 is -delta dV(s)/dnu.
        add_scaled(g_value, actor_.value.backward(v_s.tape, std::span<const double>(&one, 1), false).params,
                   -delta * inv_b);

        reward_sum += reward.total;
        delta_sq_sum += delta * delta;
        entropy_sum += reward.entropy_penalty;
        stats.rewards.push_back(reward);
        stats.reused.push_back(reused);
        stats.max_trajectory_length = std::max(stats.max_trajectory_length, next.step_index);
        stepped.push_back(std::move(next));
    }

    nn::adam_step(opt_policy1_, actor_.policy1.mutable_params(), g_policy1, iteration_);
    nn::adam_step(opt_policy2_trunk_, actor_.policy2_trunk.mutable_params(), g_trunk, iteration_);
    for (std::size_t k = 0; k < g_heads.size(); ++k)
        nn::adam_step(opt_heads_[k], actor_.policy2_heads[k].mutable_params(), g_heads[k], iteration_);
    nn::adam_step(opt_value_, actor_.value.mutable_params(), g_value, iteration_);

    buffer_replace(buffer_, slots, std::move(stepped));
    stats.mean_reward = reward_sum * inv_b;
    stats.mean_delta_sq = delta_sq_sum * inv_b;
    stats.mean_entropy_penalty = entropy_sum * inv_b;
}

IterationStats Trainer::iterate() {
    IterationStats stats;
    stats.iteration = iteration_;
    update_critic(stats);
    step_actor(stats);
    stats.finished_count = buffer_.finished_count();
    ++iteration_;
    return stats;
}

nn::Checkpoint Trainer::checkpoint() const {
    nn::Checkpoint ckpt;
    actor_.store(ckpt);
    ckpt.put("critic", critic_);
    return ckpt;
}

std::vector<LinearImage> load_proxies(const std::filesystem::path& dir, int side) {
    const auto files = list_images(dir);
    if (files.empty()) throw DataError("no images in " + dir.string());
    std::vector<LinearImage> out;
    out.reserve(files.size());
    for (const auto& f : files) {
        const auto img = load_image(f);
        out.push_back(img.width() == side && img.height() == side ? img : downsample(img, side));
    }
    return out;
}

void train(const TrainerConfig& config, std::vector<LinearImage> raws, std::vector<LinearImage> targets,
           const TrainOutputs& outputs) {
    if (raws.size() < static_cast<std::size_t>(config.batch_size) ||
        targets.size() < static_cast<std::size_t>(config.batch_size)) {
        // Every iteration samples whole batches from both sets.
        throw DataError("raw and target sets need at least batch_size images each");
    }
    // Monitoring slice (the first training images) for periodic evaluation.
    const std::size_t slice = std::min<std::size_t>(32, raws.size());
    std::vector<LinearImage> eval_raws(raws.begin(), raws.begin() + static_cast<std::ptrdiff_t>(slice));
    std::vector<LinearImage> eval_targets(targets.begin(),
                                          targets.begin() + static_cast<std::ptrdiff_t>(std::min(slice, targets.size())));

    Trainer trainer(config, std::move(raws), std::move(targets));
    nn::Checkpoint last_good = trainer.checkpoint();
    for (std::int64_t it = 0; it < config.total_iterations; ++it) {
        IterationStats stats;
        try {
            stats = trainer.iterate();
        } catch (const NumericError&) {
            if (!outputs.checkpoint.empty()) last_good.save(outputs.checkpoint);
            throw;
        }
        if (outputs.metrics != nullptr) *outputs.metrics << stats.log_line() << '\n';
        const bool last = it + 1 == config.total_iterations;
        if ((it + 1) % config.checkpoint_every == 0 || last) {
            last_good = trainer.checkpoint();
            if (!outputs.checkpoint.empty()) last_good.save(outputs.checkpoint);
        }
        if (outputs.progress != nullptr && ((it + 1) % config.eval_every == 0 || last)) {
            Rng eval_rng(config.seed + 1);
            std::vector<LinearImage> edited;
            for (const auto& img : eval_raws) {
                AgentState fin;
                run_episode(trainer.actor(), AgentState::start(img, config.steps_per_episode), eval_rng, {}, &fin);
                edited.push_back(fin.image);
            }
            const auto report = evaluate_images(edited, eval_targets, config.seed);
            char buf[160];
            std::snprintf(buf, sizeof buf, "iter %lld  L_w %.4f  reward %.4f  lum %.1f%%  cst %.1f%%  sat %.1f%%\n",
                          static_cast<long long>(it + 1), stats.critic_loss, stats.mean_reward, report.luminance,
                          report.contrast, report.saturation);
            *outputs.progress << buf << std::flush;
        }
    }
}

}  // namespace exposure
