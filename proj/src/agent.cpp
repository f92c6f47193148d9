#include "exposure/agent.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "exposure/error.hpp"

namespace exposure {

AgentState AgentState::start(const LinearImage& proxy, int total_steps) {
    AgentState s;
    s.image = proxy;
    s.total_steps = total_steps;
    return s;
}

std::array<double, kStatePlanes> AgentState::planes() const {
    std::array<double, kStatePlanes> p{};
    for (int k = 0; k < kFilterCount; ++k) p[k] = used[k] ? 1.0 : 0.0;
    p[kFilterCount] = static_cast<double>(step_index) / static_cast<double>(total_steps);
    return p;
}

std::vector<double> Trajectory::returns(double gamma) const {
    std::vector<double> g(rewards.size());
    double acc = 0.0;
    for (std::size_t k = rewards.size(); k-- > 0;) {
        acc = rewards[k] + gamma * acc;
        g[k] = acc;
    }
    return g;
}

namespace {

nn::BackboneConfig backbone_for(const AgentConfig& c, int outputs) {
    nn::BackboneConfig b;
    b.in_channels = 3 + kStatePlanes;
    b.side = c.side;
    b.conv_widths = c.conv_widths;
    b.fc_width = c.fc_width;
    b.dropout = c.dropout;
    b.outputs = outputs;
    return b;
}

nn::Network make_head(int fc_width, int outputs, std::uint64_t seed) {
    return nn::Network({fc_width}, {{nn::LayerKind::Dense, fc_width, outputs, 0.0}}, seed);
}

std::string head_tag(FilterKind kind) { return "policy2.head." + std::string(filter_name(kind)); }

}  // namespace

Actor::Actor(const AgentConfig& config, std::uint64_t seed) : config_(config) {
    Rng seeds(seed);
    policy1 = nn::make_backbone(backbone_for(config, kFilterCount), seeds.next_u64());
    policy2_trunk = nn::make_backbone(backbone_for(config, 0), seeds.next_u64(), /*with_head=*/false);
    for (FilterKind kind : kAllFilters) policy2_heads.push_back(make_head(config.fc_width, arity(kind), seeds.next_u64()));
    value = nn::make_backbone(backbone_for(config, 1), seeds.next_u64());
}

void Actor::zero_weights() {
    for (nn::Network* net : {&policy1, &policy2_trunk, &value}) std::ranges::fill(net->mutable_params(), 0.0);
    for (auto& head : policy2_heads) std::ranges::fill(head.mutable_params(), 0.0);
}

void Actor::store(nn::Checkpoint& ckpt) const {
    ckpt.put("policy1", policy1);
    ckpt.put("policy2.trunk", policy2_trunk);
    for (FilterKind kind : kAllFilters) ckpt.put(head_tag(kind), policy2_heads[index_of(kind)]);
    ckpt.put("value", value);
}

Actor Actor::from_checkpoint(const nn::Checkpoint& ckpt) {
    Actor a;
    a.policy1 = ckpt.get("policy1");
    a.policy2_trunk = ckpt.get("policy2.trunk");
    a.value = ckpt.get("value");
    for (FilterKind kind : kAllFilters) a.policy2_heads.push_back(ckpt.get(head_tag(kind)));

    // Recover the configuration from the policy network's layer table.
    const auto& shape = a.policy1.input_shape();
    if (shape.size() != 3 || shape[0] != 3 + kStatePlanes || shape[1] != shape[2])
        throw DataError("checkpoint policy network has an unexpected input shape");
    AgentConfig c;
    c.side = shape[1];
    int conv = 0;
    c.dropout = 0.0;
    for (const auto& l : a.policy1.layers()) {
        if (l.kind == nn::LayerKind::Conv && conv < 4) c.conv_widths[conv++] = l.out;
        if (l.kind == nn::LayerKind::Dropout) c.dropout = l.param;
    }
    const auto dense = std::ranges::find_if(a.policy1.layers(), [](const auto& l) { return l.kind == nn::LayerKind::Dense; });
    if (conv != 4 || dense == a.policy1.layers().end()) throw DataError("checkpoint policy network is not a backbone");
    c.fc_width = dense->out;
    a.config_ = c;

    auto expect = [](const nn::Network& net, const std::vector<nn::LayerSpec>& layers, const char* what) {
        if (net.layers() != layers) throw DataError(std::string("checkpoint architecture mismatch: ") + what);
    };
    expect(a.policy1, nn::backbone_layers(backbone_for(c, kFilterCount)), "policy1");
    expect(a.policy2_trunk, nn::backbone_layers(backbone_for(c, 0), false), "policy2.trunk");
    expect(a.value, nn::backbone_layers(backbone_for(c, 1)), "value");
    for (FilterKind kind : kAllFilters) {
        const auto& head = a.policy2_heads[index_of(kind)];
        if (head.input_shape() != std::vector<int>{c.fc_width} || head.output_size() != static_cast<std::size_t>(arity(kind)))
            throw DataError("checkpoint architecture mismatch: " + head_tag(kind));
    }
    return a;
}

nn::Tensor state_input(const AgentState& state, int side) {
    const auto planes = state.planes();
    return nn::input_with_planes(state.image, planes, side);
}

Policy1Eval policy1_distribution(const nn::Network& net, const AgentState& state, Rng* dropout_rng) {
    if (state.finished()) throw UsageError("finished states take no further actions");
    Policy1Eval e;
    e.tape = net.forward(state_input(state, net.input_shape()[1]), dropout_rng);
    const auto p = nn::softmax(e.tape.output().data);
    std::copy(p.begin(), p.end(), e.probs.begin());
    return e;
}

std::size_t sample_filter(std::span<const double> dist, Rng& rng) { return rng.categorical(dist); }

std::size_t greedy_filter(std::span<const double> dist) {
    return static_cast<std::size_t>(std::distance(dist.begin(), std::max_element(dist.begin(), dist.end())));
}

Policy2Eval policy2_params(const nn::Network& trunk, const nn::Network& head, const AgentState& state,
                           Rng* dropout_rng) {
    if (state.finished()) throw UsageError("finished states take no further actions");
    Policy2Eval e;
    e.trunk_tape = trunk.forward(state_input(state, trunk.input_shape()[1]), dropout_rng);
    e.head_tape = head.forward(e.trunk_tape.output(), nullptr);
    const auto& pre = e.head_tape.output().data;
    e.raw.resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) e.raw[i] = std::tanh(pre[i]);
    return e;
}

ValueEval state_value(const nn::Network& net, const AgentState& state, Rng* dropout_rng) {
    ValueEval e;
    e.tape = net.forward(state_input(state, net.input_shape()[1]), dropout_rng);
    e.value = e.tape.output().data[0];
    return e;
}

double td_error(double reward, double v_s, double v_next, bool terminal, double gamma) {
    return reward + (terminal ? 0.0 : gamma * v_next) - v_s;
}

std::vector<double> policy1_gradient(const nn::Network& net, const Policy1Eval& eval, std::size_t action,
                                     double advantage) {
    // d log softmax(z)_a / dz = onehot(a) - p
    std::vector<double> up(kFilterCount);
    for (std::size_t k = 0; k < up.size(); ++k) up[k] = advantage * ((k == action ? 1.0 : 0.0) - eval.probs[k]);
    return net.backward(eval.tape, up, false).params;
}

Policy2Gradient policy2_gradient(const nn::Network& trunk, const nn::Network& head, const Policy2Eval& eval,
                                 std::span<const double> dq_da2) {
    if (dq_da2.size() != eval.raw.size()) throw UsageError("dQ/da2 arity does not match the parameter head");
    std::vector<double> up(dq_da2.size());
    for (std::size_t i = 0; i < up.size(); ++i) up[i] = dq_da2[i] * (1.0 - eval.raw[i] * eval.raw[i]);
    auto hg = head.backward(eval.head_tape, up, true);
    auto tg = trunk.backward(eval.trunk_tape, hg.input.data, false);
    return {std::move(tg.params), std::move(hg.params)};
}

AgentState advance(const AgentState& state, const FilterAction& action) {
    AgentState next;
    next.image = apply_filter(action, state.image);
    if (!state.full_image.empty()) next.full_image = apply_filter(action, state.full_image);
    next.used = state.used;
    next.used[index_of(action.kind)] = true;
    next.step_index = state.step_index + 1;
    next.total_steps = state.total_steps;
    return next;
}

EditScript run_episode(const Actor& actor, const AgentState& start, Rng& rng, const EpisodeOptions& options,
                       AgentState* final_state) {
    EditScript script;
    AgentState state = start;
    while (!state.finished()) {
        Rng* dropout = options.dropout ? &rng : nullptr;
        const auto p1 = policy1_distribution(actor.policy1, state, dropout);
        const std::size_t choice = options.sample ? sample_filter(p1.probs, rng) : greedy_filter(p1.probs);
        const auto p2 = policy2_params(actor.policy2_trunk, actor.policy2_heads[choice], state, dropout);
        auto action = FilterAction::make(static_cast<FilterKind>(choice), p2.raw);
        state = advance(state, action);
        script.steps.push_back({std::move(action), p1.probs});
    }
    if (final_state != nullptr) *final_state = std::move(state);
    return script;
}

}  // namespace exposure
