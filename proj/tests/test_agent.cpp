#include <doctest.h>

#include <cmath>

#include "exposure/agent.hpp"
#include "exposure/critic.hpp"
#include "exposure/error.hpp"
#include "test_support.hpp"

using namespace exposure;
using exposure::testing::random_image;
using exposure::testing::random_vector;
using exposure::testing::relative_error;

namespace {

AgentConfig tiny_config(double dropout = 0.0) {
    AgentConfig c;
    c.side = 16;
    c.conv_widths = {2, 3, 3, 4};
    c.fc_width = 6;
    c.dropout = dropout;
    return c;
}

}  // namespace

TEST_CASE("zero-weight actor is neutral") {
    Actor actor(tiny_config(0.5), 3);
    actor.zero_weights();
    Rng rng(1);
    const auto start = AgentState::start(random_image(16, 16, rng));
    const auto p1 = policy1_distribution(actor.policy1, start, &rng);
    for (double p : p1.probs) CHECK(p == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(state_value(actor.value, start, &rng).value == 0.0);
    for (FilterKind kind : kAllFilters) {
        const auto p2 = policy2_params(actor.policy2_trunk, actor.policy2_heads[index_of(kind)], start, &rng);
        REQUIRE(p2.raw.size() == static_cast<std::size_t>(arity(kind)));
        for (double r : p2.raw) CHECK(r == 0.0);
        const auto next = advance(start, FilterAction::make(kind, p2.raw));
        for (std::size_t i = 0; i < next.image.data().size(); ++i)
            CHECK(std::abs(next.image.data()[i] - start.image.data()[i]) < 1e-6);
    }
}

TEST_CASE("episode bookkeeping") {
    Actor actor(tiny_config(0.5), 17);
    Rng rng(2);
    AgentState start = AgentState::start(random_image(16, 16, rng));
    start.full_image = random_image(40, 30, rng);
    AgentState last;
    const auto script = run_episode(actor, start, rng, {.sample = true}, &last);
    REQUIRE(script.steps.size() == static_cast<std::size_t>(kEpisodeSteps));
    CHECK(last.finished());
    CHECK(last.step_index == kEpisodeSteps);
    CHECK(last.full_image.width() == 40);

    std::array<bool, kFilterCount> used{};
    AgentState s = start;
    for (const auto& step : script.steps) {
        const auto planes = s.planes();
        for (int k = 0; k < kFilterCount; ++k) CHECK((planes[k] == 1.0) == used[k]);
        CHECK(planes[kFilterCount] == doctest::Approx(static_cast<double>(s.step_index) / kEpisodeSteps));
        s = advance(s, step.action);
        used[index_of(step.action.kind)] = true;
        CHECK(s.used == used);
        REQUIRE(step.probabilities.has_value());
        double sum = 0;
        for (double p : *step.probabilities) sum += p;
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    CHECK(s.image == last.image);
    CHECK(script.apply(start.full_image) == last.full_image);
    CHECK_THROWS_AS(policy1_distribution(actor.policy1, last, &rng), UsageError);

    // Same dropout seed: same argmax and same parameters.
    Rng r1(5), r2(5);
    const auto a = policy1_distribution(actor.policy1, start, &r1);
    const auto b = policy1_distribution(actor.policy1, start, &r2);
    CHECK(greedy_filter(a.probs) == greedy_filter(b.probs));
    CHECK(a.probs == b.probs);
    const auto c = policy2_params(actor.policy2_trunk, actor.policy2_heads[7], start, &r1);
    const auto d = policy2_params(actor.policy2_trunk, actor.policy2_heads[7], start, &r2);
    CHECK(c.raw == d.raw);
    CHECK(state_value(actor.value, start, &r1).value == state_value(actor.value, start, &r2).value);
}

TEST_CASE("policy2 outputs are strictly bounded") {
    Actor actor(tiny_config(), 23);
    // Inflate the heads so tanh saturates hard.
    for (auto& head : actor.policy2_heads)
        for (auto& w : head.mutable_params()) w *= 3.0;
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = AgentState::start(random_image(16, 16, rng));
        for (const auto& head : actor.policy2_heads)
            for (double r : policy2_params(actor.policy2_trunk, head, s, nullptr).raw) CHECK(std::abs(r) < 1.0);
    }
}

TEST_CASE("sample_filter") {
    Rng rng(99);
    std::array<double, kFilterCount> one_hot{};
    one_hot[5] = 1.0;
    for (int i = 0; i < 1000; ++i) CHECK(sample_filter(one_hot, rng) == 5);

    std::array<double, kFilterCount> uniform{};
    uniform.fill(0.125);
    std::array<int, kFilterCount> counts{};
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[sample_filter(uniform, rng)];
    for (int c : counts) CHECK(std::abs(c / static_cast<double>(n) - 0.125) < 0.01);

    Rng a(4), b(4);
    for (int i = 0; i < 100; ++i) CHECK(sample_filter(uniform, a) == sample_filter(uniform, b));
}

TEST_CASE("td_error and returns") {
    CHECK(td_error(1.0, 0.0, 0.0, false) == 1.0);
    CHECK(td_error(0.5, 2.0, 7.0, true) == -1.5);
    CHECK(td_error(0.5, 2.0, 7.0, false) == 5.5);

    Rng rng(3);
    Trajectory t;
    t.rewards = random_vector(kEpisodeSteps, rng);
    const auto g = t.returns();
    for (int k = 0; k + 1 < kEpisodeSteps; ++k) CHECK(g[k] == t.rewards[k] + g[k + 1]);
    CHECK(g.back() == t.rewards.back());
    const auto half = t.returns(0.5);
    for (int k = 0; k + 1 < kEpisodeSteps; ++k) CHECK(half[k] == doctest::Approx(t.rewards[k] + 0.5 * half[k + 1]));
}

TEST_CASE("policy1 gradient") {
    Actor actor(tiny_config(), 31);
    Rng rng(6);
    const auto s = AgentState::start(random_image(16, 16, rng));
    const auto eval = policy1_distribution(actor.policy1, s, nullptr);

    for (double v : policy1_gradient(actor.policy1, eval, 2, 0.0)) CHECK(v == 0.0);

    // Closed form: delta * (onehot - p) pushed through the softmax logits.
    std::vector<double> up(kFilterCount);
    for (int k = 0; k < kFilterCount; ++k) up[k] = 0.7 * ((k == 3) - eval.probs[k]);
    const auto expect = actor.policy1.backward(eval.tape, up, false).params;
    const auto got = policy1_gradient(actor.policy1, eval, 3, 0.7);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));

    // Finite differences of delta * log pi1(a | s).
    auto net = actor.policy1;
    const auto log_pi = [&](const nn::Network& n) {
        return 0.7 * std::log(policy1_distribution(n, s, nullptr).probs[3]);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < net.param_count(); i += 7) {
        const double w0 = net.params()[i];
        net.mutable_params()[i] = w0 + 1e-5;
        const double up_v = log_pi(net);
        net.mutable_params()[i] = w0 - 1e-5;
        const double down_v = log_pi(net);
        net.mutable_params()[i] = w0;
        worst = std::max(worst, relative_error(got[i], (up_v - down_v) / 2e-5, 1e-6));
    }
    CHECK(worst < 1e-4);

    // A small ascent step raises the chosen probability when delta > 0.
    auto stepped = actor.policy1;
    auto w = stepped.mutable_params();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += 1e-3 * got[i];
    CHECK(policy1_distribution(stepped, s, nullptr).probs[3] > eval.probs[3]);
}

TEST_CASE("score function identity by Monte Carlo") {
    Actor actor(tiny_config(), 41);
    // Sharpen the policy so the distribution is far from uniform.
    for (auto& w : actor.policy1.mutable_params()) w *= 4.0;
    Rng rng(12);
    const auto s = AgentState::start(random_image(16, 16, rng));
    const auto eval = policy1_distribution(actor.policy1, s, nullptr);
    const auto direction = random_vector(actor.policy1.param_count(), rng);

    const int n = 20000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto a = sample_filter(eval.probs, rng);
        const double proj = exposure::testing::dot(direction, policy1_gradient(actor.policy1, eval, a, 1.0));
        sum += proj;
        sum_sq += proj * proj;
    }
    const double mean = sum / n;
    const double sigma = std::sqrt((sum_sq / n - mean * mean) / n);
    CHECK(sigma > 0.0);
    CHECK(std::abs(mean) <= 3.0 * sigma);
}

TEST_CASE("policy2 gradient") {
    Actor actor(tiny_config(), 55);
    Rng rng(14);
    const auto s = AgentState::start(random_image(16, 16, rng, 0.05, 0.6));
    const auto& head = actor.policy2_heads[index_of(FilterKind::WhiteBalance)];
    const auto eval = policy2_params(actor.policy2_trunk, head, s, nullptr);

    const auto zero = policy2_gradient(actor.policy2_trunk, head, eval, std::vector<double>(3, 0.0));
    for (double v : zero.trunk) CHECK(v == 0.0);
    for (double v : zero.head) CHECK(v == 0.0);
    CHECK_THROWS_AS(policy2_gradient(actor.policy2_trunk, head, eval, std::vector<double>(2, 1.0)), UsageError);

    // Q = a2[0] through a linear head (tanh'(z) folded in): the head weight
    // gradient is the trunk activation vector times tanh'.
    const auto g = policy2_gradient(actor.policy2_trunk, head, eval, std::vector<double>{1.0, 0.0, 0.0});
    const auto& features = eval.trunk_tape.output().data;
    const double slope = 1.0 - eval.raw[0] * eval.raw[0];
    for (std::size_t j = 0; j < features.size(); ++j) CHECK(g.head[j] == doctest::Approx(slope * features[j]));
}

TEST_CASE("policy2 full chain through filter and critic matches finite differences") {
    // Four stride-2 convolutions need at least a 16x16 proxy.
    const int side = 16;
    Actor actor(tiny_config(), 77);
    const auto critic = make_critic({.side = side, .conv_widths = {2, 2, 3, 3}, .fc_width = 5}, 78);
    Rng rng(15);

    for (FilterKind kind : {FilterKind::Exposure, FilterKind::WhiteBalance, FilterKind::Contrast, FilterKind::Tone}) {
        CAPTURE(filter_name(kind));
        AgentState s = AgentState::start(random_image(side, side, rng, 0.05, 0.7));
        s.used[index_of(FilterKind::Gamma)] = true;
        s.step_index = 1;
        auto trunk = actor.policy2_trunk;
        auto head = actor.policy2_heads[index_of(kind)];

        // Q(theta2) = D(s') + V(s') with s' = advance(s, pi2(s)).
        const auto q = [&](const nn::Network& t, const nn::Network& h) {
            const auto e = policy2_params(t, h, s, nullptr);
            const auto next = advance(s, FilterAction::make(kind, e.raw));
            return score(critic, next.image) + state_value(actor.value, next, nullptr).value;
        };

        const auto eval = policy2_params(trunk, head, s, nullptr);
        const auto action = FilterAction::make(kind, eval.raw);
        const auto next = advance(s, action);
        auto dq_dimage = score_input_gradient(critic, next.image);
        const auto v = state_value(actor.value, next, nullptr);
        const double one = 1.0;
        const auto vg = actor.value.backward(v.tape, std::span<const double>(&one, 1), true);
        const std::size_t area = static_cast<std::size_t>(side) * side;
        for (std::size_t i = 0; i < area; ++i)
            for (int c = 0; c < 3; ++c) dq_dimage[3 * i + c] += vg.input.data[c * area + i];
        const auto fg = filter_vjp(action, s.image, dq_dimage);
        const auto g = policy2_gradient(trunk, head, eval, fg.grad_raw);

        const double h = 1e-6;
        double worst = 0.0, scale = 0.0;
        for (double x : g.trunk) scale = std::max(scale, std::abs(x));
        for (double x : g.head) scale = std::max(scale, std::abs(x));
        const double floor = 1e-3 * scale;
        for (std::size_t i = 0; i < head.param_count(); ++i) {
            const double w0 = head.params()[i];
            head.mutable_params()[i] = w0 + h;
            const double up_v = q(trunk, head);
            head.mutable_params()[i] = w0 - h;
            const double down_v = q(trunk, head);
            head.mutable_params()[i] = w0;
            worst = std::max(worst, relative_error(g.head[i], (up_v - down_v) / (2 * h), floor));
        }
        for (std::size_t i = 0; i < trunk.param_count(); i += 3) {
            const double w0 = trunk.params()[i];
            trunk.mutable_params()[i] = w0 + h;
            const double up_v = q(trunk, head);
            trunk.mutable_params()[i] = w0 - h;
            const double down_v = q(trunk, head);
            trunk.mutable_params()[i] = w0;
            worst = std::max(worst, relative_error(g.trunk[i], (up_v - down_v) / (2 * h), floor));
        }
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("value network learns a constant-reward toy MDP") {
    // Two decision states (step 0 and step 1 of a 2-step episode) with reward
    // c per step: the tabular answer is V(s0) = 2c, V(s1) = c.
    const double c = 0.5;
    Actor actor(tiny_config(), 91);
    Rng rng(16);
    const auto img = random_image(16, 16, rng);
    AgentState s0 = AgentState::start(img, 2);
    AgentState s1 = s0;
    s1.step_index = 1;
    s1.used[0] = true;
    AgentState s2 = s1;
    s2.step_index = 2;

    nn::AdamState opt(actor.value.param_count(), 2e-3, 1000000);
    const double one = 1.0;
    for (int it = 0; it < 1500; ++it) {
        std::vector<double> grad(actor.value.param_count(), 0.0);
        for (const auto* pair : {&s0, &s1}) {
            const AgentState& s = *pair;
            const AgentState& next = (pair == &s0) ? s1 : s2;
            const auto v = state_value(actor.value, s, nullptr);
            const auto vn = state_value(actor.value, next, nullptr);
            const double delta = td_error(c, v.value, vn.value, next.finished());
            const auto g = actor.value.backward(v.tape, std::span<const double>(&one, 1), false);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] -= delta * g.params[i];
        }
        nn::adam_step(opt, actor.value.mutable_params(), grad, 0);
    }
    CHECK(state_value(actor.value, s0, nullptr).value == doctest::Approx(2 * c).epsilon(0.02));
    CHECK(state_value(actor.value, s1, nullptr).value == doctest::Approx(c).epsilon(0.02));
    const double delta0 = td_error(c, state_value(actor.value, s0, nullptr).value,
                                   state_value(actor.value, s1, nullptr).value, false);
    CHECK(std::abs(delta0) < 0.02);
}

TEST_CASE("actor checkpoint round trip") {
    const auto dir = exposure::testing::scratch_dir("agent_ckpt");
    Actor actor(tiny_config(0.5), 101);
    nn::Checkpoint ckpt;
    actor.store(ckpt);
    ckpt.save(dir / "a.ckpt");
    const auto back = Actor::from_checkpoint(nn::Checkpoint::load(dir / "a.ckpt"));
    CHECK(back.config().side == 16);
    CHECK(back.config().conv_widths == actor.config().conv_widths);
    CHECK(back.config().fc_width == 6);
    CHECK(back.config().dropout == 0.5);
    CHECK(back.policy2_heads.size() == 8);

    nn::Checkpoint partial;
    partial.put("policy1", actor.policy1);
    CHECK_THROWS_AS(Actor::from_checkpoint(partial), DataError);
}
