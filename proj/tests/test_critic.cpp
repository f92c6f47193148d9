#include <doctest.h>

#include <cmath>
#include <numeric>

#include "exposure/critic.hpp"
#include "exposure/error.hpp"
#include "test_support.hpp"

using namespace exposure;
using exposure::testing::random_image;
using exposure::testing::random_vector;
using exposure::testing::relative_error;

namespace {

constexpr int kSide = 16;

CriticConfig tiny() { return {.side = kSide, .conv_widths = {2, 3, 3, 4}, .fc_width = 5}; }

CriticBatch make_batch(const std::vector<LinearImage>& gen, const std::vector<LinearImage>& tgt, Rng& rng) {
    CriticBatch b;
    for (std::size_t i = 0; i < gen.size(); ++i) {
        b.generated.push_back(&gen[i]);
        b.targets.push_back(&tgt[i]);
        b.interpolation.push_back(rng.uniform());
    }
    return b;
}

std::vector<LinearImage> images(std::size_t n, Rng& rng, double lo, double hi) {
    std::vector<LinearImage> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(random_image(kSide, kSide, rng, lo, hi));
    return out;
}

}  // namespace

TEST_CASE("zero-weight critic") {
    auto critic = make_critic(tiny(), 1);
    std::ranges::fill(critic.mutable_params(), 0.0);
    Rng rng(2);
    const auto img = random_image(kSide, kSide, rng);
    CHECK(score(critic, img) == 0.0);
    for (double g : score_input_gradient(critic, img)) CHECK(g == 0.0);

    const auto gen = images(4, rng, 0, 1), tgt = images(4, rng, 0, 1);
    const auto loss = critic_loss(critic, make_batch(gen, tgt, rng), 10.0);
    CHECK(loss.penalty == 1.0);
    CHECK(loss.emd_term == 0.0);
    CHECK(loss.loss == 10.0);
}

TEST_CASE("critic has no dropout and scores deterministically") {
    const auto critic = make_critic(tiny(), 3);
    for (const auto& l : critic.layers()) CHECK(l.kind != nn::LayerKind::Dropout);
    CHECK(critic.input_shape() == std::vector<int>{6, kSide, kSide});
    Rng rng(4);
    const auto img = random_image(kSide, kSide, rng);
    CHECK(score(critic, img) == score(critic, img));
}

TEST_CASE("identical batches give a zero EMD term") {
    const auto critic = make_critic(tiny(), 5);
    Rng rng(6);
    const auto gen = images(6, rng, 0, 1);
    const auto loss = critic_loss(critic, make_batch(gen, gen, rng), 10.0);
    CHECK(loss.emd_term == 0.0);
    CHECK_THROWS_AS(critic_loss(critic, CriticBatch{}, 10.0), UsageError);
}

TEST_CASE("score_input_gradient matches finite differences") {
    const auto critic = make_critic(tiny(), 7);
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        auto img = random_image(kSide, kSide, rng, 0.05, 0.95);
        const auto g = score_input_gradient(critic, img);
        const double h = 1e-5;
        for (int k = 0; k < 5; ++k) {
            const std::size_t idx = rng.index(img.data().size());
            auto up = img, down = img;
            up.data()[idx] += h;
            down.data()[idx] -= h;
            const double num = (score(critic, up) - score(critic, down)) / (2 * h);
            CHECK(relative_error(g[idx], num, 1e-6) < 1e-3);
        }
        // Directional consistency along a random perturbation.
        const auto u = random_vector(img.data().size(), rng);
        auto up = img, down = img;
        for (std::size_t i = 0; i < u.size(); ++i) {
            up.data()[i] += h * u[i];
            down.data()[i] -= h * u[i];
        }
        const double num = (score(critic, up) - score(critic, down)) / (2 * h);
        CHECK(relative_error(exposure::testing::dot(u, g), num) < 1e-3);
    }
}

TEST_CASE("luminance plane gradient follows the mean's chain rule") {
    auto critic = make_critic(tiny(), 9);
    // Keep only first-layer weights reading the luminance plane (channel 3).
    auto w = critic.mutable_params();
    const int out = critic.layers()[0].out;
    const int row = critic.layers()[0].in * nn::kKernel * nn::kKernel;
    for (int o = 0; o < out; ++o)
        for (int k = 0; k < row; ++k)
            if (k / (nn::kKernel * nn::kKernel) != 3) w[static_cast<std::size_t>(o) * row + k] = 0.0;

    Rng rng(10);
    const auto img = random_image(kSide, kSide, rng);
    const auto tape = critic.forward(critic_input(img, kSide), nullptr);
    const double one = 1.0;
    const auto gin = critic.backward(tape, std::span<const double>(&one, 1), true);
    const std::size_t area = kSide * kSide;
    const double d_plane = std::accumulate(gin.input.data.begin() + 3 * area, gin.input.data.begin() + 4 * area, 0.0);
    const auto g = score_input_gradient(critic, img);
    const double weights[3] = {kLumR, kLumG, kLumB};
    for (std::size_t i = 0; i < area; ++i)
        for (int c = 0; c < 3; ++c) CHECK(g[3 * i + c] == doctest::Approx(d_plane * weights[c] / area).epsilon(1e-10));
}

TEST_CASE("gradient penalty vanishes for a unit-norm linear critic") {
    const std::vector<int> shape{6, kSide, kSide};
    const int n = 6 * kSide * kSide;
    nn::Network linear(shape, {{nn::LayerKind::Dense, n, 1, 0.0}}, 11);
    Rng rng(12);
    auto w = linear.mutable_params();
    double norm = 0.0;
    for (int k = 0; k < n; ++k) {
        w[k] = k < 3 * kSide * kSide ? rng.uniform(-1, 1) : 0.0;  // planes unused
        norm += w[k] * w[k];
    }
    for (int k = 0; k < n; ++k) w[k] /= std::sqrt(norm);
    w[n] = 0.3;

    const auto gen = images(5, rng, 0, 1), tgt = images(5, rng, 0, 1);
    const auto loss = critic_loss(linear, make_batch(gen, tgt, rng), 10.0);
    CHECK(loss.penalty < 1e-20);
}

TEST_CASE("critic_loss gradient matches finite differences") {
    auto critic = make_critic(tiny(), 13);
    Rng rng(14);
    const auto gen = images(3, rng, 0.05, 0.5), tgt = images(3, rng, 0.4, 0.95);
    const auto batch = make_batch(gen, tgt, rng);
    const auto loss = critic_loss(critic, batch, 10.0);
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < critic.param_count(); i += 5) {
        const double w0 = critic.params()[i];
        critic.mutable_params()[i] = w0 + h;
        const double up = critic_loss(critic, batch, 10.0).loss;
        critic.mutable_params()[i] = w0 - h;
        const double down = critic_loss(critic, batch, 10.0).loss;
        critic.mutable_params()[i] = w0;
        worst = std::max(worst, relative_error(loss.grads[i], (up - down) / (2 * h), 1e-5));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("training separates two clusters and lowers the loss") {
    auto critic = make_critic(tiny(), 15);
    Rng rng(16);
    const auto dark = images(8, rng, 0.0, 0.3), bright = images(8, rng, 0.6, 1.0);
    nn::AdamState opt(critic.param_count(), 1e-3, 1000000);
    std::vector<double> losses;
    for (int it = 0; it < 150; ++it) {
        const auto loss = critic_loss(critic, make_batch(dark, bright, rng), 10.0);
        losses.push_back(loss.loss);
        nn::adam_step(opt, critic.mutable_params(), loss.grads, 0);
    }
    const double head = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10;
    const double tail = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10;
    CHECK(tail < head);
    double s_dark = 0, s_bright = 0;
    for (const auto& d : dark) s_dark += score(critic, d);
    for (const auto& b : bright) s_bright += score(critic, b);
    CHECK(s_bright > s_dark);
}

TEST_CASE("two point masses at distance one: EMD term approaches 1") {
    auto critic = make_critic(tiny(), 17);
    const double level = 1.0 / std::sqrt(3.0 * kSide * kSide);
    const std::vector<LinearImage> gen(4, LinearImage(kSide, kSide, 0.0));
    const std::vector<LinearImage> tgt(4, LinearImage(kSide, kSide, level));
    Rng rng(18);
    nn::AdamState opt(critic.param_count(), 2e-3, 1000000);
    double emd = 0.0;
    for (int it = 0; it < 3000; ++it) {
        const auto loss = critic_loss(critic, make_batch(gen, tgt, rng), 10.0);
        emd = -loss.emd_term;
        nn::adam_step(opt, critic.mutable_params(), loss.grads, 0);
    }
    CHECK(emd == doctest::Approx(1.0).epsilon(0.1));
}
