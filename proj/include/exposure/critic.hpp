#pragma once

#include <span>
#include <vector>

#include "exposure/image.hpp"
#include "exposure/nn.hpp"
#include "exposure/rng.hpp"

namespace exposure {

// Extra constant planes fed to the discriminator: mean luminance, contrast,
// saturation.
inline constexpr int kCriticPlanes = 3;

struct CriticConfig {
    int side = 64;
    std::array<int, 4> conv_widths{16, 32, 64, 128};
    int fc_width = 128;
};

nn::Network make_critic(const CriticConfig& config, std::uint64_t seed);

nn::Tensor critic_input(const LinearImage& image, int side);

// D(s).
double score(const nn::Network& critic, const LinearImage& image);

// dD/d pixel in image layout, including the feature-plane contributions.
std::vector<double> score_input_gradient(const nn::Network& critic, const LinearImage& image);

struct CriticBatch {
    std::vector<const LinearImage*> generated;
    std::vector<const LinearImage*> targets;
    std::vector<double> interpolation;  // one coefficient in [0,1] per pair
};

struct CriticLoss {
    double loss = 0.0;       // emd_term + lambda * penalty
    double emd_term = 0.0;   // mean D(generated) - mean D(targets)
    double penalty = 0.0;    // mean (|grad D(x_hat)| - 1)^2
    std::vector<double> grads;
};

// WGAN loss with gradient penalty on per-pair interpolates
// x_hat = a * target + (1 - a) * generated.
CriticLoss critic_loss(const nn::Network& critic, const CriticBatch& batch, double gp_lambda);

}  // namespace exposure
