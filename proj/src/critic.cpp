#include "exposure/critic.hpp"

#include <cmath>

#include "exposure/error.hpp"

namespace exposure {

nn::Network make_critic(const CriticConfig& config, std::uint64_t seed) {
    nn::BackboneConfig b;
    b.in_channels = 3 + kCriticPlanes;
    b.side = config.side;
    b.conv_widths = config.conv_widths;
    b.fc_width = config.fc_width;
    b.dropout = 0.0;
    b.outputs = 1;
    return nn::make_backbone(b, seed);
}

nn::Tensor critic_input(const LinearImage& image, int side) {
    const auto f = global_features(image);
    const double planes[kCriticPlanes] = {f.luminance, f.contrast, f.saturation};
    return nn::input_with_planes(image, planes, side);
}

double score(const nn::Network& critic, const LinearImage& image) {
    return critic.forward(critic_input(image, critic.input_shape()[1]), nullptr).output().data[0];
}

namespace {

// Folds a gradient with respect to the critic input tensor back onto pixels.
std::vector<double> pixel_gradient(const LinearImage& image, const nn::Tensor& input_grad) {
    const std::size_t area = image.pixel_count();
    std::vector<double> g(area * 3);
    double plane_grad[kCriticPlanes] = {0.0, 0.0, 0.0};
    for (int p = 0; p < kCriticPlanes; ++p)
        for (std::size_t i = 0; i < area; ++i) plane_grad[p] += input_grad.data[(3 + p) * area + i];
    const auto fg = global_feature_gradients(image);
    for (std::size_t i = 0; i < area; ++i) {
        for (int c = 0; c < 3; ++c) {
            const std::size_t k = 3 * i + c;
            g[k] = input_grad.data[c * area + i] + plane_grad[0] * fg.luminance[k] + plane_grad[1] * fg.contrast[k] +
                   plane_grad[2] * fg.saturation[k];
        }
    }
    return g;
}

// Pixel-space tangent mapped to a critic-input tangent (planes move with the
// features' directional derivatives).
nn::Tensor input_tangent(const LinearImage& image, std::span<const double> v, int side) {
    const auto fg = global_feature_gradients(image);
    double dl = 0.0, dc = 0.0, ds = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        dl += fg.luminance[k] * v[k];
        dc += fg.contrast[k] * v[k];
        ds += fg.saturation[k] * v[k];
    }
    const double planes[kCriticPlanes] = {dl, dc, ds};
    LinearImage tangent_image(image.width(), image.height(), std::vector<double>(v.begin(), v.end()));
    return nn::input_with_planes(tangent_image, planes, side);
}

}  // namespace

std::vector<double> score_input_gradient(const nn::Network& critic, const LinearImage& image) {
    const auto tape = critic.forward(critic_input(image, critic.input_shape()[1]), nullptr);
    const double one = 1.0;
    const auto g = critic.backward(tape, std::span<const double>(&one, 1), true, false);
    return pixel_gradient(image, g.input);
}

CriticLoss critic_loss(const nn::Network& critic, const CriticBatch& batch, double gp_lambda) {
    const std::size_t n = batch.generated.size();
    if (n == 0 || batch.targets.size() != n || batch.interpolation.size() != n)
        throw UsageError("critic batch needs equal, non-zero generated/target/interpolation counts");
    const int side = critic.input_shape()[1];
    CriticLoss out;
    out.grads.assign(critic.param_count(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);

    auto accumulate = [&](const std::vector<double>& g, double scale) {
        for (std::size_t k = 0; k < g.size(); ++k) out.grads[k] += scale * g[k];
    };

    for (std::size_t i = 0; i < n; ++i) {
        const double up_gen = inv_n;
        const auto tg = critic.forward(critic_input(*batch.generated[i], side), nullptr);
        accumulate(critic.backward(tg, std::span<const double>(&up_gen, 1), false).params, 1.0);

        const double up_tgt = -inv_n;
        const auto tt = critic.forward(critic_input(*batch.targets[i], side), nullptr);
        // Per-pair difference keeps identical batches at exactly zero.
        out.emd_term += inv_n * (tg.output().data[0] - tt.output().data[0]);
        accumulate(critic.backward(tt, std::span<const double>(&up_tgt, 1), false).params, 1.0);

        // Gradient penalty at the interpolate.
        const double a = batch.interpolation[i];
        const auto gd = batch.generated[i]->data();
        const auto td = batch.targets[i]->data();
        std::vector<double> mix(gd.size());
        for (std::size_t k = 0; k < mix.size(); ++k) mix[k] = a * td[k] + (1.0 - a) * gd[k];
        const LinearImage x_hat(batch.generated[i]->width(), batch.generated[i]->height(), std::move(mix));

        const auto th = critic.forward(critic_input(x_hat, side), nullptr);
        const double one = 1.0;
        const auto gi = critic.backward(th, std::span<const double>(&one, 1), true, false);
        const auto gx = pixel_gradient(x_hat, gi.input);
        double norm2 = 0.0;
        for (double v : gx) norm2 += v * v;
        const double norm = std::sqrt(norm2);
        out.penalty += inv_n * (norm - 1.0) * (norm - 1.0);
        if (norm <= 0.0) continue;

        // d/dw (|g| - 1)^2 = d/dw [v . g(w)] with v = 2(|g| - 1) g / |g| held
        // fixed; v . g is the directional derivative of D along v.
        std::vector<double> v(gx.size());
        const double coef = 2.0 * (norm - 1.0) / norm;
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = coef * gx[k];
        const auto tangent = critic.forward_tangent(th, input_tangent(x_hat, v, side));
        const double scale = gp_lambda * inv_n;
        accumulate(critic.backward(tangent, std::span<const double>(&scale, 1), false).params, 1.0);
    }
    out.loss = out.emd_term + gp_lambda * out.penalty;
    return out;
}

}  // namespace exposure
