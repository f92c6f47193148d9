#include "exposure/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "exposure/error.hpp"
#include "exposure/nn.hpp"
#include "exposure/rng.hpp"

namespace exposure {

namespace {

// All proxy pixels flattened into one strip image: the filters are
// per-pixel, so pixel order is irrelevant.
struct PixelSet {
    LinearImage before;
    std::vector<double> after;
};

PixelSet gather(std::span<const LinearImage> before, std::span<const LinearImage> after, std::size_t limit, Rng& rng) {
    std::size_t total = 0;
    for (const auto& img : before) total += img.pixel_count();
    std::vector<double> b, a;
    b.reserve(3 * std::min(total, limit));
    a.reserve(3 * std::min(total, limit));
    const bool subsample = total > limit;
    for (std::size_t k = 0; k < before.size(); ++k) {
        const auto bd = before[k].data();
        const auto ad = after[k].data();
        for (std::size_t i = 0; i < before[k].pixel_count(); ++i) {
            if (subsample && rng.uniform() >= static_cast<double>(limit) / static_cast<double>(total)) continue;
            for (int c = 0; c < 3; ++c) {
                b.push_back(bd[3 * i + c]);
                a.push_back(ad[3 * i + c]);
            }
        }
    }
    const int n = static_cast<int>(b.size() / 3);
    if (n == 0) throw DataError("no pixels to distill");
    return {LinearImage(n, 1, std::move(b)), std::move(a)};
}

struct Fit {
    std::vector<FilterKind> kinds;
    std::vector<std::vector<double>> latent;  // raw = tanh(latent)
    double residual = std::numeric_limits<double>::infinity();
};

std::vector<FilterAction> actions_of(const Fit& fit) {
    std::vector<FilterAction> acts;
    for (std::size_t k = 0; k < fit.kinds.size(); ++k) {
        std::vector<double> raw(fit.latent[k].size());
        for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = std::tanh(fit.latent[k][i]);
        acts.push_back(FilterAction::make(fit.kinds[k], std::move(raw)));
    }
    return acts;
}

double mse(const std::vector<FilterAction>& acts, const PixelSet& px) {
    LinearImage cur = px.before;
    for (const auto& a : acts) cur = apply_filter(a, cur);
    double err = 0.0;
    const auto d = cur.data();
    for (std::size_t i = 0; i < d.size(); ++i) err += (d[i] - px.after[i]) * (d[i] - px.after[i]);
    return err / static_cast<double>(d.size());
}

// Adam on the latent parameters of every slot, starting from `fit.latent`.
void optimize(Fit& fit, const PixelSet& px, int iterations, double lr) {
    std::vector<double> flat;
    for (const auto& l : fit.latent) flat.insert(flat.end(), l.begin(), l.end());
    nn::AdamState opt(flat.size(), lr, std::numeric_limits<std::int64_t>::max());
    const double inv_n = 1.0 / static_cast<double>(px.after.size());

    auto unflatten = [&] {
        std::size_t o = 0;
        for (auto& l : fit.latent)
            for (auto& v : l) v = flat[o++];
    };

    for (int it = 0; it < iterations; ++it) {
        unflatten();
        const auto acts = actions_of(fit);
        std::vector<LinearImage> states{px.before};
        for (const auto& a : acts) states.push_back(apply_filter(a, states.back()));
        const auto out = states.back().data();
        std::vector<double> up(out.size());
        for (std::size_t i = 0; i < up.size(); ++i) up[i] = 2.0 * (out[i] - px.after[i]) * inv_n;

        std::vector<double> grad(flat.size());
        std::size_t offset = flat.size();
        for (std::size_t k = acts.size(); k-- > 0;) {
            auto g = filter_vjp(acts[k], states[k], up);
            offset -= acts[k].raw.size();
            for (std::size_t i = 0; i < acts[k].raw.size(); ++i)
                grad[offset + i] = g.grad_raw[i] * (1.0 - acts[k].raw[i] * acts[k].raw[i]);
            up = std::move(g.grad_input);
        }
        nn::adam_step(opt, flat, grad, 0);
    }
    unflatten();
    fit.residual = mse(actions_of(fit), px);
}

Fit candidate(std::vector<FilterKind> kinds, const Fit* prefix) {
    Fit f;
    f.kinds = std::move(kinds);
    for (std::size_t k = 0; k < f.kinds.size(); ++k) {
        if (prefix != nullptr && k < prefix->latent.size()) {
            f.latent.push_back(prefix->latent[k]);
        } else {
            f.latent.emplace_back(static_cast<std::size_t>(arity(f.kinds[k])), 0.0);
        }
    }
    return f;
}

}  // namespace

DistillResult distill(std::span<const LinearImage> before, std::span<const LinearImage> after,
                      const DistillOptions& options) {
    if (options.steps < 1) throw UsageError("distill needs steps >= 1");
    if (before.empty() || before.size() != after.size()) throw DataError("distill needs matching image pairs");
    for (std::size_t k = 0; k < before.size(); ++k)
        if (before[k].width() != after[k].width() || before[k].height() != after[k].height())
            throw DataError("paired images differ in size");

    Rng rng(options.seed);
    const PixelSet search = gather(before, after, options.max_samples, rng);
    const PixelSet full = gather(before, after, std::numeric_limits<std::size_t>::max(), rng);

    std::vector<Fit> finalists;
    if (options.steps <= 2) {
        // Exhaustive over kind sequences.
        std::size_t combos = 1;
        for (int s = 0; s < options.steps; ++s) combos *= kFilterCount;
        for (std::size_t code = 0; code < combos; ++code) {
            std::vector<FilterKind> kinds;
            std::size_t c = code;
            for (int s = 0; s < options.steps; ++s) {
                kinds.insert(kinds.begin(), static_cast<FilterKind>(c % kFilterCount));
                c /= kFilterCount;
            }
            Fit f = candidate(std::move(kinds), nullptr);
            optimize(f, search, options.search_iterations, options.learning_rate);
            finalists.push_back(std::move(f));
        }
    } else {
        std::vector<Fit> beam{Fit{}};
        beam[0].residual = 0.0;
        for (int s = 0; s < options.steps; ++s) {
            std::vector<Fit> next;
            for (const auto& prefix : beam) {
                for (FilterKind kind : kAllFilters) {
                    auto kinds = prefix.kinds;
                    kinds.push_back(kind);
                    Fit f = candidate(std::move(kinds), &prefix);
                    optimize(f, search, options.search_iterations, options.learning_rate);
                    next.push_back(std::move(f));
                }
            }
            std::stable_sort(next.begin(), next.end(), [](const Fit& a, const Fit& b) { return a.residual < b.residual; });
            next.resize(std::min<std::size_t>(next.size(), static_cast<std::size_t>(options.beam_width)));
            beam = std::move(next);
        }
        finalists = std::move(beam);
    }

    std::stable_sort(finalists.begin(), finalists.end(),
                     [](const Fit& a, const Fit& b) { return a.residual < b.residual; });
    const std::size_t keep = std::min<std::size_t>(finalists.size(), static_cast<std::size_t>(options.beam_width));
    Fit best;
    for (std::size_t i = 0; i < keep; ++i) {
        Fit f = finalists[i];
        optimize(f, full, options.iterations, options.learning_rate * 0.2);
        if (f.residual < best.residual) best = std::move(f);
    }

    DistillResult result;
    for (auto& a : actions_of(best)) result.script.steps.push_back({std::move(a), std::nullopt});
    result.residual = best.residual;
    return result;
}

void load_pairs(const std::filesystem::path& before_dir, const std::filesystem::path& after_dir,
                std::vector<LinearImage>& before, std::vector<LinearImage>& after, int side) {
    const auto files = list_images(before_dir);
    if (files.empty()) throw DataError("no images in " + before_dir.string());
    const auto after_files = list_images(after_dir);
    if (after_files.size() != files.size()) throw DataError("before/after directories hold different image counts");
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (files[i].filename() != after_files[i].filename())
            throw DataError("unpaired filename: " + files[i].filename().string());
        auto b = load_image(files[i]);
        auto a = load_image(after_files[i]);
        if (b.width() != a.width() || b.height() != a.height())
            throw DataError("paired images differ in size: " + files[i].filename().string());
        const bool proxy = b.width() == side && b.height() == side;
        before.push_back(proxy ? std::move(b) : downsample(b, side));
        after.push_back(proxy ? std::move(a) : downsample(a, side));
    }
}

}  // namespace exposure
