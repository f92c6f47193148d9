#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "exposure/edit_script.hpp"
#include "exposure/image.hpp"

namespace exposure {

struct DistillOptions {
    int steps = 2;
    int iterations = 400;     // Adam iterations for the final refinement
    int search_iterations = 150;  // per candidate sequence during the kind search
    int beam_width = 4;
    double learning_rate = 0.05;
    std::size_t max_samples = 8192;  // pixels used during the kind search
    std::uint64_t seed = 0;
};

struct DistillResult {
    EditScript script;
    double residual = 0.0;  // mean squared pixel error on the proxies
};

// Fits a fixed-length filter sequence mapping `before` pixels onto `after`
// pixels by gradient descent through the differentiable filters. Filter kinds
// are enumerated per slot when steps <= 2, beam searched otherwise.
DistillResult distill(std::span<const LinearImage> before, std::span<const LinearImage> after,
                      const DistillOptions& options);

// Loads same-named image pairs from two directories as 64x64 proxies.
void load_pairs(const std::filesystem::path& before_dir, const std::filesystem::path& after_dir,
                std::vector<LinearImage>& before, std::vector<LinearImage>& after, int side = 64);

}  // namespace exposure
