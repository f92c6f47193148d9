#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "exposure/filters.hpp"

namespace exposure {

struct EditStep {
    FilterAction action;
    // Filter-selection probabilities at this step, when produced by the agent.
    std::optional<std::array<double, kFilterCount>> probabilities;
};

// The white-box output: an ordered list of filter operations.
struct EditScript {
    std::vector<EditStep> steps;

    LinearImage apply(const LinearImage& image) const;

    // JSON array of {"filter", "raw", "resolved", "display"[, "probabilities"]}.
    std::string to_json() const;
    static EditScript from_json(const std::string& text);

    void save(const std::filesystem::path& path) const;
    static EditScript load(const std::filesystem::path& path);
};

}  // namespace exposure
