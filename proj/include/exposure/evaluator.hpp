#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "exposure/image.hpp"
#include "exposure/rng.hpp"

namespace exposure {

inline constexpr int kHistogramBins = 32;
inline constexpr int kPatchesPerImage = 16;

// 32 equal bins over [0,1): [0,1/32), [1/32,2/32), ...; values >= 1 land in
// the last bin and negatives in the first.
struct StyleHistogram {
    std::array<std::uint64_t, kHistogramBins> bins{};
    std::uint64_t total = 0;

    void add(double value);
    std::array<double, kHistogramBins> normalized() const;
    static int bin_of(double value);
};

struct DatasetHistograms {
    StyleHistogram luminance;
    StyleHistogram contrast;
    StyleHistogram saturation;
};

// Each image contributes `patches` seeded crops; each crop one sample per
// quantity.
DatasetHistograms dataset_histograms(std::span<const LinearImage> images, Rng& rng,
                                     int patches = kPatchesPerImage);
DatasetHistograms dataset_histograms(const std::filesystem::path& dir, Rng& rng, int patches = kPatchesPerImage);

// Sum of elementwise minima of the normalized histograms, in percent.
double histogram_intersection(const StyleHistogram& a, const StyleHistogram& b);
double histogram_intersection(std::span<const double> a, std::span<const double> b);

struct EvaluationReport {
    double luminance = 0.0;
    double contrast = 0.0;
    double saturation = 0.0;

    std::string to_text() const;
};

EvaluationReport compare(const DatasetHistograms& outputs, const DatasetHistograms& targets);

// Both sets are cropped with streams started from the same seed, so a
// dataset compared against itself scores exactly 100%.
EvaluationReport evaluate_dirs(const std::filesystem::path& outputs, const std::filesystem::path& targets,
                               std::uint64_t seed);
EvaluationReport evaluate_images(std::span<const LinearImage> outputs, std::span<const LinearImage> targets,
                                 std::uint64_t seed);

}  // namespace exposure
