#include "exposure/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "exposure/error.hpp"

namespace exposure {

int StyleHistogram::bin_of(double value) {
    if (!(value > 0.0)) return 0;
    if (value >= 1.0) return kHistogramBins - 1;
    return std::min(kHistogramBins - 1, static_cast<int>(value * kHistogramBins));
}

void StyleHistogram::add(double value) {
    ++bins[bin_of(value)];
    ++total;
}

std::array<double, kHistogramBins> StyleHistogram::normalized() const {
    std::array<double, kHistogramBins> out{};
    if (total == 0) return out;
    for (int i = 0; i < kHistogramBins; ++i) out[i] = static_cast<double>(bins[i]) / static_cast<double>(total);
    return out;
}

DatasetHistograms dataset_histograms(std::span<const LinearImage> images, Rng& rng, int patches) {
    if (images.empty()) throw DataError("no images to measure");
    DatasetHistograms h;
    for (const auto& image : images) {
        for (const auto& patch : crop_patches(image, patches, rng)) {
            const auto f = global_features(patch);
            h.luminance.add(f.luminance);
            h.contrast.add(f.contrast);
            h.saturation.add(f.saturation);
        }
    }
    return h;
}

DatasetHistograms dataset_histograms(const std::filesystem::path& dir, Rng& rng, int patches) {
    const auto files = list_images(dir);
    if (files.empty()) throw DataError("no images in " + dir.string());
    DatasetHistograms h;
    for (const auto& file : files) {
        const auto image = load_image(file);
        const auto part = dataset_histograms(std::span<const LinearImage>(&image, 1), rng, patches);
        for (int i = 0; i < kHistogramBins; ++i) {
            h.luminance.bins[i] += part.luminance.bins[i];
            h.contrast.bins[i] += part.contrast.bins[i];
            h.saturation.bins[i] += part.saturation.bins[i];
        }
        h.luminance.total += part.luminance.total;
        h.contrast.total += part.contrast.total;
        h.saturation.total += part.saturation.total;
    }
    return h;
}

double histogram_intersection(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw UsageError("histogram bin counts differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::min(a[i], b[i]);
    return std::clamp(100.0 * sum, 0.0, 100.0);
}

double histogram_intersection(const StyleHistogram& a, const StyleHistogram& b) {
    if (a.total == 0 || b.total == 0) return 0.0;
    // Cross-multiplied integer counts keep identical histograms at exactly 100.
    unsigned __int128 common = 0;
    for (int i = 0; i < kHistogramBins; ++i) {
        const unsigned __int128 x = static_cast<unsigned __int128>(a.bins[i]) * b.total;
        const unsigned __int128 y = static_cast<unsigned __int128>(b.bins[i]) * a.total;
        common += std::min(x, y);
    }
    const unsigned __int128 whole = static_cast<unsigned __int128>(a.total) * b.total;
    if (common == whole) return 100.0;
    return 100.0 * static_cast<double>(common) / static_cast<double>(whole);
}

std::string EvaluationReport::to_text() const {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "Quantity     Histogram Intersection\n"
                  "Luminance    %6.2f%%\n"
                  "Contrast     %6.2f%%\n"
                  "Saturation   %6.2f%%\n",
                  luminance, contrast, saturation);
    return buf;
}

EvaluationReport compare(const DatasetHistograms& outputs, const DatasetHistograms& targets) {
    return {histogram_intersection(outputs.luminance, targets.luminance),
            histogram_intersection(outputs.contrast, targets.contrast),
            histogram_intersection(outputs.saturation, targets.saturation)};
}

EvaluationReport evaluate_dirs(const std::filesystem::path& outputs, const std::filesystem::path& targets,
                               std::uint64_t seed) {
    Rng out_rng(seed);
    Rng tgt_rng(seed);
    return compare(dataset_histograms(outputs, out_rng), dataset_histograms(targets, tgt_rng));
}

EvaluationReport evaluate_images(std::span<const LinearImage> outputs, std::span<const LinearImage> targets,
                                 std::uint64_t seed) {
    Rng out_rng(seed);
    Rng tgt_rng(seed);
    return compare(dataset_histograms(outputs, out_rng), dataset_histograms(targets, tgt_rng));
}

}  // namespace exposure
