#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "exposure/rng.hpp"

namespace exposure {

using Pixel = std::array<double, 3>;

inline constexpr double kLumR = 0.27;
inline constexpr double kLumG = 0.67;
inline constexpr double kLumB = 0.06;

inline double luminance(double r, double g, double b) { return kLumR * r + kLumG * g + kLumB * b; }
inline double luminance(const Pixel& p) { return luminance(p[0], p[1], p[2]); }

// HSL saturation; 0 for achromatic pixels.
double hsl_saturation(double r, double g, double b);

// Linear-RGB raster, row-major, interleaved RGB.
class LinearImage {
public:
    LinearImage() = default;
    LinearImage(int width, int height, double fill = 0.0);
    LinearImage(int width, int height, std::vector<double> data);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    double& at(int x, int y, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

    Pixel pixel(std::size_t i) const { return {data_[3 * i], data_[3 * i + 1], data_[3 * i + 2]}; }
    void set_pixel(std::size_t i, const Pixel& p) {
        data_[3 * i] = p[0];
        data_[3 * i + 1] = p[1];
        data_[3 * i + 2] = p[2];
    }

    bool all_finite() const;

    friend bool operator==(const LinearImage&, const LinearImage&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

struct FeatureTriple {
    double luminance = 0.0;
    double contrast = 0.0;
    double saturation = 0.0;
};

// sRGB transfer functions on a single channel value in [0,1].
double srgb_to_linear(double v);
double linear_to_srgb(double v);

// Binary PPM (P6, sRGB 8-bit) and PFM (linear float32), chosen by extension
// (.ppm / .pfm).
LinearImage load_image(const std::filesystem::path& path);
void save_image(const LinearImage& image, const std::filesystem::path& path);

// Area-averaging resample to side x side (stretching non-square sources).
LinearImage downsample(const LinearImage& image, int side);

FeatureTriple global_features(const LinearImage& image);

// Gradient of each feature with respect to every image value, same layout as
// the image data. Saturation uses the subgradient of max/min at the first
// maximal/minimal channel.
struct FeatureGradients {
    std::vector<double> luminance;
    std::vector<double> contrast;
    std::vector<double> saturation;
};
FeatureGradients global_feature_gradients(const LinearImage& image);

// `count` square crops of side min(w,h)/2 at uniform random offsets.
std::vector<LinearImage> crop_patches(const LinearImage& image, int count, Rng& rng);

LinearImage crop(const LinearImage& image, int x0, int y0, int w, int h);

// Sorted list of .ppm/.pfm files in a directory.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace exposure
