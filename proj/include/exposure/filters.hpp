#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exposure/image.hpp"

namespace exposure {

enum class FilterKind : int {
    Exposure = 0,
    Gamma,
    WhiteBalance,
    Saturation,
    Tone,
    Contrast,
    BlackWhite,
    Color,
};

inline constexpr int kFilterCount = 8;
inline constexpr int kCurveSegments = 8;

inline constexpr std::array<FilterKind, kFilterCount> kAllFilters = {
    FilterKind::Exposure, FilterKind::Gamma,    FilterKind::WhiteBalance, FilterKind::Saturation,
    FilterKind::Tone,     FilterKind::Contrast, FilterKind::BlackWhite,   FilterKind::Color,
};

// Ranges applied to the tanh outputs of the parameter policy.
inline constexpr double kExposureRange = 3.5;       // stops
inline constexpr double kGammaLogRange = 1.0986122886681098;  // ln 3
inline constexpr double kWhiteBalanceLogRange = 0.6931471805599453;  // ln 2
inline constexpr double kToneLogRange = 0.6931471805599453;  // segments in [1/2, 2]
inline constexpr double kColorLogRange = 0.1;        // segments in [0.905, 1.105]
inline constexpr double kContrastEpsilon = 1e-6;

int arity(FilterKind kind);
std::string_view filter_name(FilterKind kind);
std::string_view filter_short_name(FilterKind kind);  // "Expo.", "Gam.", ...
std::optional<FilterKind> parse_filter_name(std::string_view name);
inline int index_of(FilterKind kind) { return static_cast<int>(kind); }

// Monotone piecewise-linear curve through (k/L, T_k/T_L), T_k the prefix sums
// of the positive segment values.
class Curve {
public:
    explicit Curve(std::vector<double> segments);

    double operator()(double x) const;
    const std::vector<double>& segments() const { return segments_; }

private:
    std::vector<double> segments_;
};

// Span-based forms used by the filters. `x` is expected in [0,1].
double curve_eval(std::span<const double> segments, double x);
// d f / d x, right-sided at breakpoints (0 at x = 1).
double curve_slope(std::span<const double> segments, double x);
// Accumulates scale * d f / d t_l into grad[l].
void curve_segment_grad(std::span<const double> segments, double x, double scale, std::span<double> grad);

// Elementwise map from raw (-1,1) values to physical parameters:
//   Exposure     E = 3.5 raw
//   Gamma        g = exp(raw ln 3)
//   WhiteBalance W = exp(raw ln 2)
//   Saturation / Contrast / BlackWhite  p = raw
//   Tone         t = exp(raw ln 2)
//   Color        t = exp(0.1 raw)
std::vector<double> map_raw_params(FilterKind kind, std::span<const double> raw);
// d resolved_i / d raw_i (the map is diagonal).
std::vector<double> map_raw_derivative(FilterKind kind, std::span<const double> raw);

struct FilterAction {
    FilterKind kind = FilterKind::Exposure;
    std::vector<double> raw;
    std::vector<double> resolved;

    static FilterAction make(FilterKind kind, std::vector<double> raw);
    // Neutral raw parameters (the identity filter).
    static FilterAction neutral(FilterKind kind);

    // Human-readable form, e.g. "Exposure +2.15" or "Gamma 1/0.77".
    std::string display() const;
};

Pixel apply_pixel(const FilterAction& action, const Pixel& in);
LinearImage apply_filter(const FilterAction& action, const LinearImage& image);

struct FilterGradient {
    std::vector<double> grad_raw;
    std::vector<double> grad_input;  // image layout
};

// Vector-Jacobian product of apply_filter with respect to the raw parameters
// (through map_raw_params) and the input pixels.
FilterGradient filter_vjp(const FilterAction& action, const LinearImage& image, std::span<const double> upstream);

// Per-pixel form: writes d/d input into grad_in and accumulates d/d resolved
// into grad_resolved.
void pixel_vjp(const FilterAction& action, const Pixel& in, const Pixel& upstream, Pixel& grad_in,
               std::span<double> grad_resolved);

}  // namespace exposure
