#include "exposure/filters.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "exposure/error.hpp"

namespace exposure {

namespace {

constexpr std::array<std::string_view, kFilterCount> kNames = {
    "Exposure", "Gamma", "WhiteBalance", "Saturation", "Tone", "Contrast", "BlackWhite", "Color",
};
constexpr std::array<std::string_view, kFilterCount> kShortNames = {
    "Expo.", "Gam.", "W.B.", "Satu.", "Tone", "Cst.", "BW", "Color",
};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }
double clamp_slope(double x) { return (x >= 0.0 && x < 1.0) ? 1.0 : 0.0; }

// Saturation boost in HSV space: keeps hue and value, raises S to
// S + (1 - S)(0.5 - |0.5 - V|)0.8. Returns the enhanced pixel and its
// Jacobian with respect to the (already clamped) input.
struct SaturationEnhance {
    Pixel out{};
    double jac[3][3]{};
};

SaturationEnhance saturation_enhance(const Pixel& q) {
    SaturationEnhance e;
    int imax = 0, imin = 0;
    for (int k = 1; k < 3; ++k) {
        if (q[k] > q[imax]) imax = k;
        if (q[k] < q[imin]) imin = k;
    }
    const double v = q[imax];
    const double m = q[imin];
    if (v <= 0.0) return e;  // black stays black

    const double s = (v - m) / v;
    const double h = 0.5 - std::abs(0.5 - v);
    const double dh = v < 0.5 ? 1.0 : -1.0;
    const double s_new = s + (1.0 - s) * h * 0.8;
    const double ds_dv = m / (v * v);
    const double ds_dm = -1.0 / v;
    const double dsn_ds = 1.0 - 0.8 * h;
    const double dsn_dv = dsn_ds * ds_dv + 0.8 * (1.0 - s) * dh;
    const double dsn_dm = dsn_ds * ds_dm;

    if (v - m <= 0.0) {
        // Achromatic: hue taken as 0 (red), hue gradient ignored.
        e.out = {v, v * (1.0 - s_new), v * (1.0 - s_new)};
        e.jac[0][imax] += 1.0;
        for (int k = 1; k < 3; ++k) {
            e.jac[k][imax] += (1.0 - s_new) - v * dsn_dv;
            e.jac[k][imin] += -v * dsn_dm;
        }
        return e;
    }

    // Enhanced_k = V - S' * R_k with R_k = V (V - q_k) / (V - m): the relative
    // position of each channel between min and max (and hence hue) is kept.
    const double span = v - m;
    for (int k = 0; k < 3; ++k) {
        const double r = v * (v - q[k]) / span;
        e.out[k] = v - s_new * r;
        const double dr_dv = (2.0 * v - q[k]) / span - r / span;
        const double dr_dm = r / span;
        const double dr_dq = -v / span;
        e.jac[k][imax] += 1.0 - dsn_dv * r - s_new * dr_dv;
        e.jac[k][imin] += -dsn_dm * r - s_new * dr_dm;
        e.jac[k][k] += -s_new * dr_dq;
    }
    return e;
}

double contrast_ratio(double l) {
    const double enhanced = 0.5 * (1.0 - std::cos(std::numbers::pi * l));
    return enhanced / (l + kContrastEpsilon);
}

double contrast_ratio_slope(double l) {
    const double enhanced = 0.5 * (1.0 - std::cos(std::numbers::pi * l));
    const double denom = l + kContrastEpsilon;
    return 0.5 * std::numbers::pi * std::sin(std::numbers::pi * l) / denom - enhanced / (denom * denom);
}

void check_arity(FilterKind kind, std::size_t n) {
    if (static_cast<int>(n) != arity(kind))
        throw UsageError(std::string("parameter arity mismatch for ") + std::string(filter_name(kind)));
}

}  // namespace

int arity(FilterKind kind) {
    switch (kind) {
        case FilterKind::Exposure:
        case FilterKind::Gamma:
        case FilterKind::Saturation:
        case FilterKind::Contrast:
        case FilterKind::BlackWhite:
            return 1;
        case FilterKind::WhiteBalance:
            return 3;
        case FilterKind::Tone:
            return kCurveSegments;
        case FilterKind::Color:
            return 3 * kCurveSegments;
    }
    return 0;
}

std::string_view filter_name(FilterKind kind) { return kNames[index_of(kind)]; }
std::string_view filter_short_name(FilterKind kind) { return kShortNames[index_of(kind)]; }

std::optional<FilterKind> parse_filter_name(std::string_view name) {
    for (int i = 0; i < kFilterCount; ++i)
        if (kNames[i] == name) return static_cast<FilterKind>(i);
    return std::nullopt;
}

Curve::Curve(std::vector<double> segments) : segments_(std::move(segments)) {
    if (segments_.empty()) throw UsageError("curve needs at least one segment");
    for (double t : segments_)
        if (!(t > 0.0) || !std::isfinite(t)) throw UsageError("curve segments must be positive");
}

double Curve::operator()(double x) const { return curve_eval(segments_, x); }

double curve_eval(std::span<const double> t, double x) {
    const double n = static_cast<double>(t.size());
    double total = 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        total += t[i];
        acc += std::clamp(n * x - static_cast<double>(i), 0.0, 1.0) * t[i];
    }
    return acc / total;
}

double curve_slope(std::span<const double> t, double x) {
    const double n = static_cast<double>(t.size());
    const double pos = n * x;
    if (pos < 0.0 || pos >= n) return 0.0;
    double total = 0.0;
    for (double v : t) total += v;
    return n * t[static_cast<std::size_t>(pos)] / total;
}

void curve_segment_grad(std::span<const double> t, double x, double scale, std::span<double> grad) {
    const double n = static_cast<double>(t.size());
    double total = 0.0;
    for (double v : t) total += v;
    const double f = curve_eval(t, x);
    for (std::size_t l = 0; l < t.size(); ++l) {
        const double c = std::clamp(n * x - static_cast<double>(l), 0.0, 1.0);
        grad[l] += scale * (c - f) / total;
    }
}

std::vector<double> map_raw_params(FilterKind kind, std::span<const double> raw) {
    check_arity(kind, raw.size());
    std::vector<double> out(raw.begin(), raw.end());
    switch (kind) {
        case FilterKind::Exposure:
            out[0] = kExposureRange * raw[0];
            break;
        case FilterKind::Gamma:
            out[0] = std::exp(raw[0] * kGammaLogRange);
            break;
        case FilterKind::WhiteBalance:
            for (auto& v : out) v = std::exp(v * kWhiteBalanceLogRange);
            break;
        case FilterKind::Tone:
            for (auto& v : out) v = std::exp(v * kToneLogRange);
            break;
        case FilterKind::Color:
            for (auto& v : out) v = std::exp(v * kColorLogRange);
            break;
        case FilterKind::Saturation:
        case FilterKind::Contrast:
        case FilterKind::BlackWhite:
            break;
    }
    return out;
}

std::vector<double> map_raw_derivative(FilterKind kind, std::span<const double> raw) {
    check_arity(kind, raw.size());
    const auto resolved = map_raw_params(kind, raw);
    std::vector<double> d(raw.size(), 1.0);
    switch (kind) {
        case FilterKind::Exposure:
            d[0] = kExposureRange;
            break;
        case FilterKind::Gamma:
            d[0] = resolved[0] * kGammaLogRange;
            break;
        case FilterKind::WhiteBalance:
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = resolved[i] * kWhiteBalanceLogRange;
            break;
        case FilterKind::Tone:
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = resolved[i] * kToneLogRange;
            break;
        case FilterKind::Color:
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = resolved[i] * kColorLogRange;
            break;
        case FilterKind::Saturation:
        case FilterKind::Contrast:
        case FilterKind::BlackWhite:
            break;
    }
    return d;
}

FilterAction FilterAction::make(FilterKind kind, std::vector<double> raw) {
    check_arity(kind, raw.size());
    FilterAction a;
    a.kind = kind;
    a.resolved = map_raw_params(kind, raw);
    a.raw = std::move(raw);
    return a;
}

FilterAction FilterAction::neutral(FilterKind kind) {
    return make(kind, std::vector<double>(static_cast<std::size_t>(arity(kind)), 0.0));
}

std::string FilterAction::display() const {
    char buf[256];
    const auto& p = resolved;
    auto curve_summary = [](std::span<const double> t) {
        // Curve values at the segment breakpoints.
        std::string s;
        char b[16];
        for (int k = 1; k < static_cast<int>(t.size()); ++k) {
            std::snprintf(b, sizeof b, "%s%.2f", k == 1 ? "" : " ", curve_eval(t, static_cast<double>(k) / t.size()));
            s += b;
        }
        return s;
    };
    switch (kind) {
        case FilterKind::Exposure:
            std::snprintf(buf, sizeof buf, "Exposure %+.2f", p[0]);
            break;
        case FilterKind::Gamma:
            // Exponents below one read as "1/g", larger ones as plain "g".
            if (p[0] < 1.0)
                std::snprintf(buf, sizeof buf, "Gamma 1/%.2f", p[0]);
            else
                std::snprintf(buf, sizeof buf, "Gamma %.2f", p[0]);
            break;
        case FilterKind::WhiteBalance:
            std::snprintf(buf, sizeof buf, "White Balance (%.2f, %.2f, %.2f)", p[0], p[1], p[2]);
            break;
        case FilterKind::Saturation:
            std::snprintf(buf, sizeof buf, "Saturation %+.2f", p[0]);
            break;
        case FilterKind::Tone:
            std::snprintf(buf, sizeof buf, "Tone Curve (%s)", curve_summary(p).c_str());
            break;
        case FilterKind::Contrast:
            std::snprintf(buf, sizeof buf, "Contrast %+.2f", p[0]);
            break;
        case FilterKind::BlackWhite:
            std::snprintf(buf, sizeof buf, "Black & White %+.2f", p[0]);
            break;
        case FilterKind::Color: {
            const std::span<const double> all(p);
            std::snprintf(buf, sizeof buf, "Color Curve (R: %s; G: %s; B: %s)",
                          curve_summary(all.subspan(0, kCurveSegments)).c_str(),
                          curve_summary(all.subspan(kCurveSegments, kCurveSegments)).c_str(),
                          curve_summary(all.subspan(2 * kCurveSegments, kCurveSegments)).c_str());
            break;
        }
    }
    return buf;
}

Pixel apply_pixel(const FilterAction& a, const Pixel& in) {
    const auto& p = a.resolved;
    Pixel out{};
    switch (a.kind) {
        case FilterKind::Exposure: {
            const double scale = std::exp2(p[0]);
            for (int c = 0; c < 3; ++c) out[c] = scale * in[c];
            break;
        }
        case FilterKind::Gamma:
            for (int c = 0; c < 3; ++c) out[c] = std::pow(std::max(in[c], 0.0), p[0]);
            break;
        case FilterKind::WhiteBalance:
            for (int c = 0; c < 3; ++c) out[c] = p[c] * in[c];
            break;
        case FilterKind::Saturation: {
            const Pixel q{clamp01(in[0]), clamp01(in[1]), clamp01(in[2])};
            const auto e = saturation_enhance(q);
            for (int c = 0; c < 3; ++c) out[c] = (1.0 - p[0]) * in[c] + p[0] * e.out[c];
            break;
        }
        case FilterKind::Tone:
            for (int c = 0; c < 3; ++c) out[c] = curve_eval(p, clamp01(in[c]));
            break;
        case FilterKind::Contrast: {
            const double ratio = contrast_ratio(clamp01(luminance(in)));
            for (int c = 0; c < 3; ++c) out[c] = (1.0 - p[0]) * in[c] + p[0] * in[c] * ratio;
            break;
        }
        case FilterKind::BlackWhite: {
            const double lum = luminance(in);
            for (int c = 0; c < 3; ++c) out[c] = (1.0 - p[0]) * in[c] + p[0] * lum;
            break;
        }
        case FilterKind::Color: {
            const std::span<const double> all(p);
            for (int c = 0; c < 3; ++c)
                out[c] = curve_eval(all.subspan(static_cast<std::size_t>(c) * kCurveSegments, kCurveSegments),
                                    clamp01(in[c]));
            break;
        }
    }
    return out;
}

LinearImage apply_filter(const FilterAction& action, const LinearImage& image) {
    check_arity(action.kind, action.raw.size());
    LinearImage out = image;
    const std::size_t n = image.pixel_count();
    for (std::size_t i = 0; i < n; ++i) out.set_pixel(i, apply_pixel(action, image.pixel(i)));
    return out;
}

void pixel_vjp(const FilterAction& a, const Pixel& in, const Pixel& up, Pixel& gin, std::span<double> gres) {
    const auto& p = a.resolved;
    gin = {0.0, 0.0, 0.0};
    switch (a.kind) {
        case FilterKind::Exposure: {
            const double scale = std::exp2(p[0]);
            for (int c = 0; c < 3; ++c) {
                gin[c] = scale * up[c];
                gres[0] += up[c] * std::numbers::ln2 * scale * in[c];
            }
            break;
        }
        case FilterKind::Gamma:
            for (int c = 0; c < 3; ++c) {
                if (in[c] <= 0.0) continue;
                const double y = std::pow(in[c], p[0]);
                gin[c] = up[c] * p[0] * y / in[c];
                gres[0] += up[c] * y * std::log(in[c]);
            }
            break;
        case FilterKind::WhiteBalance:
            for (int c = 0; c < 3; ++c) {
                gin[c] = p[c] * up[c];
                gres[c] += up[c] * in[c];
            }
            break;
        case FilterKind::Saturation: {
            const Pixel q{clamp01(in[0]), clamp01(in[1]), clamp01(in[2])};
            const auto e = saturation_enhance(q);
            for (int k = 0; k < 3; ++k) {
                gres[0] += up[k] * (e.out[k] - in[k]);
                gin[k] += up[k] * (1.0 - p[0]);
                for (int j = 0; j < 3; ++j) gin[j] += up[k] * p[0] * e.jac[k][j] * clamp_slope(in[j]);
            }
            break;
        }
        case FilterKind::Tone:
            for (int c = 0; c < 3; ++c) {
                const double x = clamp01(in[c]);
                gin[c] = up[c] * curve_slope(p, x) * clamp_slope(in[c]);
                curve_segment_grad(p, x, up[c], gres);
            }
            break;
        case FilterKind::Contrast: {
            const double lum = luminance(in);
            const double l = clamp01(lum);
            const double ratio = contrast_ratio(l);
            const double dratio = contrast_ratio_slope(l) * clamp_slope(lum);
            const double w[3] = {kLumR, kLumG, kLumB};
            double up_dot_in = 0.0;
            for (int c = 0; c < 3; ++c) {
                gres[0] += up[c] * (in[c] * ratio - in[c]);
                gin[c] += up[c] * ((1.0 - p[0]) + p[0] * ratio);
                up_dot_in += up[c] * in[c];
            }
            for (int j = 0; j < 3; ++j) gin[j] += p[0] * up_dot_in * dratio * w[j];
            break;
        }
        case FilterKind::BlackWhite: {
            const double lum = luminance(in);
            const double w[3] = {kLumR, kLumG, kLumB};
            const double up_sum = up[0] + up[1] + up[2];
            for (int c = 0; c < 3; ++c) {
                gres[0] += up[c] * (lum - in[c]);
                gin[c] = up[c] * (1.0 - p[0]) + p[0] * up_sum * w[c];
            }
            break;
        }
        case FilterKind::Color: {
            const std::span<const double> all(p);
            for (int c = 0; c < 3; ++c) {
                const auto seg = all.subspan(static_cast<std::size_t>(c) * kCurveSegments, kCurveSegments);
                const double x = clamp01(in[c]);
                gin[c] = up[c] * curve_slope(seg, x) * clamp_slope(in[c]);
                curve_segment_grad(seg, x, up[c], gres.subspan(static_cast<std::size_t>(c) * kCurveSegments, kCurveSegments));
            }
            break;
        }
    }
}

FilterGradient filter_vjp(const FilterAction& action, const LinearImage& image, std::span<const double> upstream) {
    check_arity(action.kind, action.raw.size());
    if (upstream.size() != image.data().size()) throw UsageError("upstream gradient does not match image size");
    FilterGradient g;
    g.grad_input.assign(image.data().size(), 0.0);
    std::vector<double> grad_resolved(action.raw.size(), 0.0);
    const std::size_t n = image.pixel_count();
    for (std::size_t i = 0; i < n; ++i) {
        const Pixel up{upstream[3 * i], upstream[3 * i + 1], upstream[3 * i + 2]};
        Pixel gin;
        pixel_vjp(action, image.pixel(i), up, gin, grad_resolved);
        for (int c = 0; c < 3; ++c) g.grad_input[3 * i + c] = gin[c];
    }
    const auto d = map_raw_derivative(action.kind, action.raw);
    g.grad_raw.resize(d.size());
    for (std::size_t k = 0; k < d.size(); ++k) g.grad_raw[k] = grad_resolved[k] * d[k];
    return g;
}

}  // namespace exposure
