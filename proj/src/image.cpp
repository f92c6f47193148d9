#include "exposure/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "exposure/error.hpp"

namespace exposure {

namespace fs = std::filesystem;

LinearImage::LinearImage(int width, int height, double fill)
    : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * 3, fill) {
    if (width <= 0 || height <= 0) throw UsageError("image dimensions must be positive");
}

LinearImage::LinearImage(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (width <= 0 || height <= 0) throw UsageError("image dimensions must be positive");
    if (data_.size() != static_cast<std::size_t>(width) * height * 3)
        throw UsageError("image data length does not match width*height*3");
}

bool LinearImage::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double hsl_saturation(double r, double g, double b) {
    r = std::clamp(r, 0.0, 1.0);
    g = std::clamp(g, 0.0, 1.0);
    b = std::clamp(b, 0.0, 1.0);
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double den = 1.0 - std::abs(mx + mn - 1.0);
    if (mx - mn <= 0.0 || den <= 1e-12) return 0.0;
    return std::min(1.0, (mx - mn) / den);
}

double srgb_to_linear(double v) {
    if (v <= 0.04045) return v / 12.92;
    return std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
    if (v <= 0.0031308) return v * 12.92;
    return 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

namespace {

std::string lower_extension(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string token;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!token.empty()) break;
            continue;
        }
        token.push_back(static_cast<char>(c));
    }
    return token;
}

int parse_dimension(const std::string& token, const fs::path& path) {
    try {
        std::size_t used = 0;
        const long v = std::stol(token, &used);
        if (used != token.size() || v < 0 || v > (1 << 24)) throw DataError("");
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw DataError("malformed header in " + path.string());
    }
}

LinearImage load_ppm(std::istream& in, const fs::path& path) {
    const int width = parse_dimension(next_token(in), path);
    const int height = parse_dimension(next_token(in), path);
    const int maxval = parse_dimension(next_token(in), path);
    if (width == 0 || height == 0) throw DataError("zero-dimension image: " + path.string());
    if (maxval <= 0 || maxval > 255) throw DataError("unsupported PPM maxval in " + path.string());

    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw DataError("truncated PPM data in " + path.string());

    std::vector<double> data(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        data[i] = srgb_to_linear(static_cast<double>(bytes[i]) / maxval);
    return LinearImage(width, height, std::move(data));
}

LinearImage load_pfm(std::istream& in, const fs::path& path) {
    const int width = parse_dimension(next_token(in), path);
    const int height = parse_dimension(next_token(in), path);
    const std::string scale_token = next_token(in);
    double scale = 0.0;
    try {
        scale = std::stod(scale_token);
    } catch (const std::exception&) {
        throw DataError("malformed PFM scale in " + path.string());
    }
    if (width == 0 || height == 0) throw DataError("zero-dimension image: " + path.string());
    if (scale == 0.0) throw DataError("malformed PFM scale in " + path.string());
    const bool little = scale < 0.0;

    const std::size_t n = static_cast<std::size_t>(width) * height * 3;
    std::vector<std::uint32_t> words(n);
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(n * 4));
    if (in.gcount() != static_cast<std::streamsize>(n * 4))
        throw DataError("truncated PFM data in " + path.string());

    const bool host_little = std::endian::native == std::endian::little;
    std::vector<double> data(n);
    for (int row = 0; row < height; ++row) {
        const int y = height - 1 - row;  // rows stored bottom-to-top
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                std::uint32_t w = words[(static_cast<std::size_t>(row) * width + x) * 3 + c];
                if (little != host_little) w = __builtin_bswap32(w);
                const float f = std::bit_cast<float>(w);
                if (!std::isfinite(f)) throw DataError("non-finite value in " + path.string());
                data[(static_cast<std::size_t>(y) * width + x) * 3 + c] = f;
            }
        }
    }
    return LinearImage(width, height, std::move(data));
}

}  // namespace

LinearImage load_image(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image " + path.string());
    const std::string magic = next_token(in);
    if (magic == "P6") return load_ppm(in, path);
    if (magic == "PF") return load_pfm(in, path);
    throw DataError("unsupported image format: " + path.string());
}

void save_image(const LinearImage& image, const fs::path& path) {
    if (image.empty()) throw UsageError("cannot save an empty image");
    const std::string ext = lower_extension(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image " + path.string());

    const int w = image.width();
    const int h = image.height();
    const auto data = image.data();
    if (ext == ".pfm") {
        out << "PF\n" << w << ' ' << h << "\n-1.0\n";
        std::vector<std::uint32_t> words(data.size());
        for (int row = 0; row < h; ++row) {
            const int y = h - 1 - row;
            for (std::size_t i = 0; i < static_cast<std::size_t>(w) * 3; ++i) {
                const float f = static_cast<float>(std::clamp(data[static_cast<std::size_t>(y) * w * 3 + i], 0.0, 1.0));
                std::uint32_t word = std::bit_cast<std::uint32_t>(f);
                if constexpr (std::endian::native == std::endian::big) word = __builtin_bswap32(word);
                words[static_cast<std::size_t>(row) * w * 3 + i] = word;
            }
        }
        out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    } else if (ext == ".ppm") {
        out << "P6\n" << w << ' ' << h << "\n255\n";
        std::vector<unsigned char> bytes(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double v = linear_to_srgb(std::clamp(data[i], 0.0, 1.0));
            bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    } else {
        throw UsageError("unsupported output extension: " + path.string());
    }
    if (!out) throw DataError("failed writing image " + path.string());
}

namespace {

struct AxisWeights {
    int first = 0;
    std::vector<double> weights;  // fractions of the output cell covered by source cells
};

// Overlap of output cell [o*src/dst, (o+1)*src/dst) with each source cell,
// normalized to sum to one.
std::vector<AxisWeights> area_weights(int src, int dst) {
    std::vector<AxisWeights> table(dst);
    const double ratio = static_cast<double>(src) / dst;
    for (int o = 0; o < dst; ++o) {
        const double lo = o * ratio;
        const double hi = (o + 1) * ratio;
        const int first = static_cast<int>(std::floor(lo));
        const int last = std::min(src - 1, static_cast<int>(std::ceil(hi)) - 1);
        table[o].first = first;
        for (int s = first; s <= last; ++s) {
            const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
            table[o].weights.push_back(std::max(0.0, overlap) / ratio);
        }
    }
    return table;
}

}  // namespace

LinearImage downsample(const LinearImage& image, int side) {
    if (side <= 0) throw UsageError("downsample side must be >= 1");
    if (image.empty()) throw UsageError("cannot downsample an empty image");
    const auto wx = area_weights(image.width(), side);
    const auto wy = area_weights(image.height(), side);

    // Horizontal pass into a side x height buffer, then vertical.
    std::vector<double> tmp(static_cast<std::size_t>(side) * image.height() * 3, 0.0);
    for (int y = 0; y < image.height(); ++y) {
        for (int ox = 0; ox < side; ++ox) {
            double acc[3] = {0.0, 0.0, 0.0};
            for (std::size_t k = 0; k < wx[ox].weights.size(); ++k) {
                const int sx = wx[ox].first + static_cast<int>(k);
                for (int c = 0; c < 3; ++c) acc[c] += wx[ox].weights[k] * image.at(sx, y, c);
            }
            for (int c = 0; c < 3; ++c) tmp[(static_cast<std::size_t>(y) * side + ox) * 3 + c] = acc[c];
        }
    }
    LinearImage out(side, side);
    for (int oy = 0; oy < side; ++oy) {
        for (int ox = 0; ox < side; ++ox) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < wy[oy].weights.size(); ++k) {
                    const int sy = wy[oy].first + static_cast<int>(k);
                    acc += wy[oy].weights[k] * tmp[(static_cast<std::size_t>(sy) * side + ox) * 3 + c];
                }
                out.at(ox, oy, c) = acc;
            }
        }
    }
    return out;
}

FeatureTriple global_features(const LinearImage& image) {
    const std::size_t n = image.pixel_count();
    if (n == 0) return {};
    double lum_sum = 0.0;
    double sat_sum = 0.0;
    const auto d = image.data();
    for (std::size_t i = 0; i < n; ++i) {
        lum_sum += luminance(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
        sat_sum += hsl_saturation(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
    }
    const double mean = lum_sum / n;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dl = luminance(d[3 * i], d[3 * i + 1], d[3 * i + 2]) - mean;
        var += dl * dl;
    }
    var /= n;
    return {mean, 2.0 * var, sat_sum / n};
}

namespace {

// d clamp(x, 0, 1) / dx with right-sided convention at the corners.
double clamp_slope(double x) { return (x >= 0.0 && x < 1.0) ? 1.0 : 0.0; }

// Gradient of hsl_saturation with respect to (r, g, b).
Pixel hsl_saturation_gradient(double r, double g, double b) {
    const double raw[3] = {r, g, b};
    double c[3];
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(raw[k], 0.0, 1.0);
    int imax = 0, imin = 0;
    for (int k = 1; k < 3; ++k) {
        if (c[k] > c[imax]) imax = k;
        if (c[k] < c[imin]) imin = k;
    }
    const double mx = c[imax];
    const double mn = c[imin];
    const double s = mx + mn - 1.0;
    const double den = 1.0 - std::abs(s);
    Pixel grad{0.0, 0.0, 0.0};
    if (mx - mn <= 0.0 || den <= 1e-12) return grad;
    if ((mx - mn) / den >= 1.0) return grad;  // clipped at 1
    const double sign = s >= 0.0 ? 1.0 : -1.0;
    const double d = mx - mn;
    const double dmax = 1.0 / den + d * sign / (den * den);
    const double dmin = -1.0 / den + d * sign / (den * den);
    grad[imax] += dmax * clamp_slope(raw[imax]);
    grad[imin] += dmin * clamp_slope(raw[imin]);
    return grad;
}

}  // namespace

FeatureGradients global_feature_gradients(const LinearImage& image) {
    const std::size_t n = image.pixel_count();
    const auto d = image.data();
    FeatureGradients g;
    g.luminance.resize(d.size());
    g.contrast.resize(d.size());
    g.saturation.resize(d.size());
    if (n == 0) return g;
    const double w[3] = {kLumR, kLumG, kLumB};
    const double mean = global_features(image).luminance;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double dl = luminance(d[3 * i], d[3 * i + 1], d[3 * i + 2]) - mean;
        const Pixel sg = hsl_saturation_gradient(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
        for (int c = 0; c < 3; ++c) {
            g.luminance[3 * i + c] = w[c] * inv_n;
            // d/dx of 2 * mean((L - mean)^2); the mean's own derivative cancels.
            g.contrast[3 * i + c] = 4.0 * dl * w[c] * inv_n;
            g.saturation[3 * i + c] = sg[c] * inv_n;
        }
    }
    return g;
}

LinearImage crop(const LinearImage& image, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > image.width() || y0 + h > image.height())
        throw UsageError("crop rectangle outside image");
    LinearImage out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(x0 + x, y0 + y, c);
    return out;
}

std::vector<LinearImage> crop_patches(const LinearImage& image, int count, Rng& rng) {
    if (count < 1) throw UsageError("patch count must be >= 1");
    if (image.width() < 2 || image.height() < 2) throw UsageError("image too small to crop patches");
    const int side = std::min(image.width(), image.height()) / 2;
    std::vector<LinearImage> patches;
    patches.reserve(count);
    for (int i = 0; i < count; ++i) {
        const int x0 = static_cast<int>(rng.index(static_cast<std::size_t>(image.width() - side + 1)));
        const int y0 = static_cast<int>(rng.index(static_cast<std::size_t>(image.height() - side + 1)));
        patches.push_back(crop(image, x0, y0, side, side));
    }
    return patches;
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = lower_extension(entry.path());
        if (ext == ".ppm" || ext == ".pfm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace exposure
