#include "exposure/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "exposure/error.hpp"

namespace exposure::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using MapConstVec = Eigen::Map<const Eigen::VectorXd>;

int conv_out(int side) {
    const int span = side + 2 * kPad - kKernel;
    return span < 0 ? 0 : span / kStride + 1;
}

// Plain loops with a fixed summation order. Eigen's vectorized reductions
// and matrix-vector products peel unaligned leading elements, so their
// rounding depends on where the heap placed the buffers, which breaks
// run-to-run reproducibility of training.
void matvec(const double* w, int rows, int cols, const double* x, double* y) {
    for (int r = 0; r < rows; ++r) {
        const double* row = w + static_cast<std::size_t>(r) * cols;
        double acc[4] = {0.0, 0.0, 0.0, 0.0};
        int c = 0;
        for (; c + 4 <= cols; c += 4)
            for (int j = 0; j < 4; ++j) acc[j] += row[c + j] * x[c + j];
        for (; c < cols; ++c) acc[0] += row[c] * x[c];
        y[r] = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
}

// y = W^T x for row-major W (rows x cols).
void matvec_transposed(const double* w, int rows, int cols, const double* x, double* y) {
    std::fill(y, y + cols, 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* row = w + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) y[c] += row[c] * x[r];
    }
}

void row_sums(const double* m, int rows, std::size_t cols, double* out) {
    for (int r = 0; r < rows; ++r) {
        const double* row = m + static_cast<std::size_t>(r) * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c];
        out[r] = acc;
    }
}

// Kernel tap k of output position o along one axis lands inside [0, side).
bool tap_inside(int o, int k, int side) {
    const int i = o * kStride + k - kPad;
    return i >= 0 && i < side;
}

// Splits off spatially constant channels, then unfolds the rest into a
// (V*16) x (Ho*Wo) row-major matrix.
ConvColumns unfold(const double* in, int channels, int h, int w) {
    ConvColumns c;
    const std::size_t area = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < channels; ++ch) {
        const double* plane = in + static_cast<std::size_t>(ch) * area;
        const bool constant = std::all_of(plane + 1, plane + area, [&](double v) { return v == plane[0]; });
        if (constant) {
            c.flat.push_back(ch);
            c.flat_value.push_back(plane[0]);
        } else {
            c.varying.push_back(ch);
        }
    }
    const int ho = conv_out(h);
    const int wo = conv_out(w);
    const std::size_t width = static_cast<std::size_t>(ho) * wo;
    c.cols.assign(c.varying.size() * kKernel * kKernel * width, 0.0);
    for (std::size_t v = 0; v < c.varying.size(); ++v) {
        const double* plane = in + static_cast<std::size_t>(c.varying[v]) * area;
        for (int ky = 0; ky < kKernel; ++ky) {
            for (int kx = 0; kx < kKernel; ++kx) {
                double* row = c.cols.data() + ((v * kKernel + ky) * kKernel + kx) * width;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * kStride + ky - kPad;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = plane + static_cast<std::size_t>(iy) * w;
                    double* dst = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * kStride + kx - kPad;
                        if (ix >= 0 && ix < w) dst[ox] = src[ix];
                    }
                }
            }
        }
    }
    return c;
}

bool varying_is_prefix(const ConvColumns& c) {
    for (std::size_t v = 0; v < c.varying.size(); ++v)
        if (c.varying[v] != static_cast<int>(v)) return false;
    return true;
}

// Weight columns belonging to the varying channels.
RowMat varying_weights(const double* w, int out, int in, const ConvColumns& c) {
    const Eigen::Index taps = kKernel * kKernel;
    MapConstMat weights(w, out, in * taps);
    RowMat sub(out, static_cast<Eigen::Index>(c.varying.size()) * taps);
    for (std::size_t v = 0; v < c.varying.size(); ++v)
        sub.middleCols(static_cast<Eigen::Index>(v) * taps, taps) = weights.middleCols(c.varying[v] * taps, taps);
    return sub;
}

// y (out x Ho*Wo) = W * x without the bias.
void conv_apply(const double* w, int out, int in, int h, int wd, const ConvColumns& c, double* y) {
    const int ho = conv_out(h), wo = conv_out(wd);
    const Eigen::Index n = static_cast<Eigen::Index>(ho) * wo;
    const Eigen::Index taps = kKernel * kKernel;
    const Eigen::Index kv = static_cast<Eigen::Index>(c.varying.size()) * taps;
    MapMat result(y, out, n);
    MapConstMat cols(c.cols.data(), kv, n);
    if (kv == 0) {
        result.setZero();
    } else if (varying_is_prefix(c)) {
        result.noalias() = MapConstMat(w, out, in * taps).leftCols(kv) * cols;
    } else {
        result.noalias() = varying_weights(w, out, in, c) * cols;
    }
    if (c.flat.empty()) return;

    // A constant channel contributes value * (sum of the in-bounds taps).
    std::vector<double> folded(kKernel * kKernel);
    std::vector<double> by_column(static_cast<std::size_t>(kKernel) * wo);
    for (int o = 0; o < out; ++o) {
        std::fill(folded.begin(), folded.end(), 0.0);
        const double* wo_row = w + static_cast<std::size_t>(o) * in * taps;
        for (std::size_t f = 0; f < c.flat.size(); ++f)
            for (int t = 0; t < taps; ++t) folded[t] += c.flat_value[f] * wo_row[c.flat[f] * taps + t];
        for (int ky = 0; ky < kKernel; ++ky)
            for (int ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (int kx = 0; kx < kKernel; ++kx)
                    if (tap_inside(ox, kx, wd)) acc += folded[ky * kKernel + kx];
                by_column[static_cast<std::size_t>(ky) * wo + ox] = acc;
            }
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (int ky = 0; ky < kKernel; ++ky)
                    if (tap_inside(oy, ky, h)) acc += by_column[static_cast<std::size_t>(ky) * wo + ox];
                result(o, static_cast<Eigen::Index>(oy) * wo + ox) += acc;
            }
    }
}

// Weight gradient (out x in*16) of upstream . (W * x).
void conv_weight_grad(double* gw, int out, int in, int h, int wd, const ConvColumns& c, const double* d_out) {
    const int ho = conv_out(h), wo = conv_out(wd);
    const Eigen::Index n = static_cast<Eigen::Index>(ho) * wo;
    const Eigen::Index taps = kKernel * kKernel;
    const Eigen::Index kv = static_cast<Eigen::Index>(c.varying.size()) * taps;
    MapMat grad(gw, out, in * taps);
    MapConstMat d(d_out, out, n);
    if (kv > 0) {
        MapConstMat cols(c.cols.data(), kv, n);
        if (varying_is_prefix(c)) {
            grad.leftCols(kv).noalias() = d * cols.transpose();
        } else {
            const RowMat sub = d * cols.transpose();
            for (std::size_t v = 0; v < c.varying.size(); ++v)
                grad.middleCols(c.varying[v] * taps, taps) = sub.middleCols(static_cast<Eigen::Index>(v) * taps, taps);
        }
    }
    if (c.flat.empty()) return;

    // Sum of upstream over the positions where each tap is in bounds.
    std::vector<double> by_row(static_cast<std::size_t>(kKernel) * wo);
    for (int o = 0; o < out; ++o) {
        std::fill(by_row.begin(), by_row.end(), 0.0);
        for (int oy = 0; oy < ho; ++oy)
            for (int ky = 0; ky < kKernel; ++ky) {
                if (!tap_inside(oy, ky, h)) continue;
                for (int ox = 0; ox < wo; ++ox) by_row[static_cast<std::size_t>(ky) * wo + ox] += d(o, static_cast<Eigen::Index>(oy) * wo + ox);
            }
        double tap_sum[kKernel * kKernel];
        for (int ky = 0; ky < kKernel; ++ky)
            for (int kx = 0; kx < kKernel; ++kx) {
                double acc = 0.0;
                for (int ox = 0; ox < wo; ++ox)
                    if (tap_inside(ox, kx, wd)) acc += by_row[static_cast<std::size_t>(ky) * wo + ox];
                tap_sum[ky * kKernel + kx] = acc;
            }
        for (std::size_t f = 0; f < c.flat.size(); ++f)
            for (int t = 0; t < taps; ++t) grad(o, c.flat[f] * taps + t) = c.flat_value[f] * tap_sum[t];
    }
}

void col2im(const RowMat& cols, double* out, int channels, int h, int w) {
    const int ho = conv_out(h);
    const int wo = conv_out(w);
    for (int c = 0; c < channels; ++c) {
        double* plane = out + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < kKernel; ++ky) {
            for (int kx = 0; kx < kKernel; ++kx) {
                const double* row = cols.row((c * kKernel + ky) * kKernel + kx).data();
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * kStride + ky - kPad;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * w;
                    const double* src = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * kStride + kx - kPad;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::size_t layer_param_count(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::Conv:
            return static_cast<std::size_t>(l.out) * l.in * kKernel * kKernel + l.out;
        case LayerKind::Dense:
            return static_cast<std::size_t>(l.out) * l.in + l.out;
        default:
            return 0;
    }
}

}  // namespace

std::size_t shape_size(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_size(shape)) throw UsageError("tensor data does not match shape");
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Network::Network(std::vector<int> input_shape, std::vector<LayerSpec> layers, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), seed_(seed) {
    std::vector<int> shape = input_shape_;
    std::size_t offset = 0;
    for (const auto& l : layers_) {
        shapes_.push_back(shape);
        offsets_.push_back(offset);
        switch (l.kind) {
            case LayerKind::Conv:
                if (shape.size() != 3 || shape[0] != l.in)
                    throw UsageError("conv layer input channels do not match");
                shape = {l.out, conv_out(shape[1]), conv_out(shape[2])};
                if (shape[1] <= 0 || shape[2] <= 0) throw UsageError("conv stack shrinks input below 1 pixel");
                break;
            case LayerKind::Dense:
                if (shape_size(shape) != static_cast<std::size_t>(l.in))
                    throw UsageError("dense layer input width does not match");
                shape = {l.out};
                break;
            default:
                break;
        }
        offset += layer_param_count(l);
    }
    shapes_.push_back(shape);

    // Uniform in +-1/sqrt(fan_in); biases zero.
    params_.assign(offset, 0.0);
    Rng rng(seed);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        std::size_t fan_in = 0, count = 0;
        if (l.kind == LayerKind::Conv) {
            fan_in = static_cast<std::size_t>(l.in) * kKernel * kKernel;
            count = fan_in * l.out;
        } else if (l.kind == LayerKind::Dense) {
            fan_in = static_cast<std::size_t>(l.in);
            count = fan_in * l.out;
        } else {
            continue;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t k = 0; k < count; ++k) params_[offsets_[i] + k] = rng.uniform(-bound, bound);
    }
}

std::size_t Network::output_size() const { return shape_size(shapes_.back()); }

std::span<double> Network::mutable_params() {
    ++version_;
    return params_;
}

std::vector<int> Network::shape_after(std::size_t layer) const { return shapes_[layer + 1]; }

Tape Network::forward(const Tensor& input, Rng* rng) const {
    if (input.shape != input_shape_) throw UsageError("network input shape mismatch");
    Tape tape;
    tape.net = this;
    tape.version = version_;
    tape.values.reserve(layers_.size() + 1);
    tape.masks.resize(layers_.size());
    tape.conv.resize(layers_.size());
    tape.values.push_back(input);

    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const Tensor& x = tape.values.back();
        Tensor y(shape_after(i));
        const double* w = params_.data() + offsets_[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                const int h = x.shape[1], wd = x.shape[2];
                tape.conv[i] = unfold(x.data.data(), l.in, h, wd);
                conv_apply(w, l.out, l.in, h, wd, tape.conv[i], y.data.data());
                const Eigen::Index k = static_cast<Eigen::Index>(l.in) * kKernel * kKernel;
                const Eigen::Index n = static_cast<Eigen::Index>(conv_out(h)) * conv_out(wd);
                MapMat(y.data.data(), l.out, n).colwise() += MapConstVec(w + static_cast<std::size_t>(l.out) * k, l.out);
                break;
            }
            case LayerKind::Dense: {
                matvec(w, l.out, l.in, x.data.data(), y.data.data());
                const double* bias = w + static_cast<std::size_t>(l.out) * l.in;
                for (int o = 0; o < l.out; ++o) y.data[o] += bias[o];
                break;
            }
            case LayerKind::LeakyRelu: {
                auto& mask = tape.masks[i];
                mask.resize(x.size());
                for (std::size_t k = 0; k < x.size(); ++k) {
                    mask[k] = x.data[k] >= 0.0 ? 1.0 : l.param;
                    y.data[k] = mask[k] * x.data[k];
                }
                break;
            }
            case LayerKind::Dropout: {
                auto& mask = tape.masks[i];
                mask.assign(x.size(), 1.0);
                if (rng != nullptr && l.param > 0.0) {
                    const double keep = 1.0 - l.param;
                    for (auto& m : mask) m = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
                }
                for (std::size_t k = 0; k < x.size(); ++k) y.data[k] = mask[k] * x.data[k];
                break;
            }
        }
        tape.values.push_back(std::move(y));
    }
    return tape;
}

Tape Network::forward_tangent(const Tape& primal, const Tensor& tangent) const {
    if (primal.net != this || primal.version != version_) throw UsageError("stale tape");
    if (tangent.shape != input_shape_) throw UsageError("tangent shape mismatch");
    Tape tape;
    tape.net = this;
    tape.version = version_;
    tape.tangent = true;
    tape.masks = primal.masks;
    tape.conv.resize(layers_.size());
    tape.values.reserve(layers_.size() + 1);
    tape.values.push_back(tangent);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const Tensor& x = tape.values.back();
        Tensor y(shape_after(i));
        const double* w = params_.data() + offsets_[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                tape.conv[i] = unfold(x.data.data(), l.in, x.shape[1], x.shape[2]);
                conv_apply(w, l.out, l.in, x.shape[1], x.shape[2], tape.conv[i], y.data.data());
                break;
            }
            case LayerKind::Dense: {
                matvec(w, l.out, l.in, x.data.data(), y.data.data());
                break;
            }
            case LayerKind::LeakyRelu:
            case LayerKind::Dropout:
                for (std::size_t k = 0; k < x.size(); ++k) y.data[k] = tape.masks[i][k] * x.data[k];
                break;
        }
        tape.values.push_back(std::move(y));
    }
    return tape;
}

Gradients Network::backward(const Tape& tape, std::span<const double> upstream, bool want_input,
                            bool want_params) const {
    if (tape.net != this || tape.version != version_) throw UsageError("stale tape");
    if (upstream.size() != tape.output().size()) throw UsageError("upstream gradient size mismatch");
    Gradients g;
    if (want_params) g.params.assign(params_.size(), 0.0);
    std::vector<double> delta(upstream.begin(), upstream.end());

    for (std::size_t i = layers_.size(); i-- > 0;) {
        const auto& l = layers_[i];
        const Tensor& x = tape.values[i];
        const bool need_dx = want_input || i > 0;
        std::vector<double> dx;
        const double* w = params_.data() + offsets_[i];
        double* gw = want_params ? g.params.data() + offsets_[i] : nullptr;
        switch (l.kind) {
            case LayerKind::Conv: {
                const int h = x.shape[1], wd = x.shape[2];
                const Eigen::Index k = static_cast<Eigen::Index>(l.in) * kKernel * kKernel;
                const Eigen::Index n = static_cast<Eigen::Index>(conv_out(h)) * conv_out(wd);
                MapConstMat d_out(delta.data(), l.out, n);
                if (gw != nullptr) {
                    conv_weight_grad(gw, l.out, l.in, h, wd, tape.conv[i], delta.data());
                    if (!tape.tangent) row_sums(delta.data(), l.out, static_cast<std::size_t>(n), gw + static_cast<std::size_t>(l.out) * k);
                }
                if (need_dx) {
                    MapConstMat weights(w, l.out, k);
                    const RowMat d_cols = weights.transpose() * d_out;
                    dx.assign(x.size(), 0.0);
                    col2im(d_cols, dx.data(), l.in, h, wd);
                }
                break;
            }
            case LayerKind::Dense: {
                MapConstVec d_out(delta.data(), l.out);
                MapConstVec in(x.data.data(), l.in);
                if (gw != nullptr) {
                    MapMat(gw, l.out, l.in).noalias() = d_out * in.transpose();
                    if (!tape.tangent) MapVec(gw + static_cast<std::size_t>(l.out) * l.in, l.out) = d_out;
                }
                if (need_dx) {
                    dx.assign(x.size(), 0.0);
                    matvec_transposed(w, l.out, l.in, delta.data(), dx.data());
                }
                break;
            }
            case LayerKind::LeakyRelu:
            case LayerKind::Dropout:
                dx.resize(delta.size());
                for (std::size_t k = 0; k < delta.size(); ++k) dx[k] = delta[k] * tape.masks[i][k];
                break;
        }
        delta = std::move(dx);
    }
    if (want_input) g.input = Tensor(input_shape_, std::move(delta));
    return g;
}

std::uint64_t Network::architecture_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (int d : input_shape_) h = fnv1a(h, &d, sizeof d);
    for (const auto& l : layers_) {
        const auto kind = static_cast<std::uint8_t>(l.kind);
        h = fnv1a(h, &kind, 1);
        h = fnv1a(h, &l.in, sizeof l.in);
        h = fnv1a(h, &l.out, sizeof l.out);
        const auto bits = std::bit_cast<std::uint64_t>(l.param);
        h = fnv1a(h, &bits, sizeof bits);
    }
    return h;
}

std::vector<LayerSpec> backbone_layers(const BackboneConfig& c, bool with_head) {
    std::vector<LayerSpec> layers;
    int channels = c.in_channels;
    int side = c.side;
    for (int width : c.conv_widths) {
        layers.push_back({LayerKind::Conv, channels, width, 0.0});
        layers.push_back({LayerKind::LeakyRelu, 0, 0, kLeakySlope});
        channels = width;
        side = conv_out(side);
    }
    if (side <= 0) throw UsageError("backbone input side too small for four stride-2 convolutions");
    layers.push_back({LayerKind::Dense, channels * side * side, c.fc_width, 0.0});
    layers.push_back({LayerKind::LeakyRelu, 0, 0, kLeakySlope});
    if (c.dropout > 0.0) layers.push_back({LayerKind::Dropout, 0, 0, c.dropout});
    if (with_head) layers.push_back({LayerKind::Dense, c.fc_width, c.outputs, 0.0});
    return layers;
}

Network make_backbone(const BackboneConfig& c, std::uint64_t seed, bool with_head) {
    return Network({c.in_channels, c.side, c.side}, backbone_layers(c, with_head), seed);
}

Tensor input_with_planes(const LinearImage& image, std::span<const double> planes, int side) {
    if (image.width() != side || image.height() != side)
        throw UsageError("network input image must be " + std::to_string(side) + "x" + std::to_string(side));
    const int channels = 3 + static_cast<int>(planes.size());
    Tensor t({channels, side, side});
    const std::size_t area = static_cast<std::size_t>(side) * side;
    const auto d = image.data();
    for (std::size_t i = 0; i < area; ++i)
        for (int c = 0; c < 3; ++c) t.data[c * area + i] = d[3 * i + c];
    for (std::size_t p = 0; p < planes.size(); ++p)
        std::fill_n(t.data.begin() + static_cast<std::ptrdiff_t>((3 + p) * area), area, planes[p]);
    return t;
}

std::vector<double> softmax(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
    for (auto& v : p) v /= sum;
    return p;
}

std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> upstream) {
    double dot = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * upstream[i];
    std::vector<double> g(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (upstream[i] - dot);
    return g;
}

AdamState::AdamState(std::size_t n, double lr, std::int64_t total)
    : m(n, 0.0), v(n, 0.0), base_lr(lr), total_iterations(std::max<std::int64_t>(1, total)) {}

double AdamState::effective_lr(std::int64_t iteration) const {
    return base_lr * std::pow(1e-3, static_cast<double>(iteration) / static_cast<double>(total_iterations));
}

void adam_step(AdamState& s, std::span<double> weights, std::span<const double> grads, std::int64_t iteration) {
    if (weights.size() != grads.size() || s.m.size() != weights.size())
        throw UsageError("adam: weight/gradient/state sizes differ");
    for (double g : grads)
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in optimizer step");
    ++s.step;
    const double lr = s.effective_lr(iteration);
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < weights.size(); ++i) {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
        const double mhat = s.m[i] / c1;
        const double vhat = s.v[i] / c2;
        weights[i] -= lr * mhat / (std::sqrt(vhat) + s.eps);
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kMagic[7] = {'E', 'X', 'P', 'N', 'E', 'T', '1'};

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw DataError("truncated checkpoint");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace

void Checkpoint::put(const std::string& tag, const Network& net) { sections_.insert_or_assign(tag, net); }

const Network& Checkpoint::get(const std::string& tag) const {
    const auto it = sections_.find(tag);
    if (it == sections_.end()) throw DataError("checkpoint has no section '" + tag + "'");
    return it->second;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(sections_.size()));
    for (const auto& [tag, net] : sections_) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tag.size()));
        out.write(tag.data(), static_cast<std::streamsize>(tag.size()));
        write_le<std::uint64_t>(out, net.seed());
        write_le<std::uint64_t>(out, net.architecture_hash());
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.input_shape().size()));
        for (int d : net.input_shape()) write_le<std::int32_t>(out, d);
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers().size()));
        for (const auto& l : net.layers()) {
            write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.kind));
            write_le<std::int32_t>(out, l.in);
            write_le<std::int32_t>(out, l.out);
            write_le<double>(out, l.param);
        }
        write_le<std::uint64_t>(out, net.param_count());
        for (double w : net.params()) write_le<float>(out, static_cast<float>(w));
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (in.gcount() != sizeof magic || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw DataError("not an EXPNET1 checkpoint: " + path.string());
    Checkpoint ckpt;
    const auto count = read_le<std::uint32_t>(in);
    for (std::uint32_t s = 0; s < count; ++s) {
        const auto tag_len = read_le<std::uint32_t>(in);
        if (tag_len > 4096) throw DataError("corrupt checkpoint section tag");
        std::string tag(tag_len, '\0');
        in.read(tag.data(), tag_len);
        const auto seed = read_le<std::uint64_t>(in);
        const auto hash = read_le<std::uint64_t>(in);
        const auto ndim = read_le<std::uint32_t>(in);
        if (ndim > 8) throw DataError("corrupt checkpoint input shape");
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = read_le<std::int32_t>(in);
        const auto nlayers = read_le<std::uint32_t>(in);
        if (nlayers > 1024) throw DataError("corrupt checkpoint layer table");
        std::vector<LayerSpec> layers(nlayers);
        for (auto& l : layers) {
            const auto kind = read_le<std::uint8_t>(in);
            if (kind > static_cast<std::uint8_t>(LayerKind::Dropout)) throw DataError("unknown layer kind in checkpoint");
            l.kind = static_cast<LayerKind>(kind);
            l.in = read_le<std::int32_t>(in);
            l.out = read_le<std::int32_t>(in);
            l.param = read_le<double>(in);
        }
        Network net;
        try {
            net = Network(shape, layers, seed);
        } catch (const UsageError& e) {
            throw DataError(std::string("invalid layer table in checkpoint: ") + e.what());
        }
        if (net.architecture_hash() != hash) throw DataError("checkpoint architecture hash mismatch in '" + tag + "'");
        const auto n = read_le<std::uint64_t>(in);
        if (n != net.param_count()) throw DataError("checkpoint weight count mismatch in '" + tag + "'");
        auto params = net.mutable_params();
        for (auto& w : params) w = read_le<float>(in);
        ckpt.sections_.insert_or_assign(tag, std::move(net));
    }
    return ckpt;
}

}  // namespace exposure::nn
