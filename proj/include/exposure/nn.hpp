#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "exposure/image.hpp"
#include "exposure/rng.hpp"

namespace exposure::nn {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> data);

    std::size_t size() const { return data.size(); }
    bool all_finite() const;
};

std::size_t shape_size(const std::vector<int>& shape);

enum class LayerKind : std::uint8_t { Conv = 0, Dense = 1, LeakyRelu = 2, Dropout = 3 };

// Conv layers are 4x4, stride 2, zero padding 1 (halving each spatial side).
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int in = 0;           // channels (Conv) or width (Dense)
    int out = 0;
    double param = 0.0;   // leaky slope or dropout rate

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline constexpr int kKernel = 4;
inline constexpr int kStride = 2;
inline constexpr int kPad = 1;
inline constexpr double kLeakySlope = 0.2;

class Network;

// A conv layer's input split into spatially varying channels, unfolded into
// patch columns, and constant channels (such as broadcast feature planes),
// which are handled in closed form.
struct ConvColumns {
    std::vector<double> cols;  // (varying.size() * 16) x (Ho * Wo), row-major
    std::vector<int> varying;
    std::vector<int> flat;
    std::vector<double> flat_value;
};

// Activations recorded by a forward pass; consumed by backward.
struct Tape {
    const Network* net = nullptr;
    std::uint64_t version = 0;
    std::vector<Tensor> values;              // values[i] is the input to layer i; back() is the output
    std::vector<std::vector<double>> masks;  // per layer: dropout scale or leaky-relu slope per element
    std::vector<ConvColumns> conv;           // per conv layer, reused by backward
    bool tangent = false;

    const Tensor& output() const { return values.back(); }
};

struct Gradients {
    std::vector<double> params;  // flat, same layout as Network::params()
    Tensor input;
};

class Network {
public:
    Network() = default;
    Network(std::vector<int> input_shape, std::vector<LayerSpec> layers, std::uint64_t seed);

    const std::vector<int>& input_shape() const { return input_shape_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t output_size() const;

    std::span<const double> params() const { return params_; }
    // Mutable access bumps the version, invalidating outstanding tapes.
    std::span<double> mutable_params();
    std::size_t param_count() const { return params_.size(); }
    std::uint64_t version() const { return version_; }

    // Dropout masks are drawn from `rng`; pass nullptr to disable dropout.
    Tape forward(const Tensor& input, Rng* rng) const;

    // d(upstream . output) / d(params, input). Dropout masks are replayed.
    // Gradients::params is left empty when want_params is false.
    Gradients backward(const Tape& tape, std::span<const double> upstream, bool want_input = true,
                       bool want_params = true) const;

    // Propagates an input tangent through the network linearized at `primal`
    // (biases drop out, activation slopes and dropout masks are reused). For
    // piecewise-linear activations, backward() on the returned tape yields the
    // parameter gradient of the directional derivative upstream . J tangent.
    Tape forward_tangent(const Tape& primal, const Tensor& tangent) const;

    // Hash of input shape and layer table.
    std::uint64_t architecture_hash() const;

private:
    std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
    std::vector<int> shape_after(std::size_t layer) const;

    std::vector<int> input_shape_;
    std::vector<LayerSpec> layers_;
    std::vector<std::size_t> offsets_;  // start of each layer's weights (bias follows)
    std::vector<std::vector<int>> shapes_;  // shapes_[i] = input shape of layer i
    std::vector<double> params_;
    std::uint64_t seed_ = 0;
    std::uint64_t version_ = 0;
};

// Shared backbone: four 4x4/stride-2 convs, FC to `fc_width`, optional
// dropout, final FC to `outputs`. Leaky ReLU on hidden layers.
struct BackboneConfig {
    int in_channels = 3;
    int side = 64;
    std::array<int, 4> conv_widths{16, 32, 64, 128};
    int fc_width = 128;
    double dropout = 0.5;
    int outputs = 1;
};

std::vector<LayerSpec> backbone_layers(const BackboneConfig& config, bool with_head = true);
Network make_backbone(const BackboneConfig& config, std::uint64_t seed, bool with_head = true);

// Image as channel-major tensor followed by spatially constant planes.
Tensor input_with_planes(const LinearImage& image, std::span<const double> planes, int side = 64);

std::vector<double> softmax(std::span<const double> logits);
// Backward through softmax: returns d(upstream . p)/d logits.
std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> upstream);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;
    double base_lr = 1e-3;
    std::int64_t total_iterations = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(std::size_t n, double base_lr, std::int64_t total_iterations);

    // base * 0.001^(iteration / total)
    double effective_lr(std::int64_t iteration) const;
};

// Descends along `grads`. Throws NumericError on a non-finite gradient.
void adam_step(AdamState& state, std::span<double> weights, std::span<const double> grads, std::int64_t iteration);

// Versioned binary container: magic "EXPNET1", then tagged network sections
// with their layer tables, seeds, architecture hashes, and float32 weights.
class Checkpoint {
public:
    void put(const std::string& tag, const Network& net);
    const Network& get(const std::string& tag) const;
    bool contains(const std::string& tag) const { return sections_.count(tag) != 0; }
    const std::map<std::string, Network>& sections() const { return sections_; }

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

private:
    std::map<std::string, Network> sections_;
};

}  // namespace exposure::nn
