#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapegan/adam.hpp"
#include "shapegan/tensor.hpp"

namespace shapegan {

enum class NetKind { encoder, decoder, interpolator, critic, unet, classifier };
enum class LayerType { conv, linear };
enum class Activation { none, leaky_relu, sigmoid };

const char* to_string(NetKind kind);
const char* to_string(Activation act);
NetKind parse_net_kind(const std::string& text);

inline constexpr double kLeakySlope = 0.2;

struct LayerSpec {
    std::string name;
    LayerType type = LayerType::conv;
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;
    Activation activation = Activation::leaky_relu;
    bool upsample_input = false;
    // Index of an earlier layer whose output is concatenated (channel-wise)
    // onto this layer's input, after upsampling. -1 for none.
    int skip_from = -1;

    bool operator==(const LayerSpec&) const = default;
};

struct Architecture {
    NetKind kind = NetKind::encoder;
    std::size_t image_channels = 3;
    std::size_t image_size = 32;
    std::vector<LayerSpec> layers;

    // Shape of one input sample (without batch axis).
    Shape input_shape() const;
    Shape output_shape() const;
    std::string describe() const;

    bool operator==(const Architecture&) const = default;
};

struct ArchitectureOptions {
    std::size_t image_channels = 3;
    std::size_t image_size = 32;
    std::size_t feature_channels = 64;
    std::size_t num_classes = 2;
    std::size_t critic_hidden1 = 256;
    std::size_t critic_hidden2 = 128;
};

Architecture make_architecture(NetKind kind, const ArchitectureOptions& options = {});

// He-normal weights (std = sqrt(2 / fan_in)), zero biases. Parameters are
// stored as <layer>.weight, <layer>.bias in layer order.
ParamSet init_params(const Architecture& arch, std::uint64_t seed);

struct ForwardOptions {
    bool zero_skips = false;
};

// Runs any architecture. weights are either the plain ParamSet values or
// their tape-watched counterparts.
Tensor forward(const Architecture& arch, std::span<const Tensor> weights, const Tensor& input,
               const ForwardOptions& options = {});

enum class FeatureRole { source, target, interpolated, blend };

// N x 64 x S/4 x S/4 encoder output, tagged with the role it plays.
struct FeatureMap {
    Tensor value;
    FeatureRole role = FeatureRole::source;
};

enum class InterpolationMode { linear, learned };

// One network: its architecture descriptor and parameters.
struct Model {
    Architecture arch;
    ParamSet params;
};

Model make_model(NetKind kind, const ArchitectureOptions& options, std::uint64_t seed);

FeatureMap encode(const Model& encoder, std::span<const Tensor> weights, const Tensor& images,
                  FeatureRole role = FeatureRole::source);
Tensor decode(const Model& decoder, std::span<const Tensor> weights, const FeatureMap& features);
Tensor critic_score(const Model& critic, std::span<const Tensor> weights, const FeatureMap& features);
Tensor segment(const Model& unet, std::span<const Tensor> weights, const Tensor& images,
               const ForwardOptions& options = {});

// linear: fx + alpha (fy - fx); learned: fx + alpha * I(fy - fx).
// alpha is either one value or one per sample.
FeatureMap interpolate(const FeatureMap& fx, const FeatureMap& fy, std::span<const double> alpha,
                       InterpolationMode mode, const Model* interpolator = nullptr,
                       std::span<const Tensor> weights = {});
FeatureMap interpolate(const FeatureMap& fx, const FeatureMap& fy, double alpha,
                       InterpolationMode mode, const Model* interpolator = nullptr,
                       std::span<const Tensor> weights = {});

// Convenience overloads that use the model's own (constant) parameters.
FeatureMap encode(const Model& encoder, const Tensor& images, FeatureRole role = FeatureRole::source);
Tensor decode(const Model& decoder, const FeatureMap& features);
Tensor critic_score(const Model& critic, const FeatureMap& features);
Tensor segment(const Model& unet, const Tensor& images, const ForwardOptions& options = {});

}  // namespace shapegan
