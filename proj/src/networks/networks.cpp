#include "shapegan/networks.hpp"

#include "shapegan/error.hpp"
#include "shapegan/ops.hpp"

namespace shapegan {

namespace {

void require_input(const Architecture& arch, const Tensor& input, const char* what) {
    Shape expected = arch.input_shape();
    if (input.rank() < 1 ||
        Shape(input.shape().begin() + 1, input.shape().end()) != expected) {
        throw ConfigError(std::string(what) + ": expected input N x " +
                          shape_string(expected) + ", got " + shape_string(input.shape()));
    }
}

Tensor activate(const Tensor& x, Activation act) {
    switch (act) {
        case Activation::none: return x;
        case Activation::leaky_relu: return leaky_relu(x, kLeakySlope);
        case Activation::sigmoid: return sigmoid(x);
    }
    return x;
}

}  // namespace

Tensor forward(const Architecture& arch, std::span<const Tensor> weights, const Tensor& input,
               const ForwardOptions& options) {
    if (weights.size() != 2 * arch.layers.size()) {
        throw ConfigError(std::string(to_string(arch.kind)) + ": expected " +
                          std::to_string(2 * arch.layers.size()) + " weight tensors, got " +
                          std::to_string(weights.size()));
    }
    require_input(arch, input, to_string(arch.kind));
    std::vector<Tensor> outputs;
    outputs.reserve(arch.layers.size());
    Tensor x = input;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        const Tensor& w = weights[2 * i];
        const Tensor& b = weights[2 * i + 1];
        if (l.upsample_input) x = nearest_upsample2x(x);
        if (l.skip_from >= 0) {
            const Tensor& skip = outputs.at(static_cast<std::size_t>(l.skip_from));
            x = concat_channels(x, options.zero_skips ? Tensor::zeros(skip.shape()) : skip);
        }
        if (l.type == LayerType::linear) {
            if (x.rank() > 2) x = flatten(x);
            x = linear(x, w, b);
        } else {
            x = add_bias(conv2d(x, w, l.stride, l.pad), b);
        }
        x = activate(x, l.activation);
        outputs.push_back(x);
    }
    return x;
}

FeatureMap encode(const Model& encoder, std::span<const Tensor> weights, const Tensor& images,
                  FeatureRole role) {
    return {forward(encoder.arch, weights, images), role};
}

Tensor decode(const Model& decoder, std::span<const Tensor> weights, const FeatureMap& features) {
    return forward(decoder.arch, weights, features.value);
}

Tensor critic_score(const Model& critic, std::span<const Tensor> weights,
                    const FeatureMap& features) {
    const Tensor& f = features.value;
    if (f.rank() < 2 || f.numel() / f.dim(0) != critic.arch.layers.front().in) {
        throw ConfigError("critic: feature shape " + shape_string(f.shape()) +
                          " does not match critic input " +
                          std::to_string(critic.arch.layers.front().in));
    }
    return forward(critic.arch, weights, f.rank() > 2 ? flatten(f) : f);
}

Tensor segment(const Model& unet, std::span<const Tensor> weights, const Tensor& images,
               const ForwardOptions& options) {
    return forward(unet.arch, weights, images, options);
}

FeatureMap interpolate(const FeatureMap& fx, const FeatureMap& fy, std::span<const double> alpha,
                       InterpolationMode mode, const Model* interpolator,
                       std::span<const Tensor> weights) {
    const Tensor& x = fx.value;
    const Tensor& y = fy.value;
    if (x.shape() != y.shape()) {
        throw ConfigError("interpolate: feature shapes differ " + shape_string(x.shape()) + " vs " +
                          shape_string(y.shape()));
    }
    const std::size_t n = x.dim(0);
    if (alpha.size() != 1 && alpha.size() != n) {
        throw UsageError("interpolate: expected 1 or " + std::to_string(n) + " alpha values");
    }
    std::vector<double> per_sample(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = alpha.size() == 1 ? alpha[0] : alpha[i];
        if (!(a >= 0.0 && a <= 1.0)) {
            throw UsageError("interpolate: alpha " + std::to_string(a) + " outside [0, 1]");
        }
        per_sample[i] = a;
    }
    std::vector<double> complement(n);
    for (std::size_t i = 0; i < n; ++i) complement[i] = 1.0 - per_sample[i];
    const Tensor a = broadcast_rows(Tensor({n}, per_sample), x.shape());

    if (mode == InterpolationMode::linear) {
        // (1 - a) x + a y: exact at both endpoints.
        const Tensor b = broadcast_rows(Tensor({n}, complement), x.shape());
        return {add(mul(b, x), mul(a, y)), FeatureRole::interpolated};
    }
    if (!interpolator) throw UsageError("interpolate: learned mode needs an interpolator network");
    std::span<const Tensor> w = weights.empty() ? std::span<const Tensor>(interpolator->params.values())
                                                : weights;
    const Tensor direction = forward(interpolator->arch, w, sub(y, x));
    return {add(x, mul(a, direction)), FeatureRole::interpolated};
}

FeatureMap interpolate(const FeatureMap& fx, const FeatureMap& fy, double alpha,
                       InterpolationMode mode, const Model* interpolator,
                       std::span<const Tensor> weights) {
    return interpolate(fx, fy, std::span<const double>(&alpha, 1), mode, interpolator, weights);
}

FeatureMap encode(const Model& encoder, const Tensor& images, FeatureRole role) {
    return encode(encoder, encoder.params.values(), images, role);
}
Tensor decode(const Model& decoder, const FeatureMap& features) {
    return decode(decoder, decoder.params.values(), features);
}
Tensor critic_score(const Model& critic, const FeatureMap& features) {
    return critic_score(critic, critic.params.values(), features);
}
Tensor segment(const Model& unet, const Tensor& images, const ForwardOptions& options) {
    return segment(unet, unet.params.values(), images, options);
}

}  // namespace shapegan
