#include <sstream>

#include "shapegan/error.hpp"
#include "shapegan/networks.hpp"
#include "shapegan/rng.hpp"

namespace shapegan {

const char* to_string(NetKind kind) {
    switch (kind) {
        case NetKind::encoder: return "encoder";
        case NetKind::decoder: return "decoder";
        case NetKind::interpolator: return "interpolator";
        case NetKind::critic: return "critic";
        case NetKind::unet: return "unet";
        case NetKind::classifier: return "classifier";
    }
    return "?";
}

const char* to_string(Activation act) {
    switch (act) {
        case Activation::none: return "none";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

NetKind parse_net_kind(const std::string& text) {
    for (NetKind k : {NetKind::encoder, NetKind::decoder, NetKind::interpolator, NetKind::critic,
                      NetKind::unet, NetKind::classifier}) {
        if (text == to_string(k)) return k;
    }
    throw ConfigError("unknown network kind " + text);
}

namespace {

LayerSpec conv(std::string name, std::size_t in, std::size_t out, std::size_t stride,
               Activation act, bool upsample = false, int skip = -1, std::size_t kernel = 3) {
    LayerSpec l;
    l.name = std::move(name);
    l.type = LayerType::conv;
    l.in = in;
    l.out = out;
    l.kernel = kernel;
    l.stride = stride;
    l.pad = kernel / 2;
    l.activation = act;
    l.upsample_input = upsample;
    l.skip_from = skip;
    return l;
}

LayerSpec dense(std::string name, std::size_t in, std::size_t out, Activation act) {
    LayerSpec l;
    l.name = std::move(name);
    l.type = LayerType::linear;
    l.in = in;
    l.out = out;
    l.kernel = 1;
    l.stride = 1;
    l.pad = 0;
    l.activation = act;
    return l;
}

constexpr auto lrelu = Activation::leaky_relu;

}  // namespace

Shape Architecture::input_shape() const {
    const std::size_t s = image_size;
    const std::size_t f = layers.front().in;
    switch (kind) {
        case NetKind::encoder:
        case NetKind::unet:
        case NetKind::classifier: return {image_channels, s, s};
        case NetKind::decoder:
        case NetKind::interpolator: return {f, s / 4, s / 4};
        case NetKind::critic: return {f};
    }
    return {};
}

Shape Architecture::output_shape() const {
    const std::size_t s = image_size;
    const std::size_t out = layers.back().out;
    switch (kind) {
        case NetKind::encoder:
        case NetKind::interpolator: return {out, s / 4, s / 4};
        case NetKind::decoder:
        case NetKind::unet: return {out, s, s};
        case NetKind::critic:
        case NetKind::classifier: return {out};
    }
    return {};
}

std::string Architecture::describe() const {
    std::ostringstream out;
    out << to_string(kind) << " channels=" << image_channels << " size=" << image_size << '\n';
    for (const auto& l : layers) {
        out << "  " << l.name << ' ' << (l.type == LayerType::conv ? "conv" : "linear") << ' '
            << l.in << "->" << l.out << " k=" << l.kernel << " s=" << l.stride << " p=" << l.pad
            << " act=" << to_string(l.activation) << " up=" << l.upsample_input
            << " skip=" << l.skip_from << '\n';
    }
    return out.str();
}

Architecture make_architecture(NetKind kind, const ArchitectureOptions& o) {
    if (o.image_size < 16 || o.image_size % 8 != 0) {
        throw ConfigError("image size must be a multiple of 8 and at least 16, got " +
                          std::to_string(o.image_size));
    }
    if (o.image_channels == 0 || o.feature_channels == 0 || o.critic_hidden1 == 0 || o.critic_hidden2 == 0) {
        throw ConfigError("channel counts must be positive");
    }
    Architecture a;
    a.kind = kind;
    a.image_channels = o.image_channels;
    a.image_size = o.image_size;
    const std::size_t c = o.image_channels;
    const std::size_t f = o.feature_channels;
    const std::size_t latent = f * (o.image_size / 4) * (o.image_size / 4);

    switch (kind) {
        case NetKind::encoder:
            a.layers = {conv("conv1", c, 16, 2, lrelu), conv("conv2", 16, 32, 2, lrelu),
                        conv("conv3", 32, f, 1, Activation::none)};
            break;
        case NetKind::decoder:
            a.layers = {conv("conv1", f, 32, 1, lrelu), conv("conv2", 32, 16, 1, lrelu, true),
                        conv("conv3", 16, 8, 1, lrelu, true),
                        conv("conv4", 8, c, 1, Activation::sigmoid)};
            break;
        case NetKind::interpolator:
            a.layers = {conv("conv1", f, f, 1, lrelu), conv("conv2", f, f, 1, Activation::none)};
            break;
        case NetKind::critic:
            a.layers = {dense("fc1", latent, o.critic_hidden1, lrelu),
                        dense("fc2", o.critic_hidden1, o.critic_hidden2, lrelu),
                        dense("fc3", o.critic_hidden2, 1, Activation::none)};
            break;
        case NetKind::unet:
            // Down path 16/32/64 over 32/16/8; up path concatenates the skips.
            a.layers = {conv("down1", c, 16, 1, lrelu),
                        conv("down2", 16, 32, 2, lrelu),
                        conv("down3", 32, 64, 2, lrelu),
                        conv("up1", 64, 32, 1, lrelu),
                        conv("up2", 32 + 32, 16, 1, lrelu, true, 1),
                        conv("up3", 16 + 16, 8, 1, lrelu, true, 0),
                        conv("head", 8, 1, 1, Activation::sigmoid, false, -1, 1)};
            break;
        case NetKind::classifier: {
            const std::size_t s8 = o.image_size / 8;
            a.layers = {conv("conv1", c, 8, 2, lrelu), conv("conv2", 8, 16, 2, lrelu),
                        conv("conv3", 16, 32, 2, lrelu),
                        dense("fc", 32 * s8 * s8, o.num_classes, Activation::none)};
            break;
        }
    }
    return a;
}

ParamSet init_params(const Architecture& arch, std::uint64_t seed) {
    ParamSet params;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(arch.kind) + 1));
    for (const auto& l : arch.layers) {
        const std::size_t fan_in = l.type == LayerType::conv ? l.in * l.kernel * l.kernel : l.in;
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        Shape wshape = l.type == LayerType::conv ? Shape{l.out, l.in, l.kernel, l.kernel}
                                                 : Shape{l.out, l.in};
        std::vector<double> w(shape_numel(wshape));
        for (auto& v : w) v = scale * rng.normal();
        params.add(l.name + ".weight", Tensor(wshape, std::move(w)));
        params.add(l.name + ".bias", Tensor::zeros({l.out}));
    }
    return params;
}

Model make_model(NetKind kind, const ArchitectureOptions& options, std::uint64_t seed) {
    Model m;
    m.arch = make_architecture(kind, options);
    m.params = init_params(m.arch, seed);
    return m;
}

}  // namespace shapegan
