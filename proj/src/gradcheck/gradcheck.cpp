#include "shapegan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "shapegan/error.hpp"
#include "shapegan/objectives.hpp"
#include "shapegan/ops.hpp"
#include "shapegan/rng.hpp"

namespace shapegan {

GradLevel parse_grad_level(const std::string& text) {
    if (text == "quick") return GradLevel::quick;
    if (text == "full") return GradLevel::full;
    throw UsageError("grad-check level must be quick or full, got '" + text + "'");
}

double gradient_error(std::span<const double> analytic, std::span<const double> numeric) {
    if (analytic.size() != numeric.size()) throw UsageError("gradient_error: length mismatch");
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    if (scale == 0.0) return 0.0;
    return diff / scale;
}

std::vector<double> analytic_gradient(const GradCase& c) {
    Tape tape;
    const std::vector<Tensor> w = tape.watch(c.inputs);
    const Tensor loss = c.objective(w);
    if (loss.numel() != 1) throw UsageError("grad case " + c.name + " is not scalar");
    std::vector<double> out;
    for (const Tensor& g : backward(loss, w)) {
        if (g.defined()) {
            out.insert(out.end(), g.data().begin(), g.data().end());
        }
    }
    return out;
}

std::vector<double> numeric_gradient(const GradCase& c, double h) {
    std::vector<Tensor> at = c.inputs;
    std::vector<double> out;
    for (std::size_t t = 0; t < at.size(); ++t) {
        const Tensor original = at[t];
        std::vector<double> v(original.data().begin(), original.data().end());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double x = v[i];
            v[i] = x + h;
            at[t] = Tensor(original.shape(), v);
            const double plus = c.objective(at).item();
            v[i] = x - h;
            at[t] = Tensor(original.shape(), v);
            const double minus = c.objective(at).item();
            v[i] = x;
            out.push_back((plus - minus) / (2.0 * h));
        }
        at[t] = original;
    }
    return out;
}

GradResult check_case(const GradCase& c, double h) {
    const std::vector<double> a = analytic_gradient(c);
    const std::vector<double> n = numeric_gradient(c, h);
    if (a.size() != n.size()) {
        throw VerificationError(c.name + ": backward returned " + std::to_string(a.size()) + " values for " +
                                std::to_string(n.size()) + " inputs");
    }
    return {c.name, gradient_error(a, n), c.tolerance, n.size()};
}

namespace mini {

namespace {

LayerSpec layer(std::string name, LayerType type, std::size_t in, std::size_t out, Activation act,
                std::size_t stride = 1, bool upsample = false, int skip = -1) {
    LayerSpec l;
    l.name = std::move(name);
    l.type = type;
    l.in = in;
    l.out = out;
    l.stride = stride;
    l.activation = act;
    l.upsample_input = upsample;
    l.skip_from = skip;
    if (type == LayerType::linear) {
        l.kernel = 1;
        l.pad = 0;
    }
    return l;
}

Model build(NetKind kind, std::vector<LayerSpec> layers, std::uint64_t seed) {
    Architecture a;
    a.kind = kind;
    a.image_channels = kChannels;
    a.image_size = kImageSize;
    a.layers = std::move(layers);
    ParamSet p = init_params(a, seed);
    return {std::move(a), std::move(p)};
}

constexpr auto conv = LayerType::conv;
constexpr auto dense = LayerType::linear;
constexpr auto lrelu = Activation::leaky_relu;

}  // namespace

Model encoder(std::uint64_t seed) {
    return build(NetKind::encoder,
                 {layer("conv1", conv, kChannels, 4, lrelu, 2), layer("conv2", conv, 4, kFeatures, Activation::none, 2)},
                 seed);
}

Model decoder(std::uint64_t seed) {
    return build(NetKind::decoder,
                 {layer("conv1", conv, kFeatures, 4, lrelu), layer("conv2", conv, 4, 4, lrelu, 1, true),
                  layer("conv3", conv, 4, kChannels, Activation::sigmoid, 1, true)},
                 seed);
}

Model interpolator(std::uint64_t seed) {
    return build(NetKind::interpolator,
                 {layer("conv1", conv, kFeatures, kFeatures, lrelu),
                  layer("conv2", conv, kFeatures, kFeatures, Activation::none)},
                 seed);
}

Model critic(std::size_t in, std::size_t hidden, std::uint64_t seed) {
    return build(NetKind::critic,
                 {layer("fc1", dense, in, hidden, lrelu), layer("fc2", dense, hidden, 1, Activation::none)}, seed);
}

Model unet(std::uint64_t seed) {
    return build(NetKind::unet,
                 {layer("down1", conv, kChannels, 4, lrelu), layer("down2", conv, 4, 4, lrelu, 2),
                  layer("up1", conv, 4 + 4, 4, lrelu, 1, true, 0),
                  layer("head", conv, 4, 1, Activation::sigmoid)},
                 seed);
}

Model classifier(std::size_t classes, std::uint64_t seed) {
    return build(NetKind::classifier,
                 {layer("conv1", conv, kChannels, 4, lrelu, 2),
                  layer("fc", dense, 4 * (kImageSize / 2) * (kImageSize / 2), classes, Activation::none)},
                 seed);
}

}  // namespace mini

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(shape, std::move(v));
}

// Moves every value at least `gap` away from zero, off the leaky-relu kink.
Tensor off_kink(Tensor t, double gap = 0.05) {
    std::vector<double> v(t.data().begin(), t.data().end());
    for (auto& x : v) x += x >= 0 ? gap : -gap;
    return Tensor(t.shape(), std::move(v));
}

GradCase projected(std::string name, Rng& rng, Tensor at, std::function<Tensor(const Tensor&)> op) {
    const Tensor weights = random_tensor(rng, op(at).shape());
    return {std::move(name), {std::move(at)},
            [op = std::move(op), weights](std::span<const Tensor> in) { return sum(mul(op(in[0]), weights)); },
            kPrimitiveTolerance};
}

std::vector<Tensor> concat(std::initializer_list<const std::vector<Tensor>*> parts) {
    std::vector<Tensor> out;
    for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
    return out;
}

std::vector<Tensor> binary_mask(Rng& rng, const Shape& shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform() < 0.5 ? 1.0 : 0.0;
    return {Tensor(shape, std::move(v))};
}

}  // namespace

std::vector<GradCase> primitive_cases(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x9c));
    auto rand = [&](const Shape& s, double lo = -2.0, double hi = 2.0) { return random_tensor(rng, s, lo, hi); };
    const Tensor other = rand({2, 3});
    const Tensor positive = rand({2, 3}, 0.5, 2.0);
    const Tensor kernel = rand({3, 2, 3, 3});
    const Tensor bias = rand({3});
    const Tensor mat = rand({3, 4});
    const Tensor skip = rand({1, 2, 4, 4});
    const Tensor grad_out = rand({1, 3, 2, 2});
    const Tensor image = rand({1, 2, 4, 4});

    std::vector<GradCase> c;
    auto add_case = [&](std::string name, Tensor at, std::function<Tensor(const Tensor&)> op) {
        c.push_back(projected(std::move(name), rng, std::move(at), std::move(op)));
    };
    add_case("add", rand({2, 3}), [=](const Tensor& x) { return add(x, other); });
    add_case("sub", rand({2, 3}), [=](const Tensor& x) { return sub(other, x); });
    add_case("mul", rand({2, 3}), [=](const Tensor& x) { return mul(x, other); });
    add_case("div numerator", rand({2, 3}), [=](const Tensor& x) { return div(x, positive); });
    add_case("div denominator", rand({2, 3}, 0.5, 2.0), [=](const Tensor& x) { return div(other, x); });
    add_case("scalar_mul", rand({2, 3}), [](const Tensor& x) { return scalar_mul(x, -1.7); });
    add_case("add_scalar", rand({2, 3}), [](const Tensor& x) { return add_scalar(x, 0.3); });
    add_case("leaky_relu", off_kink(rand({2, 3})), [](const Tensor& x) { return leaky_relu(x, kLeakySlope); });
    add_case("sigmoid", rand({2, 3}), [](const Tensor& x) { return sigmoid(x); });
    add_case("exp", rand({2, 3}), [](const Tensor& x) { return exp(x); });
    add_case("square", rand({2, 3}), [](const Tensor& x) { return square(x); });
    add_case("sqrt", rand({2, 3}, 0.5, 2.0), [](const Tensor& x) { return sqrt(x); });
    add_case("sum", rand({2, 3}), [](const Tensor& x) { return sum(x); });
    add_case("mean", rand({2, 3}), [](const Tensor& x) { return mean(x); });
    add_case("expand", rand({1}), [](const Tensor& x) { return expand(x, {2, 2}); });
    add_case("reshape", rand({2, 3}), [](const Tensor& x) { return reshape(x, {3, 2}); });
    add_case("flatten", rand({2, 2, 3}), [](const Tensor& x) { return flatten(x); });
    add_case("matmul left", rand({2, 3}), [=](const Tensor& x) { return matmul(x, mat); });
    add_case("matmul right", rand({3, 4}), [=](const Tensor& x) { return matmul(other, x); });
    add_case("matmul a^T", rand({3, 2}), [=](const Tensor& x) { return matmul(x, mat, true, false); });
    add_case("matmul b^T", rand({4, 3}), [=](const Tensor& x) { return matmul(other, x, false, true); });
    add_case("matmul a^T b^T", rand({3, 4}), [=](const Tensor& x) { return matmul(x, other, true, true); });
    add_case("transpose", rand({2, 3}), [](const Tensor& x) { return transpose(x); });
    add_case("broadcast_channels", rand({3}), [](const Tensor& x) { return broadcast_channels(x, {2, 3, 2, 2}); });
    add_case("sum_channels", rand({2, 3, 2, 2}), [](const Tensor& x) { return sum_channels(x); });
    add_case("add_bias", rand({2}), [=](const Tensor& b) { return add_bias(image, b); });
    add_case("broadcast_rows", rand({2}), [](const Tensor& x) { return broadcast_rows(x, {2, 3}); });
    add_case("sum_rows", rand({2, 3}), [](const Tensor& x) { return sum_rows(x); });
    add_case("l2_norm_per_row", rand({2, 3, 2}), [](const Tensor& x) { return l2_norm_per_row(x); });
    add_case("nearest_upsample2x", rand({1, 2, 2, 3}), [](const Tensor& x) { return nearest_upsample2x(x); });
    add_case("sum_pool2x", rand({1, 2, 4, 4}), [](const Tensor& x) { return sum_pool2x(x); });
    add_case("concat_channels", rand({1, 3, 4, 4}), [=](const Tensor& x) { return concat_channels(x, skip); });
    add_case("slice_channels", rand({2, 4, 2, 2}), [](const Tensor& x) { return slice_channels(x, 1, 2); });
    add_case("embed_channels", rand({2, 2, 2, 2}), [](const Tensor& x) { return embed_channels(x, 1, 4); });
    add_case("conv2d input", rand({1, 2, 5, 5}), [=](const Tensor& x) { return conv2d(x, kernel, 2, 1); });
    add_case("conv2d kernel", rand({3, 2, 3, 3}), [=](const Tensor& k) { return conv2d(image, k, 1, 1); });
    add_case("conv_transpose2d input", rand({1, 3, 2, 2}),
             [=](const Tensor& x) { return conv_transpose2d(x, kernel, 2, 1, 4, 4); });
    add_case("conv_transpose2d kernel", rand({3, 2, 3, 3}),
             [=](const Tensor& k) { return conv_transpose2d(grad_out, k, 2, 1, 4, 4); });
    add_case("conv2d_kernel_grad input", rand({1, 2, 4, 4}),
             [=](const Tensor& x) { return conv2d_kernel_grad(x, grad_out, 3, 3, 2, 1); });
    add_case("conv2d_kernel_grad output", rand({1, 3, 2, 2}),
             [=](const Tensor& g) { return conv2d_kernel_grad(image, g, 3, 3, 2, 1); });
    add_case("linear", rand({2, 4}), [=](const Tensor& x) { return linear(x, mat, bias); });
    add_case("log_softmax", rand({2, 3}), [](const Tensor& x) { return log_softmax(x); });
    return c;
}

namespace {

std::vector<GradCase> build_loss_cases(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x105));
    const std::size_t n = 2, s = mini::kImageSize, f = mini::kFeatures;
    const std::size_t latent = f * (s / 4) * (s / 4);
    const Model enc = mini::encoder(derive_seed(seed, 1));
    const Model dec = mini::decoder(derive_seed(seed, 2));
    const Model interp = mini::interpolator(derive_seed(seed, 3));
    const Model critic = mini::critic(latent, 6, derive_seed(seed, 4));
    const Model unet = mini::unet(derive_seed(seed, 5));
    const Model cls = mini::classifier(2, derive_seed(seed, 6));
    const Tensor x = random_tensor(rng, {n, mini::kChannels, s, s}, 0.0, 1.0);
    const Tensor y = random_tensor(rng, {n, mini::kChannels, s, s}, 0.0, 1.0);
    const Tensor gt = binary_mask(rng, {n, 1, s, s}).front();
    const std::vector<double> alpha = {rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)};
    const std::vector<double> eps = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    const Tensor real = random_tensor(rng, {n, f, s / 4, s / 4});
    const Tensor fake = random_tensor(rng, {n, f, s / 4, s / 4});
    const LossWeights weights;

    const std::vector<Tensor>& pe = enc.params.values();
    const std::vector<Tensor>& pd = dec.params.values();
    const std::vector<Tensor>& pi = interp.params.values();
    const std::size_t ne = pe.size(), nd = pd.size(), ni = pi.size();

    // Splits a flat input list back into per-network weight spans.
    struct Parts {
        std::span<const Tensor> e, i, d;
    };
    auto split_eid = [=](std::span<const Tensor> in) { return Parts{in.first(ne), in.subspan(ne, ni), in.subspan(ne + ni, nd)}; };
    auto translated = [=](std::span<const Tensor> in) {
        const Parts p = split_eid(in);
        const FeatureMap fx = encode(enc, p.e, x);
        const FeatureMap fy = encode(enc, p.e, y, FeatureRole::target);
        return decode(dec, p.d, interpolate(fx, fy, alpha, InterpolationMode::learned, &interp, p.i));
    };
    auto const_critic = [=](const Tensor& z) { return critic_score(critic, FeatureMap{z}); };

    std::vector<GradCase> c;
    c.push_back({"loss reconstruction (encoder, decoder)", concat({&pe, &pd}),
                 [=](std::span<const Tensor> in) {
                     return loss_reconstruction(x, decode(dec, in.subspan(ne), encode(enc, in.first(ne), x)));
                 },
                 kLossTolerance});
    c.push_back({"loss critic with penalty (critic)", critic.params.values(),
                 [=](std::span<const Tensor> w) {
                     CriticFn fn = [&](const Tensor& z) { return critic_score(critic, w, FeatureMap{z}); };
                     return loss_critic({{real, FeatureRole::target}, {fake, FeatureRole::interpolated}}, fn, eps,
                                        weights.gradient_penalty)
                         .total;
                 },
                 kLossTolerance});
    c.push_back({"loss critic with penalty (features)", {real, fake},
                 [=](std::span<const Tensor> in) {
                     return loss_critic({{in[0], FeatureRole::target}, {in[1], FeatureRole::interpolated}},
                                        const_critic, eps, weights.gradient_penalty)
                         .total;
                 },
                 kLossTolerance});
    c.push_back({"loss generator adversarial (encoder, interpolator)", concat({&pe, &pi}),
                 [=](std::span<const Tensor> in) {
                     const FeatureMap fx = encode(enc, in.first(ne), x);
                     const FeatureMap fy = encode(enc, in.first(ne), y, FeatureRole::target);
                     const FeatureMap fake_map =
                         interpolate(fx, fy, alpha, InterpolationMode::learned, &interp, in.subspan(ne));
                     return loss_generator_adv(fake_map, const_critic);
                 },
                 kLossTolerance});
    c.push_back({"loss shape (encoder, interpolator, decoder)", concat({&pe, &pi, &pd}),
                 [=](std::span<const Tensor> in) { return loss_shape(unet, translated(in), x); }, kLossTolerance});
    c.push_back({"loss shape to mask (encoder, interpolator, decoder)", concat({&pe, &pi, &pd}),
                 [=](std::span<const Tensor> in) { return loss_shape_to_mask(unet, translated(in), gt); },
                 kLossTolerance});
    c.push_back({"loss generator total (encoder, interpolator, decoder)", concat({&pe, &pi, &pd}),
                 [=](std::span<const Tensor> in) {
                     const Parts p = split_eid(in);
                     const FeatureMap fx = encode(enc, p.e, x);
                     const FeatureMap fy = encode(enc, p.e, y, FeatureRole::target);
                     const FeatureMap mid = interpolate(fx, fy, alpha, InterpolationMode::learned, &interp, p.i);
                     const Tensor adv = loss_generator_adv(mid, const_critic);
                     const Tensor shape = loss_shape(unet, decode(dec, p.d, mid), x);
                     return add(scalar_mul(adv, weights.adversarial), scalar_mul(shape, weights.shape));
                 },
                 kLossTolerance});
    c.push_back({"loss linear interpolation path (encoder)", pe,
                 [=](std::span<const Tensor> in) {
                     const FeatureMap fx = encode(enc, in, x);
                     const FeatureMap fy = encode(enc, in, y, FeatureRole::target);
                     return loss_generator_adv(interpolate(fx, fy, alpha, InterpolationMode::linear), const_critic);
                 },
                 kLossTolerance});
    c.push_back({"loss unet supervised (unet)", unet.params.values(),
                 [=](std::span<const Tensor> w) { return loss_unet_supervised(segment(unet, w, x), gt); },
                 kLossTolerance});
    c.push_back({"dice loss (prediction)", {random_tensor(rng, {n, 1, s, s}, 0.05, 0.95)},
                 [=](std::span<const Tensor> in) { return dice_loss(in[0], gt); }, kLossTolerance});
    c.push_back({"loss cross entropy (classifier)", cls.params.values(),
                 [=](std::span<const Tensor> w) {
                     const std::vector<std::size_t> labels = {0, 1};
                     return loss_cross_entropy(forward(cls.arch, w, x), labels);
                 },
                 kLossTolerance});
    return c;
}

}  // namespace

double kink_margin(const GradCase& c) {
    KinkProbe probe;
    c.objective(c.inputs);
    return probe.margin();
}

std::vector<GradCase> loss_cases(std::uint64_t seed) {
    std::vector<GradCase> cases = build_loss_cases(seed);
    for (std::size_t i = 0; i < cases.size(); ++i) {
        // Redraw the point until no leaky-relu input sits near zero, where a
        // central difference would straddle the kink.
        for (std::uint64_t attempt = 1; kink_margin(cases[i]) < kKinkMargin; ++attempt) {
            if (attempt > 200) throw VerificationError(cases[i].name + ": no kink-free point found");
            cases[i] = build_loss_cases(derive_seed(seed, i, attempt))[i];
        }
    }
    return cases;
}

namespace {

GradCase build_penalty_case(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x69));
    const Model critic = mini::critic(8, 8, derive_seed(seed, 7));
    const Tensor blend = random_tensor(rng, {3, 8});
    return {"gradient penalty double backward (critic)", critic.params.values(),
            [=](std::span<const Tensor> w) {
                return gradient_penalty(blend, [&](const Tensor& z) { return critic_score(critic, w, FeatureMap{z}); });
            },
            kLossTolerance};
}

}  // namespace

GradCase penalty_case(std::uint64_t seed) {
    GradCase c = build_penalty_case(seed);
    for (std::uint64_t attempt = 1; kink_margin(c) < kKinkMargin; ++attempt) {
        if (attempt > 200) throw VerificationError(c.name + ": no kink-free point found");
        c = build_penalty_case(derive_seed(seed, attempt));
    }
    return c;
}

std::vector<GradResult> run_gradcheck(GradLevel level, const std::function<void(const GradResult&)>& on_result) {
    const std::size_t points = level == GradLevel::quick ? 1 : 3;
    std::vector<GradResult> results;
    auto run = [&](const GradCase& c, std::size_t point) {
        GradResult r = check_case(c);
        if (points > 1) r.name += " #" + std::to_string(point + 1);
        if (on_result) on_result(r);
        results.push_back(std::move(r));
    };
    for (std::size_t p = 0; p < points; ++p) {
        const std::uint64_t seed = derive_seed(0x6c, p);
        for (const auto& c : primitive_cases(seed)) run(c, p);
        for (const auto& c : loss_cases(seed)) run(c, p);
        run(penalty_case(seed), p);
    }
    return results;
}

void require_passing(std::span<const GradResult> results) {
    const GradResult* worst = nullptr;
    std::size_t failed = 0;
    for (const auto& r : results) {
        if (r.passed()) continue;
        ++failed;
        if (!worst || r.error / r.tolerance > worst->error / worst->tolerance) worst = &r;
    }
    if (!worst) return;
    char buf[96];
    std::snprintf(buf, sizeof buf, "relative error %.3e exceeds %.1e", worst->error, worst->tolerance);
    throw VerificationError(std::to_string(failed) + " gradient check(s) failed; worst: " + worst->name + ": " + buf);
}

}  // namespace shapegan
