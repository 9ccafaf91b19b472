#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "shapegan/adam.hpp"
#include "shapegan/error.hpp"
#include "shapegan/gradcheck.hpp"
#include "shapegan/objectives.hpp"
#include "shapegan/ops.hpp"
#include "shapegan/synthetic.hpp"

using namespace shapegan;

namespace {

Tensor mask_from_bits(unsigned bits) {
    std::vector<double> v(9);
    for (int i = 0; i < 9; ++i) v[i] = (bits >> i) & 1u;
    return Tensor({1, 9}, v);
}

// <w, f> per row, with a fixed unit-norm w.
CriticFn linear_critic(const Tensor& w) {
    return [w](const Tensor& f) { return matmul(f, w); };
}

}  // namespace

TEST_CASE("reconstruction loss") {
    Rng rng(1);
    const Tensor x = oracle::random_tensor(rng, {2, 3, 4, 4}, 0.0, 1.0);
    CHECK(loss_reconstruction(x, x).item() == 0.0);
    CHECK(loss_reconstruction(Tensor::zeros({2, 3}), Tensor::ones({2, 3})).item() == 1.0);
    const Tensor y = oracle::random_tensor(rng, {2, 3, 4, 4}, 0.0, 1.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    CHECK(std::abs(loss_reconstruction(x, y).item() - acc / static_cast<double>(x.numel())) <= 1e-14);
    CHECK(loss_reconstruction(x, y).item() > 0.0);
    CHECK_THROWS_AS(loss_reconstruction(x, Tensor::zeros({2, 3})), ConfigError);
}

TEST_CASE("critic loss closed forms") {
    const Tensor real({2, 2}, {1.0, 2.0, 3.0, 0.0});
    const Tensor fake({2, 2}, {0.0, 1.0, 2.0, 2.0});
    const std::vector<double> eps = {0.3, 0.8};
    const FeatureBatchPair pair{{real, FeatureRole::target}, {fake, FeatureRole::interpolated}};

    SUBCASE("constant critic: the penalty is one") {
        CriticFn constant = [](const Tensor& f) { return add_scalar(scalar_mul(sum_rows(f), 0.0), 2.5); };
        const CriticLossParts p = loss_critic(pair, constant, eps, 10.0);
        CHECK(p.penalty == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(p.total.item() == doctest::Approx(10.0).epsilon(1e-15));
        CHECK(p.gap == 0.0);
    }
    SUBCASE("unit-norm linear critic: the penalty vanishes") {
        const Tensor w({2, 1}, {0.6, 0.8});
        const CriticLossParts p = loss_critic(pair, linear_critic(w), eps, 10.0);
        // <w, real> = 2.2, 1.8; <w, fake> = 0.8, 2.8.
        CHECK(std::abs(p.penalty) <= 1e-12);
        CHECK(std::abs(p.total.item() - (-0.2)) <= 1e-12);
        CHECK(std::abs(p.gap - 0.2) <= 1e-12);
    }
    SUBCASE("penalty is non-negative and zero only at unit gradient norm") {
        Rng rng(3);
        for (int t = 0; t < 20; ++t) {
            const Tensor w = oracle::random_tensor(rng, {2, 1});
            const double gp = gradient_penalty(real, linear_critic(w)).item();
            const double norm = std::sqrt(w[0] * w[0] + w[1] * w[1]);
            CHECK(gp >= 0.0);
            CHECK(std::abs(gp - (norm - 1.0) * (norm - 1.0)) <= 1e-12);
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(loss_critic({{real}, {Tensor::zeros({3, 2})}}, linear_critic(Tensor({2, 1}, {1.0, 0.0})),
                                    eps, 10.0),
                        ConfigError);
    }
}

TEST_CASE("generator adversarial loss") {
    const Tensor real({2, 2}, {1.0, 2.0, 3.0, 0.0});
    const Tensor fake({2, 2}, {0.0, 1.0, 2.0, 2.0});
    const Tensor w({2, 1}, {0.6, 0.8});
    CHECK(std::abs(loss_generator_adv({fake}, linear_critic(w)).item() - (-1.8)) <= 1e-12);

    // -mean D(fake) equals minus the penalty-free critic loss, less the detached mean D(real).
    Rng rng(4);
    for (int t = 0; t < 10; ++t) {
        const Tensor r = oracle::random_tensor(rng, {3, 2});
        const Tensor f = oracle::random_tensor(rng, {3, 2});
        const Tensor v = oracle::random_tensor(rng, {2, 1});
        const std::vector<double> eps = {0.1, 0.5, 0.9};
        const double adv = loss_generator_adv({f}, linear_critic(v)).item();
        const double critic = loss_critic({{r}, {f}}, linear_critic(v), eps, 0.0).total.item();
        const double mean_real = mean(matmul(r, v)).item();
        CHECK(std::abs(adv - (-critic - mean_real)) <= 1e-12);
    }

    // A constant critic gives a constant loss and no gradient to E or I.
    const Model enc = mini::encoder(1);
    const Model interp = mini::interpolator(2);
    Rng img(5);
    const Tensor x = oracle::random_tensor(img, {2, 3, 8, 8}, 0.0, 1.0);
    const Tensor y = oracle::random_tensor(img, {2, 3, 8, 8}, 0.0, 1.0);
    CriticFn constant = [](const Tensor& f) { return add_scalar(scalar_mul(sum_rows(f), 0.0), -3.0); };
    Tape tape;
    const auto we = tape.watch(enc.params.values());
    const auto wi = tape.watch(interp.params.values());
    const FeatureMap mid = interpolate(encode(enc, we, x), encode(enc, we, y, FeatureRole::target), 0.4,
                                       InterpolationMode::learned, &interp, wi);
    const Tensor loss = loss_generator_adv(mid, constant);
    CHECK(loss.item() == 3.0);
    std::vector<Tensor> all = we;
    all.insert(all.end(), wi.begin(), wi.end());
    for (const Tensor& g : backward(loss, all)) {
        for (double v : g.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("dice loss") {
    SUBCASE("identical all-ones masks") {
        const Tensor ones = Tensor::ones({1, 1, 32, 32});
        CHECK(dice_loss(ones, ones).item() == 0.0);
    }
    SUBCASE("disjoint masks") {
        const Tensor ones = Tensor::ones({2, 1, 4, 4});
        const Tensor zeros = Tensor::zeros({2, 1, 4, 4});
        CHECK(std::abs(dice_loss(ones, zeros).item() - (1.0 - 1.0 / 17.0)) <= 1e-15);
    }
    SUBCASE("all 512 masks against a checkerboard") {
        const unsigned checker = 0b101010101;
        const Tensor p = mask_from_bits(checker);
        double worst = 0.0;
        for (unsigned bits = 0; bits < 512; ++bits) {
            int both = 0, np = 0, nr = 0;
            for (int i = 0; i < 9; ++i) {
                const int a = (checker >> i) & 1, b = (bits >> i) & 1;
                both += a & b;
                np += a;
                nr += b;
            }
            const double expected = 1.0 - (2.0 * both + 1.0) / (np + nr + 1.0);
            worst = std::max(worst, std::abs(dice_loss(p, mask_from_bits(bits)).item() - expected));
        }
        CHECK(worst <= 1e-12);
    }
    SUBCASE("range and symmetry") {
        Rng rng(6);
        for (int t = 0; t < 20; ++t) {
            const Tensor a = oracle::random_tensor(rng, {2, 1, 3, 3}, 0.0, 1.0);
            const Tensor b = oracle::random_tensor(rng, {2, 1, 3, 3}, 0.0, 1.0);
            const double ab = dice_loss(a, b).item();
            CHECK(ab >= 0.0);
            CHECK(ab < 1.0);
            CHECK(ab == dice_loss(b, a).item());
        }
    }
    CHECK_THROWS_AS(dice_loss(Tensor::ones({1, 4}), Tensor::ones({1, 5})), ConfigError);
}

TEST_CASE("shape loss holds the UNet constant") {
    const Model unet = mini::unet(7);
    Rng rng(8);
    const Tensor x = oracle::random_tensor(rng, {2, 3, 8, 8}, 0.0, 1.0);
    const Tensor m = segment(unet, x);
    CHECK(loss_shape(unet, x, x).item() == dice_loss(m, m).item());
    const Tensor saturated = Tensor::ones({2, 1, 8, 8});
    CHECK(dice_loss(saturated, saturated).item() == 0.0);

    Tape tape;
    const auto wu = tape.watch(unet.params.values());
    const Tensor image = tape.watch(oracle::random_tensor(rng, {2, 3, 8, 8}, 0.0, 1.0));
    const Tensor loss = loss_shape(unet, image, x);
    std::vector<Tensor> wrt = wu;
    wrt.push_back(image);
    const auto grads = backward(loss, wrt);
    for (std::size_t i = 0; i < wu.size(); ++i) {
        for (double v : grads[i].data()) CHECK(v == 0.0);
    }
    double norm = 0.0;
    for (double v : grads.back().data()) norm += v * v;
    CHECK(norm > 0.0);

    // Gradient with respect to the interpolated image against central differences.
    auto f = [&](std::span<const Tensor> in) { return loss_shape(unet, in[0], x).item(); };
    Tape t2;
    const Tensor at = oracle::random_tensor(rng, {2, 3, 8, 8}, 0.0, 1.0);
    const Tensor z = t2.watch(at);
    const Tensor g = backward(loss_shape(unet, z, x), z);
    CHECK(oracle::relative_error(g.data(), oracle::finite_difference_all(f, {at})) <= 1e-5);
}

TEST_CASE("supervised UNet loss") {
    const std::size_t n = 16;
    std::vector<double> half(n, 0.0), inverted(n, 1.0);
    for (std::size_t i = 0; i < n / 2; ++i) {
        half[i] = 1.0;
        inverted[i] = 0.0;
    }
    const Tensor gt({1, 1, 4, 4}, half);
    CHECK(loss_unet_supervised(gt, gt).item() == 0.0);
    // |p n r| = 0, |p| = |r| = 8, s = 1.
    CHECK(std::abs(loss_unet_supervised(Tensor({1, 1, 4, 4}, inverted), gt).item() - (1.0 - 1.0 / 17.0)) <= 1e-15);
    CHECK_THROWS_AS(loss_unet_supervised(gt, Tensor::full({1, 1, 4, 4}, 0.5)), ConfigError);

    // Decreases over supervised training on ten synthetic samples.
    std::vector<double> imgs, masks;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const ImageSample smp = generate_sample(s + 100, default_domain(s % 2), 16);
        imgs.insert(imgs.end(), smp.image.data().begin(), smp.image.data().end());
        masks.insert(masks.end(), smp.mask.data().begin(), smp.mask.data().end());
    }
    const Tensor x({10, 3, 16, 16}, imgs), y({10, 1, 16, 16}, masks);
    ArchitectureOptions o;
    o.image_size = 16;
    Model unet = make_model(NetKind::unet, o, 9);
    unet.params.reset_optimizer({1e-3, 0.9, 0.999, 1e-8});
    double first = 0.0, last = 0.0;
    for (int it = 0; it < 40; ++it) {
        Tape tape;
        const auto w = tape.watch(unet.params.values());
        const Tensor loss = loss_unet_supervised(segment(unet, w, x), y);
        if (it == 0) first = loss.item();
        last = loss.item();
        adam_step(unet.params, backward(loss, w));
    }
    CHECK(last < first);
}

TEST_CASE("cross entropy") {
    const Tensor logits({2, 3}, {0.0, 0.0, 0.0, 1.0, 2.0, 3.0});
    const std::vector<std::size_t> labels = {1, 2};
    const double expected = 0.5 * (std::log(3.0) + (std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0));
    CHECK(std::abs(loss_cross_entropy(logits, labels).item() - expected) <= 1e-14);
    const std::vector<std::size_t> bad = {0, 3};
    CHECK_THROWS_AS(loss_cross_entropy(logits, bad), ConfigError);
}

TEST_CASE("loss weights validate") {
    LossWeights w;
    CHECK(w.gradient_penalty == 10.0);
    CHECK_NOTHROW(w.validate());
    w.shape = -1.0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("every loss matches finite differences on miniature networks") {
    for (const GradCase& c : loss_cases(11)) {
        CAPTURE(c.name);
        const auto analytic = analytic_gradient(c);
        const auto fd = oracle::finite_difference_all([&](std::span<const Tensor> in) { return c.objective(in).item(); },
                                                      c.inputs);
        REQUIRE(analytic.size() == fd.size());
        CHECK(oracle::relative_error(analytic, fd) <= 1e-5);
        CHECK(oracle::normwise_error(analytic, fd) <= 1e-5);
    }
    const GradCase gp = penalty_case(12);
    const auto fd = oracle::finite_difference_all([&](std::span<const Tensor> in) { return gp.objective(in).item(); },
                                                  gp.inputs);
    CHECK(oracle::normwise_error(analytic_gradient(gp), fd) <= 1e-5);
}
