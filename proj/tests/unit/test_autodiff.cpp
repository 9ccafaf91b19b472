#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "../support/oracles.hpp"
#include "shapegan/adam.hpp"
#include "shapegan/error.hpp"
#include "shapegan/ops.hpp"

using namespace shapegan;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// Projects a tensor-valued primitive onto a scalar with fixed random weights,
// then compares the tape gradient with central differences.
double unary_grad_error(const std::function<Tensor(const Tensor&)>& op, const Tensor& at,
                        std::uint64_t seed) {
    Rng rng(seed);
    Tensor probe_out = op(at);
    Tensor weights = oracle::random_tensor(rng, probe_out.shape());
    auto scalar = [&](const Tensor& x) { return sum(mul(op(x), weights)).item(); };
    Tape tape;
    Tensor x = tape.watch(at);
    Tensor g = backward(sum(mul(op(x), weights)), x);
    return oracle::relative_error(g.data(), oracle::finite_difference(scalar, at));
}

}  // namespace

TEST_CASE("leaky_relu, mean, and matmul examples") {
    Tensor x({3}, {-1.0, 0.0, 2.0});
    CHECK(values(leaky_relu(x, 0.2)) == std::vector<double>{-0.2, 0.0, 2.0});
    CHECK(mean(Tensor::ones({4, 4})).item() == 1.0);

    Rng rng(7);
    Tensor a = oracle::random_tensor(rng, {3, 4});
    Tensor b = oracle::random_tensor(rng, {4, 2});
    CHECK(max_abs_diff(matmul(a, b), oracle::matmul_direct(a, b)) <= 1e-12);
}

TEST_CASE("conv2d matches the direct loop oracle") {
    Rng rng(11);
    SUBCASE("identity kernel") {
        Tensor x = oracle::random_tensor(rng, {1, 1, 3, 3});
        CHECK(conv2d(x, Tensor::ones({1, 1, 1, 1}), 1, 0).bitwise_equal(x));
    }
    SUBCASE("zero input") {
        Tensor k = oracle::random_tensor(rng, {2, 3, 3, 3});
        Tensor y = conv2d(Tensor::zeros({2, 3, 6, 6}), k, 1, 1);
        for (double v : y.data()) CHECK(v == 0.0);
    }
    SUBCASE("stride 2 pad 1") {
        Tensor x = oracle::random_tensor(rng, {1, 2, 5, 5});
        Tensor k = oracle::random_tensor(rng, {3, 2, 3, 3});
        Tensor y = conv2d(x, k, 2, 1);
        CHECK(y.shape() == Shape{1, 3, 3, 3});
        CHECK(max_abs_diff(y, oracle::conv2d_direct(x, k, 2, 1)) <= 1e-12);
    }
    SUBCASE("assorted geometries") {
        for (std::size_t stride : {1u, 2u, 3u}) {
            for (std::size_t pad : {0u, 1u, 2u}) {
                Tensor x = oracle::random_tensor(rng, {2, 3, 7, 6});
                Tensor k = oracle::random_tensor(rng, {4, 3, 3, 2});
                CHECK(max_abs_diff(conv2d(x, k, stride, pad), oracle::conv2d_direct(x, k, stride, pad)) <=
                      1e-12);
            }
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 1, 1),
                        ConfigError);
        CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), 1, 0),
                        ConfigError);
    }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t stride = 1 + rng.below(2);
        const std::size_t pad = rng.below(2);
        const std::size_t k = 1 + 2 * rng.below(2);
        Tensor u = oracle::random_tensor(rng, {2, 3, 8, 7});
        Tensor kernel = oracle::random_tensor(rng, {4, 3, k, k});
        Tensor cu = conv2d(u, kernel, stride, pad);
        Tensor v = oracle::random_tensor(rng, cu.shape());
        Tensor tv = conv_transpose2d(v, kernel, stride, pad, 8, 7);
        REQUIRE(tv.shape() == u.shape());
        const double lhs = oracle::inner(cu, v);
        const double rhs = oracle::inner(u, tv);
        CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
    }
    Tensor x = oracle::random_tensor(rng, {1, 1, 4, 4});
    Tensor scaled = conv_transpose2d(x, Tensor::full({1, 1, 1, 1}, 2.5), 1, 0);
    CHECK(max_abs_diff(scaled, scalar_mul(x, 2.5)) == 0.0);
    Tensor zero = conv_transpose2d(Tensor::zeros({1, 2, 3, 3}), oracle::random_tensor(rng, {2, 1, 3, 3}), 1, 0);
    for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("backward closed form and error contracts") {
    Tape tape;
    Tensor w = tape.watch(Tensor({3}, {1.0, 2.0, 3.0}));
    Tensor g = backward(sum(mul(w, w)), w);
    CHECK(values(g) == std::vector<double>{2.0, 4.0, 6.0});

    CHECK_THROWS_AS(backward(mul(w, w), w), UsageError);
    Tensor detached({3}, {1.0, 1.0, 1.0});
    CHECK_THROWS_AS(backward(sum(mul(w, w)), detached), UsageError);
    CHECK_THROWS_AS(add(w, Tensor::zeros({4})), ConfigError);
    CHECK_THROWS_AS(div(w, Tensor::zeros({3})), NumericError);
    CHECK_THROWS_AS(exp(Tensor::full({2}, 1e6)), NumericError);
}

TEST_CASE("every primitive matches central finite differences") {
    Rng rng(21);
    const double tol = 1e-6;
    auto rand = [&](const Shape& s, double lo = -2.0, double hi = 2.0) {
        return oracle::random_tensor(rng, s, lo, hi);
    };
    const Tensor other = rand({2, 3});
    const Tensor positive = rand({2, 3}, 0.5, 2.0);
    const Tensor kernel = rand({3, 2, 3, 3});
    const Tensor bias = rand({3});
    const Tensor mat = rand({3, 4});
    const Tensor rowvec = rand({2});
    const Tensor skip = rand({1, 2, 4, 4});
    const Tensor grad_out = rand({1, 3, 2, 2});
    const Tensor image = rand({1, 2, 4, 4});
    // Keep leaky_relu inputs away from the kink.
    Tensor kinkless = rand({2, 3});
    {
        std::vector<double> v = values(kinkless);
        for (auto& x : v) x = (x >= 0 ? 0.05 : -0.05) + x;
        kinkless = Tensor({2, 3}, v);
    }

    struct Case {
        std::string name;
        std::function<Tensor(const Tensor&)> op;
        Tensor at;
    };
    std::vector<Case> cases = {
        {"add", [&](const Tensor& x) { return add(x, other); }, rand({2, 3})},
        {"sub", [&](const Tensor& x) { return sub(other, x); }, rand({2, 3})},
        {"mul", [&](const Tensor& x) { return mul(x, other); }, rand({2, 3})},
        {"div numerator", [&](const Tensor& x) { return div(x, positive); }, rand({2, 3})},
        {"div denominator", [&](const Tensor& x) { return div(other, x); }, rand({2, 3}, 0.5, 2.0)},
        {"scalar_mul", [](const Tensor& x) { return scalar_mul(x, -1.7); }, rand({2, 3})},
        {"add_scalar", [](const Tensor& x) { return add_scalar(x, 0.3); }, rand({2, 3})},
        {"leaky_relu", [](const Tensor& x) { return leaky_relu(x, 0.2); }, kinkless},
        {"sigmoid", [](const Tensor& x) { return sigmoid(x); }, rand({2, 3})},
        {"exp", [](const Tensor& x) { return exp(x); }, rand({2, 3})},
        {"square", [](const Tensor& x) { return square(x); }, rand({2, 3})},
        {"sqrt", [](const Tensor& x) { return sqrt(x); }, rand({2, 3}, 0.5, 2.0)},
        {"sum", [](const Tensor& x) { return sum(x); }, rand({2, 3})},
        {"mean", [](const Tensor& x) { return mean(x); }, rand({2, 3})},
        {"expand", [](const Tensor& x) { return expand(x, {2, 2}); }, rand({1})},
        {"reshape", [](const Tensor& x) { return reshape(x, {3, 2}); }, rand({2, 3})},
        {"matmul left", [&](const Tensor& x) { return matmul(x, mat); }, rand({2, 3})},
        {"matmul right", [&](const Tensor& x) { return matmul(other, x); }, rand({3, 4})},
        {"matmul a^T", [&](const Tensor& x) { return matmul(x, mat, true, false); }, rand({3, 2})},
        {"matmul b^T", [&](const Tensor& x) { return matmul(other, x, false, true); }, rand({4, 3})},
        {"matmul a^T b^T", [&](const Tensor& x) { return matmul(x, other, true, true); }, rand({3, 4})},
        {"matmul a^T b^T right", [&](const Tensor& x) { return matmul(mat, x, true, true); }, rand({2, 3})},
        {"transpose", [](const Tensor& x) { return transpose(x); }, rand({2, 3})},
        {"broadcast_channels", [](const Tensor& x) { return broadcast_channels(x, {2, 3, 2, 2}); }, rand({3})},
        {"sum_channels", [](const Tensor& x) { return sum_channels(x); }, rand({2, 3, 2, 2})},
        {"broadcast_rows", [](const Tensor& x) { return broadcast_rows(x, {2, 3}); }, rand({2})},
        {"sum_rows", [](const Tensor& x) { return sum_rows(x); }, rand({2, 3})},
        {"l2_norm_per_row", [](const Tensor& x) { return l2_norm_per_row(x); }, rand({2, 3, 2})},
        {"nearest_upsample2x", [](const Tensor& x) { return nearest_upsample2x(x); }, rand({1, 2, 2, 3})},
        {"sum_pool2x", [](const Tensor& x) { return sum_pool2x(x); }, rand({1, 2, 4, 4})},
        {"concat_channels", [&](const Tensor& x) { return concat_channels(x, skip); }, rand({1, 3, 4, 4})},
        {"slice_channels", [](const Tensor& x) { return slice_channels(x, 1, 2); }, rand({2, 4, 2, 2})},
        {"embed_channels", [](const Tensor& x) { return embed_channels(x, 1, 4); }, rand({2, 2, 2, 2})},
        {"conv2d input", [&](const Tensor& x) { return conv2d(x, kernel, 2, 1); }, rand({1, 2, 5, 5})},
        {"conv2d kernel", [&](const Tensor& k) { return conv2d(image, k, 1, 1); }, rand({3, 2, 3, 3})},
        {"conv_transpose2d input", [&](const Tensor& x) { return conv_transpose2d(x, kernel, 2, 1, 4, 4); }, rand({1, 3, 2, 2})},
        {"conv_transpose2d kernel", [&](const Tensor& k) { return conv_transpose2d(grad_out, k, 2, 1, 4, 4); }, rand({3, 2, 3, 3})},
        {"conv2d_kernel_grad input", [&](const Tensor& x) { return conv2d_kernel_grad(x, grad_out, 3, 3, 2, 1); }, rand({1, 2, 4, 4})},
        {"conv2d_kernel_grad output", [&](const Tensor& g) { return conv2d_kernel_grad(image, g, 3, 3, 2, 1); }, rand({1, 3, 2, 2})},
        {"linear", [&](const Tensor& x) { return linear(x, mat, bias); }, rand({2, 4})},
        {"add_bias", [&](const Tensor& b) { return add_bias(image, b); }, rand({2})},
        {"log_softmax", [](const Tensor& x) { return log_softmax(x); }, rand({2, 3})},
    };
    std::uint64_t seed = 100;
    for (const auto& c : cases) {
        CAPTURE(c.name);
        const double err = unary_grad_error(c.op, c.at, seed++);
        CHECK(err <= tol);
    }
}

TEST_CASE("double backward of a gradient norm matches nested finite differences") {
    // f(z) = w2 . leaky(W1 z + b1); L = ||df/dz||^2, differentiated w.r.t. W1.
    Rng rng(31);
    const Tensor z0 = oracle::random_tensor(rng, {1, 4});
    const Tensor w1 = oracle::random_tensor(rng, {6, 4}, -1.0, 1.0);
    const Tensor b1 = oracle::random_tensor(rng, {6}, -0.5, 0.5);
    const Tensor w2 = oracle::random_tensor(rng, {1, 6}, -1.0, 1.0);
    const Tensor b2 = Tensor::zeros({1});

    auto f = [&](const Tensor& z, const Tensor& W1) {
        return sum(linear(sigmoid(linear(z, W1, b1)), w2, b2));
    };
    // First-order gradient norm, evaluated with its own tape.
    auto penalty = [&](const Tensor& W1) {
        Tape tape;
        Tensor z = tape.watch(z0);
        Tensor gz = backward(f(z, W1), z);
        return sum(square(gz)).item();
    };

    Tape tape;
    Tensor z = tape.watch(z0);
    Tensor W1 = tape.watch(w1);
    Tensor gz = backward(f(z, W1), z, true);
    CHECK(gz.on_tape());
    Tensor L = sum(square(gz));
    Tensor dW = backward(L, W1);
    const auto fd = oracle::finite_difference(penalty, w1);
    CHECK(oracle::relative_error(dW.data(), fd) <= 1e-5);
}

TEST_CASE("tape replay is deterministic") {
    auto run = [] {
        Rng rng(5);
        Tensor x0 = oracle::random_tensor(rng, {2, 2, 6, 6});
        Tensor k0 = oracle::random_tensor(rng, {3, 2, 3, 3});
        Tape tape;
        Tensor k = tape.watch(k0);
        Tensor y = mean(square(leaky_relu(conv2d(x0, k, 2, 1), 0.2)));
        return std::make_pair(y, backward(y, k));
    };
    auto [y1, g1] = run();
    auto [y2, g2] = run();
    CHECK(y1.bitwise_equal(y2));
    CHECK(g1.bitwise_equal(g2));
}

TEST_CASE("adam matches the hand-executed recurrence") {
    const double eps = 1e-8;
    SUBCASE("single step from zero state") {
        ParamSet p;
        p.add("w", Tensor({1}, {0.5}));
        p.reset_optimizer({0.1, 0.0, 0.9, eps});
        Tensor g({1}, {1.0});
        adam_step(p, std::span<const Tensor>(&g, 1));
        // m_hat = 1, v_hat = 0.1 / (1 - 0.9) = 1.
        const double v_hat = (0.1 * 1.0) / (1.0 - 0.9);
        CHECK(std::abs(p[0][0] - (0.5 - 0.1 * 1.0 / (std::sqrt(v_hat) + eps))) <= 1e-12);
        CHECK(std::abs(p[0][0] - (0.5 - 0.1 / (1.0 + eps))) <= 1e-12);
        CHECK(p.optimizer().step == 1);
    }
    SUBCASE("zero gradient") {
        ParamSet p;
        p.add("w", Tensor({2}, {0.5, -1.0}));
        Tensor g = Tensor::zeros({2});
        adam_step(p, std::span<const Tensor>(&g, 1));
        CHECK(values(p[0]) == std::vector<double>{0.5, -1.0});
        CHECK(p.optimizer().step == 1);
    }
    SUBCASE("two steps with beta1 > 0") {
        const double b1 = 0.5, b2 = 0.9, lr = 0.01, gv = 0.3;
        ParamSet p;
        p.add("w", Tensor({1}, {1.0}));
        p.reset_optimizer({lr, b1, b2, eps});
        Tensor g({1}, {gv});
        adam_step(p, std::span<const Tensor>(&g, 1));
        adam_step(p, std::span<const Tensor>(&g, 1));
        double w = 1.0, m = 0.0, v = 0.0;
        for (int t = 1; t <= 2; ++t) {
            m = b1 * m + (1 - b1) * gv;
            v = b2 * v + (1 - b2) * gv * gv;
            w -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
        }
        CHECK(std::abs(p[0][0] - w) <= 1e-12);
        CHECK(p.optimizer().step == 2);
    }
    SUBCASE("shape mismatch") {
        ParamSet p;
        p.add("w", Tensor({2}, {0.0, 0.0}));
        Tensor g = Tensor::zeros({3});
        CHECK_THROWS_AS(adam_step(p, std::span<const Tensor>(&g, 1)), ConfigError);
    }
}
