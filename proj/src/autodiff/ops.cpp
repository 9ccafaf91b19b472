#include "shapegan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ops_common.hpp"

namespace shapegan {

using detail::finish;
using detail::require;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_string(a.shape()) + " vs " +
                                        shape_string(b.shape()));
}

template <class F>
std::vector<double> map_values(const Tensor& x, F f) {
    std::vector<double> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return out;
}

template <class F>
std::vector<double> zip_values(const Tensor& a, const Tensor& b, F f) {
    std::vector<double> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
    return out;
}

void require_nchw(const char* op, const Tensor& x) {
    require(x.rank() == 4, std::string(op) + ": expected N x C x H x W, got " +
                               shape_string(x.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    return finish("add", a.shape(), zip_values(a, b, [](double x, double y) { return x + y; }),
                  {&a, &b}, [] {
                      return [](const Tensor& g) { return std::vector<Tensor>{g, g}; };
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    return finish("sub", a.shape(), zip_values(a, b, [](double x, double y) { return x - y; }),
                  {&a, &b}, [] {
                      return [](const Tensor& g) {
                          return std::vector<Tensor>{g, scalar_mul(g, -1.0)};
                      };
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    return finish("mul", a.shape(), zip_values(a, b, [](double x, double y) { return x * y; }),
                  {&a, &b}, [&] {
                      return [a, b](const Tensor& g) {
                          return std::vector<Tensor>{mul(g, b), mul(g, a)};
                      };
                  });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape("div", a, b);
    return finish("div", a.shape(), zip_values(a, b, [](double x, double y) { return x / y; }),
                  {&a, &b}, [&] {
                      return [a, b](const Tensor& g) {
                          Tensor ga = div(g, b);
                          Tensor gb = scalar_mul(div(mul(ga, a), b), -1.0);
                          return std::vector<Tensor>{ga, gb};
                      };
                  });
}

Tensor scalar_mul(const Tensor& x, double c) {
    return finish("scalar_mul", x.shape(), map_values(x, [c](double v) { return c * v; }), {&x},
                  [c] {
                      return [c](const Tensor& g) { return std::vector<Tensor>{scalar_mul(g, c)}; };
                  });
}

Tensor add_scalar(const Tensor& x, double c) {
    return finish("add_scalar", x.shape(), map_values(x, [c](double v) { return v + c; }), {&x},
                  [] { return [](const Tensor& g) { return std::vector<Tensor>{g}; }; });
}

namespace {
thread_local KinkProbe* active_probe = nullptr;
}

KinkProbe::KinkProbe() : margin_(std::numeric_limits<double>::infinity()), previous_(active_probe) {
    active_probe = this;
}
KinkProbe::~KinkProbe() { active_probe = previous_; }
void KinkProbe::observe(double v) noexcept { margin_ = std::min(margin_, std::abs(v)); }

Tensor leaky_relu(const Tensor& x, double slope) {
    if (active_probe) {
        for (double v : x.data()) active_probe->observe(v);
    }
    return finish("leaky_relu", x.shape(),
                  map_values(x, [slope](double v) { return v > 0.0 ? v : slope * v; }), {&x},
                  [&] {
                      Tensor mask(x.shape(),
                                  map_values(x, [slope](double v) { return v > 0.0 ? 1.0 : slope; }));
                      return [mask](const Tensor& g) { return std::vector<Tensor>{mul(g, mask)}; };
                  });
}

Tensor sigmoid(const Tensor& x) {
    return finish("sigmoid", x.shape(), map_values(x, [](double v) {
                      return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                      : std::exp(v) / (1.0 + std::exp(v));
                  }),
                  {&x}, [&] {
                      return [x](const Tensor& g) {
                          Tensor s = sigmoid(x);
                          Tensor ds = mul(s, add_scalar(scalar_mul(s, -1.0), 1.0));
                          return std::vector<Tensor>{mul(g, ds)};
                      };
                  });
}

Tensor exp(const Tensor& x) {
    return finish("exp", x.shape(), map_values(x, [](double v) { return std::exp(v); }), {&x},
                  [&] {
                      return [x](const Tensor& g) { return std::vector<Tensor>{mul(g, exp(x))}; };
                  });
}

Tensor square(const Tensor& x) {
    return finish("square", x.shape(), map_values(x, [](double v) { return v * v; }), {&x}, [&] {
        return [x](const Tensor& g) { return std::vector<Tensor>{mul(g, scalar_mul(x, 2.0))}; };
    });
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.data()) {
        if (v < 0.0) throw NumericError("sqrt of a negative value");
    }
    return finish("sqrt", x.shape(), map_values(x, [](double v) { return std::sqrt(v); }), {&x},
                  [&] {
                      return [x](const Tensor& g) {
                          return std::vector<Tensor>{div(scalar_mul(g, 0.5), sqrt(x))};
                      };
                  });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return finish("sum", {1}, {total}, {&x}, [&] {
        Shape shape = x.shape();
        return [shape](const Tensor& g) { return std::vector<Tensor>{expand(g, shape)}; };
    });
}

Tensor mean(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    const double n = static_cast<double>(x.numel());
    return finish("mean", {1}, {total / n}, {&x}, [&] {
        Shape shape = x.shape();
        return [shape, n](const Tensor& g) {
            return std::vector<Tensor>{expand(scalar_mul(g, 1.0 / n), shape)};
        };
    });
}

Tensor expand(const Tensor& s, const Shape& shape) {
    require(s.numel() == 1, "expand: source must have one element, got " + shape_string(s.shape()));
    return finish("expand", shape, std::vector<double>(shape_numel(shape), s[0]), {&s}, [&] {
        Shape source = s.shape();
        return [source](const Tensor& g) {
            return std::vector<Tensor>{reshape(sum(g), source)};
        };
    });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    require(shape_numel(shape) == x.numel(), "reshape: cannot view " + shape_string(x.shape()) +
                                                 " as " + shape_string(shape));
    // Shares storage with x; only the node is new.
    std::shared_ptr<detail::Node> node;
    if (detail::wants_grad({&x})) {
        Shape source = x.shape();
        node = Tape::active()->record("reshape", {&x}, [source](const Tensor& g) {
            return std::vector<Tensor>{reshape(g, source)};
        });
    }
    return x.with_shape(shape).with_node(std::move(node));
}

Tensor flatten(const Tensor& x) {
    require(x.rank() >= 2, "flatten: expected a batch axis");
    return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: expected matrices, got " +
                                                shape_string(a.shape()) + " and " + shape_string(b.shape()));
    const auto m = transpose_a ? a.dim(1) : a.dim(0);
    const auto k = transpose_a ? a.dim(0) : a.dim(1);
    const auto kb = transpose_b ? b.dim(1) : b.dim(0);
    const auto n = transpose_b ? b.dim(0) : b.dim(1);
    require(k == kb, "matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
    std::vector<double> out(m * n);
    ConstMap am(a.data().data(), a.dim(0), a.dim(1));
    ConstMap bm(b.data().data(), b.dim(0), b.dim(1));
    MutMap om(out.data(), m, n);
    if (!transpose_a && !transpose_b) om.noalias() = am * bm;
    else if (!transpose_a) om.noalias() = am * bm.transpose();
    else if (!transpose_b) om.noalias() = am.transpose() * bm;
    else om.noalias() = am.transpose() * bm.transpose();
    return finish("matmul", {m, n}, std::move(out), {&a, &b}, [&] {
        return [a, b, transpose_a, transpose_b, wa = a.on_tape(), wb = b.on_tape()](const Tensor& g) {
            // C = op(A) op(B): d op(A) = G op(B)^T, d op(B) = op(A)^T G.
            Tensor ga, gb;
            if (wa) ga = transpose_a ? matmul(b, g, transpose_b, true) : matmul(g, b, false, !transpose_b);
            if (wb) gb = transpose_b ? matmul(g, a, true, transpose_a) : matmul(a, g, !transpose_a, false);
            return std::vector<Tensor>{ga, gb};
        };
    });
}

Tensor transpose(const Tensor& x) {
    require(x.rank() == 2, "transpose: expected a matrix, got " + shape_string(x.shape()));
    const auto r = x.dim(0), c = x.dim(1);
    std::vector<double> out(r * c);
    MutMap(out.data(), c, r) = ConstMap(x.data().data(), r, c).transpose();
    return finish("transpose", {c, r}, std::move(out), {&x}, [] {
        return [](const Tensor& g) { return std::vector<Tensor>{transpose(g)}; };
    });
}

Tensor broadcast_channels(const Tensor& b, const Shape& shape) {
    require(shape.size() >= 2 && b.rank() == 1 && b.dim(0) == shape[1],
            "broadcast_channels: cannot broadcast " + shape_string(b.shape()) + " to " +
                shape_string(shape));
    const std::size_t outer = shape[0], channels = shape[1];
    const std::size_t inner = shape_numel(shape) / (outer * channels);
    std::vector<double> out(shape_numel(shape));
    auto src = b.data();
    for (std::size_t n = 0; n < outer; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((n * channels + c) * inner),
                        inner, src[c]);
        }
    }
    return finish("broadcast_channels", shape, std::move(out), {&b}, [] {
        return [](const Tensor& g) { return std::vector<Tensor>{sum_channels(g)}; };
    });
}

Tensor sum_channels(const Tensor& x) {
    require(x.rank() >= 2, "sum_channels: expected a channel axis");
    const std::size_t outer = x.dim(0), channels = x.dim(1);
    const std::size_t inner = x.numel() / (outer * channels);
    std::vector<double> out(channels, 0.0);
    auto src = x.data();
    for (std::size_t n = 0; n < outer; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double* p = src.data() + (n * channels + c) * inner;
            double acc = 0.0;
            for (std::size_t i = 0; i < inner; ++i) acc += p[i];
            out[c] += acc;
        }
    }
    return finish("sum_channels", {channels}, std::move(out), {&x}, [&] {
        Shape shape = x.shape();
        return [shape](const Tensor& g) {
            return std::vector<Tensor>{broadcast_channels(g, shape)};
        };
    });
}

Tensor add_bias(const Tensor& x, const Tensor& b) { return add(x, broadcast_channels(b, x.shape())); }

Tensor broadcast_rows(const Tensor& v, const Shape& shape) {
    require(!shape.empty() && v.rank() == 1 && v.dim(0) == shape[0],
            "broadcast_rows: cannot broadcast " + shape_string(v.shape()) + " to " +
                shape_string(shape));
    const std::size_t rows = shape[0];
    const std::size_t inner = shape_numel(shape) / rows;
    std::vector<double> out(shape_numel(shape));
    auto src = v.data();
    for (std::size_t n = 0; n < rows; ++n) {
        std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(n * inner), inner, src[n]);
    }
    return finish("broadcast_rows", shape, std::move(out), {&v}, [] {
        return [](const Tensor& g) { return std::vector<Tensor>{sum_rows(g)}; };
    });
}

Tensor sum_rows(const Tensor& x) {
    require(x.rank() >= 1, "sum_rows: expected a batch axis");
    const std::size_t rows = x.dim(0);
    const std::size_t inner = x.numel() / rows;
    std::vector<double> out(rows, 0.0);
    auto src = x.data();
    for (std::size_t n = 0; n < rows; ++n) {
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) acc += src[n * inner + i];
        out[n] = acc;
    }
    return finish("sum_rows", {rows}, std::move(out), {&x}, [&] {
        Shape shape = x.shape();
        return [shape](const Tensor& g) { return std::vector<Tensor>{broadcast_rows(g, shape)}; };
    });
}

Tensor l2_norm_per_row(const Tensor& x) {
    require(x.rank() >= 1, "l2_norm_per_row: expected a batch axis");
    const std::size_t rows = x.dim(0);
    const std::size_t inner = x.numel() / rows;
    std::vector<double> out(rows, 0.0);
    auto src = x.data();
    for (std::size_t n = 0; n < rows; ++n) {
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) acc += src[n * inner + i] * src[n * inner + i];
        out[n] = std::sqrt(acc);
    }
    // At a zero row the subgradient 0 is used: x is zero there, so any finite
    // divisor gives a zero gradient.
    std::vector<double> zero_fix(rows);
    for (std::size_t n = 0; n < rows; ++n) zero_fix[n] = out[n] == 0.0 ? 1.0 : 0.0;
    return finish("l2_norm_per_row", {rows}, std::move(out), {&x}, [&] {
        Tensor fix({rows}, std::move(zero_fix));
        return [x, fix](const Tensor& g) {
            Tensor norm = add(l2_norm_per_row(x), fix);
            return std::vector<Tensor>{mul(broadcast_rows(div(g, norm), x.shape()), x)};
        };
    });
}

Tensor nearest_upsample2x(const Tensor& x) {
    require_nchw("nearest_upsample2x", x);
    const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<double> out(n * c * h * w * 4);
    auto src = x.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        const double* in = src.data() + p * h * w;
        double* o = out.data() + p * h * w * 4;
        for (std::size_t i = 0; i < 2 * h; ++i) {
            for (std::size_t j = 0; j < 2 * w; ++j) o[i * 2 * w + j] = in[(i / 2) * w + j / 2];
        }
    }
    return finish("nearest_upsample2x", {n, c, 2 * h, 2 * w}, std::move(out), {&x}, [] {
        return [](const Tensor& g) { return std::vector<Tensor>{sum_pool2x(g)}; };
    });
}

Tensor sum_pool2x(const Tensor& x) {
    require_nchw("sum_pool2x", x);
    require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "sum_pool2x: spatial size must be even");
    const auto n = x.dim(0), c = x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
    std::vector<double> out(n * c * h * w, 0.0);
    auto src = x.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        const double* in = src.data() + p * h * w * 4;
        double* o = out.data() + p * h * w;
        for (std::size_t i = 0; i < 2 * h; ++i) {
            for (std::size_t j = 0; j < 2 * w; ++j) o[(i / 2) * w + j / 2] += in[i * 2 * w + j];
        }
    }
    return finish("sum_pool2x", {n, c, h, w}, std::move(out), {&x}, [] {
        return [](const Tensor& g) { return std::vector<Tensor>{nearest_upsample2x(g)}; };
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.rank() >= 2 && a.rank() == b.rank() && a.dim(0) == b.dim(0),
            "concat_channels: incompatible shapes " + shape_string(a.shape()) + " and " +
                shape_string(b.shape()));
    for (std::size_t axis = 2; axis < a.rank(); ++axis) {
        require(a.dim(axis) == b.dim(axis), "concat_channels: spatial mismatch " +
                                                 shape_string(a.shape()) + " and " +
                                                 shape_string(b.shape()));
    }
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const std::size_t inner = a.numel() / (n * ca);
    Shape shape = a.shape();
    shape[1] = ca + cb;
    std::vector<double> out(shape_numel(shape));
    auto pa = a.data();
    auto pb = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(pa.begin() + static_cast<std::ptrdiff_t>(i * ca * inner), ca * inner,
                    out.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) * inner));
        std::copy_n(pb.begin() + static_cast<std::ptrdiff_t>(i * cb * inner), cb * inner,
                    out.begin() + static_cast<std::ptrdiff_t>((i * (ca + cb) + ca) * inner));
    }
    return finish("concat_channels", std::move(shape), std::move(out), {&a, &b}, [ca, cb] {
        return [ca, cb](const Tensor& g) {
            return std::vector<Tensor>{slice_channels(g, 0, ca), slice_channels(g, ca, cb)};
        };
    });
}

Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count) {
    require(x.rank() >= 2 && count > 0 && start + count <= x.dim(1),
            "slice_channels: range out of bounds for " + shape_string(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t inner = x.numel() / (n * c);
    Shape shape = x.shape();
    shape[1] = count;
    std::vector<double> out(shape_numel(shape));
    auto src = x.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((i * c + start) * inner),
                    count * inner, out.begin() + static_cast<std::ptrdiff_t>(i * count * inner));
    }
    return finish("slice_channels", std::move(shape), std::move(out), {&x}, [start, c] {
        return [start, c](const Tensor& g) {
            return std::vector<Tensor>{embed_channels(g, start, c)};
        };
    });
}

Tensor embed_channels(const Tensor& x, std::size_t start, std::size_t total) {
    require(x.rank() >= 2 && start + x.dim(1) <= total,
            "embed_channels: range out of bounds for " + shape_string(x.shape()));
    const std::size_t n = x.dim(0), count = x.dim(1);
    const std::size_t inner = x.numel() / (n * count);
    Shape shape = x.shape();
    shape[1] = total;
    std::vector<double> out(shape_numel(shape), 0.0);
    auto src = x.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * count * inner), count * inner,
                    out.begin() + static_cast<std::ptrdiff_t>((i * total + start) * inner));
    }
    return finish("embed_channels", std::move(shape), std::move(out), {&x}, [start, count] {
        return [start, count](const Tensor& g) {
            return std::vector<Tensor>{slice_channels(g, start, count)};
        };
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    return add_bias(matmul(x, weight, false, true), bias);
}

Tensor log_softmax(const Tensor& x) {
    require(x.rank() == 2, "log_softmax: expected N x K, got " + shape_string(x.shape()));
    const std::size_t rows = x.dim(0), k = x.dim(1);
    std::vector<double> out(x.numel());
    auto src = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = src.data() + r * k;
        const double top = *std::max_element(in, in + k);
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += std::exp(in[j] - top);
        const double lse = top + std::log(acc);
        for (std::size_t j = 0; j < k; ++j) out[r * k + j] = in[j] - lse;
    }
    return finish("log_softmax", x.shape(), std::move(out), {&x}, [&] {
        return [x](const Tensor& g) {
            Tensor probs = exp(log_softmax(x));
            Tensor row_total = broadcast_rows(sum_rows(g), g.shape());
            return std::vector<Tensor>{sub(g, mul(probs, row_total))};
        };
    });
}

}  // namespace shapegan
