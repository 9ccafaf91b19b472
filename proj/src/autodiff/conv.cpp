#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "ops_common.hpp"
#include "parallel.hpp"
#include "shapegan/ops.hpp"

namespace shapegan {

using detail::finish;
using detail::require;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

struct ConvGeometry {
    std::size_t batch, in_channels, height, width;
    std::size_t filters, kh, kw;
    std::size_t stride, pad;
    std::size_t out_h, out_w;

    std::size_t patch() const { return in_channels * kh * kw; }
    std::size_t positions() const { return out_h * out_w; }
};

// Writes one sample's patches into cols, a patch() x ld row-major matrix,
// starting at column offset. ld >= positions().
void im2col(const ConvGeometry& g, const double* image, double* cols, std::size_t ld) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = cols + ((c * g.kh + i) * g.kw + j) * ld;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
                    double* dst = row + oy * g.out_w;
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
                        std::fill_n(dst, g.out_w, 0.0);
                        continue;
                    }
                    const double* src = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
                    if (g.stride == 1) {
                        // Contiguous run with zero fringes.
                        const auto shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(g.pad);
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const auto x = static_cast<std::ptrdiff_t>(ox) + shift;
                            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width))
                                          ? 0.0
                                          : src[static_cast<std::size_t>(x)];
                        }
                        continue;
                    }
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                       static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width))
                                      ? 0.0
                                      : src[static_cast<std::size_t>(x)];
                    }
                }
            }
        }
    }
}

// Accumulates columns back into an image (adjoint of im2col).
void col2im(const ConvGeometry& g, const double* cols, std::size_t ld, double* image) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = cols + ((c * g.kh + i) * g.kw + j) * ld;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    double* dst = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
                    const double* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                       static_cast<std::ptrdiff_t>(g.pad);
                        if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        dst[static_cast<std::size_t>(x)] += src[ox];
                    }
                }
            }
        }
    }
}

// Samples per GEMM: enough columns to keep the multiply efficient, few
// enough that the column buffer stays cache-sized.
std::size_t block_samples(const ConvGeometry& g) {
    constexpr std::size_t kTargetColumns = 256;
    return std::max<std::size_t>(1, kTargetColumns / std::max<std::size_t>(1, g.positions()));
}

// Runs body(first_sample, count) over the batch in blocks, split across workers.
template <typename Body>
void for_blocks(const ConvGeometry& g, Body body) {
    const std::size_t per = block_samples(g);
    const std::size_t blocks = (g.batch + per - 1) / per;
    detail::parallel_chunks(blocks, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; ++b) {
            const std::size_t first = b * per;
            body(chunk, first, std::min(per, g.batch - first));
        }
    });
}

ConvGeometry forward_geometry(const Tensor& input, const Tensor& kernel, std::size_t stride,
                              std::size_t pad) {
    require(input.rank() == 4, "conv2d: input must be N x C x H x W, got " +
                                   shape_string(input.shape()));
    require(kernel.rank() == 4, "conv2d: kernel must be F x C x kh x kw, got " +
                                    shape_string(kernel.shape()));
    require(stride > 0, "conv2d: stride must be positive");
    require(input.dim(1) == kernel.dim(1), "conv2d: input channels " + shape_string(input.shape()) +
                                               " do not match kernel " +
                                               shape_string(kernel.shape()));
    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
                   kernel.dim(2), kernel.dim(3), stride, pad, 0, 0};
    require(g.height + 2 * pad >= g.kh && g.width + 2 * pad >= g.kw,
            "conv2d: kernel larger than padded input");
    g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
    g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;
    return g;
}

std::vector<double> conv_forward(const ConvGeometry& g, const double* input, const double* kernel) {
    const std::size_t plane = g.in_channels * g.height * g.width;
    const std::size_t p = g.positions();
    std::vector<double> out(g.batch * g.filters * p);
    ConstMap k(kernel, g.filters, g.patch());
    for_blocks(g, [&](std::size_t, std::size_t first, std::size_t count) {
        const std::size_t ld = count * p;
        std::vector<double> cols(g.patch() * ld), prod(g.filters * ld);
        for (std::size_t n = 0; n < count; ++n) im2col(g, input + (first + n) * plane, cols.data() + n * p, ld);
        MutMap(prod.data(), g.filters, ld).noalias() = k * ConstMap(cols.data(), g.patch(), ld);
        for (std::size_t n = 0; n < count; ++n) {
            for (std::size_t f = 0; f < g.filters; ++f) {
                std::copy_n(prod.data() + f * ld + n * p, p, out.data() + ((first + n) * g.filters + f) * p);
            }
        }
    });
    return out;
}

// Gathers the block's grad_out samples into a filters x (count * positions) matrix.
std::vector<double> gather_block(const ConvGeometry& g, const double* grad_out, std::size_t first,
                                 std::size_t count) {
    const std::size_t p = g.positions();
    const std::size_t ld = count * p;
    std::vector<double> block(g.filters * ld);
    for (std::size_t n = 0; n < count; ++n) {
        for (std::size_t f = 0; f < g.filters; ++f) {
            std::copy_n(grad_out + ((first + n) * g.filters + f) * p, p, block.data() + f * ld + n * p);
        }
    }
    return block;
}

std::vector<double> conv_adjoint(const ConvGeometry& g, const double* grad_out, const double* kernel) {
    const std::size_t plane = g.in_channels * g.height * g.width;
    const std::size_t p = g.positions();
    std::vector<double> out(g.batch * plane, 0.0);
    ConstMap k(kernel, g.filters, g.patch());
    for_blocks(g, [&](std::size_t, std::size_t first, std::size_t count) {
        const std::size_t ld = count * p;
        const std::vector<double> go = gather_block(g, grad_out, first, count);
        std::vector<double> cols(g.patch() * ld);
        MutMap(cols.data(), g.patch(), ld).noalias() = k.transpose() * ConstMap(go.data(), g.filters, ld);
        for (std::size_t n = 0; n < count; ++n) col2im(g, cols.data() + n * p, ld, out.data() + (first + n) * plane);
    });
    return out;
}

std::vector<double> conv_kernel_grad(const ConvGeometry& g, const double* input,
                                     const double* grad_out) {
    const std::size_t plane = g.in_channels * g.height * g.width;
    const std::size_t p = g.positions();
    const std::size_t per = block_samples(g);
    const std::size_t chunks = detail::chunk_count((g.batch + per - 1) / per);
    std::vector<std::vector<double>> partial(chunks, std::vector<double>(g.filters * g.patch(), 0.0));
    for_blocks(g, [&](std::size_t chunk, std::size_t first, std::size_t count) {
        const std::size_t ld = count * p;
        const std::vector<double> go = gather_block(g, grad_out, first, count);
        std::vector<double> cols(g.patch() * ld);
        for (std::size_t n = 0; n < count; ++n) im2col(g, input + (first + n) * plane, cols.data() + n * p, ld);
        MutMap(partial[chunk].data(), g.filters, g.patch()).noalias() +=
            ConstMap(go.data(), g.filters, ld) * ConstMap(cols.data(), g.patch(), ld).transpose();
    });
    for (std::size_t c = 1; c < chunks; ++c) {
        for (std::size_t i = 0; i < partial[0].size(); ++i) partial[0][i] += partial[c][i];
    }
    return std::move(partial[0]);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad) {
    const ConvGeometry g = forward_geometry(input, kernel, stride, pad);
    return finish("conv2d", {g.batch, g.filters, g.out_h, g.out_w},
                  conv_forward(g, input.data().data(), kernel.data().data()), {&input, &kernel},
                  [&] {
                      return [input, kernel, g, wi = input.on_tape(), wk = kernel.on_tape()](const Tensor& grad) {
                          return std::vector<Tensor>{
                              wi ? conv_transpose2d(grad, kernel, g.stride, g.pad, g.height, g.width) : Tensor(),
                              wk ? conv2d_kernel_grad(input, grad, g.kh, g.kw, g.stride, g.pad) : Tensor()};
                      };
                  });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
                        std::size_t pad, std::size_t out_h, std::size_t out_w) {
    require(input.rank() == 4 && kernel.rank() == 4,
            "conv_transpose2d: expected 4-D input and kernel, got " + shape_string(input.shape()) +
                " and " + shape_string(kernel.shape()));
    require(stride > 0, "conv_transpose2d: stride must be positive");
    require(input.dim(1) == kernel.dim(0), "conv_transpose2d: input channels " +
                                               shape_string(input.shape()) +
                                               " do not match kernel filters " +
                                               shape_string(kernel.shape()));
    const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
    const std::size_t in_h = input.dim(2), in_w = input.dim(3);
    if (out_h == 0) {
        require((in_h - 1) * stride + kh >= 2 * pad, "conv_transpose2d: padding too large");
        out_h = (in_h - 1) * stride + kh - 2 * pad;
    }
    if (out_w == 0) {
        require((in_w - 1) * stride + kw >= 2 * pad, "conv_transpose2d: padding too large");
        out_w = (in_w - 1) * stride + kw - 2 * pad;
    }
    ConvGeometry g{input.dim(0), kernel.dim(1), out_h, out_w, kernel.dim(0), kh, kw, stride, pad, 0, 0};
    require(g.height + 2 * pad >= kh && g.width + 2 * pad >= kw,
            "conv_transpose2d: kernel larger than padded output");
    g.out_h = (g.height + 2 * pad - kh) / stride + 1;
    g.out_w = (g.width + 2 * pad - kw) / stride + 1;
    require(g.out_h == in_h && g.out_w == in_w,
            "conv_transpose2d: output size inconsistent with input " + shape_string(input.shape()));
    return finish("conv_transpose2d", {g.batch, g.in_channels, g.height, g.width},
                  conv_adjoint(g, input.data().data(), kernel.data().data()), {&input, &kernel},
                  [&] {
                      return [input, kernel, g, wi = input.on_tape(), wk = kernel.on_tape()](const Tensor& grad) {
                          return std::vector<Tensor>{
                              wi ? conv2d(grad, kernel, g.stride, g.pad) : Tensor(),
                              wk ? conv2d_kernel_grad(grad, input, g.kh, g.kw, g.stride, g.pad) : Tensor()};
                      };
                  });
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_output, std::size_t kh,
                          std::size_t kw, std::size_t stride, std::size_t pad) {
    require(input.rank() == 4 && grad_output.rank() == 4 && input.dim(0) == grad_output.dim(0),
            "conv2d_kernel_grad: incompatible shapes " + shape_string(input.shape()) + " and " +
                shape_string(grad_output.shape()));
    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), grad_output.dim(1),
                   kh, kw, stride, pad, 0, 0};
    require(stride > 0 && g.height + 2 * pad >= kh && g.width + 2 * pad >= kw,
            "conv2d_kernel_grad: invalid geometry");
    g.out_h = (g.height + 2 * pad - kh) / stride + 1;
    g.out_w = (g.width + 2 * pad - kw) / stride + 1;
    require(g.out_h == grad_output.dim(2) && g.out_w == grad_output.dim(3),
            "conv2d_kernel_grad: grad_output " + shape_string(grad_output.shape()) +
                " inconsistent with input " + shape_string(input.shape()));
    return finish("conv2d_kernel_grad", {g.filters, g.in_channels, kh, kw},
                  conv_kernel_grad(g, input.data().data(), grad_output.data().data()),
                  {&input, &grad_output}, [&] {
                      return [input, grad_output, g, wi = input.on_tape(),
                              wg = grad_output.on_tape()](const Tensor& grad) {
                          return std::vector<Tensor>{
                              wi ? conv_transpose2d(grad_output, grad, g.stride, g.pad, g.height, g.width)
                                 : Tensor(),
                              wg ? conv2d(input, grad, g.stride, g.pad) : Tensor()};
                      };
                  });
}

}  // namespace shapegan
