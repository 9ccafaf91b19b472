#pragma once

#include <cstddef>

#include "shapegan/tensor.hpp"

// Differentiable primitives. Every primitive checks its output for NaN/Inf
// and throws NumericError, and registers a backward rule built from other
// primitives, so gradients can be differentiated again.
namespace shapegan {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scalar_mul(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);

// Reductions to a one-element tensor of shape [1], and the matching broadcast.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor expand(const Tensor& scalar, const Shape& shape);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor flatten(const Tensor& x);  // N x ... -> N x rest

// 2-D only. The flags multiply by the transposed operand without forming it.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
Tensor transpose(const Tensor& x);

// Axis 1 is the channel axis. b has shape [C].
Tensor broadcast_channels(const Tensor& b, const Shape& shape);
Tensor sum_channels(const Tensor& x);
Tensor add_bias(const Tensor& x, const Tensor& b);

// Axis 0 is the batch axis. v has shape [N].
Tensor broadcast_rows(const Tensor& v, const Shape& shape);
Tensor sum_rows(const Tensor& x);
// Per-sample Euclidean norm over all non-batch axes, shape [N].
Tensor l2_norm_per_row(const Tensor& x);

// N x C x H x W.
Tensor nearest_upsample2x(const Tensor& x);
Tensor sum_pool2x(const Tensor& x);  // adjoint of nearest_upsample2x
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count);
Tensor embed_channels(const Tensor& x, std::size_t start, std::size_t total);

// Cross-correlation. input N x C x H x W, kernel F x C x kh x kw.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad);
// Adjoint of conv2d with respect to its input. input N x F x H' x W', same
// kernel layout as conv2d. out_h/out_w of 0 select the smallest consistent size.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
                        std::size_t pad, std::size_t out_h = 0, std::size_t out_w = 0);
// Gradient of <conv2d(input, k), grad_output> with respect to k.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_output, std::size_t kh,
                          std::size_t kw, std::size_t stride, std::size_t pad);

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Row-wise over an N x K matrix.
Tensor log_softmax(const Tensor& x);

// While alive, records the smallest |input| seen by leaky_relu on this
// thread. Finite-difference checks use it to stay clear of the kink.
class KinkProbe {
public:
    KinkProbe();
    ~KinkProbe();
    KinkProbe(const KinkProbe&) = delete;
    KinkProbe& operator=(const KinkProbe&) = delete;
    double margin() const noexcept { return margin_; }
    void observe(double v) noexcept;

private:
    double margin_;
    KinkProbe* previous_;
};

// Sets an upper bound on worker threads used inside conv primitives.
void set_num_threads(std::size_t n);
std::size_t num_threads();

}  // namespace shapegan
