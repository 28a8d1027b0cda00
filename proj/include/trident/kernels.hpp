#pragma once

// Dense compute kernels behind the differentiable ops.
//
// The top-level functions are the production kernels: im2col + GEMM with the
// batch loops parallelized by OpenMP. `reference::` holds straightforward
// serial loop versions used as test oracles and benchmark baselines. Every
// parallel loop writes disjoint outputs, so results do not depend on the
// thread count.

#include <cstddef>
#include <span>

namespace trident::kernels {

/// Stride-1 "same" convolution with an odd square kernel, padding ksize/2.
struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t ksize = 3;

  std::size_t input_size() const { return batch * in_channels * height * width; }
  std::size_t output_size() const { return batch * out_channels * height * width; }
  std::size_t weight_size() const { return out_channels * in_channels * ksize * ksize; }
};

/// y[b,o,h,w] = sum_{c,i,j} w[o,c,i,j] * x[b,c,h+i-p,w+j-p]   (y overwritten)
void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<double> y,
                    const ConvGeometry& g);
/// gx = adjoint of conv2d_forward w.r.t. x applied to gy   (gx overwritten)
void conv2d_backward_input(std::span<const double> gy, std::span<const double> w, std::span<double> gx,
                           const ConvGeometry& g);
/// gw = adjoint of conv2d_forward w.r.t. w applied to gy   (gw overwritten)
void conv2d_backward_weight(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                            const ConvGeometry& g);

/// c[m,n] = op(a) * op(b) where op transposes when the flag is set.
/// a is stored as [m,k] (or [k,m] if trans_a), b as [k,n] (or [n,k] if trans_b).
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b);

namespace reference {

void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<double> y,
                    const ConvGeometry& g);
void conv2d_backward_input(std::span<const double> gy, std::span<const double> w, std::span<double> gx,
                           const ConvGeometry& g);
void conv2d_backward_weight(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                            const ConvGeometry& g);
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace trident::kernels
