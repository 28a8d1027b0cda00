#include "trident/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace trident::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using Index = std::ptrdiff_t;

// Scratch buffers are reused across calls; the largest conv in the model
// needs a few tens of MB and reallocating them per op dominates small layers.
std::vector<double>& scratch(int slot, std::size_t n) {
  thread_local std::vector<double> buffers[3];
  auto& buf = buffers[slot];
  if (buf.size() < n) buf.resize(n);
  return buf;
}

// col[(c*k+i)*k+j, b*HW + h*W + w] = x[b, c, h+i-p, w+j-p]
void im2col(const double* x, double* col, const ConvGeometry& g) {
  const Index B = Index(g.batch), C = Index(g.in_channels), H = Index(g.height), W = Index(g.width);
  const Index K = Index(g.ksize), P = K / 2;
  const Index HW = H * W, cols = B * HW;
#pragma omp parallel for collapse(2) schedule(static)
  for (Index c = 0; c < C; ++c) {
    for (Index b = 0; b < B; ++b) {
      const double* xc = x + (b * C + c) * HW;
      for (Index i = 0; i < K; ++i) {
        for (Index j = 0; j < K; ++j) {
          double* row = col + ((c * K + i) * K + j) * cols + b * HW;
          for (Index h = 0; h < H; ++h) {
            const Index sh = h + i - P;
            double* out = row + h * W;
            if (sh < 0 || sh >= H) {
              std::fill(out, out + W, 0.0);
              continue;
            }
            const double* src = xc + sh * W;
            for (Index w = 0; w < W; ++w) {
              const Index sw = w + j - P;
              out[w] = (sw >= 0 && sw < W) ? src[sw] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col, written as a gather so every output is owned by one thread.
void col2im(const double* col, double* x, const ConvGeometry& g) {
  const Index B = Index(g.batch), C = Index(g.in_channels), H = Index(g.height), W = Index(g.width);
  const Index K = Index(g.ksize), P = K / 2;
  const Index HW = H * W, cols = B * HW;
#pragma omp parallel for collapse(2) schedule(static)
  for (Index b = 0; b < B; ++b) {
    for (Index c = 0; c < C; ++c) {
      double* xc = x + (b * C + c) * HW;
      std::fill(xc, xc + HW, 0.0);
      for (Index i = 0; i < K; ++i) {
        for (Index j = 0; j < K; ++j) {
          const double* row = col + ((c * K + i) * K + j) * cols + b * HW;
          for (Index h = 0; h < H; ++h) {
            const Index sh = h + i - P;
            if (sh < 0 || sh >= H) continue;
            for (Index w = 0; w < W; ++w) {
              const Index sw = w + j - P;
              if (sw >= 0 && sw < W) xc[sh * W + sw] += row[h * W + w];
            }
          }
        }
      }
    }
  }
}

// [B, O, HW] <-> [O, B*HW]
void batch_to_channel_major(const double* src, double* dst, Index B, Index O, Index HW) {
#pragma omp parallel for collapse(2) schedule(static)
  for (Index b = 0; b < B; ++b)
    for (Index o = 0; o < O; ++o) std::copy_n(src + (b * O + o) * HW, HW, dst + o * B * HW + b * HW);
}

void channel_major_to_batch(const double* src, double* dst, Index B, Index O, Index HW) {
#pragma omp parallel for collapse(2) schedule(static)
  for (Index b = 0; b < B; ++b)
    for (Index o = 0; o < O; ++o) std::copy_n(src + o * B * HW + b * HW, HW, dst + (b * O + o) * HW);
}

}  // namespace

void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<double> y,
                    const ConvGeometry& g) {
  const Index B = Index(g.batch), O = Index(g.out_channels), HW = Index(g.height * g.width);
  const Index R = Index(g.in_channels * g.ksize * g.ksize), cols = B * HW;
  auto& col = scratch(0, std::size_t(R * cols));
  auto& out = scratch(1, std::size_t(O * cols));
  im2col(x.data(), col.data(), g);
  MapMat(out.data(), O, cols).noalias() = ConstMapMat(w.data(), O, R) * ConstMapMat(col.data(), R, cols);
  channel_major_to_batch(out.data(), y.data(), B, O, HW);
}

void conv2d_backward_input(std::span<const double> gy, std::span<const double> w, std::span<double> gx,
                           const ConvGeometry& g) {
  const Index B = Index(g.batch), O = Index(g.out_channels), HW = Index(g.height * g.width);
  const Index R = Index(g.in_channels * g.ksize * g.ksize), cols = B * HW;
  auto& gcm = scratch(1, std::size_t(O * cols));
  auto& col = scratch(0, std::size_t(R * cols));
  batch_to_channel_major(gy.data(), gcm.data(), B, O, HW);
  MapMat(col.data(), R, cols).noalias() =
      ConstMapMat(w.data(), O, R).transpose() * ConstMapMat(gcm.data(), O, cols);
  col2im(col.data(), gx.data(), g);
}

void conv2d_backward_weight(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                            const ConvGeometry& g) {
  const Index B = Index(g.batch), O = Index(g.out_channels), HW = Index(g.height * g.width);
  const Index R = Index(g.in_channels * g.ksize * g.ksize), cols = B * HW;
  auto& col = scratch(0, std::size_t(R * cols));
  auto& gcm = scratch(1, std::size_t(O * cols));
  im2col(x.data(), col.data(), g);
  batch_to_channel_major(gy.data(), gcm.data(), B, O, HW);
  MapMat(gw.data(), O, R).noalias() =
      ConstMapMat(gcm.data(), O, cols) * ConstMapMat(col.data(), R, cols).transpose();
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b) {
  const Index M = Index(m), K = Index(k), N = Index(n);
  MapMat C(c.data(), M, N);
  if (!trans_a && !trans_b) {
    C.noalias() = ConstMapMat(a.data(), M, K) * ConstMapMat(b.data(), K, N);
  } else if (trans_a && !trans_b) {
    C.noalias() = ConstMapMat(a.data(), K, M).transpose() * ConstMapMat(b.data(), K, N);
  } else if (!trans_a && trans_b) {
    C.noalias() = ConstMapMat(a.data(), M, K) * ConstMapMat(b.data(), N, K).transpose();
  } else {
    C.noalias() = ConstMapMat(a.data(), K, M).transpose() * ConstMapMat(b.data(), N, K).transpose();
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#endif
  Eigen::setNbThreads(std::max(1, n));
}

namespace reference {

void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<double> y,
                    const ConvGeometry& g) {
  const Index B = Index(g.batch), C = Index(g.in_channels), O = Index(g.out_channels);
  const Index H = Index(g.height), W = Index(g.width), K = Index(g.ksize), P = K / 2;
  for (Index b = 0; b < B; ++b)
    for (Index o = 0; o < O; ++o)
      for (Index h = 0; h < H; ++h)
        for (Index v = 0; v < W; ++v) {
          double acc = 0.0;
          for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < K; ++i)
              for (Index j = 0; j < K; ++j) {
                const Index sh = h + i - P, sw = v + j - P;
                if (sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
                acc += w[std::size_t(((o * C + c) * K + i) * K + j)] * x[std::size_t(((b * C + c) * H + sh) * W + sw)];
              }
          y[std::size_t(((b * O + o) * H + h) * W + v)] = acc;
        }
}

void conv2d_backward_input(std::span<const double> gy, std::span<const double> w, std::span<double> gx,
                           const ConvGeometry& g) {
  const Index B = Index(g.batch), C = Index(g.in_channels), O = Index(g.out_channels);
  const Index H = Index(g.height), W = Index(g.width), K = Index(g.ksize), P = K / 2;
  std::fill(gx.begin(), gx.end(), 0.0);
  for (Index b = 0; b < B; ++b)
    for (Index o = 0; o < O; ++o)
      for (Index h = 0; h < H; ++h)
        for (Index v = 0; v < W; ++v) {
          const double gv = gy[std::size_t(((b * O + o) * H + h) * W + v)];
          for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < K; ++i)
              for (Index j = 0; j < K; ++j) {
                const Index sh = h + i - P, sw = v + j - P;
                if (sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
                gx[std::size_t(((b * C + c) * H + sh) * W + sw)] += gv * w[std::size_t(((o * C + c) * K + i) * K + j)];
              }
        }
}

void conv2d_backward_weight(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                            const ConvGeometry& g) {
  const Index B = Index(g.batch), C = Index(g.in_channels), O = Index(g.out_channels);
  const Index H = Index(g.height), W = Index(g.width), K = Index(g.ksize), P = K / 2;
  std::fill(gw.begin(), gw.end(), 0.0);
  for (Index b = 0; b < B; ++b)
    for (Index o = 0; o < O; ++o)
      for (Index h = 0; h < H; ++h)
        for (Index v = 0; v < W; ++v) {
          const double gv = gy[std::size_t(((b * O + o) * H + h) * W + v)];
          for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < K; ++i)
              for (Index j = 0; j < K; ++j) {
                const Index sh = h + i - P, sw = v + j - P;
                if (sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
                gw[std::size_t(((o * C + c) * K + i) * K + j)] += gv * x[std::size_t(((b * C + c) * H + sh) * W + sw)];
              }
        }
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
}

}  // namespace reference

}  // namespace trident::kernels
