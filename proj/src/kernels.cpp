#include "gradprobe/kernels.hpp"

#include <algorithm>
#include <string>

#include "gradprobe/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gradprobe::kernels {

namespace {

// Below this many multiply-adds the parallel variants stay on one thread.
constexpr std::size_t kParallelWork = 1 << 15;

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding,
                       std::size_t& pad_before) {
  if (padding == Padding::same) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + k;
    pad_before = needed > in ? (needed - in) / 2 : 0;
    return out;
  }
  pad_before = 0;
  return (in - k) / stride + 1;
}

void matmul_row(std::span<const double> a, std::span<const double> b, std::span<double> c,
                std::size_t i, std::size_t k, std::size_t n) {
  double* crow = c.data() + i * n;
  std::fill(crow, crow + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[i * k + p];
    const double* brow = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

void matmul_nt_row(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t i, std::size_t k, std::size_t n) {
  const double* arow = a.data() + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b.data() + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    c[i * n + j] = acc;
  }
}

void matmul_tn_row(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t i, std::size_t m, std::size_t k, std::size_t n) {
  double* crow = c.data() + i * n;
  std::fill(crow, crow + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    if (av == 0.0) continue;
    const double* brow = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

// One (batch, out_channel) output plane.
void conv_forward_plane(const ConvGeometry& g, std::span<const double> input,
                        std::span<const double> kernels, std::span<double> output,
                        std::size_t plane) {
  const std::size_t b = plane / g.out_channels;
  const std::size_t o = plane % g.out_channels;
  double* out = output.data() + plane * g.out_h * g.out_w;
  for (std::size_t y = 0; y < g.out_h; ++y) {
    for (std::size_t x = 0; x < g.out_w; ++x) {
      double acc = 0.0;
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        const double* in = input.data() + (b * g.in_channels + c) * g.in_h * g.in_w;
        const double* ker = kernels.data() + (o * g.in_channels + c) * g.kernel_h * g.kernel_w;
        for (std::size_t i = 0; i < g.kernel_h; ++i) {
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t j = 0; j < g.kernel_w; ++j) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            acc += in[yy * g.in_w + xx] * ker[i * g.kernel_w + j];
          }
        }
      }
      out[y * g.out_w + x] = acc;
    }
  }
}

// One (batch, in_channel) input-gradient plane.
void conv_backward_input_plane(const ConvGeometry& g, std::span<const double> grad_output,
                               std::span<const double> kernels, std::span<double> grad_input,
                               std::size_t plane) {
  const std::size_t b = plane / g.in_channels;
  const std::size_t c = plane % g.in_channels;
  double* gin = grad_input.data() + plane * g.in_h * g.in_w;
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double* gout = grad_output.data() + (b * g.out_channels + o) * g.out_h * g.out_w;
    const double* ker = kernels.data() + (o * g.in_channels + c) * g.kernel_h * g.kernel_w;
    for (std::size_t y = 0; y < g.out_h; ++y) {
      for (std::size_t x = 0; x < g.out_w; ++x) {
        const double go = gout[y * g.out_w + x];
        if (go == 0.0) continue;
        for (std::size_t i = 0; i < g.kernel_h; ++i) {
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t j = 0; j < g.kernel_w; ++j) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            gin[yy * g.in_w + xx] += go * ker[i * g.kernel_w + j];
          }
        }
      }
    }
  }
}

// One (out_channel, in_channel) kernel-gradient slice.
void conv_backward_kernel_slice(const ConvGeometry& g, std::span<const double> grad_output,
                                std::span<const double> input, std::span<double> grad_kernels,
                                std::size_t slice) {
  const std::size_t o = slice / g.in_channels;
  const std::size_t c = slice % g.in_channels;
  double* gk = grad_kernels.data() + slice * g.kernel_h * g.kernel_w;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* gout = grad_output.data() + (b * g.out_channels + o) * g.out_h * g.out_w;
    const double* in = input.data() + (b * g.in_channels + c) * g.in_h * g.in_w;
    for (std::size_t y = 0; y < g.out_h; ++y) {
      for (std::size_t x = 0; x < g.out_w; ++x) {
        const double go = gout[y * g.out_w + x];
        if (go == 0.0) continue;
        for (std::size_t i = 0; i < g.kernel_h; ++i) {
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t j = 0; j < g.kernel_w; ++j) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            gk[i * g.kernel_w + j] += go * in[yy * g.in_w + xx];
          }
        }
      }
    }
  }
}

std::size_t conv_work(const ConvGeometry& g) {
  return g.output_size() * g.in_channels * g.kernel_h * g.kernel_w;
}

}  // namespace

ConvGeometry make_conv_geometry(std::size_t batch, std::size_t in_channels, std::size_t in_h,
                                std::size_t in_w, std::size_t out_channels, std::size_t kernel_h,
                                std::size_t kernel_w, std::size_t stride, Padding padding) {
  if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
  if (kernel_h == 0 || kernel_w == 0) throw ShapeError("conv2d kernel must be non-empty");
  if (padding == Padding::valid && (kernel_h > in_h || kernel_w > in_w))
    throw ShapeError("conv2d kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                     " is larger than padded input " + std::to_string(in_h) + "x" +
                     std::to_string(in_w));
  ConvGeometry g;
  g.batch = batch;
  g.in_channels = in_channels;
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_channels = out_channels;
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  g.stride = stride;
  g.out_h = out_extent(in_h, kernel_h, stride, padding, g.pad_top);
  g.out_w = out_extent(in_w, kernel_w, stride, padding, g.pad_left);
  return g;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, m, k, n);
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernels, std::span<double> output) {
  for (std::size_t p = 0; p < g.batch * g.out_channels; ++p)
    conv_forward_plane(g, input, kernels, output, p);
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> kernels, std::span<double> grad_input) {
  for (std::size_t p = 0; p < g.batch * g.in_channels; ++p)
    conv_backward_input_plane(g, grad_output, kernels, grad_input, p);
}

void conv2d_backward_kernels(const ConvGeometry& g, std::span<const double> grad_output,
                             std::span<const double> input, std::span<double> grad_kernels) {
  for (std::size_t s = 0; s < g.out_channels * g.in_channels; ++s)
    conv_backward_kernel_slice(g, grad_output, input, grad_kernels, s);
}

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, c, i, k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_nt_row(a, b, c, i, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_tn_row(a, b, c, i, m, k, n);
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernels, std::span<double> output) {
  const auto planes = static_cast<std::ptrdiff_t>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static) if (conv_work(g) >= kParallelWork)
  for (std::ptrdiff_t p = 0; p < planes; ++p) conv_forward_plane(g, input, kernels, output, p);
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> kernels, std::span<double> grad_input) {
  const auto planes = static_cast<std::ptrdiff_t>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static) if (conv_work(g) >= kParallelWork)
  for (std::ptrdiff_t p = 0; p < planes; ++p)
    conv_backward_input_plane(g, grad_output, kernels, grad_input, p);
}

void conv2d_backward_kernels(const ConvGeometry& g, std::span<const double> grad_output,
                             std::span<const double> input, std::span<double> grad_kernels) {
  const auto slices = static_cast<std::ptrdiff_t>(g.out_channels * g.in_channels);
#pragma omp parallel for schedule(static) if (conv_work(g) >= kParallelWork)
  for (std::ptrdiff_t s = 0; s < slices; ++s)
    conv_backward_kernel_slice(g, grad_output, input, grad_kernels, s);
}

}  // namespace parallel

}  // namespace gradprobe::kernels
