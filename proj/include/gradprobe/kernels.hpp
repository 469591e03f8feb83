#pragma once

// Dense and convolution kernels over raw row-major buffers.
//
// Every kernel exists twice: `serial::` is the plain reference loop nest and
// `parallel::` splits the outermost output axis across OpenMP threads. Each
// output element is accumulated in the same order in both variants, so their
// results are bit-identical regardless of thread count.

#include <cstddef>
#include <span>

namespace gradprobe::kernels {

enum class Padding { valid, same };

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 0, in_h = 0, in_w = 0;
  std::size_t out_channels = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad_top = 0, pad_left = 0;
  std::size_t out_h = 0, out_w = 0;

  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t kernel_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
  std::size_t output_size() const { return batch * out_channels * out_h * out_w; }
};

/// Output dims and padding offsets; throws ShapeError when the kernel does
/// not fit inside the padded input.
ConvGeometry make_conv_geometry(std::size_t batch, std::size_t in_channels, std::size_t in_h,
                                std::size_t in_w, std::size_t out_channels, std::size_t kernel_h,
                                std::size_t kernel_w, std::size_t stride, Padding padding);

namespace serial {
// c[m×n] = a[m×k] · b[k×n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
// c[m×n] = a[m×k] · bᵀ with b stored n×k
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
// c[m×n] = aᵀ · b with a stored k×m and b stored k×n
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernels, std::span<double> output);
// The two backward kernels accumulate into their destination.
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> kernels, std::span<double> grad_input);
void conv2d_backward_kernels(const ConvGeometry& g, std::span<const double> grad_output,
                             std::span<const double> input, std::span<double> grad_kernels);
}  // namespace serial

namespace parallel {
// c[m×n] = a[m×k] · b[k×n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
// c[m×n] = a[m×k] · bᵀ with b stored n×k
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
// c[m×n] = aᵀ · b with a stored k×m and b stored k×n
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernels, std::span<double> output);
// The two backward kernels accumulate into their destination.
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> kernels, std::span<double> grad_input);
void conv2d_backward_kernels(const ConvGeometry& g, std::span<const double> grad_output,
                             std::span<const double> input, std::span<double> grad_kernels);
}  // namespace parallel

/// Number of OpenMP threads available, 1 when built without OpenMP.
int max_threads();

}  // namespace gradprobe::kernels
