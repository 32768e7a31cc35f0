#pragma once

#include <cstdint>

// Dense kernels behind the tensor ops. Every kernel exists twice: a serial
// reference and an OpenMP variant that splits work over disjoint output
// elements only. Per-element accumulation order is identical in both, so the
// two produce bit-identical results and the dispatcher may pick either.

namespace diffpf::kernels {

using i64 = std::int64_t;

// Worker cap: min(omp_get_max_threads(), DIFFPF_THREADS). Read once.
int max_threads();

// y = op(a · b) with optional transposed operands, row-major.
//   ta=false, tb=false: a[m,k] b[k,n]
//   ta=true:            a[k,m] (contraction over its rows)
//   tb=true:            b[n,k] (contraction over its columns)
// acc=false overwrites y[m,n], acc=true accumulates into it.
template <class T>
void matmul_serial(const T* a, const T* b, T* y, i64 m, i64 k, i64 n,
                   bool ta, bool tb, bool acc);
template <class T>
void matmul_parallel(const T* a, const T* b, T* y, i64 m, i64 k, i64 n,
                     bool ta, bool tb, bool acc, int threads);
template <class T>
void matmul(const T* a, const T* b, T* y, i64 m, i64 k, i64 n,
            bool ta = false, bool tb = false, bool acc = false);

struct Conv2dGeom {
  i64 cin, h, w;      // input  [cin, h, w]
  i64 cout, kh, kw;   // kernel [cout, cin, kh, kw]
  i64 stride, pad;
  i64 ho, wo;         // output [cout, ho, wo]
};

// Throws std::invalid_argument when the output extent is not positive or the
// kernel does not match the input channel count.
Conv2dGeom conv2d_geometry(i64 cin, i64 h, i64 w, i64 cout, i64 kcin, i64 kh,
                           i64 kw, i64 stride, i64 pad);

// Cross-correlation (no kernel flip); zero padding.
template <class T>
void conv2d_forward_serial(const T* x, const T* k, T* y, const Conv2dGeom& g);
template <class T>
void conv2d_forward_parallel(const T* x, const T* k, T* y, const Conv2dGeom& g,
                             int threads);
template <class T>
void conv2d_forward(const T* x, const T* k, T* y, const Conv2dGeom& g);

// Gradient w.r.t. input, accumulated into gx. Gather form: each input cell
// sums its own contributions, so threads never share an output element.
template <class T>
void conv2d_backward_input_serial(const T* gy, const T* k, T* gx,
                                  const Conv2dGeom& g);
template <class T>
void conv2d_backward_input_parallel(const T* gy, const T* k, T* gx,
                                    const Conv2dGeom& g, int threads);
template <class T>
void conv2d_backward_input(const T* gy, const T* k, T* gx,
                           const Conv2dGeom& g);

// Gradient w.r.t. kernel, accumulated into gk. Parallel over output channels.
template <class T>
void conv2d_backward_kernel_serial(const T* gy, const T* x, T* gk,
                                   const Conv2dGeom& g);
template <class T>
void conv2d_backward_kernel_parallel(const T* gy, const T* x, T* gk,
                                     const Conv2dGeom& g, int threads);
template <class T>
void conv2d_backward_kernel(const T* gy, const T* x, T* gk,
                            const Conv2dGeom& g);

}  // namespace diffpf::kernels
