#include "diffpf/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace diffpf::kernels {

int max_threads() {
  static const int cap = [] {
    int hw = 1;
#ifdef _OPENMP
    hw = omp_get_max_threads();
#endif
    if (const char* env = std::getenv("DIFFPF_THREADS")) {
      const int req = std::atoi(env);
      if (req >= 1) hw = std::min(hw, req);
    }
    return hw;
  }();
  return cap;
}

namespace {

// Work below this many output elements is not worth a parallel region.
constexpr i64 kParallelCutoff = 4096;

template <class T>
inline T dot_nn_row(const T* arow, const T* b, i64 k, i64 n, i64 j) {
  T acc = T(0);
  for (i64 p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
  return acc;
}

// One output row of y = a·b (ta/tb resolved by the caller's strides would be
// messier than four small loops; accumulation over p is ascending in all of
// them, which is what keeps serial and parallel variants bit-identical).
template <class T>
void matmul_row(const T* a, const T* b, T* y, i64 m, i64 k, i64 n, bool ta,
                bool tb, bool acc, i64 i) {
  T* yrow = y + i * n;
  if (!acc) std::fill(yrow, yrow + n, T(0));
  if (!ta && !tb) {
    const T* arow = a + i * k;
    for (i64 p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (i64 j = 0; j < n; ++j) yrow[j] += av * brow[j];
    }
  } else if (!ta && tb) {
    const T* arow = a + i * k;
    for (i64 j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T accv = T(0);
      for (i64 p = 0; p < k; ++p) accv += arow[p] * brow[p];
      yrow[j] += accv;
    }
  } else if (ta && !tb) {
    for (i64 p = 0; p < k; ++p) {
      const T av = a[p * m + i];
      const T* brow = b + p * n;
      for (i64 j = 0; j < n; ++j) yrow[j] += av * brow[j];
    }
  } else {
    for (i64 j = 0; j < n; ++j) {
      T accv = T(0);
      for (i64 p = 0; p < k; ++p) accv += a[p * m + i] * b[j * k + p];
      yrow[j] += accv;
    }
  }
}

}  // namespace

template <class T>
void matmul_serial(const T* a, const T* b, T* y, i64 m, i64 k, i64 n, bool ta,
                   bool tb, bool acc) {
  for (i64 i = 0; i < m; ++i) matmul_row(a, b, y, m, k, n, ta, tb, acc, i);
}

template <class T>
void matmul_parallel(const T* a, const T* b, T* y, i64 m, i64 k, i64 n,
                     bool ta, bool tb, bool acc, int threads) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
  for (i64 i = 0; i < m; ++i) matmul_row(a, b, y, m, k, n, ta, tb, acc, i);
  (void)threads;
}

template <class T>
void matmul(const T* a, const T* b, T* y, i64 m, i64 k, i64 n, bool ta,
            bool tb, bool acc) {
  const int threads = max_threads();
  if (threads > 1 && m > 1 && m * n * k >= kParallelCutoff)
    matmul_parallel(a, b, y, m, k, n, ta, tb, acc, threads);
  else
    matmul_serial(a, b, y, m, k, n, ta, tb, acc);
}

Conv2dGeom conv2d_geometry(i64 cin, i64 h, i64 w, i64 cout, i64 kcin, i64 kh,
                           i64 kw, i64 stride, i64 pad) {
  if (kcin != cin) {
    std::ostringstream os;
    os << "conv2d: kernel expects " << kcin << " input channels, input has "
       << cin;
    throw std::invalid_argument(os.str());
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const i64 ho = (h + 2 * pad - kh) / stride + 1;
  const i64 wo = (w + 2 * pad - kw) / stride + 1;
  if (ho < 1 || wo < 1 || h + 2 * pad < kh || w + 2 * pad < kw) {
    std::ostringstream os;
    os << "conv2d: non-positive output extent for input " << h << "x" << w
       << ", kernel " << kh << "x" << kw << ", stride " << stride << ", pad "
       << pad;
    throw std::invalid_argument(os.str());
  }
  return Conv2dGeom{cin, h, w, cout, kh, kw, stride, pad, ho, wo};
}

namespace {

template <class T>
void conv2d_forward_channel(const T* x, const T* k, T* y, const Conv2dGeom& g,
                            i64 co) {
  for (i64 oy = 0; oy < g.ho; ++oy) {
    for (i64 ox = 0; ox < g.wo; ++ox) {
      T acc = T(0);
      for (i64 ci = 0; ci < g.cin; ++ci) {
        const T* xc = x + ci * g.h * g.w;
        const T* kc = k + ((co * g.cin + ci) * g.kh) * g.kw;
        for (i64 ky = 0; ky < g.kh; ++ky) {
          const i64 iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const T* xrow = xc + iy * g.w;
          const T* krow = kc + ky * g.kw;
          for (i64 kx = 0; kx < g.kw; ++kx) {
            const i64 ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.w) continue;
            acc += xrow[ix] * krow[kx];
          }
        }
      }
      y[(co * g.ho + oy) * g.wo + ox] = acc;
    }
  }
}

// gx[ci, iy, ix] += sum over (co, ky, kx) hitting that input cell
template <class T>
void conv2d_backward_input_cell(const T* gy, const T* k, T* gx,
                                const Conv2dGeom& g, i64 ci, i64 iy) {
  for (i64 ix = 0; ix < g.w; ++ix) {
    T acc = T(0);
    for (i64 co = 0; co < g.cout; ++co) {
      const T* gyc = gy + co * g.ho * g.wo;
      const T* kc = k + ((co * g.cin + ci) * g.kh) * g.kw;
      for (i64 ky = 0; ky < g.kh; ++ky) {
        const i64 oyn = iy + g.pad - ky;
        if (oyn < 0 || oyn % g.stride != 0) continue;
        const i64 oy = oyn / g.stride;
        if (oy >= g.ho) continue;
        for (i64 kx = 0; kx < g.kw; ++kx) {
          const i64 oxn = ix + g.pad - kx;
          if (oxn < 0 || oxn % g.stride != 0) continue;
          const i64 ox = oxn / g.stride;
          if (ox >= g.wo) continue;
          acc += gyc[oy * g.wo + ox] * kc[ky * g.kw + kx];
        }
      }
    }
    gx[(ci * g.h + iy) * g.w + ix] += acc;
  }
}

template <class T>
void conv2d_backward_kernel_channel(const T* gy, const T* x, T* gk,
                                    const Conv2dGeom& g, i64 co) {
  const T* gyc = gy + co * g.ho * g.wo;
  for (i64 ci = 0; ci < g.cin; ++ci) {
    const T* xc = x + ci * g.h * g.w;
    for (i64 ky = 0; ky < g.kh; ++ky) {
      for (i64 kx = 0; kx < g.kw; ++kx) {
        T acc = T(0);
        for (i64 oy = 0; oy < g.ho; ++oy) {
          const i64 iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (i64 ox = 0; ox < g.wo; ++ox) {
            const i64 ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.w) continue;
            acc += gyc[oy * g.wo + ox] * xc[iy * g.w + ix];
          }
        }
        gk[((co * g.cin + ci) * g.kh + ky) * g.kw + kx] += acc;
      }
    }
  }
}

}  // namespace

template <class T>
void conv2d_forward_serial(const T* x, const T* k, T* y, const Conv2dGeom& g) {
  for (i64 co = 0; co < g.cout; ++co) conv2d_forward_channel(x, k, y, g, co);
}

template <class T>
void conv2d_forward_parallel(const T* x, const T* k, T* y, const Conv2dGeom& g,
                             int threads) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
  for (i64 co = 0; co < g.cout; ++co) conv2d_forward_channel(x, k, y, g, co);
  (void)threads;
}

template <class T>
void conv2d_forward(const T* x, const T* k, T* y, const Conv2dGeom& g) {
  const int threads = max_threads();
  if (threads > 1 && g.cout * g.ho * g.wo >= kParallelCutoff)
    conv2d_forward_parallel(x, k, y, g, threads);
  else
    conv2d_forward_serial(x, k, y, g);
}

template <class T>
void conv2d_backward_input_serial(const T* gy, const T* k, T* gx,
                                  const Conv2dGeom& g) {
  for (i64 ci = 0; ci < g.cin; ++ci)
    for (i64 iy = 0; iy < g.h; ++iy)
      conv2d_backward_input_cell(gy, k, gx, g, ci, iy);
}

template <class T>
void conv2d_backward_input_parallel(const T* gy, const T* k, T* gx,
                                    const Conv2dGeom& g, int threads) {
  const i64 rows = g.cin * g.h;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
  for (i64 r = 0; r < rows; ++r)
    conv2d_backward_input_cell(gy, k, gx, g, r / g.h, r % g.h);
  (void)threads;
}

template <class T>
void conv2d_backward_input(const T* gy, const T* k, T* gx,
                           const Conv2dGeom& g) {
  const int threads = max_threads();
  if (threads > 1 && g.cin * g.h * g.w >= kParallelCutoff)
    conv2d_backward_input_parallel(gy, k, gx, g, threads);
  else
    conv2d_backward_input_serial(gy, k, gx, g);
}

template <class T>
void conv2d_backward_kernel_serial(const T* gy, const T* x, T* gk,
                                   const Conv2dGeom& g) {
  for (i64 co = 0; co < g.cout; ++co)
    conv2d_backward_kernel_channel(gy, x, gk, g, co);
}

template <class T>
void conv2d_backward_kernel_parallel(const T* gy, const T* x, T* gk,
                                     const Conv2dGeom& g, int threads) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
  for (i64 co = 0; co < g.cout; ++co)
    conv2d_backward_kernel_channel(gy, x, gk, g, co);
  (void)threads;
}

template <class T>
void conv2d_backward_kernel(const T* gy, const T* x, T* gk,
                            const Conv2dGeom& g) {
  const int threads = max_threads();
  if (threads > 1 && g.cout * g.cin * g.kh * g.kw >= 64)
    conv2d_backward_kernel_parallel(gy, x, gk, g, threads);
  else
    conv2d_backward_kernel_serial(gy, x, gk, g);
}

#define DIFFPF_INSTANTIATE(T)                                                  \
  template void matmul_serial<T>(const T*, const T*, T*, i64, i64, i64, bool, \
                                 bool, bool);                                  \
  template void matmul_parallel<T>(const T*, const T*, T*, i64, i64, i64,     \
                                   bool, bool, bool, int);                     \
  template void matmul<T>(const T*, const T*, T*, i64, i64, i64, bool, bool,  \
                          bool);                                               \
  template void conv2d_forward_serial<T>(const T*, const T*, T*,              \
                                         const Conv2dGeom&);                   \
  template void conv2d_forward_parallel<T>(const T*, const T*, T*,            \
                                           const Conv2dGeom&, int);            \
  template void conv2d_forward<T>(const T*, const T*, T*, const Conv2dGeom&); \
  template void conv2d_backward_input_serial<T>(const T*, const T*, T*,       \
                                                const Conv2dGeom&);            \
  template void conv2d_backward_input_parallel<T>(const T*, const T*, T*,     \
                                                  const Conv2dGeom&, int);     \
  template void conv2d_backward_input<T>(const T*, const T*, T*,              \
                                         const Conv2dGeom&);                   \
  template void conv2d_backward_kernel_serial<T>(const T*, const T*, T*,      \
                                                 const Conv2dGeom&);           \
  template void conv2d_backward_kernel_parallel<T>(const T*, const T*, T*,    \
                                                   const Conv2dGeom&, int);    \
  template void conv2d_backward_kernel<T>(const T*, const T*, T*,             \
                                          const Conv2dGeom&);

DIFFPF_INSTANTIATE(float)
DIFFPF_INSTANTIATE(double)
#undef DIFFPF_INSTANTIATE

}  // namespace diffpf::kernels
