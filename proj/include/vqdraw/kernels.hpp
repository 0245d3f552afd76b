#pragma once

#include <cstddef>

namespace vqdraw::kernels {

// Global switch between the serial reference kernels and the OpenMP ones.
// Both produce bit-identical results: every output element is computed by
// exactly one thread with the same accumulation order.
bool parallel_enabled();
void set_parallel(bool on);

// ---------------------------------------------------------------------------
// matmul: out[m,n] = A[m,k] * B[k,n], optionally transposing either operand.
// A is m*k (or k*m when trans_a), B is k*n (or n*k when trans_b).

template <typename T>
void matmul_serial(const T* a, const T* b, T* out, int m, int k, int n,
                   bool trans_a, bool trans_b) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int t = 0; t < k; ++t) {
        const T av = trans_a ? a[t * m + i] : a[i * k + t];
        const T bv = trans_b ? b[j * k + t] : b[t * n + j];
        acc += av * bv;
      }
      out[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_omp(const T* a, const T* b, T* out, int m, int k, int n,
                bool trans_a, bool trans_b) {
#pragma omp parallel for
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int t = 0; t < k; ++t) {
        const T av = trans_a ? a[t * m + i] : a[i * k + t];
        const T bv = trans_b ? b[j * k + t] : b[t * n + j];
        acc += av * bv;
      }
      out[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul(const T* a, const T* b, T* out, int m, int k, int n,
            bool trans_a = false, bool trans_b = false) {
  if (parallel_enabled())
    matmul_omp(a, b, out, m, k, n, trans_a, trans_b);
  else
    matmul_serial(a, b, out, m, k, n, trans_a, trans_b);
}

// ---------------------------------------------------------------------------
// 2-D convolution, NCHW without the batch dim: x[ci,h,w], w[co,ci,kh,kw].
// All backward kernels are written in gather form so each output element has
// a single writer.

struct Conv2dDims {
  int ci, h, w;
  int co, kh, kw;
  int stride, pad;
  int oh, ow;
};

template <typename T>
void conv2d_fwd_body(const T* x, const T* wt, T* y, const Conv2dDims& d,
                     int co, int oy, int ox) {
  T acc = 0;
  for (int ci = 0; ci < d.ci; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      const int iy = oy * d.stride - d.pad + ky;
      if (iy < 0 || iy >= d.h) continue;
      for (int kx = 0; kx < d.kw; ++kx) {
        const int ix = ox * d.stride - d.pad + kx;
        if (ix < 0 || ix >= d.w) continue;
        acc += x[(ci * d.h + iy) * d.w + ix] *
               wt[((co * d.ci + ci) * d.kh + ky) * d.kw + kx];
      }
    }
  }
  y[(co * d.oh + oy) * d.ow + ox] = acc;
}

template <typename T>
void conv2d_fwd_serial(const T* x, const T* wt, T* y, const Conv2dDims& d) {
  for (int co = 0; co < d.co; ++co)
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) conv2d_fwd_body(x, wt, y, d, co, oy, ox);
}

template <typename T>
void conv2d_fwd_omp(const T* x, const T* wt, T* y, const Conv2dDims& d) {
#pragma omp parallel for collapse(2)
  for (int co = 0; co < d.co; ++co)
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) conv2d_fwd_body(x, wt, y, d, co, oy, ox);
}

template <typename T>
void conv2d_fwd(const T* x, const T* wt, T* y, const Conv2dDims& d) {
  if (parallel_enabled())
    conv2d_fwd_omp(x, wt, y, d);
  else
    conv2d_fwd_serial(x, wt, y, d);
}

// dx[ci,iy,ix] = sum over (co,ky,kx) with iy = oy*s - p + ky.
template <typename T>
void conv2d_bwd_input_body(const T* dy, const T* wt, T* dx, const Conv2dDims& d,
                           int ci, int iy, int ix) {
  T acc = 0;
  for (int co = 0; co < d.co; ++co) {
    for (int ky = 0; ky < d.kh; ++ky) {
      const int t = iy + d.pad - ky;
      if (t < 0 || t % d.stride != 0) continue;
      const int oy = t / d.stride;
      if (oy >= d.oh) continue;
      for (int kx = 0; kx < d.kw; ++kx) {
        const int u = ix + d.pad - kx;
        if (u < 0 || u % d.stride != 0) continue;
        const int ox = u / d.stride;
        if (ox >= d.ow) continue;
        acc += dy[(co * d.oh + oy) * d.ow + ox] *
               wt[((co * d.ci + ci) * d.kh + ky) * d.kw + kx];
      }
    }
  }
  dx[(ci * d.h + iy) * d.w + ix] += acc;
}

template <typename T>
void conv2d_bwd_input_serial(const T* dy, const T* wt, T* dx,
                             const Conv2dDims& d) {
  for (int ci = 0; ci < d.ci; ++ci)
    for (int iy = 0; iy < d.h; ++iy)
      for (int ix = 0; ix < d.w; ++ix)
        conv2d_bwd_input_body(dy, wt, dx, d, ci, iy, ix);
}

template <typename T>
void conv2d_bwd_input_omp(const T* dy, const T* wt, T* dx, const Conv2dDims& d) {
#pragma omp parallel for collapse(2)
  for (int ci = 0; ci < d.ci; ++ci)
    for (int iy = 0; iy < d.h; ++iy)
      for (int ix = 0; ix < d.w; ++ix)
        conv2d_bwd_input_body(dy, wt, dx, d, ci, iy, ix);
}

template <typename T>
void conv2d_bwd_input(const T* dy, const T* wt, T* dx, const Conv2dDims& d) {
  if (parallel_enabled())
    conv2d_bwd_input_omp(dy, wt, dx, d);
  else
    conv2d_bwd_input_serial(dy, wt, dx, d);
}

// dw[co,ci,ky,kx] = sum over output positions of dy * x.
template <typename T>
void conv2d_bwd_weight_body(const T* dy, const T* x, T* dw, const Conv2dDims& d,
                            int co, int ci, int ky, int kx) {
  T acc = 0;
  for (int oy = 0; oy < d.oh; ++oy) {
    const int iy = oy * d.stride - d.pad + ky;
    if (iy < 0 || iy >= d.h) continue;
    for (int ox = 0; ox < d.ow; ++ox) {
      const int ix = ox * d.stride - d.pad + kx;
      if (ix < 0 || ix >= d.w) continue;
      acc += dy[(co * d.oh + oy) * d.ow + ox] * x[(ci * d.h + iy) * d.w + ix];
    }
  }
  dw[((co * d.ci + ci) * d.kh + ky) * d.kw + kx] += acc;
}

template <typename T>
void conv2d_bwd_weight_serial(const T* dy, const T* x, T* dw,
                              const Conv2dDims& d) {
  for (int co = 0; co < d.co; ++co)
    for (int ci = 0; ci < d.ci; ++ci)
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx)
          conv2d_bwd_weight_body(dy, x, dw, d, co, ci, ky, kx);
}

template <typename T>
void conv2d_bwd_weight_omp(const T* dy, const T* x, T* dw, const Conv2dDims& d) {
#pragma omp parallel for collapse(2)
  for (int co = 0; co < d.co; ++co)
    for (int ci = 0; ci < d.ci; ++ci)
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx)
          conv2d_bwd_weight_body(dy, x, dw, d, co, ci, ky, kx);
}

template <typename T>
void conv2d_bwd_weight(const T* dy, const T* x, T* dw, const Conv2dDims& d) {
  if (parallel_enabled())
    conv2d_bwd_weight_omp(dy, x, dw, d);
  else
    conv2d_bwd_weight_serial(dy, x, dw, d);
}

// ---------------------------------------------------------------------------
// Transposed 2-D convolution: x[ci,h,w], w[ci,co,kh,kw],
// y[co, (h-1)*s - 2p + kh, (w-1)*s - 2p + kw].

struct TConv2dDims {
  int ci, h, w;
  int co, kh, kw;
  int stride, pad;
  int oh, ow;
};

// y[co,oy,ox] = sum over (ci,ky) with oy = iy*s - p + ky.
template <typename T>
void tconv2d_fwd_body(const T* x, const T* wt, T* y, const TConv2dDims& d,
                      int co, int oy, int ox) {
  T acc = 0;
  for (int ci = 0; ci < d.ci; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      const int t = oy + d.pad - ky;
      if (t < 0 || t % d.stride != 0) continue;
      const int iy = t / d.stride;
      if (iy >= d.h) continue;
      for (int kx = 0; kx < d.kw; ++kx) {
        const int u = ox + d.pad - kx;
        if (u < 0 || u % d.stride != 0) continue;
        const int ix = u / d.stride;
        if (ix >= d.w) continue;
        acc += x[(ci * d.h + iy) * d.w + ix] *
               wt[((ci * d.co + co) * d.kh + ky) * d.kw + kx];
      }
    }
  }
  y[(co * d.oh + oy) * d.ow + ox] = acc;
}

template <typename T>
void tconv2d_fwd_serial(const T* x, const T* wt, T* y, const TConv2dDims& d) {
  for (int co = 0; co < d.co; ++co)
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) tconv2d_fwd_body(x, wt, y, d, co, oy, ox);
}

template <typename T>
void tconv2d_fwd_omp(const T* x, const T* wt, T* y, const TConv2dDims& d) {
#pragma omp parallel for collapse(2)
  for (int co = 0; co < d.co; ++co)
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) tconv2d_fwd_body(x, wt, y, d, co, oy, ox);
}

template <typename T>
void tconv2d_fwd(const T* x, const T* wt, T* y, const TConv2dDims& d) {
  if (parallel_enabled())
    tconv2d_fwd_omp(x, wt, y, d);
  else
    tconv2d_fwd_serial(x, wt, y, d);
}

// dx[ci,iy,ix] = sum over (co,ky,kx) of dy[co, iy*s - p + ky, ...] * w.
template <typename T>
void tconv2d_bwd_input_body(const T* dy, const T* wt, T* dx,
                            const TConv2dDims& d, int ci, int iy, int ix) {
  T acc = 0;
  for (int co = 0; co < d.co; ++co) {
    for (int ky = 0; ky < d.kh; ++ky) {
      const int oy = iy * d.stride - d.pad + ky;
      if (oy < 0 || oy >= d.oh) continue;
      for (int kx = 0; kx < d.kw; ++kx) {
        const int ox = ix * d.stride - d.pad + kx;
        if (ox < 0 || ox >= d.ow) continue;
        acc += dy[(co * d.oh + oy) * d.ow + ox] *
               wt[((ci * d.co + co) * d.kh + ky) * d.kw + kx];
      }
    }
  }
  dx[(ci * d.h + iy) * d.w + ix] += acc;
}

template <typename T>
void tconv2d_bwd_input_serial(const T* dy, const T* wt, T* dx,
                              const TConv2dDims& d) {
  for (int ci = 0; ci < d.ci; ++ci)
    for (int iy = 0; iy < d.h; ++iy)
      for (int ix = 0; ix < d.w; ++ix)
        tconv2d_bwd_input_body(dy, wt, dx, d, ci, iy, ix);
}

template <typename T>
void tconv2d_bwd_input_omp(const T* dy, const T* wt, T* dx,
                           const TConv2dDims& d) {
#pragma omp parallel for collapse(2)
  for (int ci = 0; ci < d.ci; ++ci)
    for (int iy = 0; iy < d.h; ++iy)
      for (int ix = 0; ix < d.w; ++ix)
        tconv2d_bwd_input_body(dy, wt, dx, d, ci, iy, ix);
}

template <typename T>
void tconv2d_bwd_input(const T* dy, const T* wt, T* dx, const TConv2dDims& d) {
  if (parallel_enabled())
    tconv2d_bwd_input_omp(dy, wt, dx, d);
  else
    tconv2d_bwd_input_serial(dy, wt, dx, d);
}

// dw[ci,co,ky,kx] = sum over input positions of x * dy[co, iy*s - p + ky, ...].
template <typename T>
void tconv2d_bwd_weight_body(const T* dy, const T* x, T* dw,
                             const TConv2dDims& d, int ci, int co, int ky,
                             int kx) {
  T acc = 0;
  for (int iy = 0; iy < d.h; ++iy) {
    const int oy = iy * d.stride - d.pad + ky;
    if (oy < 0 || oy >= d.oh) continue;
    for (int ix = 0; ix < d.w; ++ix) {
      const int ox = ix * d.stride - d.pad + kx;
      if (ox < 0 || ox >= d.ow) continue;
      acc += x[(ci * d.h + iy) * d.w + ix] * dy[(co * d.oh + oy) * d.ow + ox];
    }
  }
  dw[((ci * d.co + co) * d.kh + ky) * d.kw + kx] += acc;
}

template <typename T>
void tconv2d_bwd_weight_serial(const T* dy, const T* x, T* dw,
                               const TConv2dDims& d) {
  for (int ci = 0; ci < d.ci; ++ci)
    for (int co = 0; co < d.co; ++co)
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx)
          tconv2d_bwd_weight_body(dy, x, dw, d, ci, co, ky, kx);
}

template <typename T>
void tconv2d_bwd_weight_omp(const T* dy, const T* x, T* dw,
                            const TConv2dDims& d) {
#pragma omp parallel for collapse(2)
  for (int ci = 0; ci < d.ci; ++ci)
    for (int co = 0; co < d.co; ++co)
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx)
          tconv2d_bwd_weight_body(dy, x, dw, d, ci, co, ky, kx);
}

template <typename T>
void tconv2d_bwd_weight(const T* dy, const T* x, T* dw, const TConv2dDims& d) {
  if (parallel_enabled())
    tconv2d_bwd_weight_omp(dy, x, dw, d);
  else
    tconv2d_bwd_weight_serial(dy, x, dw, d);
}

}  // namespace vqdraw::kernels
