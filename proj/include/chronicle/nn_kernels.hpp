#pragma once

// Dense row-major kernels for the transformer. Each output row depends only
// on the matching input row, so a row computed for a prefix is bit-identical
// to the same row computed for a longer sequence.

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace chronicle::nn {

/// Y[n x out] = X[n x in] * W[in x out] + b (b may be null).
template <class T>
void linear(const T* x, const T* w, const T* b, T* y, int n, int in, int out) {
  for (int i = 0; i < n; ++i) {
    T* yr = y + static_cast<std::ptrdiff_t>(i) * out;
    if (b) {
      std::copy(b, b + out, yr);
    } else {
      std::fill(yr, yr + out, T(0));
    }
    const T* xr = x + static_cast<std::ptrdiff_t>(i) * in;
    for (int k = 0; k < in; ++k) {
      const T xv = xr[k];
      const T* wr = w + static_cast<std::ptrdiff_t>(k) * out;
      for (int j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }
}

/// Accumulates dW += X^T dY, db += colsum(dY); writes dX = dY W^T when dx != null.
template <class T>
void linear_backward(const T* dy, const T* x, const T* w, T* dx, T* dw, T* db, int n, int in,
                     int out) {
  for (int i = 0; i < n; ++i) {
    const T* dyr = dy + static_cast<std::ptrdiff_t>(i) * out;
    const T* xr = x + static_cast<std::ptrdiff_t>(i) * in;
    if (dw) {
      for (int k = 0; k < in; ++k) {
        const T xv = xr[k];
        T* dwr = dw + static_cast<std::ptrdiff_t>(k) * out;
        for (int j = 0; j < out; ++j) dwr[j] += xv * dyr[j];
      }
    }
    if (db) {
      for (int j = 0; j < out; ++j) db[j] += dyr[j];
    }
    if (dx) {
      T* dxr = dx + static_cast<std::ptrdiff_t>(i) * in;
      for (int k = 0; k < in; ++k) {
        const T* wr = w + static_cast<std::ptrdiff_t>(k) * out;
        T acc = 0;
        for (int j = 0; j < out; ++j) acc += dyr[j] * wr[j];
        dxr[k] = acc;
      }
    }
  }
}

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
void layernorm(const T* x, const T* g, const T* b, T* y, T* mean, T* rstd, int n, int d) {
  for (int i = 0; i < n; ++i) {
    const T* xr = x + static_cast<std::ptrdiff_t>(i) * d;
    T m = 0;
    for (int k = 0; k < d; ++k) m += xr[k];
    m /= T(d);
    T v = 0;
    for (int k = 0; k < d; ++k) v += (xr[k] - m) * (xr[k] - m);
    v /= T(d);
    const T rs = T(1) / std::sqrt(v + T(kLayerNormEps));
    mean[i] = m;
    rstd[i] = rs;
    T* yr = y + static_cast<std::ptrdiff_t>(i) * d;
    for (int k = 0; k < d; ++k) yr[k] = (xr[k] - m) * rs * g[k] + b[k];
  }
}

/// dx is accumulated into (residual stream gradient).
template <class T>
void layernorm_backward(const T* dy, const T* x, const T* g, const T* mean, const T* rstd, T* dx,
                        T* dg, T* db, int n, int d) {
  for (int i = 0; i < n; ++i) {
    const T* dyr = dy + static_cast<std::ptrdiff_t>(i) * d;
    const T* xr = x + static_cast<std::ptrdiff_t>(i) * d;
    const T m = mean[i];
    const T rs = rstd[i];
    T sum_dxhat = 0;
    T sum_dxhat_xhat = 0;
    for (int k = 0; k < d; ++k) {
      const T xhat = (xr[k] - m) * rs;
      const T dxhat = dyr[k] * g[k];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      if (dg) dg[k] += dyr[k] * xhat;
      if (db) db[k] += dyr[k];
    }
    sum_dxhat /= T(d);
    sum_dxhat_xhat /= T(d);
    T* dxr = dx + static_cast<std::ptrdiff_t>(i) * d;
    for (int k = 0; k < d; ++k) {
      const T xhat = (xr[k] - m) * rs;
      dxr[k] += rs * (dyr[k] * g[k] - sum_dxhat - xhat * sum_dxhat_xhat);
    }
  }
}

// tanh approximation of GELU.
template <class T>
inline T gelu(T x) {
  const T c = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <class T>
inline T gelu_grad(T x) {
  const T c = T(0.7978845608028654);
  const T u = c * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(u);
  const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

/// Numerically stable softmax of one row.
template <class T>
void softmax(const T* in, T* out, int n) {
  T mx = in[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  T sum = 0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  const T inv = T(1) / sum;
  for (int i = 0; i < n; ++i) out[i] *= inv;
}

/// log(sum(exp(row))).
template <class T>
T logsumexp(const T* in, int n) {
  T mx = in[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  T sum = 0;
  for (int i = 0; i < n; ++i) sum += std::exp(in[i] - mx);
  return mx + std::log(sum);
}

}  // namespace chronicle::nn
