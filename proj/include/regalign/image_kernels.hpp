#pragma once

#include <algorithm>

// Scalar-generic raster kernels shared by the FeatureMap API and the
// differentiable tape. Layout is row-major H x W x C. Every linear kernel
// has a matching adjoint used in the backward pass.

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace regalign::kernels {

inline int reflect(int i, int n) {
  // Half-sample symmetric extension: -1 -> 0, n -> n-1. Column sums of the
  // resulting convolution operator stay exactly 1.
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

inline const std::array<double, 5>& gaussian5() {
  static const std::array<double, 5> g = [] {
    std::array<double, 5> w{};
    double sum = 0.0;
    for (int k = -2; k <= 2; ++k) sum += w[k + 2] = std::exp(-0.5 * k * k);
    for (auto& x : w) x /= sum;
    return w;
  }();
  return g;
}

template <class S>
void gaussian_downsample(const S* in, int w, int h, int c, S* out) {
  const auto& g = gaussian5();
  std::vector<double> tmp(static_cast<std::size_t>(w) * h * c, 0.0);
  std::vector<double> sm(tmp.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = -2; k <= 2; ++k) {
        const S* src = in + (static_cast<std::size_t>(y) * w + reflect(x + k, w)) * c;
        double* dst = tmp.data() + (static_cast<std::size_t>(y) * w + x) * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] += g[k + 2] * double(src[ch]);
      }
  for (int y = 0; y < h; ++y)
    for (int k = -2; k <= 2; ++k) {
      const double* src = tmp.data() + static_cast<std::size_t>(reflect(y + k, h)) * w * c;
      double* dst = sm.data() + static_cast<std::size_t>(y) * w * c;
      for (int i = 0; i < w * c; ++i) dst[i] += g[k + 2] * src[i];
    }
  const int wo = w / 2, ho = h / 2;
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x)
      for (int ch = 0; ch < c; ++ch) {
        auto at = [&](int yy, int xx) { return sm[(static_cast<std::size_t>(yy) * w + xx) * c + ch]; };
        out[(static_cast<std::size_t>(y) * wo + x) * c + ch] =
            S(0.25 * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1)));
      }
}

// Accumulates the adjoint of gaussian_downsample: gin += D^T gout.
template <class S>
void gaussian_downsample_adjoint(const S* gout, int w, int h, int c, S* gin) {
  const auto& g = gaussian5();
  const int wo = w / 2, ho = h / 2;
  std::vector<double> sm(static_cast<std::size_t>(w) * h * c, 0.0);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const double v = 0.25 * double(gout[(static_cast<std::size_t>(y) * wo + x) * c + ch]);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) sm[(static_cast<std::size_t>(2 * y + dy) * w + 2 * x + dx) * c + ch] += v;
      }
  std::vector<double> tmp(sm.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int k = -2; k <= 2; ++k) {
      const double* src = sm.data() + static_cast<std::size_t>(y) * w * c;
      double* dst = tmp.data() + static_cast<std::size_t>(reflect(y + k, h)) * w * c;
      for (int i = 0; i < w * c; ++i) dst[i] += g[k + 2] * src[i];
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = -2; k <= 2; ++k) {
        const double* src = tmp.data() + (static_cast<std::size_t>(y) * w + x) * c;
        S* dst = gin + (static_cast<std::size_t>(y) * w + reflect(x + k, w)) * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] += S(g[k + 2] * src[ch]);
      }
}

// Source coordinate and weights for one axis of an aligned-corner 2x upsample.
struct UpTap {
  int i0, i1;
  double w1;
};

inline UpTap up_tap(int out_index, int in_size) {
  const int out_size = 2 * in_size;
  if (in_size == 1) return {0, 0, 0.0};
  const double s = double(out_index) * double(in_size - 1) / double(out_size - 1);
  int i0 = static_cast<int>(std::floor(s));
  if (i0 >= in_size - 1) i0 = in_size - 2;
  return {i0, i0 + 1, s - i0};
}

template <class S>
void upsample_bilinear(const S* in, int w, int h, int c, S* out) {
  const int wo = 2 * w, ho = 2 * h;
  for (int y = 0; y < ho; ++y) {
    const UpTap ty = up_tap(y, h);
    for (int x = 0; x < wo; ++x) {
      const UpTap tx = up_tap(x, w);
      const double w00 = (1 - ty.w1) * (1 - tx.w1), w01 = (1 - ty.w1) * tx.w1;
      const double w10 = ty.w1 * (1 - tx.w1), w11 = ty.w1 * tx.w1;
      const S* a = in + (static_cast<std::size_t>(ty.i0) * w + tx.i0) * c;
      const S* b = in + (static_cast<std::size_t>(ty.i0) * w + tx.i1) * c;
      const S* d = in + (static_cast<std::size_t>(ty.i1) * w + tx.i0) * c;
      const S* e = in + (static_cast<std::size_t>(ty.i1) * w + tx.i1) * c;
      S* o = out + (static_cast<std::size_t>(y) * wo + x) * c;
      for (int ch = 0; ch < c; ++ch)
        o[ch] = S(w00 * double(a[ch]) + w01 * double(b[ch]) + w10 * double(d[ch]) + w11 * double(e[ch]));
    }
  }
}

template <class S>
void upsample_bilinear_adjoint(const S* gout, int w, int h, int c, S* gin) {
  const int wo = 2 * w, ho = 2 * h;
  for (int y = 0; y < ho; ++y) {
    const UpTap ty = up_tap(y, h);
    for (int x = 0; x < wo; ++x) {
      const UpTap tx = up_tap(x, w);
      const double w00 = (1 - ty.w1) * (1 - tx.w1), w01 = (1 - ty.w1) * tx.w1;
      const double w10 = ty.w1 * (1 - tx.w1), w11 = ty.w1 * tx.w1;
      const S* g = gout + (static_cast<std::size_t>(y) * wo + x) * c;
      S* a = gin + (static_cast<std::size_t>(ty.i0) * w + tx.i0) * c;
      S* b = gin + (static_cast<std::size_t>(ty.i0) * w + tx.i1) * c;
      S* d = gin + (static_cast<std::size_t>(ty.i1) * w + tx.i0) * c;
      S* e = gin + (static_cast<std::size_t>(ty.i1) * w + tx.i1) * c;
      for (int ch = 0; ch < c; ++ch) {
        a[ch] += S(w00 * g[ch]);
        b[ch] += S(w01 * g[ch]);
        d[ch] += S(w10 * g[ch]);
        e[ch] += S(w11 * g[ch]);
      }
    }
  }
}

// Central differences inside, one-sided on the 1-pixel border.
inline void difference_taps(int i, int n, int& lo, int& hi, double& scale) {
  if (i == 0) {
    lo = 0, hi = 1, scale = 1.0;
  } else if (i == n - 1) {
    lo = n - 2, hi = n - 1, scale = 1.0;
  } else {
    lo = i - 1, hi = i + 1, scale = 0.5;
  }
}

template <class S>
void numerical_gradient(const S* in, int w, int h, int c, S* du, S* dv) {
  for (int y = 0; y < h; ++y) {
    int ylo, yhi;
    double ys;
    difference_taps(y, h, ylo, yhi, ys);
    for (int x = 0; x < w; ++x) {
      int xlo, xhi;
      double xs;
      difference_taps(x, w, xlo, xhi, xs);
      const std::size_t o = (static_cast<std::size_t>(y) * w + x) * c;
      const std::size_t xl = (static_cast<std::size_t>(y) * w + xlo) * c;
      const std::size_t xh = (static_cast<std::size_t>(y) * w + xhi) * c;
      const std::size_t yl = (static_cast<std::size_t>(ylo) * w + x) * c;
      const std::size_t yh = (static_cast<std::size_t>(yhi) * w + x) * c;
      for (int ch = 0; ch < c; ++ch) {
        du[o + ch] = S(xs * (double(in[xh + ch]) - double(in[xl + ch])));
        dv[o + ch] = S(ys * (double(in[yh + ch]) - double(in[yl + ch])));
      }
    }
  }
}

template <class S>
void numerical_gradient_adjoint(const S* gdu, const S* gdv, int w, int h, int c, S* gin) {
  for (int y = 0; y < h; ++y) {
    int ylo, yhi;
    double ys;
    difference_taps(y, h, ylo, yhi, ys);
    for (int x = 0; x < w; ++x) {
      int xlo, xhi;
      double xs;
      difference_taps(x, w, xlo, xhi, xs);
      const std::size_t o = (static_cast<std::size_t>(y) * w + x) * c;
      const std::size_t xl = (static_cast<std::size_t>(y) * w + xlo) * c;
      const std::size_t xh = (static_cast<std::size_t>(y) * w + xhi) * c;
      const std::size_t yl = (static_cast<std::size_t>(ylo) * w + x) * c;
      const std::size_t yh = (static_cast<std::size_t>(yhi) * w + x) * c;
      for (int ch = 0; ch < c; ++ch) {
        const S a = S(xs) * gdu[o + ch];
        const S b = S(ys) * gdv[o + ch];
        gin[xh + ch] += a;
        gin[xl + ch] -= a;
        gin[yh + ch] += b;
        gin[yl + ch] -= b;
      }
    }
  }
}

// Bilinear footprint of a sample point. valid=false when any of the four
// corners falls outside [0, w-1] x [0, h-1].
struct BilinearTap {
  bool valid = false;
  std::size_t i00 = 0, i01 = 0, i10 = 0, i11 = 0;  // pixel indices (without channel)
  double fx = 0.0, fy = 0.0;
};

inline BilinearTap bilinear_tap(double u, double v, int w, int h) {
  BilinearTap t;
  // Coordinates within rounding distance of the border count as inside.
  constexpr double eps = 1e-9;
  if (!(u >= -eps && v >= -eps && u <= w - 1 + eps && v <= h - 1 + eps)) return t;
  u = std::clamp(u, 0.0, double(w - 1));
  v = std::clamp(v, 0.0, double(h - 1));
  int x0 = static_cast<int>(std::floor(u));
  int y0 = static_cast<int>(std::floor(v));
  if (w > 1 && x0 > w - 2) x0 = w - 2;
  if (h > 1 && y0 > h - 2) y0 = h - 2;
  const int x1 = (w > 1) ? x0 + 1 : x0;
  const int y1 = (h > 1) ? y0 + 1 : y0;
  t.valid = true;
  t.fx = u - x0;
  t.fy = v - y0;
  t.i00 = static_cast<std::size_t>(y0) * w + x0;
  t.i01 = static_cast<std::size_t>(y0) * w + x1;
  t.i10 = static_cast<std::size_t>(y1) * w + x0;
  t.i11 = static_cast<std::size_t>(y1) * w + x1;
  return t;
}

}  // namespace regalign::kernels
