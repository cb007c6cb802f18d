#pragma once

#include <array>
#include <cmath>

namespace regalign {

// Forward-mode dual number carrying N directional derivatives. Used to get
// exact local Jacobians of small geometric kernels (pose exponential, warp)
// inside reverse-mode tape nodes.
template <class S, int N>
struct Dual {
  S v{};
  std::array<S, N> d{};

  Dual() = default;
  Dual(S value) : v(value) {}  // NOLINT: implicit promotion of constants
  static Dual variable(S value, int index) {
    Dual x(value);
    x.d[index] = S(1);
    return x;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const S inv = S(1) / o.v;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }
};

template <class S, int N>
Dual<S, N> operator-(Dual<S, N> a) {
  a.v = -a.v;
  for (auto& x : a.d) x = -x;
  return a;
}

#define REGALIGN_DUAL_BINOP(op, aop)                                                          \
  template <class S, int N>                                                                  \
  Dual<S, N> operator op(Dual<S, N> a, const Dual<S, N>& b) { return a aop b; }              \
  template <class S, int N>                                                                  \
  Dual<S, N> operator op(Dual<S, N> a, S b) { return a aop Dual<S, N>(b); }                  \
  template <class S, int N>                                                                  \
  Dual<S, N> operator op(S a, const Dual<S, N>& b) { return Dual<S, N>(a) aop b; }

REGALIGN_DUAL_BINOP(+, +=)
REGALIGN_DUAL_BINOP(-, -=)
REGALIGN_DUAL_BINOP(*, *=)
REGALIGN_DUAL_BINOP(/, /=)
#undef REGALIGN_DUAL_BINOP

template <class S, int N>
bool operator<(const Dual<S, N>& a, const Dual<S, N>& b) { return a.v < b.v; }
template <class S, int N>
bool operator<(const Dual<S, N>& a, S b) { return a.v < b; }
template <class S, int N>
bool operator<=(const Dual<S, N>& a, S b) { return a.v <= b; }
template <class S, int N>
bool operator>(const Dual<S, N>& a, S b) { return a.v > b; }

template <class S, int N>
Dual<S, N> sqrt(const Dual<S, N>& a) {
  Dual<S, N> r(std::sqrt(a.v));
  const S k = S(0.5) / r.v;
  for (int i = 0; i < N; ++i) r.d[i] = k * a.d[i];
  return r;
}

template <class S, int N>
Dual<S, N> sin(const Dual<S, N>& a) {
  Dual<S, N> r(std::sin(a.v));
  const S k = std::cos(a.v);
  for (int i = 0; i < N; ++i) r.d[i] = k * a.d[i];
  return r;
}

template <class S, int N>
Dual<S, N> cos(const Dual<S, N>& a) {
  Dual<S, N> r(std::cos(a.v));
  const S k = -std::sin(a.v);
  for (int i = 0; i < N; ++i) r.d[i] = k * a.d[i];
  return r;
}

template <class T>
struct ScalarOf {
  using type = T;
};
template <class S, int N>
struct ScalarOf<Dual<S, N>> {
  using type = S;
};

inline double value_of(double x) { return x; }
inline float value_of(float x) { return x; }
template <class S, int N>
S value_of(const Dual<S, N>& x) {
  return x.v;
}

}  // namespace regalign
