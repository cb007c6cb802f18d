#pragma once

// Minimal reverse-mode differentiation over coarse tensor primitives. A
// tensor is a row-major matrix; feature maps use the (H*W) x C layout so that
// channel concatenation is horizontal concatenation.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "regalign/errors.hpp"

namespace regalign::ad {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = std::vector<std::uint8_t>;

template <class S>
class Tape;

template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Mat<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Var<S> constant(Mat<S> v) { return push(std::move(v), nullptr, false); }
  Var<S> parameter(Mat<S> v) { return push(std::move(v), nullptr, true); }

  /// Records an op result. The node needs a gradient only if a parent does.
  Var<S> record(Mat<S> v, std::initializer_list<Var<S>> parents, Backward bw) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || requires_grad(p.id);
    return push(std::move(v), rg ? std::move(bw) : nullptr, rg);
  }

  /// Records an op whose gradient requirement was decided by the caller.
  Var<S> record_if(bool rg, Mat<S> v, Backward bw) { return push(std::move(v), rg ? std::move(bw) : nullptr, rg); }

  const Mat<S>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }
  const Mat<S>& grad(int id) const { return nodes_[id].grad; }

  /// Gradient buffer of a node, zero-initialized on first access.
  Mat<S>& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Seeds d(root)/d(root) = 1 and visits every node in reverse creation
  /// order (a reverse topological order) exactly once.
  void backward(Var<S> root) {
    if (root.rows() != 1 || root.cols() != 1) throw DimensionError("backward needs a scalar root");
    if (!requires_grad(root.id)) return;
    grad_ref(root.id)(0, 0) = S(1);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.backward && n.grad.size() > 0) n.backward(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var<S> push(Mat<S> v, Backward bw, bool rg) {
    nodes_.push_back(Node{std::move(v), Mat<S>(), std::move(bw), rg});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <class S>
void accumulate(Tape<S>& t, const Var<S>& v, const Mat<S>& g) {
  if (v.requires_grad()) t.grad_ref(v.id) += g;
}

template <class S>
void check_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::check_same_shape(a, b, "add");
  return a.tape->record(a.value() + b.value(), {a, b}, [a, b](Tape<S>& t, int self) {
    detail::accumulate(t, a, t.grad(self));
    detail::accumulate(t, b, t.grad(self));
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::check_same_shape(a, b, "sub");
  return a.tape->record(a.value() - b.value(), {a, b}, [a, b](Tape<S>& t, int self) {
    detail::accumulate(t, a, t.grad(self));
    if (b.requires_grad()) t.grad_ref(b.id) -= t.grad(self);
  });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::check_same_shape(a, b, "mul");
  return a.tape->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape<S>& t, int self) {
    if (a.requires_grad()) t.grad_ref(a.id) += t.grad(self).cwiseProduct(b.value());
    if (b.requires_grad()) t.grad_ref(b.id) += t.grad(self).cwiseProduct(a.value());
  });
}

template <class S>
Var<S> scale(Var<S> a, S s) {
  return a.tape->record(a.value() * s, {a}, [a, s](Tape<S>& t, int self) {
    if (a.requires_grad()) t.grad_ref(a.id) += t.grad(self) * s;
  });
}

template <class S>
Var<S> relu(Var<S> a) {
  return a.tape->record(a.value().cwiseMax(S(0)), {a}, [a](Tape<S>& t, int self) {
    if (!a.requires_grad()) return;
    const Mat<S>& x = a.value();
    const Mat<S>& g = t.grad(self);
    Mat<S>& ga = t.grad_ref(a.id);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x.data()[i] > S(0)) ga.data()[i] += g.data()[i];
  });
}

template <class S>
Var<S> sum(Var<S> a) {
  Mat<S> v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape->record(std::move(v), {a}, [a](Tape<S>& t, int self) {
    if (a.requires_grad()) t.grad_ref(a.id).array() += t.grad(self)(0, 0);
  });
}

template <class S>
Var<S> sum_squares(Var<S> a) {
  Mat<S> v(1, 1);
  v(0, 0) = a.value().squaredNorm();
  return a.tape->record(std::move(v), {a}, [a](Tape<S>& t, int self) {
    if (a.requires_grad()) t.grad_ref(a.id) += (S(2) * t.grad(self)(0, 0)) * a.value();
  });
}

/// log(1 + x) of a scalar.
template <class S>
Var<S> log1p(Var<S> a) {
  if (a.rows() != 1 || a.cols() != 1) throw DimensionError("log1p expects a scalar");
  Mat<S> v(1, 1);
  v(0, 0) = std::log1p(a.scalar());
  return a.tape->record(std::move(v), {a}, [a](Tape<S>& t, int self) {
    if (a.requires_grad()) t.grad_ref(a.id)(0, 0) += t.grad(self)(0, 0) / (S(1) + a.scalar());
  });
}

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Mat<S> v = a.value() * b.value();
  return a.tape->record(std::move(v), {a, b}, [a, b](Tape<S>& t, int self) {
    if (a.requires_grad()) t.grad_ref(a.id).noalias() += t.grad(self) * b.value().transpose();
    if (b.requires_grad()) t.grad_ref(b.id).noalias() += a.value().transpose() * t.grad(self);
  });
}

/// Row-major reinterpretation to a new shape with the same element count.
template <class S>
Var<S> reshape(Var<S> a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw DimensionError("reshape: element count differs");
  Mat<S> v = Eigen::Map<const Mat<S>>(a.value().data(), rows, cols);
  return a.tape->record(std::move(v), {a}, [a](Tape<S>& t, int self) {
    if (!a.requires_grad()) return;
    const Mat<S>& g = t.grad(self);
    t.grad_ref(a.id) += Eigen::Map<const Mat<S>>(g.data(), a.rows(), a.cols());
  });
}

template <class S>
Var<S> cols(Var<S> a, Eigen::Index start, Eigen::Index n) {
  Mat<S> v = a.value().middleCols(start, n);
  return a.tape->record(std::move(v), {a}, [a, start, n](Tape<S>& t, int self) {
    if (a.requires_grad()) t.grad_ref(a.id).middleCols(start, n) += t.grad(self);
  });
}

template <class S>
Var<S> rows(Var<S> a, Eigen::Index start, Eigen::Index n) {
  Mat<S> v = a.value().middleRows(start, n);
  return a.tape->record(std::move(v), {a}, [a, start, n](Tape<S>& t, int self) {
    if (a.requires_grad()) t.grad_ref(a.id).middleRows(start, n) += t.grad(self);
  });
}

/// Horizontal concatenation; for (H*W) x C maps this is channel concat.
template <class S>
Var<S> hcat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw DimensionError("hcat of nothing");
  Eigen::Index r = parts[0].rows(), c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw DimensionError("hcat: row counts differ");
    c += p.cols();
  }
  Mat<S> v(r, c);
  Eigen::Index off = 0;
  bool rg = false;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    rg = rg || p.requires_grad();
  }
  Tape<S>& tape = *parts[0].tape;
  if (!rg) return tape.constant(std::move(v));
  return tape.record_if(true, std::move(v), [parts](Tape<S>& t, int self) {
    Eigen::Index o = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) t.grad_ref(p.id) += t.grad(self).middleCols(o, p.cols());
      o += p.cols();
    }
  });
}

/// Zeroes every row whose mask entry is 0; `group` consecutive rows share one
/// mask entry.
template <class S>
Var<S> mask_rows(Var<S> a, const Mask& mask, Eigen::Index group = 1) {
  if (static_cast<Eigen::Index>(mask.size()) * group != a.rows()) throw DimensionError("mask_rows: size mismatch");
  Mat<S> v = a.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    if (!mask[static_cast<std::size_t>(i / group)]) v.row(i).setZero();
  auto m = std::make_shared<Mask>(mask);
  return a.tape->record(std::move(v), {a}, [a, m, group](Tape<S>& t, int self) {
    if (!a.requires_grad()) return;
    Mat<S>& ga = t.grad_ref(a.id);
    const Mat<S>& g = t.grad(self);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      if ((*m)[static_cast<std::size_t>(i / group)]) ga.row(i) += g.row(i);
  });
}

// ---------------------------------------------------------------------------
// Convolution over (H*W) x Cin maps with zero padding ("same" output size).
// Weight layout: (k*k*Cin) x Cout with row index (ky*k + kx)*Cin + ci.

namespace detail {

template <class S>
Mat<S> im2col(const Mat<S>& x, int h, int w, int k) {
  const int cin = static_cast<int>(x.cols());
  const int r = k / 2;
  Mat<S> col = Mat<S>::Zero(static_cast<Eigen::Index>(h) * w, static_cast<Eigen::Index>(k) * k * cin);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      S* dst = col.data() + (static_cast<std::size_t>(y) * w + xx) * col.cols();
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - r;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int sx = xx + kx - r;
          if (sx < 0 || sx >= w) continue;
          const S* src = x.data() + (static_cast<std::size_t>(sy) * w + sx) * cin;
          std::copy(src, src + cin, dst + (ky * k + kx) * cin);
        }
      }
    }
  return col;
}

template <class S>
void col2im_add(const Mat<S>& gcol, int h, int w, int k, Mat<S>& gx) {
  const int cin = static_cast<int>(gx.cols());
  const int r = k / 2;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      const S* src = gcol.data() + (static_cast<std::size_t>(y) * w + xx) * gcol.cols();
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - r;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int sx = xx + kx - r;
          if (sx < 0 || sx >= w) continue;
          S* dst = gx.data() + (static_cast<std::size_t>(sy) * w + sx) * cin;
          const S* s = src + (ky * k + kx) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += s[c];
        }
      }
    }
}

}  // namespace detail

template <class S>
Var<S> conv2d(Var<S> x, Var<S> weight, Var<S> bias, int h, int w, int k) {
  if (x.rows() != static_cast<Eigen::Index>(h) * w) throw DimensionError("conv2d: input is not h*w rows");
  if (weight.rows() != static_cast<Eigen::Index>(k) * k * x.cols()) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(weight.rows() / (k * k)) +
                         " input channels, got " + std::to_string(x.cols()));
  }
  if (bias.rows() != 1 || bias.cols() != weight.cols()) throw DimensionError("conv2d: bias shape");
  std::shared_ptr<Mat<S>> col;
  Mat<S> y;
  if (k == 1) {
    y.noalias() = x.value() * weight.value();
  } else {
    col = std::make_shared<Mat<S>>(detail::im2col(x.value(), h, w, k));
    y.noalias() = (*col) * weight.value();
  }
  y.rowwise() += bias.value().row(0);
  return x.tape->record(std::move(y), {x, weight, bias}, [x, weight, bias, col, h, w, k](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const Mat<S>& in = col ? *col : x.value();
    if (weight.requires_grad()) t.grad_ref(weight.id).noalias() += in.transpose() * g;
    if (bias.requires_grad()) t.grad_ref(bias.id) += g.colwise().sum();
    if (x.requires_grad()) {
      if (k == 1) {
        t.grad_ref(x.id).noalias() += g * weight.value().transpose();
      } else {
        Mat<S> gcol = g * weight.value().transpose();
        detail::col2im_add(gcol, h, w, k, t.grad_ref(x.id));
      }
    }
  });
}

}  // namespace regalign::ad
