#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "aasist/tensor.hpp"

namespace aasist {

// Self-normalizing activation constants (Klambauer et al.).
inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;

// c = or += op(A) * op(B), where op transposes when asked. Eigen picks kernels
// and peeling by operand address, so products only ever run on aligned
// matrices: the result then depends on the values alone and runs are
// bit-reproducible.
inline void gemm(const RowMat& A, bool trans_a, const RowMat& B, bool trans_b, double* c, bool accumulate) {
  RowMat C(trans_a ? A.cols() : A.rows(), trans_b ? B.rows() : B.cols());
  if (trans_a && trans_b) C.noalias() = A.transpose() * B.transpose();
  else if (trans_a) C.noalias() = A.transpose() * B;
  else if (trans_b) C.noalias() = A * B.transpose();
  else C.noalias() = A * B;
  const double* src = C.data();
  const auto n = static_cast<std::size_t>(C.size());
  if (accumulate) {
    for (std::size_t i = 0; i < n; ++i) c[i] += src[i];
  } else {
    std::copy(src, src + n, c);
  }
}

// Pointer form: a is stored (m, k) or (k, m) and b (k, n) or (n, k); both are
// copied into aligned matrices first.
inline void gemm(const double* a, bool trans_a, const double* b, bool trans_b, std::size_t m, std::size_t k,
                 std::size_t n, double* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  const RowMat A = trans_a ? RowMat(ConstMapMat(a, K, M)) : RowMat(ConstMapMat(a, M, K));
  const RowMat B = trans_b ? RowMat(ConstMapMat(b, N, K)) : RowMat(ConstMapMat(b, K, N));
  gemm(A, trans_a, B, trans_b, c, accumulate);
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_op(name, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& xin = input_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += self.grad[i] * deriv(xin[i], self.value[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = input_value(self, 0);
    const auto& bv = input_value(self, 1);
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  return make_op("scale", x.shape(), std::move(out), {x}, [c](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
    }
  });
}

inline Tensor selu(const Tensor& x) {
  return detail::unary(
      "selu", x,
      [](double v) { return v > 0.0 ? kSeluLambda * v : kSeluLambda * kSeluAlpha * std::expm1(v); },
      [](double v, double y) { return v > 0.0 ? kSeluLambda : y + kSeluLambda * kSeluAlpha; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

/// |x|; the derivative at exactly 0 is taken as 0.
inline Tensor abs(const Tensor& x) {
  return detail::unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

/// Elementwise maximum. On exact ties the gradient goes to `a`.
inline Tensor elementwise_max(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "elementwise_max");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] >= b[i] ? a[i] : b[i];
  return make_op("elementwise_max", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = input_value(self, 0);
    const auto& bv = input_value(self, 1);
    double* ga = input_grad(self, 0);
    double* gb = input_grad(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (av[i] >= bv[i]) {
        if (ga) ga[i] += self.grad[i];
      } else if (gb) {
        gb[i] += self.grad[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Broadcasting along one axis

/// x + v where v has length x.shape[axis] and is broadcast over other axes.
inline Tensor add_along(const Tensor& x, const Tensor& v, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (v.size() != s.extent) throw ShapeError("add_along: vector length does not match axis");
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t c = 0; c < s.extent; ++c) {
      const std::size_t base = (o * s.extent + c) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) out[base + i] = x[base + i] + v[c];
    }
  return make_op("add_along", x.shape(), std::move(out), {x, v}, [s](detail::Node& self) {
    double* gx = input_grad(self, 0);
    double* gv = input_grad(self, 1);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t c = 0; c < s.extent; ++c) {
        const std::size_t base = (o * s.extent + c) * s.inner;
        double acc = 0.0;
        for (std::size_t i = 0; i < s.inner; ++i) {
          if (gx) gx[base + i] += self.grad[base + i];
          acc += self.grad[base + i];
        }
        if (gv) gv[c] += acc;
      }
  });
}

/// x * v where v has length x.shape[axis] and is broadcast over other axes.
inline Tensor mul_along(const Tensor& x, const Tensor& v, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (v.size() != s.extent) throw ShapeError("mul_along: vector length does not match axis");
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t c = 0; c < s.extent; ++c) {
      const std::size_t base = (o * s.extent + c) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) out[base + i] = x[base + i] * v[c];
    }
  return make_op("mul_along", x.shape(), std::move(out), {x, v}, [s](detail::Node& self) {
    const auto& xv = input_value(self, 0);
    const auto& vv = input_value(self, 1);
    double* gx = input_grad(self, 0);
    double* gv = input_grad(self, 1);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t c = 0; c < s.extent; ++c) {
        const std::size_t base = (o * s.extent + c) * s.inner;
        double acc = 0.0;
        for (std::size_t i = 0; i < s.inner; ++i) {
          if (gx) gx[base + i] += self.grad[base + i] * vv[c];
          acc += self.grad[base + i] * xv[base + i];
        }
        if (gv) gv[c] += acc;
      }
  });
}

/// x[..., d] * s[...]: scales every trailing-axis row of x by one scalar of s.
inline Tensor mul_rows(const Tensor& x, const Tensor& s) {
  if (x.rank() != s.rank() + 1 || !std::equal(s.shape().begin(), s.shape().end(), x.shape().begin())) {
    throw ShapeError("mul_rows: " + shape_str(s.shape()) + " is not the row shape of " + shape_str(x.shape()));
  }
  const std::size_t rows = s.size();
  const std::size_t d = x.shape().back();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = x[r * d + k] * s[r];
  return make_op("mul_rows", x.shape(), std::move(out), {x, s}, [rows, d](detail::Node& self) {
    const auto& xv = input_value(self, 0);
    const auto& sv = input_value(self, 1);
    double* gx = input_grad(self, 0);
    double* gs = input_grad(self, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        if (gx) gx[r * d + k] += self.grad[r * d + k] * sv[r];
        acc += self.grad[r * d + k] * xv[r * d + k];
      }
      if (gs) gs[r] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalization

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_op("sum", Shape{}, {total}, {x}, [](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

namespace detail {
inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}
}  // namespace detail

/// Maximum over `axis` (removed from the shape). Ties route to the first index.
inline Tensor reduce_max(const Tensor& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.extent == 0) throw ShapeError("reduce_max over empty axis");
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      double bv = x[o * s.extent * s.inner + i];
      for (std::size_t c = 1; c < s.extent; ++c) {
        const double v = x[(o * s.extent + c) * s.inner + i];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out[o * s.inner + i] = bv;
      arg[o * s.inner + i] = (o * s.extent + best) * s.inner + i;
    }
  return make_op("reduce_max", detail::drop_axis(x.shape(), axis), std::move(out), {x},
                 [arg = std::move(arg)](detail::Node& self) {
                   if (double* g = input_grad(self, 0)) {
                     for (std::size_t j = 0; j < arg.size(); ++j) g[arg[j]] += self.grad[j];
                   }
                 });
}

inline Tensor reduce_mean(const Tensor& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.extent == 0) throw ShapeError("reduce_mean over empty axis");
  const double inv = 1.0 / static_cast<double>(s.extent);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t c = 0; c < s.extent; ++c)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.extent + c) * s.inner + i];
  for (double& v : out) v *= inv;
  return make_op("reduce_mean", detail::drop_axis(x.shape(), axis), std::move(out), {x},
                 [s, inv](detail::Node& self) {
                   double* g = input_grad(self, 0);
                   if (!g) return;
                   for (std::size_t o = 0; o < s.outer; ++o)
                     for (std::size_t c = 0; c < s.extent; ++c)
                       for (std::size_t i = 0; i < s.inner; ++i)
                         g[(o * s.extent + c) * s.inner + i] += self.grad[o * s.inner + i] * inv;
                 });
}

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < s.extent; ++c) peak = std::max(peak, x[base + c * s.inner]);
      double total = 0.0;
      for (std::size_t c = 0; c < s.extent; ++c) {
        const double e = std::exp(x[base + c * s.inner] - peak);
        out[base + c * s.inner] = e;
        total += e;
      }
      for (std::size_t c = 0; c < s.extent; ++c) out[base + c * s.inner] /= total;
    }
  return make_op("softmax", x.shape(), std::move(out), {x}, [s](detail::Node& self) {
    double* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t c = 0; c < s.extent; ++c) {
          const std::size_t k = base + c * s.inner;
          dot += self.grad[k] * self.value[k];
        }
        for (std::size_t c = 0; c < s.extent; ++c) {
          const std::size_t k = base + c * s.inner;
          g[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
  });
}

/// Batch normalization with statistics over every axis except `axis`.
/// Training form: normalizes with the biased batch variance and reports the
/// batch mean/variance through `batch_mean`/`batch_var` when non-null.
inline Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t axis,
                               double eps, std::vector<double>* batch_mean = nullptr,
                               std::vector<double>* batch_var = nullptr) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (gamma.size() != s.extent || beta.size() != s.extent) {
    throw ShapeError("batch_norm: parameter length does not match feature axis of " + shape_str(x.shape()));
  }
  const std::size_t count = s.outer * s.inner;
  std::vector<double> mu(s.extent, 0.0), var(s.extent, 0.0), inv_std(s.extent);
  for (std::size_t c = 0; c < s.extent; ++c) {
    double acc = 0.0;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) acc += x[(o * s.extent + c) * s.inner + i];
    mu[c] = acc / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const double d = x[(o * s.extent + c) * s.inner + i] - mu[c];
        sq += d * d;
      }
    var[c] = sq / static_cast<double>(count);
    inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  std::vector<double> xhat(x.size()), out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t c = 0; c < s.extent; ++c)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t k = (o * s.extent + c) * s.inner + i;
        xhat[k] = (x[k] - mu[c]) * inv_std[c];
        out[k] = xhat[k] * gamma[c] + beta[c];
      }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  return make_op("batch_norm", x.shape(), std::move(out), {x, gamma, beta},
                 [s, count, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                   const auto& gam = input_value(self, 1);
                   double* gx = input_grad(self, 0);
                   double* gg = input_grad(self, 1);
                   double* gb = input_grad(self, 2);
                   const double m = static_cast<double>(count);
                   for (std::size_t c = 0; c < s.extent; ++c) {
                     double sum_dy = 0.0, sum_dy_xhat = 0.0;
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t i = 0; i < s.inner; ++i) {
                         const std::size_t k = (o * s.extent + c) * s.inner + i;
                         sum_dy += self.grad[k];
                         sum_dy_xhat += self.grad[k] * xhat[k];
                       }
                     if (gg) gg[c] += sum_dy_xhat;
                     if (gb) gb[c] += sum_dy;
                     if (!gx) continue;
                     const double f = gam[c] * inv_std[c];
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t i = 0; i < s.inner; ++i) {
                         const std::size_t k = (o * s.extent + c) * s.inner + i;
                         gx[k] += f * (self.grad[k] - sum_dy / m - xhat[k] * sum_dy_xhat / m);
                       }
                   }
                 });
}

/// Inference form: normalizes with fixed statistics.
inline Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              std::span<const double> mean_, std::span<const double> var_, std::size_t axis,
                              double eps) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (gamma.size() != s.extent || beta.size() != s.extent || mean_.size() != s.extent || var_.size() != s.extent) {
    throw ShapeError("batch_norm: parameter length does not match feature axis of " + shape_str(x.shape()));
  }
  std::vector<double> inv_std(s.extent), shift(s.extent);
  for (std::size_t c = 0; c < s.extent; ++c) {
    inv_std[c] = 1.0 / std::sqrt(var_[c] + eps);
    shift[c] = mean_[c];
  }
  std::vector<double> xhat(x.size()), out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t c = 0; c < s.extent; ++c)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t k = (o * s.extent + c) * s.inner + i;
        xhat[k] = (x[k] - shift[c]) * inv_std[c];
        out[k] = xhat[k] * gamma[c] + beta[c];
      }
  return make_op("batch_norm_eval", x.shape(), std::move(out), {x, gamma, beta},
                 [s, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                   const auto& gam = input_value(self, 1);
                   double* gx = input_grad(self, 0);
                   double* gg = input_grad(self, 1);
                   double* gb = input_grad(self, 2);
                   for (std::size_t o = 0; o < s.outer; ++o)
                     for (std::size_t c = 0; c < s.extent; ++c)
                       for (std::size_t i = 0; i < s.inner; ++i) {
                         const std::size_t k = (o * s.extent + c) * s.inner + i;
                         if (gx) gx[k] += self.grad[k] * gam[c] * inv_std[c];
                         if (gg) gg[c] += self.grad[k] * xhat[k];
                         if (gb) gb[c] += self.grad[k];
                       }
                 });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_op("reshape", std::move(shape), x.values(), {x}, [](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// Swaps the two trailing axes: (..., M, N) -> (..., N, M).
inline Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2 needs rank >= 2");
  const std::size_t m = x.shape()[x.rank() - 2];
  const std::size_t n = x.shape()[x.rank() - 1];
  const std::size_t batch = x.size() / std::max<std::size_t>(m * n, 1);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = x[b * m * n + i * n + j];
  return make_op("transpose", std::move(shape), std::move(out), {x}, [batch, m, n](detail::Node& self) {
    double* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::vector<detail::AxisSplit> splits;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.shape()[i] != ref[i]) {
        throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(ref));
      }
    }
    splits.push_back(detail::split_axis(p.shape(), axis));
    total += p.shape()[axis];
  }
  Shape shape = ref;
  shape[axis] = total;
  const std::size_t outer = splits.front().outer;
  const std::size_t inner = splits.front().inner;
  std::vector<double> out(shape_size(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t ext = splits[p].extent;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < ext; ++c)
        for (std::size_t i = 0; i < inner; ++i)
          out[(o * total + offset + c) * inner + i] = parts[p][(o * ext + c) * inner + i];
    offset += ext;
  }
  return make_op("concat", std::move(shape), std::move(out), parts,
                 [splits, outer, inner, total](detail::Node& self) {
                   std::size_t off = 0;
                   for (std::size_t p = 0; p < splits.size(); ++p) {
                     const std::size_t ext = splits[p].extent;
                     if (double* g = input_grad(self, p)) {
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t c = 0; c < ext; ++c)
                           for (std::size_t i = 0; i < inner; ++i)
                             g[(o * ext + c) * inner + i] += self.grad[(o * total + off + c) * inner + i];
                     }
                     off += ext;
                   }
                 });
}

/// Per-batch row selection: x is (B, N, D), rows[b] lists node indices to keep.
/// Every batch element must keep the same count K; the result is (B, K, D).
inline Tensor gather_rows(const Tensor& x, const std::vector<std::vector<std::size_t>>& rows) {
  detail::require_rank(x, 3, "gather_rows");
  const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (rows.size() != batch) throw ShapeError("gather_rows: index batch mismatch");
  const std::size_t k = rows.empty() ? 0 : rows.front().size();
  std::vector<double> out(batch * k * d);
  for (std::size_t b = 0; b < batch; ++b) {
    if (rows[b].size() != k) throw ShapeError("gather_rows: ragged selection");
    for (std::size_t r = 0; r < k; ++r) {
      if (rows[b][r] >= n) throw ShapeError("gather_rows: index out of range");
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((b * n + rows[b][r]) * d), d,
                  out.begin() + static_cast<std::ptrdiff_t>((b * k + r) * d));
    }
  }
  return make_op("gather_rows", Shape{batch, k, d}, std::move(out), {x}, [rows, n, k, d](detail::Node& self) {
    double* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < rows.size(); ++b)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < d; ++j) g[(b * n + rows[b][r]) * d + j] += self.grad[(b * k + r) * d + j];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// x (..., K) times w (K, N) -> (..., N).
inline Tensor matmul(const Tensor& x, const Tensor& w) {
  detail::require_rank(w, 2, "matmul weight");
  if (x.rank() < 1 || x.shape().back() != w.dim(0)) {
    throw ShapeError("matmul: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  }
  const std::size_t k = w.dim(0), n = w.dim(1);
  const std::size_t m = x.size() / std::max<std::size_t>(k, 1);
  Shape shape = x.shape();
  shape.back() = n;
  std::vector<double> out(m * n);
  detail::gemm(x.data().data(), false, w.data().data(), false, m, k, n, out.data(), false);
  return make_op("matmul", std::move(shape), std::move(out), {x, w}, [m, k, n](detail::Node& self) {
    if (double* gx = input_grad(self, 0)) {
      detail::gemm(self.grad.data(), false, input_value(self, 1).data(), true, m, n, k, gx, true);
    }
    if (double* gw = input_grad(self, 1)) {
      detail::gemm(input_value(self, 0).data(), true, self.grad.data(), false, k, m, n, gw, true);
    }
  });
}

/// Batched product: a (B, M, K) times b (B, K, N) -> (B, M, N).
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 3, "bmm");
  detail::require_rank(b, 3, "bmm");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::gemm(a.data().data() + i * m * k, false, b.data().data() + i * k * n, false, m, k, n,
                 out.data() + i * m * n, false);
  }
  return make_op("bmm", Shape{batch, m, n}, std::move(out), {a, b}, [batch, m, k, n](detail::Node& self) {
    double* ga = input_grad(self, 0);
    double* gb = input_grad(self, 1);
    const auto& av = input_value(self, 0);
    const auto& bv = input_value(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      const double* gy = self.grad.data() + i * m * n;
      if (ga) detail::gemm(gy, false, bv.data() + i * k * n, true, m, n, k, ga + i * m * k, true);
      if (gb) detail::gemm(av.data() + i * m * k, true, gy, false, k, m, n, gb + i * k * n, true);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

/// Valid 1-D correlation of each batch row of x (B, L) with each kernel row of
/// k (F, K): out[b, f, t] = sum_j x[b, t + j] * k[f, j], out is (B, F, L-K+1).
inline Tensor conv1d_bank(const Tensor& x, const Tensor& kernels) {
  detail::require_rank(x, 2, "conv1d_bank input");
  detail::require_rank(kernels, 2, "conv1d_bank kernels");
  const std::size_t batch = x.dim(0), len = x.dim(1), filters = kernels.dim(0), klen = kernels.dim(1);
  if (klen == 0 || klen > len) throw ShapeError("conv1d_bank: kernel longer than input");
  const std::size_t t_out = len - klen + 1;
  std::vector<double> out(batch * filters * t_out, 0.0);
  const double* xv = x.data().data();
  const double* kv = kernels.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t f = 0; f < filters; ++f) {
      double* o = out.data() + (b * filters + f) * t_out;
      const double* xin = xv + b * len;
      for (std::size_t j = 0; j < klen; ++j) {
        const double w = kv[f * klen + j];
        const double* xs = xin + j;
        for (std::size_t t = 0; t < t_out; ++t) o[t] += w * xs[t];
      }
    }
  return make_op("conv1d_bank", Shape{batch, filters, t_out}, std::move(out), {x, kernels},
                 [batch, len, filters, klen, t_out](detail::Node& self) {
                   const double* xv = input_value(self, 0).data();
                   const double* kv = input_value(self, 1).data();
                   double* gx = input_grad(self, 0);
                   double* gk = input_grad(self, 1);
                   for (std::size_t b = 0; b < batch; ++b)
                     for (std::size_t f = 0; f < filters; ++f) {
                       const double* gy = self.grad.data() + (b * filters + f) * t_out;
                       for (std::size_t j = 0; j < klen; ++j) {
                         if (gk) {
                           double acc = 0.0;
                           const double* xs = xv + b * len + j;
                           for (std::size_t t = 0; t < t_out; ++t) acc += gy[t] * xs[t];
                           gk[f * klen + j] += acc;
                         }
                         if (gx) {
                           const double w = kv[f * klen + j];
                           double* gxs = gx + b * len + j;
                           for (std::size_t t = 0; t < t_out; ++t) gxs[t] += w * gy[t];
                         }
                       }
                     }
                 });
}

namespace detail {

struct ConvGeom {
  std::size_t batch, in_ch, h, w, out_ch, kh, kw, pad_h, pad_w, oh, ow;
};

// col is (in_ch*kh*kw, oh*ow) for one batch element.
inline void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t u = 0; u < g.kh; ++u)
      for (std::size_t v = 0; v < g.kw; ++v) {
        double* row = col + ((c * g.kh + u) * g.kw + v) * plane;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + u) - static_cast<std::ptrdiff_t>(g.pad_h);
          double* dst = row + y * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill_n(dst, g.ow, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t xo = 0; xo < g.ow; ++xo) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo + v) - static_cast<std::ptrdiff_t>(g.pad_w);
            dst[xo] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
}

inline void col2im_add(const double* col, const ConvGeom& g, double* x) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t u = 0; u < g.kh; ++u)
      for (std::size_t v = 0; v < g.kw; ++v) {
        const double* row = col + ((c * g.kh + u) * g.kw + v) * plane;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + u) - static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + y * g.ow;
          for (std::size_t xo = 0; xo < g.ow; ++xo) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo + v) - static_cast<std::ptrdiff_t>(g.pad_w);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[xo];
          }
        }
      }
}

}  // namespace detail

/// Stride-1 2-D correlation with zero padding: x (B, C, H, W), w (O, C, kh, kw),
/// bias (O) -> (B, O, H + 2*pad_h - kh + 1, W + 2*pad_w - kw + 1).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t pad_h, std::size_t pad_w) {
  detail::require_rank(x, 4, "conv2d input");
  detail::require_rank(w, 4, "conv2d weight");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) + " vs weight " + shape_str(w.shape()));
  }
  if (bias.size() != w.dim(0)) throw ShapeError("conv2d: bias length mismatch");
  detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), pad_h, pad_w, 0, 0};
  if (g.h + 2 * pad_h < g.kh || g.w + 2 * pad_w < g.kw) throw ShapeError("conv2d: kernel larger than input");
  g.oh = g.h + 2 * pad_h - g.kh + 1;
  g.ow = g.w + 2 * pad_w - g.kw + 1;
  const std::size_t rows = g.in_ch * g.kh * g.kw;
  const std::size_t plane = g.oh * g.ow;
  std::vector<double> out(g.batch * g.out_ch * plane);
  const auto R = static_cast<Eigen::Index>(rows), P = static_cast<Eigen::Index>(plane),
             O = static_cast<Eigen::Index>(g.out_ch);
  const detail::RowMat wm = detail::ConstMapMat(w.data().data(), O, R);
  detail::RowMat col(R, P);
  for (std::size_t b = 0; b < g.batch; ++b) {
    detail::im2col(x.data().data() + b * g.in_ch * g.h * g.w, g, col.data());
    double* y = out.data() + b * g.out_ch * plane;
    detail::gemm(wm, false, col, false, y, false);
    for (std::size_t o = 0; o < g.out_ch; ++o)
      for (std::size_t p = 0; p < plane; ++p) y[o * plane + p] += bias[o];
  }
  return make_op("conv2d", Shape{g.batch, g.out_ch, g.oh, g.ow}, std::move(out), {x, w, bias},
                 [g, R, P, O](detail::Node& self) {
                   double* gx = input_grad(self, 0);
                   double* gw = input_grad(self, 1);
                   double* gb = input_grad(self, 2);
                   const double* xv = input_value(self, 0).data();
                   const detail::RowMat wm = detail::ConstMapMat(input_value(self, 1).data(), O, R);
                   const auto plane = static_cast<std::size_t>(P);
                   detail::RowMat col(R, P);
                   for (std::size_t b = 0; b < g.batch; ++b) {
                     const double* gy = self.grad.data() + b * g.out_ch * plane;
                     if (gb) {
                       for (std::size_t o = 0; o < g.out_ch; ++o) {
                         double s = 0.0;
                         for (std::size_t p = 0; p < plane; ++p) s += gy[o * plane + p];
                         gb[o] += s;
                       }
                     }
                     const detail::RowMat gym = detail::ConstMapMat(gy, O, P);
                     if (gw) {
                       detail::im2col(xv + b * g.in_ch * g.h * g.w, g, col.data());
                       detail::gemm(gym, false, col, true, gw, true);
                     }
                     if (gx) {
                       col.noalias() = wm.transpose() * gym;
                       detail::col2im_add(col.data(), g, gx + b * g.in_ch * g.h * g.w);
                     }
                   }
                 });
}

/// Non-overlapping max pooling over the two trailing axes of (B, C, H, W) with
/// window = stride = (kh, kw); trailing remainders are dropped. Ties route to
/// the first element in scan order.
inline Tensor maxpool2d(const Tensor& x, std::size_t kh, std::size_t kw) {
  detail::require_rank(x, 4, "maxpool2d");
  if (kh == 0 || kw == 0) throw ShapeError("maxpool2d: zero window");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / kh, ow = w / kw;
  if (oh == 0 || ow == 0) throw ShapeError("maxpool2d: window larger than input " + shape_str(x.shape()));
  std::vector<double> out(planes * oh * ow);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = (p * h + y * kh) * w + xo * kw;
        for (std::size_t u = 0; u < kh; ++u)
          for (std::size_t v = 0; v < kw; ++v) {
            const std::size_t k = (p * h + y * kh + u) * w + xo * kw + v;
            if (x[k] > x[best]) best = k;
          }
        const std::size_t o = (p * oh + y) * ow + xo;
        out[o] = x[best];
        arg[o] = best;
      }
  return make_op("maxpool2d", Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                 [arg = std::move(arg)](detail::Node& self) {
                   if (double* g = input_grad(self, 0)) {
                     for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
                   }
                 });
}

}  // namespace aasist
