// SPDX-License-Identifier: Apache-2.0
#include "melbench/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace melbench {
namespace {

// C[MxN] += A[MxK] * B[KxN]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = a[k];
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C[MxN] += A^T * B with A stored [KxM], B stored [KxN]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * M;
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T aki = a[i];
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += aki * b[j];
    }
  }
}

// dst[cols x rows] = src[rows x cols]^T
template <typename T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

template <typename T>
void accumulate(std::vector<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

std::string shape_pair(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b);
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw std::invalid_argument(shape_pair(op, a, b));
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
T normal_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T normal_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw std::invalid_argument(shape_pair("matmul", a.shape(), b.shape()));
  }
  const std::size_t K = b.dim(0);
  const std::size_t N = b.dim(1);
  const std::size_t M = a.numel() / K;
  Shape out_shape = a.shape();
  out_shape.back() = N;
  Tensor<T> out(out_shape);
  gemm_nn(M, N, K, a.data().data(), b.data().data(), out.mutable_data().data());

  auto ai = a.impl();
  auto bi = b.impl();
  detail::record<T>(out, "matmul", {&a, &b}, [ai, bi, M, N, K](std::span<const T> g) {
    if (ai->requires_grad) {
      std::vector<T> bt(K * N);
      transpose_into(K, N, bi->data.data(), bt.data());
      gemm_nn(M, K, N, g.data(), bt.data(), ai->grad_buffer().data());
    }
    if (bi->requires_grad) gemm_tn(K, N, M, ai->data.data(), g.data(), bi->grad_buffer().data());
  });
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument(shape_pair("bmm", a.shape(), b.shape()));
  }
  const std::size_t B = a.dim(0);
  const std::size_t M = a.dim(1);
  const std::size_t K = a.dim(2);
  const std::size_t N = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != K) {
    throw std::invalid_argument(shape_pair("bmm", a.shape(), b.shape()));
  }
  Tensor<T> out(Shape{B, M, N});
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  T* od = out.mutable_data().data();
  std::vector<T> scratch(K * N);
  for (std::size_t s = 0; s < B; ++s) {
    const T* bs = bd + s * K * N;
    if (transpose_b) {
      transpose_into(N, K, bs, scratch.data());
      bs = scratch.data();
    }
    gemm_nn(M, N, K, ad + s * M * K, bs, od + s * M * N);
  }

  auto ai = a.impl();
  auto bi = b.impl();
  detail::record<T>(out, "bmm", {&a, &b}, [ai, bi, B, M, N, K, transpose_b](std::span<const T> g) {
    std::vector<T> tmp(K * N);
    for (std::size_t s = 0; s < B; ++s) {
      const T* gs = g.data() + s * M * N;
      const T* as = ai->data.data() + s * M * K;
      const T* bs = bi->data.data() + s * K * N;
      if (ai->requires_grad) {
        T* da = ai->grad_buffer().data() + s * M * K;
        if (transpose_b) {
          gemm_nn(M, K, N, gs, bs, da);  // dA = dC * B, B stored [N x K]
        } else {
          transpose_into(K, N, bs, tmp.data());
          gemm_nn(M, K, N, gs, tmp.data(), da);
        }
      }
      if (bi->requires_grad) {
        T* db = bi->grad_buffer().data() + s * K * N;
        if (transpose_b) {
          gemm_tn(N, K, M, gs, as, db);  // dB = dC^T * A
        } else {
          gemm_tn(K, N, M, as, gs, db);  // dB = A^T * dC
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() < 2) throw std::invalid_argument("transpose needs rank >= 2, got " + to_string(a.shape()));
  const std::size_t R = a.shape()[a.rank() - 2];
  const std::size_t C = a.shape().back();
  const std::size_t batch = a.numel() / (R * C);
  Shape out_shape = a.shape();
  std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
  Tensor<T> out(out_shape);
  for (std::size_t s = 0; s < batch; ++s) {
    transpose_into(R, C, a.data().data() + s * R * C, out.mutable_data().data() + s * R * C);
  }
  auto ai = a.impl();
  detail::record<T>(out, "transpose", {&a}, [ai, R, C, batch](std::span<const T> g) {
    std::vector<T>& da = ai->grad_buffer();
    for (std::size_t s = 0; s < batch; ++s) {
      const T* gs = g.data() + s * R * C;
      T* ds = da.data() + s * R * C;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t r = 0; r < R; ++r) ds[r * C + c] += gs[c * R + r];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  std::vector<T> values(a.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.data()[i] + b.data()[i];
  Tensor<T> out(a.shape(), std::move(values));
  auto ai = a.impl();
  auto bi = b.impl();
  detail::record<T>(out, "add", {&a, &b}, [ai, bi](std::span<const T> g) {
    if (ai->requires_grad) accumulate(ai->grad_buffer(), g);
    if (bi->requires_grad) accumulate(bi->grad_buffer(), g);
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  std::vector<T> values(a.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.data()[i] - b.data()[i];
  Tensor<T> out(a.shape(), std::move(values));
  auto ai = a.impl();
  auto bi = b.impl();
  detail::record<T>(out, "sub", {&a, &b}, [ai, bi](std::span<const T> g) {
    if (ai->requires_grad) accumulate(ai->grad_buffer(), g);
    if (bi->requires_grad) {
      auto& db = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  std::vector<T> values(a.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.data()[i] * b.data()[i];
  Tensor<T> out(a.shape(), std::move(values));
  auto ai = a.impl();
  auto bi = b.impl();
  detail::record<T>(out, "mul", {&a, &b}, [ai, bi](std::span<const T> g) {
    if (ai->requires_grad) {
      auto& da = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& db = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * ai->data[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> values(a.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.data()[i] * factor;
  Tensor<T> out(a.shape(), std::move(values));
  auto ai = a.impl();
  detail::record<T>(out, "scale", {&a}, [ai, factor](std::span<const T> g) {
    auto& da = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * factor;
  });
  return out;
}

template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - ys.size())) {
    throw std::invalid_argument(shape_pair("add_broadcast", xs, ys));
  }
  const std::size_t tail = y.numel();
  const std::size_t reps = x.numel() / tail;
  std::vector<T> values(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < reps; ++r) {
    T* row = values.data() + r * tail;
    for (std::size_t j = 0; j < tail; ++j) row[j] += y.data()[j];
  }
  Tensor<T> out(xs, std::move(values));
  auto xi = x.impl();
  auto yi = y.impl();
  detail::record<T>(out, "add_broadcast", {&x, &y}, [xi, yi, tail, reps](std::span<const T> g) {
    if (xi->requires_grad) accumulate(xi->grad_buffer(), g);
    if (yi->requires_grad) {
      auto& dy = yi->grad_buffer();
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t j = 0; j < tail; ++j) dy[j] += g[r * tail + j];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> values(x.numel());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T v = x.data()[i];
    values[i] = v * normal_cdf(v);
  }
  Tensor<T> out(x.shape(), std::move(values));
  auto xi = x.impl();
  detail::record<T>(out, "gelu", {&x}, [xi](std::span<const T> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xi->data[i];
      dx[i] += g[i] * (normal_cdf(v) + v * normal_pdf(v));
    }
  });
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw std::out_of_range("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                            to_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<T> y(x.numel());
  const T* xd = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T peak = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) peak = std::max(peak, xd[base + k * s.inner]);
      T total = 0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const T e = std::exp(xd[base + k * s.inner] - peak);
        y[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) y[base + k * s.inner] /= total;
    }
  }
  Tensor<T> out(x.shape(), std::move(y));
  auto xi = x.impl();
  // Capturing the output impl would form a cycle; keep a copy of y instead.
  std::vector<T> saved(out.data().begin(), out.data().end());
  detail::record<T>(out, "softmax", {&x}, [xi, s, saved = std::move(saved)](std::span<const T> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T dot = 0;
        for (std::size_t k = 0; k < s.extent; ++k) {
          dot += g[base + k * s.inner] * saved[base + k * s.inner];
        }
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          dx[idx] += saved[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw std::invalid_argument(shape_pair("reshape", x.shape(), shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  auto xi = x.impl();
  detail::record<T>(out, "reshape", {&x}, [xi](std::span<const T> g) {
    accumulate(xi->grad_buffer(), g);
  });
  return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.rank() < 2) return reshape(x, Shape{1, x.numel()});
  return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw std::out_of_range("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) throw std::invalid_argument(shape_pair("concat", first, probe));
    probe[axis] = first[axis];
    if (probe != first) throw std::invalid_argument(shape_pair("concat", first, p.shape()));
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<T> values(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.dim(axis) * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data().data() + o * block, block,
                  values.data() + o * s.extent * s.inner + offset);
    }
    offset += block;
  }
  Tensor<T> out(out_shape, std::move(values));
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
  std::vector<std::size_t> blocks;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    blocks.push_back(p.dim(axis) * s.inner);
  }
  detail::record<T>(out, "concat", parts, [impls, blocks, offsets, s](std::span<const T> g) {
    for (std::size_t i = 0; i < impls.size(); ++i) {
      if (!impls[i]->requires_grad) continue;
      auto& d = impls[i]->grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o) {
        const T* src = g.data() + o * s.extent * s.inner + offsets[i];
        T* dst = d.data() + o * blocks[i];
        for (std::size_t j = 0; j < blocks[i]; ++j) dst[j] += src[j];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank()) throw std::out_of_range("narrow: axis out of range");
  if (length == 0 || start + length > x.dim(axis)) {
    throw std::out_of_range("narrow: [" + std::to_string(start) + ", " +
                            std::to_string(start + length) + ") outside axis of extent " +
                            std::to_string(x.dim(axis)));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t block = length * s.inner;
  const std::size_t skip = start * s.inner;
  std::vector<T> values(numel(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().data() + o * s.extent * s.inner + skip, block, values.data() + o * block);
  }
  Tensor<T> out(out_shape, std::move(values));
  auto xi = x.impl();
  detail::record<T>(out, "narrow", {&x}, [xi, s, block, skip](std::span<const T> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = dx.data() + o * s.extent * s.inner + skip;
      const T* src = g.data() + o * block;
      for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> repeat_batch(const Tensor<T>& x, std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("repeat_batch: batch must be positive");
  Shape out_shape{batch};
  out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t n = x.numel();
  std::vector<T> values(batch * n);
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(x.data().data(), n, values.data() + b * n);
  Tensor<T> out(out_shape, std::move(values));
  auto xi = x.impl();
  detail::record<T>(out, "repeat_batch", {&x}, [xi, batch, n](std::span<const T> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < n; ++j) dx[j] += g[b * n + j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  auto xi = x.impl();
  detail::record<T>(out, "sum", {&x}, [xi](std::span<const T> g) {
    auto& dx = xi->grad_buffer();
    for (auto& d : dx) d += g[0];
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw std::invalid_argument(shape_pair("conv2d", x.shape(), w.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(C) +
                                " channels but weight " + to_string(w.shape()) + " expects " +
                                std::to_string(w.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != F) {
    throw std::invalid_argument(shape_pair("conv2d bias", w.shape(), bias.shape()));
  }
  if (kh > H + 2 * pad || kw > W + 2 * pad) {
    throw std::invalid_argument(shape_pair("conv2d kernel larger than padded input", x.shape(), w.shape()));
  }
  const std::size_t Ho = H + 2 * pad - kh + 1;
  const std::size_t Wo = W + 2 * pad - kw + 1;
  const std::size_t P = Ho * Wo;
  const std::size_t CK = C * kh * kw;

  // im2col for every batch element; kept for the weight gradient.
  std::vector<T> cols(B * CK * P, T(0));
  const T* xd = x.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    T* cb = cols.data() + b * CK * P;
    for (std::size_t c = 0; c < C; ++c) {
      const T* plane = xd + (b * C + c) * H * W;
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          T* row = cb + ((c * kh + i) * kw + j) * P;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + i) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + j) - static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              row[oy * Wo + ox] = plane[iy * W + ix];
            }
          }
        }
      }
    }
  }

  Tensor<T> out(Shape{B, F, Ho, Wo});
  T* od = out.mutable_data().data();
  for (std::size_t b = 0; b < B; ++b) {
    T* ob = od + b * F * P;
    for (std::size_t f = 0; f < F; ++f) std::fill_n(ob + f * P, P, bias.data()[f]);
    gemm_nn(F, P, CK, w.data().data(), cols.data() + b * CK * P, ob);
  }

  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = bias.impl();
  detail::record<T>(out, "conv2d", {&x, &w, &bias},
                    [xi, wi, bi, cols = std::move(cols), B, C, H, W, F, kh, kw, pad, Ho, Wo, P,
                     CK](std::span<const T> g) {
    if (bi->requires_grad) {
      auto& db = bi->grad_buffer();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t f = 0; f < F; ++f) {
          const T* gp = g.data() + (b * F + f) * P;
          T acc = 0;
          for (std::size_t p = 0; p < P; ++p) acc += gp[p];
          db[f] += acc;
        }
      }
    }
    if (wi->requires_grad) {
      auto& dw = wi->grad_buffer();
      std::vector<T> colsT(P * CK);
      for (std::size_t b = 0; b < B; ++b) {
        transpose_into(CK, P, cols.data() + b * CK * P, colsT.data());
        gemm_nn(F, CK, P, g.data() + b * F * P, colsT.data(), dw.data());
      }
    }
    if (xi->requires_grad) {
      auto& dx = xi->grad_buffer();
      std::vector<T> dcols(CK * P);
      for (std::size_t b = 0; b < B; ++b) {
        std::fill(dcols.begin(), dcols.end(), T(0));
        gemm_tn(CK, P, F, wi->data.data(), g.data() + b * F * P, dcols.data());
        for (std::size_t c = 0; c < C; ++c) {
          T* plane = dx.data() + (b * C + c) * H * W;
          for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
              const T* row = dcols.data() + ((c * kh + i) * kw + j) * P;
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + i) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + j) - static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                  plane[iy * W + ix] += row[oy * Wo + ox];
                }
              }
            }
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k) {
  if (x.rank() < 2 || k == 0) throw std::invalid_argument("maxpool2d: bad input " + to_string(x.shape()));
  const std::size_t H = x.shape()[x.rank() - 2];
  const std::size_t W = x.shape().back();
  if (H < k || W < k) {
    throw std::invalid_argument("maxpool2d: spatial extents of " + to_string(x.shape()) +
                                " smaller than window " + std::to_string(k));
  }
  const std::size_t Ho = H / k, Wo = W / k;
  const std::size_t planes = x.numel() / (H * W);
  Shape out_shape = x.shape();
  out_shape[x.rank() - 2] = Ho;
  out_shape[x.rank() - 1] = Wo;
  std::vector<T> values(planes * Ho * Wo);
  std::vector<std::size_t> argmax(values.size());
  const T* xd = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* plane = xd + p * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (oy * k) * W + ox * k;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = (oy * k + i) * W + ox * k + j;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const std::size_t o = (p * Ho + oy) * Wo + ox;
        values[o] = plane[best];
        argmax[o] = p * H * W + best;
      }
    }
  }
  Tensor<T> out(out_shape, std::move(values));
  auto xi = x.impl();
  detail::record<T>(out, "maxpool2d", {&x}, [xi, argmax = std::move(argmax)](std::span<const T> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
  });
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, bool training) {
  if (x.rank() < 2) throw std::invalid_argument("batch_norm: needs [B, C, ...], got " + to_string(x.shape()));
  const std::size_t B = x.dim(0);
  const std::size_t C = x.dim(1);
  const std::size_t S = x.numel() / (B * C);
  if (gamma.numel() != C || beta.numel() != C || stats.mean.numel() != C || stats.var.numel() != C) {
    throw std::invalid_argument(shape_pair("batch_norm parameters", x.shape(), gamma.shape()));
  }
  if (training && B < 2) {
    throw std::invalid_argument("batch_norm: training mode needs a batch of at least 2, got " +
                                std::to_string(B));
  }
  const T eps = static_cast<T>(kBatchNormEps);
  const T momentum = static_cast<T>(kBatchNormMomentum);
  const std::size_t N = B * S;
  std::vector<T> mu(C), inv_std(C);
  const T* xd = x.data().data();
  if (training) {
    auto rm = stats.mean.mutable_data();
    auto rv = stats.var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      T acc = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xd + (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) acc += p[s];
      }
      const T m = acc / static_cast<T>(N);
      T sq = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xd + (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) sq += (p[s] - m) * (p[s] - m);
      }
      const T var = sq / static_cast<T>(N);
      mu[c] = m;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      rm[c] = (T(1) - momentum) * rm[c] + momentum * m;
      rv[c] = (T(1) - momentum) * rv[c] + momentum * (sq / static_cast<T>(N - 1));
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.mean.data()[c];
      inv_std[c] = T(1) / std::sqrt(stats.var.data()[c] + eps);
    }
  }

  std::vector<T> xhat(x.numel());
  std::vector<T> y(x.numel());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) {
        const T h = (xd[base + s] - mu[c]) * inv_std[c];
        xhat[base + s] = h;
        y[base + s] = gamma.data()[c] * h + beta.data()[c];
      }
    }
  }
  Tensor<T> out(x.shape(), std::move(y));
  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  detail::record<T>(out, "batch_norm", {&x, &gamma, &beta},
                    [xi, gi, bi, xhat = std::move(xhat), inv_std, B, C, S, N,
                     training](std::span<const T> g) {
    std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (b * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) {
          sum_g[c] += g[base + s];
          sum_gx[c] += g[base + s] * xhat[base + s];
        }
      }
    }
    if (gi->requires_grad) {
      auto& dg = gi->grad_buffer();
      for (std::size_t c = 0; c < C; ++c) dg[c] += sum_gx[c];
    }
    if (bi->requires_grad) {
      auto& db = bi->grad_buffer();
      for (std::size_t c = 0; c < C; ++c) db[c] += sum_g[c];
    }
    if (xi->requires_grad) {
      auto& dx = xi->grad_buffer();
      const T n = static_cast<T>(N);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
          const T k = gi->data[c] * inv_std[c];
          const std::size_t base = (b * C + c) * S;
          for (std::size_t s = 0; s < S; ++s) {
            if (training) {
              dx[base + s] += k * (g[base + s] - sum_g[c] / n - xhat[base + s] * sum_gx[c] / n);
            } else {
              dx[base + s] += k * g[base + s];
            }
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  const std::size_t D = x.shape().back();
  if (gamma.numel() != D || beta.numel() != D) {
    throw std::invalid_argument(shape_pair("layer_norm", x.shape(), gamma.shape()));
  }
  const std::size_t rows = x.numel() / D;
  std::vector<T> xhat(x.numel()), y(x.numel()), inv_std(rows);
  const T* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = xd + r * D;
    T m = 0;
    for (std::size_t j = 0; j < D; ++j) m += p[j];
    m /= static_cast<T>(D);
    T v = 0;
    for (std::size_t j = 0; j < D; ++j) v += (p[j] - m) * (p[j] - m);
    v /= static_cast<T>(D);
    inv_std[r] = T(1) / std::sqrt(v + static_cast<T>(eps));
    for (std::size_t j = 0; j < D; ++j) {
      xhat[r * D + j] = (p[j] - m) * inv_std[r];
      y[r * D + j] = gamma.data()[j] * xhat[r * D + j] + beta.data()[j];
    }
  }
  Tensor<T> out(x.shape(), std::move(y));
  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  detail::record<T>(out, "layer_norm", {&x, &gamma, &beta},
                    [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                     D](std::span<const T> g) {
    if (gi->requires_grad) {
      auto& dg = gi->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < D; ++j) dg[j] += g[r * D + j] * xhat[r * D + j];
      }
    }
    if (bi->requires_grad) {
      auto& db = bi->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < D; ++j) db[j] += g[r * D + j];
      }
    }
    if (xi->requires_grad) {
      auto& dx = xi->grad_buffer();
      const T n = static_cast<T>(D);
      for (std::size_t r = 0; r < rows; ++r) {
        T sum_g = 0, sum_gx = 0;
        for (std::size_t j = 0; j < D; ++j) {
          const T gh = g[r * D + j] * gi->data[j];
          sum_g += gh;
          sum_gx += gh * xhat[r * D + j];
        }
        for (std::size_t j = 0; j < D; ++j) {
          const T gh = g[r * D + j] * gi->data[j];
          dx[r * D + j] += inv_std[r] * (gh - sum_g / n - xhat[r * D + j] * sum_gx / n);
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0) || p >= 1.0) {
    throw std::invalid_argument("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  std::vector<T> values(x.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = x.data()[i] * mask[i];
  Tensor<T> out(x.shape(), std::move(values));
  auto xi = x.impl();
  detail::record<T>(out, "dropout", {&x}, [xi, mask = std::move(mask)](std::span<const T> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
  });
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw std::invalid_argument("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0);
  const std::size_t C = logits.dim(1);
  std::vector<T> probs(B * C);
  T total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= C) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[b]) +
                              " out of range for " + std::to_string(C) + " classes");
    }
    const T* row = logits.data().data() + b * C;
    const T peak = *std::max_element(row, row + C);
    T z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - peak);
    const T lse = peak + std::log(z);
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] = std::exp(row[c] - lse);
    total += lse - row[labels[b]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(B));
  auto li = logits.impl();
  std::vector<int> lab(labels.begin(), labels.end());
  detail::record<T>(out, "cross_entropy", {&logits},
                    [li, probs = std::move(probs), lab = std::move(lab), B, C](std::span<const T> g) {
    auto& dl = li->grad_buffer();
    const T k = g[0] / static_cast<T>(B);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        const T target = static_cast<std::size_t>(lab[b]) == c ? T(1) : T(0);
        dl[b * C + c] += k * (probs[b * C + c] - target);
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const int> labels) {
  const bool ok_shape = (logits.rank() == 1) || (logits.rank() == 2 && logits.dim(1) == 1);
  if (!ok_shape || logits.dim(0) != labels.size()) {
    throw std::invalid_argument("bce_with_logits: logits " + to_string(logits.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = labels.size();
  T total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] != 0 && labels[b] != 1) {
      throw std::out_of_range("bce_with_logits: label " + std::to_string(labels[b]) + " not in {0, 1}");
    }
    const T x = logits.data()[b];
    total += std::max(x, T(0)) - x * static_cast<T>(labels[b]) + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(B));
  auto li = logits.impl();
  std::vector<int> lab(labels.begin(), labels.end());
  detail::record<T>(out, "bce_with_logits", {&logits}, [li, lab = std::move(lab), B](std::span<const T> g) {
    auto& dl = li->grad_buffer();
    const T k = g[0] / static_cast<T>(B);
    for (std::size_t b = 0; b < B; ++b) {
      const T sig = T(1) / (T(1) + std::exp(-li->data[b]));
      dl[b] += k * (sig - static_cast<T>(lab[b]));
    }
  });
  return out;
}

#define MELBENCH_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> add_broadcast(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> gelu(const Tensor<T>&);                                                    \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> flatten(const Tensor<T>&);                                                 \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                        \
  template Tensor<T> narrow(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> repeat_batch(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t); \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                RunningStats<T>&, bool);                                        \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);  \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);                             \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                     \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const int>);

MELBENCH_INSTANTIATE_OPS(float)
MELBENCH_INSTANTIATE_OPS(double)

}  // namespace melbench
