#ifndef MICRONET_OPS_HPP
#define MICRONET_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "micronet/errors.hpp"
#include "micronet/gemm.hpp"
#include "micronet/tensor.hpp"

namespace micronet {

enum class Padding { Same, Valid };

// Stride is fixed at 1 for plain convolutions; no bias term anywhere.
template <typename T>
struct ConvParams {
  Tensor<T> kernel;  // (C_out, C_in, k_h, k_w)
  int dilation = 1;
  int stride = 1;
  Padding padding = Padding::Same;
};

namespace detail {

struct ConvGeometry {
  int64_t out_h, out_w;
  int64_t pad_top, pad_left;
};

template <typename T>
inline ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel, int dilation,
                                  Padding padding, int stride) {
  if (dilation < 1) throw ParamError("dilation must be >= 1, got " + std::to_string(dilation));
  if (stride != 1) throw ParamError("conv2d supports stride 1 only");
  if (input.c() != kernel.c()) {
    throw ShapeError("channel axis mismatch: input C=" + std::to_string(input.c()) +
                     " vs kernel C_in=" + std::to_string(kernel.c()));
  }
  const int64_t eff_h = (kernel.h() - 1) * dilation;
  const int64_t eff_w = (kernel.w() - 1) * dilation;
  ConvGeometry g{};
  if (padding == Padding::Same) {
    // Symmetric zero padding; the odd extra pixel (never hit by 1x1/3x3
    // kernels) goes bottom/right.
    g.pad_top = eff_h / 2;
    g.pad_left = eff_w / 2;
    g.out_h = input.h();
    g.out_w = input.w();
  } else {
    g.pad_top = 0;
    g.pad_left = 0;
    g.out_h = input.h() - eff_h;
    g.out_w = input.w() - eff_w;
    if (g.out_h < 1) {
      throw ShapeError("height axis too small: effective kernel " + std::to_string(eff_h + 1) +
                       " exceeds input H=" + std::to_string(input.h()));
    }
    if (g.out_w < 1) {
      throw ShapeError("width axis too small: effective kernel " + std::to_string(eff_w + 1) +
                       " exceeds input W=" + std::to_string(input.w()));
    }
  }
  return g;
}

// Gathers one image into a (C_in*k_h*k_w) x (out_h*out_w) column matrix.
template <typename T>
inline void im2col(const T* img, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
                   int dilation, const ConvGeometry& g, T* col) {
  const int64_t out_hw = g.out_h * g.out_w;
  for (int64_t c = 0; c < c_in; ++c) {
    const T* plane = img + c * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * out_hw;
        const int64_t dj = kj * dilation - g.pad_left;
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t ih = oh + ki * dilation - g.pad_top;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + g.out_w, T{});
            continue;
          }
          // Valid output columns: 0 <= ow + dj < w.
          const int64_t ow_lo = std::max<int64_t>(0, -dj);
          const int64_t ow_hi = std::min<int64_t>(g.out_w, w - dj);
          if (ow_lo > 0) std::fill(dst, dst + ow_lo, T{});
          if (ow_hi > ow_lo) {
            std::copy(plane + ih * w + ow_lo + dj, plane + ih * w + ow_hi + dj, dst + ow_lo);
          }
          if (ow_hi < g.out_w) std::fill(dst + std::max(ow_hi, ow_lo), dst + g.out_w, T{});
        }
      }
    }
  }
}

// Scatter-add of a column matrix back into an image (adjoint of im2col).
template <typename T>
inline void col2im_add(const T* col, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
                       int dilation, const ConvGeometry& g, T* img) {
  const int64_t out_hw = g.out_h * g.out_w;
  for (int64_t c = 0; c < c_in; ++c) {
    T* plane = img + c * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * out_hw;
        const int64_t dj = kj * dilation - g.pad_left;
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t ih = oh + ki * dilation - g.pad_top;
          if (ih < 0 || ih >= h) continue;
          const int64_t ow_lo = std::max<int64_t>(0, -dj);
          const int64_t ow_hi = std::min<int64_t>(g.out_w, w - dj);
          const T* src = row + oh * g.out_w;
          T* dst = plane + ih * w + dj;
          for (int64_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow] += src[ow];
        }
      }
    }
  }
}

}  // namespace detail

// Dilated cross-correlation, stride 1, no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int dilation = 1,
                 Padding padding = Padding::Same) {
  const auto g = detail::conv_geometry(input, kernel, dilation, padding, 1);
  const int64_t c_out = kernel.n();
  const int64_t ckk = kernel.c() * kernel.h() * kernel.w();
  const int64_t out_hw = g.out_h * g.out_w;
  Tensor<T> out(input.n(), c_out, g.out_h, g.out_w);
  const bool is_1x1 = kernel.h() == 1 && kernel.w() == 1 && padding == Padding::Same;
  std::vector<T> col;
  if (!is_1x1) col.resize(static_cast<size_t>(ckk * out_hw));
  for (int64_t n = 0; n < input.n(); ++n) {
    const T* img = input.data() + n * input.c() * input.h() * input.w();
    const T* rhs = img;
    if (!is_1x1) {
      detail::im2col(img, input.c(), input.h(), input.w(), kernel.h(), kernel.w(), dilation, g,
                     col.data());
      rhs = col.data();
    }
    gemm(false, false, static_cast<int>(c_out), static_cast<int>(out_hw), static_cast<int>(ckk),
         T{1}, kernel.data(), static_cast<int>(ckk), rhs, static_cast<int>(out_hw), T{0},
         out.data() + n * c_out * out_hw, static_cast<int>(out_hw));
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params) {
  return conv2d(input, params.kernel, params.dilation, params.padding);
}

template <typename T>
struct ConvGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_kernel;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, int dilation,
                             Padding padding, const Tensor<T>& grad_out) {
  const auto g = detail::conv_geometry(input, kernel, dilation, padding, 1);
  if (grad_out.n() != input.n() || grad_out.c() != kernel.n() || grad_out.h() != g.out_h ||
      grad_out.w() != g.out_w) {
    throw ShapeError("grad_out shape does not match conv2d output");
  }
  const int64_t c_out = kernel.n();
  const int64_t ckk = kernel.c() * kernel.h() * kernel.w();
  const int64_t out_hw = g.out_h * g.out_w;
  const bool is_1x1 = kernel.h() == 1 && kernel.w() == 1 && padding == Padding::Same;
  ConvGrads<T> grads{Tensor<T>::zeros_like(input), Tensor<T>::zeros_like(kernel)};
  std::vector<T> col;
  std::vector<T> colgrad;
  if (!is_1x1) {
    col.resize(static_cast<size_t>(ckk * out_hw));
    colgrad.resize(static_cast<size_t>(ckk * out_hw));
  }
  for (int64_t n = 0; n < input.n(); ++n) {
    const T* img = input.data() + n * input.c() * input.h() * input.w();
    const T* gout = grad_out.data() + n * c_out * out_hw;
    const T* rhs = img;
    if (!is_1x1) {
      detail::im2col(img, input.c(), input.h(), input.w(), kernel.h(), kernel.w(), dilation, g,
                     col.data());
      rhs = col.data();
    }
    // dK += gout * col^T
    gemm(false, true, static_cast<int>(c_out), static_cast<int>(ckk), static_cast<int>(out_hw),
         T{1}, gout, static_cast<int>(out_hw), rhs, static_cast<int>(out_hw), T{1},
         grads.grad_kernel.data(), static_cast<int>(ckk));
    // dcol = K^T * gout, then scatter back.
    T* gin = grads.grad_input.data() + n * input.c() * input.h() * input.w();
    T* dcol = is_1x1 ? gin : colgrad.data();
    gemm(true, false, static_cast<int>(ckk), static_cast<int>(out_hw), static_cast<int>(c_out),
         T{1}, kernel.data(), static_cast<int>(ckk), gout, static_cast<int>(out_hw), T{0}, dcol,
         static_cast<int>(out_hw));
    if (!is_1x1) {
      detail::col2im_add(dcol, input.c(), input.h(), input.w(), kernel.h(), kernel.w(), dilation,
                         g, gin);
    }
  }
  return grads;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out) {
  return conv2d_backward(input, params.kernel, params.dilation, params.padding, grad_out);
}

// Transposed convolution, kernel (C_in, C_out, 2, 2), stride 2: the adjoint of
// a stride-2 2x2 convolution. Output spatial dims are exactly doubled; every
// output position receives exactly one kernel tap, so no accumulation overlap.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel) {
  if (kernel.h() != 2 || kernel.w() != 2) throw ParamError("conv_transpose2d kernel must be 2x2");
  if (input.c() != kernel.n()) {
    throw ShapeError("channel axis mismatch: input C=" + std::to_string(input.c()) +
                     " vs kernel C_in=" + std::to_string(kernel.n()));
  }
  const int64_t c_in = kernel.n(), c_out = kernel.c();
  const int64_t h = input.h(), w = input.w(), hw = h * w;
  Tensor<T> out(input.n(), c_out, 2 * h, 2 * w);
  // col = A^T * x with A = kernel viewed as (C_in) x (C_out*4).
  std::vector<T> col(static_cast<size_t>(c_out * 4 * hw));
  for (int64_t n = 0; n < input.n(); ++n) {
    const T* x = input.data() + n * c_in * hw;
    gemm(true, false, static_cast<int>(c_out * 4), static_cast<int>(hw), static_cast<int>(c_in),
         T{1}, kernel.data(), static_cast<int>(c_out * 4), x, static_cast<int>(hw), T{0},
         col.data(), static_cast<int>(hw));
    T* o = out.data() + n * c_out * 4 * hw;
    for (int64_t co = 0; co < c_out; ++co) {
      for (int64_t di = 0; di < 2; ++di) {
        for (int64_t dj = 0; dj < 2; ++dj) {
          const T* src = col.data() + ((co * 2 + di) * 2 + dj) * hw;
          T* plane = o + co * 4 * hw;
          for (int64_t i = 0; i < h; ++i) {
            T* row = plane + (2 * i + di) * 2 * w + dj;
            const T* s = src + i * w;
            for (int64_t j = 0; j < w; ++j) row[2 * j] = s[j];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                                       const Tensor<T>& grad_out) {
  const int64_t c_in = kernel.n(), c_out = kernel.c();
  const int64_t h = input.h(), w = input.w(), hw = h * w;
  if (grad_out.n() != input.n() || grad_out.c() != c_out || grad_out.h() != 2 * h ||
      grad_out.w() != 2 * w) {
    throw ShapeError("grad_out shape does not match conv_transpose2d output");
  }
  ConvGrads<T> grads{Tensor<T>::zeros_like(input), Tensor<T>::zeros_like(kernel)};
  std::vector<T> gcol(static_cast<size_t>(c_out * 4 * hw));
  for (int64_t n = 0; n < input.n(); ++n) {
    const T* go = grad_out.data() + n * c_out * 4 * hw;
    for (int64_t co = 0; co < c_out; ++co) {
      for (int64_t di = 0; di < 2; ++di) {
        for (int64_t dj = 0; dj < 2; ++dj) {
          T* dst = gcol.data() + ((co * 2 + di) * 2 + dj) * hw;
          const T* plane = go + co * 4 * hw;
          for (int64_t i = 0; i < h; ++i) {
            const T* row = plane + (2 * i + di) * 2 * w + dj;
            T* d = dst + i * w;
            for (int64_t j = 0; j < w; ++j) d[j] = row[2 * j];
          }
        }
      }
    }
    const T* x = input.data() + n * c_in * hw;
    // dA += x * gcol^T; dx = A * gcol.
    gemm(false, true, static_cast<int>(c_in), static_cast<int>(c_out * 4), static_cast<int>(hw),
         T{1}, x, static_cast<int>(hw), gcol.data(), static_cast<int>(hw), T{1},
         grads.grad_kernel.data(), static_cast<int>(c_out * 4));
    gemm(false, false, static_cast<int>(c_in), static_cast<int>(hw), static_cast<int>(c_out * 4),
         T{1}, kernel.data(), static_cast<int>(c_out * 4), gcol.data(), static_cast<int>(hw),
         T{0}, grads.grad_input.data() + n * c_in * hw, static_cast<int>(hw));
  }
  return grads;
}

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  // Flat spatial input index (h*W + w) of the max, per output element,
  // in output order. Ties break to the first element in row-major order.
  std::vector<int32_t> argmax;
};

template <typename T>
MaxPoolResult<T> maxpool2d(const Tensor<T>& input) {
  if (input.h() % 2 != 0) {
    throw ShapeError("maxpool2d: height axis must be even, got " + std::to_string(input.h()));
  }
  if (input.w() % 2 != 0) {
    throw ShapeError("maxpool2d: width axis must be even, got " + std::to_string(input.w()));
  }
  const int64_t oh = input.h() / 2, ow = input.w() / 2;
  MaxPoolResult<T> res{Tensor<T>(input.n(), input.c(), oh, ow), {}};
  res.argmax.resize(static_cast<size_t>(res.output.size()));
  const int64_t h = input.h(), w = input.w();
  int64_t oi = 0;
  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t c = 0; c < input.c(); ++c) {
      const T* plane = input.data() + (n * input.c() + c) * h * w;
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j, ++oi) {
          int64_t best = (2 * i) * w + 2 * j;
          T bv = plane[best];
          const int64_t cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                   (2 * i + 1) * w + 2 * j + 1};
          for (int64_t idx : cand) {
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          }
          res.output[oi] = bv;
          res.argmax[oi] = static_cast<int32_t>(best);
        }
      }
    }
  }
  return res;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const std::vector<int32_t>& argmax,
                             int64_t in_h, int64_t in_w) {
  Tensor<T> grad_in(grad_out.n(), grad_out.c(), in_h, in_w);
  int64_t oi = 0;
  for (int64_t n = 0; n < grad_out.n(); ++n) {
    for (int64_t c = 0; c < grad_out.c(); ++c) {
      T* plane = grad_in.data() + (n * grad_in.c() + c) * in_h * in_w;
      const int64_t cnt = grad_out.h() * grad_out.w();
      for (int64_t k = 0; k < cnt; ++k, ++oi) plane[argmax[oi]] += grad_out[oi];
    }
  }
  return grad_in;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > T{0} ? out[i] : T{0};
  return out;
}

// Subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (!input.same_shape(grad_out)) throw ShapeError("relu_backward: shape mismatch");
  Tensor<T> grad_in = Tensor<T>::zeros_like(input);
  for (int64_t i = 0; i < input.size(); ++i) {
    if (input[i] > T{0}) grad_in[i] = grad_out[i];
  }
  return grad_in;
}

// Per-pixel softmax over the channel axis, stabilized by the channel max.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input) {
  Tensor<T> out = Tensor<T>::zeros_like(input);
  const int64_t c = input.c(), hw = input.h() * input.w();
  for (int64_t n = 0; n < input.n(); ++n) {
    const T* in = input.data() + n * c * hw;
    T* o = out.data() + n * c * hw;
    for (int64_t p = 0; p < hw; ++p) {
      T mx = in[p];
      for (int64_t ch = 1; ch < c; ++ch) mx = std::max(mx, in[ch * hw + p]);
      T sum{};
      for (int64_t ch = 0; ch < c; ++ch) {
        T e = std::exp(in[ch * hw + p] - mx);
        o[ch * hw + p] = e;
        sum += e;
      }
      for (int64_t ch = 0; ch < c; ++ch) o[ch * hw + p] /= sum;
    }
  }
  return out;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_out) {
  if (!probs.same_shape(grad_out)) throw ShapeError("softmax_backward: shape mismatch");
  Tensor<T> grad_in = Tensor<T>::zeros_like(probs);
  const int64_t c = probs.c(), hw = probs.h() * probs.w();
  for (int64_t n = 0; n < probs.n(); ++n) {
    const T* a = probs.data() + n * c * hw;
    const T* g = grad_out.data() + n * c * hw;
    T* gi = grad_in.data() + n * c * hw;
    for (int64_t p = 0; p < hw; ++p) {
      T dot{};
      for (int64_t ch = 0; ch < c; ++ch) dot += a[ch * hw + p] * g[ch * hw + p];
      for (int64_t ch = 0; ch < c; ++ch) {
        gi[ch * hw + p] = a[ch * hw + p] * (g[ch * hw + p] - dot);
      }
    }
  }
  return grad_in;
}

template <typename T>
Tensor<T> add_elementwise(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("add_elementwise: shape mismatch (" + std::to_string(a.c()) + " vs " +
                     std::to_string(b.c()) + " channels)");
  }
  Tensor<T> out = a;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

// Channel concatenation, a's channels first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat_channels: batch/spatial axes must match");
  }
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  const int64_t hw = a.h() * a.w();
  for (int64_t n = 0; n < a.n(); ++n) {
    std::copy(a.data() + n * a.c() * hw, a.data() + (n + 1) * a.c() * hw,
              out.data() + n * out.c() * hw);
    std::copy(b.data() + n * b.c() * hw, b.data() + (n + 1) * b.c() * hw,
              out.data() + n * out.c() * hw + a.c() * hw);
  }
  return out;
}

// Backward of concat: split the gradient by channel ranges.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int64_t c_first) {
  if (c_first < 0 || c_first > t.c()) throw ShapeError("split_channels: bad channel count");
  Tensor<T> a(t.n(), c_first, t.h(), t.w());
  Tensor<T> b(t.n(), t.c() - c_first, t.h(), t.w());
  const int64_t hw = t.h() * t.w();
  for (int64_t n = 0; n < t.n(); ++n) {
    std::copy(t.data() + n * t.c() * hw, t.data() + n * t.c() * hw + c_first * hw,
              a.data() + n * c_first * hw);
    std::copy(t.data() + n * t.c() * hw + c_first * hw, t.data() + (n + 1) * t.c() * hw,
              b.data() + n * b.c() * hw);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace micronet

#endif
