#pragma once

#include <algorithm>

#include "mvbev/error.hpp"
#include "mvbev/tensor.hpp"

namespace mvbev {

/// 3x3 convolution geometry. Padding keeps H/stride for the layers used here.
struct ConvSpec {
  int cin = 1;
  int cout = 1;
  int stride = 1;
  int dilation = 1;
  static constexpr int kernel = 3;
  int pad() const { return dilation; }
  int out_size(int n) const { return (n + 2 * pad() - dilation * (kernel - 1) - 1) / stride + 1; }
};

namespace detail {

// Output columns ox whose input column ox*stride + off lies in [0, W).
inline void valid_range(int W, int Wo, int stride, int off, int& lo, int& hi) {
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = (W - 1 - off) < 0 ? -1 : std::min(Wo - 1, (W - 1 - off) / stride);
}

}  // namespace detail

template <typename Real>
Tensor<Real> conv2d_forward(const ConvSpec& spec, const Tensor<Real>& in, const Tensor<Real>& weight,
                            const Tensor<Real>& bias) {
  if (in.rank() != 3 || in.dim(0) != spec.cin)
    throw ShapeMismatch("conv input " + shape_str(in.shape()) + " expects " +
                        std::to_string(spec.cin) + " channels");
  const int H = in.dim(1), W = in.dim(2);
  const int Ho = spec.out_size(H), Wo = spec.out_size(W);
  const int k = ConvSpec::kernel, s = spec.stride, d = spec.dilation, p = spec.pad();
  Tensor<Real> out({spec.cout, Ho, Wo});
  for (int co = 0; co < spec.cout; ++co) {
    Real* oplane = out.data() + static_cast<std::size_t>(co) * Ho * Wo;
    std::fill(oplane, oplane + static_cast<std::size_t>(Ho) * Wo, bias[static_cast<std::size_t>(co)]);
    for (int ci = 0; ci < spec.cin; ++ci) {
      const Real* iplane = in.data() + static_cast<std::size_t>(ci) * H * W;
      const Real* wk = weight.data() + (static_cast<std::size_t>(co) * spec.cin + ci) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Real wv = wk[ky * k + kx];
          const int xoff = kx * d - p;
          int lo, hi;
          detail::valid_range(W, Wo, s, xoff, lo, hi);
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * s + ky * d - p;
            if (iy < 0 || iy >= H) continue;
            const Real* irow = iplane + static_cast<std::size_t>(iy) * W + xoff;
            Real* orow = oplane + static_cast<std::size_t>(oy) * Wo;
            if (s == 1) {
              for (int ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox];
            } else {
              for (int ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox * s];
            }
          }
        }
      }
    }
  }
  return out;
}

/// Accumulates weight/bias gradients into grad_weight/grad_bias and, when
/// grad_in is non-null, writes the input gradient.
template <typename Real>
void conv2d_backward(const ConvSpec& spec, const Tensor<Real>& in, const Tensor<Real>& weight,
                     const Tensor<Real>& grad_out, Tensor<Real>& grad_weight, Tensor<Real>& grad_bias,
                     Tensor<Real>* grad_in) {
  const int H = in.dim(1), W = in.dim(2);
  const int Ho = grad_out.dim(1), Wo = grad_out.dim(2);
  const int k = ConvSpec::kernel, s = spec.stride, d = spec.dilation, p = spec.pad();
  if (grad_in) *grad_in = Tensor<Real>(in.shape());
  for (int co = 0; co < spec.cout; ++co) {
    const Real* gplane = grad_out.data() + static_cast<std::size_t>(co) * Ho * Wo;
    Real gb{0};
    for (std::size_t q = 0; q < static_cast<std::size_t>(Ho) * Wo; ++q) gb += gplane[q];
    grad_bias[static_cast<std::size_t>(co)] += gb;
    for (int ci = 0; ci < spec.cin; ++ci) {
      const Real* iplane = in.data() + static_cast<std::size_t>(ci) * H * W;
      Real* giplane = grad_in ? grad_in->data() + static_cast<std::size_t>(ci) * H * W : nullptr;
      const std::size_t widx = (static_cast<std::size_t>(co) * spec.cin + ci) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Real wv = weight[widx + ky * k + kx];
          const int xoff = kx * d - p;
          int lo, hi;
          detail::valid_range(W, Wo, s, xoff, lo, hi);
          Real gw{0};
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * s + ky * d - p;
            if (iy < 0 || iy >= H) continue;
            const Real* irow = iplane + static_cast<std::size_t>(iy) * W + xoff;
            const Real* grow = gplane + static_cast<std::size_t>(oy) * Wo;
            if (s == 1) {
              for (int ox = lo; ox <= hi; ++ox) gw += grow[ox] * irow[ox];
              if (giplane) {
                Real* girow = giplane + static_cast<std::size_t>(iy) * W + xoff;
                for (int ox = lo; ox <= hi; ++ox) girow[ox] += wv * grow[ox];
              }
            } else {
              for (int ox = lo; ox <= hi; ++ox) gw += grow[ox] * irow[ox * s];
              if (giplane) {
                Real* girow = giplane + static_cast<std::size_t>(iy) * W + xoff;
                for (int ox = lo; ox <= hi; ++ox) girow[ox * s] += wv * grow[ox];
              }
            }
          }
          grad_weight[widx + ky * k + kx] += gw;
        }
      }
    }
  }
}

template <typename Real>
void relu_inplace(Tensor<Real>& t) {
  for (auto& v : t.vec()) v = v > Real{0} ? v : Real{0};
}

/// Masks a gradient by the ReLU's post-activation (zero where it was clamped).
template <typename Real>
void relu_backward_inplace(Tensor<Real>& grad, const Tensor<Real>& activated) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activated[i] > Real{0})) grad[i] = Real{0};
}

template <typename Real>
Real logistic(Real z) {
  return Real{1} / (Real{1} + std::exp(-z));
}

template <typename Real>
void logistic_inplace(Tensor<Real>& t) {
  for (auto& v : t.vec()) v = logistic(v);
}

}  // namespace mvbev
