#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>

#include "llgan/kernels.hpp"
#include "llgan/tensor.hpp"

namespace llgan::nn {

namespace detail {
template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                      const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& n) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data());
  for (auto& v : out) v *= c;
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {a}, [an, c](Node<T>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += c * n.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  auto an = a.node();
  return make_op<T>({1}, {s}, {a}, [an](Node<T>& n) {
    an->ensure_grad();
    for (auto& g : an->grad) g += n.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// A (n x k) times B (k x m); trans_b multiplies by B^T (B given m x k).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw std::invalid_argument("matmul: 2-d operands required");
  const int n = a.dim(0), k = a.dim(1);
  const int m = trans_b ? b.dim(0) : b.dim(1);
  const int bk = trans_b ? b.dim(1) : b.dim(0);
  if (bk != k)
    throw std::invalid_argument("matmul: inner dims " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  std::vector<T> out(static_cast<size_t>(n) * m);
  kernels::gemm<T>(false, trans_b, n, m, k, T(1), a.data().data(), k,
                   b.data().data(), b.dim(1), T(0), out.data(), m);
  auto an = a.node(), bn = b.node();
  return make_op<T>({n, m}, std::move(out), {a, b},
                    [an, bn, n, m, k, trans_b](Node<T>& g) {
    if (an->requires_grad) {
      an->ensure_grad();
      // dA = dC * op(B)^T
      kernels::gemm<T>(false, !trans_b, n, k, m, T(1), g.grad.data(), m,
                       bn->value.data(), bn->shape[1], T(1), an->grad.data(), k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      if (!trans_b)  // dB = A^T * dC
        kernels::gemm<T>(true, false, k, m, n, T(1), an->value.data(), k,
                         g.grad.data(), m, T(1), bn->grad.data(), m);
      else  // dB = dC^T * A
        kernels::gemm<T>(true, false, m, k, n, T(1), g.grad.data(), m,
                         an->value.data(), k, T(1), bn->grad.data(), k);
    }
  });
}

// G = F F^T for a C x M matrix of vectorized feature maps.
template <typename T>
Tensor<T> gram(const Tensor<T>& f) {
  if (f.shape().size() != 2)
    throw std::invalid_argument("gram: expected C x M matrix");
  const int c = f.dim(0), m = f.dim(1);
  std::vector<T> out(static_cast<size_t>(c) * c);
  kernels::gemm<T>(false, true, c, c, m, T(1), f.data().data(), m,
                   f.data().data(), m, T(0), out.data(), c);
  auto fn = f.node();
  return make_op<T>({c, c}, std::move(out), {f}, [fn, c, m](Node<T>& g) {
    fn->ensure_grad();
    // dF = (dG + dG^T) F
    std::vector<T> sym(static_cast<size_t>(c) * c);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j)
        sym[i * c + j] = g.grad[i * c + j] + g.grad[j * c + i];
    kernels::gemm<T>(false, false, c, m, c, T(1), sym.data(), c,
                     fn->value.data(), m, T(1), fn->grad.data(), m);
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " +
                                shape_str(shape) + " changes element count");
  auto an = a.node();
  return make_op<T>(std::move(shape), a.data(), {a}, [an](Node<T>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
}

// Single index along the leading dimension; keeps remaining dims.
template <typename T>
Tensor<T> slice0(const Tensor<T>& a, int i) {
  const auto& s = a.shape();
  if (s.empty() || i < 0 || i >= s[0])
    throw std::out_of_range("slice0: index " + std::to_string(i) + " in " +
                            shape_str(s));
  Shape out_shape(s.begin() + 1, s.end());
  if (out_shape.empty()) out_shape = {1};
  const int64_t stride = numel_of(out_shape);
  std::vector<T> out(a.data().begin() + i * stride,
                     a.data().begin() + (i + 1) * stride);
  auto an = a.node();
  return make_op<T>(std::move(out_shape), std::move(out), {a},
                    [an, i, stride](Node<T>& n) {
    an->ensure_grad();
    for (int64_t j = 0; j < stride; ++j) an->grad[i * stride + j] += n.grad[j];
  });
}

// Stacks equally shaped tensors along a new leading dimension.
template <typename T>
Tensor<T> stack0(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack0: empty input");
  const Shape inner = parts[0].shape();
  Shape out_shape{static_cast<int>(parts.size())};
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  const int64_t stride = numel_of(inner);
  std::vector<T> out;
  out.reserve(stride * parts.size());
  for (const auto& p : parts) {
    detail::check_same_shape(p, parts[0], "stack0");
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op<T>(std::move(out_shape), std::move(out), parts,
                    [nodes, stride](Node<T>& n) {
    for (size_t k = 0; k < nodes.size(); ++k) {
      if (!nodes[k]->requires_grad) continue;
      nodes[k]->ensure_grad();
      for (int64_t j = 0; j < stride; ++j)
        nodes[k]->grad[j] += n.grad[k * stride + j];
    }
  });
}

enum class Activation { relu, leaky_relu, tanh, sigmoid };

// Subgradient at the ReLU kink is 0.
template <typename T>
Tensor<T> activation(const Tensor<T>& a, Activation kind, T alpha = T(0.2)) {
  std::vector<T> out(a.data());
  switch (kind) {
    case Activation::relu:
      for (auto& v : out) v = v > T(0) ? v : T(0);
      break;
    case Activation::leaky_relu:
      for (auto& v : out) v = v > T(0) ? v : alpha * v;
      break;
    case Activation::tanh:
      for (auto& v : out) v = std::tanh(v);
      break;
    case Activation::sigmoid:
      for (auto& v : out) v = T(1) / (T(1) + std::exp(-v));
      break;
  }
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {a},
                    [an, kind, alpha](Node<T>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      T d;
      switch (kind) {
        case Activation::relu:
          d = an->value[i] > T(0) ? T(1) : T(0);
          break;
        case Activation::leaky_relu:
          d = an->value[i] > T(0) ? T(1) : alpha;
          break;
        case Activation::tanh:
          d = T(1) - n.value[i] * n.value[i];
          break;
        case Activation::sigmoid:
          d = n.value[i] * (T(1) - n.value[i]);
          break;
      }
      an->grad[i] += d * n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) { return activation(a, Activation::relu); }
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T alpha = T(0.2)) {
  return activation(a, Activation::leaky_relu, alpha);
}
template <typename T>
Tensor<T> tanh_act(const Tensor<T>& a) { return activation(a, Activation::tanh); }
template <typename T>
Tensor<T> sigmoid_act(const Tensor<T>& a) {
  return activation(a, Activation::sigmoid);
}

// input N x C x H x W, weight O x C x K x K, optional bias O.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int pad) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (is.size() != 4 || ws.size() != 4 || is[1] != ws[1])
    throw std::invalid_argument("conv2d: incompatible shapes " +
                                shape_str(is) + " and " + shape_str(ws));
  const int n = is[0], ci = is[1], h = is[2], w = is[3];
  const int co = ws[0], k = ws[2];
  if (bias.defined() && bias.numel() != co)
    throw std::invalid_argument("conv2d: bias size mismatch");
  if (k > h + 2 * pad || k > w + 2 * pad)
    throw std::invalid_argument("conv2d: kernel " + std::to_string(k) +
                                " larger than padded input " + shape_str(is));
  const int ho = kernels::conv_out_size(h, k, stride, pad);
  const int wo = kernels::conv_out_size(w, k, stride, pad);
  const int64_t col_rows = static_cast<int64_t>(ci) * k * k;
  const int64_t col_cols = static_cast<int64_t>(ho) * wo;
  std::vector<T> out(static_cast<size_t>(n) * co * col_cols);
  std::vector<T> col(col_rows * col_cols);
  for (int b = 0; b < n; ++b) {
    kernels::im2col(input.data().data() + static_cast<int64_t>(b) * ci * h * w,
                    ci, h, w, k, stride, pad, col.data());
    T* y = out.data() + static_cast<int64_t>(b) * co * col_cols;
    kernels::gemm<T>(false, false, co, static_cast<int>(col_cols),
                     static_cast<int>(col_rows), T(1), weight.data().data(),
                     static_cast<int>(col_rows), col.data(),
                     static_cast<int>(col_cols), T(0), y,
                     static_cast<int>(col_cols));
    if (bias.defined())
      for (int oc = 0; oc < co; ++oc)
        for (int64_t j = 0; j < col_cols; ++j)
          y[oc * col_cols + j] += bias.data()[oc];
  }
  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return make_op<T>({n, co, ho, wo}, std::move(out), std::move(parents),
                    [=](Node<T>& g) {
    const int64_t cc = col_cols, cr = col_rows;
    std::vector<T> col_buf(cr * cc);
    for (int b = 0; b < n; ++b) {
      const T* gy = g.grad.data() + static_cast<int64_t>(b) * co * cc;
      if (wn->requires_grad || xn->requires_grad) {
        if (wn->requires_grad) {
          wn->ensure_grad();
          kernels::im2col(xn->value.data() + static_cast<int64_t>(b) * ci * h * w,
                          ci, h, w, k, stride, pad, col_buf.data());
          // dW += dY * col^T
          kernels::gemm<T>(false, true, co, static_cast<int>(cr),
                           static_cast<int>(cc), T(1), gy,
                           static_cast<int>(cc), col_buf.data(),
                           static_cast<int>(cc), T(1), wn->grad.data(),
                           static_cast<int>(cr));
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          // dcol = W^T * dY, then scatter
          kernels::gemm<T>(true, false, static_cast<int>(cr),
                           static_cast<int>(cc), co, T(1),
                           wn->value.data(), static_cast<int>(cr), gy,
                           static_cast<int>(cc), T(0), col_buf.data(),
                           static_cast<int>(cc));
          kernels::col2im(col_buf.data(), ci, h, w, k, stride, pad,
                          xn->grad.data() + static_cast<int64_t>(b) * ci * h * w);
        }
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (int oc = 0; oc < co; ++oc) {
          T s = 0;
          for (int64_t j = 0; j < cc; ++j) s += gy[oc * cc + j];
          bn->grad[oc] += s;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride,
                 int pad) {
  return conv2d(input, weight, Tensor<T>(), stride, pad);
}

// input N x C x H x W, weight C x O x K x K (adjoint of conv2d geometry).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, int stride, int pad) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (is.size() != 4 || ws.size() != 4 || is[1] != ws[0])
    throw std::invalid_argument("conv_transpose2d: incompatible shapes " +
                                shape_str(is) + " and " + shape_str(ws));
  const int n = is[0], ci = is[1], h = is[2], w = is[3];
  const int co = ws[1], k = ws[2];
  if (bias.defined() && bias.numel() != co)
    throw std::invalid_argument("conv_transpose2d: bias size mismatch");
  const int ho = kernels::conv_transpose_out_size(h, k, stride, pad);
  const int wo = kernels::conv_transpose_out_size(w, k, stride, pad);
  if (ho <= 0 || wo <= 0)
    throw std::invalid_argument("conv_transpose2d: empty output for " +
                                shape_str(is));
  const int64_t col_rows = static_cast<int64_t>(co) * k * k;
  const int64_t col_cols = static_cast<int64_t>(h) * w;
  std::vector<T> out(static_cast<size_t>(n) * co * ho * wo, T(0));
  std::vector<T> col(col_rows * col_cols);
  for (int b = 0; b < n; ++b) {
    // col = W^T (viewed ci x (co*k*k)) * x_b (ci x h*w)
    kernels::gemm<T>(true, false, static_cast<int>(col_rows),
                     static_cast<int>(col_cols), ci, T(1),
                     weight.data().data(), static_cast<int>(col_rows),
                     input.data().data() + static_cast<int64_t>(b) * ci * h * w,
                     static_cast<int>(col_cols), T(0), col.data(),
                     static_cast<int>(col_cols));
    T* y = out.data() + static_cast<int64_t>(b) * co * ho * wo;
    kernels::col2im(col.data(), co, ho, wo, k, stride, pad, y);
    if (bias.defined())
      for (int oc = 0; oc < co; ++oc)
        for (int64_t j = 0; j < static_cast<int64_t>(ho) * wo; ++j)
          y[oc * ho * wo + j] += bias.data()[oc];
  }
  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return make_op<T>({n, co, ho, wo}, std::move(out), std::move(parents),
                    [=](Node<T>& g) {
    const int64_t cc = col_cols, cr = col_rows;
    std::vector<T> col_buf(cr * cc);
    for (int b = 0; b < n; ++b) {
      const T* gy = g.grad.data() + static_cast<int64_t>(b) * co * ho * wo;
      // dcol = im2col(dY); shared by dX and dW.
      kernels::im2col(gy, co, ho, wo, k, stride, pad, col_buf.data());
      if (xn->requires_grad) {
        xn->ensure_grad();
        // dX = W (ci x co*k*k) * dcol
        kernels::gemm<T>(false, false, ci, static_cast<int>(cc),
                         static_cast<int>(cr), T(1), wn->value.data(),
                         static_cast<int>(cr), col_buf.data(),
                         static_cast<int>(cc), T(1),
                         xn->grad.data() + static_cast<int64_t>(b) * ci * h * w,
                         static_cast<int>(cc));
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        // dW (ci x co*k*k) += x_b * dcol^T
        kernels::gemm<T>(false, true, ci, static_cast<int>(cr),
                         static_cast<int>(cc), T(1),
                         xn->value.data() + static_cast<int64_t>(b) * ci * h * w,
                         static_cast<int>(cc), col_buf.data(),
                         static_cast<int>(cc), T(1), wn->grad.data(),
                         static_cast<int>(cr));
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (int oc = 0; oc < co; ++oc) {
          T s = 0;
          for (int64_t j = 0; j < static_cast<int64_t>(ho) * wo; ++j)
            s += gy[oc * ho * wo + j];
          bn->grad[oc] += s;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           int stride, int pad) {
  return conv_transpose2d(input, weight, Tensor<T>(), stride, pad);
}

// Batch norm over N,H,W per channel. Running stats live outside the graph.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma,
                      const Tensor<T>& beta, std::vector<T>& running_mean,
                      std::vector<T>& running_var, bool train,
                      T momentum = T(0.1), T eps = T(1e-5)) {
  const auto& is = input.shape();
  if (is.size() != 4) throw std::invalid_argument("batchnorm2d: NCHW required");
  const int n = is[0], c = is[1], h = is[2], w = is[3];
  if (gamma.numel() != c || beta.numel() != c)
    throw std::invalid_argument("batchnorm2d: affine size mismatch");
  if (train && n < 2)
    throw std::invalid_argument(
        "batchnorm2d: train mode needs batch size >= 2, got " +
        std::to_string(n));
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t count = static_cast<int64_t>(n) * plane;
  std::vector<T> mu(c), var(c), inv_std(c), xhat;
  if (train) {
    for (int ch = 0; ch < c; ++ch) {
      T s = 0;
      for (int b = 0; b < n; ++b) {
        const T* x = input.data().data() + (static_cast<int64_t>(b) * c + ch) * plane;
        for (int64_t j = 0; j < plane; ++j) s += x[j];
      }
      mu[ch] = s / static_cast<T>(count);
      T v = 0;
      for (int b = 0; b < n; ++b) {
        const T* x = input.data().data() + (static_cast<int64_t>(b) * c + ch) * plane;
        for (int64_t j = 0; j < plane; ++j) {
          T d = x[j] - mu[ch];
          v += d * d;
        }
      }
      var[ch] = v / static_cast<T>(count);
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mu[ch];
      // running variance uses the unbiased estimate
      running_var[ch] = (T(1) - momentum) * running_var[ch] +
                        momentum * var[ch] * static_cast<T>(count) /
                            static_cast<T>(count - 1);
    }
  } else {
    mu = running_mean;
    var = running_var;
  }
  for (int ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);
  xhat.resize(input.numel());
  std::vector<T> out(input.numel());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const int64_t base = (static_cast<int64_t>(b) * c + ch) * plane;
      for (int64_t j = 0; j < plane; ++j) {
        T xh = (input.data()[base + j] - mu[ch]) * inv_std[ch];
        xhat[base + j] = xh;
        out[base + j] = gamma.data()[ch] * xh + beta.data()[ch];
      }
    }
  auto xn = input.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto xhat_p = std::make_shared<std::vector<T>>(std::move(xhat));
  auto inv_std_p = std::make_shared<std::vector<T>>(std::move(inv_std));
  return make_op<T>(is, std::move(out), {input, gamma, beta},
                    [=](Node<T>& g) {
    const std::vector<T>& xh = *xhat_p;
    const std::vector<T>& istd = *inv_std_p;
    std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        const int64_t base = (static_cast<int64_t>(b) * c + ch) * plane;
        for (int64_t j = 0; j < plane; ++j) {
          sum_dy[ch] += g.grad[base + j];
          sum_dy_xhat[ch] += g.grad[base + j] * xh[base + j];
        }
      }
    if (gn->requires_grad) {
      gn->ensure_grad();
      for (int ch = 0; ch < c; ++ch) gn->grad[ch] += sum_dy_xhat[ch];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int ch = 0; ch < c; ++ch) bn->grad[ch] += sum_dy[ch];
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          const int64_t base = (static_cast<int64_t>(b) * c + ch) * plane;
          const T gsc = gn->value[ch] * istd[ch];
          for (int64_t j = 0; j < plane; ++j) {
            T dxhat = g.grad[base + j];
            T dx;
            if (train) {
              dx = gsc * (dxhat - sum_dy[ch] / static_cast<T>(count) -
                          xh[base + j] * sum_dy_xhat[ch] / static_cast<T>(count));
            } else {
              dx = gsc * dxhat;
            }
            xn->grad[base + j] += dx;
          }
        }
    }
  });
}

// x: N x F, w: F x O, b: O.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.dim(1) != w.dim(0))
    throw std::invalid_argument("linear: shape mismatch " +
                                shape_str(x.shape()) + " vs " +
                                shape_str(w.shape()));
  Tensor<T> y = matmul(x, w);
  if (!b.defined()) return y;
  if (b.numel() != w.dim(1))
    throw std::invalid_argument("linear: bias size mismatch");
  const int n = y.dim(0), o = y.dim(1);
  std::vector<T> out(y.data());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) out[i * o + j] += b.data()[j];
  auto yn = y.node();
  auto bnn = b.node();
  return make_op<T>(y.shape(), std::move(out), {y, b}, [yn, bnn, n, o](Node<T>& g) {
    if (yn->requires_grad) {
      yn->ensure_grad();
      for (size_t i = 0; i < g.grad.size(); ++i) yn->grad[i] += g.grad[i];
    }
    if (bnn->requires_grad) {
      bnn->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) bnn->grad[j] += g.grad[i * o + j];
    }
  });
}

// Mean-reduced binary cross-entropy on logits; stable for large |logit|.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  detail::check_same_shape(logits, targets, "bce_with_logits");
  for (T t : targets.data())
    if (t < T(0) || t > T(1))
      throw std::invalid_argument("bce_with_logits: target outside [0,1]");
  const int64_t n = logits.numel();
  T loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    T x = logits.data()[i], t = targets.data()[i];
    loss += std::max(x, T(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= static_cast<T>(n);
  auto ln = logits.node();
  auto tn = targets.node();
  return make_op<T>({1}, {loss}, {logits, targets}, [ln, tn, n](Node<T>& g) {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    const T go = g.grad[0] / static_cast<T>(n);
    for (int64_t i = 0; i < n; ++i) {
      T x = ln->value[i];
      T sig = T(1) / (T(1) + std::exp(-x));
      ln->grad[i] += go * (sig - tn->value[i]);
    }
  });
}

// Row softmax of N x K logits.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument("softmax_rows: N x K required");
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<T> out(logits.data());
  for (int i = 0; i < n; ++i) {
    T* row = out.data() + static_cast<int64_t>(i) * k;
    T mx = *std::max_element(row, row + k);
    T s = 0;
    for (int j = 0; j < k; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (int j = 0; j < k; ++j) row[j] /= s;
  }
  auto ln = logits.node();
  return make_op<T>(logits.shape(), std::move(out), {logits},
                    [ln, n, k](Node<T>& g) {
    ln->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const T* p = g.value.data() + static_cast<int64_t>(i) * k;
      const T* dy = g.grad.data() + static_cast<int64_t>(i) * k;
      T dot = 0;
      for (int j = 0; j < k; ++j) dot += p[j] * dy[j];
      for (int j = 0; j < k; ++j)
        ln->grad[i * k + j] += p[j] * (dy[j] - dot);
    }
  });
}

// Mean cross-entropy of N x K logits against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  if (logits.shape().size() != 2 ||
      logits.dim(0) != static_cast<int>(labels.size()))
    throw std::invalid_argument("softmax_cross_entropy: shape mismatch");
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<T> probs(logits.data());
  T loss = 0;
  for (int i = 0; i < n; ++i) {
    T* row = probs.data() + static_cast<int64_t>(i) * k;
    T mx = *std::max_element(row, row + k);
    T s = 0;
    for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    T log_z = mx + std::log(s);
    loss += log_z - row[labels[i]];
    for (int j = 0; j < k; ++j) row[j] = std::exp(row[j] - log_z);
  }
  loss /= static_cast<T>(n);
  auto ln = logits.node();
  auto probs_p = std::make_shared<std::vector<T>>(std::move(probs));
  auto labels_p = std::make_shared<std::vector<int>>(labels);
  return make_op<T>({1}, {loss}, {logits}, [ln, probs_p, labels_p, n, k](Node<T>& g) {
    ln->ensure_grad();
    const T go = g.grad[0] / static_cast<T>(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        T p = (*probs_p)[static_cast<int64_t>(i) * k + j];
        ln->grad[i * k + j] += go * (p - ((*labels_p)[i] == j ? T(1) : T(0)));
      }
  });
}

// Sum-reduced smooth L1 (Huber with threshold beta).
template <typename T>
Tensor<T> smooth_l1_sum(const Tensor<T>& pred, const Tensor<T>& target,
                        T beta = T(1)) {
  detail::check_same_shape(pred, target, "smooth_l1_sum");
  T loss = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    T d = std::abs(pred.data()[i] - target.data()[i]);
    loss += d < beta ? T(0.5) * d * d / beta : d - T(0.5) * beta;
  }
  auto pn = pred.node();
  auto tn = target.node();
  return make_op<T>({1}, {loss}, {pred, target}, [pn, tn, beta](Node<T>& g) {
    if (!pn->requires_grad) return;
    pn->ensure_grad();
    for (size_t i = 0; i < pn->value.size(); ++i) {
      T d = pn->value[i] - tn->value[i];
      T dd = std::abs(d) < beta ? d / beta : (d > T(0) ? T(1) : T(-1));
      pn->grad[i] += g.grad[0] * dd;
    }
  });
}

// Nearest-neighbour 2x upsampling of NCHW.
template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample: NCHW required");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  std::vector<T> out(static_cast<size_t>(n) * c * h * w * 4);
  const int ho = h * 2, wo = w * 2;
  for (int bc = 0; bc < n * c; ++bc) {
    const T* src = x.data().data() + static_cast<int64_t>(bc) * h * w;
    T* dst = out.data() + static_cast<int64_t>(bc) * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        dst[y * wo + xx] = src[(y / 2) * w + (xx / 2)];
  }
  auto xn = x.node();
  return make_op<T>({n, c, ho, wo}, std::move(out), {x},
                    [xn, n, c, h, w, ho, wo](Node<T>& g) {
    xn->ensure_grad();
    for (int bc = 0; bc < n * c; ++bc) {
      T* dst = xn->grad.data() + static_cast<int64_t>(bc) * h * w;
      const T* src = g.grad.data() + static_cast<int64_t>(bc) * ho * wo;
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx)
          dst[(y / 2) * w + (xx / 2)] += src[y * wo + xx];
    }
  });
}

// Mean over H,W of NCHW -> N x C.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("global_avg_pool: NCHW");
  const int n = s[0], c = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  std::vector<T> out(static_cast<size_t>(n) * c);
  for (int i = 0; i < n * c; ++i) {
    T acc = 0;
    const T* src = x.data().data() + i * plane;
    for (int64_t j = 0; j < plane; ++j) acc += src[j];
    out[i] = acc / static_cast<T>(plane);
  }
  auto xn = x.node();
  return make_op<T>({n, c}, std::move(out), {x}, [xn, n, c, plane](Node<T>& g) {
    xn->ensure_grad();
    for (int i = 0; i < n * c; ++i) {
      const T gv = g.grad[i] / static_cast<T>(plane);
      T* dst = xn->grad.data() + i * plane;
      for (int64_t j = 0; j < plane; ++j) dst[j] += gv;
    }
  });
}

}  // namespace llgan::nn
