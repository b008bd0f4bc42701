// Copyright 2026 The transvw Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "transvw/ops.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>

namespace tvw::ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

// Spatial axes are normalised to three (depth, height, width); lower-rank
// inputs get leading unit axes with stride 1 and no padding.
struct ConvGeom {
  std::size_t batch = 0, cin = 0, cout = 0, spatial_rank = 0;
  std::array<std::size_t, 3> in{1, 1, 1}, k{1, 1, 1}, out{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1}, pad{0, 0, 0};

  std::size_t in_vol() const { return in[0] * in[1] * in[2]; }
  std::size_t out_vol() const { return out[0] * out[1] * out[2]; }
  std::size_t k_vol() const { return k[0] * k[1] * k[2]; }
  std::size_t rows() const { return cin * k_vol(); }
  bool pointwise() const {
    return k_vol() == 1 && stride == std::array<std::size_t, 3>{1, 1, 1} &&
           pad == std::array<std::size_t, 3>{0, 0, 0};
  }
};

ConvGeom make_geom(const Shape& x, const Shape& w, const Shape& b,
                   const ConvParams& p) {
  if (x.size() < 3 || x.size() > 5) {
    throw ConfigError("conv input must be [B, C, s...] with 1-3 spatial axes, got " +
                      shape_to_string(x));
  }
  if (w.size() != x.size()) {
    throw ConfigError("conv kernel spatial rank does not match input: kernel " +
                      shape_to_string(w) + " vs input " + shape_to_string(x));
  }
  if (w[1] != x[1]) {
    throw ConfigError("conv input channels " + std::to_string(x[1]) +
                      " do not match kernel " + shape_to_string(w));
  }
  if (b.size() != 1 || b[0] != w[0]) {
    throw ConfigError("conv bias " + shape_to_string(b) +
                      " does not match output channels " + std::to_string(w[0]));
  }
  if (p.stride == 0) throw ConfigError("conv stride must be positive");
  ConvGeom g;
  g.batch = x[0];
  g.cin = x[1];
  g.cout = w[0];
  g.spatial_rank = x.size() - 2;
  const std::size_t offset = 3 - g.spatial_rank;
  for (std::size_t a = 0; a < g.spatial_rank; ++a) {
    g.in[offset + a] = x[2 + a];
    g.k[offset + a] = w[2 + a];
    g.stride[offset + a] = p.stride;
    g.pad[offset + a] = p.padding;
    g.out[offset + a] =
        conv_output_extent(x[2 + a], w[2 + a], p.stride, p.padding);
  }
  return g;
}

template <typename T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
  const std::size_t P = g.out_vol();
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* xc = x + ci * g.in_vol();
    for (std::size_t a = 0; a < g.k[0]; ++a) {
      for (std::size_t b = 0; b < g.k[1]; ++b) {
        for (std::size_t c = 0; c < g.k[2]; ++c, ++row) {
          T* dst = cols + row * P;
          for (std::size_t od = 0; od < g.out[0]; ++od) {
            const auto id = static_cast<std::ptrdiff_t>(od * g.stride[0] + a) -
                            static_cast<std::ptrdiff_t>(g.pad[0]);
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride[1] + b) -
                              static_cast<std::ptrdiff_t>(g.pad[1]);
              T* d = dst + (od * g.out[1] + oh) * g.out[2];
              const bool row_ok = id >= 0 && id < static_cast<std::ptrdiff_t>(g.in[0]) &&
                                  ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.in[1]);
              if (!row_ok) {
                std::fill(d, d + g.out[2], T(0));
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(id) * g.in[1] +
                                   static_cast<std::size_t>(ih)) * g.in[2];
              for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride[2] + c) -
                                static_cast<std::ptrdiff_t>(g.pad[2]);
                d[ow] = (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in[2]))
                            ? src[iw]
                            : T(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* cols, T* dx) {
  const std::size_t P = g.out_vol();
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    T* xc = dx + ci * g.in_vol();
    for (std::size_t a = 0; a < g.k[0]; ++a) {
      for (std::size_t b = 0; b < g.k[1]; ++b) {
        for (std::size_t c = 0; c < g.k[2]; ++c, ++row) {
          const T* src = cols + row * P;
          for (std::size_t od = 0; od < g.out[0]; ++od) {
            const auto id = static_cast<std::ptrdiff_t>(od * g.stride[0] + a) -
                            static_cast<std::ptrdiff_t>(g.pad[0]);
            if (id < 0 || id >= static_cast<std::ptrdiff_t>(g.in[0])) continue;
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride[1] + b) -
                              static_cast<std::ptrdiff_t>(g.pad[1]);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in[1])) continue;
              const T* s = src + (od * g.out[1] + oh) * g.out[2];
              T* dst = xc + (static_cast<std::size_t>(id) * g.in[1] +
                             static_cast<std::size_t>(ih)) * g.in[2];
              for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride[2] + c) -
                                static_cast<std::ptrdiff_t>(g.pad[2]);
                if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in[2])) {
                  dst[iw] += s[ow];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw UsageError(std::string(what) + ": shape mismatch " +
                     shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

template <typename T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>(Shape{1}, std::vector<T>{v});
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("conv stride must be positive");
  if (in + 2 * padding < kernel) {
    throw ConfigError("conv kernel extent " + std::to_string(kernel) +
                      " exceeds padded input extent " +
                      std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
Var<T> conv(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias,
            ConvParams params) {
  const ConvGeom g =
      make_geom(input.shape(), kernel.shape(), bias.shape(), params);
  Shape out_shape{g.batch, g.cout};
  for (std::size_t a = 3 - g.spatial_rank; a < 3; ++a) out_shape.push_back(g.out[a]);

  Tensor<T> out(out_shape);
  const std::size_t P = g.out_vol();
  const std::size_t R = g.rows();
  CMapR<T> w(kernel.value().data().data(), g.cout, R);
  const T* bptr = bias.value().data().data();
  std::vector<T> cols(g.pointwise() ? 0 : R * P);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* x = input.value().data().data() + n * g.cin * g.in_vol();
    const T* cptr = x;
    if (!g.pointwise()) {
      im2col(g, x, cols.data());
      cptr = cols.data();
    }
    MapR<T> y(out.data().data() + n * g.cout * P, g.cout, P);
    y.noalias() = w * CMapR<T>(cptr, R, P);
    for (std::size_t co = 0; co < g.cout; ++co) y.row(co).array() += bptr[co];
  }

  Node<T>* xn = input.node();
  Node<T>* wn = kernel.node();
  Node<T>* bn = bias.node();
  return record<T>(
      std::move(out), "conv", {input, kernel, bias},
      [g, xn, wn, bn](const Tensor<T>& gy) {
        const std::size_t P = g.out_vol();
        const std::size_t R = g.rows();
        std::vector<T> cols(g.pointwise() ? 0 : R * P);
        std::vector<T> dcols(R * P);
        CMapR<T> w(wn->value.data().data(), g.cout, R);
        for (std::size_t n = 0; n < g.batch; ++n) {
          CMapR<T> dy(gy.data().data() + n * g.cout * P, g.cout, P);
          if (bn->requires_grad) {
            T* db = bn->grad_buffer().data().data();
            for (std::size_t co = 0; co < g.cout; ++co) db[co] += dy.row(co).sum();
          }
          if (wn->requires_grad) {
            const T* x = xn->value.data().data() + n * g.cin * g.in_vol();
            const T* cptr = x;
            if (!g.pointwise()) {
              im2col(g, x, cols.data());
              cptr = cols.data();
            }
            MapR<T> dw(wn->grad_buffer().data().data(), g.cout, R);
            dw.noalias() += dy * CMapR<T>(cptr, R, P).transpose();
          }
          if (xn->requires_grad) {
            T* dx = xn->grad_buffer().data().data() + n * g.cin * g.in_vol();
            if (g.pointwise()) {
              MapR<T>(dx, R, P).noalias() += w.transpose() * dy;
            } else {
              MapR<T>(dcols.data(), R, P).noalias() = w.transpose() * dy;
              col2im_add(g, dcols.data(), dx);
            }
          }
        }
      });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& input, std::size_t factor) {
  const Shape& s = input.shape();
  if (s.size() < 3 || s.size() > 5) {
    throw ConfigError("upsample expects [B, C, s...], got " + shape_to_string(s));
  }
  if (factor == 0) throw ConfigError("upsample factor must be positive");
  const std::size_t r = s.size() - 2;
  std::array<std::size_t, 3> in{1, 1, 1}, out{1, 1, 1}, f{1, 1, 1};
  Shape out_shape{s[0], s[1]};
  for (std::size_t a = 0; a < r; ++a) {
    in[3 - r + a] = s[2 + a];
    f[3 - r + a] = factor;
    out[3 - r + a] = s[2 + a] * factor;
    out_shape.push_back(s[2 + a] * factor);
  }
  const std::size_t planes = s[0] * s[1];
  const std::size_t in_vol = in[0] * in[1] * in[2];
  const std::size_t out_vol = out[0] * out[1] * out[2];
  // Gather index shared by every plane.
  std::vector<std::size_t> src(out_vol);
  for (std::size_t d = 0; d < out[0]; ++d)
    for (std::size_t h = 0; h < out[1]; ++h)
      for (std::size_t w = 0; w < out[2]; ++w)
        src[(d * out[1] + h) * out[2] + w] =
            ((d / f[0]) * in[1] + h / f[1]) * in[2] + w / f[2];

  Tensor<T> y(out_shape);
  const T* x = input.value().data().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < out_vol; ++i)
      y[p * out_vol + i] = x[p * in_vol + src[i]];

  Node<T>* xn = input.node();
  return record<T>(std::move(y), "upsample_nearest", {input},
                   [xn, src = std::move(src), planes, in_vol,
                    out_vol](const Tensor<T>& gy) {
                     T* dx = xn->grad_buffer().data().data();
                     for (std::size_t p = 0; p < planes; ++p)
                       for (std::size_t i = 0; i < out_vol; ++i)
                         dx[p * in_vol + src[i]] += gy[p * out_vol + i];
                   });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size() || sa[0] != sb[0] ||
      !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2)) {
    throw ConfigError("concat_channels: incompatible shapes " +
                      shape_to_string(sa) + " and " + shape_to_string(sb));
  }
  const std::size_t vol = shape_numel(Shape(sa.begin() + 2, sa.end()));
  const std::size_t ca = sa[1], cb = sb[1];
  Shape out_shape = sa;
  out_shape[1] = ca + cb;
  Tensor<T> y(out_shape);
  for (std::size_t n = 0; n < sa[0]; ++n) {
    std::copy_n(a.value().data().data() + n * ca * vol, ca * vol,
                y.data().data() + n * (ca + cb) * vol);
    std::copy_n(b.value().data().data() + n * cb * vol, cb * vol,
                y.data().data() + n * (ca + cb) * vol + ca * vol);
  }
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  const std::size_t batch = sa[0];
  return record<T>(std::move(y), "concat_channels", {a, b},
                   [an, bn, batch, ca, cb, vol](const Tensor<T>& gy) {
                     for (std::size_t n = 0; n < batch; ++n) {
                       const T* g = gy.data().data() + n * (ca + cb) * vol;
                       if (an->requires_grad) {
                         T* da = an->grad_buffer().data().data() + n * ca * vol;
                         for (std::size_t i = 0; i < ca * vol; ++i) da[i] += g[i];
                       }
                       if (bn->requires_grad) {
                         T* db = bn->grad_buffer().data().data() + n * cb * vol;
                         for (std::size_t i = 0; i < cb * vol; ++i)
                           db[i] += g[ca * vol + i];
                       }
                     }
                   });
}

template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  const Shape& sx = input.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 2 || sw.size() != 2 || sw[1] != sx[1]) {
    throw ConfigError("dense: input " + shape_to_string(sx) +
                      " incompatible with weight " + shape_to_string(sw));
  }
  if (bias.shape() != Shape{sw[0]}) {
    throw ConfigError("dense: bias " + shape_to_string(bias.shape()) +
                      " does not match weight " + shape_to_string(sw));
  }
  const std::size_t B = sx[0], in = sx[1], out = sw[0];
  Tensor<T> y(Shape{B, out});
  CMapR<T> x(input.value().data().data(), B, in);
  CMapR<T> w(weight.value().data().data(), out, in);
  MapR<T> ym(y.data().data(), B, out);
  ym.noalias() = x * w.transpose();
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < out; ++o) ym(n, o) += bias.value()[o];

  Node<T>* xn = input.node();
  Node<T>* wn = weight.node();
  Node<T>* bn = bias.node();
  return record<T>(std::move(y), "dense", {input, weight, bias},
                   [xn, wn, bn, B, in, out](const Tensor<T>& gy) {
                     CMapR<T> dy(gy.data().data(), B, out);
                     if (wn->requires_grad) {
                       MapR<T>(wn->grad_buffer().data().data(), out, in)
                           .noalias() +=
                           dy.transpose() * CMapR<T>(xn->value.data().data(), B, in);
                     }
                     if (bn->requires_grad) {
                       T* db = bn->grad_buffer().data().data();
                       for (std::size_t o = 0; o < out; ++o) db[o] += dy.col(o).sum();
                     }
                     if (xn->requires_grad) {
                       MapR<T>(xn->grad_buffer().data().data(), B, in).noalias() +=
                           dy * CMapR<T>(wn->value.data().data(), out, in);
                     }
                   });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v = v > T(0) ? v : T(0);
  Node<T>* xn = x.node();
  return record<T>(std::move(y), "relu", {x}, [xn](const Tensor<T>& gy) {
    T* dx = xn->grad_buffer().data().data();
    const T* xv = xn->value.data().data();
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (xv[i] > T(0)) dx[i] += gy[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) {
    v = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                  : std::exp(v) / (T(1) + std::exp(v));
  }
  auto holder = std::make_shared<Tensor<T>>(y);
  Node<T>* xn = x.node();
  return record<T>(std::move(y), "sigmoid", {x},
                   [xn, holder](const Tensor<T>& gy) {
                     T* dx = xn->grad_buffer().data().data();
                     for (std::size_t i = 0; i < gy.size(); ++i) {
                       const T s = (*holder)[i];
                       dx[i] += gy[i] * s * (T(1) - s);
                     }
                   });
}

template <typename T>
Var<T> softmax(const Var<T>& logits) {
  const Shape& s = logits.shape();
  if (s.size() != 2) {
    throw ConfigError("softmax expects [B, C], got " + shape_to_string(s));
  }
  if (s[1] < 2) throw ConfigError("softmax requires at least two classes");
  if (!logits.value().all_finite()) {
    throw NumericalError("softmax: non-finite logits");
  }
  const std::size_t B = s[0], C = s[1];
  Tensor<T> y(s);
  for (std::size_t n = 0; n < B; ++n) {
    const T* x = logits.value().data().data() + n * C;
    T* o = y.data().data() + n * C;
    const T m = *std::max_element(x, x + C);
    T total = 0;
    for (std::size_t c = 0; c < C; ++c) total += (o[c] = std::exp(x[c] - m));
    for (std::size_t c = 0; c < C; ++c) o[c] /= total;
  }
  auto holder = std::make_shared<Tensor<T>>(y);
  Node<T>* xn = logits.node();
  return record<T>(std::move(y), "softmax", {logits},
                   [xn, holder, B, C](const Tensor<T>& gy) {
                     T* dx = xn->grad_buffer().data().data();
                     for (std::size_t n = 0; n < B; ++n) {
                       const T* p = holder->data().data() + n * C;
                       const T* g = gy.data().data() + n * C;
                       T dot = 0;
                       for (std::size_t c = 0; c < C; ++c) dot += g[c] * p[c];
                       for (std::size_t c = 0; c < C; ++c)
                         dx[n * C + c] += p[c] * (g[c] - dot);
                     }
                   });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() < 3) {
    throw ConfigError("global_avg_pool expects [B, C, s...], got " +
                      shape_to_string(s));
  }
  const std::size_t planes = s[0] * s[1];
  const std::size_t vol = x.value().size() / planes;
  Tensor<T> y(Shape{s[0], s[1]});
  const T* xv = x.value().data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    T total = 0;
    for (std::size_t i = 0; i < vol; ++i) total += xv[p * vol + i];
    y[p] = total / static_cast<T>(vol);
  }
  Node<T>* xn = x.node();
  return record<T>(std::move(y), "global_avg_pool", {x},
                   [xn, planes, vol](const Tensor<T>& gy) {
                     T* dx = xn->grad_buffer().data().data();
                     for (std::size_t p = 0; p < planes; ++p) {
                       const T g = gy[p] / static_cast<T>(vol);
                       for (std::size_t i = 0; i < vol; ++i) dx[p * vol + i] += g;
                     }
                   });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  Node<T>* xn = x.node();
  return record<T>(std::move(y), "reshape", {x}, [xn](const Tensor<T>& gy) {
    T* dx = xn->grad_buffer().data().data();
    for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i];
  });
}

template <typename T>
Var<T> flatten(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ConfigError("flatten of a rank-0 tensor");
  return reshape(x, Shape{s[0], x.value().size() / s[0]});
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape<T>(a.shape(), b.shape(), "add");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return record<T>(std::move(y), "add", {a, b}, [an, bn](const Tensor<T>& gy) {
    for (Node<T>* n : {an, bn}) {
      if (!n->requires_grad) continue;
      T* d = n->grad_buffer().data().data();
      for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape<T>(a.shape(), b.shape(), "mul");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return record<T>(std::move(y), "mul", {a, b}, [an, bn](const Tensor<T>& gy) {
    if (an->requires_grad) {
      T* d = an->grad_buffer().data().data();
      for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      T* d = bn->grad_buffer().data().data();
      for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i] * an->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v *= factor;
  Node<T>* xn = x.node();
  return record<T>(std::move(y), "scale", {x}, [xn, factor](const Tensor<T>& gy) {
    T* dx = xn->grad_buffer().data().data();
    for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * factor;
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  Node<T>* xn = x.node();
  return record<T>(scalar_tensor(total), "sum", {x}, [xn](const Tensor<T>& gy) {
    T* dx = xn->grad_buffer().data().data();
    for (std::size_t i = 0; i < xn->value.size(); ++i) dx[i] += gy[0];
  });
}

template <typename T>
Var<T> categorical_cross_entropy(const Var<T>& probs, const Tensor<T>& onehot) {
  const Shape& s = probs.shape();
  if (s.size() != 2) {
    throw UsageError("categorical_cross_entropy expects P of shape [B, C], got " +
                     shape_to_string(s));
  }
  require_same_shape<T>(s, onehot.shape(), "categorical_cross_entropy");
  const std::size_t B = s[0], C = s[1];
  constexpr T eps = T(1e-12);
  const double tol = probability_row_tolerance<T>();
  double total = 0;
  for (std::size_t n = 0; n < B; ++n) {
    std::size_t ones = 0;
    double row = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const T y = onehot[n * C + c];
      if (y == T(1)) {
        ++ones;
      } else if (y != T(0)) {
        throw UsageError("categorical_cross_entropy: label row " +
                         std::to_string(n) + " is not one-hot");
      }
      row += probs.value()[n * C + c];
    }
    if (ones != 1) {
      throw UsageError("categorical_cross_entropy: label row " +
                       std::to_string(n) + " is not one-hot");
    }
    if (std::abs(row - 1.0) > tol) {
      throw UsageError("categorical_cross_entropy: prediction row " +
                       std::to_string(n) + " does not sum to one");
    }
    for (std::size_t c = 0; c < C; ++c) {
      if (onehot[n * C + c] == T(1)) {
        total -= std::log(std::max(probs.value()[n * C + c], eps));
      }
    }
  }
  const T loss = static_cast<T>(total / static_cast<double>(B));
  Node<T>* pn = probs.node();
  return record<T>(scalar_tensor(loss), "categorical_cross_entropy", {probs},
                   [pn, onehot, B, C](const Tensor<T>& gy) {
                     T* dp = pn->grad_buffer().data().data();
                     const T inv_b = T(1) / static_cast<T>(B);
                     for (std::size_t i = 0; i < B * C; ++i) {
                       const T p = pn->value[i];
                       if (onehot[i] == T(1) && p >= eps) {
                         dp[i] -= gy[0] * inv_b / p;
                       }
                     }
                   });
}

template <typename T>
Var<T> restoration_loss(const Var<T>& original, const Var<T>& restored,
                        bool squared) {
  require_same_shape<T>(original.shape(), restored.shape(), "restoration_loss");
  const Shape& s = original.shape();
  if (s.empty()) throw UsageError("restoration_loss: rank-0 input");
  const std::size_t B = s[0];
  const std::size_t per = original.value().size() / B;
  auto norms = std::make_shared<std::vector<T>>(B);
  T total = 0;
  for (std::size_t n = 0; n < B; ++n) {
    T sq = 0;
    for (std::size_t i = 0; i < per; ++i) {
      const T d = original.value()[n * per + i] - restored.value()[n * per + i];
      sq += d * d;
    }
    (*norms)[n] = std::sqrt(sq);
    total += squared ? sq : (*norms)[n];
  }
  const T loss = total / static_cast<T>(B);
  Node<T>* on = original.node();
  Node<T>* rn = restored.node();
  return record<T>(
      scalar_tensor(loss), squared ? "restoration_loss_sq" : "restoration_loss",
      {original, restored},
      [on, rn, norms, B, per, squared](const Tensor<T>& gy) {
        const T inv_b = gy[0] / static_cast<T>(B);
        for (std::size_t n = 0; n < B; ++n) {
          const T norm = (*norms)[n];
          T factor;
          if (squared) {
            factor = T(2) * inv_b;
          } else {
            // Subgradient zero at a perfect restoration.
            if (norm == T(0)) continue;
            factor = inv_b / norm;
          }
          for (std::size_t i = 0; i < per; ++i) {
            const std::size_t k = n * per + i;
            const T d = on->value[k] - rn->value[k];
            if (on->requires_grad) on->grad_buffer()[k] += factor * d;
            if (rn->requires_grad) rn->grad_buffer()[k] -= factor * d;
          }
        }
      });
}

template <typename T>
Var<T> mse(const Var<T>& prediction, const Tensor<T>& target) {
  require_same_shape<T>(prediction.shape(), target.shape(), "mse");
  const std::size_t N = target.size();
  T total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const T d = prediction.value()[i] - target[i];
    total += d * d;
  }
  Node<T>* pn = prediction.node();
  return record<T>(scalar_tensor(total / static_cast<T>(N)), "mse", {prediction},
                   [pn, target, N](const Tensor<T>& gy) {
                     T* dp = pn->grad_buffer().data().data();
                     const T f = T(2) * gy[0] / static_cast<T>(N);
                     for (std::size_t i = 0; i < N; ++i)
                       dp[i] += f * (pn->value[i] - target[i]);
                   });
}

template <typename T>
Var<T> binary_cross_entropy(const Var<T>& probs, const Tensor<T>& target) {
  require_same_shape<T>(probs.shape(), target.shape(), "binary_cross_entropy");
  constexpr T eps = T(1e-7);
  const std::size_t N = target.size();
  double total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const T p = std::clamp(probs.value()[i], eps, T(1) - eps);
    const T y = target[i];
    if (y != T(0) && y != T(1)) {
      throw UsageError("binary_cross_entropy: targets must be 0 or 1");
    }
    total -= y == T(1) ? std::log(p) : std::log(T(1) - p);
  }
  Node<T>* pn = probs.node();
  return record<T>(
      scalar_tensor(static_cast<T>(total / static_cast<double>(N))),
      "binary_cross_entropy", {probs}, [pn, target, N](const Tensor<T>& gy) {
        T* dp = pn->grad_buffer().data().data();
        const T f = gy[0] / static_cast<T>(N);
        for (std::size_t i = 0; i < N; ++i) {
          const T p = pn->value[i];
          if (p <= eps || p >= T(1) - eps) continue;
          dp[i] += target[i] == T(1) ? -f / p : f / (T(1) - p);
        }
      });
}

#define TVW_INSTANTIATE_OPS(T)                                                  \
  template Var<T> conv<T>(const Var<T>&, const Var<T>&, const Var<T>&,          \
                          ConvParams);                                          \
  template Var<T> upsample_nearest<T>(const Var<T>&, std::size_t);              \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);             \
  template Var<T> dense<T>(const Var<T>&, const Var<T>&, const Var<T>&);        \
  template Var<T> relu<T>(const Var<T>&);                                       \
  template Var<T> sigmoid<T>(const Var<T>&);                                    \
  template Var<T> softmax<T>(const Var<T>&);                                    \
  template Var<T> global_avg_pool<T>(const Var<T>&);                            \
  template Var<T> reshape<T>(const Var<T>&, Shape);                             \
  template Var<T> flatten<T>(const Var<T>&);                                    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                         \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                         \
  template Var<T> scale<T>(const Var<T>&, T);                                   \
  template Var<T> sum<T>(const Var<T>&);                                        \
  template Var<T> categorical_cross_entropy<T>(const Var<T>&, const Tensor<T>&); \
  template Var<T> restoration_loss<T>(const Var<T>&, const Var<T>&, bool);      \
  template Var<T> mse<T>(const Var<T>&, const Tensor<T>&);                      \
  template Var<T> binary_cross_entropy<T>(const Var<T>&, const Tensor<T>&);

TVW_INSTANTIATE_OPS(float)
TVW_INSTANTIATE_OPS(double)

}  // namespace tvw::ops
