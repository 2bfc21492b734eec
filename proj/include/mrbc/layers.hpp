/*
 * Copyright 2026 the mrbc authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrbc/graph.hpp"
#include "mrbc/rng.hpp"
#include "mrbc/tensor.hpp"

namespace mrbc {

enum class Mode { train, eval };

/// Valid (no padding), stride-1 convolution geometry.
struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;

  std::size_t out_h(std::size_t in_h) const { return in_h - kernel_h + 1; }
  std::size_t out_w(std::size_t in_w) const { return in_w - kernel_w + 1; }
};

// ---------------------------------------------------------------------------
// ParamStore: named trainable tensors plus their SGD momentum buffers.
// Iteration order is insertion order, which is deterministic given a config,
// so checkpoints and gradient reports are stable.
// ---------------------------------------------------------------------------

class ParamStore {
 public:
  void add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter " + name);
    check_finite(value, "ParamStore::add");
    index_[name] = names_.size();
    names_.push_back(name);
    momentum_.emplace_back(value.shape());
    values_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& value(const std::string& name) { return values_[find(name)]; }
  const Tensor& value(const std::string& name) const { return values_[find(name)]; }
  Tensor& momentum(const std::string& name) { return momentum_[find(name)]; }
  const Tensor& momentum(const std::string& name) const { return momentum_[find(name)]; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  std::size_t total_parameters() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.size();
    return n;
  }

 private:
  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamStore: unknown parameter " + name);
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> momentum_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform init in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                             std::size_t fan_out, RngStream stream) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = stream.uniform(-bound, bound);
  return t;
}

// ---------------------------------------------------------------------------
// conv2d: valid cross-correlation, stride 1.
//   x [C_in x H x W], w [C_out x C_in x kh x kw], b [C_out]
// Forward runs im2col + GEMM; conv2d_naive is the direct 6-loop form kept as
// the reference the bench harness gates against.
// ---------------------------------------------------------------------------

namespace detail {

inline void conv_check(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 3) throw DimensionError("conv2d: input must be CxHxW, got " + shape_string(x.shape()));
  if (w.rank() != 4) throw DimensionError("conv2d: kernel must be OxIxKhxKw, got " + shape_string(w.shape()));
  if (w.extent(1) != x.extent(0)) throw_shape_mismatch("conv2d: channels", x.shape(), w.shape());
  if (b.rank() != 1 || b.extent(0) != w.extent(0))
    throw_shape_mismatch("conv2d: bias", b.shape(), w.shape());
  if (x.extent(1) < w.extent(2) || x.extent(2) < w.extent(3))
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + " smaller than kernel " +
                         shape_string(w.shape()));
}

/// col [C_in*kh*kw x out_h*out_w], row index = (c*kh + di)*kw + dj.
inline std::vector<double> im2col(const Tensor& x, std::size_t kh, std::size_t kw) {
  const std::size_t c_in = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  std::vector<double> col(c_in * kh * kw * oh * ow);
  const double* xd = x.data();
  std::size_t row = 0;
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t di = 0; di < kh; ++di)
      for (std::size_t dj = 0; dj < kw; ++dj, ++row) {
        double* dst = col.data() + row * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          const double* src = xd + (c * h + i + di) * w + dj;
          for (std::size_t j = 0; j < ow; ++j) dst[i * ow + j] = src[j];
        }
      }
  return col;
}

/// Scatter-add of a col matrix back onto the input layout.
inline void col2im_add(const std::vector<double>& col, Tensor& gx, std::size_t kh, std::size_t kw) {
  const std::size_t c_in = gx.extent(0), h = gx.extent(1), w = gx.extent(2);
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  double* xd = gx.data();
  std::size_t row = 0;
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t di = 0; di < kh; ++di)
      for (std::size_t dj = 0; dj < kw; ++dj, ++row) {
        const double* src = col.data() + row * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          double* dst = xd + (c * h + i + di) * w + dj;
          for (std::size_t j = 0; j < ow; ++j) dst[j] += src[i * ow + j];
        }
      }
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::conv_check(x, w, b);
  const std::size_t c_out = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const std::size_t oh = x.extent(1) - kh + 1, ow = x.extent(2) - kw + 1;
  const std::size_t k = w.extent(1) * kh * kw;
  const std::vector<double> col = detail::im2col(x, kh, kw);
  Tensor out({c_out, oh, ow});
  detail::gemm(w.data(), col.data(), out.data(), c_out, k, oh * ow);
  for (std::size_t c = 0; c < c_out; ++c) {
    double* o = out.data() + c * oh * ow;
    const double bias = b[c];
    for (std::size_t i = 0; i < oh * ow; ++i) o[i] += bias;
  }
  return out;
}

inline Tensor conv2d_naive(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::conv_check(x, w, b);
  const std::size_t c_out = w.extent(0), c_in = w.extent(1), kh = w.extent(2), kw = w.extent(3);
  const std::size_t oh = x.extent(1) - kh + 1, ow = x.extent(2) - kw + 1;
  Tensor out({c_out, oh, ow});
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = b[o];
        for (std::size_t c = 0; c < c_in; ++c)
          for (std::size_t di = 0; di < kh; ++di)
            for (std::size_t dj = 0; dj < kw; ++dj)
              acc += x.at(c, i + di, j + dj) * w.at(o, c, di, dj);
        out.at(o, i, j) = acc;
      }
  return out;
}

inline Var conv2d(Var x, Var w, Var b) {
  Graph& g = *x.graph;
  Tensor out = conv2d_forward(x.value(), w.value(), b.value());
  return g.op(std::move(out), {x, w, b},
              [ix = x.id, iw = w.id, ib = b.id](Graph& gg, const Tensor& go) {
                const Tensor& xv = gg.value(ix);
                const Tensor& wv = gg.value(iw);
                const std::size_t c_out = wv.extent(0), kh = wv.extent(2), kw = wv.extent(3);
                const std::size_t k = wv.extent(1) * kh * kw;
                const std::size_t ohw = go.extent(1) * go.extent(2);
                // bias: sum over spatial positions
                Tensor gb({c_out});
                for (std::size_t c = 0; c < c_out; ++c) {
                  double acc = 0.0;
                  const double* gp = go.data() + c * ohw;
                  for (std::size_t i = 0; i < ohw; ++i) acc += gp[i];
                  gb[c] = acc;
                }
                gg.accumulate_grad(ib, gb);
                // weights: g_mat [c_out x ohw] * col^T  (col recomputed)
                const std::vector<double> col = detail::im2col(xv, kh, kw);
                Tensor gw(wv.shape());
                detail::gemm_bt(go.data(), col.data(), gw.data(), c_out, ohw, k);
                gg.accumulate_grad(iw, gw);
                // input: col2im(w_mat^T * g_mat)
                std::vector<double> gcol(k * ohw);
                detail::gemm_at(wv.data(), go.data(), gcol.data(), k, c_out, ohw);
                Tensor gx(xv.shape());
                detail::col2im_add(gcol, gx, kh, kw);
                gg.accumulate_grad(ix, gx);
              });
}

// ---------------------------------------------------------------------------
// 2x2 / stride-2 max pooling, floor semantics: a trailing odd row/column is
// dropped. Backward routes the gradient to the window argmax; ties go to the
// first element in (0,0),(0,1),(1,0),(1,1) scan order.
// ---------------------------------------------------------------------------

inline Tensor maxpool2_forward(const Tensor& x, std::vector<std::uint32_t>* argmax = nullptr) {
  if (x.rank() != 3) throw DimensionError("maxpool2: input must be CxHxW, got " + shape_string(x.shape()));
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (h < 2 || w < 2)
    throw DimensionError("maxpool2: spatial extent too small in " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({c, oh, ow});
  if (argmax) argmax->assign(c * oh * ow, 0);
  const double* xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double best = -1.0;
        std::uint32_t best_idx = 0;
        bool first = true;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
            const double v = xd[idx];
            if (first || v > best) {
              best = v;
              best_idx = static_cast<std::uint32_t>(idx);
              first = false;
            }
          }
        out.at(ch, i, j) = best;
        if (argmax) (*argmax)[(ch * oh + i) * ow + j] = best_idx;
      }
  return out;
}

inline Var maxpool2(Var x) {
  Graph& g = *x.graph;
  auto argmax = std::make_shared<std::vector<std::uint32_t>>();
  Tensor out = maxpool2_forward(x.value(), argmax.get());
  return g.op(std::move(out), {x}, [ix = x.id, argmax](Graph& gg, const Tensor& go) {
    Tensor gx(gg.value(ix).shape());
    for (std::size_t i = 0; i < go.size(); ++i) gx[(*argmax)[i]] += go[i];
    gg.accumulate_grad(ix, gx);
  });
}

// ---------------------------------------------------------------------------
// ReLU. Subgradient 0 at the kink.
// ---------------------------------------------------------------------------

inline Tensor relu_forward(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

inline Var relu(Var x) {
  Graph& g = *x.graph;
  return g.op(relu_forward(x.value()), {x}, [ix = x.id](Graph& gg, const Tensor& go) {
    const Tensor& xv = gg.value(ix);
    Tensor gx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = xv[i] > 0.0 ? go[i] : 0.0;
    gg.accumulate_grad(ix, gx);
  });
}

// ---------------------------------------------------------------------------
// Fully connected: y = w x + b with x rank-1.
// ---------------------------------------------------------------------------

inline Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 1 || w.rank() != 2 || w.extent(1) != x.extent(0))
    throw_shape_mismatch("fc", w.shape(), x.shape());
  if (b.rank() != 1 || b.extent(0) != w.extent(0)) throw_shape_mismatch("fc: bias", b.shape(), w.shape());
  const std::size_t d_out = w.extent(0), d_in = w.extent(1);
  Tensor out({d_out});
  detail::gemm(w.data(), x.data(), out.data(), d_out, d_in, 1);
  for (std::size_t i = 0; i < d_out; ++i) out[i] += b[i];
  return out;
}

inline Var fc(Var x, Var w, Var b) {
  Graph& g = *x.graph;
  Tensor out = fc_forward(x.value(), w.value(), b.value());
  return g.op(std::move(out), {x, w, b},
              [ix = x.id, iw = w.id, ib = b.id](Graph& gg, const Tensor& go) {
                const Tensor& xv = gg.value(ix);
                const Tensor& wv = gg.value(iw);
                const std::size_t d_out = wv.extent(0), d_in = wv.extent(1);
                gg.accumulate_grad(ib, go);
                Tensor gw(wv.shape());  // outer product go x^T
                for (std::size_t o = 0; o < d_out; ++o) {
                  const double gv = go[o];
                  double* row = gw.data() + o * d_in;
                  for (std::size_t i = 0; i < d_in; ++i) row[i] = gv * xv[i];
                }
                gg.accumulate_grad(iw, gw);
                Tensor gx({d_in});  // w^T go
                detail::gemm_at(wv.data(), go.data(), gx.data(), d_in, d_out, 1);
                gg.accumulate_grad(ix, gx);
              });
}

// ---------------------------------------------------------------------------
// Inverted dropout: each unit is zeroed with probability p during training
// and survivors are scaled by 1/(1-p); evaluation is the identity. The mask
// comes from the explicit stream, one draw per element.
// ---------------------------------------------------------------------------

inline Var dropout(Var x, double p, RngStream& stream, Mode mode) {
  if (!(p >= 0.0 && p < 1.0))
    throw ContractError("dropout: p must be in [0,1), got " + std::to_string(p));
  Graph& g = *x.graph;
  if (mode == Mode::eval) {
    return g.op(x.value(), {x},
                [ix = x.id](Graph& gg, const Tensor& go) { gg.accumulate_grad(ix, go); });
  }
  const Tensor& xv = x.value();
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double m = stream.uniform() >= p ? keep_scale : 0.0;
    (*mask)[i] = m;
    out[i] = xv[i] * m;
  }
  return g.op(std::move(out), {x}, [ix = x.id, mask](Graph& gg, const Tensor& go) {
    Tensor gx(gg.value(ix).shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * (*mask)[i];
    gg.accumulate_grad(ix, gx);
  });
}

}  // namespace mrbc
