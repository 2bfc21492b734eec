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

#include <cmath>
#include <cstddef>
#include <vector>

#include "mrbc/graph.hpp"
#include "mrbc/tensor.hpp"

namespace mrbc {

/// Half-open rectangle of feature-map locations.
struct Region {
  std::size_t row0, row1, col0, col1;

  std::size_t area() const { return (row1 - row0) * (col1 - col0); }
};

/// Partition of an H x W feature map into a row-major grid of rectangular
/// regions. Interior cells are exactly cell_h x cell_w; when the map is not
/// divisible, only the last row/column band is smaller, so every location
/// belongs to exactly one region.
struct RegionGrid {
  std::size_t feature_h = 0, feature_w = 0;
  std::size_t cell_h = 0, cell_w = 0;
  std::vector<Region> regions;

  std::size_t count() const { return regions.size(); }
};

inline RegionGrid make_region_grid(std::size_t h, std::size_t w, std::size_t cell_h,
                                   std::size_t cell_w) {
  if (h == 0 || w == 0 || cell_h == 0 || cell_w == 0 || cell_h > h || cell_w > w)
    throw DimensionError("make_region_grid: invalid geometry " + std::to_string(h) + "x" +
                         std::to_string(w) + " with cell " + std::to_string(cell_h) + "x" +
                         std::to_string(cell_w));
  RegionGrid grid{h, w, cell_h, cell_w, {}};
  const std::size_t rows = (h + cell_h - 1) / cell_h;
  const std::size_t cols = (w + cell_w - 1) / cell_w;
  grid.regions.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      grid.regions.push_back(Region{r * cell_h, std::min((r + 1) * cell_h, h), c * cell_w,
                                    std::min((c + 1) * cell_w, w)});
  return grid;
}

/// Single region covering the whole map: multi-region pooling degenerates to
/// global bilinear pooling.
inline RegionGrid full_region_grid(std::size_t h, std::size_t w) {
  return make_region_grid(h, w, h, w);
}

// ---------------------------------------------------------------------------
// bilinear_outer: per-location outer product of two feature stacks.
//   fa [M x H x W], fb [N x H x W]  ->  [(M*N) x H x W]
// out[(m*N + n), l] = fa[m, l] * fb[n, l].
// ---------------------------------------------------------------------------

inline Tensor bilinear_outer_forward(const Tensor& fa, const Tensor& fb) {
  if (fa.rank() != 3 || fb.rank() != 3 || fa.extent(1) != fb.extent(1) ||
      fa.extent(2) != fb.extent(2))
    throw_shape_mismatch("bilinear_outer", fa.shape(), fb.shape());
  const std::size_t m = fa.extent(0), n = fb.extent(0);
  const std::size_t hw = fa.extent(1) * fa.extent(2);
  Tensor out({m * n, fa.extent(1), fa.extent(2)});
  const double* pa = fa.data();
  const double* pb = fb.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double* a = pa + i * hw;
      const double* b = pb + j * hw;
      double* o = po + (i * n + j) * hw;
      for (std::size_t l = 0; l < hw; ++l) o[l] = a[l] * b[l];
    }
  return out;
}

inline Var bilinear_outer(Var fa, Var fb) {
  Graph& g = *fa.graph;
  Tensor out = bilinear_outer_forward(fa.value(), fb.value());
  return g.op(std::move(out), {fa, fb}, [ia = fa.id, ib = fb.id](Graph& gg, const Tensor& go) {
    const Tensor& av = gg.value(ia);
    const Tensor& bv = gg.value(ib);
    const std::size_t m = av.extent(0), n = bv.extent(0);
    const std::size_t hw = av.extent(1) * av.extent(2);
    Tensor ga(av.shape());
    Tensor gb(bv.shape());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double* gout = go.data() + (i * n + j) * hw;
        const double* a = av.data() + i * hw;
        const double* b = bv.data() + j * hw;
        double* da = ga.data() + i * hw;
        double* db = gb.data() + j * hw;
        for (std::size_t l = 0; l < hw; ++l) {
          da[l] += gout[l] * b[l];
          db[l] += gout[l] * a[l];
        }
      }
    gg.accumulate_grad(ia, ga);
    gg.accumulate_grad(ib, gb);
  });
}

// ---------------------------------------------------------------------------
// region_pool: sum the bilinear map over each region of the grid.
//   bmap [(M*N) x H x W]  ->  descriptor [R x (M*N)]
// Row i is the sum of bmap over the locations of region i. Backward copies
// each region row's gradient to every member location.
// ---------------------------------------------------------------------------

inline Tensor region_pool_forward(const Tensor& bmap, const RegionGrid& grid) {
  if (bmap.rank() != 3 || bmap.extent(1) != grid.feature_h || bmap.extent(2) != grid.feature_w)
    throw DimensionError("region_pool: map " + shape_string(bmap.shape()) + " does not match grid " +
                         std::to_string(grid.feature_h) + "x" + std::to_string(grid.feature_w));
  const std::size_t mn = bmap.extent(0);
  const std::size_t h = grid.feature_h, w = grid.feature_w;
  Tensor out({grid.count(), mn});
  for (std::size_t r = 0; r < grid.count(); ++r) {
    const Region& reg = grid.regions[r];
    double* row = out.data() + r * mn;
    for (std::size_t f = 0; f < mn; ++f) {
      const double* plane = bmap.data() + f * h * w;
      double acc = 0.0;
      for (std::size_t i = reg.row0; i < reg.row1; ++i)
        for (std::size_t j = reg.col0; j < reg.col1; ++j) acc += plane[i * w + j];
      row[f] = acc;
    }
  }
  return out;
}

inline Var region_pool(Var bmap, const RegionGrid& grid) {
  Graph& g = *bmap.graph;
  Tensor out = region_pool_forward(bmap.value(), grid);
  return g.op(std::move(out), {bmap}, [ib = bmap.id, grid](Graph& gg, const Tensor& go) {
    const Tensor& bv = gg.value(ib);
    const std::size_t mn = bv.extent(0);
    const std::size_t h = grid.feature_h, w = grid.feature_w;
    Tensor gb(bv.shape());
    for (std::size_t r = 0; r < grid.count(); ++r) {
      const Region& reg = grid.regions[r];
      const double* row = go.data() + r * mn;
      for (std::size_t f = 0; f < mn; ++f) {
        double* plane = gb.data() + f * h * w;
        for (std::size_t i = reg.row0; i < reg.row1; ++i)
          for (std::size_t j = reg.col0; j < reg.col1; ++j) plane[i * w + j] += row[f];
      }
    }
    gg.accumulate_grad(ib, gb);
  });
}

// ---------------------------------------------------------------------------
// assemble_descriptor: fixed-order concatenation of the three per-part
// descriptor matrices into one flat vector of length 3*R*MN. Order is
// part (top, middle, bottom), then region row-major, then feature index.
// ---------------------------------------------------------------------------

inline Tensor assemble_descriptor_forward(const std::vector<Tensor>& parts) {
  if (parts.size() != 3)
    throw ContractError("assemble_descriptor: expected 3 parts, got " + std::to_string(parts.size()));
  for (const Tensor& p : parts)
    if (p.rank() != 2 || !p.same_shape(parts[0]))
      throw_shape_mismatch("assemble_descriptor", parts[0].shape(), p.shape());
  const std::size_t per_part = parts[0].size();
  Tensor out({3 * per_part});
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < per_part; ++i) out[p * per_part + i] = parts[p][i];
  return out;
}

inline Var assemble_descriptor(Graph& g, const std::vector<Var>& parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  Tensor out = assemble_descriptor_forward(values);
  std::vector<std::uint32_t> ids{parts[0].id, parts[1].id, parts[2].id};
  return g.op(std::move(out), parts, [ids](Graph& gg, const Tensor& go) {
    const std::size_t per_part = go.size() / 3;
    for (std::size_t p = 0; p < 3; ++p) {
      Tensor gp(gg.value(ids[p]).shape());
      for (std::size_t i = 0; i < per_part; ++i) gp[i] = go[p * per_part + i];
      gg.accumulate_grad(ids[p], gp);
    }
  });
}

// ---------------------------------------------------------------------------
// Optional descriptor post-processing: per-region signed square root followed
// by L2 normalization of each region row. Off by default.
// ---------------------------------------------------------------------------

inline Var region_normalize(Var desc, double l2_epsilon = 1e-12) {
  Graph& g = *desc.graph;
  const Tensor& d = desc.value();
  if (d.rank() != 2) throw DimensionError("region_normalize: descriptor must be RxMN");
  const std::size_t rows = d.extent(0), cols = d.extent(1);
  Tensor ssqrt(d.shape());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double v = d[i];
    ssqrt[i] = v >= 0.0 ? std::sqrt(v) : -std::sqrt(-v);
  }
  Tensor out(d.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += ssqrt.at(r, c) * ssqrt.at(r, c);
    norms[r] = std::sqrt(acc + l2_epsilon);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = ssqrt.at(r, c) / norms[r];
  }
  auto saved = std::make_shared<std::pair<Tensor, std::vector<double>>>(ssqrt, norms);
  return g.op(std::move(out), {desc}, [id = desc.id, saved](Graph& gg, const Tensor& go) {
    const Tensor& d = gg.value(id);
    const Tensor& s = saved->first;
    const std::vector<double>& norms = saved->second;
    const std::size_t rows = d.extent(0), cols = d.extent(1);
    Tensor gd(d.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double nr = norms[r];
      double ddot = 0.0;  // <go_row, s_row>
      for (std::size_t c = 0; c < cols; ++c) ddot += go.at(r, c) * s.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) {
        // d/ds of s/||s||, then d/dv of signed sqrt (dv = 1/(2 sqrt|v|))
        const double gs = go.at(r, c) / nr - s.at(r, c) * ddot / (nr * nr * nr);
        const double av = std::abs(d.at(r, c));
        const double dsdv = av > 0.0 ? 0.5 / std::sqrt(av) : 0.0;
        gd.at(r, c) = gs * dsdv;
      }
    }
    gg.accumulate_grad(id, gd);
  });
}

}  // namespace mrbc
