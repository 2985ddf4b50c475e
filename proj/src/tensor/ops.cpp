#include "mexma/tensor/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mexma/tensor/kernels.hpp"

namespace mexma::tensor {

namespace {

template <typename T>
Graph<T>& graph_of(const char* primitive, std::initializer_list<const Tensor<T>*> inputs) {
  Graph<T>* g = nullptr;
  for (const auto* t : inputs) {
    if (!t->attached()) throw GraphError(std::string(primitive) + ": input is not attached to a graph");
    if (g && t->graph() != g) throw GraphError(std::string(primitive) + ": inputs belong to different graphs");
    g = t->graph();
  }
  return *g;
}

template <typename T>
std::vector<T> copy_of(std::span<const T> s) {
  return std::vector<T>(s.begin(), s.end());
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

// Copies lane (o, i) of an (outer, extent, inner) layout into `lane`.
template <typename T>
void read_lane(std::span<const T> x, const AxisSplit& s, std::size_t o, std::size_t i, T* lane) {
  const T* base = x.data() + o * s.extent * s.inner + i;
  for (std::size_t j = 0; j < s.extent; ++j) lane[j] = base[j * s.inner];
}

template <typename T>
void write_lane(std::span<T> y, const AxisSplit& s, std::size_t o, std::size_t i, const T* lane) {
  T* base = y.data() + o * s.extent * s.inner + i;
  for (std::size_t j = 0; j < s.extent; ++j) base[j * s.inner] = lane[j];
}

template <typename T>
void add_lane(std::span<T> y, const AxisSplit& s, std::size_t o, std::size_t i, const T* lane) {
  T* base = y.data() + o * s.extent * s.inner + i;
  for (std::size_t j = 0; j < s.extent; ++j) base[j * s.inner] += lane[j];
}

// Applies `f(lane_in, lane_out)` to each lane along the split axis.
template <typename T, typename F>
void for_each_lane(std::span<const T> x, std::span<T> y, const AxisSplit& s, F&& f) {
  std::vector<T> in(s.extent), out(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      read_lane(x, s, o, i, in.data());
      f(in.data(), out.data());
      write_lane(y, s, o, i, out.data());
    }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

// out[idx] = in[permuted idx] with out.shape[d] = in.shape[perm[d]].
template <typename T>
std::vector<T> permute(std::span<const T> in, const Shape& in_shape,
                       const std::vector<std::size_t>& perm) {
  const std::size_t rank = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(rank);
  std::vector<std::size_t> step(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = in_shape[perm[d]];
    step[d] = in_strides[perm[d]];
  }
  std::vector<T> out(in.size());
  if (out.empty()) return out;
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  const std::size_t last = rank - 1;
  for (std::size_t pos = 0; pos < out.size();) {
    // Innermost run.
    const std::size_t run = out_shape[last];
    const std::size_t st = step[last];
    for (std::size_t j = 0; j < run; ++j) out[pos++] = in[src + j * st];
    // Advance the counter past the innermost axis.
    std::size_t d = last;
    while (d-- > 0) {
      ++counter[d];
      src += step[d];
      if (counter[d] < out_shape[d]) break;
      src -= step[d] * out_shape[d];
      counter[d] = 0;
    }
  }
  return out;
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  auto& g = graph_of<T>("matmul", {&a, &b});
  const Shape as = a.shape();
  const Shape bs = b.shape();
  const bool batched = as.size() == 3;
  if (!((as.size() == 2 && bs.size() == 2) || (as.size() == 3 && bs.size() == 3)))
    throw ShapeError("matmul", "rank-2 or rank-3 operands of equal rank, got " + to_string(as) +
                                   " and " + to_string(bs));
  const std::size_t batch = batched ? as[0] : 1;
  if (batched && bs[0] != batch)
    throw ShapeError("matmul", "batch extent " + std::to_string(batch), bs);
  const std::size_t ar = as[as.size() - 2], ac = as.back();
  const std::size_t br = bs[bs.size() - 2], bc = bs.back();
  const std::size_t m = transpose_a ? ac : ar;
  const std::size_t k = transpose_a ? ar : ac;
  const std::size_t kb = transpose_b ? bc : br;
  const std::size_t n = transpose_b ? br : bc;
  if (k != kb)
    throw ShapeError("matmul", "inner extents to agree for " + to_string(as) + " x", bs);

  // op(B) is materialized only when transposed; op(A) uses the strided kernel instead.
  std::vector<T> b_t;
  if (transpose_b) {
    b_t.resize(b.values().size());
    kernels::transpose_batched<T>(batch, br, bc, b.values(), b_t);
  }
  std::vector<T> out(batch * m * n);
  const std::span<const T> op_b = transpose_b ? std::span<const T>(b_t) : b.values();
  if (transpose_a)
    kernels::parallel::gemm_tn<T>(batch, m, n, k, a.values(), op_b, out);
  else
    kernels::parallel::gemm<T>(batch, m, n, k, a.values(), op_b, out);

  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  const NodeId ia = a.id(), ib = b.id();
  return g.record(
      "matmul", out_shape, std::move(out), {ia, ib},
      [=](Graph<T>& gr, NodeId, std::span<const T> grad) {
        const auto av = gr.value(ia);
        const auto bv = gr.value(ib);
        if (gr.requires_grad(ia)) {
          // d op(A) = G * op(B)^T : (m x n) * (n x k)
          std::vector<T> bt;
          if (!transpose_b) {
            bt.resize(bv.size());
            kernels::transpose_batched<T>(batch, k, n, bv, bt);
          }
          std::vector<T> da(batch * m * k);
          kernels::parallel::gemm<T>(batch, m, k, n, grad,
                                     transpose_b ? bv : std::span<const T>(bt), da);
          if (transpose_a) {
            std::vector<T> t(da.size());
            kernels::transpose_batched<T>(batch, m, k, da, t);
            da = std::move(t);
          }
          gr.accumulate(ia, da);
        }
        if (gr.requires_grad(ib)) {
          // d op(B) = op(A)^T * G : (k x m) * (m x n)
          std::vector<T> db(batch * k * n);
          if (transpose_a)
            kernels::parallel::gemm<T>(batch, k, n, m, av, grad, db);
          else
            kernels::parallel::gemm_tn<T>(batch, k, n, m, av, grad, db);
          if (transpose_b) {
            std::vector<T> t(db.size());
            kernels::transpose_batched<T>(batch, k, n, db, t);
            db = std::move(t);
          }
          gr.accumulate(ib, db);
        }
      });
}

// ---------------------------------------------------------------------------
// elementwise binary

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto& g = graph_of<T>("add", {&a, &b});
  if (!is_suffix(a.shape(), b.shape()))
    throw ShapeError("add", to_string(a.shape()) + " or a trailing suffix of it", b.shape());
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t inner = bv.size();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < av.size(); o += inner)
    for (std::size_t j = 0; j < inner; ++j) out[o + j] = av[o + j] + bv[j];
  const NodeId ia = a.id(), ib = b.id();
  return g.record("add", a.shape(), std::move(out), {ia, ib},
                  [=](Graph<T>& gr, NodeId, std::span<const T> grad) {
                    gr.accumulate(ia, grad);
                    if (gr.requires_grad(ib)) {
                      auto slot = gr.grad_slot(ib);
                      for (std::size_t o = 0; o < grad.size(); o += inner)
                        for (std::size_t j = 0; j < inner; ++j) slot[j] += grad[o + j];
                    }
                  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto& g = graph_of<T>("sub", {&a, &b});
  if (a.shape() != b.shape()) throw ShapeError("sub", to_string(a.shape()), b.shape());
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const NodeId ia = a.id(), ib = b.id();
  return g.record("sub", a.shape(), std::move(out), {ia, ib},
                  [=](Graph<T>& gr, NodeId, std::span<const T> grad) {
                    gr.accumulate(ia, grad);
                    if (gr.requires_grad(ib)) {
                      auto slot = gr.grad_slot(ib);
                      for (std::size_t i = 0; i < grad.size(); ++i) slot[i] -= grad[i];
                    }
                  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto& g = graph_of<T>("elementwise-mul", {&a, &b});
  if (!is_suffix(a.shape(), b.shape()))
    throw ShapeError("elementwise-mul", to_string(a.shape()) + " or a trailing suffix of it",
                     b.shape());
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t inner = bv.size();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < av.size(); o += inner)
    for (std::size_t j = 0; j < inner; ++j) out[o + j] = av[o + j] * bv[j];
  const NodeId ia = a.id(), ib = b.id();
  return g.record("elementwise-mul", a.shape(), std::move(out), {ia, ib},
                  [=](Graph<T>& gr, NodeId, std::span<const T> grad) {
                    const auto x = gr.value(ia);
                    const auto y = gr.value(ib);
                    if (gr.requires_grad(ia)) {
                      auto slot = gr.grad_slot(ia);
                      for (std::size_t o = 0; o < grad.size(); o += inner)
                        for (std::size_t j = 0; j < inner; ++j) slot[o + j] += grad[o + j] * y[j];
                    }
                    if (gr.requires_grad(ib)) {
                      auto slot = gr.grad_slot(ib);
                      for (std::size_t o = 0; o < grad.size(); o += inner)
                        for (std::size_t j = 0; j < inner; ++j) slot[j] += grad[o + j] * x[o + j];
                    }
                  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto& g = graph_of<T>("scalar-scale", {&a});
  std::vector<T> out = copy_of(a.values());
  for (auto& v : out) v *= factor;
  const NodeId ia = a.id();
  return g.record("scalar-scale", a.shape(), std::move(out), {ia},
                  [=](Graph<T>& gr, NodeId, std::span<const T> grad) {
                    auto slot = gr.grad_slot(ia);
                    for (std::size_t i = 0; i < grad.size(); ++i) slot[i] += factor * grad[i];
                  });
}

// ---------------------------------------------------------------------------
// structural

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", "at least one input");
  Graph<T>* gp = nullptr;
  for (const auto& p : parts) {
    if (!p.attached()) throw GraphError("concat: input is not attached to a graph");
    if (gp && p.graph() != gp) throw GraphError("concat: inputs belong to different graphs");
    gp = p.graph();
  }
  const Shape first = parts[0].shape();
  const std::size_t ax = normalize_axis("concat", axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape s = p.shape();
    Shape expect = first;
    if (s.size() == first.size()) expect[ax] = s[ax];
    if (s != expect) throw ShapeError("concat", to_string(expect), s);
    extents.push_back(s[ax]);
    out_shape[ax] += s[ax];
  }
  const AxisSplit os = split_at(out_shape, ax);
  std::vector<T> out(numel(out_shape));
  std::vector<NodeId> ids;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].values();
    const std::size_t chunk = extents[p] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(v.data() + o * chunk, chunk, out.data() + o * os.extent * os.inner + offset * os.inner);
    offset += extents[p];
    ids.push_back(parts[p].id());
  }
  return gp->record("concat", out_shape, std::move(out), ids,
                    [=](Graph<T>& gr, NodeId, std::span<const T> grad) {
                      std::size_t off = 0;
                      for (std::size_t p = 0; p < ids.size(); ++p) {
                        const std::size_t chunk = extents[p] * os.inner;
                        if (gr.requires_grad(ids[p])) {
                          auto slot = gr.grad_slot(ids[p]);
                          for (std::size_t o = 0; o < os.outer; ++o) {
                            const T* src = grad.data() + o * os.extent * os.inner + off * os.inner;
                            T* dst = slot.data() + o * chunk;
                            for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
                          }
                        }
                        off += extents[p];
                      }
                    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length) {
  auto& g = graph_of<T>("slice", {&a});
  const Shape s = a.shape();
  const std::size_t ax = normalize_axis("slice", axis, s.size());
  if (length == 0 || start + length > s[ax])
    throw ShapeError("slice", "range [" + std::to_string(start) + ", " +
                                  std::to_string(start + length) + ") within axis " +
                                  std::to_string(ax) + " of",
                     s);
  const AxisSplit is = split_at(s, ax);
  Shape out_shape = s;
  out_shape[ax] = length;
  const std::size_t chunk = length * is.inner;
  std::vector<T> out(is.outer * chunk);
  const auto v = a.values();
  for (std::size_t o = 0; o < is.outer; ++o)
    std::copy_n(v.data() + o * is.extent * is.inner + start * is.inner, chunk, out.data() + o * chunk);
  const NodeId ia = a.id();
  return g.record("slice", out_shape, std::move(out), {ia},
                  [=](Graph<T>& gr, NodeId, std::span<const T> grad) {
                    auto slot = gr.grad_slot(ia);
                    for (std::size_t o = 0; o < is.outer; ++o) {
                      T* dst = slot.data() + o * is.extent * is.inner + start * is.inner;
                      const T* src = grad.data() + o * chunk;
                      for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
                    }
                  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> rows) {
  auto& g = graph_of<T>("gather-rows", {&table});
  const Shape s = table.shape();
  if (s.size() != 2) throw ShapeError("gather-rows", "rank-2 table", s);
  const std::size_t cols = s[1];
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * cols);
  const auto v = table.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= s[0])
      throw ShapeError("gather-rows", "row index " + std::to_string(idx[i]) + " below " +
                                          std::to_string(s[0]) + " for table",
                       s);
    std::copy_n(v.data() + idx[i] * cols, cols, out.data() + i * cols);
  }
  const NodeId it = table.id();
  Shape out_shape{idx.size(), cols};
  return g.record("gather-rows", std::move(out_shape), std::move(out), {it},
                  [=, idx = std::move(idx)](Graph<T>& gr, NodeId, std::span<const T> grad) {
                    auto slot = gr.grad_slot(it);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      T* dst = slot.data() + idx[i] * cols;
                      const T* src = grad.data() + i * cols;
                      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
                    }
                  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::vector<std::size_t> perm) {
  auto& g = graph_of<T>("transpose", {&a});
  const Shape s = a.shape();
  if (perm.empty()) {
    perm.resize(s.size());
    std::iota(perm.rbegin(), perm.rend(), std::size_t{0});
  }
  {
    std::vector<std::size_t> check = perm;
    std::sort(check.begin(), check.end());
    std::vector<std::size_t> ident(s.size());
    std::iota(ident.begin(), ident.end(), std::size_t{0});
    if (check != ident)
      throw ShapeError("transpose", "a permutation of the axes of", s);
  }
  Shape out_shape(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) out_shape[d] = s[perm[d]];
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t d = 0; d < perm.size(); ++d) inverse[perm[d]] = d;
  const NodeId ia = a.id();
  return g.record("transpose", out_shape, permute<T>(a.values(), s, perm), {ia},
                  [=](Graph<T>& gr, NodeId, std::span<const T> grad) {
                    gr.accumulate(ia, permute<T>(grad, out_shape, inverse));
                  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  auto& g = graph_of<T>("reshape", {&a});
  if (numel(shape) != a.numel())
    throw ShapeError("reshape", "element count " + std::to_string(a.numel()) + " for target",
                     shape);
  const NodeId ia = a.id();
  return g.record("reshape", std::move(shape), copy_of(a.values()), {ia},
                  [=](Graph<T>& gr, NodeId, std::span<const T> grad) { gr.accumulate(ia, grad); });
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  auto& g = graph_of<T>("stop-gradient", {&a});
  // No recorded input edge: nothing upstream can receive a gradient through here.
  return g.record("stop-gradient", a.shape(), copy_of(a.values()), {}, {});
}

template <typename T>
Tensor<T> masked_fill(const Tensor<T>& a, std::span<const std::uint8_t> mask, T value) {
  auto& g = graph_of<T>("masked-fill", {&a});
  if (mask.size() != a.numel())
    throw ShapeError("masked-fill", "mask of " + std::to_string(a.numel()) + " elements, got " +
                                        std::to_string(mask.size()));
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  std::vector<T> out = copy_of(a.values());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (m[i]) out[i] = value;
  const NodeId ia = a.id();
  return g.record("masked-fill", a.shape(), std::move(out), {ia},
                  [=, m = std::move(m)](Graph<T>& gr, NodeId, std::span<const T> grad) {
                    auto slot = gr.grad_slot(ia);
                    for (std::size_t i = 0; i < grad.size(); ++i)
                      if (!m[i]) slot[i] += grad[i];
                  });
}

// ---------------------------------------------------------------------------
// normalizations

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  auto& g = graph_of<T>("softmax", {&a});
  const Shape s = a.shape();
  const std::size_t ax = normalize_axis("softmax", axis, s.size());
  const AxisSplit sp = split_at(s, ax);
  std::vector<T> out(a.numel());
  if (sp.inner == 1) {
    kernels::parallel::softmax_rows<T>(sp.outer, sp.extent, a.values(), out);
  } else {
    for_each_lane<T>(a.values(), out, sp, [&](const T* in, T* o) {
      kernels::reference::softmax_rows<T>(1, sp.extent, std::span<const T>(in, sp.extent),
                                          std::span<T>(o, sp.extent));
    });
  }
  const NodeId ia = a.id();
  return g.record("softmax", s, std::move(out), {ia},
                  [=](Graph<T>& gr, NodeId self, std::span<const T> grad) {
                    const auto y = gr.value(self);
                    auto slot = gr.grad_slot(ia);
                    std::vector<T> yl(sp.extent), gl(sp.extent), dl(sp.extent);
                    for (std::size_t o = 0; o < sp.outer; ++o)
                      for (std::size_t i = 0; i < sp.inner; ++i) {
                        read_lane(y, sp, o, i, yl.data());
                        read_lane(grad, sp, o, i, gl.data());
                        T dot = 0;
                        for (std::size_t j = 0; j < sp.extent; ++j) dot += gl[j] * yl[j];
                        for (std::size_t j = 0; j < sp.extent; ++j) dl[j] = yl[j] * (gl[j] - dot);
                        add_lane(slot, sp, o, i, dl.data());
                      }
                  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, int axis, T eps) {
  auto& g = graph_of<T>("layer-norm", {&a});
  const Shape s = a.shape();
  const std::size_t ax = normalize_axis("layer-norm", axis, s.size());
  const AxisSplit sp = split_at(s, ax);
  std::vector<T> out(a.numel());
  std::vector<T> inv_std(sp.outer * sp.inner);
  if (sp.inner == 1) {
    kernels::parallel::layer_norm_rows<T>(sp.outer, sp.extent, eps, a.values(), out, inv_std);
  } else {
    std::size_t lane = 0;
    for_each_lane<T>(a.values(), out, sp, [&](const T* in, T* o) {
      kernels::reference::layer_norm_rows<T>(1, sp.extent, eps, std::span<const T>(in, sp.extent),
                                             std::span<T>(o, sp.extent),
                                             std::span<T>(&inv_std[lane++], 1));
    });
  }
  const NodeId ia = a.id();
  return g.record(
      "layer-norm", s, std::move(out), {ia},
      [=, inv_std = std::move(inv_std)](Graph<T>& gr, NodeId self, std::span<const T> grad) {
        const auto y = gr.value(self);
        auto slot = gr.grad_slot(ia);
        const T n = static_cast<T>(sp.extent);
        std::vector<T> yl(sp.extent), gl(sp.extent), dl(sp.extent);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            read_lane(y, sp, o, i, yl.data());
            read_lane(grad, sp, o, i, gl.data());
            T mean_g = 0, mean_gy = 0;
            for (std::size_t j = 0; j < sp.extent; ++j) {
              mean_g += gl[j];
              mean_gy += gl[j] * yl[j];
            }
            mean_g /= n;
            mean_gy /= n;
            const T inv = inv_std[o * sp.inner + i];
            for (std::size_t j = 0; j < sp.extent; ++j)
              dl[j] = inv * (gl[j] - mean_g - yl[j] * mean_gy);
            add_lane(slot, sp, o, i, dl.data());
          }
      });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& a, int axis, T eps) {
  auto& g = graph_of<T>("l2-normalize", {&a});
  const Shape s = a.shape();
  const std::size_t ax = normalize_axis("l2-normalize", axis, s.size());
  const AxisSplit sp = split_at(s, ax);
  std::vector<T> out(a.numel());
  std::vector<T> norms(sp.outer * sp.inner);
  std::size_t lane = 0;
  for_each_lane<T>(a.values(), out, sp, [&](const T* in, T* o) {
    T sq = 0;
    for (std::size_t j = 0; j < sp.extent; ++j) sq += in[j] * in[j];
    const T norm = std::sqrt(sq);
    norms[lane++] = norm;
    const T denom = std::max(norm, eps);
    for (std::size_t j = 0; j < sp.extent; ++j) o[j] = in[j] / denom;
  });
  const NodeId ia = a.id();
  return g.record(
      "l2-normalize", s, std::move(out), {ia},
      [=, norms = std::move(norms)](Graph<T>& gr, NodeId self, std::span<const T> grad) {
        const auto y = gr.value(self);
        auto slot = gr.grad_slot(ia);
        std::vector<T> yl(sp.extent), gl(sp.extent), dl(sp.extent);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            read_lane(y, sp, o, i, yl.data());
            read_lane(grad, sp, o, i, gl.data());
            const T norm = norms[o * sp.inner + i];
            if (norm > eps) {
              T dot = 0;
              for (std::size_t j = 0; j < sp.extent; ++j) dot += yl[j] * gl[j];
              for (std::size_t j = 0; j < sp.extent; ++j) dl[j] = (gl[j] - yl[j] * dot) / norm;
            } else {
              for (std::size_t j = 0; j < sp.extent; ++j) dl[j] = gl[j] / eps;
            }
            add_lane(slot, sp, o, i, dl.data());
          }
      });
}

// ---------------------------------------------------------------------------
// pointwise

namespace {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> pointwise(const char* name, const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  auto& g = graph_of<T>(name, {&a});
  const auto v = a.values();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = fwd(v[i]);
  const NodeId ia = a.id();
  return g.record(name, a.shape(), std::move(out), {ia},
                  [=](Graph<T>& gr, NodeId self, std::span<const T> grad) {
                    const auto x = gr.value(ia);
                    const auto y = gr.value(self);
                    auto slot = gr.grad_slot(ia);
                    for (std::size_t i = 0; i < grad.size(); ++i) slot[i] += grad[i] * bwd(x[i], y[i]);
                  });
}

}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  return pointwise<T>("gelu", a, [](T x) { return gelu_value(x); },
                      [](T x, T) { return gelu_derivative(x); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return pointwise<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return pointwise<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return pointwise<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T floor) {
  return pointwise<T>(
      "clamp-min", a, [floor](T x) { return x > floor ? x : floor; },
      [floor](T x, T) { return x > floor ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// reductions

namespace {

template <typename T>
Tensor<T> reduce(const char* name, const Tensor<T>& a, int axis, bool average) {
  auto& g = graph_of<T>(name, {&a});
  const Shape s = a.shape();
  const std::size_t ax = normalize_axis(name, axis, s.size());
  const AxisSplit sp = split_at(s, ax);
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> out(sp.outer * sp.inner, T(0));
  const auto v = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.extent; ++j) {
      const T* src = v.data() + (o * sp.extent + j) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  const T divisor = static_cast<T>(sp.extent);
  if (average)
    for (auto& x : out) x /= divisor;
  const NodeId ia = a.id();
  return g.record(name, out_shape, std::move(out), {ia},
                  [=](Graph<T>& gr, NodeId, std::span<const T> grad) {
                    auto slot = gr.grad_slot(ia);
                    for (std::size_t o = 0; o < sp.outer; ++o)
                      for (std::size_t j = 0; j < sp.extent; ++j) {
                        T* dst = slot.data() + (o * sp.extent + j) * sp.inner;
                        const T* src = grad.data() + o * sp.inner;
                        for (std::size_t i = 0; i < sp.inner; ++i)
                          dst[i] += average ? src[i] / divisor : src[i];
                      }
                  });
}

}  // namespace

template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis) {
  return reduce<T>("mean", a, axis, true);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis) {
  return reduce<T>("sum", a, axis, false);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  return sum(reshape(a, Shape{a.numel()}), 0);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return mean(reshape(a, Shape{a.numel()}), 0);
}

// ---------------------------------------------------------------------------
// losses

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  auto& g = graph_of<T>("softmax-cross-entropy", {&logits});
  const Shape s = logits.shape();
  if (s.size() != 2) throw ShapeError("softmax-cross-entropy", "rank-2 logits", s);
  const std::size_t rows = s[0], classes = s[1];
  if (targets.size() != rows)
    throw ShapeError("softmax-cross-entropy",
                     std::to_string(targets.size()) + " rows to match the targets", s);
  if (rows == 0) throw ShapeError("softmax-cross-entropy", "at least one row", s);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  for (auto t : tgt)
    if (t >= classes)
      throw ShapeError("softmax-cross-entropy",
                       "target " + std::to_string(t) + " out of range for logits", s);
  std::vector<T> probs(logits.numel());
  kernels::parallel::softmax_rows<T>(rows, classes, logits.values(), probs);
  const auto v = logits.values();
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = v.data() + r * classes;
    T peak = row[0];
    for (std::size_t j = 1; j < classes; ++j) peak = std::max(peak, row[j]);
    T z = 0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - peak);
    total += std::log(z) + peak - row[tgt[r]];
  }
  const T loss = total / static_cast<T>(rows);
  const NodeId il = logits.id();
  return g.record("softmax-cross-entropy", Shape{}, {loss}, {il},
                  [=, probs = std::move(probs), tgt = std::move(tgt)](
                      Graph<T>& gr, NodeId, std::span<const T> grad) {
                    auto slot = gr.grad_slot(il);
                    const T w = grad[0] / static_cast<T>(rows);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < classes; ++j) {
                        const T onehot = j == tgt[r] ? T(1) : T(0);
                        slot[r * classes + j] += w * (probs[r * classes + j] - onehot);
                      }
                  });
}

// ---------------------------------------------------------------------------
// name dispatch

namespace {

constexpr std::array<std::string_view, 23> kCatalog = {
    "matmul",        "add",           "sub",          "elementwise-mul", "scalar-scale",
    "concat",        "slice",         "gather-rows",  "softmax",         "layer-norm",
    "gelu",          "mean",          "sum",          "l2-normalize",    "log",
    "exp",           "square",        "transpose",    "masked-fill",     "stop-gradient",
    "reshape",       "softmax-cross-entropy",         "clamp-min"};

template <typename T>
void expect_inputs(std::string_view name, std::span<const Tensor<T>> inputs, std::size_t n) {
  if (inputs.size() != n)
    throw ShapeError(std::string(name), "expected " + std::to_string(n) + " inputs, got " +
                                            std::to_string(inputs.size()));
}

}  // namespace

std::span<const std::string_view> primitive_catalog() { return kCatalog; }

template <typename T>
Tensor<T> apply_primitive(std::string_view name, std::span<const Tensor<T>> in,
                          const PrimitiveAttrs& at) {
  auto unary = [&]() -> const Tensor<T>& {
    expect_inputs<T>(name, in, 1);
    return in[0];
  };
  auto binary = [&]() {
    expect_inputs<T>(name, in, 2);
    return std::pair<const Tensor<T>&, const Tensor<T>&>(in[0], in[1]);
  };
  const T eps = static_cast<T>(at.eps);
  if (name == "matmul") {
    auto [a, b] = binary();
    return matmul(a, b, at.transpose_a, at.transpose_b);
  }
  if (name == "add") { auto [a, b] = binary(); return add(a, b); }
  if (name == "sub") { auto [a, b] = binary(); return sub(a, b); }
  if (name == "elementwise-mul") { auto [a, b] = binary(); return mul(a, b); }
  if (name == "scalar-scale") return scale(unary(), static_cast<T>(at.scalar));
  if (name == "concat") return concat(in, at.axis);
  if (name == "slice") return slice(unary(), at.axis, at.start, at.length);
  if (name == "gather-rows") return gather_rows(unary(), std::span<const std::size_t>(at.indices));
  if (name == "softmax") return softmax(unary(), at.axis);
  if (name == "layer-norm") return layer_norm(unary(), at.axis, at.eps > 0 ? eps : T(1e-5));
  if (name == "gelu") return gelu(unary());
  if (name == "mean") return mean(unary(), at.axis);
  if (name == "sum") return sum(unary(), at.axis);
  if (name == "l2-normalize") return l2_normalize(unary(), at.axis, at.eps > 0 ? eps : T(1e-12));
  if (name == "log") return log(unary());
  if (name == "exp") return exp(unary());
  if (name == "square") return square(unary());
  if (name == "transpose") return transpose(unary(), at.perm);
  if (name == "masked-fill")
    return masked_fill(unary(), std::span<const std::uint8_t>(at.mask), static_cast<T>(at.scalar));
  if (name == "stop-gradient") return stop_gradient(unary());
  if (name == "reshape") return reshape(unary(), at.shape);
  if (name == "softmax-cross-entropy")
    return softmax_cross_entropy(unary(), std::span<const std::size_t>(at.indices));
  if (name == "clamp-min") return clamp_min(unary(), static_cast<T>(at.scalar));
  throw UnknownPrimitive(name);
}

#define MEXMA_INSTANTIATE_OPS(T)                                                            \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                         \
  template Tensor<T> concat<T>(std::span<const Tensor<T>>, int);                            \
  template Tensor<T> slice<T>(const Tensor<T>&, int, std::size_t, std::size_t);             \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);        \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                     \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, int, T);                               \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                             \
  template Tensor<T> mean<T>(const Tensor<T>&, int);                                        \
  template Tensor<T> sum<T>(const Tensor<T>&, int);                                         \
  template Tensor<T> l2_normalize<T>(const Tensor<T>&, int, T);                             \
  template Tensor<T> log<T>(const Tensor<T>&);                                              \
  template Tensor<T> exp<T>(const Tensor<T>&);                                              \
  template Tensor<T> square<T>(const Tensor<T>&);                                           \
  template Tensor<T> transpose<T>(const Tensor<T>&, std::vector<std::size_t>);              \
  template Tensor<T> masked_fill<T>(const Tensor<T>&, std::span<const std::uint8_t>, T);    \
  template Tensor<T> stop_gradient<T>(const Tensor<T>&);                                    \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                   \
  template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const std::size_t>); \
  template Tensor<T> clamp_min<T>(const Tensor<T>&, T);                                     \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                          \
  template Tensor<T> mean_all<T>(const Tensor<T>&);                                         \
  template Tensor<T> apply_primitive<T>(std::string_view, std::span<const Tensor<T>>,       \
                                        const PrimitiveAttrs&);

MEXMA_INSTANTIATE_OPS(float)
MEXMA_INSTANTIATE_OPS(double)

#undef MEXMA_INSTANTIATE_OPS

}  // namespace mexma::tensor
