#include "emmix/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "emmix/errors.hpp"

#ifdef EMMIX_HAVE_CBLAS
#include <cblas.h>
#endif

namespace emmix {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

// C[m×n] = alpha·op(A)·op(B) + beta·C, row-major. lda/ldb are the
// stored row strides of A and B (their column counts as stored).
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* A, std::size_t lda, const double* B,
          std::size_t ldb, double beta, double* C, std::size_t ldc) {
#ifdef EMMIX_HAVE_CBLAS
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, A,
              static_cast<int>(lda), B, static_cast<int>(ldb), beta, C,
              static_cast<int>(ldc));
#else
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        double av = ta ? A[p * lda + i] : A[i * lda + p];
        double bv = tb ? B[j * ldb + p] : B[p * ldb + j];
        acc += av * bv;
      }
      C[i * ldc + j] = alpha * acc + beta * C[i * ldc + j];
    }
#endif
}

NodePtr new_node(Shape shape) {
  auto n = std::make_shared<Node>();
  n->values.resize(shape_numel(shape));
  n->shape = std::move(shape);
  return n;
}

bool track(std::initializer_list<const Tensor*> parents) {
  if (!autograd_enabled()) return false;
  for (const Tensor* p : parents)
    if (p->node()->wants_grad()) return true;
  return false;
}

void attach(const NodePtr& out, std::vector<NodePtr> parents,
            std::function<void(Node&)> bp) {
  out->needs_flow = true;
  out->parents = std::move(parents);
  out->backprop = std::move(bp);
}

void accumulate(Node* p, const double* g, std::size_t n) {
  if (!p->wants_grad()) return;
  p->ensure_flow();
  for (std::size_t i = 0; i < n; ++i) p->flow[i] += g[i];
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

// ---------------------------------------------------------------- add/sub/mul

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = new_node(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] + bv[i];
  if (track({&a, &b})) {
    Node* pa = a.node();
    Node* pb = b.node();
    attach(out, {a.handle(), b.handle()}, [pa, pb](Node& self) {
      accumulate(pa, self.flow.data(), self.flow.size());
      accumulate(pb, self.flow.data(), self.flow.size());
    });
  }
  return Tensor::wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = new_node(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] - bv[i];
  if (track({&a, &b})) {
    Node* pa = a.node();
    Node* pb = b.node();
    attach(out, {a.handle(), b.handle()}, [pa, pb](Node& self) {
      accumulate(pa, self.flow.data(), self.flow.size());
      if (pb->wants_grad()) {
        pb->ensure_flow();
        for (std::size_t i = 0; i < self.flow.size(); ++i)
          pb->flow[i] -= self.flow[i];
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = new_node(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] * bv[i];
  if (track({&a, &b})) {
    Node* pa = a.node();
    Node* pb = b.node();
    attach(out, {a.handle(), b.handle()}, [pa, pb](Node& self) {
      if (pa->wants_grad()) {
        pa->ensure_flow();
        for (std::size_t i = 0; i < self.flow.size(); ++i)
          pa->flow[i] += self.flow[i] * pb->values[i];
      }
      if (pb->wants_grad()) {
        pb->ensure_flow();
        for (std::size_t i = 0; i < self.flow.size(); ++i)
          pb->flow[i] += self.flow[i] * pa->values[i];
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor add_scalar(const Tensor& a, double s) {
  auto out = new_node(a.shape());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] + s;
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa](Node& self) {
      accumulate(pa, self.flow.data(), self.flow.size());
    });
  }
  return Tensor::wrap(out);
}

Tensor mul_scalar(const Tensor& a, double s) {
  auto out = new_node(a.shape());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] * s;
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa, s](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      for (std::size_t i = 0; i < self.flow.size(); ++i)
        pa->flow[i] += self.flow[i] * s;
    });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------- activations

Tensor relu(const Tensor& a) {
  auto out = new_node(a.shape());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i)
    out->values[i] = av[i] > 0.0 ? av[i] : 0.0;
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      for (std::size_t i = 0; i < self.flow.size(); ++i)
        if (pa->values[i] > 0.0) pa->flow[i] += self.flow[i];
    });
  }
  return Tensor::wrap(out);
}

Tensor sigmoid(const Tensor& a) {
  auto out = new_node(a.shape());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i)
    out->values[i] = 1.0 / (1.0 + std::exp(-av[i]));
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      for (std::size_t i = 0; i < self.flow.size(); ++i) {
        double y = self.values[i];
        pa->flow[i] += self.flow[i] * y * (1.0 - y);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor tanh(const Tensor& a) {
  auto out = new_node(a.shape());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = std::tanh(av[i]);
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      for (std::size_t i = 0; i < self.flow.size(); ++i) {
        double y = self.values[i];
        pa->flow[i] += self.flow[i] * (1.0 - y * y);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor sqrt(const Tensor& a) {
  auto out = new_node(a.shape());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = std::sqrt(av[i]);
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      for (std::size_t i = 0; i < self.flow.size(); ++i) {
        double y = self.values[i];
        // subgradient 0 at x = 0
        if (y > 0.0) pa->flow[i] += self.flow[i] * 0.5 / y;
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor sin(const Tensor& a) {
  auto out = new_node(a.shape());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = std::sin(av[i]);
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      for (std::size_t i = 0; i < self.flow.size(); ++i)
        pa->flow[i] += self.flow[i] * std::cos(pa->values[i]);
    });
  }
  return Tensor::wrap(out);
}

Tensor cos(const Tensor& a) {
  auto out = new_node(a.shape());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = std::cos(av[i]);
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      for (std::size_t i = 0; i < self.flow.size(); ++i)
        pa->flow[i] -= self.flow[i] * std::sin(pa->values[i]);
    });
  }
  return Tensor::wrap(out);
}

Tensor atan2(const Tensor& y, const Tensor& x) {
  check_same_shape(y, x, "atan2");
  auto out = new_node(y.shape());
  const auto& yv = y.values();
  const auto& xv = x.values();
  for (std::size_t i = 0; i < yv.size(); ++i)
    out->values[i] = std::atan2(yv[i], xv[i]);
  if (track({&y, &x})) {
    Node* py = y.node();
    Node* px = x.node();
    attach(out, {y.handle(), x.handle()}, [py, px](Node& self) {
      for (std::size_t i = 0; i < self.flow.size(); ++i) {
        double a = py->values[i];
        double b = px->values[i];
        double r2 = a * a + b * b;
        if (r2 == 0.0) continue;  // gradient pinned to 0 at the origin
        if (py->wants_grad()) {
          py->ensure_flow();
          py->flow[i] += self.flow[i] * b / r2;
        }
        if (px->wants_grad()) {
          px->ensure_flow();
          px->flow[i] -= self.flow[i] * a / r2;
        }
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor add_broadcast(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size() ||
      !std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
    throw ShapeError("add_broadcast: " + shape_str(bs) +
                     " is not a trailing shape of " + shape_str(as));
  std::size_t nb = b.numel();
  auto out = new_node(as);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i)
    out->values[i] = av[i] + bv[i % nb];
  if (track({&a, &b})) {
    Node* pa = a.node();
    Node* pb = b.node();
    attach(out, {a.handle(), b.handle()}, [pa, pb, nb](Node& self) {
      accumulate(pa, self.flow.data(), self.flow.size());
      if (pb->wants_grad()) {
        pb->ensure_flow();
        for (std::size_t i = 0; i < self.flow.size(); ++i)
          pb->flow[i % nb] += self.flow[i];
      }
    });
  }
  return Tensor::wrap(out);
}

// --------------------------------------------------------------------- matmul

namespace {

struct MatDims {
  std::size_t m, k, n;    // effective product dims
  std::size_t ra, ca;     // stored dims of a
  std::size_t rb, cb;     // stored dims of b
};

MatDims matmul_dims(const Tensor& a, const Tensor& b, bool ta, bool tb,
                    std::size_t a_off_dims, const char* op) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  std::size_t ra = as[a_off_dims], ca = as[a_off_dims + 1];
  std::size_t rb = bs[a_off_dims], cb = bs[a_off_dims + 1];
  std::size_t m = ta ? ca : ra, k = ta ? ra : ca;
  std::size_t k2 = tb ? cb : rb, n = tb ? rb : cb;
  if (k != k2)
    throw ShapeError(std::string(op) + ": inner dimensions disagree: " +
                     shape_str(as) + (ta ? "^T" : "") + " vs " +
                     shape_str(bs) + (tb ? "^T" : ""));
  return {m, k, n, ra, ca, rb, cb};
}

// dA and dB of Y = op(A)·op(B), written as gemm calls that accumulate
// into pre-zeroed flow buffers.
void matmul_backward_slice(bool ta, bool tb, const MatDims& d, const double* G,
                           const double* A, const double* B, double* dA,
                           double* dB) {
  if (dA) {
    if (!ta) {
      // dA[m×k] = G·op(B)ᵀ
      if (!tb)
        gemm(false, true, d.m, d.k, d.n, 1.0, G, d.n, B, d.cb, 1.0, dA, d.ca);
      else
        gemm(false, false, d.m, d.k, d.n, 1.0, G, d.n, B, d.cb, 1.0, dA, d.ca);
    } else {
      // stored A is k×m; dA_stored = op(B)·Gᵀ
      if (!tb)
        gemm(false, true, d.k, d.m, d.n, 1.0, B, d.cb, G, d.n, 1.0, dA, d.ca);
      else
        gemm(true, true, d.k, d.m, d.n, 1.0, B, d.cb, G, d.n, 1.0, dA, d.ca);
    }
  }
  if (dB) {
    if (!tb) {
      // dB[k×n] = op(A)ᵀ·G
      if (!ta)
        gemm(true, false, d.k, d.n, d.m, 1.0, A, d.ca, G, d.n, 1.0, dB, d.cb);
      else
        gemm(false, false, d.k, d.n, d.m, 1.0, A, d.ca, G, d.n, 1.0, dB, d.cb);
    } else {
      // stored B is n×k; dB_stored = Gᵀ·op(A)
      if (!ta)
        gemm(true, false, d.n, d.k, d.m, 1.0, G, d.n, A, d.ca, 1.0, dB, d.cb);
      else
        gemm(true, true, d.n, d.k, d.m, 1.0, G, d.n, A, d.ca, 1.0, dB, d.cb);
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul: expected 2-D operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  MatDims d = matmul_dims(a, b, trans_a, trans_b, 0, "matmul");
  auto out = new_node({d.m, d.n});
  gemm(trans_a, trans_b, d.m, d.n, d.k, 1.0, a.values().data(), d.ca,
       b.values().data(), d.cb, 0.0, out->values.data(), d.n);
  if (track({&a, &b})) {
    Node* pa = a.node();
    Node* pb = b.node();
    attach(out, {a.handle(), b.handle()},
           [pa, pb, trans_a, trans_b, d](Node& self) {
             double* dA = nullptr;
             double* dB = nullptr;
             if (pa->wants_grad()) {
               pa->ensure_flow();
               dA = pa->flow.data();
             }
             if (pb->wants_grad()) {
               pb->ensure_flow();
               dB = pb->flow.data();
             }
             matmul_backward_slice(trans_a, trans_b, d, self.flow.data(),
                                   pa->values.data(), pb->values.data(), dA,
                                   dB);
           });
  }
  return Tensor::wrap(out);
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError("bmm: expected 3-D operands with equal batch dim, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::size_t batch = a.dim(0);
  MatDims d = matmul_dims(a, b, trans_a, trans_b, 1, "bmm");
  auto out = new_node({batch, d.m, d.n});
  std::size_t sa = d.ra * d.ca, sb = d.rb * d.cb, so = d.m * d.n;
  for (std::size_t i = 0; i < batch; ++i)
    gemm(trans_a, trans_b, d.m, d.n, d.k, 1.0, a.values().data() + i * sa,
         d.ca, b.values().data() + i * sb, d.cb, 0.0,
         out->values.data() + i * so, d.n);
  if (track({&a, &b})) {
    Node* pa = a.node();
    Node* pb = b.node();
    attach(out, {a.handle(), b.handle()},
           [pa, pb, trans_a, trans_b, d, batch, sa, sb, so](Node& self) {
             double* dA = nullptr;
             double* dB = nullptr;
             if (pa->wants_grad()) {
               pa->ensure_flow();
               dA = pa->flow.data();
             }
             if (pb->wants_grad()) {
               pb->ensure_flow();
               dB = pb->flow.data();
             }
             for (std::size_t i = 0; i < batch; ++i)
               matmul_backward_slice(trans_a, trans_b, d,
                                     self.flow.data() + i * so,
                                     pa->values.data() + i * sa,
                                     pb->values.data() + i * sb,
                                     dA ? dA + i * sa : nullptr,
                                     dB ? dB + i * sb : nullptr);
           });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------- shape

Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " +
                     shape_str(new_shape) + " changes element count");
  auto out = new_node(std::move(new_shape));
  out->values = a.values();
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa](Node& self) {
      accumulate(pa, self.flow.data(), self.flow.size());
    });
  }
  return Tensor::wrap(out);
}

namespace {

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& as = a.shape();
  if (axes.size() != as.size())
    throw ShapeError("permute: axes rank mismatch for " + shape_str(as));
  Shape os(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) os[i] = as[axes[i]];
  auto in_strides = row_major_strides(as);
  // stride of output position i in the INPUT flat layout
  std::vector<std::size_t> gather(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) gather[i] = in_strides[axes[i]];
  auto out = new_node(os);
  std::size_t total = a.numel();
  const auto& av = a.values();
  std::vector<std::size_t> idx(os.size(), 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    out->values[flat] = av[src];
    for (std::size_t ax = os.size(); ax-- > 0;) {
      if (++idx[ax] < os[ax]) {
        src += gather[ax];
        break;
      }
      idx[ax] = 0;
      src -= gather[ax] * (os[ax] - 1);
    }
  }
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa, os, gather, total](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      std::vector<std::size_t> ix(os.size(), 0);
      std::size_t dst = 0;
      for (std::size_t flat = 0; flat < total; ++flat) {
        pa->flow[dst] += self.flow[flat];
        for (std::size_t ax = os.size(); ax-- > 0;) {
          if (++ix[ax] < os[ax]) {
            dst += gather[ax];
            break;
          }
          ix[ax] = 0;
          dst -= gather[ax] * (os[ax] - 1);
        }
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2)
    throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
  Shape os = s0;
  std::size_t axis_total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != s0.size())
      throw ShapeError("concat: rank mismatch " + shape_str(ps));
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (i != axis && ps[i] != s0[i])
        throw ShapeError("concat: shape mismatch " + shape_str(ps) + " vs " +
                         shape_str(s0));
    axis_total += ps[axis];
  }
  os[axis] = axis_total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  auto out = new_node(os);
  std::size_t out_row = axis_total * inner;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::size_t pa = p.dim(axis) * inner;
    const auto& pv = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * pa, pv.begin() + (o + 1) * pa,
                out->values.begin() + o * out_row + offset);
    offset += pa;
  }

  bool need = false;
  for (const auto& p : parts)
    if (autograd_enabled() && p.node()->wants_grad()) need = true;
  if (need) {
    std::vector<NodePtr> parents;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      parents.push_back(p.handle());
      widths.push_back(p.dim(axis) * inner);
    }
    std::vector<Node*> raw;
    for (auto& pp : parents) raw.push_back(pp.get());
    attach(out, parents, [raw, widths, outer, out_row](Node& self) {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < raw.size(); ++pi) {
        Node* p = raw[pi];
        std::size_t w = widths[pi];
        if (p->wants_grad()) {
          p->ensure_flow();
          for (std::size_t o = 0; o < outer; ++o) {
            const double* g = self.flow.data() + o * out_row + off;
            double* dst = p->flow.data() + o * w;
            for (std::size_t i = 0; i < w; ++i) dst[i] += g[i];
          }
        }
        off += w;
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor slice_axis(const Tensor& a, std::size_t axis, std::size_t start,
                  std::size_t len) {
  const Shape& as = a.shape();
  if (axis >= as.size() || start + len > as[axis])
    throw ShapeError("slice_axis: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for " +
                     shape_str(as));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= as[i];
  for (std::size_t i = axis + 1; i < as.size(); ++i) inner *= as[i];
  Shape os = as;
  os[axis] = len;
  auto out = new_node(os);
  std::size_t in_row = as[axis] * inner, out_row = len * inner;
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(av.begin() + o * in_row + start * inner,
              av.begin() + o * in_row + (start + len) * inner,
              out->values.begin() + o * out_row);
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()},
           [pa, outer, inner, in_row, out_row, start](Node& self) {
             if (!pa->wants_grad()) return;
             pa->ensure_flow();
             for (std::size_t o = 0; o < outer; ++o) {
               const double* g = self.flow.data() + o * out_row;
               double* dst = pa->flow.data() + o * in_row + start * inner;
               for (std::size_t i = 0; i < out_row; ++i) dst[i] += g[i];
             }
           });
  }
  return Tensor::wrap(out);
}

// ----------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& a) {
  auto out = new_node({1});
  double s = 0.0;
  for (double v : a.values()) s += v;
  out->values[0] = s;
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      double g = self.flow[0];
      for (auto& f : pa->flow) f += g;
    });
  }
  return Tensor::wrap(out);
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  const Shape& as = a.shape();
  if (axis >= as.size()) throw ShapeError("mean_axis: axis out of range");
  std::size_t outer = 1, inner = 1, d = as[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= as[i];
  for (std::size_t i = axis + 1; i < as.size(); ++i) inner *= as[i];
  Shape os;
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != axis) os.push_back(as[i]);
  if (os.empty()) os.push_back(1);
  auto out = new_node(os);
  const auto& av = a.values();
  double inv = 1.0 / static_cast<double>(d);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        s += av[(o * d + j) * inner + i];
      out->values[o * inner + i] = s * inv;
    }
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa, outer, inner, d, inv](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          double g = self.flow[o * inner + i] * inv;
          for (std::size_t j = 0; j < d; ++j)
            pa->flow[(o * d + j) * inner + i] += g;
        }
    });
  }
  return Tensor::wrap(out);
}

// ------------------------------------------------------- softmax / layer norm

Tensor softmax_rows(const Tensor& a) {
  const Shape& as = a.shape();
  if (as.empty()) throw ShapeError("softmax_rows: scalar input");
  std::size_t d = as.back();
  std::size_t rows = a.numel() / d;
  auto out = new_node(as);
  const auto& av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double* y = out->values.data() + r * d;
    double mx = x[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    double inv = 1.0 / s;
    for (std::size_t j = 0; j < d; ++j) y[j] *= inv;
  }
  if (track({&a})) {
    Node* pa = a.node();
    attach(out, {a.handle()}, [pa, rows, d](Node& self) {
      if (!pa->wants_grad()) return;
      pa->ensure_flow();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.values.data() + r * d;
        const double* g = self.flow.data() + r * d;
        double* dx = pa->flow.data() + r * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < d; ++j) dx[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const Shape& as = a.shape();
  if (as.empty()) throw ShapeError("layer_norm: scalar input");
  std::size_t d = as.back();
  if (gain.numel() != d || bias.numel() != d)
    throw ShapeError("layer_norm: gain/bias must have length " +
                     std::to_string(d));
  std::size_t rows = a.numel() / d;
  auto out = new_node(as);
  auto xhat = std::make_shared<std::vector<double>>(a.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& av = a.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* xh = xhat->data() + r * d;
    double* y = out->values.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (x[j] - mu) * is;
      y[j] = gv[j] * xh[j] + bv[j];
    }
  }
  if (track({&a, &gain, &bias})) {
    Node* pa = a.node();
    Node* pg = gain.node();
    Node* pb = bias.node();
    attach(out, {a.handle(), gain.handle(), bias.handle()},
           [pa, pg, pb, xhat, inv_std, rows, d](Node& self) {
             if (pg->wants_grad()) pg->ensure_flow();
             if (pb->wants_grad()) pb->ensure_flow();
             if (pa->wants_grad()) pa->ensure_flow();
             for (std::size_t r = 0; r < rows; ++r) {
               const double* g = self.flow.data() + r * d;
               const double* xh = xhat->data() + r * d;
               if (pg->wants_grad())
                 for (std::size_t j = 0; j < d; ++j)
                   pg->flow[j] += g[j] * xh[j];
               if (pb->wants_grad())
                 for (std::size_t j = 0; j < d; ++j) pb->flow[j] += g[j];
               if (pa->wants_grad()) {
                 double m1 = 0.0, m2 = 0.0;
                 for (std::size_t j = 0; j < d; ++j) {
                   double gy = g[j] * pg->values[j];
                   m1 += gy;
                   m2 += gy * xh[j];
                 }
                 m1 /= static_cast<double>(d);
                 m2 /= static_cast<double>(d);
                 double is = (*inv_std)[r];
                 double* dx = pa->flow.data() + r * d;
                 for (std::size_t j = 0; j < d; ++j) {
                   double gy = g[j] * pg->values[j];
                   dx[j] += is * (gy - m1 - xh[j] * m2);
                 }
               }
             }
           });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------- conv / pool / bn

Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 3 || w.ndim() != 3)
    throw ShapeError("conv1d: expected x[N,C,W] and w[Co,Ci,K], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  std::size_t N = x.dim(0), Ci = x.dim(1), W = x.dim(2);
  std::size_t Co = w.dim(0), K = w.dim(2);
  if (w.dim(1) != Ci)
    throw ShapeError("conv1d: input channels " + std::to_string(Ci) +
                     " != kernel channels " + std::to_string(w.dim(1)));
  if (K % 2 == 0) throw ShapeError("conv1d: kernel size must be odd");
  if (b.numel() != Co)
    throw ShapeError("conv1d: bias length != output channels");
  std::size_t P = (K - 1) / 2;
  std::size_t ck = Ci * K;

  // im2col per sample: cols[(ci*K + k), t] = x[n, ci, t + k - P]
  auto cols = std::make_shared<std::vector<double>>(N * ck * W, 0.0);
  const auto& xv = x.values();
  for (std::size_t n = 0; n < N; ++n) {
    double* cn = cols->data() + n * ck * W;
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      const double* xrow = xv.data() + (n * Ci + ci) * W;
      for (std::size_t k = 0; k < K; ++k) {
        double* crow = cn + (ci * K + k) * W;
        for (std::size_t t = 0; t < W; ++t) {
          std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                               static_cast<std::ptrdiff_t>(P);
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(W))
            crow[t] = xrow[src];
        }
      }
    }
  }

  auto out = new_node({N, Co, W});
  const auto& wv = w.values();
  const auto& bv = b.values();
  for (std::size_t n = 0; n < N; ++n)
    gemm(false, false, Co, W, ck, 1.0, wv.data(), ck,
         cols->data() + n * ck * W, W, 0.0,
         out->values.data() + n * Co * W, W);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co) {
      double* yrow = out->values.data() + (n * Co + co) * W;
      for (std::size_t t = 0; t < W; ++t) yrow[t] += bv[co];
    }

  if (track({&x, &w, &b})) {
    Node* px = x.node();
    Node* pw = w.node();
    Node* pb = b.node();
    attach(out, {x.handle(), w.handle(), b.handle()},
           [px, pw, pb, cols, N, Ci, Co, W, K, P, ck](Node& self) {
             const double* G = self.flow.data();
             if (pb->wants_grad()) {
               pb->ensure_flow();
               for (std::size_t n = 0; n < N; ++n)
                 for (std::size_t co = 0; co < Co; ++co) {
                   const double* g = G + (n * Co + co) * W;
                   double s = 0.0;
                   for (std::size_t t = 0; t < W; ++t) s += g[t];
                   pb->flow[co] += s;
                 }
             }
             if (pw->wants_grad()) {
               pw->ensure_flow();
               for (std::size_t n = 0; n < N; ++n)
                 gemm(false, true, Co, ck, W, 1.0, G + n * Co * W, W,
                      cols->data() + n * ck * W, W, 1.0, pw->flow.data(), ck);
             }
             if (px->wants_grad()) {
               px->ensure_flow();
               std::vector<double> dcols(ck * W);
               for (std::size_t n = 0; n < N; ++n) {
                 std::fill(dcols.begin(), dcols.end(), 0.0);
                 gemm(true, false, ck, W, Co, 1.0, pw->values.data(), ck,
                      G + n * Co * W, W, 1.0, dcols.data(), W);
                 for (std::size_t ci = 0; ci < Ci; ++ci) {
                   double* dxrow = px->flow.data() + (n * Ci + ci) * W;
                   for (std::size_t k = 0; k < K; ++k) {
                     const double* dcrow = dcols.data() + (ci * K + k) * W;
                     for (std::size_t t = 0; t < W; ++t) {
                       std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                            static_cast<std::ptrdiff_t>(P);
                       if (src >= 0 && src < static_cast<std::ptrdiff_t>(W))
                         dxrow[src] += dcrow[t];
                     }
                   }
                 }
               }
             }
           });
  }
  return Tensor::wrap(out);
}

Tensor avgpool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  if (x.ndim() != 3)
    throw ShapeError("avgpool1d: expected x[N,C,W], got " +
                     shape_str(x.shape()));
  std::size_t N = x.dim(0), C = x.dim(1), W = x.dim(2);
  if (W < kernel) throw ShapeError("avgpool1d: width smaller than kernel");
  std::size_t Wo = (W - kernel) / stride + 1;
  auto out = new_node({N, C, Wo});
  const auto& xv = x.values();
  double inv = 1.0 / static_cast<double>(kernel);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* xr = xv.data() + nc * W;
    double* yr = out->values.data() + nc * Wo;
    for (std::size_t t = 0; t < Wo; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < kernel; ++j) s += xr[t * stride + j];
      yr[t] = s * inv;
    }
  }
  if (track({&x})) {
    Node* px = x.node();
    attach(out, {x.handle()}, [px, N, C, W, Wo, kernel, stride, inv](
                                  Node& self) {
      if (!px->wants_grad()) return;
      px->ensure_flow();
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* g = self.flow.data() + nc * Wo;
        double* dx = px->flow.data() + nc * W;
        for (std::size_t t = 0; t < Wo; ++t)
          for (std::size_t j = 0; j < kernel; ++j)
            dx[t * stride + j] += g[t] * inv;
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor batch_norm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BnStats& running, bool training, double momentum,
                    double eps) {
  if (x.ndim() != 3)
    throw ShapeError("batch_norm1d: expected x[N,C,W], got " +
                     shape_str(x.shape()));
  std::size_t N = x.dim(0), C = x.dim(1), W = x.dim(2);
  if (gamma.numel() != C || beta.numel() != C)
    throw ShapeError("batch_norm1d: gamma/beta must have length C");
  if (running.mean.size() != C) {
    running.mean.assign(C, 0.0);
    running.var.assign(C, 1.0);
  }
  std::vector<double> mu(C), var(C);
  if (training) {
    double M = static_cast<double>(N * W);
    const auto& xv = x.values();
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* xr = xv.data() + (n * C + c) * W;
        for (std::size_t t = 0; t < W; ++t) s += xr[t];
      }
      mu[c] = s / M;
      double v = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* xr = xv.data() + (n * C + c) * W;
        for (std::size_t t = 0; t < W; ++t)
          v += (xr[t] - mu[c]) * (xr[t] - mu[c]);
      }
      var[c] = v / M;
      running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * mu[c];
      running.var[c] = (1.0 - momentum) * running.var[c] + momentum * var[c];
    }
  } else {
    mu = running.mean;
    var = running.var;
  }

  auto out = new_node({N, C, W});
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(C);
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t c = 0; c < C; ++c)
    (*inv_std)[c] = 1.0 / std::sqrt(var[c] + eps);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* xr = xv.data() + (n * C + c) * W;
      double* xh = xhat->data() + (n * C + c) * W;
      double* yr = out->values.data() + (n * C + c) * W;
      double is = (*inv_std)[c];
      for (std::size_t t = 0; t < W; ++t) {
        xh[t] = (xr[t] - mu[c]) * is;
        yr[t] = gv[c] * xh[t] + bv[c];
      }
    }

  if (track({&x, &gamma, &beta})) {
    Node* px = x.node();
    Node* pg = gamma.node();
    Node* pb = beta.node();
    attach(out, {x.handle(), gamma.handle(), beta.handle()},
           [px, pg, pb, xhat, inv_std, N, C, W, training](Node& self) {
             double M = static_cast<double>(N * W);
             if (pg->wants_grad()) pg->ensure_flow();
             if (pb->wants_grad()) pb->ensure_flow();
             for (std::size_t c = 0; c < C; ++c) {
               double sg = 0.0, sgx = 0.0;
               for (std::size_t n = 0; n < N; ++n) {
                 const double* g = self.flow.data() + (n * C + c) * W;
                 const double* xh = xhat->data() + (n * C + c) * W;
                 for (std::size_t t = 0; t < W; ++t) {
                   sg += g[t];
                   sgx += g[t] * xh[t];
                 }
               }
               if (pg->wants_grad()) pg->flow[c] += sgx;
               if (pb->wants_grad()) pb->flow[c] += sg;
               if (px->wants_grad()) {
                 px->ensure_flow();
                 double gamma_c = pg->values[c];
                 double is = (*inv_std)[c];
                 double mg = sg / M, mgx = sgx / M;
                 for (std::size_t n = 0; n < N; ++n) {
                   const double* g = self.flow.data() + (n * C + c) * W;
                   const double* xh = xhat->data() + (n * C + c) * W;
                   double* dx = px->flow.data() + (n * C + c) * W;
                   if (training) {
                     for (std::size_t t = 0; t < W; ++t)
                       dx[t] += gamma_c * is * (g[t] - mg - xh[t] * mgx);
                   } else {
                     for (std::size_t t = 0; t < W; ++t)
                       dx[t] += gamma_c * is * g[t];
                   }
                 }
               }
             }
           });
  }
  return Tensor::wrap(out);
}

// -------------------------------------------------------------- cross entropy

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw ShapeError("cross_entropy: expected logits[N,K], got " +
                     shape_str(logits.shape()));
  std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N)
    throw ShapeError("cross_entropy: label count != batch size");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= K)
      throw ShapeError("cross_entropy: label out of range");
  auto probs = std::make_shared<std::vector<double>>(N * K);
  const auto& lv = logits.values();
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* x = lv.data() + n * K;
    double* p = probs->data() + n * K;
    double mx = x[0];
    for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      p[j] = std::exp(x[j] - mx);
      s += p[j];
    }
    double inv = 1.0 / s;
    for (std::size_t j = 0; j < K; ++j) p[j] *= inv;
    loss += std::log(s) + mx - x[labels[n]];
  }
  auto out = new_node({1});
  out->values[0] = loss / static_cast<double>(N);
  if (track({&logits})) {
    Node* pl = logits.node();
    auto lab = labels;
    attach(out, {logits.handle()}, [pl, probs, lab, N, K](Node& self) {
      if (!pl->wants_grad()) return;
      pl->ensure_flow();
      double g = self.flow[0] / static_cast<double>(N);
      for (std::size_t n = 0; n < N; ++n) {
        const double* p = probs->data() + n * K;
        double* dx = pl->flow.data() + n * K;
        for (std::size_t j = 0; j < K; ++j) dx[j] += g * p[j];
        dx[lab[n]] -= g;
      }
    });
  }
  return Tensor::wrap(out);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::size_t K = logits.shape().back();
  std::size_t N = logits.numel() / K;
  std::vector<int> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const double* x = logits.values().data() + n * K;
    std::size_t best = 0;
    for (std::size_t j = 1; j < K; ++j)
      if (x[j] > x[best]) best = j;
    out[n] = static_cast<int>(best);
  }
  return out;
}

// ------------------------------------------------------------------------ DFT

std::pair<Tensor, Tensor> dft_matrices(std::size_t T) {
  if (T < 1) throw ShapeError("dft: length must be >= 1");
  std::vector<double> c(T * T), s(T * T);
  double norm = 1.0 / std::sqrt(static_cast<double>(T));
  for (std::size_t k = 0; k < T; ++k)
    for (std::size_t t = 0; t < T; ++t) {
      double ang = 2.0 * M_PI * static_cast<double>(k * t) /
                   static_cast<double>(T);
      c[k * T + t] = std::cos(ang) * norm;
      s[k * T + t] = std::sin(ang) * norm;
    }
  return {Tensor::from_values({T, T}, std::move(c)),
          Tensor::from_values({T, T}, std::move(s))};
}

ComplexTensor dft(const Tensor& x) {
  if (x.ndim() != 1)
    throw ShapeError("dft: expected 1-D signal, got " + shape_str(x.shape()));
  std::size_t T = x.dim(0);
  auto [C, S] = dft_matrices(T);
  Tensor col = reshape(x, {T, 1});
  Tensor re = reshape(matmul(C, col), {T});
  Tensor im = reshape(mul_scalar(matmul(S, col), -1.0), {T});
  return {re, im};
}

Tensor idft(const ComplexTensor& f) {
  if (f.re.shape() != f.im.shape() || f.re.ndim() != 1)
    throw ShapeError("idft: re/im must be equal-length 1-D tensors");
  std::size_t T = f.re.dim(0);
  auto [C, S] = dft_matrices(T);
  Tensor re_col = reshape(f.re, {T, 1});
  Tensor im_col = reshape(f.im, {T, 1});
  // real part of the unitary inverse: C·re − S·im
  return reshape(sub(matmul(C, re_col), matmul(S, im_col)), {T});
}

}  // namespace emmix
