#include "eclseq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "eclseq/rng.hpp"

namespace eclseq {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (const size_t d : s) n *= d;
  return n;
}

namespace {

[[noreturn]] void fail(const std::string& op, const std::string& what) {
  throw TensorError(op + ": " + what);
}

[[noreturn]] void fail_shapes(const std::string& op, const Shape& a, const Shape& b) {
  fail(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const std::string& op, const Tensor& t, size_t rank) {
  if (t.rank() != rank)
    fail(op, "expected rank-" + std::to_string(rank) + " operand, got " + shape_str(t.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

class OpBuilder {
 public:
  static Tensor make(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
      throw TensorError("tensor: data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return Tensor(std::move(n));
  }

  // Records parents and the backward closure iff any parent requires grad.
  // `bind` receives the output node and must return the closure.
  template <typename Bind>
  static void attach(Tensor& out, const std::vector<Tensor>& parents, Bind&& bind) {
    if (!g_grad_enabled) return;
    bool need = false;
    for (const auto& p : parents) need = need || p.requires_grad();
    if (!need) return;
    Node* on = out.node_.get();
    on->requires_grad = true;
    on->ensure_grad();
    on->parents.reserve(parents.size());
    for (const auto& p : parents) on->parents.push_back(p.node_ptr());
    on->backward_fn = bind(on);
  }
};

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const size_t n = shape_numel(shape);
  Tensor t = OpBuilder::make(std::move(shape), std::vector<double>(n, value));
  if (requires_grad) {
    t.node_->requires_grad = true;
    t.node_->ensure_grad();
  }
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  Tensor t = OpBuilder::make(std::move(shape), std::move(data));
  if (requires_grad) {
    t.node_->requires_grad = true;
    t.node_->ensure_grad();
  }
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> data, bool requires_grad) {
  const size_t n = data.size();
  return from_data({n}, std::move(data), requires_grad);
}

std::vector<double>& Tensor::grad() {
  Node* n = node();
  if (!n->requires_grad) throw TensorError("grad: tensor does not require grad");
  n->ensure_grad();
  return n->grad;
}

const std::vector<double>& Tensor::grad() const {
  Node* n = node();
  if (!n->requires_grad) throw TensorError("grad: tensor does not require grad");
  n->ensure_grad();
  return n->grad;
}

double Tensor::value() const {
  const Node* n = node();
  if (n->data.size() != 1)
    throw TensorError("value: tensor is not scalar, shape " + shape_str(n->shape));
  return n->data[0];
}

double Tensor::at(size_t r, size_t c) const {
  const Node* n = node();
  if (n->shape.size() != 2) throw TensorError("at: tensor is not rank 2");
  if (r >= n->shape[0] || c >= n->shape[1]) throw TensorError("at: index out of range");
  return n->data[r * n->shape[1] + c];
}

void Tensor::zero_grad() {
  Node* n = node();
  if (n->requires_grad) {
    n->ensure_grad();
    std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
}

bool Tensor::all_finite() const {
  for (const double v : node()->data)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) fail_shapes("matmul", a.shape(), b.shape());
  std::vector<double> c(m * n, 0.0);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (size_t l = 0; l < k; ++l) {
      const double av = ad[i * k + l];
      if (av == 0.0) continue;
      const double* brow = bd.data() + l * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  Tensor out = OpBuilder::make({m, n}, std::move(c));
  OpBuilder::attach(out, {a, b}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    Node* bn = b.node_ptr().get();
    return [an, bn, on, m, k, n]() {
      const auto& g = on->grad;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < m; ++i)
          for (size_t l = 0; l < k; ++l) {
            const double* grow = g.data() + i * n;
            const double* brow = bn->data.data() + l * n;
            double acc = 0.0;
            for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            an->grad[i * k + l] += acc;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < m; ++i)
          for (size_t l = 0; l < k; ++l) {
            const double av = an->data[i * k + l];
            if (av == 0.0) continue;
            const double* grow = g.data() + i * n;
            double* brow = bn->grad.data() + l * n;
            for (size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    };
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) fail_shapes("matmul_nt", a.shape(), b.shape());
  std::vector<double> c(m * n, 0.0);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (size_t i = 0; i < m; ++i) {
    const double* arow = ad.data() + i * k;
    double* crow = c.data() + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = bd.data() + j * k;
      double acc = 0.0;
      for (size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] = acc;
    }
  }
  Tensor out = OpBuilder::make({m, n}, std::move(c));
  OpBuilder::attach(out, {a, b}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    Node* bn = b.node_ptr().get();
    return [an, bn, on, m, k, n]() {
      const auto& g = on->grad;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < m; ++i) {
          double* arow = an->grad.data() + i * k;
          for (size_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            if (gv == 0.0) continue;
            const double* brow = bn->data.data() + j * k;
            for (size_t l = 0; l < k; ++l) arow[l] += gv * brow[l];
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < m; ++i) {
          const double* arow = an->data.data() + i * k;
          for (size_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            if (gv == 0.0) continue;
            double* brow = bn->grad.data() + j * k;
            for (size_t l = 0; l < k; ++l) brow[l] += gv * arow[l];
          }
        }
      }
    };
  });
  return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  require_rank("matvec", a, 2);
  require_rank("matvec", x, 1);
  const size_t m = a.shape()[0], k = a.shape()[1];
  if (x.shape()[0] != k) fail_shapes("matvec", a.shape(), x.shape());
  std::vector<double> y(m, 0.0);
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a.data().data() + i * k;
    double acc = 0.0;
    for (size_t l = 0; l < k; ++l) acc += arow[l] * x.data()[l];
    y[i] = acc;
  }
  Tensor out = OpBuilder::make({m}, std::move(y));
  OpBuilder::attach(out, {a, x}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    Node* xn = x.node_ptr().get();
    return [an, xn, on, m, k]() {
      for (size_t i = 0; i < m; ++i) {
        const double gv = on->grad[i];
        if (gv == 0.0) continue;
        if (an->requires_grad) {
          an->ensure_grad();
          double* arow = an->grad.data() + i * k;
          for (size_t l = 0; l < k; ++l) arow[l] += gv * xn->data[l];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const double* arow = an->data.data() + i * k;
          for (size_t l = 0; l < k; ++l) xn->grad[l] += gv * arow[l];
        }
      }
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const std::string& op, const Tensor& a, const Tensor& b, Fwd fwd,
                          Bwd bwd) {
  if (a.shape() != b.shape()) fail_shapes(op, a.shape(), b.shape());
  const size_t n = a.numel();
  std::vector<double> c(n);
  for (size_t i = 0; i < n; ++i) c[i] = fwd(a.data()[i], b.data()[i]);
  Tensor out = OpBuilder::make(a.shape(), std::move(c));
  OpBuilder::attach(out, {a, b}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    Node* bn = b.node_ptr().get();
    return [an, bn, on, n, bwd]() {
      const bool da = an->requires_grad, db = bn->requires_grad;
      if (da) an->ensure_grad();
      if (db) bn->ensure_grad();
      for (size_t i = 0; i < n; ++i) {
        const auto [ga, gb] = bwd(an->data[i], bn->data[i]);
        if (da) an->grad[i] += on->grad[i] * ga;
        if (db) bn->grad[i] += on->grad[i] * gb;
      }
    };
  });
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Bwd bwd) {
  const size_t n = a.numel();
  std::vector<double> c(n);
  for (size_t i = 0; i < n; ++i) c[i] = fwd(a.data()[i]);
  Tensor out = OpBuilder::make(a.shape(), std::move(c));
  OpBuilder::attach(out, {a}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    return [an, on, n, bwd]() {
      an->ensure_grad();
      for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bwd(an->data[i], on->data[i]);
    };
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair<double, double>{y, x}; });
}

Tensor affine(const Tensor& a, double scale, double shift) {
  return unary_elementwise(
      a, [scale, shift](double x) { return scale * x + shift; },
      [scale](double, double) { return scale; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      a,
      [](double x) {
        // Branch keeps exp() off the overflow side for large |x|.
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_elem(const Tensor& a) {
  for (const double v : a.data())
    if (!(v > 0.0)) fail("log", "operand must be strictly positive, got " + std::to_string(v));
  return unary_elementwise(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo < hi)) fail("clamp", "requires lo < hi");
  return unary_elementwise(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  require_rank("add_rowvec", m, 2);
  require_rank("add_rowvec", v, 1);
  const size_t r = m.shape()[0], c = m.shape()[1];
  if (v.shape()[0] != c) fail_shapes("add_rowvec", m.shape(), v.shape());
  std::vector<double> out_d(m.data());
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out_d[i * c + j] += v.data()[j];
  Tensor out = OpBuilder::make({r, c}, std::move(out_d));
  OpBuilder::attach(out, {m, v}, [&](Node* on) {
    Node* mn = m.node_ptr().get();
    Node* vn = v.node_ptr().get();
    return [mn, vn, on, r, c]() {
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (size_t i = 0; i < r * c; ++i) mn->grad[i] += on->grad[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) vn->grad[j] += on->grad[i * c + j];
      }
    };
  });
  return out;
}

Tensor add_scalar_tensor(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) fail("add_scalar_tensor", "addend must be scalar, got " + shape_str(s.shape()));
  const size_t n = a.numel();
  std::vector<double> c(n);
  for (size_t i = 0; i < n; ++i) c[i] = a.data()[i] + s.data()[0];
  Tensor out = OpBuilder::make(a.shape(), std::move(c));
  OpBuilder::attach(out, {a, s}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    Node* sn = s.node_ptr().get();
    return [an, sn, on, n]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += on->grad[i];
        sn->grad[0] += acc;
      }
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Gather / slice / concat
// ---------------------------------------------------------------------------

Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids) {
  require_rank("embedding_gather", table, 2);
  const size_t rows = table.shape()[0], cols = table.shape()[1];
  std::vector<double> out_d(ids.size() * cols);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<size_t>(ids[i]) >= rows)
      fail("embedding_gather", "id " + std::to_string(ids[i]) + " out of range for table " +
                                   shape_str(table.shape()));
    const double* src = table.data().data() + static_cast<size_t>(ids[i]) * cols;
    std::copy(src, src + cols, out_d.data() + i * cols);
  }
  Tensor out = OpBuilder::make({ids.size(), cols}, std::move(out_d));
  OpBuilder::attach(out, {table}, [&](Node* on) {
    Node* tn = table.node_ptr().get();
    return [tn, on, ids, cols]() {
      tn->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i) {
        double* dst = tn->grad.data() + static_cast<size_t>(ids[i]) * cols;
        const double* src = on->grad.data() + i * cols;
        for (size_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
    };
  });
  return out;
}

Tensor gather_rows(const Tensor& m, const std::vector<size_t>& rows) {
  require_rank("gather_rows", m, 2);
  const size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out_d(rows.size() * c);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) fail("gather_rows", "row index out of range");
    std::copy_n(m.data().data() + rows[i] * c, c, out_d.data() + i * c);
  }
  Tensor out = OpBuilder::make({rows.size(), c}, std::move(out_d));
  OpBuilder::attach(out, {m}, [&](Node* on) {
    Node* mn = m.node_ptr().get();
    return [mn, on, rows, c]() {
      mn->ensure_grad();
      for (size_t i = 0; i < rows.size(); ++i) {
        double* dst = mn->grad.data() + rows[i] * c;
        const double* src = on->grad.data() + i * c;
        for (size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    };
  });
  return out;
}

Tensor slice_rows(const Tensor& m, size_t row0, size_t count) {
  require_rank("slice_rows", m, 2);
  const size_t r = m.shape()[0], c = m.shape()[1];
  if (row0 + count > r) fail("slice_rows", "range exceeds " + shape_str(m.shape()));
  std::vector<double> out_d(m.data().begin() + row0 * c, m.data().begin() + (row0 + count) * c);
  Tensor out = OpBuilder::make({count, c}, std::move(out_d));
  OpBuilder::attach(out, {m}, [&](Node* on) {
    Node* mn = m.node_ptr().get();
    return [mn, on, row0, count, c]() {
      mn->ensure_grad();
      for (size_t i = 0; i < count * c; ++i) mn->grad[row0 * c + i] += on->grad[i];
    };
  });
  return out;
}

Tensor slice_cols(const Tensor& m, size_t col0, size_t count) {
  require_rank("slice_cols", m, 2);
  const size_t r = m.shape()[0], c = m.shape()[1];
  if (col0 + count > c) fail("slice_cols", "range exceeds " + shape_str(m.shape()));
  std::vector<double> out_d(r * count);
  for (size_t i = 0; i < r; ++i)
    std::copy_n(m.data().data() + i * c + col0, count, out_d.data() + i * count);
  Tensor out = OpBuilder::make({r, count}, std::move(out_d));
  OpBuilder::attach(out, {m}, [&](Node* on) {
    Node* mn = m.node_ptr().get();
    return [mn, on, col0, count, r, c]() {
      mn->ensure_grad();
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < count; ++j) mn->grad[i * c + col0 + j] += on->grad[i * count + j];
    };
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_cols", "no operands");
  const size_t r = parts[0].shape()[0];
  size_t total = 0;
  for (const auto& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.shape()[0] != r) fail_shapes("concat_cols", parts[0].shape(), p.shape());
    total += p.shape()[1];
  }
  std::vector<double> out_d(r * total);
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t c = p.shape()[1];
    for (size_t i = 0; i < r; ++i)
      std::copy_n(p.data().data() + i * c, c, out_d.data() + i * total + off);
    off += c;
  }
  Tensor out = OpBuilder::make({r, total}, std::move(out_d));
  std::vector<size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[1]);
  OpBuilder::attach(out, parts, [&](Node* on) {
    std::vector<Node*> pn;
    for (const auto& p : parts) pn.push_back(p.node_ptr().get());
    return [pn, on, widths, r, total]() {
      size_t off2 = 0;
      for (size_t k = 0; k < pn.size(); ++k) {
        const size_t c = widths[k];
        if (pn[k]->requires_grad) {
          pn[k]->ensure_grad();
          for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) pn[k]->grad[i * c + j] += on->grad[i * total + off2 + j];
        }
        off2 += c;
      }
    };
  });
  return out;
}

Tensor gather_cols(const Tensor& m, const std::vector<size_t>& cols) {
  require_rank("gather_cols", m, 2);
  const size_t r = m.shape()[0], c = m.shape()[1];
  if (cols.size() != r) fail("gather_cols", "need one column index per row");
  std::vector<double> out_d(r);
  for (size_t i = 0; i < r; ++i) {
    if (cols[i] >= c) fail("gather_cols", "column index out of range");
    out_d[i] = m.data()[i * c + cols[i]];
  }
  Tensor out = OpBuilder::make({r}, std::move(out_d));
  OpBuilder::attach(out, {m}, [&](Node* on) {
    Node* mn = m.node_ptr().get();
    return [mn, on, cols, c]() {
      mn->ensure_grad();
      for (size_t i = 0; i < cols.size(); ++i) mn->grad[i * c + cols[i]] += on->grad[i];
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Row-structured ops (softmax family, layer norm, normalization)
// ---------------------------------------------------------------------------

namespace {

// Views a rank-1 tensor as one row, rank-2 as its rows.
std::pair<size_t, size_t> row_view(const std::string& op, const Tensor& t) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  fail(op, "expected rank 1 or 2, got " + shape_str(t.shape()));
}

}  // namespace

Tensor softmax_rows(const Tensor& m) {
  const auto [r, c] = row_view("softmax", m);
  if (c == 0) fail("softmax", "empty rows");
  std::vector<double> y(m.data().size());
  for (size_t i = 0; i < r; ++i) {
    const double* x = m.data().data() + i * c;
    double mx = x[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (size_t j = 0; j < c; ++j) {
      y[i * c + j] = std::exp(x[j] - mx);
      sum += y[i * c + j];
    }
    for (size_t j = 0; j < c; ++j) y[i * c + j] /= sum;
  }
  Tensor out = OpBuilder::make(m.shape(), std::move(y));
  const size_t rr = r, cc = c;
  OpBuilder::attach(out, {m}, [&](Node* on) {
    Node* mn = m.node_ptr().get();
    return [mn, on, rr, cc]() {
      mn->ensure_grad();
      for (size_t i = 0; i < rr; ++i) {
        const double* yv = on->data.data() + i * cc;
        const double* gv = on->grad.data() + i * cc;
        double dot = 0.0;
        for (size_t j = 0; j < cc; ++j) dot += yv[j] * gv[j];
        double* dst = mn->grad.data() + i * cc;
        for (size_t j = 0; j < cc; ++j) dst[j] += yv[j] * (gv[j] - dot);
      }
    };
  });
  return out;
}

Tensor log_softmax_rows(const Tensor& m) {
  const auto [r, c] = row_view("log_softmax", m);
  if (c == 0) fail("log_softmax", "empty rows");
  std::vector<double> y(m.data().size());
  for (size_t i = 0; i < r; ++i) {
    const double* x = m.data().data() + i * c;
    double mx = x[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (size_t j = 0; j < c; ++j) sum += std::exp(x[j] - mx);
    const double lse = mx + std::log(sum);
    for (size_t j = 0; j < c; ++j) y[i * c + j] = x[j] - lse;
  }
  Tensor out = OpBuilder::make(m.shape(), std::move(y));
  const size_t rr = r, cc = c;
  OpBuilder::attach(out, {m}, [&](Node* on) {
    Node* mn = m.node_ptr().get();
    return [mn, on, rr, cc]() {
      mn->ensure_grad();
      for (size_t i = 0; i < rr; ++i) {
        const double* yv = on->data.data() + i * cc;
        const double* gv = on->grad.data() + i * cc;
        double gsum = 0.0;
        for (size_t j = 0; j < cc; ++j) gsum += gv[j];
        double* dst = mn->grad.data() + i * cc;
        for (size_t j = 0; j < cc; ++j) dst[j] += gv[j] - std::exp(yv[j]) * gsum;
      }
    };
  });
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto [r, c] = row_view("layer_norm", x);
  require_rank("layer_norm", gain, 1);
  require_rank("layer_norm", bias, 1);
  if (gain.shape()[0] != c || bias.shape()[0] != c)
    fail("layer_norm", "gain/bias length must match row width " + std::to_string(c));
  std::vector<double> y(x.data().size());
  std::vector<double> inv_sigma(r), xhat(x.data().size());
  for (size_t i = 0; i < r; ++i) {
    const double* xv = x.data().data() + i * c;
    double mu = 0.0;
    for (size_t j = 0; j < c; ++j) mu += xv[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (size_t j = 0; j < c; ++j) var += (xv[j] - mu) * (xv[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[j] - mu) * is;
      y[i * c + j] = xhat[i * c + j] * gain.data()[j] + bias.data()[j];
    }
  }
  Tensor out = OpBuilder::make(x.shape(), std::move(y));
  const size_t rr = r, cc = c;
  OpBuilder::attach(out, {x, gain, bias}, [&](Node* on) {
    Node* xn = x.node_ptr().get();
    Node* gn = gain.node_ptr().get();
    Node* bn = bias.node_ptr().get();
    return [xn, gn, bn, on, rr, cc, inv_sigma = std::move(inv_sigma), xhat = std::move(xhat)]() {
      for (size_t i = 0; i < rr; ++i) {
        const double* gv = on->grad.data() + i * cc;
        const double* xh = xhat.data() + i * cc;
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (size_t j = 0; j < cc; ++j) gn->grad[j] += gv[j] * xh[j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t j = 0; j < cc; ++j) bn->grad[j] += gv[j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          double mean_dy = 0.0, mean_dyxh = 0.0;
          for (size_t j = 0; j < cc; ++j) {
            const double dyj = gv[j] * gn->data[j];
            mean_dy += dyj;
            mean_dyxh += dyj * xh[j];
          }
          mean_dy /= static_cast<double>(cc);
          mean_dyxh /= static_cast<double>(cc);
          double* dst = xn->grad.data() + i * cc;
          for (size_t j = 0; j < cc; ++j) {
            const double dyj = gv[j] * gn->data[j];
            dst[j] += inv_sigma[i] * (dyj - mean_dy - xh[j] * mean_dyxh);
          }
        }
      }
    };
  });
  return out;
}

Tensor l2_normalize_rows(const Tensor& m) {
  const auto [r, c] = row_view("l2_normalize", m);
  std::vector<double> y(m.data().size());
  std::vector<double> inv_norm(r);
  for (size_t i = 0; i < r; ++i) {
    const double* x = m.data().data() + i * c;
    double s = 0.0;
    for (size_t j = 0; j < c; ++j) s += x[j] * x[j];
    if (s == 0.0) fail("l2_normalize", "zero vector has no direction");
    inv_norm[i] = 1.0 / std::sqrt(s);
    for (size_t j = 0; j < c; ++j) y[i * c + j] = x[j] * inv_norm[i];
  }
  Tensor out = OpBuilder::make(m.shape(), std::move(y));
  const size_t rr = r, cc = c;
  OpBuilder::attach(out, {m}, [&](Node* on) {
    Node* mn = m.node_ptr().get();
    return [mn, on, rr, cc, inv_norm = std::move(inv_norm)]() {
      mn->ensure_grad();
      for (size_t i = 0; i < rr; ++i) {
        const double* yv = on->data.data() + i * cc;
        const double* gv = on->grad.data() + i * cc;
        double dot = 0.0;
        for (size_t j = 0; j < cc; ++j) dot += yv[j] * gv[j];
        double* dst = mn->grad.data() + i * cc;
        for (size_t j = 0; j < cc; ++j) dst[j] += inv_norm[i] * (gv[j] - yv[j] * dot);
      }
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and similarity
// ---------------------------------------------------------------------------

Tensor mean_axis0(const Tensor& m) {
  require_rank("mean_axis0", m, 2);
  const size_t r = m.shape()[0], c = m.shape()[1];
  if (r == 0) fail("mean_axis0", "empty matrix");
  std::vector<double> y(c, 0.0);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) y[j] += m.data()[i * c + j];
  for (size_t j = 0; j < c; ++j) y[j] /= static_cast<double>(r);
  Tensor out = OpBuilder::make({c}, std::move(y));
  OpBuilder::attach(out, {m}, [&](Node* on) {
    Node* mn = m.node_ptr().get();
    return [mn, on, r, c]() {
      mn->ensure_grad();
      const double inv = 1.0 / static_cast<double>(r);
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) mn->grad[i * c + j] += on->grad[j] * inv;
    };
  });
  return out;
}

Tensor mean_all(const Tensor& a) {
  const size_t n = a.numel();
  if (n == 0) fail("mean", "empty tensor");
  double s = 0.0;
  for (const double v : a.data()) s += v;
  Tensor out = OpBuilder::make({}, {s / static_cast<double>(n)});
  OpBuilder::attach(out, {a}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    return [an, on, n]() {
      an->ensure_grad();
      const double g = on->grad[0] / static_cast<double>(n);
      for (size_t i = 0; i < n; ++i) an->grad[i] += g;
    };
  });
  return out;
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (const double v : a.data()) s += v;
  Tensor out = OpBuilder::make({}, {s});
  OpBuilder::attach(out, {a}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    const size_t n = a.numel();
    return [an, on, n]() {
      an->ensure_grad();
      for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[0];
    };
  });
  return out;
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  require_rank("cosine_similarity", u, 1);
  require_rank("cosine_similarity", v, 1);
  if (u.shape() != v.shape()) fail_shapes("cosine_similarity", u.shape(), v.shape());
  const size_t n = u.shape()[0];
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (size_t i = 0; i < n; ++i) {
    uv += u.data()[i] * v.data()[i];
    uu += u.data()[i] * u.data()[i];
    vv += v.data()[i] * v.data()[i];
  }
  if (uu == 0.0 || vv == 0.0) fail("cosine_similarity", "zero vector has no direction");
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  const double c = uv / (nu * nv);
  Tensor out = OpBuilder::make({}, {c});
  OpBuilder::attach(out, {u, v}, [&](Node* on) {
    Node* un = u.node_ptr().get();
    Node* vn = v.node_ptr().get();
    return [un, vn, on, n, nu, nv, c]() {
      const double g = on->grad[0];
      if (un->requires_grad) {
        un->ensure_grad();
        for (size_t i = 0; i < n; ++i)
          un->grad[i] += g * (vn->data[i] / (nu * nv) - c * un->data[i] / (nu * nu));
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (size_t i = 0; i < n; ++i)
          vn->grad[i] += g * (un->data[i] / (nu * nv) - c * vn->data[i] / (nv * nv));
      }
    };
  });
  return out;
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  require_rank("rowwise_dot", a, 2);
  require_rank("rowwise_dot", b, 2);
  if (a.shape() != b.shape()) fail_shapes("rowwise_dot", a.shape(), b.shape());
  const size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> y(r, 0.0);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) y[i] += a.data()[i * c + j] * b.data()[i * c + j];
  Tensor out = OpBuilder::make({r}, std::move(y));
  OpBuilder::attach(out, {a, b}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    Node* bn = b.node_ptr().get();
    return [an, bn, on, r, c]() {
      for (size_t i = 0; i < r; ++i) {
        const double g = on->grad[i];
        if (g == 0.0) continue;
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t j = 0; j < c; ++j) an->grad[i * c + j] += g * bn->data[i * c + j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t j = 0; j < c; ++j) bn->grad[i * c + j] += g * an->data[i * c + j];
        }
      }
    };
  });
  return out;
}

Tensor diag_embed(const Tensor& v) {
  require_rank("diag_embed", v, 1);
  const size_t n = v.shape()[0];
  std::vector<double> y(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) y[i * n + i] = v.data()[i];
  Tensor out = OpBuilder::make({n, n}, std::move(y));
  OpBuilder::attach(out, {v}, [&](Node* on) {
    Node* vn = v.node_ptr().get();
    return [vn, on, n]() {
      vn->ensure_grad();
      for (size_t i = 0; i < n; ++i) vn->grad[i] += on->grad[i * n + i];
    };
  });
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& vecs) {
  if (vecs.empty()) fail("stack_rows", "no operands");
  require_rank("stack_rows", vecs[0], 1);
  const size_t d = vecs[0].shape()[0];
  std::vector<double> y(vecs.size() * d);
  for (size_t i = 0; i < vecs.size(); ++i) {
    require_rank("stack_rows", vecs[i], 1);
    if (vecs[i].shape()[0] != d) fail_shapes("stack_rows", vecs[0].shape(), vecs[i].shape());
    std::copy_n(vecs[i].data().data(), d, y.data() + i * d);
  }
  Tensor out = OpBuilder::make({vecs.size(), d}, std::move(y));
  OpBuilder::attach(out, vecs, [&](Node* on) {
    std::vector<Node*> pn;
    for (const auto& v : vecs) pn.push_back(v.node_ptr().get());
    return [pn, on, d]() {
      for (size_t i = 0; i < pn.size(); ++i) {
        if (!pn[i]->requires_grad) continue;
        pn[i]->ensure_grad();
        for (size_t j = 0; j < d; ++j) pn[i]->grad[j] += on->grad[i * d + j];
      }
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

Tensor dropout(const Tensor& a, const Tensor& mask01, double keep_prob) {
  if (a.shape() != mask01.shape()) fail_shapes("dropout", a.shape(), mask01.shape());
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) fail("dropout", "keep_prob must be in (0,1]");
  const size_t n = a.numel();
  const double inv = 1.0 / keep_prob;
  std::vector<double> y(n);
  for (size_t i = 0; i < n; ++i) y[i] = a.data()[i] * mask01.data()[i] * inv;
  Tensor out = OpBuilder::make(a.shape(), std::move(y));
  OpBuilder::attach(out, {a}, [&](Node* on) {
    Node* an = a.node_ptr().get();
    Node* mn = mask01.node_ptr().get();
    // The mask is held alive through the parent edge on `a`'s grad path; keep
    // an owning copy here since mask01 is not a recorded parent.
    auto keep_alive = mask01.node_ptr();
    return [an, mn, on, n, inv, keep_alive]() {
      an->ensure_grad();
      for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * mn->data[i] * inv;
    };
  });
  return out;
}

Tensor sample_dropout_mask(const Shape& shape, double keep_prob, Rng& rng) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0))
    throw TensorError("dropout mask: keep_prob must be in (0,1]");
  const size_t n = shape_numel(shape);
  std::vector<double> m(n);
  for (size_t i = 0; i < n; ++i) m[i] = rng.bernoulli(keep_prob) ? 1.0 : 0.0;
  return Tensor::from_data(shape, std::move(m));
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  NodePtr root = loss.node_ptr();
  if (!root) throw TensorError("backward: undefined tensor");
  if (root->numel() != 1)
    throw TensorError("backward: loss must be scalar, got shape " + shape_str(root->shape));
  if (!root->requires_grad)
    throw TensorError("backward: loss is detached (no recorded graph reaches it)");

  // Iterative post-order over the DAG; parents precede each node in `order`.
  enum class Mark : uint8_t { kNone, kVisiting, kDone };
  std::unordered_map<Node*, Mark> mark;
  std::vector<Node*> stack{root.get()};
  std::vector<Node*> order;
  while (!stack.empty()) {
    Node* n = stack.back();
    Mark& m = mark[n];
    if (m == Mark::kNone) {
      m = Mark::kVisiting;
      if (n->backward_fn && n->backward_ran)
        throw TensorError(
            "backward: graph already differentiated; combine losses and call backward once");
      for (const auto& p : n->parents) {
        Node* pp = p.get();
        auto it = mark.find(pp);
        if (it == mark.end() || it->second == Mark::kNone) stack.push_back(pp);
      }
    } else {
      stack.pop_back();
      if (m == Mark::kVisiting) {
        m = Mark::kDone;
        order.push_back(n);
      }
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->backward_fn();
      n->backward_ran = true;
    }
  }
}

}  // namespace eclseq
