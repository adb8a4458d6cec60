#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace eclseq {

// Thrown by every tensor op on contract violations (shape mismatch, non-scalar
// backward, repeated backward, ...). Messages name the op and the shapes involved.
class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // same length as data when requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;  // accumulates this->grad into parents
  bool backward_ran = false;

  size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense 64-bit float tensor with reverse-mode autodiff. Value-semantics handle
// to a shared node; copying a Tensor aliases the same storage. Rank 0 (shape {})
// is a scalar, rank 1 a vector, rank 2 a matrix.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node()->shape; }
  size_t numel() const { return node()->numel(); }
  size_t rank() const { return node()->shape.size(); }
  bool requires_grad() const { return node()->requires_grad; }

  std::vector<double>& data() { return node()->data; }
  const std::vector<double>& data() const { return node()->data; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;

  // Scalar fetch; throws unless numel() == 1.
  double value() const;

  double operator[](size_t i) const { return node()->data[i]; }
  double& operator[](size_t i) { return node()->data[i]; }
  // Matrix element access.
  double at(size_t r, size_t c) const;

  void zero_grad();
  bool all_finite() const;

  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  detail::Node* node() const {
    if (!node_) throw TensorError("use of undefined Tensor");
    return node_.get();
  }
  std::shared_ptr<detail::Node> node_;

  friend class OpBuilder;
  friend void backward(const Tensor&);
};

// Thread-local autodiff switch. While a NoGradGuard is alive on a thread, ops
// build no graph even when operands require grad — inference passes stay cheap
// and cannot be differentiated by accident.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------------------
// Forward ops. Shapes are checked strictly (no broadcasting); violations throw
// TensorError naming the op and both shapes.
// ---------------------------------------------------------------------------

// C[m,n] = A[m,k] * B[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// C[m,n] = A[m,k] * B[n,k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// y[m] = A[m,k] * x[k]
Tensor matvec(const Tensor& a, const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);          // elementwise, same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise, same shape
Tensor affine(const Tensor& a, double scale, double shift);  // scale*a + shift
Tensor add_rowvec(const Tensor& m, const Tensor& v);   // M[r,c] + v[c] per row
Tensor add_scalar_tensor(const Tensor& a, const Tensor& s);  // a + broadcast scalar tensor

// Rows of `table` selected by ids; out[i,:] = table[ids[i],:]. Gradient
// scatter-adds into the selected rows.
Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids);
// Same row-selection on a graph tensor with size_t indices.
Tensor gather_rows(const Tensor& m, const std::vector<size_t>& rows);
Tensor slice_rows(const Tensor& m, size_t row0, size_t count);
Tensor slice_cols(const Tensor& m, size_t col0, size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);  // along last axis

Tensor softmax_rows(const Tensor& m);      // over last axis
Tensor log_softmax_rows(const Tensor& m);  // over last axis, numerically stable
// out[i] = m[i, cols[i]]
Tensor gather_cols(const Tensor& m, const std::vector<size_t>& cols);

// Per-row layer normalization with learned gain/bias over the last axis.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-8);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_elem(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// Inverted dropout with an explicit 0/1 mask: out = a .* mask / keep_prob.
// The mask is caller-supplied so stochastic passes are reproducible.
Tensor dropout(const Tensor& a, const Tensor& mask01, double keep_prob);

Tensor mean_axis0(const Tensor& m);  // [r,c] -> [c]
Tensor mean_all(const Tensor& a);    // -> scalar
Tensor sum_all(const Tensor& a);     // -> scalar

Tensor cosine_similarity(const Tensor& u, const Tensor& v);  // vectors -> scalar
Tensor l2_normalize_rows(const Tensor& m);                   // matrix or vector
Tensor rowwise_dot(const Tensor& a, const Tensor& b);        // [r,c],[r,c] -> [r]
Tensor diag_embed(const Tensor& v);                          // [n] -> [n,n]
Tensor stack_rows(const std::vector<Tensor>& vecs);          // B x [d] -> [B,d]

// Samples a 0/1 keep-mask of the given shape; P(keep) = keep_prob.
class Rng;
Tensor sample_dropout_mask(const Shape& shape, double keep_prob, Rng& rng);

// ---------------------------------------------------------------------------
// Reverse-mode backward. `loss` must be scalar and attached to a recorded
// graph. Every reachable leaf with requires_grad receives its gradient.
// Running backward twice through any part of a graph throws: losses must be
// combined first and differentiated once.
// ---------------------------------------------------------------------------
void backward(const Tensor& loss);

}  // namespace eclseq
