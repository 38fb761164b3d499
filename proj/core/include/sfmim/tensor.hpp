#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "sfmim/error.hpp"
#include "sfmim/rng.hpp"

namespace sfmim {

namespace detail {

inline std::string shape_str(const std::vector<size_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline size_t shape_count(const std::vector<size_t>& s) {
  size_t n = 1;
  for (size_t e : s) n *= e;
  return n;
}

template <class S>
struct Node {
  std::vector<size_t> shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated on first use
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

// Sum of a multiset of values that does not depend on their order: sort
// first (ties broken by sign bit), then accumulate. Used where a reduction
// runs along the token axis and permutation equivariance must hold bitwise.
template <class S>
S order_invariant_sum(std::vector<S>& buf) {
  std::sort(buf.begin(), buf.end(), [](S a, S b) {
    if (a != b) return a < b;
    return std::signbit(a) && !std::signbit(b);
  });
  S acc = S(0);
  for (S v : buf) acc += v;
  return acc;
}

}  // namespace detail

// Dense row-major tensor with reverse-mode gradients. A Tensor is a cheap
// handle onto a graph node; ops record their backward functions, and
// backward() on a scalar accumulates d(loss)/d(leaf) into every leaf with
// requires_grad set. Grads accumulate across calls until zero_grad().
template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  Tensor(std::vector<size_t> shape, std::vector<S> data, bool requires_grad = false) {
    if (data.size() != detail::shape_count(shape))
      throw ContractError("tensor: data length " + std::to_string(data.size()) +
                          " does not match shape " + detail::shape_str(shape));
    node_ = std::make_shared<detail::Node<S>>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
    std::vector<S> data(detail::shape_count(shape), S(0));
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor full(std::vector<size_t> shape, S v, bool requires_grad = false) {
    std::vector<S> data(detail::shape_count(shape), v);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor randn(std::vector<size_t> shape, double stddev, Rng& rng,
                      bool requires_grad = false) {
    std::vector<S> data(detail::shape_count(shape));
    for (auto& v : data) v = static_cast<S>(rng.normal() * stddev);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor from_double(std::vector<size_t> shape, std::span<const double> data,
                            bool requires_grad = false) {
    std::vector<S> cast(data.size());
    for (size_t i = 0; i < data.size(); ++i) cast[i] = static_cast<S>(data[i]);
    return Tensor(std::move(shape), std::move(cast), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t size() const { return node_->value.size(); }
  size_t ndim() const { return node_->shape.size(); }
  size_t rows() const { return node_->shape.size() == 2 ? node_->shape[0] : 1; }
  size_t cols() const { return node_->shape.back(); }

  const std::vector<S>& values() const { return node_->value; }
  // Mutable access is for leaves between graph builds (init, optimizer).
  std::vector<S>& values() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  const std::vector<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  S item() const {
    if (size() != 1)
      throw ContractError("tensor: item() on non-scalar of shape " + detail::shape_str(shape()));
    return node_->value[0];
  }

  std::shared_ptr<detail::Node<S>> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<S>> node_;
};

template <class S>
Tensor<S> make_op(std::vector<size_t> shape, std::vector<S> value,
                  std::vector<Tensor<S>> parents,
                  std::function<void(detail::Node<S>&)> backfn) {
  Tensor<S> out(std::move(shape), std::move(value), false);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    out.node()->requires_grad = true;
    for (const auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backfn = std::move(backfn);
  }
  return out;
}

namespace detail {

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

template <class S>
void check_matrix(const Tensor<S>& a, const char* op) {
  if (a.ndim() != 2)
    throw ContractError(std::string(op) + ": expected a matrix, got shape " +
                        shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op<S>(a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<S>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
    }
  });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op<S>(a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<S>& n) {
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

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op<S>(a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<S>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, double c) {
  const S cs = static_cast<S>(c);
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * cs;
  auto an = a.node();
  return make_op<S>(a.shape(), std::move(v), {a}, [an, cs](detail::Node<S>& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * cs;
  });
}

// x: [m,n], v: [n] (or [1,n]); adds v to every row of x.
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
  detail::check_matrix(x, "add_rowvec");
  const size_t m = x.rows(), n = x.cols();
  if (v.size() != n)
    throw ContractError("add_rowvec: row vector length " + std::to_string(v.size()) +
                        " does not match columns of " + detail::shape_str(x.shape()));
  std::vector<S> out(x.values());
  for (size_t r = 0; r < m; ++r)
    for (size_t c = 0; c < n; ++c) out[r * n + c] += v.values()[c];
  auto xn = x.node(), vn = v.node();
  return make_op<S>(x.shape(), std::move(out), {x, v}, [xn, vn, m, n](detail::Node<S>& nd) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i) xn->grad[i] += nd.grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (size_t r = 0; r < m; ++r)
        for (size_t c = 0; c < n; ++c) vn->grad[c] += nd.grad[r * n + c];
    }
  });
}

// v: [n] or [1,n] repeated into [m,n].
template <class S>
Tensor<S> repeat_rows(const Tensor<S>& v, size_t m) {
  const size_t n = v.cols();
  if (v.size() != n)
    throw ContractError("repeat_rows: expected a row vector, got " +
                        detail::shape_str(v.shape()));
  std::vector<S> out(m * n);
  for (size_t r = 0; r < m; ++r)
    for (size_t c = 0; c < n; ++c) out[r * n + c] = v.values()[c];
  auto vn = v.node();
  return make_op<S>({m, n}, std::move(out), {v}, [vn, m, n](detail::Node<S>& nd) {
    vn->ensure_grad();
    for (size_t r = 0; r < m; ++r)
      for (size_t c = 0; c < n; ++c) vn->grad[c] += nd.grad[r * n + c];
  });
}

// ---------------------------------------------------------------------------
// Matrix ops

template <class S>
void check_matmul_shapes(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_matrix(a, "matmul");
  detail::check_matrix(b, "matmul");
  if (a.cols() != b.rows())
    throw ContractError("matmul: inner extents differ for " + detail::shape_str(a.shape()) +
                        " x " + detail::shape_str(b.shape()));
}

namespace detail {

// c[m,n] += a[m,k] * b[k,n]
template <class S>
void gemm_acc(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      const S* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a^T[m,k] * b[k,n] where a is [k,m]
template <class S>
void gemm_at_b_acc(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
  for (size_t p = 0; p < k; ++p) {
    const S* arow = a + p * m;
    const S* brow = b + p * n;
    for (size_t i = 0; i < m; ++i) {
      const S av = arow[i];
      if (av == S(0)) continue;
      S* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b^T[k,n] where b is [n,k]
template <class S>
void gemm_a_bt_acc(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const S* brow = b + j * k;
      S acc = S(0);
      for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

template <class S>
std::function<void(Node<S>&)> matmul_backfn(std::shared_ptr<Node<S>> an,
                                            std::shared_ptr<Node<S>> bn, size_t m, size_t k,
                                            size_t n) {
  return [an, bn, m, k, n](Node<S>& nd) {
    if (an->requires_grad) {
      an->ensure_grad();  // dA += dC * B^T
      gemm_a_bt_acc(nd.grad.data(), bn->value.data(), an->grad.data(), m, n, k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();  // dB += A^T * dC
      gemm_at_b_acc(an->value.data(), nd.grad.data(), bn->grad.data(), k, m, n);
    }
  };
}

}  // namespace detail

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  check_matmul_shapes(a, b);
  const size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<S> v(m * n, S(0));
  detail::gemm_acc(a.values().data(), b.values().data(), v.data(), m, k, n);
  return make_op<S>({m, n}, std::move(v), {a, b},
                    detail::matmul_backfn(a.node(), b.node(), m, k, n));
}

// Matrix product whose inner products accumulate in sorted order, making the
// forward value invariant to a consistent permutation of the contraction
// axis. Used for the attention-weight x value product so that encoder
// outputs are bitwise permutation-equivariant.
template <class S>
Tensor<S> matmul_sorted(const Tensor<S>& a, const Tensor<S>& b) {
  check_matmul_shapes(a, b);
  const size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<S> v(m * n);
  std::vector<S> buf(k);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      for (size_t p = 0; p < k; ++p) buf[p] = a.values()[i * k + p] * b.values()[p * n + j];
      v[i * n + j] = detail::order_invariant_sum(buf);
    }
  }
  return make_op<S>({m, n}, std::move(v), {a, b},
                    detail::matmul_backfn(a.node(), b.node(), m, k, n));
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
  detail::check_matrix(x, "transpose");
  const size_t m = x.rows(), n = x.cols();
  std::vector<S> v(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) v[j * m + i] = x.values()[i * n + j];
  auto xn = x.node();
  return make_op<S>({n, m}, std::move(v), {x}, [xn, m, n](detail::Node<S>& nd) {
    xn->ensure_grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) xn->grad[i * n + j] += nd.grad[j * m + i];
  });
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<size_t> shape) {
  if (detail::shape_count(shape) != x.size())
    throw ContractError("reshape: cannot view " + detail::shape_str(x.shape()) + " as " +
                        detail::shape_str(shape));
  auto xn = x.node();
  return make_op<S>(std::move(shape), std::vector<S>(x.values()), {x},
                    [xn](detail::Node<S>& nd) {
                      xn->ensure_grad();
                      for (size_t i = 0; i < nd.grad.size(); ++i) xn->grad[i] += nd.grad[i];
                    });
}

// ---------------------------------------------------------------------------
// Row / column selection

template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, std::vector<size_t> idx) {
  detail::check_matrix(x, "gather_rows");
  const size_t n = x.cols();
  for (size_t r : idx)
    if (r >= x.rows())
      throw ContractError("gather_rows: row " + std::to_string(r) + " out of range for " +
                          detail::shape_str(x.shape()));
  const size_t out_rows = idx.size();
  std::vector<S> v(out_rows * n);
  for (size_t i = 0; i < out_rows; ++i)
    std::copy_n(x.values().data() + idx[i] * n, n, v.data() + i * n);
  auto xn = x.node();
  return make_op<S>({out_rows, n}, std::move(v), {x},
                    [xn, idx = std::move(idx), n](detail::Node<S>& nd) {
                      xn->ensure_grad();
                      for (size_t i = 0; i < idx.size(); ++i)
                        for (size_t c = 0; c < n; ++c)
                          xn->grad[idx[i] * n + c] += nd.grad[i * n + c];
                    });
}

// Copy of x with row idx[i] replaced by rows[i]. Indices must be distinct.
template <class S>
Tensor<S> scatter_rows(const Tensor<S>& x, std::vector<size_t> idx, const Tensor<S>& rows) {
  detail::check_matrix(x, "scatter_rows");
  const size_t n = x.cols();
  if (rows.rows() != idx.size() || rows.cols() != n)
    throw ContractError("scatter_rows: replacement shape " + detail::shape_str(rows.shape()) +
                        " does not match " + std::to_string(idx.size()) + " rows of width " +
                        std::to_string(n));
  std::vector<uint8_t> hit(x.rows(), 0);
  for (size_t r : idx) {
    if (r >= x.rows())
      throw ContractError("scatter_rows: row " + std::to_string(r) + " out of range for " +
                          detail::shape_str(x.shape()));
    if (hit[r]) throw ContractError("scatter_rows: duplicate row index " + std::to_string(r));
    hit[r] = 1;
  }
  std::vector<S> v(x.values());
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(rows.values().data() + i * n, n, v.data() + idx[i] * n);
  auto xn = x.node(), rn = rows.node();
  return make_op<S>(x.shape(), std::move(v), {x, rows},
                    [xn, rn, idx = std::move(idx), hit = std::move(hit), n](detail::Node<S>& nd) {
                      if (xn->requires_grad) {
                        xn->ensure_grad();
                        for (size_t r = 0; r < hit.size(); ++r) {
                          if (hit[r]) continue;
                          for (size_t c = 0; c < n; ++c)
                            xn->grad[r * n + c] += nd.grad[r * n + c];
                        }
                      }
                      if (rn->requires_grad) {
                        rn->ensure_grad();
                        for (size_t i = 0; i < idx.size(); ++i)
                          for (size_t c = 0; c < n; ++c)
                            rn->grad[i * n + c] += nd.grad[idx[i] * n + c];
                      }
                    });
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const size_t n = parts[0].cols();
  size_t m = 0;
  for (const auto& p : parts) {
    detail::check_matrix(p, "concat_rows");
    if (p.cols() != n)
      throw ContractError("concat_rows: column mismatch " + detail::shape_str(p.shape()));
    m += p.rows();
  }
  std::vector<S> v;
  v.reserve(m * n);
  for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  std::vector<std::shared_ptr<detail::Node<S>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op<S>({m, n}, std::move(v), parts, [nodes, n](detail::Node<S>& nd) {
    size_t row = 0;
    for (const auto& p : nodes) {
      const size_t pr = p->value.size() / n;
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < pr * n; ++i) p->grad[i] += nd.grad[row * n + i];
      }
      row += pr;
    }
  });
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, size_t lo, size_t count) {
  detail::check_matrix(x, "slice_cols");
  const size_t m = x.rows(), n = x.cols();
  if (lo + count > n)
    throw ContractError("slice_cols: [" + std::to_string(lo) + "," + std::to_string(lo + count) +
                        ") out of range for " + detail::shape_str(x.shape()));
  std::vector<S> v(m * count);
  for (size_t r = 0; r < m; ++r)
    std::copy_n(x.values().data() + r * n + lo, count, v.data() + r * count);
  auto xn = x.node();
  return make_op<S>({m, count}, std::move(v), {x}, [xn, lo, count, m, n](detail::Node<S>& nd) {
    xn->ensure_grad();
    for (size_t r = 0; r < m; ++r)
      for (size_t c = 0; c < count; ++c) xn->grad[r * n + lo + c] += nd.grad[r * count + c];
  });
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const size_t m = parts[0].rows();
  size_t n = 0;
  for (const auto& p : parts) {
    detail::check_matrix(p, "concat_cols");
    if (p.rows() != m)
      throw ContractError("concat_cols: row mismatch " + detail::shape_str(p.shape()));
    n += p.cols();
  }
  std::vector<S> v(m * n);
  size_t col = 0;
  for (const auto& p : parts) {
    const size_t pc = p.cols();
    for (size_t r = 0; r < m; ++r)
      std::copy_n(p.values().data() + r * pc, pc, v.data() + r * n + col);
    col += pc;
  }
  std::vector<std::shared_ptr<detail::Node<S>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op<S>({m, n}, std::move(v), parts, [nodes, m, n](detail::Node<S>& nd) {
    size_t col = 0;
    for (const auto& p : nodes) {
      const size_t pc = p->value.size() / m;
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t r = 0; r < m; ++r)
          for (size_t c = 0; c < pc; ++c) p->grad[r * pc + c] += nd.grad[r * n + col + c];
      }
      col += pc;
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

// Softmax along the last axis, stabilized by max subtraction. The
// normalizing sum is order-invariant (see order_invariant_sum) so rows that
// are permutations of each other normalize bitwise identically.
template <class S>
Tensor<S> softmax(const Tensor<S>& x) {
  const size_t n = x.cols();
  const size_t m = x.size() / n;
  std::vector<S> v(x.size());
  std::vector<S> buf(n);
  for (size_t r = 0; r < m; ++r) {
    const S* in = x.values().data() + r * n;
    S* out = v.data() + r * n;
    S mx = in[0];
    for (size_t c = 1; c < n; ++c) mx = std::max(mx, in[c]);
    for (size_t c = 0; c < n; ++c) buf[c] = out[c] = std::exp(in[c] - mx);
    const S denom = detail::order_invariant_sum(buf);
    for (size_t c = 0; c < n; ++c) out[c] /= denom;
  }
  auto xn = x.node();
  return make_op<S>(x.shape(), std::move(v), {x}, [xn, m, n](detail::Node<S>& nd) {
    xn->ensure_grad();
    for (size_t r = 0; r < m; ++r) {
      const S* y = nd.value.data() + r * n;
      const S* gy = nd.grad.data() + r * n;
      S dot = S(0);
      for (size_t c = 0; c < n; ++c) dot += gy[c] * y[c];
      for (size_t c = 0; c < n; ++c) xn->grad[r * n + c] += y[c] * (gy[c] - dot);
    }
  });
}

// axis = ndim-1 gives the row softmax above; axis = 0 on a matrix works on
// columns via transposition.
template <class S>
Tensor<S> softmax(const Tensor<S>& x, size_t axis) {
  if (axis >= x.ndim())
    throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for " +
                        detail::shape_str(x.shape()));
  if (axis == x.ndim() - 1) return softmax(x);
  if (x.ndim() != 2)
    throw ContractError("softmax: non-final axis is only supported on matrices");
  return transpose(softmax(transpose(x)));
}

// Normalizes the last axis to zero mean / unit variance (biased variance,
// eps inside the square root), then applies the per-column affine map.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps) {
  const size_t n = x.cols();
  const size_t m = x.size() / n;
  if (gain.size() != n || bias.size() != n)
    throw ContractError("layer_norm: gain/bias length must match last extent " +
                        std::to_string(n));
  std::vector<S> v(x.size());
  std::vector<S> xhat(x.size());
  std::vector<S> inv_sigma(m);
  for (size_t r = 0; r < m; ++r) {
    const S* in = x.values().data() + r * n;
    S mean = S(0);
    for (size_t c = 0; c < n; ++c) mean += in[c];
    mean /= static_cast<S>(n);
    S var = S(0);
    for (size_t c = 0; c < n; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<S>(n);
    const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
    inv_sigma[r] = is;
    for (size_t c = 0; c < n; ++c) {
      const S h = (in[c] - mean) * is;
      xhat[r * n + c] = h;
      v[r * n + c] = h * gain.values()[c] + bias.values()[c];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_op<S>(x.shape(), std::move(v), {x, gain, bias},
                    [xn, gn, bn, m, n, xhat = std::move(xhat),
                     inv_sigma = std::move(inv_sigma)](detail::Node<S>& nd) {
                      if (gn->requires_grad) gn->ensure_grad();
                      if (bn->requires_grad) bn->ensure_grad();
                      if (xn->requires_grad) xn->ensure_grad();
                      for (size_t r = 0; r < m; ++r) {
                        const S* gy = nd.grad.data() + r * n;
                        const S* h = xhat.data() + r * n;
                        if (gn->requires_grad)
                          for (size_t c = 0; c < n; ++c) gn->grad[c] += gy[c] * h[c];
                        if (bn->requires_grad)
                          for (size_t c = 0; c < n; ++c) bn->grad[c] += gy[c];
                        if (!xn->requires_grad) continue;
                        S mean_dh = S(0), mean_dh_h = S(0);
                        for (size_t c = 0; c < n; ++c) {
                          const S dh = gy[c] * gn->value[c];
                          mean_dh += dh;
                          mean_dh_h += dh * h[c];
                        }
                        mean_dh /= static_cast<S>(n);
                        mean_dh_h /= static_cast<S>(n);
                        for (size_t c = 0; c < n; ++c) {
                          const S dh = gy[c] * gn->value[c];
                          xn->grad[r * n + c] +=
                              inv_sigma[r] * (dh - mean_dh - h[c] * mean_dh_h);
                        }
                      }
                    });
}

// Exact Gaussian-CDF GELU: x * Phi(x).
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<S> v(x.size());
  for (size_t i = 0; i < v.size(); ++i) {
    const double xv = static_cast<double>(x.values()[i]);
    v[i] = static_cast<S>(xv * 0.5 * (1.0 + std::erf(xv * kInvSqrt2)));
  }
  auto xn = x.node();
  return make_op<S>(x.shape(), std::move(v), {x}, [xn](detail::Node<S>& nd) {
    xn->ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) {
      const double xv = static_cast<double>(xn->value[i]);
      const double phi = 0.5 * (1.0 + std::erf(xv * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv * xv);
      xn->grad[i] += nd.grad[i] * static_cast<S>(phi + xv * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.values()) acc += v;
  auto xn = x.node();
  return make_op<S>({1}, {acc}, {x}, [xn](detail::Node<S>& nd) {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += nd.grad[0];
  });
}

// Mean over all elements; the mean of an empty tensor is defined as 0.
template <class S>
Tensor<S> mean(const Tensor<S>& x) {
  const size_t count = x.size();
  if (count == 0) {
    return make_op<S>({1}, {S(0)}, {x}, [](detail::Node<S>&) {});
  }
  S acc = S(0);
  for (S v : x.values()) acc += v;
  acc /= static_cast<S>(count);
  auto xn = x.node();
  return make_op<S>({1}, {acc}, {x}, [xn, count](detail::Node<S>& nd) {
    xn->ensure_grad();
    const S g = nd.grad[0] / static_cast<S>(count);
    for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
  });
}

// Mean squared difference; empty inputs give 0 (so a loss over an empty
// masked set vanishes instead of dividing by zero).
template <class S>
Tensor<S> mse(const Tensor<S>& pred, const Tensor<S>& target) {
  detail::check_same_shape(pred, target, "mse");
  return mean(mul(sub(pred, target), sub(pred, target)));
}

// Negative log-likelihood of `target` under softmax(logits); logits is a
// vector or single-row matrix. target is zero-based.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, size_t target) {
  const size_t k = logits.cols();
  if (logits.size() != k)
    throw ContractError("cross_entropy: expected a logit row, got " +
                        detail::shape_str(logits.shape()));
  if (target >= k)
    throw ContractError("cross_entropy: target " + std::to_string(target) +
                        " out of range for " + std::to_string(k) + " classes");
  const S* in = logits.values().data();
  S mx = in[0];
  for (size_t c = 1; c < k; ++c) mx = std::max(mx, in[c]);
  S se = S(0);
  for (size_t c = 0; c < k; ++c) se += std::exp(in[c] - mx);
  const S loss = std::log(se) + mx - in[target];
  auto ln = logits.node();
  return make_op<S>({1}, {loss}, {logits}, [ln, target, k, mx, se](detail::Node<S>& nd) {
    ln->ensure_grad();
    const S g = nd.grad[0];
    for (size_t c = 0; c < k; ++c) {
      const S p = std::exp(ln->value[c] - mx) / se;
      ln->grad[c] += g * (p - (c == target ? S(1) : S(0)));
    }
  });
}

// Inverted-dropout with fixed expectation; draws one uniform per element in
// element order from the supplied stream. rate = 0 is an exact no-op.
template <class S>
Tensor<S> dropout(const Tensor<S>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  std::vector<S> mask(x.size());
  for (auto& mv : mask) mv = rng.uniform() >= rate ? keep_scale : S(0);
  std::vector<S> v(x.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = x.values()[i] * mask[i];
  auto xn = x.node();
  return make_op<S>(x.shape(), std::move(v), {x},
                    [xn, mask = std::move(mask)](detail::Node<S>& nd) {
                      xn->ensure_grad();
                      for (size_t i = 0; i < nd.grad.size(); ++i)
                        xn->grad[i] += nd.grad[i] * mask[i];
                    });
}

// ---------------------------------------------------------------------------
// Reverse pass

template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        detail::shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Post-order over the recorded graph.
  std::vector<detail::Node<S>*> order;
  std::unordered_set<detail::Node<S>*> seen;
  std::vector<std::pair<detail::Node<S>*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<S>* node = *it;
    if (node->backfn) {
      node->ensure_grad();
      node->backfn(*node);
    }
  }
}

}  // namespace sfmim
