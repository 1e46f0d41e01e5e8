#include "mmdesign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mmdesign/errors.hpp"

namespace mmdesign::ag {

namespace {

thread_local bool g_grad_enabled = true;
kernels::Backend g_backend = kernels::Backend::Parallel;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Tensor<T> make_op(int rows, int cols, std::vector<T> value, std::vector<NodePtr<T>> parents,
                  std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

[[noreturn]] void shape_fail(const char* op, int r1, int c1, int r2, int c2) {
  std::ostringstream os;
  os << op << ": shape mismatch [" << r1 << "x" << c1 << "] vs [" << r2 << "x" << c2 << "]";
  throw ShapeError(os.str());
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(op, a.rows(), a.cols(), b.rows(), b.cols());
}

template <typename T>
T sigmoid_scalar(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// Elementwise unary op; df(x, y) gives dy/dx from input and output.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  std::vector<T> out(a.size());
  const auto& x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_op<T>(a.rows(), a.cols(), std::move(out), {a.node()}, [df](Node<T>& self) {
    auto& p = self.parents[0];
    T* pg = p->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i] * df(p->value[i], self.value[i]);
  });
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

kernels::Backend backend() { return g_backend; }
void set_backend(kernels::Backend b) { g_backend = b; }

template <typename T>
Tensor<T>::Tensor(int rows, int cols, std::vector<T> values, bool requires_grad) {
  if (values.size() != static_cast<std::size_t>(rows) * cols) {
    throw ShapeError("tensor value count does not match shape");
  }
  node_ = std::make_shared<Node<T>>();
  node_->rows = rows;
  node_->cols = cols;
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(int rows, int cols, bool requires_grad) {
  return Tensor(rows, cols, std::vector<T>(static_cast<std::size_t>(rows) * cols, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(int rows, int cols, T value) {
  return Tensor(rows, cols, std::vector<T>(static_cast<std::size_t>(rows) * cols, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(1, 1, {value});
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on a tensor with more than one element");
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(rows(), cols(), node_->value, false);
}

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1) throw ShapeError("backward() requires a 1x1 tensor");
  if (!node_->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_data()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Dense algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a.rows(), a.cols(), b.rows(), b.cols());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  kernels::gemm_nn(g_backend, m, n, k, a.values().data(), b.values().data(), out.data(), false);
  return make_op<T>(m, n, std::move(out), {a.node(), b.node()}, [m, n, k](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) kernels::gemm_nt(g_backend, m, k, n, self.grad.data(), pb->value.data(), pa->grad_data(), true);
    if (pb->requires_grad) kernels::gemm_tn(g_backend, k, n, m, pa->value.data(), self.grad.data(), pb->grad_data(), true);
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.cols() != w.cols()) shape_fail("linear", x.rows(), x.cols(), w.rows(), w.cols());
  const int m = x.rows(), in = x.cols(), out_dim = w.rows();
  std::vector<T> out(static_cast<std::size_t>(m) * out_dim);
  kernels::gemm_nt(g_backend, m, out_dim, in, x.values().data(), w.values().data(), out.data(), false);
  std::vector<NodePtr<T>> parents{x.node(), w.node()};
  if (bias.defined()) {
    if (bias.size() != static_cast<std::size_t>(out_dim)) shape_fail("linear bias", bias.rows(), bias.cols(), 1, out_dim);
    const auto& bv = bias.values();
    for (int i = 0; i < m; ++i) {
      T* row = out.data() + static_cast<std::size_t>(i) * out_dim;
      for (int j = 0; j < out_dim; ++j) row[j] += bv[j];
    }
    parents.push_back(bias.node());
  }
  return make_op<T>(m, out_dim, std::move(out), std::move(parents), [m, in, out_dim](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const T* g = self.grad.data();
    if (px->requires_grad) kernels::gemm_nn(g_backend, m, in, out_dim, g, pw->value.data(), px->grad_data(), true);
    if (pw->requires_grad) kernels::gemm_tn(g_backend, out_dim, in, m, g, px->value.data(), pw->grad_data(), true);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      T* gb = self.parents[2]->grad_data();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < out_dim; ++j) gb[j] += g[static_cast<std::size_t>(i) * out_dim + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_op<T>(a.rows(), a.cols(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* pg = p->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_op<T>(a.rows(), a.cols(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      T* pg = p->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += sign * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_op<T>(a.rows(), a.cols(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      T* g = pa->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      T* g = pb->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary<T>(a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary<T>(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_fail("add_row", a.rows(), a.cols(), row.rows(), row.cols());
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(a.values());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += row.values()[j];
  }
  return make_op<T>(m, n, std::move(out), {a.node(), row.node()}, [m, n](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      T* g = self.parents[0]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      T* g = self.parents[1]->grad_data();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) g[j] += self.grad[static_cast<std::size_t>(i) * n + j];
      }
    }
  });
}

template <typename T>
Tensor<T> mul_col(const Tensor<T>& a, const Tensor<T>& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) shape_fail("mul_col", a.rows(), a.cols(), col.rows(), col.cols());
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (int i = 0; i < m; ++i) {
    const T c = col.values()[i];
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = a.values()[static_cast<std::size_t>(i) * n + j] * c;
  }
  return make_op<T>(m, n, std::move(out), {a.node(), col.node()}, [m, n](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pc = self.parents[1];
    if (pa->requires_grad) {
      T* g = pa->grad_data();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          g[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(i) * n + j] * pc->value[i];
        }
      }
    }
    if (pc->requires_grad) {
      T* g = pc->grad_data();
      for (int i = 0; i < m; ++i) {
        T acc = 0;
        for (int j = 0; j < n; ++j) {
          acc += self.grad[static_cast<std::size_t>(i) * n + j] * pa->value[static_cast<std::size_t>(i) * n + j];
        }
        g[i] += acc;
      }
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> rsqrt(const Tensor<T>& a) {
  return unary<T>(a, [](T x) { return T(1) / std::sqrt(x); }, [](T, T y) { return T(-0.5) * y * y * y; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T x : a.values()) total += x;
  return make_op<T>(1, 1, {total}, {a.node()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    T* g = p->grad_data();
    for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(m, T(0));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[i] += a.values()[static_cast<std::size_t>(i) * n + j];
  }
  return make_op<T>(m, 1, std::move(out), {a.node()}, [m, n](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> row_mean(const Tensor<T>& a) {
  return scale(row_sum(a), T(1) / static_cast<T>(a.cols()));
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, const std::vector<T>& weights) {
  if (weights.size() != a.size()) throw ShapeError("weighted_sum: weight count mismatch");
  T total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] != T(0)) total += a.values()[i] * weights[i];
  }
  return make_op<T>(1, 1, {total}, {a.node()}, [weights](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (std::size_t i = 0; i < weights.size(); ++i) g[i] += weights[i] * self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizers

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (int i = 0; i < m; ++i) {
    const T* x = a.values().data() + static_cast<std::size_t>(i) * n;
    T* y = out.data() + static_cast<std::size_t>(i) * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (int j = 0; j < n; ++j) total += std::exp(x[j] - mx);
    const T lse = mx + std::log(total);
    for (int j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  return make_op<T>(m, n, std::move(out), {a.node()}, [m, n](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (int i = 0; i < m; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      T gs = 0;
      for (int j = 0; j < n; ++j) gs += self.grad[base + j];
      for (int j = 0; j < n; ++j) g[base + j] += self.grad[base + j] - std::exp(self.value[base + j]) * gs;
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (int i = 0; i < m; ++i) {
    const T* x = a.values().data() + static_cast<std::size_t>(i) * n;
    T* y = out.data() + static_cast<std::size_t>(i) * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (int j = 0; j < n; ++j) total += (y[j] = std::exp(x[j] - mx));
    for (int j = 0; j < n; ++j) y[j] /= total;
  }
  return make_op<T>(m, n, std::move(out), {a.node()}, [m, n](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (int i = 0; i < m; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      T dotp = 0;
      for (int j = 0; j < n; ++j) dotp += self.grad[base + j] * self.value[base + j];
      for (int j = 0; j < n; ++j) g[base + j] += self.value[base + j] * (self.grad[base + j] - dotp);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const int m = x.rows(), n = x.cols();
  if (gain.size() != static_cast<std::size_t>(n) || bias.size() != static_cast<std::size_t>(n)) {
    shape_fail("layer_norm", x.rows(), x.cols(), gain.rows(), gain.cols());
  }
  std::vector<T> out(x.size()), xhat(x.size()), rstd(m);
  for (int i = 0; i < m; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * n;
    T mean = 0;
    for (int j = 0; j < n; ++j) mean += x.values()[base + j];
    mean /= n;
    T var = 0;
    for (int j = 0; j < n; ++j) {
      const T d = x.values()[base + j] - mean;
      var += d * d;
    }
    var /= n;
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) {
      xhat[base + j] = (x.values()[base + j] - mean) * rstd[i];
      out[base + j] = xhat[base + j] * gain.values()[j] + bias.values()[j];
    }
  }
  return make_op<T>(m, n, std::move(out), {x.node(), gain.node(), bias.node()},
                    [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
                      auto& px = self.parents[0];
                      auto& pg = self.parents[1];
                      auto& pb = self.parents[2];
                      const T* g = self.grad.data();
                      if (pg->requires_grad || pb->requires_grad) {
                        T* dg = pg->requires_grad ? pg->grad_data() : nullptr;
                        T* db = pb->requires_grad ? pb->grad_data() : nullptr;
                        for (int i = 0; i < m; ++i) {
                          for (int j = 0; j < n; ++j) {
                            const std::size_t k = static_cast<std::size_t>(i) * n + j;
                            if (dg) dg[j] += g[k] * xhat[k];
                            if (db) db[j] += g[k];
                          }
                        }
                      }
                      if (!px->requires_grad) return;
                      T* dx = px->grad_data();
                      for (int i = 0; i < m; ++i) {
                        const std::size_t base = static_cast<std::size_t>(i) * n;
                        T mean_d = 0, mean_dx = 0;
                        for (int j = 0; j < n; ++j) {
                          const T d = g[base + j] * pg->value[j];
                          mean_d += d;
                          mean_dx += d * xhat[base + j];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for (int j = 0; j < n; ++j) {
                          const T d = g[base + j] * pg->value[j];
                          dx[base + j] += rstd[i] * (d - mean_d - xhat[base + j] * mean_dx);
                        }
                      }
                    });
}

template <typename T>
Tensor<T> nll(const Tensor<T>& logp, const std::vector<int>& targets, const std::vector<T>& weights) {
  const int m = logp.rows(), n = logp.cols();
  if (targets.size() != static_cast<std::size_t>(m) || weights.size() != static_cast<std::size_t>(m)) {
    throw ShapeError("nll: target/weight count does not match rows");
  }
  T total = 0;
  for (int i = 0; i < m; ++i) {
    if (weights[i] == T(0)) continue;
    if (targets[i] < 0 || targets[i] >= n) throw ShapeError("nll: target out of range");
    total -= weights[i] * logp.values()[static_cast<std::size_t>(i) * n + targets[i]];
  }
  return make_op<T>(1, 1, {total}, {logp.node()}, [targets, weights, m, n](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (int i = 0; i < m; ++i) {
      if (weights[i] != T(0)) g[static_cast<std::size_t>(i) * n + targets[i]] -= weights[i] * self.grad[0];
    }
  });
}

// ---------------------------------------------------------------------------
// Shape and indexing

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int m = parts[0].rows();
  int n = 0;
  std::vector<int> offsets;
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    if (p.rows() != m) shape_fail("concat_cols", m, n, p.rows(), p.cols());
    offsets.push_back(n);
    n += p.cols();
    parents.push_back(p.node());
  }
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const int c = parts[k].cols();
    for (int i = 0; i < m; ++i) {
      std::copy_n(parts[k].values().data() + static_cast<std::size_t>(i) * c, c,
                  out.data() + static_cast<std::size_t>(i) * n + offsets[k]);
    }
  }
  return make_op<T>(m, n, std::move(out), std::move(parents), [m, n, offsets](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const int c = p->cols;
      T* g = p->grad_data();
      for (int i = 0; i < m; ++i) {
        const T* src = self.grad.data() + static_cast<std::size_t>(i) * n + offsets[k];
        T* dst = g + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int start, int count) {
  const int m = a.rows(), n = a.cols();
  if (start < 0 || count < 0 || start + count > n) throw ShapeError("slice_cols: range out of bounds");
  std::vector<T> out(static_cast<std::size_t>(m) * count);
  for (int i = 0; i < m; ++i) {
    std::copy_n(a.values().data() + static_cast<std::size_t>(i) * n + start, count,
                out.data() + static_cast<std::size_t>(i) * count);
  }
  return make_op<T>(m, count, std::move(out), {a.node()}, [m, n, start, count](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < count; ++j) {
        g[static_cast<std::size_t>(i) * n + start + j] += self.grad[static_cast<std::size_t>(i) * count + j];
      }
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& index, int group) {
  const int n = a.cols();
  const int groups_in = a.rows() / group;
  const int m = static_cast<int>(index.size()) * group;
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] < 0 || index[e] >= groups_in) throw ShapeError("gather_rows: index out of range");
    std::copy_n(a.values().data() + static_cast<std::size_t>(index[e]) * group * n, group * n,
                out.data() + e * group * n);
  }
  return make_op<T>(m, n, std::move(out), {a.node()}, [index, group, n](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    const std::size_t span = static_cast<std::size_t>(group) * n;
    for (std::size_t e = 0; e < index.size(); ++e) {
      T* dst = g + static_cast<std::size_t>(index[e]) * span;
      const T* src = self.grad.data() + e * span;
      for (std::size_t j = 0; j < span; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Tensor<T> scatter_mean_rows(const Tensor<T>& a, const std::vector<int>& target, int num_targets, int group) {
  const int n = a.cols();
  if (a.rows() != static_cast<int>(target.size()) * group) throw ShapeError("scatter_mean_rows: row count mismatch");
  std::vector<T> inv_count(num_targets, T(0));
  for (int t : target) {
    if (t < 0 || t >= num_targets) throw ShapeError("scatter_mean_rows: target out of range");
    inv_count[t] += T(1);
  }
  for (auto& c : inv_count) c = c > 0 ? T(1) / c : T(0);
  const std::size_t span = static_cast<std::size_t>(group) * n;
  std::vector<T> out(static_cast<std::size_t>(num_targets) * span, T(0));
  for (std::size_t e = 0; e < target.size(); ++e) {
    T* dst = out.data() + static_cast<std::size_t>(target[e]) * span;
    const T* src = a.values().data() + e * span;
    for (std::size_t j = 0; j < span; ++j) dst[j] += src[j];
  }
  for (int t = 0; t < num_targets; ++t) {
    for (std::size_t j = 0; j < span; ++j) out[t * span + j] *= inv_count[t];
  }
  return make_op<T>(num_targets * group, n, std::move(out), {a.node()},
                    [target, inv_count = std::move(inv_count), span](Node<T>& self) {
                      T* g = self.parents[0]->grad_data();
                      for (std::size_t e = 0; e < target.size(); ++e) {
                        const T* src = self.grad.data() + static_cast<std::size_t>(target[e]) * span;
                        T* dst = g + e * span;
                        const T w = inv_count[target[e]];
                        for (std::size_t j = 0; j < span; ++j) dst[j] += w * src[j];
                      }
                    });
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& a, int times) {
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(static_cast<std::size_t>(m) * times * n);
  for (int i = 0; i < m; ++i) {
    for (int r = 0; r < times; ++r) {
      std::copy_n(a.values().data() + static_cast<std::size_t>(i) * n, n,
                  out.data() + (static_cast<std::size_t>(i) * times + r) * n);
    }
  }
  return make_op<T>(m * times, n, std::move(out), {a.node()}, [m, n, times](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (int i = 0; i < m; ++i) {
      for (int r = 0; r < times; ++r) {
        const T* src = self.grad.data() + (static_cast<std::size_t>(i) * times + r) * n;
        for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += src[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Vector channels

template <typename T>
Tensor<T> vec_sqnorm(const Tensor<T>& v) {
  if (v.rows() % 3 != 0) throw ShapeError("vec_sqnorm: rows not a multiple of 3");
  const int nodes = v.rows() / 3, c = v.cols();
  std::vector<T> out(static_cast<std::size_t>(nodes) * c, T(0));
  for (int i = 0; i < nodes; ++i) {
    for (int a = 0; a < 3; ++a) {
      const T* row = v.values().data() + (static_cast<std::size_t>(3) * i + a) * c;
      for (int ch = 0; ch < c; ++ch) out[static_cast<std::size_t>(i) * c + ch] += row[ch] * row[ch];
    }
  }
  return make_op<T>(nodes, c, std::move(out), {v.node()}, [nodes, c](Node<T>& self) {
    auto& p = self.parents[0];
    T* g = p->grad_data();
    for (int i = 0; i < nodes; ++i) {
      for (int a = 0; a < 3; ++a) {
        const std::size_t base = (static_cast<std::size_t>(3) * i + a) * c;
        for (int ch = 0; ch < c; ++ch) {
          g[base + ch] += T(2) * p->value[base + ch] * self.grad[static_cast<std::size_t>(i) * c + ch];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> frame_project(const Tensor<T>& v, const std::vector<T>& frames) {
  const int nodes = v.rows() / 3, c = v.cols();
  if (v.rows() % 3 != 0 || frames.size() != static_cast<std::size_t>(nodes) * 9) {
    throw ShapeError("frame_project: frame count does not match vector rows");
  }
  std::vector<T> out(static_cast<std::size_t>(nodes) * 3 * c, T(0));
  for (int i = 0; i < nodes; ++i) {
    const T* f = frames.data() + static_cast<std::size_t>(i) * 9;
    for (int a = 0; a < 3; ++a) {
      T* dst = out.data() + static_cast<std::size_t>(i) * 3 * c + static_cast<std::size_t>(a) * c;
      for (int b = 0; b < 3; ++b) {
        const T fab = f[3 * a + b];
        const T* src = v.values().data() + (static_cast<std::size_t>(3) * i + b) * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] += fab * src[ch];
      }
    }
  }
  return make_op<T>(nodes, 3 * c, std::move(out), {v.node()}, [frames, nodes, c](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (int i = 0; i < nodes; ++i) {
      const T* f = frames.data() + static_cast<std::size_t>(i) * 9;
      for (int a = 0; a < 3; ++a) {
        const T* src = self.grad.data() + static_cast<std::size_t>(i) * 3 * c + static_cast<std::size_t>(a) * c;
        for (int b = 0; b < 3; ++b) {
          const T fab = f[3 * a + b];
          T* dst = g + (static_cast<std::size_t>(3) * i + b) * c;
          for (int ch = 0; ch < c; ++ch) dst[ch] += fab * src[ch];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Stochastic

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> mask(a.size());
  for (auto& m : mask) m = rng.bernoulli(p) ? T(0) : keep_scale;
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * mask[i];
  return make_op<T>(a.rows(), a.cols(), std::move(out), {a.node()}, [mask = std::move(mask)](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> vector_dropout(const Tensor<T>& v, double p, Rng& rng) {
  if (p <= 0.0) return v;
  const int nodes = v.rows() / 3, c = v.cols();
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> channel(static_cast<std::size_t>(nodes) * c);
  for (auto& m : channel) m = rng.bernoulli(p) ? T(0) : keep_scale;
  std::vector<T> mask(v.size());
  for (int i = 0; i < nodes; ++i) {
    for (int a = 0; a < 3; ++a) {
      for (int ch = 0; ch < c; ++ch) {
        mask[(static_cast<std::size_t>(3) * i + a) * c + ch] = channel[static_cast<std::size_t>(i) * c + ch];
      }
    }
  }
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v.values()[i] * mask[i];
  return make_op<T>(v.rows(), c, std::move(out), {v.node()}, [mask = std::move(mask)](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionSpec& spec,
                    const std::vector<std::uint8_t>& key_mask, double dropout_p, Rng* rng) {
  kernels::AttentionShape shape{spec.batch, spec.len_q, spec.len_k, spec.heads, q.cols(), spec.causal};
  if (q.rows() != spec.batch * spec.len_q || k.rows() != spec.batch * spec.len_k || v.rows() != k.rows() ||
      k.cols() != q.cols() || v.cols() != q.cols() || q.cols() % spec.heads != 0) {
    throw ShapeError("attention: inconsistent q/k/v shapes");
  }
  if (!key_mask.empty() && key_mask.size() != static_cast<std::size_t>(spec.batch) * spec.len_k) {
    throw ShapeError("attention: key mask size mismatch");
  }
  std::vector<T> keep;
  if (dropout_p > 0.0) {
    if (!rng) throw std::invalid_argument("attention dropout requires an Rng");
    keep.resize(shape.prob_size());
    const T keep_scale = T(1.0 / (1.0 - dropout_p));
    for (auto& m : keep) m = rng->bernoulli(dropout_p) ? T(0) : keep_scale;
  }
  std::vector<T> probs(shape.prob_size());
  std::vector<T> out(q.size());
  const std::uint8_t* km = key_mask.empty() ? nullptr : key_mask.data();
  kernels::attention_forward(g_backend, shape, q.values().data(), k.values().data(), v.values().data(), km,
                             keep.empty() ? nullptr : keep.data(), probs.data(), out.data());
  return make_op<T>(q.rows(), q.cols(), std::move(out), {q.node(), k.node(), v.node()},
                    [shape, probs = std::move(probs), keep = std::move(keep)](Node<T>& self) {
                      auto& pq = self.parents[0];
                      auto& pk = self.parents[1];
                      auto& pv = self.parents[2];
                      std::vector<T> dq(pq->value.size(), T(0)), dk(pk->value.size(), T(0)),
                          dv(pv->value.size(), T(0));
                      kernels::attention_backward(g_backend, shape, pq->value.data(), pk->value.data(),
                                                  pv->value.data(), probs.data(), keep.empty() ? nullptr : keep.data(),
                                                  self.grad.data(), dq.data(), dk.data(), dv.data());
                      auto accumulate = [](auto& parent, const std::vector<T>& d) {
                        if (!parent->requires_grad) return;
                        T* g = parent->grad_data();
                        for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
                      };
                      accumulate(pq, dq);
                      accumulate(pk, dk);
                      accumulate(pv, dv);
                    });
}

// ---------------------------------------------------------------------------

#define MMDESIGN_INSTANTIATE(T)                                                                                    \
  template class Tensor<T>;                                                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                   \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                              \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> mul_col(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                    \
  template Tensor<T> exp(const Tensor<T>&);                                                                        \
  template Tensor<T> log(const Tensor<T>&);                                                                        \
  template Tensor<T> sqrt(const Tensor<T>&);                                                                       \
  template Tensor<T> rsqrt(const Tensor<T>&);                                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                                        \
  template Tensor<T> row_sum(const Tensor<T>&);                                                                    \
  template Tensor<T> row_mean(const Tensor<T>&);                                                                   \
  template Tensor<T> weighted_sum(const Tensor<T>&, const std::vector<T>&);                                        \
  template Tensor<T> log_softmax(const Tensor<T>&);                                                                \
  template Tensor<T> softmax(const Tensor<T>&);                                                                    \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                          \
  template Tensor<T> nll(const Tensor<T>&, const std::vector<int>&, const std::vector<T>&);                         \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                                   \
  template Tensor<T> slice_cols(const Tensor<T>&, int, int);                                                       \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<int>&, int);                                  \
  template Tensor<T> scatter_mean_rows(const Tensor<T>&, const std::vector<int>&, int, int);                       \
  template Tensor<T> repeat_rows(const Tensor<T>&, int);                                                           \
  template Tensor<T> vec_sqnorm(const Tensor<T>&);                                                                 \
  template Tensor<T> frame_project(const Tensor<T>&, const std::vector<T>&);                                       \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                                                      \
  template Tensor<T> vector_dropout(const Tensor<T>&, double, Rng&);                                               \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionSpec&,         \
                               const std::vector<std::uint8_t>&, double, Rng*);

MMDESIGN_INSTANTIATE(float)
MMDESIGN_INSTANTIATE(double)
#undef MMDESIGN_INSTANTIATE

}  // namespace mmdesign::ag
