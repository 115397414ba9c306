#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "mvitime/nn/tensor.hpp"

namespace mvitime::nn {

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Reverse-mode tape. Every op builds a Node whose `back` closure scatters
// the node's grad into its parents. Graphs are built per forward pass;
// leaves wrap parameter tensors.
template <typename T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> back;
  bool requires_grad = true;

  void ensure_grad() {
    if (grad.v.empty()) grad = Tensor<T>(val.shape);
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = true) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> back) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(value);
  n->parents = std::move(parents);
  n->back = std::move(back);
  bool any = false;
  for (const auto& p : n->parents) any = any || p->requires_grad;
  n->requires_grad = any;
  return n;
}

// Seed the root with `seed` (same shape as root->val) and run the tape
// backwards in topological order.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  if (!seed.v.empty() && seed.shape != root->val.shape) {
    throw ShapeMismatch("backward: seed shape mismatch");
  }
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad = seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->back && !n->grad.v.empty()) n->back(*n);
  }
}

// ---- elementwise ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!a->val.same_shape(b->val)) throw ShapeMismatch("add: shape mismatch");
  Tensor<T> out = a->val;
  for (long i = 0; i < out.size(); ++i) out.v[i] += b->val.v[i];
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (long i = 0; i < n.grad.size(); ++i) a->grad.v[i] += n.grad.v[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (long i = 0; i < n.grad.size(); ++i) b->grad.v[i] += n.grad.v[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out = a->val;
  for (auto& x : out.v) x *= c;
  return make_op<T>(std::move(out), {a}, [a, c](Node<T>& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (long i = 0; i < n.grad.size(); ++i) a->grad.v[i] += c * n.grad.v[i];
  });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  Tensor<T> out = a->val;
  for (auto& x : out.v) {
    const T s = T(1) / (T(1) + std::exp(-x));
    x = x * s;
  }
  return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (long i = 0; i < n.grad.size(); ++i) {
      const T x = a->val.v[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      a->grad.v[i] += n.grad.v[i] * s * (T(1) + x * (T(1) - s));
    }
  });
}

// ---- convolution ----

// x: [B, Cin, N], w: [Cout, Cin/groups, K] -> [B, Cout, Nout]
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, int stride, int pad, int groups = 1) {
  const int B = x->val.dim(0), cin = x->val.dim(1), N = x->val.dim(2);
  const int cout = w->val.dim(0), cig = w->val.dim(1), K = w->val.dim(2);
  if (cin % groups != 0 || cout % groups != 0 || cig != cin / groups) {
    throw ShapeMismatch("conv1d: channel/group mismatch");
  }
  const int nout = (N + 2 * pad - K) / stride + 1;
  if (nout < 1) throw ShapeMismatch("conv1d: output length < 1");
  const int cog = cout / groups;

  Tensor<T> out({B, cout, nout});
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < cout; ++co) {
      const int cbase = (co / cog) * cig;
      for (int no = 0; no < nout; ++no) {
        T acc = 0;
        for (int ci = 0; ci < cig; ++ci) {
          for (int k = 0; k < K; ++k) {
            const int ni = no * stride + k - pad;
            if (ni >= 0 && ni < N) acc += x->val.at(b, cbase + ci, ni) * w->val.at(co, ci, k);
          }
        }
        out.at(b, co, no) = acc;
      }
    }
  }
  return make_op<T>(std::move(out), {x, w}, [x, w, stride, pad, cig, cog](Node<T>& n) {
    const int B = x->val.dim(0), N = x->val.dim(2);
    const int cout = w->val.dim(0), K = w->val.dim(2);
    const int nout = n.val.dim(2);
    if (x->requires_grad) x->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    for (int b = 0; b < B; ++b) {
      for (int co = 0; co < cout; ++co) {
        const int cbase = (co / cog) * cig;
        for (int no = 0; no < nout; ++no) {
          const T go = n.grad.at(b, co, no);
          if (go == T(0)) continue;
          for (int ci = 0; ci < cig; ++ci) {
            for (int k = 0; k < K; ++k) {
              const int ni = no * stride + k - pad;
              if (ni < 0 || ni >= N) continue;
              if (x->requires_grad) x->grad.at(b, cbase + ci, ni) += go * w->val.at(co, ci, k);
              if (w->requires_grad) w->grad.at(co, ci, k) += go * x->val.at(b, cbase + ci, ni);
            }
          }
        }
      }
    }
  });
}

// bias over the channel axis of [B, C, N]
template <typename T>
Var<T> add_bias_channels(const Var<T>& x, const Var<T>& b) {
  const int C = x->val.dim(1);
  if (b->val.rank() != 1 || b->val.dim(0) != C) throw ShapeMismatch("add_bias_channels");
  Tensor<T> out = x->val;
  const int B = x->val.dim(0), N = x->val.dim(2);
  for (int bb = 0; bb < B; ++bb)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < N; ++i) out.at(bb, c, i) += b->val.v[c];
  return make_op<T>(std::move(out), {x, b}, [x, b](Node<T>& n) {
    const int B = n.val.dim(0), C = n.val.dim(1), N = n.val.dim(2);
    if (x->requires_grad) {
      x->ensure_grad();
      for (long i = 0; i < n.grad.size(); ++i) x->grad.v[i] += n.grad.v[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < N; ++i) b->grad.v[c] += n.grad.at(bb, c, i);
    }
  });
}

// ---- linear algebra ----

// x: [..., Cin], w: [Cout, Cin] -> [..., Cout]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
  const int cin = x->val.shape.back();
  if (w->val.rank() != 2 || w->val.dim(1) != cin) throw ShapeMismatch("linear: weight mismatch");
  const int cout = w->val.dim(0);
  const long rows = x->val.size() / cin;
  std::vector<int> out_shape = x->val.shape;
  out_shape.back() = cout;
  Tensor<T> out(out_shape);
  for (long r = 0; r < rows; ++r) {
    const T* xr = x->val.v.data() + r * cin;
    T* yr = out.v.data() + r * cout;
    for (int o = 0; o < cout; ++o) {
      const T* wr = w->val.v.data() + static_cast<long>(o) * cin;
      T acc = 0;
      for (int i = 0; i < cin; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
  return make_op<T>(std::move(out), {x, w}, [x, w, rows, cin, cout](Node<T>& n) {
    if (x->requires_grad) x->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    for (long r = 0; r < rows; ++r) {
      const T* xr = x->val.v.data() + r * cin;
      const T* gr = n.grad.v.data() + r * cout;
      for (int o = 0; o < cout; ++o) {
        const T go = gr[o];
        if (go == T(0)) continue;
        const T* wr = w->val.v.data() + static_cast<long>(o) * cin;
        if (x->requires_grad) {
          T* gx = x->grad.v.data() + r * cin;
          for (int i = 0; i < cin; ++i) gx[i] += go * wr[i];
        }
        if (w->requires_grad) {
          T* gw = w->grad.v.data() + static_cast<long>(o) * cin;
          for (int i = 0; i < cin; ++i) gw[i] += go * xr[i];
        }
      }
    }
  });
}

// bias over the last axis
template <typename T>
Var<T> add_bias_last(const Var<T>& x, const Var<T>& b) {
  const int C = x->val.shape.back();
  if (b->val.rank() != 1 || b->val.dim(0) != C) throw ShapeMismatch("add_bias_last");
  Tensor<T> out = x->val;
  const long rows = out.size() / C;
  for (long r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) out.v[r * C + c] += b->val.v[c];
  return make_op<T>(std::move(out), {x, b}, [x, b, rows, C](Node<T>& n) {
    if (x->requires_grad) {
      x->ensure_grad();
      for (long i = 0; i < n.grad.size(); ++i) x->grad.v[i] += n.grad.v[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (long r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) b->grad.v[c] += n.grad.v[r * C + c];
    }
  });
}

// layer norm over the last axis
template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const int C = x->val.shape.back();
  if (gamma->val.dim(0) != C || beta->val.dim(0) != C) throw ShapeMismatch("layernorm");
  const long rows = x->val.size() / C;
  Tensor<T> out(x->val.shape);
  for (long r = 0; r < rows; ++r) {
    const T* xr = x->val.v.data() + r * C;
    T mu = 0;
    for (int c = 0; c < C; ++c) mu += xr[c];
    mu /= C;
    T var = 0;
    for (int c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= C;
    const T inv = T(1) / std::sqrt(var + eps);
    for (int c = 0; c < C; ++c) {
      out.v[r * C + c] = gamma->val.v[c] * (xr[c] - mu) * inv + beta->val.v[c];
    }
  }
  return make_op<T>(std::move(out), {x, gamma, beta}, [x, gamma, beta, rows, C, eps](Node<T>& n) {
    if (x->requires_grad) x->ensure_grad();
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    std::vector<T> xhat(C), dxhat(C);
    for (long r = 0; r < rows; ++r) {
      const T* xr = x->val.v.data() + r * C;
      const T* gr = n.grad.v.data() + r * C;
      T mu = 0;
      for (int c = 0; c < C; ++c) mu += xr[c];
      mu /= C;
      T var = 0;
      for (int c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
      var /= C;
      const T inv = T(1) / std::sqrt(var + eps);
      T sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (int c = 0; c < C; ++c) {
        xhat[c] = (xr[c] - mu) * inv;
        dxhat[c] = gr[c] * gamma->val.v[c];
        sum_dxhat += dxhat[c];
        sum_dxhat_xhat += dxhat[c] * xhat[c];
      }
      for (int c = 0; c < C; ++c) {
        if (x->requires_grad) {
          x->grad.v[r * C + c] +=
              inv / C * (T(C) * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat);
        }
        if (gamma->requires_grad) gamma->grad.v[c] += gr[c] * xhat[c];
        if (beta->requires_grad) beta->grad.v[c] += gr[c];
      }
    }
  });
}

template <typename T>
Var<T> softmax_last(const Var<T>& x) {
  const int C = x->val.shape.back();
  const long rows = x->val.size() / C;
  Tensor<T> out(x->val.shape);
  for (long r = 0; r < rows; ++r) {
    const T* xr = x->val.v.data() + r * C;
    T m = xr[0];
    for (int c = 1; c < C; ++c) m = std::max(m, xr[c]);
    T z = 0;
    for (int c = 0; c < C; ++c) {
      out.v[r * C + c] = std::exp(xr[c] - m);
      z += out.v[r * C + c];
    }
    for (int c = 0; c < C; ++c) out.v[r * C + c] /= z;
  }
  return make_op<T>(std::move(out), {x}, [x, rows, C](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (long r = 0; r < rows; ++r) {
      const T* yr = n.val.v.data() + r * C;
      const T* gr = n.grad.v.data() + r * C;
      T dot = 0;
      for (int c = 0; c < C; ++c) dot += yr[c] * gr[c];
      for (int c = 0; c < C; ++c) x->grad.v[r * C + c] += yr[c] * (gr[c] - dot);
    }
  });
}

// a: [S, M, K], b: [S, K, N] -> [S, M, N]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a->val.rank() != 3 || b->val.rank() != 3 || a->val.dim(0) != b->val.dim(0) ||
      a->val.dim(2) != b->val.dim(1)) {
    throw ShapeMismatch("matmul: incompatible shapes");
  }
  const int S = a->val.dim(0), M = a->val.dim(1), K = a->val.dim(2), N = b->val.dim(2);
  Tensor<T> out({S, M, N});
  for (int s = 0; s < S; ++s)
    for (int m = 0; m < M; ++m)
      for (int k = 0; k < K; ++k) {
        const T av = a->val.at(s, m, k);
        if (av == T(0)) continue;
        for (int n2 = 0; n2 < N; ++n2) out.at(s, m, n2) += av * b->val.at(s, k, n2);
      }
  return make_op<T>(std::move(out), {a, b}, [a, b, S, M, K, N](Node<T>& n) {
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    for (int s = 0; s < S; ++s)
      for (int m = 0; m < M; ++m)
        for (int n2 = 0; n2 < N; ++n2) {
          const T go = n.grad.at(s, m, n2);
          if (go == T(0)) continue;
          for (int k = 0; k < K; ++k) {
            if (a->requires_grad) a->grad.at(s, m, k) += go * b->val.at(s, k, n2);
            if (b->requires_grad) b->grad.at(s, k, n2) += go * a->val.at(s, m, k);
          }
        }
  });
}

// ---- index rearrangements (bijective; backward is scatter-add) ----

template <typename T>
Var<T> rearrange(const Var<T>& x, std::vector<int> out_shape, std::vector<long> out_to_in) {
  Tensor<T> out(std::move(out_shape));
  if (static_cast<long>(out_to_in.size()) != out.size()) throw ShapeMismatch("rearrange: map size");
  for (long i = 0; i < out.size(); ++i) out.v[i] = x->val.v[out_to_in[i]];
  return make_op<T>(std::move(out), {x}, [x, map = std::move(out_to_in)](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (long i = 0; i < n.grad.size(); ++i) x->grad.v[map[i]] += n.grad.v[i];
  });
}

// [B, C, N] with p | N -> [B*p, N/p, C]; position i of patch j goes to
// token j of stream i.
template <typename T>
Var<T> unfold_1d(const Var<T>& x, int p) {
  const int B = x->val.dim(0), C = x->val.dim(1), N = x->val.dim(2);
  if (N % p != 0) throw ShapeMismatch("unfold_1d: patch size does not divide length");
  const int Tn = N / p;
  std::vector<long> map(static_cast<std::size_t>(x->val.size()));
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < Tn; ++j)
        for (int c = 0; c < C; ++c) {
          const long out_idx = ((static_cast<long>(b) * p + i) * Tn + j) * C + c;
          const long in_idx = (static_cast<long>(b) * C + c) * N + (static_cast<long>(j) * p + i);
          map[out_idx] = in_idx;
        }
  return rearrange(x, {B * p, Tn, C}, std::move(map));
}

// exact inverse of unfold_1d
template <typename T>
Var<T> fold_1d(const Var<T>& t, int p, int batch) {
  const int S = t->val.dim(0), Tn = t->val.dim(1), C = t->val.dim(2);
  if (S != batch * p) throw ShapeMismatch("fold_1d: stream count != batch * patch");
  const int N = Tn * p;
  std::vector<long> map(static_cast<std::size_t>(t->val.size()));
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < Tn; ++j)
        for (int i = 0; i < p; ++i) {
          const long out_idx = (static_cast<long>(b) * C + c) * N + (static_cast<long>(j) * p + i);
          const long in_idx = ((static_cast<long>(b) * p + i) * Tn + j) * C + c;
          map[out_idx] = in_idx;
        }
  return rearrange(t, {batch, C, N}, std::move(map));
}

// [S, T, C] -> [S*h, T, C/h]
template <typename T>
Var<T> split_heads(const Var<T>& x, int h) {
  const int S = x->val.dim(0), Tn = x->val.dim(1), C = x->val.dim(2);
  if (C % h != 0) throw ShapeMismatch("split_heads: heads do not divide dim");
  const int dh = C / h;
  std::vector<long> map(static_cast<std::size_t>(x->val.size()));
  for (int s = 0; s < S; ++s)
    for (int hd = 0; hd < h; ++hd)
      for (int t = 0; t < Tn; ++t)
        for (int d = 0; d < dh; ++d) {
          map[((static_cast<long>(s) * h + hd) * Tn + t) * dh + d] =
              (static_cast<long>(s) * Tn + t) * C + (hd * dh + d);
        }
  return rearrange(x, {S * h, Tn, dh}, std::move(map));
}

template <typename T>
Var<T> merge_heads(const Var<T>& x, int h) {
  const int Sh = x->val.dim(0), Tn = x->val.dim(1), dh = x->val.dim(2);
  if (Sh % h != 0) throw ShapeMismatch("merge_heads");
  const int S = Sh / h, C = dh * h;
  std::vector<long> map(static_cast<std::size_t>(x->val.size()));
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < Tn; ++t)
      for (int hd = 0; hd < h; ++hd)
        for (int d = 0; d < dh; ++d) {
          map[(static_cast<long>(s) * Tn + t) * C + (hd * dh + d)] =
              ((static_cast<long>(s) * h + hd) * Tn + t) * dh + d;
        }
  return rearrange(x, {S, Tn, C}, std::move(map));
}

template <typename T>
Var<T> transpose_last2(const Var<T>& x) {
  const int S = x->val.dim(0), M = x->val.dim(1), N = x->val.dim(2);
  std::vector<long> map(static_cast<std::size_t>(x->val.size()));
  for (int s = 0; s < S; ++s)
    for (int n2 = 0; n2 < N; ++n2)
      for (int m = 0; m < M; ++m) {
        map[(static_cast<long>(s) * N + n2) * M + m] = (static_cast<long>(s) * M + m) * N + n2;
      }
  return rearrange(x, {S, N, M}, std::move(map));
}

// ---- padding / slicing along the length axis of [B, C, N] ----

template <typename T>
Var<T> pad_length(const Var<T>& x, int new_len) {
  const int B = x->val.dim(0), C = x->val.dim(1), N = x->val.dim(2);
  if (new_len < N) throw ShapeMismatch("pad_length: shrinking");
  if (new_len == N) return x;
  Tensor<T> out({B, C, new_len});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < N; ++i) out.at(b, c, i) = x->val.at(b, c, i);
  return make_op<T>(std::move(out), {x}, [x, N](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const int B = n.val.dim(0), C = n.val.dim(1);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < N; ++i) x->grad.at(b, c, i) += n.grad.at(b, c, i);
  });
}

template <typename T>
Var<T> slice_length(const Var<T>& x, int new_len) {
  const int B = x->val.dim(0), C = x->val.dim(1), N = x->val.dim(2);
  if (new_len > N) throw ShapeMismatch("slice_length: growing");
  if (new_len == N) return x;
  Tensor<T> out({B, C, new_len});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < new_len; ++i) out.at(b, c, i) = x->val.at(b, c, i);
  return make_op<T>(std::move(out), {x}, [x, new_len](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const int B = n.val.dim(0), C = n.val.dim(1);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < new_len; ++i) x->grad.at(b, c, i) += n.grad.at(b, c, i);
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const int B = a->val.dim(0), C1 = a->val.dim(1), N = a->val.dim(2), C2 = b->val.dim(1);
  if (b->val.dim(0) != B || b->val.dim(2) != N) throw ShapeMismatch("concat_channels");
  Tensor<T> out({B, C1 + C2, N});
  for (int bb = 0; bb < B; ++bb) {
    for (int c = 0; c < C1; ++c)
      for (int i = 0; i < N; ++i) out.at(bb, c, i) = a->val.at(bb, c, i);
    for (int c = 0; c < C2; ++c)
      for (int i = 0; i < N; ++i) out.at(bb, C1 + c, i) = b->val.at(bb, c, i);
  }
  return make_op<T>(std::move(out), {a, b}, [a, b, C1, C2](Node<T>& n) {
    const int B = n.val.dim(0), N = n.val.dim(2);
    if (a->requires_grad) {
      a->ensure_grad();
      for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C1; ++c)
          for (int i = 0; i < N; ++i) a->grad.at(bb, c, i) += n.grad.at(bb, c, i);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C2; ++c)
          for (int i = 0; i < N; ++i) b->grad.at(bb, c, i) += n.grad.at(bb, C1 + c, i);
    }
  });
}

// global average pool over the length axis: [B, C, N] -> [B, C]
template <typename T>
Var<T> mean_length(const Var<T>& x) {
  const int B = x->val.dim(0), C = x->val.dim(1), N = x->val.dim(2);
  Tensor<T> out({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T acc = 0;
      for (int i = 0; i < N; ++i) acc += x->val.at(b, c, i);
      out.at(b, c) = acc / T(N);
    }
  return make_op<T>(std::move(out), {x}, [x, N](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const int B = n.val.dim(0), C = n.val.dim(1);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T g = n.grad.at(b, c) / T(N);
        for (int i = 0; i < N; ++i) x->grad.at(b, c, i) += g;
      }
  });
}

// learned positional encoding pe [T, C] broadcast over streams of [S, T, C]
template <typename T>
Var<T> add_positional(const Var<T>& x, const Var<T>& pe) {
  const int S = x->val.dim(0), Tn = x->val.dim(1), C = x->val.dim(2);
  if (pe->val.rank() != 2 || pe->val.dim(0) != Tn || pe->val.dim(1) != C) {
    throw ShapeMismatch("add_positional");
  }
  Tensor<T> out = x->val;
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < Tn; ++t)
      for (int c = 0; c < C; ++c) out.at(s, t, c) += pe->val.at(t, c);
  return make_op<T>(std::move(out), {x, pe}, [x, pe](Node<T>& n) {
    const int S = n.val.dim(0), Tn = n.val.dim(1), C = n.val.dim(2);
    if (x->requires_grad) {
      x->ensure_grad();
      for (long i = 0; i < n.grad.size(); ++i) x->grad.v[i] += n.grad.v[i];
    }
    if (pe->requires_grad) {
      pe->ensure_grad();
      for (int s = 0; s < S; ++s)
        for (int t = 0; t < Tn; ++t)
          for (int c = 0; c < C; ++c) pe->grad.at(t, c) += n.grad.at(s, t, c);
    }
  });
}

// row-wise L2 normalization of [B, F]
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12)) {
  const int B = x->val.dim(0), F = x->val.dim(1);
  Tensor<T> out(x->val.shape);
  std::vector<T> norms(B);
  for (int b = 0; b < B; ++b) {
    T s = 0;
    for (int f = 0; f < F; ++f) s += x->val.at(b, f) * x->val.at(b, f);
    norms[b] = std::sqrt(s) + eps;
    for (int f = 0; f < F; ++f) out.at(b, f) = x->val.at(b, f) / norms[b];
  }
  return make_op<T>(std::move(out), {x}, [x, norms = std::move(norms), B, F](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int b = 0; b < B; ++b) {
      T dot = 0;
      for (int f = 0; f < F; ++f) dot += n.grad.at(b, f) * x->val.at(b, f);
      const T n3 = norms[b] * norms[b] * norms[b];
      for (int f = 0; f < F; ++f) {
        x->grad.at(b, f) += n.grad.at(b, f) / norms[b] - x->val.at(b, f) * dot / n3;
      }
    }
  });
}

}  // namespace mvitime::nn
