#include "meshrt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace meshrt {

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <class T>
Var<T> Tape<T>::constant(Tensor<T> v) {
  check_finite(v, "tape constant");
  nodes_.push_back(Node{std::move(v), {}, {}, false});
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var<T> Tape<T>::variable(Tensor<T> v) {
  check_finite(v, "tape variable");
  nodes_.push_back(Node{std::move(v), {}, {}, grad_enabled_});
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn, const char* op) {
  return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn), op);
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn, const char* op) {
  check_finite(value, op);
  bool needs = false;
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw StateError(std::string(op) + ": input belongs to another tape");
      needs = needs || nodes_[in.id].requires_grad;
    }
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Tensor<T>& Tape<T>::grad_slot(Var<T> v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::accumulate(Var<T> v, const Tensor<T>& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    if (g.shape() != n.value.shape()) throw ShapeError("accumulate: gradient shape does not match value");
    n.grad = g;
    return;
  }
  add_inplace(n.grad, g);
}

template <class T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> root) {
  if (!grad_enabled_) throw StateError("backward on a tape with gradients disabled");
  Node& r = nodes_.at(root.id);
  if (r.value.numel() != 1) throw ShapeError("backward root must be a scalar, got " + shape_str(r.value.shape()));
  for (auto& n : nodes_) n.grad = Tensor<T>();
  r.grad = Tensor<T>::full(r.value.shape(), T(1));
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace {

template <class T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) throw StateError("op on an unbound Var");
  return *a.tape;
}

template <class T>
bool needs(Var<T> v) {
  return v.tape->requires_grad(v);
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return tape_of(a).record(meshrt::add(a.value(), b.value()), {a, b},
                           [a, b](Tape<T>& t, const Tensor<T>& g) {
                             t.accumulate(a, g);
                             t.accumulate(b, g);
                           },
                           "add");
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return tape_of(a).record(meshrt::sub(a.value(), b.value()), {a, b},
                           [a, b](Tape<T>& t, const Tensor<T>& g) {
                             t.accumulate(a, g);
                             if (needs(b)) t.accumulate(b, meshrt::scale(g, T(-1)));
                           },
                           "sub");
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return tape_of(a).record(hadamard(a.value(), b.value()), {a, b},
                           [a, b](Tape<T>& t, const Tensor<T>& g) {
                             if (needs(a)) t.accumulate(a, hadamard(g, b.value()));
                             if (needs(b)) t.accumulate(b, hadamard(g, a.value()));
                           },
                           "mul");
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  return tape_of(a).record(meshrt::scale(a.value(), s), {a},
                           [a, s](Tape<T>& t, const Tensor<T>& g) { t.accumulate(a, meshrt::scale(g, s)); },
                           "scale");
}

template <class T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  return tape_of(a).record(Tensor<T>({1}, {s}), {a},
                           [a](Tape<T>& t, const Tensor<T>& g) {
                             t.accumulate(a, Tensor<T>::full(a.shape(), g[0]));
                           },
                           "sum");
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  return tape_of(a).record(meshrt::matmul(a.value(), b.value()), {a, b},
                           [a, b](Tape<T>& t, const Tensor<T>& g) {
                             if (needs(a)) t.accumulate(a, meshrt::matmul_nt(g, b.value()));
                             if (needs(b)) t.accumulate(b, meshrt::matmul_tn(a.value(), g));
                           },
                           "matmul");
}

template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  return tape_of(a).record(meshrt::matmul_nt(a.value(), b.value()), {a, b},
                           [a, b](Tape<T>& t, const Tensor<T>& g) {
                             if (needs(a)) t.accumulate(a, meshrt::matmul(g, b.value()));
                             if (needs(b)) t.accumulate(b, meshrt::matmul_tn(g, a.value()));
                           },
                           "matmul_nt");
}

template <class T>
Var<T> add_row(Var<T> x, Var<T> bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = bias.value();
  if (bv.rank() != 1 || bv.dim(0) != xv.cols())
    throw ShapeError("add_row: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  Tensor<T> out = xv;
  const std::size_t r = xv.rows(), c = xv.cols();
  for (std::size_t i = 0; i < r; ++i) {
    T* o = out.row(i);
    for (std::size_t j = 0; j < c; ++j) o[j] += bv[j];
  }
  return tape_of(x).record(std::move(out), {x, bias},
                           [x, bias, r, c](Tape<T>& t, const Tensor<T>& g) {
                             t.accumulate(x, g);
                             if (needs(bias)) {
                               Tensor<T>& gb = t.grad_slot(bias);
                               for (std::size_t i = 0; i < r; ++i) {
                                 const T* gi = g.row(i);
                                 for (std::size_t j = 0; j < c; ++j) gb[j] += gi[j];
                               }
                             }
                           },
                           "add_row");
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_row(matmul(x, w), b);
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const Tensor<T>& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gain.value().numel() != c || bias.value().numel() != c) throw ShapeError("layer_norm: parameter width mismatch");
  Tensor<T> xhat(xv.shape());
  std::vector<T> rstd(r);
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = bias.value();
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = xv.row(i);
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<T>(c);
    rstd[i] = T(1) / std::sqrt(var + eps);
    T* hi = xhat.row(i);
    T* oi = out.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      hi[j] = (xi[j] - mean) * rstd[i];
      oi[j] = hi[j] * gv[j] + bv[j];
    }
  }
  return tape_of(x).record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), r, c](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& gv = gain.value();
        if (needs(gain) || needs(bias)) {
          Tensor<T>& gg = t.grad_slot(gain);
          Tensor<T>& gb = t.grad_slot(bias);
          for (std::size_t i = 0; i < r; ++i) {
            const T* gi = g.row(i);
            const T* hi = xhat.row(i);
            for (std::size_t j = 0; j < c; ++j) {
              gg[j] += gi[j] * hi[j];
              gb[j] += gi[j];
            }
          }
        }
        if (!needs(x)) return;
        Tensor<T>& gx = t.grad_slot(x);
        std::vector<T> dyg(c);
        for (std::size_t i = 0; i < r; ++i) {
          const T* gi = g.row(i);
          const T* hi = xhat.row(i);
          T m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < c; ++j) {
            dyg[j] = gi[j] * gv[j];
            m1 += dyg[j];
            m2 += dyg[j] * hi[j];
          }
          m1 /= static_cast<T>(c);
          m2 /= static_cast<T>(c);
          T* gxi = gx.row(i);
          for (std::size_t j = 0; j < c; ++j) gxi[j] += rstd[i] * (dyg[j] - m1 - hi[j] * m2);
        }
      },
      "layer_norm");
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

template <class T>
Var<T> gelu(Var<T> x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  Tensor<T> th(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const T v = xv[i];
    const T inner = T(kGeluC) * (v + T(kGeluA) * v * v * v);
    th[i] = std::tanh(inner);
    out[i] = T(0.5) * v * (T(1) + th[i]);
  }
  return tape_of(x).record(std::move(out), {x},
                           [x, th = std::move(th)](Tape<T>& t, const Tensor<T>& g) {
                             const Tensor<T>& xv = x.value();
                             Tensor<T>& gx = t.grad_slot(x);
                             for (std::size_t i = 0; i < xv.numel(); ++i) {
                               const T v = xv[i];
                               const T d = T(0.5) * (T(1) + th[i]) +
                                           T(0.5) * v * (T(1) - th[i] * th[i]) * T(kGeluC) *
                                               (T(1) + T(3 * kGeluA) * v * v);
                               gx[i] += g[i] * d;
                             }
                           },
                           "gelu");
}

template <class T>
Var<T> softmax_rows(Var<T> x) {
  Tensor<T> y = meshrt::softmax_rows(x.value());
  Tensor<T> saved = y;
  return tape_of(x).record(std::move(y), {x},
                           [x, y = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
                             Tensor<T>& gx = t.grad_slot(x);
                             const std::size_t r = y.rows(), c = y.cols();
                             for (std::size_t i = 0; i < r; ++i) {
                               const T* yi = y.row(i);
                               const T* gi = g.row(i);
                               T dot = 0;
                               for (std::size_t j = 0; j < c; ++j) dot += gi[j] * yi[j];
                               T* o = gx.row(i);
                               for (std::size_t j = 0; j < c; ++j) o[j] += yi[j] * (gi[j] - dot);
                             }
                           },
                           "softmax_rows");
}

namespace {

// cos/sin table [seq_len × half] for rotate-half RoPE with base 10000.
template <class T>
void rope_tables(std::size_t seq_len, std::size_t head_dim, std::vector<T>& cs, std::vector<T>& sn) {
  const std::size_t half = head_dim / 2;
  cs.resize(seq_len * half);
  sn.resize(seq_len * half);
  for (std::size_t p = 0; p < seq_len; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double ang = static_cast<double>(p) * freq;
      cs[p * half + i] = static_cast<T>(std::cos(ang));
      sn[p * half + i] = static_cast<T>(std::sin(ang));
    }
  }
}

template <class T>
void rope_apply(const Tensor<T>& in, Tensor<T>& out, std::size_t n_heads, std::size_t seq_len, bool inverse) {
  const std::size_t d = in.cols(), hd = d / n_heads, half = hd / 2;
  std::vector<T> cs, sn;
  rope_tables<T>(seq_len, hd, cs, sn);
  const T sign = inverse ? T(-1) : T(1);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const std::size_t pos = r % seq_len;
    const T* x = in.row(r);
    T* y = out.row(r);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t o = h * hd;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = cs[pos * half + i], s = sign * sn[pos * half + i];
        const T x1 = x[o + i], x2 = x[o + half + i];
        y[o + i] += x1 * c - x2 * s;
        y[o + half + i] += x1 * s + x2 * c;
      }
    }
  }
}

}  // namespace

template <class T>
Var<T> rope(Var<T> x, std::size_t n_heads, std::size_t seq_len) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 2 || n_heads == 0 || xv.cols() % n_heads != 0 || (xv.cols() / n_heads) % 2 != 0)
    throw ShapeError("rope: width must split into heads of even size");
  if (seq_len == 0 || xv.rows() % seq_len != 0) throw ShapeError("rope: rows not a multiple of seq_len");
  Tensor<T> out(xv.shape());
  rope_apply(xv, out, n_heads, seq_len, false);
  return tape_of(x).record(std::move(out), {x},
                           [x, n_heads, seq_len](Tape<T>& t, const Tensor<T>& g) {
                             rope_apply(g, t.grad_slot(x), n_heads, seq_len, true);
                           },
                           "rope");
}

template <class T>
Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t n_heads, std::size_t seq_len) {
  const Tensor<T>& qv = q.value();
  const Tensor<T>& kv = k.value();
  const Tensor<T>& vv = v.value();
  if (qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.rank() != 2)
    throw ShapeError("causal_attention: q, k, v must be equal-shaped matrices");
  const std::size_t n = qv.rows(), d = qv.cols();
  if (n_heads == 0 || d % n_heads != 0) throw ShapeError("causal_attention: width not divisible by heads");
  if (seq_len == 0 || n % seq_len != 0) throw ShapeError("causal_attention: rows not a multiple of seq_len");
  const std::size_t hd = d / n_heads, n_seq = n / seq_len, L = seq_len;
  const T sc = T(1) / std::sqrt(static_cast<T>(hd));

  // probs[(s*H + h), i, j], zero above the diagonal.
  Tensor<T> probs({n_seq * n_heads, L, L});
  Tensor<T> out({n, d});
  std::vector<T> row(L);
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      T* P = probs.data().data() + (s * n_heads + h) * L * L;
      const std::size_t c0 = h * hd;
      for (std::size_t i = 0; i < L; ++i) {
        const T* qi = qv.row(s * L + i) + c0;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* kj = kv.row(s * L + j) + c0;
          T dot = 0;
          for (std::size_t e = 0; e < hd; ++e) dot += qi[e] * kj[e];
          row[j] = dot * sc;
          mx = std::max(mx, row[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        const T inv = T(1) / z;
        T* oi = out.row(s * L + i) + c0;
        for (std::size_t j = 0; j <= i; ++j) {
          const T p = row[j] * inv;
          P[i * L + j] = p;
          const T* vj = vv.row(s * L + j) + c0;
          for (std::size_t e = 0; e < hd; ++e) oi[e] += p * vj[e];
        }
      }
    }
  }

  return tape_of(q).record(
      std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), n_heads, L, n_seq, hd, sc](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& qv = q.value();
        const Tensor<T>& kv = k.value();
        const Tensor<T>& vv = v.value();
        const std::size_t d = qv.cols();
        Tensor<T> gq({qv.rows(), d}), gk({qv.rows(), d}), gv({qv.rows(), d});
        std::vector<T> dp(L);
        for (std::size_t s = 0; s < n_seq; ++s) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* P = probs.data().data() + (s * n_heads + h) * L * L;
            const std::size_t c0 = h * hd;
            for (std::size_t i = 0; i < L; ++i) {
              const T* gi = g.row(s * L + i) + c0;
              T dot = 0;
              for (std::size_t j = 0; j <= i; ++j) {
                const T* vj = vv.row(s * L + j) + c0;
                T acc = 0;
                for (std::size_t e = 0; e < hd; ++e) acc += gi[e] * vj[e];
                dp[j] = acc;
                dot += acc * P[i * L + j];
                T* gvj = gv.row(s * L + j) + c0;
                const T p = P[i * L + j];
                for (std::size_t e = 0; e < hd; ++e) gvj[e] += p * gi[e];
              }
              const T* qi = qv.row(s * L + i) + c0;
              T* gqi = gq.row(s * L + i) + c0;
              for (std::size_t j = 0; j <= i; ++j) {
                const T ds = P[i * L + j] * (dp[j] - dot) * sc;
                const T* kj = kv.row(s * L + j) + c0;
                T* gkj = gk.row(s * L + j) + c0;
                for (std::size_t e = 0; e < hd; ++e) {
                  gqi[e] += ds * kj[e];
                  gkj[e] += ds * qi[e];
                }
              }
            }
          }
        }
        t.accumulate(q, gq);
        t.accumulate(k, gk);
        t.accumulate(v, gv);
      },
      "causal_attention");
}

template <class T>
Var<T> col_scale(Var<T> x, Var<T> w, std::size_t col) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2 || wv.rows() != xv.rows() || col >= wv.cols())
    throw ShapeError("col_scale: weights " + shape_str(wv.shape()) + " incompatible with " + shape_str(xv.shape()) +
                     " at column " + std::to_string(col));
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const T s = wv(i, col);
    const T* xi = xv.row(i);
    T* o = out.row(i);
    for (std::size_t j = 0; j < c; ++j) o[j] = xi[j] * s;
  }
  return tape_of(x).record(std::move(out), {x, w},
                           [x, w, col, r, c](Tape<T>& t, const Tensor<T>& g) {
                             const Tensor<T>& xv = x.value();
                             const Tensor<T>& wv = w.value();
                             if (needs(x)) {
                               Tensor<T>& gx = t.grad_slot(x);
                               for (std::size_t i = 0; i < r; ++i) {
                                 const T s = wv(i, col);
                                 const T* gi = g.row(i);
                                 T* o = gx.row(i);
                                 for (std::size_t j = 0; j < c; ++j) o[j] += gi[j] * s;
                               }
                             }
                             if (needs(w)) {
                               Tensor<T>& gw = t.grad_slot(w);
                               for (std::size_t i = 0; i < r; ++i) {
                                 const T* gi = g.row(i);
                                 const T* xi = xv.row(i);
                                 T acc = 0;
                                 for (std::size_t j = 0; j < c; ++j) acc += gi[j] * xi[j];
                                 gw(i, col) += acc;
                               }
                             }
                           },
                           "col_scale");
}

template <class T>
Var<T> scalar_scale(Var<T> x, Var<T> s, std::size_t idx) {
  const Tensor<T>& sv = s.value();
  if (sv.rank() != 1 || idx >= sv.numel()) throw ShapeError("scalar_scale: index out of range");
  const T a = sv[idx];
  return tape_of(x).record(meshrt::scale(x.value(), a), {x, s},
                           [x, s, idx, a](Tape<T>& t, const Tensor<T>& g) {
                             if (needs(x)) t.accumulate(x, meshrt::scale(g, a));
                             if (needs(s)) {
                               const Tensor<T>& xv = x.value();
                               T acc = 0;
                               for (std::size_t i = 0; i < xv.numel(); ++i) acc += g[i] * xv[i];
                               t.grad_slot(s)[idx] += acc;
                             }
                           },
                           "scalar_scale");
}

template <class T>
Var<T> prefix_mean(Var<T> x, std::size_t seq_len) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 2 || seq_len == 0 || xv.rows() % seq_len != 0)
    throw ShapeError("prefix_mean: rows not a multiple of seq_len");
  const std::size_t n_seq = xv.rows() / seq_len, c = xv.cols();
  Tensor<T> out(xv.shape());
  std::vector<T> acc(c);
  for (std::size_t s = 0; s < n_seq; ++s) {
    std::fill(acc.begin(), acc.end(), T(0));
    for (std::size_t i = 0; i < seq_len; ++i) {
      const T* xi = xv.row(s * seq_len + i);
      T* o = out.row(s * seq_len + i);
      const T inv = T(1) / static_cast<T>(i + 1);
      for (std::size_t j = 0; j < c; ++j) {
        acc[j] += xi[j];
        o[j] = acc[j] * inv;
      }
    }
  }
  return tape_of(x).record(std::move(out), {x},
                           [x, seq_len, n_seq, c](Tape<T>& t, const Tensor<T>& g) {
                             Tensor<T>& gx = t.grad_slot(x);
                             std::vector<T> acc(c);
                             for (std::size_t s = 0; s < n_seq; ++s) {
                               std::fill(acc.begin(), acc.end(), T(0));
                               for (std::size_t i = seq_len; i-- > 0;) {
                                 const T* gi = g.row(s * seq_len + i);
                                 const T inv = T(1) / static_cast<T>(i + 1);
                                 T* o = gx.row(s * seq_len + i);
                                 for (std::size_t j = 0; j < c; ++j) {
                                   acc[j] += gi[j] * inv;
                                   o[j] += acc[j];
                                 }
                               }
                             }
                           },
                           "prefix_mean");
}

template <class T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> tokens) {
  const Tensor<T>& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("embedding: table must be a matrix");
  const std::size_t vocab = tv.rows(), d = tv.cols();
  Tensor<T> out({tokens.size(), d});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab)
      throw DataError("token id " + std::to_string(tokens[i]) + " outside vocabulary of " + std::to_string(vocab));
    std::copy_n(tv.row(static_cast<std::size_t>(tokens[i])), d, out.row(i));
  }
  std::vector<std::int32_t> ids(tokens.begin(), tokens.end());
  return tape_of(table).record(std::move(out), {table},
                               [table, ids = std::move(ids), d](Tape<T>& t, const Tensor<T>& g) {
                                 Tensor<T>& gt = t.grad_slot(table);
                                 for (std::size_t i = 0; i < ids.size(); ++i) {
                                   const T* gi = g.row(i);
                                   T* o = gt.row(static_cast<std::size_t>(ids[i]));
                                   for (std::size_t j = 0; j < d; ++j) o[j] += gi[j];
                                 }
                               },
                               "embedding");
}

template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets) {
  const Tensor<T>& lv = logits.value();
  if (lv.rank() != 2 || lv.rows() != targets.size()) throw ShapeError("cross_entropy: one target per row required");
  const std::size_t n = lv.rows(), v = lv.cols();
  Tensor<T> probs = meshrt::softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      throw DataError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary");
    const T* li = lv.row(i);
    T mx = li[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, li[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(li[j] - mx));
    loss += std::log(z) + static_cast<double>(mx) - static_cast<double>(li[targets[i]]);
  }
  loss /= static_cast<double>(n);
  std::vector<std::int32_t> ids(targets.begin(), targets.end());
  return tape_of(logits).record(Tensor<T>({1}, {static_cast<T>(loss)}), {logits},
                                [logits, probs = std::move(probs), ids = std::move(ids), n, v](Tape<T>& t,
                                                                                               const Tensor<T>& g) {
                                  Tensor<T>& gl = t.grad_slot(logits);
                                  const T s = g[0] / static_cast<T>(n);
                                  for (std::size_t i = 0; i < n; ++i) {
                                    const T* pi = probs.row(i);
                                    T* o = gl.row(i);
                                    for (std::size_t j = 0; j < v; ++j) o[j] += s * pi[j];
                                    o[ids[i]] -= s;
                                  }
                                },
                                "cross_entropy");
}

#define MESHRT_AD_INSTANTIATE(T)                                                              \
  template Var<T> add(Var<T>, Var<T>);                                                        \
  template Var<T> sub(Var<T>, Var<T>);                                                        \
  template Var<T> mul(Var<T>, Var<T>);                                                        \
  template Var<T> scale(Var<T>, T);                                                           \
  template Var<T> sum(Var<T>);                                                                \
  template Var<T> matmul(Var<T>, Var<T>);                                                     \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                  \
  template Var<T> add_row(Var<T>, Var<T>);                                                    \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                             \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                      \
  template Var<T> gelu(Var<T>);                                                               \
  template Var<T> softmax_rows(Var<T>);                                                       \
  template Var<T> rope(Var<T>, std::size_t, std::size_t);                                     \
  template Var<T> causal_attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);         \
  template Var<T> col_scale(Var<T>, Var<T>, std::size_t);                                     \
  template Var<T> scalar_scale(Var<T>, Var<T>, std::size_t);                                  \
  template Var<T> prefix_mean(Var<T>, std::size_t);                                           \
  template Var<T> embedding(Var<T>, std::span<const std::int32_t>);                           \
  template Var<T> cross_entropy(Var<T>, std::span<const std::int32_t>);

MESHRT_AD_INSTANTIATE(float)
MESHRT_AD_INSTANTIATE(double)

}  // namespace meshrt
