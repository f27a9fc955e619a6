#include "lenctl/nnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lenctl/nnet/rng.hpp"
#include "lenctl/simd/kernels.hpp"

namespace lenctl::nnet {

using simd::Trans;

// ---- ParameterSet ----------------------------------------------------------

template <typename Real>
Parameter<Real>& ParameterSet<Real>::add(std::string name, Tensor<Real> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter<Real>>();
  p->name = name;
  p->grad = Tensor<Real>(value.shape());
  p->value = std::move(value);
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename Real>
Parameter<Real>* ParameterSet<Real>::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename Real>
const Parameter<Real>* ParameterSet<Real>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename Real>
Parameter<Real>& ParameterSet<Real>::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename Real>
const Parameter<Real>& ParameterSet<Real>::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename Real>
void ParameterSet<Real>::zero_grad() {
  for (auto& p : params_) {
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor<Real>(p->value.shape());
    p->grad.fill(Real(0));
  }
}

template <typename Real>
std::size_t ParameterSet<Real>::value_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename Real>
std::vector<Real> ParameterSet<Real>::flatten_values() const {
  std::vector<Real> out;
  out.reserve(value_count());
  for (const auto& p : params_) out.insert(out.end(), p->value.storage().begin(), p->value.storage().end());
  return out;
}

template <typename Real>
std::vector<Real> ParameterSet<Real>::flatten_grads() const {
  std::vector<Real> out;
  out.reserve(value_count());
  for (const auto& p : params_) {
    if (p->grad.size() == p->value.size()) {
      out.insert(out.end(), p->grad.storage().begin(), p->grad.storage().end());
    } else {
      out.insert(out.end(), p->value.size(), Real(0));
    }
  }
  return out;
}

template <typename Real>
void ParameterSet<Real>::assign_values(std::span<const Real> flat) {
  if (flat.size() != value_count()) {
    throw ShapeError("assign_values: expected " + std::to_string(value_count()) + " values, got " +
                     std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.data());
    off += p->value.size();
  }
}

// ---- label-smoothed cross-entropy -----------------------------------------

template <typename Real>
XentResult<Real> label_smoothed_xent(const Tensor<Real>& logits, std::span<const int> targets,
                                     Real smoothing, int ignore_index) {
  const std::size_t rows = logits.rows();
  const std::size_t vocab = logits.cols();
  if (targets.size() != rows) {
    throw ShapeError("xent: " + std::to_string(rows) + " logit rows but " +
                     std::to_string(targets.size()) + " targets");
  }
  if (smoothing < 0 || smoothing >= 1) throw std::invalid_argument("xent: smoothing must be in [0, 1)");
  XentResult<Real> res;
  res.grad = Tensor<Real>(logits.shape());
  std::size_t count = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range("xent: target id " + std::to_string(t) + " outside vocabulary");
    }
    ++count;
  }
  if (count == 0) throw std::invalid_argument("xent: every position is padding");

  const double eps = smoothing;
  const double on = 1.0 - eps;
  const double off = vocab > 1 ? eps / static_cast<double>(vocab - 1) : 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  std::vector<double> logp(vocab);
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == ignore_index) continue;
    const Real* z = logits.data() + r * vocab;
    double mx = z[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(z[j]));
    double se = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) se += std::exp(static_cast<double>(z[j]) - mx);
    const double lse = mx + std::log(se);
    double sum_logp = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      logp[j] = static_cast<double>(z[j]) - lse;
      sum_logp += logp[j];
    }
    const double gold = logp[static_cast<std::size_t>(t)];
    total += -(on * gold + off * (sum_logp - gold));
    res.stats.nll_sum += -gold;
    Real* g = res.grad.data() + r * vocab;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double q = static_cast<int>(j) == t ? on : off;
      g[j] = static_cast<Real>((std::exp(logp[j]) - q) * inv);
    }
  }
  res.stats.tokens = count;
  res.loss = static_cast<Real>(total * inv);
  return res;
}

// ---- Graph -----------------------------------------------------------------

template <typename Real>
typename Graph<Real>::Node& Graph<Real>::node(Var v) {
  if (v.id >= nodes_.size()) throw std::out_of_range("graph: invalid variable");
  return nodes_[v.id];
}

template <typename Real>
const typename Graph<Real>::Node& Graph<Real>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("graph: invalid variable");
  return nodes_[v.id];
}

template <typename Real>
Var Graph<Real>::push(Tensor<Real> value, bool requires_grad, std::string_view op) {
  if (!value.all_finite()) throw NonFiniteError("non-finite output of " + std::string(op));
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename Real>
Real* Graph<Real>::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad_sink) {
    if (n.grad_sink->shape() != n.val().shape()) *n.grad_sink = Tensor<Real>(n.val().shape());
    return n.grad_sink->data();
  }
  if (n.grad.empty()) n.grad = Tensor<Real>(n.val().shape());
  return n.grad.data();
}

template <typename Real>
const Real* Graph<Real>::grad_data(Var v) const {
  const Node& n = node(v);
  if (n.grad_sink) return n.grad_sink->data();
  return n.grad.empty() ? nullptr : n.grad.data();
}

template <typename Real>
Var Graph<Real>::constant(Tensor<Real> value) {
  return push(std::move(value), false, "constant");
}

template <typename Real>
Var Graph<Real>::param(Parameter<Real>& p) {
  Node n;
  n.external = &p.value;
  n.grad_sink = &p.grad;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename Real>
Var Graph<Real>::param(const Parameter<Real>& p) {
  Node n;
  n.external = &p.value;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename Real>
const Tensor<Real>& Graph<Real>::value(Var v) const {
  return node(v).val();
}

template <typename Real>
const Tensor<Real>& Graph<Real>::grad(Var v) const {
  const Node& n = node(v);
  return n.grad_sink ? *n.grad_sink : n.grad;
}

template <typename Real>
Var Graph<Real>::add(Var a, Var b) {
  const auto& x = value(a);
  const auto& y = value(b);
  if (x.size() != y.size()) {
    throw ShapeError("add: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  Tensor<Real> out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  Var r = push(std::move(out), needs(a) || needs(b), "add");
  if (!needs(r)) return r;
  node(r).backward = [this, a, b, r] {
    const Real* g = grad_data(r);
    const std::size_t n = value(r).size();
    for (Var in : {a, b}) {
      if (!needs(in)) continue;
      Real* gi = grad_buffer(in);
      for (std::size_t i = 0; i < n; ++i) gi[i] += g[i];
    }
  };
  return r;
}

template <typename Real>
Var Graph<Real>::scale(Var a, Real s) {
  Tensor<Real> out = value(a);
  for (auto& v : out.storage()) v *= s;
  Var r = push(std::move(out), needs(a), "scale");
  if (!needs(r)) return r;
  node(r).backward = [this, a, r, s] {
    const Real* g = grad_data(r);
    Real* ga = grad_buffer(a);
    for (std::size_t i = 0; i < value(r).size(); ++i) ga[i] += s * g[i];
  };
  return r;
}

template <typename Real>
Var Graph<Real>::matmul(Var a, Var b) {
  const auto& x = value(a);
  const auto& y = value(b);
  const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  if (y.rows() != k) {
    throw ShapeError("matmul: " + shape_string(x.shape()) + " x " + shape_string(y.shape()));
  }
  Tensor<Real> out(Shape{m, n});
  simd::gemm<Real>(Trans::kNo, Trans::kNo, m, n, k, 1, x.data(), k, y.data(), n, 0, out.data(), n);
  Var r = push(std::move(out), needs(a) || needs(b), "matmul");
  if (!needs(r)) return r;
  node(r).backward = [this, a, b, r, m, n, k] {
    const Real* g = grad_data(r);
    if (needs(a)) {
      simd::gemm<Real>(Trans::kNo, Trans::kYes, m, k, n, 1, g, n, value(b).data(), n, 1,
                       grad_buffer(a), k);
    }
    if (needs(b)) {
      simd::gemm<Real>(Trans::kYes, Trans::kNo, k, n, m, 1, value(a).data(), k, g, n, 1,
                       grad_buffer(b), n);
    }
  };
  return r;
}

template <typename Real>
Var Graph<Real>::linear(Var x, Var w, Var b) {
  const auto& xv = value(x);
  const auto& wv = value(w);
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  if (wv.rows() != k) {
    throw ShapeError("linear: input " + shape_string(xv.shape()) + " weight " +
                     shape_string(wv.shape()));
  }
  Tensor<Real> out(Shape{m, n});
  if (b.valid()) {
    const auto& bv = value(b);
    if (bv.size() != n) throw ShapeError("linear: bias " + shape_string(bv.shape()));
    for (std::size_t i = 0; i < m; ++i) std::copy_n(bv.data(), n, out.data() + i * n);
  }
  simd::gemm<Real>(Trans::kNo, Trans::kNo, m, n, k, 1, xv.data(), k, wv.data(), n,
                   b.valid() ? Real(1) : Real(0), out.data(), n);
  const bool rg = needs(x) || needs(w) || (b.valid() && needs(b));
  Var r = push(std::move(out), rg, "linear");
  if (!needs(r)) return r;
  node(r).backward = [this, x, w, b, r, m, n, k] {
    const Real* g = grad_data(r);
    if (needs(x)) {
      simd::gemm<Real>(Trans::kNo, Trans::kYes, m, k, n, 1, g, n, value(w).data(), n, 1,
                       grad_buffer(x), k);
    }
    if (needs(w)) {
      simd::gemm<Real>(Trans::kYes, Trans::kNo, k, n, m, 1, value(x).data(), k, g, n, 1,
                       grad_buffer(w), n);
    }
    if (b.valid() && needs(b)) {
      Real* gb = grad_buffer(b);
      for (std::size_t i = 0; i < m; ++i) simd::axpy<Real>(n, 1, g + i * n, gb);
    }
  };
  return r;
}

template <typename Real>
Var Graph<Real>::relu(Var x) {
  Tensor<Real> out = value(x);
  for (auto& v : out.storage()) v = v > 0 ? v : Real(0);
  Var r = push(std::move(out), needs(x), "relu");
  if (!needs(r)) return r;
  node(r).backward = [this, x, r] {
    const Real* g = grad_data(r);
    const Real* in = value(x).data();
    Real* gx = grad_buffer(x);
    for (std::size_t i = 0; i < value(r).size(); ++i) {
      if (in[i] > 0) gx[i] += g[i];
    }
  };
  return r;
}

template <typename Real>
Var Graph<Real>::layer_norm(Var x, Var gain, Var bias, Real eps) {
  const auto& xv = value(x);
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (value(gain).size() != d || value(bias).size() != d) {
    throw ShapeError("layer_norm: gain/bias do not match width " + std::to_string(d));
  }
  const Real* gv = value(gain).data();
  const Real* bv = value(bias).data();
  Tensor<Real> out(xv.shape());
  auto xhat = std::make_shared<std::vector<Real>>(xv.size());
  auto rstd = std::make_shared<std::vector<Real>>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const Real* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const Real rs = static_cast<Real>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    (*rstd)[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = static_cast<Real>(row[j] - mu) * rs;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  Var r = push(std::move(out), needs(x) || needs(gain) || needs(bias), "layer_norm");
  if (!needs(r)) return r;
  node(r).backward = [this, x, gain, bias, r, rows, d, xhat, rstd] {
    const Real* g = grad_data(r);
    const Real* gv = value(gain).data();
    if (needs(gain)) {
      Real* gg = grad_buffer(gain);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * (*xhat)[i * d + j];
    }
    if (needs(bias)) {
      Real* gb = grad_buffer(bias);
      for (std::size_t i = 0; i < rows; ++i) simd::axpy<Real>(d, 1, g + i * d, gb);
    }
    if (needs(x)) {
      Real* gx = grad_buffer(x);
      for (std::size_t i = 0; i < rows; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = static_cast<double>(g[i * d + j]) * gv[j];
          m1 += dh;
          m2 += dh * (*xhat)[i * d + j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = static_cast<double>(g[i * d + j]) * gv[j];
          gx[i * d + j] += static_cast<Real>((*rstd)[i] * (dh - m1 - (*xhat)[i * d + j] * m2));
        }
      }
    }
  };
  return r;
}

template <typename Real>
Var Graph<Real>::dropout(Var x, Real p, std::uint64_t stream) {
  if (p < 0 || p >= 1) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (p == 0) return x;
  const auto& xv = value(x);
  auto mask = std::make_shared<std::vector<Real>>(xv.size());
  const Real keep = Real(1) / (Real(1) - p);
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = counter_uniform(stream, i) >= static_cast<double>(p) ? keep : Real(0);
    out[i] = xv[i] * (*mask)[i];
  }
  Var r = push(std::move(out), needs(x), "dropout");
  if (!needs(r)) return r;
  node(r).backward = [this, x, r, mask] {
    const Real* g = grad_data(r);
    Real* gx = grad_buffer(x);
    for (std::size_t i = 0; i < mask->size(); ++i) gx[i] += g[i] * (*mask)[i];
  };
  return r;
}

template <typename Real>
Var Graph<Real>::embedding(Var table, std::span<const int> ids, Real scale) {
  const auto& tv = value(table);
  const std::size_t d = tv.cols(), vocab = tv.rows();
  Tensor<Real> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(vocab));
    }
    const Real* src = tv.data() + static_cast<std::size_t>(ids[i]) * d;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = src[j] * scale;
  }
  Var r = push(std::move(out), needs(table), "embedding");
  if (!needs(r)) return r;
  auto idv = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  node(r).backward = [this, table, r, idv, scale, d] {
    const Real* g = grad_data(r);
    Real* gt = grad_buffer(table);
    for (std::size_t i = 0; i < idv->size(); ++i) {
      simd::axpy<Real>(d, scale, g + i * d, gt + static_cast<std::size_t>((*idv)[i]) * d);
    }
  };
  return r;
}

template <typename Real>
Var Graph<Real>::attention(Var q, Var k, Var v, const AttentionShape& shape, Real dropout_p,
                           std::uint64_t stream) {
  const auto& qv = value(q);
  const auto& kv = value(k);
  const auto& vv = value(v);
  const std::size_t B = shape.batch, Tq = shape.q_len, Tk = shape.k_len, H = shape.heads;
  const std::size_t D = qv.cols();
  if (H == 0 || D % H != 0) throw ShapeError("attention: width not divisible by heads");
  if (qv.rows() != B * Tq || kv.rows() != B * Tk || vv.rows() != B * Tk || kv.cols() != D ||
      vv.cols() != D) {
    throw ShapeError("attention: q " + shape_string(qv.shape()) + " k " + shape_string(kv.shape()) +
                     " v " + shape_string(vv.shape()));
  }
  if (!shape.k_lengths.empty() && shape.k_lengths.size() != B) {
    throw ShapeError("attention: k_lengths size mismatch");
  }
  if (dropout_p < 0 || dropout_p >= 1) throw std::invalid_argument("attention: bad dropout");
  const std::size_t dh = D / H;
  const Real rs = Real(1) / std::sqrt(static_cast<Real>(dh));
  const bool causal = shape.causal;
  std::vector<int> klen(B, static_cast<int>(Tk));
  if (!shape.k_lengths.empty()) std::copy(shape.k_lengths.begin(), shape.k_lengths.end(), klen.begin());

  const std::size_t blk = Tq * Tk;
  auto probs = std::make_shared<std::vector<Real>>(B * H * blk);
  std::shared_ptr<std::vector<Real>> mask;
  if (dropout_p > 0) mask = std::make_shared<std::vector<Real>>(B * H * blk);
  const Real keep = Real(1) / (Real(1) - dropout_p);
  std::vector<Real> dropped(dropout_p > 0 ? blk : 0);

  Tensor<Real> out(Shape{B * Tq, D});
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t valid = static_cast<std::size_t>(std::clamp(klen[b], 0, static_cast<int>(Tk)));
    for (std::size_t h = 0; h < H; ++h) {
      Real* P = probs->data() + (b * H + h) * blk;
      const Real* Q = qv.data() + b * Tq * D + h * dh;
      const Real* K = kv.data() + b * Tk * D + h * dh;
      const Real* V = vv.data() + b * Tk * D + h * dh;
      simd::gemm<Real>(Trans::kNo, Trans::kYes, Tq, Tk, dh, rs, Q, D, K, D, 0, P, Tk);
      for (std::size_t i = 0; i < Tq; ++i) {
        Real* row = P + i * Tk;
        const std::size_t lim = causal ? std::min(valid, i + 1) : valid;
        if (lim == 0) {
          std::fill(row, row + Tk, Real(0));
          continue;
        }
        Real mx = row[0];
        for (std::size_t j = 1; j < lim; ++j) mx = std::max(mx, row[j]);
        Real s = 0;
        for (std::size_t j = 0; j < lim; ++j) {
          row[j] = std::exp(row[j] - mx);
          s += row[j];
        }
        for (std::size_t j = 0; j < lim; ++j) row[j] /= s;
        std::fill(row + lim, row + Tk, Real(0));
      }
      const Real* used = P;
      if (mask) {
        Real* M = mask->data() + (b * H + h) * blk;
        const std::uint64_t sub = combine_streams(stream, b * H + h);
        for (std::size_t i = 0; i < blk; ++i) {
          M[i] = counter_uniform(sub, i) >= static_cast<double>(dropout_p) ? keep : Real(0);
          dropped[i] = P[i] * M[i];
        }
        used = dropped.data();
      }
      simd::gemm<Real>(Trans::kNo, Trans::kNo, Tq, dh, Tk, 1, used, Tk, V, D, 0,
                       out.data() + b * Tq * D + h * dh, D);
    }
  }
  Var r = push(std::move(out), needs(q) || needs(k) || needs(v), "attention");
  if (!needs(r)) return r;
  node(r).backward = [this, q, k, v, r, B, Tq, Tk, H, D, dh, rs, blk, probs, mask] {
    const Real* g = grad_data(r);
    const Real* qd = value(q).data();
    const Real* kd = value(k).data();
    const Real* vd = value(v).data();
    Real* gq = needs(q) ? grad_buffer(q) : nullptr;
    Real* gk = needs(k) ? grad_buffer(k) : nullptr;
    Real* gv = needs(v) ? grad_buffer(v) : nullptr;
    std::vector<Real> dP(blk), Pd(mask ? blk : 0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const Real* P = probs->data() + (b * H + h) * blk;
        const Real* M = mask ? mask->data() + (b * H + h) * blk : nullptr;
        const Real* used = P;
        if (M) {
          for (std::size_t i = 0; i < blk; ++i) Pd[i] = P[i] * M[i];
          used = Pd.data();
        }
        const Real* dO = g + b * Tq * D + h * dh;
        const std::size_t qo = b * Tq * D + h * dh;
        const std::size_t ko = b * Tk * D + h * dh;
        if (gv) {
          simd::gemm<Real>(Trans::kYes, Trans::kNo, Tk, dh, Tq, 1, used, Tk, dO, D, 1, gv + ko, D);
        }
        if (!gq && !gk) continue;
        simd::gemm<Real>(Trans::kNo, Trans::kYes, Tq, Tk, dh, 1, dO, D, vd + ko, D, 0, dP.data(), Tk);
        for (std::size_t i = 0; i < Tq; ++i) {
          Real* drow = dP.data() + i * Tk;
          const Real* prow = P + i * Tk;
          if (M) {
            for (std::size_t j = 0; j < Tk; ++j) drow[j] *= M[i * Tk + j];
          }
          Real dot = 0;
          for (std::size_t j = 0; j < Tk; ++j) dot += drow[j] * prow[j];
          for (std::size_t j = 0; j < Tk; ++j) drow[j] = prow[j] * (drow[j] - dot);
        }
        if (gq) simd::gemm<Real>(Trans::kNo, Trans::kNo, Tq, dh, Tk, rs, dP.data(), Tk, kd + ko, D, 1, gq + qo, D);
        if (gk) simd::gemm<Real>(Trans::kYes, Trans::kNo, Tk, dh, Tq, rs, dP.data(), Tk, qd + qo, D, 1, gk + ko, D);
      }
    }
  };
  return r;
}

template <typename Real>
Var Graph<Real>::label_smoothed_xent(Var logits, std::span<const int> targets, Real smoothing,
                                     int ignore_index, XentStats* stats) {
  auto res = nnet::label_smoothed_xent<Real>(value(logits), targets, smoothing, ignore_index);
  if (stats) *stats = res.stats;
  Var r = push(Tensor<Real>(Shape{1}, res.loss), needs(logits), "cross-entropy");
  if (!needs(r)) return r;
  auto grad = std::make_shared<Tensor<Real>>(std::move(res.grad));
  node(r).backward = [this, logits, r, grad] {
    simd::axpy<Real>(grad->size(), grad_data(r)[0], grad->data(), grad_buffer(logits));
  };
  return r;
}

template <typename Real>
Var Graph<Real>::sum(Var x) {
  double s = 0.0;
  for (Real v : value(x).values()) s += v;
  Var r = push(Tensor<Real>(Shape{1}, static_cast<Real>(s)), needs(x), "sum");
  if (!needs(r)) return r;
  node(r).backward = [this, x, r] {
    const Real g = grad_data(r)[0];
    Real* gx = grad_buffer(x);
    for (std::size_t i = 0; i < value(x).size(); ++i) gx[i] += g;
  };
  return r;
}

template <typename Real>
Var Graph<Real>::gather_rows(Var x, std::vector<std::size_t> rows) {
  const auto& xv = value(x);
  const std::size_t d = xv.cols();
  Tensor<Real> out(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) throw std::out_of_range("gather_rows: row out of range");
    std::copy_n(xv.data() + rows[i] * d, d, out.data() + i * d);
  }
  Var r = push(std::move(out), needs(x), "gather_rows");
  if (!needs(r)) return r;
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(rows));
  node(r).backward = [this, x, r, idx, d] {
    const Real* g = grad_data(r);
    Real* gx = grad_buffer(x);
    for (std::size_t i = 0; i < idx->size(); ++i) simd::axpy<Real>(d, 1, g + i * d, gx + (*idx)[i] * d);
  };
  return r;
}

template <typename Real>
void Graph<Real>::backward(Var loss) {
  if (!grad_enabled_) throw std::logic_error("backward on a graph built without gradients");
  if (value(loss).size() != 1) throw ShapeError("backward: loss must be a scalar");
  if (!needs(loss)) return;
  grad_buffer(loss)[0] += 1;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.requires_grad) continue;
    if (!grad_data(Var{static_cast<std::uint32_t>(i)})) continue;
    n.backward();
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Graph<float>;
template class Graph<double>;
template XentResult<float> label_smoothed_xent<float>(const Tensor<float>&, std::span<const int>,
                                                      float, int);
template XentResult<double> label_smoothed_xent<double>(const Tensor<double>&, std::span<const int>,
                                                        double, int);

}  // namespace lenctl::nnet
