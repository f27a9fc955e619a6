#pragma once

// Tape-based reverse-mode differentiation over 2-D tensors.
//
// A Graph records one forward pass. Each op appends a node holding its value
// and, when gradients are enabled, a closure that pushes the node's gradient
// to its inputs. backward() runs the closures in reverse creation order.
// Parameter leaves accumulate straight into Parameter::grad.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lenctl/nnet/tensor.hpp"

namespace lenctl::nnet {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
};

template <typename Real>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<Real>& add(std::string name, Tensor<Real> value);
  Parameter<Real>& at(std::string_view name);
  const Parameter<Real>& at(std::string_view name) const;
  Parameter<Real>* find(std::string_view name);
  const Parameter<Real>* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t value_count() const;

  // Flat views, in declaration order.
  std::vector<Real> flatten_values() const;
  std::vector<Real> flatten_grads() const;
  void assign_values(std::span<const Real> flat);

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

// Multi-head attention geometry. Rows of q are batch * q_len, rows of k and v
// are batch * k_len; the feature dimension is split into `heads` slices.
struct AttentionShape {
  std::size_t batch = 1;
  std::size_t q_len = 1;
  std::size_t k_len = 1;
  std::size_t heads = 1;
  std::span<const int> k_lengths;  // valid keys per batch row; empty = all
  bool causal = false;
};

struct XentStats {
  double nll_sum = 0.0;     // unsmoothed negative log-likelihood, summed
  std::size_t tokens = 0;   // non-ignored positions
};

template <typename Real>
struct XentResult {
  Real loss = 0;
  Tensor<Real> grad;  // d loss / d logits
  XentStats stats;
};

// Mean over non-ignored rows of the cross-entropy between the smoothed target
// distribution (1 - eps on the gold id, eps / (V - 1) elsewhere) and
// softmax(logits). Throws when every row is ignored.
template <typename Real>
XentResult<Real> label_smoothed_xent(const Tensor<Real>& logits, std::span<const int> targets,
                                     Real smoothing, int ignore_index);

template <typename Real>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<Real> value);
  Var param(Parameter<Real>& p);
  Var param(const Parameter<Real>& p);

  const Tensor<Real>& value(Var v) const;
  // Gradient of a node after backward(); empty if none reached it.
  const Tensor<Real>& grad(Var v) const;

  Var add(Var a, Var b);
  Var scale(Var a, Real s);
  Var matmul(Var a, Var b);
  Var linear(Var x, Var w, Var b);
  Var relu(Var x);
  Var layer_norm(Var x, Var gain, Var bias, Real eps = Real(1e-5));
  Var dropout(Var x, Real p, std::uint64_t stream);
  Var embedding(Var table, std::span<const int> ids, Real scale);
  Var attention(Var q, Var k, Var v, const AttentionShape& shape, Real dropout_p,
                std::uint64_t stream);
  Var label_smoothed_xent(Var logits, std::span<const int> targets, Real smoothing,
                          int ignore_index, XentStats* stats = nullptr);
  Var sum(Var x);
  // out[i] = x[rows[i]]
  Var gather_rows(Var x, std::vector<std::size_t> rows);

  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    const Tensor<Real>* external = nullptr;
    Tensor<Real> grad;
    Tensor<Real>* grad_sink = nullptr;
    bool requires_grad = false;
    std::function<void()> backward;
    const Tensor<Real>& val() const { return external ? *external : value; }
  };

  Var push(Tensor<Real> value, bool requires_grad, std::string_view op);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  Node& node(Var v);
  const Node& node(Var v) const;
  // Gradient buffer for v, zero-initialized on first use.
  Real* grad_buffer(Var v);
  const Real* grad_data(Var v) const;

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace lenctl::nnet
