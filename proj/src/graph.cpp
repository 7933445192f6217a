#include "catgrad/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace catgrad {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid_scalar(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

int normalize_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw Error("graph: axis out of range");
  return axis;
}

struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
  AxisView v;
  v.len = shape[static_cast<std::size_t>(axis)];
  for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    v.inner *= shape[i];
  return v;
}

Shape drop_axis(const Shape& shape, int axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (static_cast<int>(i) != axis) out.push_back(shape[i]);
  }
  return out;
}

// Suffix broadcasting: b may be scalar or its shape a trailing suffix of a's.
bool broadcastable_onto(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (big[off + i] != small[i]) return false;
  }
  return true;
}

enum class EwMode { Same, BroadcastB, BroadcastA };

EwMode elementwise_mode(const Tensor& a, const Tensor& b, const char* what) {
  if (a.same_shape(b)) return EwMode::Same;
  if (b.numel() == 1 || broadcastable_onto(a.shape(), b.shape())) return EwMode::BroadcastB;
  if (a.numel() == 1 || broadcastable_onto(b.shape(), a.shape())) return EwMode::BroadcastA;
  throw Error(std::string(what) + ": shapes " + shape_to_string(a.shape()) + " and " +
              shape_to_string(b.shape()) + " are not compatible");
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Softplus: return "softplus";
    case Op::Clamp: return "clamp";
    case Op::LogSumExp: return "log_sum_exp";
    case Op::Softmax: return "softmax";
    case Op::TemperedSoftmax: return "tempered_softmax";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SumAll: return "sum_all";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
    case Op::ArgmaxOneHot: return "argmax_one_hot";
    case Op::StopGradient: return "stop_gradient";
    case Op::GumbelSoftmax: return "gumbel_softmax";
    case Op::StGumbelSoftmax: return "st_gumbel_softmax";
    case Op::BinaryConcrete: return "binary_concrete";
    case Op::StBinaryConcrete: return "st_binary_concrete";
    case Op::GaussianReparam: return "gaussian_reparam";
    case Op::CategoricalSample: return "categorical_sample";
    case Op::BernoulliSample: return "bernoulli_sample";
    case Op::StBernoulli: return "st_bernoulli";
    case Op::StCategorical: return "st_categorical";
  }
  return "?";
}

bool op_is_stochastic(Op op) {
  switch (op) {
    case Op::GumbelSoftmax:
    case Op::StGumbelSoftmax:
    case Op::BinaryConcrete:
    case Op::StBinaryConcrete:
    case Op::GaussianReparam:
    case Op::CategoricalSample:
    case Op::BernoulliSample:
    case Op::StBernoulli:
    case Op::StCategorical:
      return true;
    default:
      return false;
  }
}

bool op_is_reparameterized(Op op) {
  switch (op) {
    case Op::GumbelSoftmax:
    case Op::StGumbelSoftmax:
    case Op::BinaryConcrete:
    case Op::StBinaryConcrete:
    case Op::GaussianReparam:
      return true;
    default:
      return false;
  }
}

const Tensor& Value::tensor() const {
  if (!graph) throw Error("value: unbound handle");
  return graph->node(id).value;
}

const Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw Error("graph: node id out of range");
  return nodes_[id];
}

Value Graph::make_node(Op op, std::vector<NodeId> parents, OpAttrs attrs, Tensor value,
                       Tensor saved, bool requires_grad_override) {
  Node n;
  n.id = static_cast<NodeId>(nodes_.size());
  n.op = op;
  n.parents = std::move(parents);
  n.attrs = std::move(attrs);
  n.value = std::move(value);
  n.saved = std::move(saved);
  if (op == Op::Leaf) {
    n.requires_grad = requires_grad_override;
    n.is_parameter = requires_grad_override;
  } else if (op == Op::StopGradient || op == Op::ArgmaxOneHot || op == Op::CategoricalSample ||
             op == Op::BernoulliSample) {
    n.requires_grad = false;
  } else {
    for (NodeId p : n.parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<NodeId>(nodes_.size() - 1)};
}

Value Graph::parameter(Tensor v) {
  return make_node(Op::Leaf, {}, {}, std::move(v), {}, /*requires_grad=*/true);
}

Value Graph::constant(Tensor v) {
  return make_node(Op::Leaf, {}, {}, std::move(v), {}, /*requires_grad=*/false);
}

namespace {

void check_same_graph(Graph* g, const std::vector<Value>& inputs) {
  for (const Value& v : inputs) {
    if (v.graph != g) throw Error("graph: inputs belong to different graph instances");
  }
}

Tensor softmax_axis(const Tensor& x, int axis, double tau) {
  AxisView v = axis_view(x.shape(), axis);
  Tensor out(x.shape());
  std::vector<double> lane(v.len);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t base = o * v.len * v.inner + i;
      for (std::size_t j = 0; j < v.len; ++j) lane[j] = x[base + j * v.inner] / tau;
      double lse = log_sum_exp_span(lane);
      for (std::size_t j = 0; j < v.len; ++j) out[base + j * v.inner] = std::exp(lane[j] - lse);
    }
  }
  return out;
}

// dx += (1/tau) * y .* (adj - sum_axis(adj .* y)), the softmax JVP.
void softmax_backward_axis(const Tensor& y, const Tensor& adj, int axis, double tau, Tensor& dx) {
  AxisView v = axis_view(y.shape(), axis);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t base = o * v.len * v.inner + i;
      double dot_ay = 0;
      for (std::size_t j = 0; j < v.len; ++j) {
        std::size_t idx = base + j * v.inner;
        dot_ay += adj[idx] * y[idx];
      }
      for (std::size_t j = 0; j < v.len; ++j) {
        std::size_t idx = base + j * v.inner;
        dx[idx] += y[idx] * (adj[idx] - dot_ay) / tau;
      }
    }
  }
}

Tensor one_hot_argmax_axis(const Tensor& x, int axis, bool allow_all_neg_inf = false) {
  AxisView v = axis_view(x.shape(), axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t base = o * v.len * v.inner + i;
      std::size_t best = 0;
      double best_val = -kInf;
      bool any_finite = false;
      for (std::size_t j = 0; j < v.len; ++j) {
        double val = x[base + j * v.inner];
        if (std::isnan(val)) throw Error("argmax: NaN input");
        if (val > best_val) {
          best_val = val;
          best = j;
        }
        any_finite = any_finite || val > -kInf;
      }
      if (!any_finite && !allow_all_neg_inf) throw Error("argmax: all entries are -inf");
      out[base + best * v.inner] = 1.0;
    }
  }
  return out;
}

}  // namespace

Value Graph::apply(Op op, const std::vector<Value>& inputs, OpAttrs attrs) {
  check_same_graph(this, inputs);
  std::vector<NodeId> parents;
  parents.reserve(inputs.size());
  for (const Value& v : inputs) parents.push_back(v.id);
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[parents[i]].value; };
  auto expect_arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw Error(std::string("graph: ") + op_name(op) + " expects " + std::to_string(n) +
                  " inputs");
    }
  };

  switch (op) {
    case Op::Leaf:
      throw Error("graph: apply cannot create leaf nodes");

    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      expect_arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      EwMode mode = elementwise_mode(a, b, op_name(op));
      const Tensor& big = (mode == EwMode::BroadcastA) ? b : a;
      const Tensor& small = (mode == EwMode::BroadcastA) ? a : b;
      Tensor out(big.shape());
      std::size_t m = small.numel();
      for (std::size_t i = 0; i < big.numel(); ++i) {
        double x = (mode == EwMode::BroadcastA) ? small[i % m] : a[i];
        double y = (mode == EwMode::BroadcastA) ? big[i] : (mode == EwMode::Same ? b[i] : b[i % m]);
        out[i] = (op == Op::Add) ? x + y : (op == Op::Sub) ? x - y : x * y;
      }
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::MatMul: {
      expect_arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw Error("matmul: incompatible shapes " + shape_to_string(a.shape()) + " x " +
                    shape_to_string(b.shape()));
      }
      std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      Tensor out({m, n});
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double av = a[i * k + p];
          if (av == 0) continue;
          for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
        }
      }
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::Sigmoid:
    case Op::Tanh:
    case Op::Relu:
    case Op::Exp:
    case Op::Softplus: {
      expect_arity(1);
      const Tensor& a = in(0);
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) {
        double x = a[i];
        switch (op) {
          case Op::Sigmoid: out[i] = sigmoid_scalar(x); break;
          case Op::Tanh: out[i] = std::tanh(x); break;
          case Op::Relu: out[i] = x > 0 ? x : 0.0; break;
          case Op::Exp: out[i] = std::exp(x); break;
          default: out[i] = softplus_scalar(x); break;
        }
      }
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::Log: {
      expect_arity(1);
      const Tensor& a = in(0);
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) {
        if (!(a[i] > 0)) throw Error("log: input must be strictly positive");
        out[i] = std::log(a[i]);
      }
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::Clamp: {
      expect_arity(1);
      if (!(attrs.lo < attrs.hi)) throw Error("clamp: lo must be < hi");
      const Tensor& a = in(0);
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::clamp(a[i], attrs.lo, attrs.hi);
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::LogSumExp: {
      expect_arity(1);
      const Tensor& a = in(0);
      int axis = normalize_axis(attrs.axis, a.rank());
      attrs.axis = axis;
      AxisView v = axis_view(a.shape(), axis);
      Tensor out(drop_axis(a.shape(), axis));
      std::vector<double> lane(v.len);
      std::size_t w = 0;
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
          std::size_t base = o * v.len * v.inner + i;
          for (std::size_t j = 0; j < v.len; ++j) lane[j] = a[base + j * v.inner];
          out[o * v.inner + i] = log_sum_exp_span(lane);
          ++w;
        }
      }
      (void)w;
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::Softmax:
    case Op::TemperedSoftmax: {
      expect_arity(1);
      const Tensor& a = in(0);
      int axis = normalize_axis(attrs.axis, a.rank());
      attrs.axis = axis;
      double tau = (op == Op::Softmax) ? 1.0 : attrs.tau;
      if (!(tau > 0)) throw Error("tempered_softmax: tau must be positive");
      Tensor out = softmax_axis(a, axis, tau);
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::Sum:
    case Op::Mean: {
      expect_arity(1);
      const Tensor& a = in(0);
      int axis = normalize_axis(attrs.axis, a.rank());
      attrs.axis = axis;
      AxisView v = axis_view(a.shape(), axis);
      Tensor out(drop_axis(a.shape(), axis));
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
          std::size_t base = o * v.len * v.inner + i;
          double s = 0;
          for (std::size_t j = 0; j < v.len; ++j) s += a[base + j * v.inner];
          out[o * v.inner + i] = (op == Op::Mean) ? s / static_cast<double>(v.len) : s;
        }
      }
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::SumAll: {
      expect_arity(1);
      const Tensor& a = in(0);
      double s = 0;
      for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
      return make_node(op, std::move(parents), std::move(attrs), Tensor::scalar(s));
    }

    case Op::Concat: {
      if (inputs.empty()) throw Error("concat: needs at least one input");
      const Tensor& first = in(0);
      int axis = normalize_axis(attrs.axis, first.rank());
      attrs.axis = axis;
      std::size_t total = 0;
      for (std::size_t p = 0; p < inputs.size(); ++p) {
        const Tensor& t = in(p);
        if (t.rank() != first.rank()) throw Error("concat: rank mismatch");
        for (std::size_t d = 0; d < t.rank(); ++d) {
          if (static_cast<int>(d) != axis && t.shape()[d] != first.shape()[d]) {
            throw Error("concat: extent mismatch off the concat axis");
          }
        }
        total += t.shape()[static_cast<std::size_t>(axis)];
      }
      Shape out_shape = first.shape();
      out_shape[static_cast<std::size_t>(axis)] = total;
      Tensor out(out_shape);
      AxisView ov = axis_view(out_shape, axis);
      std::size_t offset = 0;
      for (std::size_t p = 0; p < inputs.size(); ++p) {
        const Tensor& t = in(p);
        AxisView tv = axis_view(t.shape(), axis);
        for (std::size_t o = 0; o < tv.outer; ++o) {
          for (std::size_t j = 0; j < tv.len; ++j) {
            for (std::size_t i = 0; i < tv.inner; ++i) {
              out[(o * ov.len + offset + j) * ov.inner + i] = t[(o * tv.len + j) * tv.inner + i];
            }
          }
        }
        offset += tv.len;
      }
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::Slice: {
      expect_arity(1);
      const Tensor& a = in(0);
      int axis = normalize_axis(attrs.axis, a.rank());
      attrs.axis = axis;
      AxisView v = axis_view(a.shape(), axis);
      if (attrs.start >= attrs.stop || attrs.stop > v.len) {
        throw Error("slice: invalid range");
      }
      Shape out_shape = a.shape();
      out_shape[static_cast<std::size_t>(axis)] = attrs.stop - attrs.start;
      Tensor out(out_shape);
      std::size_t len = attrs.stop - attrs.start;
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t j = 0; j < len; ++j) {
          for (std::size_t i = 0; i < v.inner; ++i) {
            out[(o * len + j) * v.inner + i] = a[(o * v.len + attrs.start + j) * v.inner + i];
          }
        }
      }
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::Reshape: {
      expect_arity(1);
      Tensor out = in(0).reshaped(attrs.target_shape);
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::ArgmaxOneHot: {
      expect_arity(1);
      const Tensor& a = in(0);
      int axis = normalize_axis(attrs.axis, a.rank());
      attrs.axis = axis;
      Tensor out = one_hot_argmax_axis(a, axis);
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::StopGradient: {
      expect_arity(1);
      Tensor out = in(0);
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::GumbelSoftmax:
    case Op::StGumbelSoftmax: {
      expect_arity(1);
      const Tensor& x = in(0);
      if (!(attrs.tau > 0)) throw Error("gumbel_softmax: tau must be positive");
      if (!x.same_shape(attrs.noise)) throw Error("gumbel_softmax: noise shape mismatch");
      int axis = normalize_axis(attrs.axis, x.rank());
      attrs.axis = axis;
      Tensor perturbed(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) perturbed[i] = x[i] + attrs.noise[i];
      Tensor y = softmax_axis(perturbed, axis, attrs.tau);
      if (op == Op::GumbelSoftmax) {
        return make_node(op, std::move(parents), std::move(attrs), std::move(y));
      }
      Tensor z = one_hot_argmax_axis(y, axis);
      return make_node(op, std::move(parents), std::move(attrs), std::move(z), std::move(y));
    }

    case Op::BinaryConcrete:
    case Op::StBinaryConcrete: {
      expect_arity(1);
      const Tensor& a = in(0);
      if (!(attrs.tau > 0)) throw Error("binary_concrete: tau must be positive");
      if (!a.same_shape(attrs.noise)) throw Error("binary_concrete: noise shape mismatch");
      Tensor y(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) {
        y[i] = sigmoid_scalar((a[i] + attrs.noise[i]) / attrs.tau);
      }
      if (op == Op::BinaryConcrete) {
        return make_node(op, std::move(parents), std::move(attrs), std::move(y));
      }
      Tensor z(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) z[i] = y[i] > 0.5 ? 1.0 : 0.0;
      return make_node(op, std::move(parents), std::move(attrs), std::move(z), std::move(y));
    }

    case Op::GaussianReparam: {
      expect_arity(2);
      const Tensor& mu = in(0);
      const Tensor& sigma = in(1);
      if (!mu.same_shape(sigma)) throw Error("gaussian_reparam: mu/sigma shape mismatch");
      if (!mu.same_shape(attrs.noise)) throw Error("gaussian_reparam: noise shape mismatch");
      Tensor out(mu.shape());
      for (std::size_t i = 0; i < mu.numel(); ++i) {
        if (!(sigma[i] > 0)) throw Error("gaussian_reparam: sigma must be positive");
        out[i] = mu[i] + sigma[i] * attrs.noise[i];
      }
      return make_node(op, std::move(parents), std::move(attrs), std::move(out));
    }

    case Op::CategoricalSample:
    case Op::StCategorical: {
      expect_arity(1);
      const Tensor& x = in(0);
      if (!x.same_shape(attrs.noise)) throw Error("categorical_sample: noise shape mismatch");
      int axis = normalize_axis(attrs.axis, x.rank());
      attrs.axis = axis;
      Tensor perturbed(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) {
        // -inf marks zero-probability classes; keep it out of the sum.
        perturbed[i] = x[i] == -kInf ? -kInf : x[i] + attrs.noise[i];
      }
      Tensor z = one_hot_argmax_axis(perturbed, axis);
      if (op == Op::CategoricalSample) {
        return make_node(op, std::move(parents), std::move(attrs), std::move(z));
      }
      // ST surrogate: backward as if the output were softmax(slope * logits).
      if (!(attrs.slope > 0)) throw Error("st_categorical: slope must be positive");
      Tensor probs = softmax_axis(x, axis, 1.0 / attrs.slope);
      return make_node(op, std::move(parents), std::move(attrs), std::move(z), std::move(probs));
    }

    case Op::BernoulliSample:
    case Op::StBernoulli: {
      expect_arity(1);
      const Tensor& a = in(0);
      if (!a.same_shape(attrs.noise)) throw Error("bernoulli_sample: noise shape mismatch");
      Tensor z(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) {
        z[i] = attrs.noise[i] < sigmoid_scalar(a[i]) ? 1.0 : 0.0;
      }
      return make_node(op, std::move(parents), std::move(attrs), std::move(z));
    }
  }
  throw Error("graph: unknown op");
}

std::unordered_map<NodeId, Tensor> Graph::backward(Value loss) {
  if (loss.graph != this) throw Error("backward: loss belongs to another graph");
  if (backward_done_) throw Error("backward: already called on this graph instance");
  const Node& ln = node(loss.id);
  if (ln.value.numel() != 1) {
    throw Error("backward: loss must be scalar, got shape " + shape_to_string(ln.value.shape()));
  }
  backward_done_ = true;

  auto ensure_adjoint = [&](NodeId id) -> Tensor& {
    Node& n = nodes_[id];
    if (n.adjoint.numel() == 0) n.adjoint = Tensor(n.value.shape());
    return n.adjoint;
  };
  ensure_adjoint(loss.id)[0] = 1.0;

  for (NodeId id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.adjoint.numel() == 0 || n.op == Op::Leaf || !n.requires_grad) continue;
    const Tensor& adj = n.adjoint;
    // Adjoints are accumulated into every parent (so they can be inspected
    // via adjoint_of), but nodes with requires_grad == false are never
    // processed, which is what stops gradient flow.
    auto parent_needs = [&](std::size_t) { return true; };
    auto pval = [&](std::size_t i) -> const Tensor& { return nodes_[n.parents[i]].value; };
    auto padj = [&](std::size_t i) -> Tensor& { return ensure_adjoint(n.parents[i]); };

    switch (n.op) {
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const Tensor& a = pval(0);
        const Tensor& b = pval(1);
        for (int side = 0; side < 2; ++side) {
          if (!parent_needs(static_cast<std::size_t>(side))) continue;
          const Tensor& self = side == 0 ? a : b;
          const Tensor& other = side == 0 ? b : a;
          Tensor& dst = padj(static_cast<std::size_t>(side));
          std::size_t m_self = self.numel();
          std::size_t m_other = other.numel();
          for (std::size_t i = 0; i < adj.numel(); ++i) {
            double g = adj[i];
            if (n.op == Op::Sub && side == 1) g = -g;
            if (n.op == Op::Mul) g *= other[i % m_other];
            dst[i % m_self] += g;
          }
        }
        break;
      }

      case Op::MatMul: {
        const Tensor& a = pval(0);
        const Tensor& b = pval(1);
        std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
        if (parent_needs(0)) {
          Tensor& da = padj(0);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < nn; ++j) {
              double g = adj[i * nn + j];
              if (g == 0) continue;
              for (std::size_t p = 0; p < k; ++p) da[i * k + p] += g * b[p * nn + j];
            }
          }
        }
        if (parent_needs(1)) {
          Tensor& db = padj(1);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double av = a[i * k + p];
              if (av == 0) continue;
              for (std::size_t j = 0; j < nn; ++j) db[p * nn + j] += av * adj[i * nn + j];
            }
          }
        }
        break;
      }

      case Op::Sigmoid: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        for (std::size_t i = 0; i < adj.numel(); ++i) {
          dx[i] += adj[i] * n.value[i] * (1.0 - n.value[i]);
        }
        break;
      }
      case Op::Tanh: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        for (std::size_t i = 0; i < adj.numel(); ++i) {
          dx[i] += adj[i] * (1.0 - n.value[i] * n.value[i]);
        }
        break;
      }
      case Op::Relu: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        const Tensor& x = pval(0);
        for (std::size_t i = 0; i < adj.numel(); ++i) {
          if (x[i] > 0) dx[i] += adj[i];
        }
        break;
      }
      case Op::Exp: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        for (std::size_t i = 0; i < adj.numel(); ++i) dx[i] += adj[i] * n.value[i];
        break;
      }
      case Op::Log: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        const Tensor& x = pval(0);
        for (std::size_t i = 0; i < adj.numel(); ++i) dx[i] += adj[i] / x[i];
        break;
      }
      case Op::Softplus: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        const Tensor& x = pval(0);
        for (std::size_t i = 0; i < adj.numel(); ++i) dx[i] += adj[i] * sigmoid_scalar(x[i]);
        break;
      }
      case Op::Clamp: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        const Tensor& x = pval(0);
        for (std::size_t i = 0; i < adj.numel(); ++i) {
          if (x[i] >= n.attrs.lo && x[i] <= n.attrs.hi) dx[i] += adj[i];
        }
        break;
      }

      case Op::LogSumExp: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        const Tensor& x = pval(0);
        AxisView v = axis_view(x.shape(), n.attrs.axis);
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t i = 0; i < v.inner; ++i) {
            double g = adj[o * v.inner + i];
            double lse = n.value[o * v.inner + i];
            std::size_t base = o * v.len * v.inner + i;
            for (std::size_t j = 0; j < v.len; ++j) {
              std::size_t idx = base + j * v.inner;
              dx[idx] += g * std::exp(x[idx] - lse);
            }
          }
        }
        break;
      }

      case Op::Softmax:
      case Op::TemperedSoftmax: {
        if (!parent_needs(0)) break;
        double tau = n.op == Op::Softmax ? 1.0 : n.attrs.tau;
        softmax_backward_axis(n.value, adj, n.attrs.axis, tau, padj(0));
        break;
      }

      case Op::Sum:
      case Op::Mean: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        AxisView v = axis_view(pval(0).shape(), n.attrs.axis);
        double scale = n.op == Op::Mean ? 1.0 / static_cast<double>(v.len) : 1.0;
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t i = 0; i < v.inner; ++i) {
            double g = adj[o * v.inner + i] * scale;
            std::size_t base = o * v.len * v.inner + i;
            for (std::size_t j = 0; j < v.len; ++j) dx[base + j * v.inner] += g;
          }
        }
        break;
      }

      case Op::SumAll: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        double g = adj[0];
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += g;
        break;
      }

      case Op::Concat: {
        AxisView ov = axis_view(n.value.shape(), n.attrs.axis);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < n.parents.size(); ++p) {
          AxisView tv = axis_view(pval(p).shape(), n.attrs.axis);
          if (parent_needs(p)) {
            Tensor& dst = padj(p);
            for (std::size_t o = 0; o < tv.outer; ++o) {
              for (std::size_t j = 0; j < tv.len; ++j) {
                for (std::size_t i = 0; i < tv.inner; ++i) {
                  dst[(o * tv.len + j) * tv.inner + i] +=
                      adj[(o * ov.len + offset + j) * ov.inner + i];
                }
              }
            }
          }
          offset += tv.len;
        }
        break;
      }

      case Op::Slice: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        AxisView v = axis_view(pval(0).shape(), n.attrs.axis);
        std::size_t len = n.attrs.stop - n.attrs.start;
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t j = 0; j < len; ++j) {
            for (std::size_t i = 0; i < v.inner; ++i) {
              dx[(o * v.len + n.attrs.start + j) * v.inner + i] += adj[(o * len + j) * v.inner + i];
            }
          }
        }
        break;
      }

      case Op::Reshape: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        for (std::size_t i = 0; i < adj.numel(); ++i) dx[i] += adj[i];
        break;
      }

      case Op::GumbelSoftmax: {
        if (!parent_needs(0)) break;
        softmax_backward_axis(n.value, adj, n.attrs.axis, n.attrs.tau, padj(0));
        break;
      }
      case Op::StGumbelSoftmax: {
        // Straight-through: adjoint applied as if the output were the
        // relaxed sample y (stored in saved).
        if (!parent_needs(0)) break;
        softmax_backward_axis(n.saved, adj, n.attrs.axis, n.attrs.tau, padj(0));
        break;
      }
      case Op::BinaryConcrete:
      case Op::StBinaryConcrete: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        const Tensor& y = n.op == Op::BinaryConcrete ? n.value : n.saved;
        for (std::size_t i = 0; i < adj.numel(); ++i) {
          dx[i] += adj[i] * y[i] * (1.0 - y[i]) / n.attrs.tau;
        }
        break;
      }
      case Op::GaussianReparam: {
        if (parent_needs(0)) {
          Tensor& dmu = padj(0);
          for (std::size_t i = 0; i < adj.numel(); ++i) dmu[i] += adj[i];
        }
        if (parent_needs(1)) {
          Tensor& ds = padj(1);
          for (std::size_t i = 0; i < adj.numel(); ++i) ds[i] += adj[i] * n.attrs.noise[i];
        }
        break;
      }
      case Op::StBernoulli: {
        if (!parent_needs(0)) break;
        Tensor& dx = padj(0);
        const Tensor& a = pval(0);
        double s = n.attrs.slope;
        for (std::size_t i = 0; i < adj.numel(); ++i) {
          double sv = sigmoid_scalar(s * a[i]);
          dx[i] += adj[i] * s * sv * (1.0 - sv);
        }
        break;
      }
      case Op::StCategorical: {
        if (!parent_needs(0)) break;
        softmax_backward_axis(n.saved, adj, n.attrs.axis, 1.0 / n.attrs.slope, padj(0));
        break;
      }

      case Op::Leaf:
      case Op::StopGradient:
      case Op::ArgmaxOneHot:
      case Op::CategoricalSample:
      case Op::BernoulliSample:
        break;
    }
  }

  std::unordered_map<NodeId, Tensor> grads;
  for (const Node& n : nodes_) {
    if (!n.is_parameter) continue;
    grads.emplace(n.id, n.adjoint.numel() ? n.adjoint : Tensor(n.value.shape()));
  }
  return grads;
}

Tensor Graph::adjoint_of(Value v) const {
  if (v.graph != this) throw Error("adjoint_of: foreign handle");
  const Node& n = node(v.id);
  return n.adjoint.numel() ? n.adjoint : Tensor(n.value.shape());
}

// ---- op builders -----------------------------------------------------------

namespace {
Graph* require_graph(Value v) {
  if (!v.graph) throw Error("graph: unbound value handle");
  return v.graph;
}
}  // namespace

Value add(Value a, Value b) { return require_graph(a)->apply(Op::Add, {a, b}); }
Value sub(Value a, Value b) { return require_graph(a)->apply(Op::Sub, {a, b}); }
Value mul(Value a, Value b) { return require_graph(a)->apply(Op::Mul, {a, b}); }
Value matmul(Value a, Value b) { return require_graph(a)->apply(Op::MatMul, {a, b}); }
Value sigmoid(Value a) { return require_graph(a)->apply(Op::Sigmoid, {a}); }
Value tanh_op(Value a) { return require_graph(a)->apply(Op::Tanh, {a}); }
Value relu(Value a) { return require_graph(a)->apply(Op::Relu, {a}); }
Value exp_op(Value a) { return require_graph(a)->apply(Op::Exp, {a}); }
Value log_op(Value a) { return require_graph(a)->apply(Op::Log, {a}); }
Value softplus(Value a) { return require_graph(a)->apply(Op::Softplus, {a}); }

Value clamp(Value a, double lo, double hi) {
  OpAttrs attrs;
  attrs.lo = lo;
  attrs.hi = hi;
  return require_graph(a)->apply(Op::Clamp, {a}, std::move(attrs));
}

Value log_sum_exp(Value a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return require_graph(a)->apply(Op::LogSumExp, {a}, std::move(attrs));
}

Value softmax(Value a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return require_graph(a)->apply(Op::Softmax, {a}, std::move(attrs));
}

Value tempered_softmax(Value a, int axis, double tau) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.tau = tau;
  return require_graph(a)->apply(Op::TemperedSoftmax, {a}, std::move(attrs));
}

Value sum(Value a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return require_graph(a)->apply(Op::Sum, {a}, std::move(attrs));
}

Value mean(Value a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return require_graph(a)->apply(Op::Mean, {a}, std::move(attrs));
}

Value sum_all(Value a) { return require_graph(a)->apply(Op::SumAll, {a}); }

Value concat(std::vector<Value> parts, int axis) {
  if (parts.empty()) throw Error("concat: empty input list");
  OpAttrs attrs;
  attrs.axis = axis;
  return require_graph(parts[0])->apply(Op::Concat, parts, std::move(attrs));
}

Value slice(Value a, int axis, std::size_t start, std::size_t stop) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.start = start;
  attrs.stop = stop;
  return require_graph(a)->apply(Op::Slice, {a}, std::move(attrs));
}

Value reshape(Value a, Shape shape) {
  OpAttrs attrs;
  attrs.target_shape = std::move(shape);
  return require_graph(a)->apply(Op::Reshape, {a}, std::move(attrs));
}

Value argmax_one_hot(Value a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return require_graph(a)->apply(Op::ArgmaxOneHot, {a}, std::move(attrs));
}

Value stop_gradient(Value a) { return require_graph(a)->apply(Op::StopGradient, {a}); }

Tensor one_hot_argmax(const Tensor& t, int axis) {
  return one_hot_argmax_axis(t, normalize_axis(axis, t.rank()));
}

namespace {
Tensor gumbel_noise_like(const Tensor& t, RngStream& rng) {
  Tensor noise(t.shape());
  for (std::size_t i = 0; i < noise.numel(); ++i) noise[i] = rng.gumbel();
  return noise;
}
}  // namespace

Value gumbel_softmax_node(Value logits, int axis, double tau, RngStream& rng) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.tau = tau;
  attrs.noise = gumbel_noise_like(logits.tensor(), rng);
  return require_graph(logits)->apply(Op::GumbelSoftmax, {logits}, std::move(attrs));
}

Value st_gumbel_softmax_node(Value logits, int axis, double tau, RngStream& rng) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.tau = tau;
  attrs.noise = gumbel_noise_like(logits.tensor(), rng);
  return require_graph(logits)->apply(Op::StGumbelSoftmax, {logits}, std::move(attrs));
}

Value binary_concrete_node(Value pre_sigmoid, double tau, RngStream& rng) {
  OpAttrs attrs;
  attrs.tau = tau;
  Tensor noise(pre_sigmoid.tensor().shape());
  for (std::size_t i = 0; i < noise.numel(); ++i) {
    double u = rng.uniform_open();
    noise[i] = std::log(u) - std::log1p(-u);  // Logistic(0,1)
  }
  attrs.noise = std::move(noise);
  return require_graph(pre_sigmoid)->apply(Op::BinaryConcrete, {pre_sigmoid}, std::move(attrs));
}

Value st_binary_concrete_node(Value pre_sigmoid, double tau, RngStream& rng) {
  OpAttrs attrs;
  attrs.tau = tau;
  Tensor noise(pre_sigmoid.tensor().shape());
  for (std::size_t i = 0; i < noise.numel(); ++i) {
    double u = rng.uniform_open();
    noise[i] = std::log(u) - std::log1p(-u);
  }
  attrs.noise = std::move(noise);
  return require_graph(pre_sigmoid)->apply(Op::StBinaryConcrete, {pre_sigmoid}, std::move(attrs));
}

Value gaussian_reparam_node(Value mu, Value sigma, RngStream& rng) {
  OpAttrs attrs;
  Tensor noise(mu.tensor().shape());
  for (std::size_t i = 0; i < noise.numel(); ++i) noise[i] = rng.gaussian();
  attrs.noise = std::move(noise);
  return require_graph(mu)->apply(Op::GaussianReparam, {mu, sigma}, std::move(attrs));
}

Value categorical_sample_node(Value logits, int axis, RngStream& rng) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.noise = gumbel_noise_like(logits.tensor(), rng);
  return require_graph(logits)->apply(Op::CategoricalSample, {logits}, std::move(attrs));
}

Value bernoulli_sample_node(Value pre_sigmoid, RngStream& rng) {
  OpAttrs attrs;
  Tensor noise(pre_sigmoid.tensor().shape());
  for (std::size_t i = 0; i < noise.numel(); ++i) noise[i] = rng.uniform();
  attrs.noise = std::move(noise);
  return require_graph(pre_sigmoid)->apply(Op::BernoulliSample, {pre_sigmoid}, std::move(attrs));
}

Value st_bernoulli_node(Value pre_sigmoid, double slope, RngStream& rng) {
  OpAttrs attrs;
  attrs.slope = slope;
  Tensor noise(pre_sigmoid.tensor().shape());
  for (std::size_t i = 0; i < noise.numel(); ++i) noise[i] = rng.uniform();
  attrs.noise = std::move(noise);
  return require_graph(pre_sigmoid)->apply(Op::StBernoulli, {pre_sigmoid}, std::move(attrs));
}

Value st_categorical_node(Value logits, int axis, RngStream& rng, double slope) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.slope = slope;
  attrs.noise = gumbel_noise_like(logits.tensor(), rng);
  return require_graph(logits)->apply(Op::StCategorical, {logits}, std::move(attrs));
}

void sgd_momentum_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                       SgdMomentum& state) {
  if (params.size() != grads.size()) throw Error("sgd: params/grads size mismatch");
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Tensor& p : params) state.velocity.emplace_back(p.shape());
  }
  if (state.velocity.size() != params.size()) throw Error("sgd: momentum state size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw Error("sgd: non-finite gradient for parameter " + std::to_string(i) +
                  "; step aborted");
    }
    if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.velocity[i])) {
      throw Error("sgd: shape mismatch for parameter " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = state.velocity[i];
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      v[j] = state.momentum * v[j] + g[j];
      p[j] -= state.lr * v[j];
    }
  }
}

}  // namespace catgrad
