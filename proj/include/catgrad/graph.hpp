#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "catgrad/rng.hpp"
#include "catgrad/tensor.hpp"

namespace catgrad {

enum class Op : std::uint8_t {
  Leaf,
  // elementwise / linear algebra
  Add,
  Sub,
  Mul,
  MatMul,
  Sigmoid,
  Tanh,
  Relu,
  Exp,
  Log,
  Softplus,
  Clamp,
  // axis ops
  LogSumExp,
  Softmax,
  TemperedSoftmax,
  Sum,
  Mean,
  SumAll,
  Concat,
  Slice,
  Reshape,
  // gradient control
  ArgmaxOneHot,
  StopGradient,
  // stochastic, reparameterized
  GumbelSoftmax,
  StGumbelSoftmax,
  BinaryConcrete,
  StBinaryConcrete,
  GaussianReparam,
  // stochastic, non-reparameterized (backward stops here)
  CategoricalSample,
  BernoulliSample,
  // stochastic, straight-through surrogate backward
  StBernoulli,
  StCategorical,
};

const char* op_name(Op op);
bool op_is_stochastic(Op op);
bool op_is_reparameterized(Op op);

struct OpAttrs {
  int axis = -1;                     // softmax/reductions/concat/slice
  double tau = 1.0;                  // temperature
  double slope = 1.0;                // straight-through slope
  double lo = 0.0, hi = 1.0;         // clamp bounds
  std::size_t start = 0, stop = 0;   // slice range
  Shape target_shape;                // reshape
  Tensor noise;                      // stochastic ops: recorded noise draws
};

using NodeId = std::uint32_t;

struct Node {
  NodeId id = 0;
  Op op = Op::Leaf;
  bool is_parameter = false;
  bool requires_grad = false;
  std::vector<NodeId> parents;
  OpAttrs attrs;
  Tensor value;
  Tensor saved;    // op-specific forward intermediate (e.g. the relaxed sample)
  Tensor adjoint;  // allocated during backward
};

class Graph;

/// Cheap handle to a node inside one Graph instance.
struct Value {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& tensor() const;
  const Shape& shape() const { return tensor().shape(); }
  double scalar() const { return tensor().scalar_value(); }
};

/// Reverse-mode autodiff over a dynamically built DAG. Nodes are created in
/// topological order; a graph instance is single-threaded and supports
/// exactly one backward() call.
class Graph {
 public:
  Value parameter(Tensor v);
  Value constant(Tensor v);
  Value constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  Value apply(Op op, const std::vector<Value>& inputs, OpAttrs attrs = {});

  const Node& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  /// Populates adjoints by a reverse topological sweep and returns the
  /// gradient of `loss` for every parameter node. `loss` must be scalar.
  /// Calling backward twice on the same graph is an error.
  std::unordered_map<NodeId, Tensor> backward(Value loss);

  /// Adjoint of an arbitrary node after backward() (zero tensor if the
  /// node was never reached).
  Tensor adjoint_of(Value v) const;

 private:
  friend struct Value;
  Value make_node(Op op, std::vector<NodeId> parents, OpAttrs attrs, Tensor value,
                  Tensor saved = {}, bool requires_grad_override = false);
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---- op builders -----------------------------------------------------------

Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }

Value matmul(Value a, Value b);
Value sigmoid(Value a);
Value tanh_op(Value a);
Value relu(Value a);
Value exp_op(Value a);
Value log_op(Value a);
Value softplus(Value a);
Value clamp(Value a, double lo, double hi);

Value log_sum_exp(Value a, int axis);
Value softmax(Value a, int axis);
Value tempered_softmax(Value a, int axis, double tau);
Value sum(Value a, int axis);
Value mean(Value a, int axis);
Value sum_all(Value a);
Value concat(std::vector<Value> parts, int axis);
Value slice(Value a, int axis, std::size_t start, std::size_t stop);
Value reshape(Value a, Shape shape);

Value argmax_one_hot(Value a, int axis);
Value stop_gradient(Value a);

/// Tensor-level argmax one-hot along `axis`, ties broken by lowest index.
Tensor one_hot_argmax(const Tensor& t, int axis);

// Stochastic nodes. Noise is drawn at construction and recorded on the node.
Value gumbel_softmax_node(Value logits, int axis, double tau, RngStream& rng);
Value st_gumbel_softmax_node(Value logits, int axis, double tau, RngStream& rng);
Value binary_concrete_node(Value pre_sigmoid, double tau, RngStream& rng);
Value st_binary_concrete_node(Value pre_sigmoid, double tau, RngStream& rng);
Value gaussian_reparam_node(Value mu, Value sigma, RngStream& rng);
Value categorical_sample_node(Value logits, int axis, RngStream& rng);
Value bernoulli_sample_node(Value pre_sigmoid, RngStream& rng);
Value st_bernoulli_node(Value pre_sigmoid, double slope, RngStream& rng);
Value st_categorical_node(Value logits, int axis, RngStream& rng, double slope = 1.0);

// ---- optimizer -------------------------------------------------------------

/// Classical (Polyak) momentum: v <- momentum*v + g; p <- p - lr*v.
struct SgdMomentum {
  double lr = 1e-3;
  double momentum = 0.9;
  std::vector<Tensor> velocity;  // lazily sized to match params
};

/// Throws on non-finite gradients without touching the parameters.
void sgd_momentum_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                       SgdMomentum& state);

}  // namespace catgrad
