#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gad/random.hpp"

namespace gad::nn {

using Matrix = Eigen::MatrixXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

class Tensor;

/// Maps the gradient of an op's output to one gradient per parent. An empty
/// matrix means "no contribution".
using BackwardFn = std::function<std::vector<Matrix>(const Matrix& grad_out)>;

namespace detail {
struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad{false};
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};
}  // namespace detail

/// Dense row-major-semantics 2-D array that records the ops applied to it.
/// Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  /// Mutable access for parameter updates; never mutate a tensor that is
  /// part of a live graph.
  Matrix& mutable_value() { return node_->value; }
  /// Accumulated gradient (zeros if none has been accumulated).
  Matrix grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }
  /// Accumulated gradient storage, allocated as zeros on first access.
  Matrix& mutable_grad();

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }
  /// Value of a 1 x 1 tensor.
  double item() const;
  /// Same value, detached from the graph.
  Tensor detach() const { return Tensor(node_->value); }

 private:
  friend Tensor make_op(Matrix value, std::vector<Tensor> parents, BackwardFn backward);
  friend void backward(const Tensor& loss);
  std::shared_ptr<detail::Node> node_;
};

/// Builds an op node. `backward` is dropped when no parent requires grad.
Tensor make_op(Matrix value, std::vector<Tensor> parents, BackwardFn backward);

/// Reverse-mode pass from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are recomputed each call.
/// Throws NonScalarLoss unless loss is 1 x 1 and finite.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops. Shapes must conform exactly (ShapeError otherwise); the only
// broadcast is add_row, which adds a 1 x c row to every row.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor transpose(const Tensor& a);
/// axis 0 stacks rows, axis 1 stacks columns.
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, Index start, Index length);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// log(sigmoid(a)), computed stably.
Tensor log_sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
/// tanh-approximation GELU.
Tensor gelu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum of each row, as a column.
Tensor row_sum(const Tensor& a);
/// Elementwise mean of equally shaped tensors.
Tensor average(std::span<const Tensor> parts);
Tensor softmax_rows(const Tensor& logits);
/// Row softmax over allowed entries (mask true); disallowed entries are
/// exactly 0. Throws AllMaskedRow if a row allows nothing.
Tensor masked_softmax(const Tensor& logits, const BoolMatrix& mask);
Tensor log_softmax_rows(const Tensor& logits);
/// Row log-sum-exp, as a column.
Tensor logsumexp_rows(const Tensor& a);
/// Per-row normalization with learned 1 x c gain and bias.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Rows scaled to unit L2 norm: x / sqrt(|x|^2 + eps).
Tensor normalize_rows(const Tensor& a, double eps = 1e-12);
/// Selected entries as an n x 1 column.
Tensor gather(const Tensor& a, std::span<const std::pair<Index, Index>> entries);

/// Per-row cross-entropy -log softmax(logits)[target], as a column.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets);
/// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets of
/// the same shape.
Tensor bce_with_logits(const Tensor& logits, const Matrix& targets);

// ---------------------------------------------------------------------------
// Parameters

struct Param {
  std::string name;
  Tensor tensor;
};

/// Ordered, named parameter collection.
class ParamSet {
 public:
  Tensor add(std::string name, Matrix init);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  void zero_grad();
  Index num_values() const;
  double grad_norm() const;

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Flat map name -> {"shape": [r, c], "values": [...]} (row-major).
nlohmann::json params_to_json(const ParamSet& params);
/// Overwrites values of `params` from a checkpoint. Throws ShapeError on a
/// missing name or mismatched shape, ParseError on malformed entries.
void load_params_json(ParamSet& params, const nlohmann::json& doc);
/// Shape of one checkpoint entry; throws ParseError if absent or malformed.
std::array<Index, 2> checkpoint_shape(const nlohmann::json& doc, const std::string& name);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamSet& params, double max_norm);

class Adam {
 public:
  struct Options {
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
  };
  Adam() = default;
  explicit Adam(Options opts) : opts_(opts) {}
  void step(ParamSet& params, double lr);
  long steps() const { return t_; }

 private:
  Options opts_{};
  long t_{0};
  std::vector<Matrix> m_, v_;
};

// ---------------------------------------------------------------------------
// Initialization

Matrix normal_matrix(Index rows, Index cols, double stddev, SplitMix64& rng);
/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(Index rows, Index cols, SplitMix64& rng);

// ---------------------------------------------------------------------------
// Finite-difference checking

struct GradCheckResult {
  bool passed{false};
  double max_rel_error{0.0};
  Index worst_index{-1};
};

/// Compares backward() gradients of `f` w.r.t. `param` against central
/// differences with step h. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor param, double h = 1e-5, double tol = 1e-4,
                           double floor = 1e-6);

struct NamedCheck {
  std::string name;
  GradCheckResult result;
};

/// One check per (op, differentiable input) on random shapes up to 8,
/// each op reduced to a scalar through a fixed random weighting.
std::vector<NamedCheck> check_all_ops(std::uint64_t seed = 0, double h = 1e-5, double tol = 1e-3);

}  // namespace gad::nn
