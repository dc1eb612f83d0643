#include "gad/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_set>

#include "gad/error.hpp"

namespace gad::nn {

namespace {

std::string shape_str(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
  }
}

void accumulate(detail::Node& node, const Matrix& g) {
  if (!node.requires_grad || g.size() == 0) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

template <typename F>
Tensor unary(const Tensor& a, Matrix value, F&& local_grad) {
  return make_op(std::move(value), {a}, [local_grad = std::forward<F>(local_grad)](const Matrix& g) {
    return std::vector<Matrix>{local_grad(g)};
  });
}

// Row softmax restricted to allowed entries (all entries when mask is null).
// One code path for both cases keeps an all-allowed mask bitwise identical
// to the unmasked softmax.
Matrix softmax_values(const Matrix& logits, const BoolMatrix* mask = nullptr) {
  Matrix y = Matrix::Zero(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Index c = 0; c < logits.cols(); ++c) {
      if (mask && !(*mask)(r, c)) continue;
      // std::max would drop a NaN; keep it so the row comes out NaN.
      const double v = logits(r, c);
      mx = (!any || std::isnan(v) || v > mx) && !std::isnan(mx) ? v : mx;
      any = true;
    }
    if (!any) {
      throw AllMaskedRow("softmax: row " + std::to_string(r) + " has no unmasked entry");
    }
    double z = 0.0;
    for (Index c = 0; c < logits.cols(); ++c) {
      if (!mask || (*mask)(r, c)) z += (y(r, c) = std::exp(logits(r, c) - mx));
    }
    for (Index c = 0; c < logits.cols(); ++c) y(r, c) /= z;
  }
  return y;
}

// dL/dx for y = softmax(x) row-wise.
Matrix softmax_backward(const Matrix& y, const Matrix& g) {
  const Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
  return (y.array() * (g.colwise() - dots).array()).matrix();
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor and tape

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Tensor::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

Matrix& Tensor::mutable_grad() {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on a non-scalar tensor " + shape_str(*this));
  return node_->value(0, 0);
}

Tensor make_op(Matrix value, std::vector<Tensor> parents, BackwardFn backward) {
  Tensor out(std::move(value));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(std::move(p.node_));
  }
  return out;
}

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw NonScalarLoss("backward: loss has shape " + shape_str(loss));
  if (!std::isfinite(loss.item())) throw NonScalarLoss("backward: loss is not finite");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node_.get(), 0}};
  visited.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
  if (!loss.node_->backward) {
    accumulate(*loss.node_, Matrix::Ones(1, 1));
    return;
  }
  loss.node_->grad = Matrix::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward || n->grad.size() == 0) continue;
    const std::vector<Matrix> grads = n->backward(n->grad);
    for (std::size_t i = 0; i < n->parents.size() && i < grads.size(); ++i) accumulate(*n->parents[i], grads[i]);
  }
  for (detail::Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
}

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return make_op(a.value() * b.value(), {a, b}, [av = a.value(), bv = b.value(), need_a, need_b](const Matrix& g) {
    std::vector<Matrix> out(2);
    if (need_a) out[0] = g * bv.transpose();
    if (need_b) out[1] = av.transpose() * g;
    return out;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return make_op(a.value() + b.value(), {a, b}, [](const Matrix& g) { return std::vector<Matrix>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return make_op(a.value() - b.value(), {a, b}, [](const Matrix& g) { return std::vector<Matrix>{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [av = a.value(), bv = b.value()](const Matrix& g) {
    return std::vector<Matrix>{g.cwiseProduct(bv), g.cwiseProduct(av)};
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, a.value() * s, [s](const Matrix& g) -> Matrix { return g * s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, (a.value().array() + s).matrix(), [](const Matrix& g) -> Matrix { return g; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: row " + shape_str(row) + " does not fit " + shape_str(a));
  }
  Matrix value = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(value), {a, row},
                 [](const Matrix& g) { return std::vector<Matrix>{g, g.colwise().sum()}; });
}

Tensor transpose(const Tensor& a) {
  return unary(a, a.value().transpose(), [](const Matrix& g) -> Matrix { return g.transpose(); });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  Index total = 0;
  std::vector<Index> sizes;
  for (const auto& p : parts) {
    if ((axis == 0 ? p.cols() : p.rows()) != (axis == 0 ? parts[0].cols() : parts[0].rows())) {
      throw ShapeError("concat: " + shape_str(p) + " does not fit " + shape_str(parts[0]));
    }
    sizes.push_back(axis == 0 ? p.rows() : p.cols());
    total += sizes.back();
  }
  Matrix value = axis == 0 ? Matrix(total, parts[0].cols()) : Matrix(parts[0].rows(), total);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (axis == 0) {
      value.middleRows(offset, sizes[i]) = parts[i].value();
    } else {
      value.middleCols(offset, sizes[i]) = parts[i].value();
    }
    offset += sizes[i];
  }
  return make_op(std::move(value), {parts.begin(), parts.end()}, [sizes, axis](const Matrix& g) {
    std::vector<Matrix> out;
    Index off = 0;
    for (Index n : sizes) {
      out.push_back(axis == 0 ? Matrix(g.middleRows(off, n)) : Matrix(g.middleCols(off, n)));
      off += n;
    }
    return out;
  });
}

Tensor slice(const Tensor& a, int axis, Index start, Index length) {
  const Index extent = axis == 0 ? a.rows() : a.cols();
  if ((axis != 0 && axis != 1) || start < 0 || length < 0 || start + length > extent) {
    throw ShapeError("slice: range out of bounds for " + shape_str(a));
  }
  Matrix value = axis == 0 ? Matrix(a.value().middleRows(start, length)) : Matrix(a.value().middleCols(start, length));
  return unary(a, std::move(value), [rows = a.rows(), cols = a.cols(), axis, start, length](const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    if (axis == 0) {
      full.middleRows(start, length) = g;
    } else {
      full.middleCols(start, length) = g;
    }
    return full;
  });
}

Tensor exp(const Tensor& a) {
  Matrix y = a.value().array().exp();
  return unary(a, y, [y](const Matrix& g) -> Matrix { return g.cwiseProduct(y); });
}

Tensor log(const Tensor& a) {
  return unary(a, a.value().array().log(),
               [x = a.value()](const Matrix& g) -> Matrix { return g.array() / x.array(); });
}

Tensor sigmoid(const Tensor& a) {
  Matrix y = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return unary(a, y, [y](const Matrix& g) -> Matrix { return g.array() * y.array() * (1.0 - y.array()); });
}

Tensor log_sigmoid(const Tensor& a) {
  // log sigmoid(x) = min(x, 0) - log1p(exp(-|x|)); derivative is sigmoid(-x).
  Matrix y = a.value().unaryExpr([](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); });
  return unary(a, std::move(y), [x = a.value()](const Matrix& g) -> Matrix {
    const Matrix s = x.unaryExpr([](double v) {
      return v >= 0 ? std::exp(-v) / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
    });
    return g.cwiseProduct(s);
  });
}

Tensor relu(const Tensor& a) {
  return unary(a, a.value().cwiseMax(0.0), [x = a.value()](const Matrix& g) -> Matrix {
    return (x.array() > 0.0).select(g, 0.0);
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double c = 0.044715;
  Matrix y = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); });
  return unary(a, std::move(y), [x = a.value()](const Matrix& g) -> Matrix {
    const Matrix d = x.unaryExpr([](double v) {
      const double t = std::tanh(k * (v + c * v * v * v));
      return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
    });
    return g.cwiseProduct(d);
  });
}

Tensor sum(const Tensor& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return unary(a, std::move(v), [r = a.rows(), c = a.cols()](const Matrix& g) -> Matrix {
    return Matrix::Constant(r, c, g(0, 0));
  });
}

Tensor mean(const Tensor& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Tensor row_sum(const Tensor& a) {
  return unary(a, a.value().rowwise().sum(), [c = a.cols()](const Matrix& g) -> Matrix {
    return g.replicate(1, c);
  });
}

Tensor average(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("average: no inputs");
  Matrix value = Matrix::Zero(parts[0].rows(), parts[0].cols());
  for (const auto& p : parts) {
    require_same_shape(p, parts[0], "average");
    value += p.value();
  }
  const double w = 1.0 / static_cast<double>(parts.size());
  value *= w;
  const std::size_t n = parts.size();
  return make_op(std::move(value), {parts.begin(), parts.end()}, [n, w](const Matrix& g) {
    return std::vector<Matrix>(n, g * w);
  });
}

Tensor softmax_rows(const Tensor& logits) {
  Matrix y = softmax_values(logits.value());
  return unary(logits, y, [y](const Matrix& g) { return softmax_backward(y, g); });
}

Tensor masked_softmax(const Tensor& logits, const BoolMatrix& mask) {
  if (mask.rows() != logits.rows() || mask.cols() != logits.cols()) {
    throw ShapeError("masked_softmax: mask shape differs from logits " + shape_str(logits));
  }
  Matrix y = softmax_values(logits.value(), &mask);
  return unary(logits, y, [y](const Matrix& g) { return softmax_backward(y, g); });
}

Tensor log_softmax_rows(const Tensor& logits) {
  const Matrix& x = logits.value();
  Matrix y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  Matrix p = y.array().exp();
  return unary(logits, std::move(y), [p = std::move(p)](const Matrix& g) -> Matrix {
    const Eigen::VectorXd gs = g.rowwise().sum();
    return g - (p.array().colwise() * gs.array()).matrix();
  });
}

Tensor logsumexp_rows(const Tensor& a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    y(r, 0) = mx + std::log((x.row(r).array() - mx).exp().sum());
  }
  Matrix p = softmax_values(x);
  return unary(a, std::move(y), [p = std::move(p)](const Matrix& g) -> Matrix {
    return (p.array().colwise() * g.col(0).array()).matrix();
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  const Index c = a.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(c));
  }
  const Matrix& x = a.value();
  Matrix xhat(x.rows(), c);
  Eigen::VectorXd inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std[r];
  }
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return make_op(std::move(y), {a, gain, bias},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), gv = gain.value()](const Matrix& g) {
                   const Matrix dxhat = g.array().rowwise() * gv.row(0).array();
                   const auto n = static_cast<double>(dxhat.cols());
                   Matrix dx(dxhat.rows(), dxhat.cols());
                   for (Index r = 0; r < dxhat.rows(); ++r) {
                     const double m1 = dxhat.row(r).sum() / n;
                     const double m2 = dxhat.row(r).dot(xhat.row(r)) / n;
                     dx.row(r) = inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                   }
                   return std::vector<Matrix>{dx, g.cwiseProduct(xhat).colwise().sum(), g.colwise().sum()};
                 });
}

Tensor normalize_rows(const Tensor& a, double eps) {
  const Matrix& x = a.value();
  const Eigen::VectorXd norms = (x.rowwise().squaredNorm().array() + eps).sqrt();
  Matrix y = x.array().colwise() / norms.array();
  return unary(a, y, [y, norms](const Matrix& g) -> Matrix {
    const Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
    return ((g - (y.array().colwise() * dots.array()).matrix()).array().colwise() / norms.array()).matrix();
  });
}

Tensor gather(const Tensor& a, std::span<const std::pair<Index, Index>> entries) {
  Matrix v(static_cast<Index>(entries.size()), 1);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto [r, c] = entries[i];
    if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) throw ShapeError("gather: index out of range");
    v(static_cast<Index>(i), 0) = a.value()(r, c);
  }
  std::vector<std::pair<Index, Index>> idx(entries.begin(), entries.end());
  return unary(a, std::move(v), [idx = std::move(idx), rows = a.rows(), cols = a.cols()](const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    for (std::size_t i = 0; i < idx.size(); ++i) full(idx[i].first, idx[i].second) += g(static_cast<Index>(i), 0);
    return full;
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " + shape_str(logits));
  }
  std::vector<std::pair<Index, Index>> entries;
  for (std::size_t i = 0; i < targets.size(); ++i) entries.emplace_back(static_cast<Index>(i), targets[i]);
  return scale(gather(log_softmax_rows(logits), entries), -1.0);
}

Tensor bce_with_logits(const Tensor& logits, const Matrix& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw ShapeError("bce_with_logits: target shape differs from " + shape_str(logits));
  }
  const Tensor t(targets);
  const Tensor one_minus_t(Matrix((1.0 - targets.array()).matrix()));
  const Tensor pos = mul(t, log_sigmoid(logits));
  const Tensor neg = mul(one_minus_t, log_sigmoid(scale(logits, -1.0)));
  return scale(mean(add(pos, neg)), -1.0);
}

// ---------------------------------------------------------------------------
// Parameters

Tensor ParamSet::add(std::string name, Matrix init) {
  if (contains(name)) throw ShapeError("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), Tensor(std::move(init), true)});
  return params_.back().tensor;
}

Tensor ParamSet::get(const std::string& name) const {
  if (auto it = index_.find(name); it != index_.end()) return params_[it->second].tensor;
  throw ShapeError("unknown parameter '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const {
  return index_.contains(name);
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Index ParamSet::num_values() const {
  Index n = 0;
  for (const auto& p : params_) n += p.tensor.value().size();
  return n;
}

double ParamSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p.tensor.grad().squaredNorm();
  return std::sqrt(sq);
}

nlohmann::json params_to_json(const ParamSet& params) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& p : params.params()) {
    const Matrix& v = p.tensor.value();
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(v.size()));
    for (Index r = 0; r < v.rows(); ++r) {
      for (Index c = 0; c < v.cols(); ++c) values.push_back(v(r, c));
    }
    doc[p.name] = {{"shape", {v.rows(), v.cols()}}, {"values", values}};
  }
  return doc;
}

std::array<Index, 2> checkpoint_shape(const nlohmann::json& doc, const std::string& name) {
  if (!doc.is_object() || !doc.contains(name)) throw ParseError("checkpoint: missing parameter '" + name + "'");
  const auto& entry = doc.at(name);
  try {
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw ParseError("checkpoint: bad shape for '" + name + "'");
    return {shape[0], shape[1]};
  } catch (const nlohmann::json::exception&) {
    throw ParseError("checkpoint: malformed entry '" + name + "'");
  }
}

void load_params_json(ParamSet& params, const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("checkpoint: expected an object");
  for (auto& p : params.params()) {
    if (!doc.contains(p.name)) throw ShapeError("checkpoint: missing parameter '" + p.name + "'");
    const auto shape = checkpoint_shape(doc, p.name);
    Matrix& v = p.tensor.mutable_value();
    if (shape[0] != v.rows() || shape[1] != v.cols()) {
      throw ShapeError("checkpoint: '" + p.name + "' has shape " + std::to_string(shape[0]) + "x" +
                       std::to_string(shape[1]) + ", model expects " + std::to_string(v.rows()) + "x" +
                       std::to_string(v.cols()));
    }
    std::vector<double> values;
    try {
      values = doc.at(p.name).at("values").get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw ParseError("checkpoint: malformed values for '" + p.name + "'");
    }
    if (static_cast<Index>(values.size()) != v.size()) {
      throw ParseError("checkpoint: '" + p.name + "' has " + std::to_string(values.size()) + " values");
    }
    for (Index r = 0, i = 0; r < v.rows(); ++r) {
      for (Index c = 0; c < v.cols(); ++c, ++i) v(r, c) = values[static_cast<std::size_t>(i)];
    }
    if (!v.allFinite()) throw ParseError("checkpoint: non-finite values in '" + p.name + "'");
  }
}

double clip_grad_norm(ParamSet& params, double max_norm) {
  const double norm = params.grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params.params()) p.tensor.mutable_grad() *= s;
  }
  return norm;
}

void Adam::step(ParamSet& params, double lr) {
  auto& ps = params.params();
  if (m_.size() != ps.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : ps) {
      m_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
      v_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Matrix g = ps[i].tensor.grad();
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
    if (lr == 0.0) continue;
    ps[i].tensor.mutable_value().array() -=
        lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

// ---------------------------------------------------------------------------
// Initialization

Matrix normal_matrix(Index rows, Index cols, double stddev, SplitMix64& rng) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, stddev);
  }
  return m;
}

Matrix xavier_uniform(Index rows, Index cols, SplitMix64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Finite differences

GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor param, double h, double tol, double floor) {
  param.zero_grad();
  backward(f());
  const Matrix analytic = param.grad();
  param.zero_grad();

  GradCheckResult result;
  Matrix& v = param.mutable_value();
  for (Index i = 0; i < v.size(); ++i) {
    const double orig = v.data()[i];
    v.data()[i] = orig + h;
    const double up = f().item();
    v.data()[i] = orig - h;
    const double down = f().item();
    v.data()[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.data()[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (result.worst_index < 0 || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = i;
    }
  }
  result.passed = result.max_rel_error <= tol;
  return result;
}

}  // namespace gad::nn

namespace gad::nn {

std::vector<NamedCheck> check_all_ops(std::uint64_t seed, double h, double tol) {
  SplitMix64 rng(seed);
  auto dim = [&] { return static_cast<Index>(rng.uniform_int(2, 8)); };
  auto leaf = [&](Index r, Index c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return Tensor(std::move(m), true);
  };
  std::vector<NamedCheck> out;
  // Reduces op output to a scalar with a weighting fixed at first evaluation.
  auto check = [&](const std::string& name, const std::function<Tensor()>& op, std::initializer_list<Tensor> inputs) {
    const Tensor probe = op();
    const Tensor weight(normal_matrix(probe.rows(), probe.cols(), 1.0, rng));
    const auto f = [&] { return sum(mul(op(), weight)); };
    int i = 0;
    for (const Tensor& in : inputs) {
      out.push_back({name + (inputs.size() > 1 ? "[" + std::to_string(i) + "]" : ""), grad_check(f, in, h, tol)});
      ++i;
    }
  };

  const Index r = dim(), c = dim(), k = dim();
  const Tensor a = leaf(r, c), b = leaf(r, c), m = leaf(c, k), row = leaf(1, c);
  check("matmul", [&] { return matmul(a, m); }, {a, m});
  check("add", [&] { return add(a, b); }, {a, b});
  check("sub", [&] { return sub(a, b); }, {a, b});
  check("mul", [&] { return mul(a, b); }, {a, b});
  check("scale", [&] { return scale(a, -1.7); }, {a});
  check("add_scalar", [&] { return add_scalar(a, 0.3); }, {a});
  check("add_row", [&] { return add_row(a, row); }, {a, row});
  check("transpose", [&] { return transpose(a); }, {a});
  check("concat_rows", [&] { return concat(std::vector<Tensor>{a, b}, 0); }, {a, b});
  check("concat_cols", [&] { return concat(std::vector<Tensor>{a, b}, 1); }, {a, b});
  check("slice", [&] { return slice(a, 1, 1, c - 1); }, {a});
  check("exp", [&] { return exp(a); }, {a});
  const Tensor pos = leaf(r, c, 0.5, 2.0);
  check("log", [&] { return log(pos); }, {pos});
  check("sigmoid", [&] { return sigmoid(a); }, {a});
  check("log_sigmoid", [&] { return log_sigmoid(scale(a, 4.0)); }, {a});
  Matrix away(r, c);
  for (Index i = 0; i < away.size(); ++i) away.data()[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  const Tensor kinked(away, true);
  check("relu", [&] { return relu(kinked); }, {kinked});
  check("gelu", [&] { return gelu(a); }, {a});
  check("sum", [&] { return sum(a); }, {a});
  check("mean", [&] { return mean(a); }, {a});
  check("row_sum", [&] { return row_sum(a); }, {a});
  check("average", [&] { return average(std::vector<Tensor>{a, b}); }, {a, b});
  check("softmax_rows", [&] { return softmax_rows(a); }, {a});
  BoolMatrix mask(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) mask(i, j) = j == i % c || rng.uniform() < 0.6;
  }
  check("masked_softmax", [&] { return masked_softmax(a, mask); }, {a});
  check("log_softmax_rows", [&] { return log_softmax_rows(a); }, {a});
  check("logsumexp_rows", [&] { return logsumexp_rows(a); }, {a});
  const Tensor gain = leaf(1, c, 0.5, 1.5), bias = leaf(1, c);
  check("layer_norm", [&] { return layer_norm(a, gain, bias); }, {a, gain, bias});
  check("normalize_rows", [&] { return normalize_rows(a); }, {a});
  const std::vector<std::pair<Index, Index>> picks{{0, 0}, {r - 1, c - 1}, {0, 0}, {r / 2, 1}};
  check("gather", [&] { return gather(a, picks); }, {a});
  std::vector<int> targets;
  for (Index i = 0; i < r; ++i) targets.push_back(rng.uniform_int(0, static_cast<int>(c) - 1));
  check("cross_entropy_rows", [&] { return cross_entropy_rows(a, targets); }, {a});
  Matrix bits(r, c);
  for (Index i = 0; i < bits.size(); ++i) bits.data()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  check("bce_with_logits", [&] { return bce_with_logits(a, bits); }, {a});
  return out;
}

}  // namespace gad::nn
