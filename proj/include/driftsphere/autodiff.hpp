#pragma once

// Minimal reverse-mode differentiation over dense matrices. A Tape records
// every operation in creation order; backward() walks it in reverse.

#include "driftsphere/types.hpp"

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace driftsphere::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool frozen = false;
  bool decay = true;  // subject to decoupled weight decay
};

// Ordered, name-addressable parameter collection with value semantics.
class ParameterSet {
 public:
  Parameter& add(std::string name, Matrix value, bool decay = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  // Freezes or unfreezes every parameter whose name starts with `prefix`.
  void set_frozen(const std::string& prefix, bool frozen);
  std::size_t scalar_count() const;

  // Same names, shapes and values.
  bool same_values(const ParameterSet& other) const;

 private:
  std::deque<Parameter> params_;  // references stay valid across add()
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var constant(Matrix value, std::string name = "const");
  // Leaf bound to a parameter; backward() accumulates into p.grad unless the
  // parameter is frozen. `p` must outlive the tape.
  Var parameter(Parameter& p);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates. Throws
  // NumericalError naming the node whose backward produced a non-finite value.
  void backward(const Var& loss);

  // Internal interface used by the operations.
  Var push(std::string name, Matrix value, std::vector<int> inputs, Backward backward);
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  Matrix& grad_mut(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const std::string& name(int id) const { return nodes_[static_cast<std::size_t>(id)].name; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string name;
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
};

// --- operations -------------------------------------------------------------

Var matmul(const Var& a, const Var& b);     // a b
Var matmul_nt(const Var& a, const Var& b);  // a bᵀ
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);         // element-wise
Var add_row(const Var& a, const Var& row);   // broadcast a 1 x n row over a's rows
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var scalar_mul(const Var& a, const Var& s);  // s is 1 x 1
Var reciprocal(const Var& a);
Var tanh(const Var& a);
Var row_normalize(const Var& a);             // each row divided by its L2 norm
Var softmax_rows(const Var& a);
// -mean_i Σ_j targets_ij log softmax(logits)_ij. Targets are constants.
Var cross_entropy_rows(const Var& logits, const Matrix& targets);
Var sum(const Var& a);
Var mean(const Var& a);
Var concat_cols(const Var& a, const Var& b);
Var column(const Var& a, Eigen::Index j);    // N x 1
Var row_scale(const Var& a, const Var& w);   // row i of a times w_i (w is N x 1)
// Keeps the k largest entries of each row (ties: lower column first), zeroes
// the rest and renormalizes each row to sum to one.
Var topk_renormalize(const Var& w, int k);

// 2 / (κ (1 - a bᵀ) + ε) for unit-row a, b.
Var thp_logits(const Var& a, const Var& b, const Var& kappa, double epsilon);

// The top-k selection mask used by topk_renormalize (1 = kept).
Matrix topk_mask(const Matrix& w, int k);

}  // namespace driftsphere::ad
