#include "driftsphere/autodiff.hpp"

#include "driftsphere/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace driftsphere::ad {

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, Matrix value, bool decay) {
  if (contains(name)) throw PreconditionError("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  Matrix grad = Matrix::Zero(value.rows(), value.cols());
  params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad), false, decay});
  return params_.back();
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw PreconditionError("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw PreconditionError("unknown parameter '" + name + "'");
  return params_[it->second];
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

void ParameterSet::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) p.frozen = frozen;
  }
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool ParameterSet::same_values(const ParameterSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
    if (!(a.value.array() == b.value.array()).all()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw PreconditionError("use of an unbound Var");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("Var is not a scalar");
  return v(0, 0);
}

Var Tape::push(std::string name, Matrix value, std::vector<int> inputs, Backward backward) {
  if (!value.allFinite()) throw NumericalError("non-finite value produced by node '" + name + "'");
  nodes_.push_back(Node{std::move(name), std::move(value), Matrix(), std::move(inputs), std::move(backward), nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value, std::string name) { return push(std::move(name), std::move(value), {}, nullptr); }

Var Tape::parameter(Parameter& p) {
  Var v = push(p.name, p.value, {}, nullptr);
  nodes_.back().param = &p;
  return v;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw PreconditionError("loss belongs to another tape");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward requires a 1x1 loss");
  for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
  nodes_[static_cast<std::size_t>(loss.id())].grad(0, 0) = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward) continue;
    n.backward(*this, id);
    for (int in : nodes_[static_cast<std::size_t>(id)].inputs) {
      if (!grad(in).allFinite()) {
        throw NumericalError("non-finite gradient from node '" + nodes_[static_cast<std::size_t>(id)].name +
                             "' into '" + name(in) + "'");
      }
    }
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr || n.param->frozen) continue;
    if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
      n.param->grad = Matrix::Zero(n.grad.rows(), n.grad.cols());
    }
    n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw PreconditionError("operands belong to different tapes");
  return *a.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
  const int ia = a.id(), ib = b.id();
  return t.push("matmul", a.value() * b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_mut(ia).noalias() += g * tp.value(ib).transpose();
    tp.grad_mut(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: dimension mismatch");
  const int ia = a.id(), ib = b.id();
  return t.push("matmul_nt", a.value() * b.value().transpose(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_mut(ia).noalias() += g * tp.value(ib);
    tp.grad_mut(ib).noalias() += g.transpose() * tp.value(ia);
  });
}

Var transpose(const Var& a) {
  const int ia = a.id();
  return a.tape()->push("transpose", a.value().transpose(), {ia},
                        [ia](Tape& tp, int self) { tp.grad_mut(ia) += tp.grad(self).transpose(); });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return t.push("add", a.value() + b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    tp.grad_mut(ia) += tp.grad(self);
    tp.grad_mut(ib) += tp.grad(self);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return t.push("sub", a.value() - b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    tp.grad_mut(ia) += tp.grad(self);
    tp.grad_mut(ib) -= tp.grad(self);
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return t.push("mul", a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_mut(ia) += g.cwiseProduct(tp.value(ib));
    tp.grad_mut(ib) += g.cwiseProduct(tp.value(ia));
  });
}

Var add_row(const Var& a, const Var& row) {
  Tape& t = same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: bias shape mismatch");
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t.push("add_row", std::move(out), {ia, ir}, [ia, ir](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_mut(ia) += g;
    tp.grad_mut(ir) += g.colwise().sum();
  });
}

Var scale(const Var& a, double c) {
  const int ia = a.id();
  return a.tape()->push("scale", a.value() * c, {ia},
                        [ia, c](Tape& tp, int self) { tp.grad_mut(ia) += c * tp.grad(self); });
}

Var add_scalar(const Var& a, double c) {
  const int ia = a.id();
  return a.tape()->push("add_scalar", (a.value().array() + c).matrix(), {ia},
                        [ia](Tape& tp, int self) { tp.grad_mut(ia) += tp.grad(self); });
}

Var scalar_mul(const Var& a, const Var& s) {
  Tape& t = same_tape(a, s);
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("scalar_mul: multiplier must be 1x1");
  const int ia = a.id(), is = s.id();
  return t.push("scalar_mul", a.value() * s.scalar(), {ia, is}, [ia, is](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_mut(ia) += g * tp.value(is)(0, 0);
    tp.grad_mut(is)(0, 0) += g.cwiseProduct(tp.value(ia)).sum();
  });
}

Var reciprocal(const Var& a) {
  const int ia = a.id();
  return a.tape()->push("reciprocal", a.value().cwiseInverse(), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad_mut(ia) -= tp.grad(self).cwiseProduct(y.cwiseProduct(y));
  });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  return a.tape()->push("tanh", a.value().array().tanh().matrix(), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad_mut(ia) += (tp.grad(self).array() * (1.0 - y.array().square())).matrix();
  });
}

Var row_normalize(const Var& a) {
  const int ia = a.id();
  const Matrix& x = a.value();
  const Eigen::VectorXd norms = x.rowwise().norm();
  if ((norms.array() == 0.0).any()) throw NumericalError("row_normalize: zero row");
  Matrix y = norms.cwiseInverse().asDiagonal() * x;
  return a.tape()->push("row_normalize", std::move(y), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    const Eigen::VectorXd inv = tp.value(ia).rowwise().norm().cwiseInverse();
    const Eigen::VectorXd proj = y.cwiseProduct(g).rowwise().sum();
    tp.grad_mut(ia) += inv.asDiagonal() * (g - proj.asDiagonal() * y);
  });
}

namespace {

Matrix row_softmax(const Matrix& a) {
  Matrix out = a;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

Var softmax_rows(const Var& a) {
  const int ia = a.id();
  return a.tape()->push("softmax_rows", row_softmax(a.value()), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    const Eigen::VectorXd inner = y.cwiseProduct(g).rowwise().sum();
    tp.grad_mut(ia) += y.cwiseProduct(g - inner.replicate(1, g.cols()));
  });
}

Var cross_entropy_rows(const Var& logits, const Matrix& targets) {
  const Matrix& z = logits.value();
  if (targets.rows() != z.rows() || targets.cols() != z.cols()) throw ShapeError("cross_entropy_rows: shape mismatch");
  if (z.rows() == 0) throw ShapeError("cross_entropy_rows: empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    total -= (targets.row(i).array() * (z.row(i).array() - lse)).sum();
  }
  const double n = static_cast<double>(z.rows());
  Matrix out(1, 1);
  out(0, 0) = total / n;
  const int il = logits.id();
  return logits.tape()->push("cross_entropy_rows", std::move(out), {il}, [il, targets, n](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    const Matrix p = row_softmax(tp.value(il));
    const Eigen::VectorXd mass = targets.rowwise().sum();
    tp.grad_mut(il) += (g / n) * (mass.asDiagonal() * p - targets);
  });
}

Var sum(const Var& a) {
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->push("sum", std::move(out), {ia},
                        [ia](Tape& tp, int self) { tp.grad_mut(ia).array() += tp.grad(self)(0, 0); });
}

Var mean(const Var& a) {
  const int ia = a.id();
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean of an empty matrix");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return a.tape()->push("mean", std::move(out), {ia},
                        [ia, n](Tape& tp, int self) { tp.grad_mut(ia).array() += tp.grad(self)(0, 0) / n; });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row count mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const int ia = a.id(), ib = b.id();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  return t.push("concat_cols", std::move(out), {ia, ib}, [ia, ib, ca, cb](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_mut(ia) += g.leftCols(ca);
    tp.grad_mut(ib) += g.rightCols(cb);
  });
}

Var column(const Var& a, Eigen::Index j) {
  if (j < 0 || j >= a.cols()) throw ShapeError("column: index out of range");
  const int ia = a.id();
  return a.tape()->push("column", a.value().col(j), {ia},
                        [ia, j](Tape& tp, int self) { tp.grad_mut(ia).col(j) += tp.grad(self); });
}

Var row_scale(const Var& a, const Var& w) {
  Tape& t = same_tape(a, w);
  if (w.cols() != 1 || w.rows() != a.rows()) throw ShapeError("row_scale: weight shape mismatch");
  const int ia = a.id(), iw = w.id();
  Matrix out = w.value().col(0).asDiagonal() * a.value();
  return t.push("row_scale", std::move(out), {ia, iw}, [ia, iw](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_mut(ia) += tp.value(iw).col(0).asDiagonal() * g;
    tp.grad_mut(iw) += g.cwiseProduct(tp.value(ia)).rowwise().sum();
  });
}

Matrix topk_mask(const Matrix& w, int k) {
  if (k < 1 || k > w.cols()) throw PreconditionError("top_k out of range");
  Matrix mask = Matrix::Zero(w.rows(), w.cols());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return w(i, a) > w(i, b); });
    for (int r = 0; r < k; ++r) mask(i, order[static_cast<std::size_t>(r)]) = 1.0;
  }
  return mask;
}

Var topk_renormalize(const Var& w, int k) {
  const Matrix mask = topk_mask(w.value(), k);
  const Matrix kept = w.value().cwiseProduct(mask);
  const Eigen::VectorXd sums = kept.rowwise().sum();
  if ((sums.array() <= 0.0).any()) throw NumericalError("topk_renormalize: non-positive kept mass");
  Matrix out = sums.cwiseInverse().asDiagonal() * kept;
  const int iw = w.id();
  return w.tape()->push("topk_renormalize", std::move(out), {iw}, [iw, mask, sums](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    const Eigen::VectorXd inner = y.cwiseProduct(g).rowwise().sum();
    tp.grad_mut(iw) += mask.cwiseProduct(sums.cwiseInverse().asDiagonal() * (g - inner.replicate(1, g.cols())));
  });
}

Var thp_logits(const Var& a, const Var& b, const Var& kappa, double epsilon) {
  Var dots = matmul_nt(a, b);
  Var gap = add_scalar(scale(dots, -1.0), 1.0);
  Var denom = add_scalar(scalar_mul(gap, kappa), epsilon);
  return scale(reciprocal(denom), 2.0);
}

}  // namespace driftsphere::ad
