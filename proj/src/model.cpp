#include "driftsphere/model.hpp"

#include "driftsphere/errors.hpp"
#include "driftsphere/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace driftsphere {

namespace {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
  }
  return m;
}

Matrix unit_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = sample_uniform_sphere(static_cast<int>(cols), rng).vec().transpose();
  return m;
}

void normalize_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0.0 && std::isfinite(n)) m.row(i) /= n;
  }
}

void add_mlp(ad::ParameterSet& params, const std::string& prefix, int in, int hidden, int out, Rng& rng) {
  params.add(prefix + "W1", gaussian_matrix(in, hidden, 1.0 / std::sqrt(in), rng));
  params.add(prefix + "b1", Matrix::Zero(1, hidden), false);
  params.add(prefix + "W2", gaussian_matrix(hidden, out, 1.0 / std::sqrt(hidden), rng));
  params.add(prefix + "b2", Matrix::Zero(1, out), false);
}

// affine → tanh → affine, value-only.
Matrix mlp_value(const ad::ParameterSet& params, const std::string& prefix, const Matrix& x) {
  Matrix h = x * params.at(prefix + "W1").value;
  h.rowwise() += params.at(prefix + "b1").value.row(0);
  h = h.array().tanh().matrix();
  Matrix out = h * params.at(prefix + "W2").value;
  out.rowwise() += params.at(prefix + "b2").value.row(0);
  return out;
}

ad::Var mlp_var(ad::Tape& tape, ad::ParameterSet& params, const std::string& prefix, const ad::Var& x) {
  ad::Var h = ad::tanh(ad::add_row(ad::matmul(x, tape.parameter(params.at(prefix + "W1"))),
                                   tape.parameter(params.at(prefix + "b1"))));
  return ad::add_row(ad::matmul(h, tape.parameter(params.at(prefix + "W2"))), tape.parameter(params.at(prefix + "b2")));
}

void require_mlp(const ad::ParameterSet& params, const std::string& prefix, int in, int hidden, int out) {
  const auto check = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    const auto& p = params.at(prefix + name);
    if (p.value.rows() != r || p.value.cols() != c) throw ShapeError("parameter '" + p.name + "' has the wrong shape");
  };
  check("W1", in, hidden);
  check("b1", 1, hidden);
  check("W2", hidden, out);
  check("b2", 1, out);
}

Matrix normalized_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("zero or non-finite activation before L2 projection");
    m.row(i) /= n;
  }
  return m;
}

const char* tower_prefix(Modality m) { return m == Modality::a ? "tower_a." : "tower_b."; }

}  // namespace

// ---------------------------------------------------------------------------
// Encoder

void EncoderShape::validate() const {
  if (raw_dim_a < 1 || raw_dim_b < 1 || hidden < 1) throw ConfigError("encoder dimensions must be positive");
  if (embed_dim < 4) throw ConfigError("embed_dim must be >= 4");
}

TwoTowerEncoder::TwoTowerEncoder(const EncoderShape& shape, Rng& rng) : shape_(shape) {
  shape_.validate();
  add_mlp(params_, "tower_a.", shape.raw_dim_a, shape.hidden, shape.embed_dim, rng);
  add_mlp(params_, "tower_b.", shape.raw_dim_b, shape.hidden, shape.embed_dim, rng);
  params_.add(kTemperatureName, Matrix::Constant(1, 1, AlignConfig{}.temperature), false);
}

TwoTowerEncoder::TwoTowerEncoder(const EncoderShape& shape, ad::ParameterSet params)
    : shape_(shape), params_(std::move(params)) {
  shape_.validate();
  require_mlp(params_, "tower_a.", shape.raw_dim_a, shape.hidden, shape.embed_dim);
  require_mlp(params_, "tower_b.", shape.raw_dim_b, shape.hidden, shape.embed_dim);
  const auto& tau = params_.at(kTemperatureName).value;
  if (tau.rows() != 1 || tau.cols() != 1 || !(tau(0, 0) > 0.0)) throw ShapeError("temperature must be a positive 1 x 1 parameter");
}

double TwoTowerEncoder::temperature() const { return params_.at(kTemperatureName).value(0, 0); }

void TwoTowerEncoder::set_temperature(double tau, bool trainable) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw PreconditionError("temperature must be > 0");
  auto& p = params_.at(kTemperatureName);
  p.value(0, 0) = tau;
  p.frozen = !trainable;
}

void TwoTowerEncoder::clamp_temperature() {
  auto& p = params_.at(kTemperatureName);
  if (!p.frozen) p.value(0, 0) = std::clamp(p.value(0, 0), kMinTemperature, kMaxTemperature);
}

Matrix TwoTowerEncoder::embed(Modality m, const Matrix& raw) const {
  const int in = m == Modality::a ? shape_.raw_dim_a : shape_.raw_dim_b;
  if (raw.cols() != in) throw ShapeError("encoder input dimension mismatch");
  return normalized_rows(mlp_value(params_, tower_prefix(m), raw));
}

ad::Var TwoTowerEncoder::embed(ad::Tape& tape, Modality m, const Matrix& raw) {
  const int in = m == Modality::a ? shape_.raw_dim_a : shape_.raw_dim_b;
  if (raw.cols() != in) throw ShapeError("encoder input dimension mismatch");
  return ad::row_normalize(mlp_var(tape, params_, tower_prefix(m), tape.constant(raw, "raw")));
}

EmbeddedPair forward_embed(const TwoTowerEncoder& encoder, const Matrix& raw_a, const Matrix& raw_b) {
  return EmbeddedPair{FeatureBatch(encoder.embed(Modality::a, raw_a)), FeatureBatch(encoder.embed(Modality::b, raw_b))};
}

// ---------------------------------------------------------------------------
// Classifier head

void HeadShape::validate() const {
  if (input_dim < 1 || embed_dim < 2) throw ConfigError("head dimensions must be positive");
  if (classes < 2) throw ConfigError("head requires at least two classes");
}

ClassifierHead::ClassifierHead(const HeadShape& shape, const MetricConfig& metric, bool trainable_kappa, Rng& rng)
    : shape_(shape), epsilon_(metric.epsilon) {
  shape_.validate();
  metric.validate();
  params_.add("head.W", gaussian_matrix(shape.input_dim, shape.embed_dim, 1.0 / std::sqrt(shape.input_dim), rng));
  params_.add("head.b", Matrix::Zero(1, shape.embed_dim), false);
  params_.add("head.prototypes", unit_rows(shape.classes, shape.embed_dim, rng), false);
  params_.add("head.kappa", Matrix::Constant(1, 1, metric.kappa), false).frozen = !trainable_kappa;
}

ClassifierHead::ClassifierHead(const HeadShape& shape, const MetricConfig& metric, ad::ParameterSet params)
    : shape_(shape), epsilon_(metric.epsilon), params_(std::move(params)) {
  shape_.validate();
  if (params_.at("head.W").value.rows() != shape.input_dim || params_.at("head.W").value.cols() != shape.embed_dim ||
      params_.at("head.prototypes").value.rows() != shape.classes ||
      params_.at("head.prototypes").value.cols() != shape.embed_dim || params_.at("head.kappa").value.size() != 1) {
    throw ShapeError("classifier head parameters do not match the head shape");
  }
}

double ClassifierHead::kappa() const { return params_.at("head.kappa").value(0, 0); }
bool ClassifierHead::trainable_kappa() const { return !params_.at("head.kappa").frozen; }

Matrix ClassifierHead::logits(const Matrix& x) const {
  if (x.cols() != shape_.input_dim) throw ShapeError("classifier input dimension mismatch");
  Matrix h = x * params_.at("head.W").value;
  h.rowwise() += params_.at("head.b").value.row(0);
  h = normalized_rows(std::move(h));
  return kernels::thp_similarity(h, params_.at("head.prototypes").value, MetricConfig{kappa(), epsilon_},
                                 kernels::Exec::serial);
}

ad::Var ClassifierHead::logits(ad::Tape& tape, const ad::Var& x) {
  if (x.cols() != shape_.input_dim) throw ShapeError("classifier input dimension mismatch");
  ad::Var h = ad::row_normalize(
      ad::add_row(ad::matmul(x, tape.parameter(params_.at("head.W"))), tape.parameter(params_.at("head.b"))));
  return ad::thp_logits(h, tape.parameter(params_.at("head.prototypes")), tape.parameter(params_.at("head.kappa")),
                        epsilon_);
}

void ClassifierHead::renormalize() {
  normalize_rows(params_.at("head.prototypes").value);
  auto& k = params_.at("head.kappa").value(0, 0);
  k = std::max(k, 1e-3);
}

Vector classify_logits(const ClassifierHead& head, const Vector& x) {
  return head.logits(x.transpose()).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Expert router

void RouterShape::validate() const {
  if (dim < 2 || experts < 1 || hidden < 1) throw ConfigError("router dimensions must be positive");
  if (top_k < 1 || top_k > experts) throw ConfigError("router top_k must lie in [1, experts]");
}

ExpertRouter::ExpertRouter(const RouterShape& shape, const MetricConfig& metric, Rng& rng)
    : shape_(shape), metric_(metric) {
  shape_.validate();
  metric_.validate();
  params_.add("router.centers", unit_rows(shape.experts, shape.dim, rng), false);
  for (int m = 0; m < shape.experts; ++m) {
    add_mlp(params_, "router.e" + std::to_string(m) + ".", shape.dim, shape.hidden, shape.dim, rng);
  }
}

ExpertRouter::ExpertRouter(const RouterShape& shape, const MetricConfig& metric, ad::ParameterSet params)
    : shape_(shape), metric_(metric), params_(std::move(params)) {
  shape_.validate();
  const auto& c = params_.at("router.centers").value;
  if (c.rows() != shape.experts || c.cols() != shape.dim) throw ShapeError("router centers have the wrong shape");
  for (int m = 0; m < shape.experts; ++m) {
    require_mlp(params_, "router.e" + std::to_string(m) + ".", shape.dim, shape.hidden, shape.dim);
  }
}

Matrix ExpertRouter::routing_weights(const Matrix& x) const {
  if (x.cols() != shape_.dim) throw ShapeError("router input dimension mismatch");
  ad::Tape tape;
  ad::Var logits = ad::thp_logits(tape.constant(x), tape.constant(params_.at("router.centers").value),
                                  tape.constant(Matrix::Constant(1, 1, metric_.kappa)), metric_.epsilon);
  return ad::topk_renormalize(ad::softmax_rows(logits), shape_.top_k).value();
}

Matrix ExpertRouter::expert_output(int m, const Matrix& x) const {
  if (m < 0 || m >= shape_.experts) throw PreconditionError("expert index out of range");
  return mlp_value(params_, "router.e" + std::to_string(m) + ".", x);
}

Matrix ExpertRouter::forward(const Matrix& x) const {
  const Matrix w = routing_weights(x);
  Matrix out = Matrix::Zero(x.rows(), shape_.dim);
  for (int m = 0; m < shape_.experts; ++m) {
    if (w.col(m).isZero(0.0)) continue;
    out += w.col(m).asDiagonal() * expert_output(m, x);
  }
  return out;
}

ad::Var ExpertRouter::forward(ad::Tape& tape, const ad::Var& x) {
  if (x.cols() != shape_.dim) throw ShapeError("router input dimension mismatch");
  ad::Var logits = ad::thp_logits(x, tape.parameter(params_.at("router.centers")),
                                  tape.constant(Matrix::Constant(1, 1, metric_.kappa)), metric_.epsilon);
  ad::Var w = ad::topk_renormalize(ad::softmax_rows(logits), shape_.top_k);
  ad::Var out;
  for (int m = 0; m < shape_.experts; ++m) {
    ad::Var contrib = ad::row_scale(mlp_var(tape, params_, "router.e" + std::to_string(m) + ".", x), ad::column(w, m));
    out = m == 0 ? contrib : ad::add(out, contrib);
  }
  return out;
}

void ExpertRouter::renormalize() { normalize_rows(params_.at("router.centers").value); }

Vector moe_forward(const ExpertRouter& router, const Vector& x) {
  return router.forward(x.transpose()).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Optimisation

double OptimConfig::lr_at(std::uint64_t step) const {
  if (warmup_steps > 0 && step < warmup_steps) {
    return lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  if (schedule == LrSchedule::constant || total_steps == 0) return lr;
  const double span = static_cast<double>(std::max<std::uint64_t>(1, total_steps - std::min(total_steps, warmup_steps)));
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  const double floor = lr * min_lr_ratio;
  return floor + 0.5 * (lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

void OptimConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("min_lr_ratio must lie in [0, 1]");
}

void AdamW::step(ad::ParameterSet& params, const OptimConfig& cfg, double lr) {
  for (auto& p : params) {
    if (p.frozen) continue;
    auto& mo = moments_[p.name];
    if (mo.m.rows() != p.value.rows() || mo.m.cols() != p.value.cols()) {
      mo.m = Matrix::Zero(p.value.rows(), p.value.cols());
      mo.v = Matrix::Zero(p.value.rows(), p.value.cols());
      mo.t = 0;
    }
    ++mo.t;
    mo.m = cfg.beta1 * mo.m + (1.0 - cfg.beta1) * p.grad;
    mo.v = cfg.beta2 * mo.v + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    if (lr == 0.0) continue;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(mo.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(mo.t));
    const Matrix update = (mo.m / c1).array() / ((mo.v / c2).array().sqrt() + cfg.eps);
    if (p.decay && cfg.weight_decay > 0.0) p.value -= lr * cfg.weight_decay * p.value;
    p.value -= lr * update;
  }
}

std::vector<ad::ParameterSet*> Model::parameter_sets() {
  std::vector<ad::ParameterSet*> out{&encoder.params()};
  if (router) out.push_back(&router->params());
  if (head) out.push_back(&head->params());
  return out;
}

std::vector<const ad::ParameterSet*> Model::parameter_sets() const {
  std::vector<const ad::ParameterSet*> out{&encoder.params()};
  if (router) out.push_back(&router->params());
  if (head) out.push_back(&head->params());
  return out;
}

double train_step(TrainState& state, const Objective& objective, const OptimConfig& cfg) {
  auto sets = state.model.parameter_sets();
  for (auto* s : sets) s->zero_grad();
  ad::Tape tape;
  ad::Var loss = objective(tape, state.model);
  const double value = loss.scalar();
  if (!std::isfinite(value)) throw NumericalError("non-finite loss; step aborted");
  tape.backward(loss);
  for (auto* s : sets) {
    for (const auto& p : *s) {
      if (!p.frozen && !p.grad.allFinite()) throw NumericalError("non-finite gradient for '" + p.name + "'");
    }
  }
  const double lr = cfg.lr_at(state.step);
  for (auto* s : sets) state.optimizer.step(*s, cfg, lr);
  state.model.encoder.clamp_temperature();
  if (state.model.head) state.model.head->renormalize();
  if (state.model.router) state.model.router->renormalize();
  ++state.step;
  return value;
}

// ---------------------------------------------------------------------------
// Data and objectives

PairedData PairedData::subset(const std::vector<Eigen::Index>& rows) const {
  PairedData out;
  out.raw_a.resize(static_cast<Eigen::Index>(rows.size()), raw_a.cols());
  out.raw_b.resize(static_cast<Eigen::Index>(rows.size()), raw_b.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    out.raw_a.row(static_cast<Eigen::Index>(i)) = raw_a.row(r);
    out.raw_b.row(static_cast<Eigen::Index>(i)) = raw_b.row(r);
    out.labels.push_back(labels.empty() ? -1 : labels[static_cast<std::size_t>(r)]);
  }
  return out;
}

ad::Var pretrain_objective(ad::Tape& tape, Model& model, const TwoTowerEncoder& momentum, const PairedData& batch,
                           const AlignConfig& cfg) {
  const double inv_temp = 1.0 / model.encoder.temperature();
  const Matrix ma = momentum.embed(Modality::a, batch.raw_a);
  const Matrix mb = momentum.embed(Modality::b, batch.raw_b);
  const Matrix mlogits = inv_temp * similarity_logits(ma, mb, cfg.kind, cfg.metric);
  const Matrix t_i2t = soft_targets(mlogits, cfg.soft);
  const Matrix t_t2i = soft_targets(mlogits.transpose(), cfg.soft);

  ad::Var a = model.encoder.embed(tape, Modality::a, batch.raw_a);
  ad::Var b = model.encoder.embed(tape, Modality::b, batch.raw_b);
  ad::Var kappa = tape.constant(Matrix::Constant(1, 1, cfg.metric.kappa), "kappa");
  ad::Var tau = tape.parameter(model.encoder.params().at(TwoTowerEncoder::kTemperatureName));
  ad::Var logits = ad::scalar_mul(similarity_logits(a, b, cfg.kind, kappa, cfg.metric.epsilon), ad::reciprocal(tau));
  return contrastive_loss(logits, t_i2t, t_t2i);
}

Matrix head_features(const Model& model, const PairedData& data) {
  Matrix x = model.encoder.embed(Modality::a, data.raw_a);
  if (model.fusion) {
    Matrix both(x.rows(), 2 * x.cols());
    both << x, model.encoder.embed(Modality::b, data.raw_b);
    x = std::move(both);
  }
  return x;
}

ad::Var head_features(ad::Tape& tape, Model& model, const PairedData& data) {
  // Encoder towers are frozen during fine-tuning, so their output enters the
  // tape as a constant.
  ad::Var x = tape.constant(head_features(static_cast<const Model&>(model), data), "features");
  if (model.router) x = model.router->forward(tape, x);
  return x;
}

namespace {

Matrix smoothed_targets(const std::vector<int>& labels, int classes, double smoothing) {
  Matrix t = Matrix::Constant(static_cast<Eigen::Index>(labels.size()), classes, smoothing / classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= classes) throw PreconditionError("label out of range for the classifier");
    t(static_cast<Eigen::Index>(i), y) += 1.0 - smoothing;
  }
  return t;
}

std::vector<Eigen::Index> shuffled(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.below(i)]);
  }
  return idx;
}

std::vector<std::vector<Eigen::Index>> make_batches(Eigen::Index n, int batch_size, Rng& rng) {
  const auto order = shuffled(n, rng);
  std::vector<std::vector<Eigen::Index>> out;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    if (end - begin < 2 && !out.empty()) {
      out.back().insert(out.back().end(), order.begin() + static_cast<std::ptrdiff_t>(begin), order.end());
      break;
    }
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::uint64_t batches_per_epoch(Eigen::Index n, int batch_size) {
  const auto b = static_cast<std::uint64_t>(batch_size);
  const auto full = static_cast<std::uint64_t>(n) / b;
  const auto rem = static_cast<std::uint64_t>(n) % b;
  return full + ((rem >= 2 || full == 0) && rem > 0 ? 1 : 0);
}

}  // namespace

ad::Var finetune_objective(ad::Tape& tape, Model& model, const PairedData& batch, double label_smoothing) {
  if (!model.head) throw PreconditionError("fine-tuning requires a classifier head");
  ad::Var x = head_features(tape, model, batch);
  ad::Var logits = model.head->logits(tape, x);
  return ad::cross_entropy_rows(logits, smoothed_targets(batch.labels, model.head->shape().classes, label_smoothing));
}

// ---------------------------------------------------------------------------
// Training loops

void PretrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  optim.validate();
  align.validate();
}

double diagonal_similarity(const TwoTowerEncoder& encoder, const PairedData& data, const MetricConfig& metric) {
  const Matrix a = encoder.embed(Modality::a, data.raw_a);
  const Matrix b = encoder.embed(Modality::b, data.raw_b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) total += thp_metric_from_dot(a.row(i).dot(b.row(i)), metric);
  return a.rows() > 0 ? total / static_cast<double>(a.rows()) : 0.0;
}

PretrainResult fit_pretrain(const PretrainConfig& cfg, const EncoderShape& shape, const PairedData& data) {
  Rng rng(cfg.seed);
  Rng init = rng.derive(1);
  TwoTowerEncoder encoder(shape, init);
  encoder.set_temperature(cfg.align.temperature, cfg.align.learn_temperature);
  return fit_pretrain(cfg, std::move(encoder), data);
}

PretrainResult fit_pretrain(const PretrainConfig& cfg, TwoTowerEncoder encoder, const PairedData& data) {
  cfg.validate();
  if (data.size() < 2 && cfg.epochs > 0) throw PreconditionError("pre-training requires at least two pairs");
  encoder.set_temperature(encoder.temperature(), cfg.align.learn_temperature);
  TwoTowerEncoder momentum = encoder;
  TrainState state{Model{std::move(encoder), std::nullopt, std::nullopt}, AdamW{}, 0, Rng(cfg.seed).derive(2)};
  OptimConfig optim = cfg.optim;
  if (optim.total_steps == 0) optim.total_steps = batches_per_epoch(data.size(), cfg.batch_size) * static_cast<std::uint64_t>(cfg.epochs);

  PretrainResult result{state.model.encoder, momentum, {}, {}, {}};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    int count = 0;
    for (const auto& rows : make_batches(data.size(), cfg.batch_size, state.rng)) {
      const PairedData batch = data.subset(rows);
      const double lr = optim.lr_at(state.step);
      const double loss = train_step(
          state, [&](ad::Tape& tape, Model& model) { return pretrain_objective(tape, model, momentum, batch, cfg.align); },
          optim);
      ema_update(state.model.encoder.params(), momentum.params(), cfg.align.soft.momentum);
      result.history.push_back(HistoryRow{state.step, epoch, loss, lr});
      loss_sum += loss;
      ++count;
    }
    result.epoch_loss.push_back(loss_sum / std::max(1, count));
    result.epoch_diag_similarity.push_back(diagonal_similarity(state.model.encoder, data, cfg.align.metric));
  }
  result.encoder = std::move(state.model.encoder);
  result.momentum = std::move(momentum);
  return result;
}

void FinetuneConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (classes < 2) throw ConfigError("fine-tuning requires at least two classes");
  optim.validate();
  metric.validate();
  if (use_router) router.validate();
}

FinetuneResult fit_finetune(const FinetuneConfig& cfg, const TwoTowerEncoder& encoder, const PairedData& data) {
  cfg.validate();
  Rng rng(cfg.seed);
  Rng init = rng.derive(1);
  const int embed = encoder.shape().embed_dim;
  Model model{encoder, std::nullopt, std::nullopt, cfg.fusion};
  model.encoder.params().set_frozen("tower_", true);
  model.encoder.params().set_frozen("align.", true);
  const int feature_dim = cfg.fusion ? 2 * embed : embed;
  int head_in = feature_dim;
  if (cfg.use_router) {
    RouterShape rs = cfg.router;
    rs.dim = feature_dim;
    model.router.emplace(rs, cfg.metric, init);
  }
  model.head.emplace(HeadShape{head_in, embed, cfg.classes}, cfg.metric, cfg.trainable_kappa, init);

  TrainState state{std::move(model), AdamW{}, 0, rng.derive(2)};
  OptimConfig optim = cfg.optim;
  if (optim.total_steps == 0) {
    optim.total_steps = batches_per_epoch(data.size(), cfg.batch_size) * static_cast<std::uint64_t>(cfg.epochs);
  }
  FinetuneResult result{state.model, {}};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& rows : make_batches(data.size(), cfg.batch_size, state.rng)) {
      const PairedData batch = data.subset(rows);
      const double lr = optim.lr_at(state.step);
      const double loss = train_step(
          state,
          [&](ad::Tape& tape, Model& m) { return finetune_objective(tape, m, batch, cfg.label_smoothing); }, optim);
      result.history.push_back(HistoryRow{state.step, epoch, loss, lr});
    }
  }
  result.model = std::move(state.model);
  return result;
}

std::vector<int> predict(const Model& model, const PairedData& data) {
  if (!model.head) throw PreconditionError("prediction requires a classifier head");
  Matrix x = head_features(model, data);
  if (model.router) x = model.router->forward(x);
  const Matrix logits = model.head->logits(x);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace driftsphere
