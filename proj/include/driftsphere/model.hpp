#pragma once

// Desk-scale two-tower encoder, Thp prototype classifier, expert router and
// the training loops that connect them.

#include "driftsphere/align.hpp"
#include "driftsphere/autodiff.hpp"
#include "driftsphere/metric.hpp"
#include "driftsphere/numerics.hpp"
#include "driftsphere/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace driftsphere {

// Which tower a raw input goes through.
enum class Modality { a = 0, b = 1 };

struct EncoderShape {
  int raw_dim_a = 32;
  int raw_dim_b = 32;
  int hidden = 64;
  int embed_dim = 16;

  void validate() const;
};

// Two independent affine → tanh → affine maps followed by L2 projection onto
// S^{embed_dim - 1}. Parameters: tower_{a,b}.{W1,b1,W2,b2} and the contrastive
// temperature align.temperature (1 x 1).
class TwoTowerEncoder {
 public:
  static constexpr const char* kTemperatureName = "align.temperature";
  static constexpr double kMinTemperature = 1e-3;
  static constexpr double kMaxTemperature = 0.5;

  TwoTowerEncoder(const EncoderShape& shape, Rng& rng);
  TwoTowerEncoder(const EncoderShape& shape, ad::ParameterSet params);

  const EncoderShape& shape() const { return shape_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  // Value-only forward pass; every output row is unit-norm.
  Matrix embed(Modality m, const Matrix& raw) const;
  // Recorded forward pass.
  ad::Var embed(ad::Tape& tape, Modality m, const Matrix& raw);

  double temperature() const;
  void set_temperature(double tau, bool trainable);
  // Keeps a learned temperature inside [kMinTemperature, kMaxTemperature].
  void clamp_temperature();

 private:
  EncoderShape shape_;
  ad::ParameterSet params_;
};

struct EmbeddedPair {
  FeatureBatch a;
  FeatureBatch b;
};
EmbeddedPair forward_embed(const TwoTowerEncoder& encoder, const Matrix& raw_a, const Matrix& raw_b);

struct HeadShape {
  int input_dim = 16;  // embed_dim, or 2 * embed_dim in fusion mode
  int embed_dim = 16;
  int classes = 2;

  void validate() const;
};

// Affine + L2 projection followed by Thp logits against C unit prototypes.
// Parameters: head.W, head.b, head.prototypes (C x embed_dim), head.kappa.
class ClassifierHead {
 public:
  ClassifierHead(const HeadShape& shape, const MetricConfig& metric, bool trainable_kappa, Rng& rng);
  ClassifierHead(const HeadShape& shape, const MetricConfig& metric, ad::ParameterSet params);

  const HeadShape& shape() const { return shape_; }
  double epsilon() const { return epsilon_; }
  double kappa() const;
  bool trainable_kappa() const;
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  Matrix logits(const Matrix& x) const;  // N x C
  ad::Var logits(ad::Tape& tape, const ad::Var& x);

  // Rescales prototype rows back onto the sphere.
  void renormalize();

 private:
  HeadShape shape_;
  double epsilon_;
  ad::ParameterSet params_;
};

// Logits of a single feature vector.
Vector classify_logits(const ClassifierHead& head, const Vector& x);

struct RouterShape {
  int dim = 16;
  int experts = 4;
  int hidden = 32;
  int top_k = 2;

  void validate() const;
};

// Thp-gated mixture of feed-forward experts. Parameters: router.centers
// (M x dim) and router.e{m}.{W1,b1,W2,b2}.
class ExpertRouter {
 public:
  ExpertRouter(const RouterShape& shape, const MetricConfig& metric, Rng& rng);
  ExpertRouter(const RouterShape& shape, const MetricConfig& metric, ad::ParameterSet params);

  const RouterShape& shape() const { return shape_; }
  const MetricConfig& metric() const { return metric_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  // N x M routing weights: softmax of Thp metrics, top-k kept, renormalized.
  Matrix routing_weights(const Matrix& x) const;
  Matrix forward(const Matrix& x) const;
  ad::Var forward(ad::Tape& tape, const ad::Var& x);
  // Output of a single expert (value-only).
  Matrix expert_output(int m, const Matrix& x) const;

  void renormalize();

 private:
  RouterShape shape_;
  MetricConfig metric_;
  ad::ParameterSet params_;
};

Vector moe_forward(const ExpertRouter& router, const Vector& x);

// --- optimisation -------------------------------------------------------------

enum class LrSchedule { constant, cosine };

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.05;
  LrSchedule schedule = LrSchedule::cosine;
  std::uint64_t warmup_steps = 0;
  std::uint64_t total_steps = 0;  // cosine horizon; 0 disables decay
  double min_lr_ratio = 0.01;

  double lr_at(std::uint64_t step) const;
  void validate() const;
};

// Decoupled-weight-decay Adam. Moments are keyed by parameter name.
class AdamW {
 public:
  struct Moments {
    Matrix m;
    Matrix v;
    std::uint64_t t = 0;
  };
  void step(ad::ParameterSet& params, const OptimConfig& cfg, double lr);
  const std::unordered_map<std::string, Moments>& moments() const { return moments_; }

 private:
  std::unordered_map<std::string, Moments> moments_;
};

// Everything a training run mutates.
struct Model {
  TwoTowerEncoder encoder;
  std::optional<ClassifierHead> head;
  std::optional<ExpertRouter> router;

  std::vector<ad::ParameterSet*> parameter_sets();
  std::vector<const ad::ParameterSet*> parameter_sets() const;
  // Head input for raw modality-a (and optionally b) inputs, recorded or not.
  bool fusion = false;
};

struct TrainState {
  Model model;
  AdamW optimizer;
  std::uint64_t step = 0;
  Rng rng;
};

using Objective = std::function<ad::Var(ad::Tape&, Model&)>;

// One optimizer step. Throws NumericalError (state unchanged) when the loss or
// any gradient is non-finite. Prototype rows are renormalized afterwards.
double train_step(TrainState& state, const Objective& objective, const OptimConfig& cfg);

// --- data views -----------------------------------------------------------------

// Paired raw inputs with optional labels (-1 = unlabeled).
struct PairedData {
  Matrix raw_a;
  Matrix raw_b;
  std::vector<int> labels;

  Eigen::Index size() const { return raw_a.rows(); }
  PairedData subset(const std::vector<Eigen::Index>& rows) const;
};

// --- objectives -------------------------------------------------------------------

// Contrastive objective on one batch; the momentum encoder supplies targets.
ad::Var pretrain_objective(ad::Tape& tape, Model& model, const TwoTowerEncoder& momentum, const PairedData& batch,
                           const AlignConfig& cfg);

// Head (and router) input from the frozen encoder.
Matrix head_features(const Model& model, const PairedData& data);
ad::Var head_features(ad::Tape& tape, Model& model, const PairedData& data);

// Label-smoothed cross-entropy over the head's Thp logits.
ad::Var finetune_objective(ad::Tape& tape, Model& model, const PairedData& batch, double label_smoothing);

// --- training loops ---------------------------------------------------------------

struct HistoryRow {
  std::uint64_t step;
  int epoch;
  double loss;
  double lr;
};

struct PretrainConfig {
  int epochs = 30;
  int batch_size = 64;
  OptimConfig optim;
  AlignConfig align;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainResult {
  TwoTowerEncoder encoder;
  TwoTowerEncoder momentum;
  std::vector<HistoryRow> history;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_diag_similarity;  // mean diagonal Thp similarity
};

PretrainResult fit_pretrain(const PretrainConfig& cfg, const EncoderShape& shape, const PairedData& data);
// Continue from an existing encoder.
PretrainResult fit_pretrain(const PretrainConfig& cfg, TwoTowerEncoder encoder, const PairedData& data);

struct FinetuneConfig {
  int epochs = 30;
  int batch_size = 128;
  OptimConfig optim;
  MetricConfig metric;
  bool trainable_kappa = false;
  double label_smoothing = 0.1;
  bool fusion = false;
  bool use_router = false;
  RouterShape router;
  int classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FinetuneResult {
  Model model;  // encoder frozen, head trained
  std::vector<HistoryRow> history;
};

FinetuneResult fit_finetune(const FinetuneConfig& cfg, const TwoTowerEncoder& encoder, const PairedData& data);

// Predicted class per row.
std::vector<int> predict(const Model& model, const PairedData& data);

// Mean diagonal similarity of the given logit kind between the two towers.
double diagonal_similarity(const TwoTowerEncoder& encoder, const PairedData& data, const MetricConfig& metric);

}  // namespace driftsphere
