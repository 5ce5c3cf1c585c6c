#include "driftsphere/eval.hpp"

#include "driftsphere/cluster.hpp"
#include "driftsphere/errors.hpp"
#include "driftsphere/metric.hpp"
#include "driftsphere/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <optional>
#include <sstream>

namespace driftsphere {

MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return MeanStd{mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

EmbeddedSet embed_set(const TwoTowerEncoder& encoder, const PairedData& data) {
  return EmbeddedSet{encoder.embed(Modality::a, data.raw_a), encoder.embed(Modality::b, data.raw_b), data.labels};
}

int ood_cluster_count(Eigen::Index n_ood) {
  return static_cast<int>(std::min<Eigen::Index>(100, n_ood / 10));
}

namespace {

std::optional<UnitVector> class_center(const Matrix& feats, const std::vector<int>& labels, int c) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == c) rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (rows.empty()) return std::nullopt;
  return mean_direction(Matrix(feats(rows, Eigen::all))).direction;
}

}  // namespace

AlignmentReport alignment_report(const EmbeddedSet& id, const EmbeddedSet& ood, int classes, std::uint64_t seed) {
  if (id.a.rows() != id.b.rows() || static_cast<std::size_t>(id.a.rows()) != id.labels.size()) {
    throw ShapeError("alignment report: feature and label counts differ");
  }
  AlignmentReport report;
  std::vector<UnitVector> ca, cb;
  for (int c = 0; c < classes; ++c) {
    auto a = class_center(id.a, id.labels, c);
    auto b = class_center(id.b, id.labels, c);
    if (!a || !b) {
      report.classes_missing.push_back(c);
      continue;
    }
    report.classes_used.push_back(c);
    ca.push_back(*a);
    cb.push_back(*b);
  }
  if (ca.empty()) throw PreconditionError("alignment report: no class present in held-out data");

  std::vector<double> intra, inter;
  for (std::size_t i = 0; i < ca.size(); ++i) {
    intra.push_back(angle_deg(ca[i], cb[i]));
    if (ca.size() < 2) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < cb.size(); ++j) {
      if (j != i) s += angle_deg(ca[i], cb[j]);
    }
    inter.push_back(s / static_cast<double>(cb.size() - 1));
  }
  report.intra_compactness_deg = mean_std(intra);
  report.inter_separability_deg = mean_std(inter);

  const int k = ood_cluster_count(ood.a.rows());
  report.ood_clusters = k;
  if (k >= 1) {
    Rng rng(seed);
    Rng ra = rng.derive(1), rb = rng.derive(2);
    const Matrix oa = spherical_kmeans(ood.a, k, 20, ra).centers;
    const Matrix ob = spherical_kmeans(ood.b, k, 20, rb).centers;
    std::vector<double> per_class;
    for (std::size_t i = 0; i < ca.size(); ++i) {
      double s = 0.0;
      for (Eigen::Index q = 0; q < k; ++q) {
        s += angle_deg(ca[i].vec(), Vector(oa.row(q).transpose()));
        s += angle_deg(cb[i].vec(), Vector(ob.row(q).transpose()));
      }
      per_class.push_back(s / (2.0 * k));
    }
    report.id_ood_separability_deg = mean_std(per_class);
  }
  return report;
}

OodEvaluation evaluate_ood(const TwoTowerEncoder& encoder, const PairedData& train, const PairedData& test_id,
                           const PairedData& ood, int k, const MetricConfig& metric) {
  const KnnIndex index(encoder.embed(Modality::a, train.raw_a), k, metric);
  OodEvaluation out;
  out.scores_id = index.scores(encoder.embed(Modality::a, test_id.raw_a));
  out.scores_ood = index.scores(encoder.embed(Modality::a, ood.raw_a));
  out.metrics = evaluate(out.scores_id, out.scores_ood);
  return out;
}

SplitAccuracy split_accuracy(const std::vector<int>& predicted, const std::vector<int>& labels,
                             const std::vector<int>& train_counts) {
  if (predicted.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  SplitAccuracy acc;
  int hit = 0, hit_many = 0, hit_medium = 0, hit_few = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= static_cast<int>(train_counts.size())) throw PreconditionError("label out of range");
    const bool ok = predicted[i] == y;
    hit += ok;
    switch (shot_split(train_counts[static_cast<std::size_t>(y)])) {
      case ShotSplit::many: ++acc.n_many; hit_many += ok; break;
      case ShotSplit::medium: ++acc.n_medium; hit_medium += ok; break;
      case ShotSplit::few: ++acc.n_few; hit_few += ok; break;
    }
  }
  auto ratio = [](int h, int n) { return n > 0 ? static_cast<double>(h) / n : 0.0; };
  acc.overall = ratio(hit, static_cast<int>(labels.size()));
  acc.many = ratio(hit_many, acc.n_many);
  acc.medium = ratio(hit_medium, acc.n_medium);
  acc.few = ratio(hit_few, acc.n_few);
  return acc;
}

std::vector<KappaCell> run_kappa_ablation(const FinetuneConfig& base, const TwoTowerEncoder& encoder,
                                          const PairedData& train, const PairedData& test,
                                          const std::vector<int>& train_counts, const std::vector<double>& kappas,
                                          double trainable_init) {
  std::vector<KappaCell> cells;
  for (double k : kappas) {
    std::ostringstream name;
    name << k;
    cells.push_back(KappaCell{name.str(), k, false, k, {}});
  }
  cells.push_back(KappaCell{"trainable", trainable_init, true, trainable_init, {}});
  std::vector<std::exception_ptr> errors(cells.size());
  const int n = static_cast<int>(cells.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      auto& cell = cells[static_cast<std::size_t>(i)];
      FinetuneConfig cfg = base;
      cfg.metric.kappa = cell.kappa_init;
      cfg.trainable_kappa = cell.trainable;
      const FinetuneResult r = fit_finetune(cfg, encoder, train);
      cell.final_kappa = r.model.head->kappa();
      cell.accuracy = split_accuracy(predict(r.model, test), test.labels, train_counts);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return cells;
}

int cells_strictly_better(const std::vector<KappaCell>& cells, std::size_t i) {
  const double a = cells.at(i).accuracy.overall;
  return static_cast<int>(std::count_if(cells.begin(), cells.end(), [&](const KappaCell& c) { return c.accuracy.overall > a; }));
}

}  // namespace driftsphere
