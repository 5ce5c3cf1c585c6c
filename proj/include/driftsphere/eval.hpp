#pragma once

// Angular alignment report and per-split accuracy.

#include "driftsphere/datagen.hpp"
#include "driftsphere/model.hpp"
#include "driftsphere/ood.hpp"
#include "driftsphere/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace driftsphere {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};
MeanStd mean_std(const std::vector<double>& xs);

struct AlignmentReport {
  MeanStd intra_compactness_deg;
  MeanStd inter_separability_deg;
  MeanStd id_ood_separability_deg;
  std::vector<int> classes_used;
  std::vector<int> classes_missing;  // absent from held-out data, excluded
  int ood_clusters = 0;
};

// Embedded held-out features of both modalities. `labels` index classes
// 0..classes-1 and are aligned with the rows of feat_a / feat_b.
struct EmbeddedSet {
  Matrix a;
  Matrix b;
  std::vector<int> labels;
};
EmbeddedSet embed_set(const TwoTowerEncoder& encoder, const PairedData& data);

// OOD centers: spherical k-means (20 iterations) into min(100, N_ood / 10)
// clusters per modality. ID-vs-OOD compares centers of the same modality.
AlignmentReport alignment_report(const EmbeddedSet& id, const EmbeddedSet& ood, int classes, std::uint64_t seed);

int ood_cluster_count(Eigen::Index n_ood);

struct OodEvaluation {
  DetectionMetrics metrics;
  std::vector<double> scores_id;
  std::vector<double> scores_ood;
};

// Bank = modality-a training features; queries = held-out ID and OOD.
OodEvaluation evaluate_ood(const TwoTowerEncoder& encoder, const PairedData& train, const PairedData& test_id,
                           const PairedData& ood, int k, const MetricConfig& metric);

struct SplitAccuracy {
  double overall = 0.0;
  double many = 0.0;
  double medium = 0.0;
  double few = 0.0;
  int n_many = 0;
  int n_medium = 0;
  int n_few = 0;
};

// Splits by each class's training count (many > 100, medium 20-100, few < 20).
// A split without test samples reports accuracy 0 with count 0.
SplitAccuracy split_accuracy(const std::vector<int>& predicted, const std::vector<int>& labels,
                             const std::vector<int>& train_counts);

struct KappaCell {
  std::string name;  // "4", "16", ..., "trainable"
  double kappa_init;
  bool trainable;
  double final_kappa;
  SplitAccuracy accuracy;
};

// Fine-tunes one head per cell from the same frozen encoder and seed: one
// cell per fixed kappa, then a trainable cell starting at trainable_init.
// Cells run in parallel; results do not depend on the thread count.
std::vector<KappaCell> run_kappa_ablation(const FinetuneConfig& base, const TwoTowerEncoder& encoder,
                                          const PairedData& train, const PairedData& test,
                                          const std::vector<int>& train_counts, const std::vector<double>& kappas,
                                          double trainable_init);

// Number of cells with strictly higher overall accuracy than cells[i].
int cells_strictly_better(const std::vector<KappaCell>& cells, std::size_t i);

}  // namespace driftsphere
