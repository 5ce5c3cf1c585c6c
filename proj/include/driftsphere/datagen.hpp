#pragma once

// Synthetic long-tailed, multi-modal, open-world data.

#include "driftsphere/model.hpp"
#include "driftsphere/numerics.hpp"
#include "driftsphere/stream.hpp"

#include "json.hpp"

#include <cstdint>
#include <vector>

namespace driftsphere {

struct GenConfig {
  int classes = 20;
  int raw_dim = 32;
  double imbalance_ratio = 100.0;
  int n_max = 500;
  double noise = 0.05;
  int modalities = 2;
  double sep_angle_deg = 25.0;
  double ood_angle_deg = 30.0;
  int ood_classes = 10;
  int n_test_per_class = 50;
  int n_ood = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

// directions[j][c]: generating direction of class c in modality j.
struct GroundTruth {
  std::vector<std::vector<UnitVector>> directions;

  int modalities() const { return static_cast<int>(directions.size()); }
  int classes() const { return directions.empty() ? 0 : static_cast<int>(directions.front().size()); }
};

// n_c = max(1, round(n_max · IR^{-c/(C-1)})).
std::vector<int> longtail_counts(int classes, int n_max, double imbalance_ratio);

// Rejection-samples class directions with pairwise angle >= sep_angle_deg in
// every modality. Throws DegenerateError after 1e6 rejections.
GroundTruth gen_class_directions(const GenConfig& cfg, Rng& rng);

// Long-tailed ID samples (counts from longtail_counts).
Dataset gen_pairs(const GenConfig& cfg, const GroundTruth& gt, Rng& rng);
// Explicit per-class counts, e.g. a balanced held-out set.
Dataset gen_pairs(const GenConfig& cfg, const GroundTruth& gt, const std::vector<int>& counts, Rng& rng);

struct OodSet {
  GroundTruth directions;  // novel-concept generating directions
  Dataset samples;         // unlabeled
};

// Novel concepts whose generating direction is more than ood_angle_deg away
// from every ID class direction (per modality); samples spread evenly across
// cfg.ood_classes such concepts.
OodSet gen_ood(const GenConfig& cfg, const GroundTruth& gt, int count, Rng& rng);

// Many-shot (> 100 training samples), medium (20-100), few (< 20).
enum class ShotSplit { many, medium, few };
ShotSplit shot_split(int train_count);
const char* to_string(ShotSplit s);

nlohmann::json gen_config_to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const nlohmann::json& j);  // rejects unknown keys

// Manifest: format version, config, seed, counts and shot-split boundaries.
nlohmann::json make_manifest(const GenConfig& cfg);

struct GeneratedData {
  GroundTruth truth;
  Dataset train;
  Dataset test;
  OodSet ood;
};
// train, balanced test and OOD sets, each from its own seed-derived stream.
GeneratedData generate_all(const GenConfig& cfg);

// Two-modality samples as matrices; OOD (unlabeled) samples get label -1.
PairedData to_paired(const Dataset& data);
// Per-class counts of the labeled samples.
std::vector<int> class_counts(const Dataset& data, int classes);

// Rotates `u` towards the orthogonal unit `towards` by `deg` degrees.
UnitVector rotate_towards(const UnitVector& u, const UnitVector& towards, double deg);

// A stream from the ID generator with optional injected drift.
struct StreamConfig {
  int length = 4096;
  bool long_tailed = false;       // class frequencies ∝ longtail_counts, else uniform
  std::int64_t sudden_at = -1;    // from here on samples come from OOD concepts
  double sudden_fraction = 1.0;   // share of post-injection samples that are OOD
  int gradual_class = -1;
  std::int64_t gradual_start = 0;
  std::int64_t gradual_end = 0;   // rotation grows linearly to gradual_deg here
  double gradual_deg = 30.0;

  void validate() const;
};

// Rotation angle applied to the drifting class at timestamp t.
double gradual_angle_at(const StreamConfig& cfg, std::int64_t t);

Dataset gen_stream(const GenConfig& cfg, const GroundTruth& gt, const OodSet& ood, const StreamConfig& scfg, Rng& rng);

}  // namespace driftsphere
