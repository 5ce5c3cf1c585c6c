#pragma once

// Sliding-window multi-modal concept-drift detection and adaptation.

#include "driftsphere/model.hpp"
#include "driftsphere/ood.hpp"
#include "driftsphere/stream.hpp"

#include "json.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace driftsphere {

class DriftWindow {
 public:
  explicit DriftWindow(int size);

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(buffer_.size()); }
  bool empty() const { return buffer_.empty(); }
  bool full() const { return size() == capacity_; }
  const std::deque<ModalSample>& samples() const { return buffer_; }

  // Appends, evicting the oldest sample when over capacity. Throws
  // PreconditionError unless s.t exceeds the last buffered timestamp.
  void push(ModalSample s);

 private:
  int capacity_;
  std::deque<ModalSample> buffer_;
  std::optional<std::int64_t> last_t_;
};

void window_push(DriftWindow& w, ModalSample s);

enum class DriftKind { none, gradual, sudden };
const char* to_string(DriftKind k);

struct ClassRotation {
  int label;
  int count;
  double rotation_deg;  // max over modalities
};

struct DriftReport {
  DriftKind kind = DriftKind::none;
  double severity = 0.0;  // degrees for gradual, OOD fraction for sudden
  std::int64_t detected_at = 0;
  std::int64_t window_start = 0;
  double ood_fraction = 0.0;
  double max_rotation_deg = 0.0;
  std::vector<ClassRotation> per_class;
};

nlohmann::ordered_json report_to_json(const DriftReport& r);

// Unit features for each modality of raw stream vectors.
class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual int modalities() const = 0;
  virtual Matrix features(int modality, const Matrix& raw) const = 0;
};

// L2 normalization of the raw vectors; works for any modality count.
class NormalizeMap : public FeatureMap {
 public:
  explicit NormalizeMap(int modalities) : modalities_(modalities) {}
  int modalities() const override { return modalities_; }
  Matrix features(int modality, const Matrix& raw) const override;

 private:
  int modalities_;
};

// Two-tower encoder features; modality 0 → tower a, 1 → tower b. Holds a
// reference, so adaptation of the encoder is visible immediately.
class EncoderMap : public FeatureMap {
 public:
  explicit EncoderMap(const TwoTowerEncoder& encoder) : encoder_(encoder) {}
  int modalities() const override { return 2; }
  Matrix features(int modality, const Matrix& raw) const override;

 private:
  const TwoTowerEncoder& encoder_;
};

// Raw vectors of one modality for the given samples, one per row.
Matrix modality_matrix(const std::vector<const ModalSample*>& samples, int modality);

// Pre-drift statistics: per-modality KNN bank with its leave-one-out 95%-TPR
// threshold, and per-class feature centers.
struct Reference {
  std::vector<KnnIndex> indexes;
  std::vector<double> thresholds;
  std::vector<std::vector<std::optional<UnitVector>>> centers;  // [modality][class]
  int classes = 0;
};

Reference build_reference(const FeatureMap& map, const Dataset& data, int classes, int k,
                          const MetricConfig& metric = {});

// Sudden: a sample counts as OOD when its score exceeds the threshold in every
// modality. kind=sudden iff the OOD fraction exceeds rho.
DriftReport detect_sudden(const DriftWindow& w, const FeatureMap& map, const Reference& ref, double rho = 0.5);

// Gradual: per labeled class with at least min_class_samples window samples,
// the angle between the window mean direction and the reference center.
// kind=gradual iff the largest such angle exceeds theta_g. Throws
// PreconditionError when no window label has a reference center.
DriftReport detect_gradual(const DriftWindow& w, const FeatureMap& map, const Reference& ref, double theta_g = 10.0,
                           int min_class_samples = 16);

// Re-estimates the centers of classes with at least min_class_samples window
// samples from the current feature map.
void update_centers(Reference& ref, const DriftWindow& w, const FeatureMap& map, int min_class_samples);

struct AdaptConfig {
  int steps = 20;
  OptimConfig optim;
  AlignConfig align;
  double label_smoothing = 0.1;
};

// `steps` optimizer steps on the window only: classifier loss for labeled
// samples when the model has a head, contrastive loss over all pairs when it
// has two modalities. Frozen parameters never change.
void adapt(TrainState& state, const DriftWindow& w, const AdaptConfig& cfg);

struct StreamRunConfig {
  int window = 512;
  int cadence = 0;  // samples between detections; 0 → window / 2
  double rho = 0.5;
  double theta_g = 10.0;
  int min_class_samples = 16;
  bool reestimate_on_gradual = true;

  void validate() const;
};

struct StreamRunResult {
  std::vector<DriftReport> reports;  // one per detection point
};

// Called after a drift report; may update the model behind the feature map.
using Adapter = std::function<void(const DriftWindow&, const DriftReport&)>;

// Detection starts once the window is full and repeats every cadence samples.
// A sudden report takes precedence over a gradual one at the same point. After
// a gradual report the adapter runs (when given) and the drifted class centers
// are re-estimated from the window.
StreamRunResult run_stream(const Dataset& stream, const FeatureMap& map, Reference ref, const StreamRunConfig& cfg,
                           const Adapter& adapter = {});

void write_reports(const std::vector<DriftReport>& reports, const std::string& path);

}  // namespace driftsphere
