#include "driftsphere/drift.hpp"

#include "driftsphere/datagen.hpp"
#include "driftsphere/errors.hpp"
#include "driftsphere/metric.hpp"
#include "driftsphere/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace driftsphere {

DriftWindow::DriftWindow(int size) : capacity_(size) {
  if (size < 1) throw PreconditionError("drift window size must be >= 1");
}

void DriftWindow::push(ModalSample s) {
  if (last_t_ && s.t <= *last_t_) {
    throw PreconditionError("non-monotone timestamp " + std::to_string(s.t) + " after " + std::to_string(*last_t_));
  }
  last_t_ = s.t;
  buffer_.push_back(std::move(s));
  if (size() > capacity_) buffer_.pop_front();
}

void window_push(DriftWindow& w, ModalSample s) { w.push(std::move(s)); }

const char* to_string(DriftKind k) {
  switch (k) {
    case DriftKind::none: return "none";
    case DriftKind::gradual: return "gradual";
    case DriftKind::sudden: return "sudden";
  }
  return "none";
}

nlohmann::ordered_json report_to_json(const DriftReport& r) {
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& c : r.per_class) {
    per.push_back({{"label", c.label}, {"count", c.count}, {"rotation_deg", c.rotation_deg}});
  }
  nlohmann::ordered_json j{{"t", r.detected_at},
                           {"window_start", r.window_start},
                           {"kind", to_string(r.kind)},
                           {"severity", r.severity},
                           {"ood_fraction", r.ood_fraction},
                           {"max_rotation_deg", r.max_rotation_deg},
                           {"per_class", per}};
  return j;
}

Matrix NormalizeMap::features(int modality, const Matrix& raw) const {
  if (modality < 0 || modality >= modalities_) throw PreconditionError("modality index out of range");
  Matrix out = raw;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateError("cannot normalize a zero or non-finite raw vector");
    out.row(i) /= n;
  }
  return out;
}

Matrix EncoderMap::features(int modality, const Matrix& raw) const {
  if (modality == 0) return encoder_.embed(Modality::a, raw);
  if (modality == 1) return encoder_.embed(Modality::b, raw);
  throw PreconditionError("encoder features exist for modalities 0 and 1 only");
}

Matrix modality_matrix(const std::vector<const ModalSample*>& samples, int modality) {
  if (samples.empty()) return Matrix(0, 0);
  const auto j = static_cast<std::size_t>(modality);
  const Eigen::Index dim = samples.front()->modalities.at(j).size();
  Matrix m(static_cast<Eigen::Index>(samples.size()), dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& v = samples[i]->modalities.at(j);
    if (v.size() != dim) throw ShapeError("modality dimension changes between samples");
    m.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  return m;
}

namespace {

std::vector<const ModalSample*> pointers(const Dataset& data) {
  std::vector<const ModalSample*> out;
  for (const auto& s : data) out.push_back(&s);
  return out;
}

std::vector<const ModalSample*> pointers(const DriftWindow& w) {
  std::vector<const ModalSample*> out;
  for (const auto& s : w.samples()) out.push_back(&s);
  return out;
}

std::vector<Matrix> window_features(const std::vector<const ModalSample*>& samples, const FeatureMap& map) {
  std::vector<Matrix> out;
  for (int j = 0; j < map.modalities(); ++j) out.push_back(map.features(j, modality_matrix(samples, j)));
  return out;
}

// Rows of each labeled class.
std::map<int, std::vector<Eigen::Index>> rows_by_class(const std::vector<const ModalSample*>& samples, int classes) {
  std::map<int, std::vector<Eigen::Index>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& y = samples[i]->label;
    if (y && *y >= 0 && *y < classes) out[*y].push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

}  // namespace

Reference build_reference(const FeatureMap& map, const Dataset& data, int classes, int k, const MetricConfig& metric) {
  if (data.empty()) throw PreconditionError("reference data must be non-empty");
  if (classes < 1) throw PreconditionError("reference requires at least one class");
  const auto samples = pointers(data);
  const auto feats = window_features(samples, map);
  const auto by_class = rows_by_class(samples, classes);
  Reference ref;
  ref.classes = classes;
  for (int j = 0; j < map.modalities(); ++j) {
    KnnIndex index(feats[static_cast<std::size_t>(j)], k, metric);
    ref.thresholds.push_back(tpr95_threshold(index.leave_one_out_scores()));
    ref.indexes.push_back(std::move(index));
    std::vector<std::optional<UnitVector>> centers(static_cast<std::size_t>(classes));
    for (const auto& [c, rows] : by_class) {
      centers[static_cast<std::size_t>(c)] = mean_direction(Matrix(feats[static_cast<std::size_t>(j)](rows, Eigen::all))).direction;
    }
    ref.centers.push_back(std::move(centers));
  }
  return ref;
}

DriftReport detect_sudden(const DriftWindow& w, const FeatureMap& map, const Reference& ref, double rho) {
  if (w.empty()) throw PreconditionError("detect_sudden requires a non-empty window");
  if (!(rho > 0.0 && rho <= 1.0)) throw PreconditionError("rho must lie in (0, 1]");
  if (static_cast<int>(ref.indexes.size()) != map.modalities()) throw PreconditionError("reference and feature map modality counts differ");
  const auto samples = pointers(w);
  std::vector<bool> flagged(samples.size(), true);
  for (int j = 0; j < map.modalities(); ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const auto scores = ref.indexes[ju].scores(map.features(j, modality_matrix(samples, j)));
    for (std::size_t i = 0; i < scores.size(); ++i) flagged[i] = flagged[i] && scores[i] > ref.thresholds[ju];
  }
  const double fraction =
      static_cast<double>(std::count(flagged.begin(), flagged.end(), true)) / static_cast<double>(samples.size());
  DriftReport r;
  r.kind = fraction > rho ? DriftKind::sudden : DriftKind::none;
  r.severity = fraction;
  r.ood_fraction = fraction;
  r.detected_at = samples.back()->t;
  r.window_start = samples.front()->t;
  return r;
}

DriftReport detect_gradual(const DriftWindow& w, const FeatureMap& map, const Reference& ref, double theta_g,
                           int min_class_samples) {
  if (w.empty()) throw PreconditionError("detect_gradual requires a non-empty window");
  if (static_cast<int>(ref.centers.size()) != map.modalities()) throw PreconditionError("reference and feature map modality counts differ");
  const auto samples = pointers(w);
  const auto by_class = rows_by_class(samples, ref.classes);
  bool overlap = false;
  for (const auto& [c, rows] : by_class) overlap = overlap || ref.centers.front()[static_cast<std::size_t>(c)].has_value();
  if (!overlap) throw PreconditionError("window has no labeled samples of a reference class");

  const auto feats = window_features(samples, map);
  DriftReport r;
  r.detected_at = samples.back()->t;
  r.window_start = samples.front()->t;
  for (const auto& [c, rows] : by_class) {
    if (static_cast<int>(rows.size()) < std::max(1, min_class_samples)) continue;
    double rot = 0.0;
    bool any = false;
    for (int j = 0; j < map.modalities(); ++j) {
      const auto& center = ref.centers[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
      if (!center) continue;
      const auto mean = mean_direction(Matrix(feats[static_cast<std::size_t>(j)](rows, Eigen::all)));
      rot = std::max(rot, angle_deg(mean.direction, *center));
      any = true;
    }
    if (!any) continue;
    r.per_class.push_back(ClassRotation{c, static_cast<int>(rows.size()), rot});
    r.max_rotation_deg = std::max(r.max_rotation_deg, rot);
  }
  r.severity = r.max_rotation_deg;
  r.kind = r.max_rotation_deg > theta_g ? DriftKind::gradual : DriftKind::none;
  return r;
}

void update_centers(Reference& ref, const DriftWindow& w, const FeatureMap& map, int min_class_samples) {
  if (w.empty()) return;
  const auto samples = pointers(w);
  const auto feats = window_features(samples, map);
  for (const auto& [c, rows] : rows_by_class(samples, ref.classes)) {
    if (static_cast<int>(rows.size()) < std::max(1, min_class_samples)) continue;
    for (int j = 0; j < map.modalities(); ++j) {
      ref.centers[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] =
          mean_direction(Matrix(feats[static_cast<std::size_t>(j)](rows, Eigen::all))).direction;
    }
  }
}

void adapt(TrainState& state, const DriftWindow& w, const AdaptConfig& cfg) {
  if (w.empty()) throw PreconditionError("adapt requires a non-empty window");
  if (cfg.steps <= 0) return;
  Dataset all(w.samples().begin(), w.samples().end());
  Dataset labeled;
  for (const auto& s : all) {
    if (s.label) labeled.push_back(s);
  }
  const PairedData pairs = to_paired(all);
  const PairedData lab = to_paired(labeled);
  const TwoTowerEncoder momentum = state.model.encoder;
  const bool use_head = state.model.head && lab.size() > 0;
  const bool use_pairs = pairs.size() >= 2;
  if (!use_head && !use_pairs) return;
  for (int i = 0; i < cfg.steps; ++i) {
    train_step(
        state,
        [&](ad::Tape& tape, Model& model) {
          std::optional<ad::Var> loss;
          if (use_head) loss = finetune_objective(tape, model, lab, cfg.label_smoothing);
          if (use_pairs) {
            ad::Var c = pretrain_objective(tape, model, momentum, pairs, cfg.align);
            loss = loss ? ad::add(*loss, c) : c;
          }
          return *loss;
        },
        cfg.optim);
  }
}

void StreamRunConfig::validate() const {
  if (window < 2) throw ConfigError("drift window must be >= 2");
  if (cadence < 0) throw ConfigError("cadence must be >= 0");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in (0, 1]");
  if (!(theta_g >= 0.0)) throw ConfigError("theta_g must be >= 0");
  if (min_class_samples < 1) throw ConfigError("min_class_samples must be >= 1");
}

StreamRunResult run_stream(const Dataset& stream, const FeatureMap& map, Reference ref, const StreamRunConfig& cfg,
                           const Adapter& adapter) {
  cfg.validate();
  const int cadence = cfg.cadence > 0 ? cfg.cadence : std::max(1, cfg.window / 2);
  DriftWindow w(cfg.window);
  StreamRunResult out;
  int since = 0;
  for (const auto& s : stream) {
    w.push(s);
    if (!w.full()) continue;
    if (since > 0 && since < cadence) {
      ++since;
      continue;
    }
    since = 1;
    DriftReport r = detect_sudden(w, map, ref, cfg.rho);
    const bool labeled = std::any_of(w.samples().begin(), w.samples().end(), [&](const ModalSample& x) {
      return x.label && *x.label >= 0 && *x.label < ref.classes && ref.centers.front()[static_cast<std::size_t>(*x.label)];
    });
    if (labeled) {
      const DriftReport g = detect_gradual(w, map, ref, cfg.theta_g, cfg.min_class_samples);
      r.per_class = g.per_class;
      r.max_rotation_deg = g.max_rotation_deg;
      if (r.kind == DriftKind::none && g.kind == DriftKind::gradual) {
        r.kind = DriftKind::gradual;
        r.severity = g.severity;
      }
    }
    if (r.kind != DriftKind::none && adapter) adapter(w, r);
    if (r.kind == DriftKind::gradual && cfg.reestimate_on_gradual) update_centers(ref, w, map, cfg.min_class_samples);
    out.reports.push_back(std::move(r));
  }
  return out;
}

void write_reports(const std::vector<DriftReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("cannot open '" + path + "' for writing");
  for (const auto& r : reports) out << report_to_json(r).dump() << '\n';
}

}  // namespace driftsphere
