#include "driftsphere/datagen.hpp"

#include "driftsphere/errors.hpp"
#include "driftsphere/metric.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace driftsphere {

// ---------------------------------------------------------------------------
// Config

void GenConfig::validate() const {
  if (classes < 2) throw ConfigError("gen.classes must be >= 2");
  if (raw_dim < 4) throw ConfigError("gen.raw_dim must be >= 4");
  if (!(imbalance_ratio >= 1.0) || !std::isfinite(imbalance_ratio)) throw ConfigError("gen.imbalance_ratio must be >= 1");
  if (n_max < 1) throw ConfigError("gen.n_max must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("gen.noise must be >= 0");
  if (modalities < 1) throw ConfigError("gen.modalities must be >= 1");
  if (!(sep_angle_deg >= 0.0 && sep_angle_deg < 180.0)) throw ConfigError("gen.sep_angle_deg must lie in [0, 180)");
  if (!(ood_angle_deg >= 0.0 && ood_angle_deg < 180.0)) throw ConfigError("gen.ood_angle_deg must lie in [0, 180)");
  if (ood_classes < 1) throw ConfigError("gen.ood_classes must be >= 1");
  if (n_test_per_class < 0 || n_ood < 0) throw ConfigError("gen sample counts must be >= 0");
}

nlohmann::json gen_config_to_json(const GenConfig& c) {
  return nlohmann::json{{"classes", c.classes},
                        {"raw_dim", c.raw_dim},
                        {"imbalance_ratio", c.imbalance_ratio},
                        {"n_max", c.n_max},
                        {"noise", c.noise},
                        {"modalities", c.modalities},
                        {"sep_angle_deg", c.sep_angle_deg},
                        {"ood_angle_deg", c.ood_angle_deg},
                        {"ood_classes", c.ood_classes},
                        {"n_test_per_class", c.n_test_per_class},
                        {"n_ood", c.n_ood},
                        {"seed", c.seed}};
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("gen section must be an object");
  GenConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "classes") c.classes = v.get<int>();
      else if (key == "raw_dim") c.raw_dim = v.get<int>();
      else if (key == "imbalance_ratio") c.imbalance_ratio = v.get<double>();
      else if (key == "n_max") c.n_max = v.get<int>();
      else if (key == "noise") c.noise = v.get<double>();
      else if (key == "modalities") c.modalities = v.get<int>();
      else if (key == "sep_angle_deg") c.sep_angle_deg = v.get<double>();
      else if (key == "ood_angle_deg") c.ood_angle_deg = v.get<double>();
      else if (key == "ood_classes") c.ood_classes = v.get<int>();
      else if (key == "n_test_per_class") c.n_test_per_class = v.get<int>();
      else if (key == "n_ood") c.n_ood = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown key gen." + key);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for gen." + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Generators

std::vector<int> longtail_counts(int classes, int n_max, double imbalance_ratio) {
  if (classes < 2) throw ConfigError("longtail_counts requires at least two classes");
  if (n_max < 1) throw ConfigError("longtail_counts requires n_max >= 1");
  if (!(imbalance_ratio >= 1.0) || !std::isfinite(imbalance_ratio)) throw ConfigError("imbalance ratio must be >= 1");
  std::vector<int> out(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    const double n = n_max * std::pow(imbalance_ratio, -static_cast<double>(c) / (classes - 1));
    out[static_cast<std::size_t>(c)] = std::max(1, static_cast<int>(std::lround(n)));
  }
  return out;
}

namespace {

constexpr long kMaxRejections = 1'000'000;

bool far_from_all(const UnitVector& u, const std::vector<UnitVector>& others, double min_deg) {
  return std::all_of(others.begin(), others.end(), [&](const UnitVector& o) { return angle_deg(u, o) >= min_deg; });
}

Vector noisy(const UnitVector& g, double sigma, Rng& rng) {
  Vector v = g.vec();
  if (sigma > 0.0) v += sigma * sample_gaussian(v.size(), rng);
  return v;
}

void shuffle_and_stamp(Dataset& data, Rng& rng) {
  for (std::size_t i = data.size(); i > 1; --i) std::swap(data[i - 1], data[rng.below(i)]);
  for (std::size_t i = 0; i < data.size(); ++i) data[i].t = static_cast<std::int64_t>(i);
}

}  // namespace

GroundTruth gen_class_directions(const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  GroundTruth gt;
  long rejections = 0;
  for (int j = 0; j < cfg.modalities; ++j) {
    std::vector<UnitVector> dirs;
    while (static_cast<int>(dirs.size()) < cfg.classes) {
      UnitVector cand = sample_uniform_sphere(cfg.raw_dim, rng);
      if (far_from_all(cand, dirs, cfg.sep_angle_deg)) {
        dirs.push_back(std::move(cand));
      } else if (++rejections > kMaxRejections) {
        throw DegenerateError("class directions infeasible: too many rejections for sep_angle_deg");
      }
    }
    gt.directions.push_back(std::move(dirs));
  }
  return gt;
}

Dataset gen_pairs(const GenConfig& cfg, const GroundTruth& gt, Rng& rng) {
  return gen_pairs(cfg, gt, longtail_counts(cfg.classes, cfg.n_max, cfg.imbalance_ratio), rng);
}

Dataset gen_pairs(const GenConfig& cfg, const GroundTruth& gt, const std::vector<int>& counts, Rng& rng) {
  if (static_cast<int>(counts.size()) != gt.classes()) throw PreconditionError("one count per class required");
  Dataset out;
  for (int c = 0; c < gt.classes(); ++c) {
    for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      ModalSample s;
      s.label = c;
      for (int j = 0; j < gt.modalities(); ++j) {
        s.modalities.push_back(noisy(gt.directions[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)], cfg.noise, rng));
      }
      out.push_back(std::move(s));
    }
  }
  shuffle_and_stamp(out, rng);
  return out;
}

OodSet gen_ood(const GenConfig& cfg, const GroundTruth& gt, int count, Rng& rng) {
  if (count < 0) throw PreconditionError("OOD count must be >= 0");
  OodSet out;
  long rejections = 0;
  for (int j = 0; j < gt.modalities(); ++j) {
    std::vector<UnitVector> dirs;
    const auto& id_dirs = gt.directions[static_cast<std::size_t>(j)];
    while (static_cast<int>(dirs.size()) < cfg.ood_classes) {
      UnitVector cand = sample_uniform_sphere(cfg.raw_dim, rng);
      bool ok = true;
      for (const auto& g : id_dirs) ok = ok && angle_deg(cand, g) > cfg.ood_angle_deg;
      if (ok) {
        dirs.push_back(std::move(cand));
      } else if (++rejections > kMaxRejections) {
        throw DegenerateError("OOD directions infeasible: too many rejections for ood_angle_deg");
      }
    }
    out.directions.directions.push_back(std::move(dirs));
  }
  for (int i = 0; i < count; ++i) {
    const auto concept_id = static_cast<std::size_t>(i % cfg.ood_classes);
    ModalSample s;
    for (int j = 0; j < gt.modalities(); ++j) {
      s.modalities.push_back(noisy(out.directions.directions[static_cast<std::size_t>(j)][concept_id], cfg.noise, rng));
    }
    out.samples.push_back(std::move(s));
  }
  shuffle_and_stamp(out.samples, rng);
  return out;
}

ShotSplit shot_split(int train_count) {
  if (train_count > 100) return ShotSplit::many;
  if (train_count >= 20) return ShotSplit::medium;
  return ShotSplit::few;
}

const char* to_string(ShotSplit s) {
  switch (s) {
    case ShotSplit::many: return "many";
    case ShotSplit::medium: return "medium";
    case ShotSplit::few: return "few";
  }
  return "few";
}

nlohmann::json make_manifest(const GenConfig& cfg) {
  const auto counts = longtail_counts(cfg.classes, cfg.n_max, cfg.imbalance_ratio);
  nlohmann::json splits{{"many", nlohmann::json::array()}, {"medium", nlohmann::json::array()}, {"few", nlohmann::json::array()}};
  for (std::size_t c = 0; c < counts.size(); ++c) splits[to_string(shot_split(counts[c]))].push_back(c);
  return nlohmann::json{{"format", "driftsphere-dataset"},
                        {"format_version", 1},
                        {"config", gen_config_to_json(cfg)},
                        {"seed", cfg.seed},
                        {"train_counts", counts},
                        {"split_boundaries", {{"many_min_exclusive", 100}, {"medium_min", 20}, {"medium_max", 100}}},
                        {"splits", splits},
                        {"files", {{"train", "train.jsonl"}, {"test", "test.jsonl"}, {"ood", "ood.jsonl"}}}};
}

GeneratedData generate_all(const GenConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Rng dir_rng = root.derive(10);
  Rng train_rng = root.derive(11);
  Rng test_rng = root.derive(12);
  Rng ood_rng = root.derive(13);
  GeneratedData g{gen_class_directions(cfg, dir_rng), {}, {}, {}};
  g.train = gen_pairs(cfg, g.truth, train_rng);
  g.test = gen_pairs(cfg, g.truth, std::vector<int>(static_cast<std::size_t>(cfg.classes), cfg.n_test_per_class), test_rng);
  g.ood = gen_ood(cfg, g.truth, cfg.n_ood, ood_rng);
  return g;
}

PairedData to_paired(const Dataset& data) {
  PairedData p;
  if (data.empty()) return p;
  if (data.front().modalities.size() < 2) throw PreconditionError("paired data requires two modalities");
  const auto n = static_cast<Eigen::Index>(data.size());
  p.raw_a.resize(n, data.front().modalities[0].size());
  p.raw_b.resize(n, data.front().modalities[1].size());
  p.labels.reserve(data.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = data[static_cast<std::size_t>(i)];
    if (s.modalities.size() < 2 || s.modalities[0].size() != p.raw_a.cols() || s.modalities[1].size() != p.raw_b.cols()) {
      throw ShapeError("inconsistent modality dimensions in dataset");
    }
    p.raw_a.row(i) = s.modalities[0].transpose();
    p.raw_b.row(i) = s.modalities[1].transpose();
    p.labels.push_back(s.label.value_or(-1));
  }
  return p;
}

std::vector<int> class_counts(const Dataset& data, int classes) {
  std::vector<int> out(static_cast<std::size_t>(classes), 0);
  for (const auto& s : data) {
    if (s.label && *s.label >= 0 && *s.label < classes) ++out[static_cast<std::size_t>(*s.label)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Streams

UnitVector rotate_towards(const UnitVector& u, const UnitVector& towards, double deg) {
  const double r = deg * std::numbers::pi / 180.0;
  return UnitVector::normalize(std::cos(r) * u.vec() + std::sin(r) * towards.vec());
}

void StreamConfig::validate() const {
  if (length < 1) throw ConfigError("stream length must be >= 1");
  if (!(sudden_fraction >= 0.0 && sudden_fraction <= 1.0)) throw ConfigError("sudden_fraction must lie in [0, 1]");
  if (gradual_class >= 0 && gradual_end < gradual_start) throw ConfigError("gradual_end must be >= gradual_start");
}

double gradual_angle_at(const StreamConfig& cfg, std::int64_t t) {
  if (cfg.gradual_class < 0 || t <= cfg.gradual_start) return 0.0;
  if (t >= cfg.gradual_end) return cfg.gradual_deg;
  return cfg.gradual_deg * static_cast<double>(t - cfg.gradual_start) /
         static_cast<double>(cfg.gradual_end - cfg.gradual_start);
}

Dataset gen_stream(const GenConfig& cfg, const GroundTruth& gt, const OodSet& ood, const StreamConfig& scfg, Rng& rng) {
  scfg.validate();
  if (scfg.gradual_class >= gt.classes()) throw ConfigError("gradual_class out of range");
  std::vector<double> weights(static_cast<std::size_t>(gt.classes()), 1.0);
  if (scfg.long_tailed) {
    const auto counts = longtail_counts(cfg.classes, cfg.n_max, cfg.imbalance_ratio);
    for (std::size_t c = 0; c < counts.size(); ++c) weights[c] = counts[c];
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);

  // Fixed rotation targets orthogonal to the drifting class, per modality.
  std::vector<UnitVector> towards;
  if (scfg.gradual_class >= 0) {
    for (int j = 0; j < gt.modalities(); ++j) {
      const auto& g = gt.directions[static_cast<std::size_t>(j)][static_cast<std::size_t>(scfg.gradual_class)];
      Vector r = sample_gaussian(g.dim(), rng);
      r -= r.dot(g.vec()) * g.vec();
      towards.push_back(UnitVector::normalize(r));
    }
  }

  Dataset out;
  out.reserve(static_cast<std::size_t>(scfg.length));
  for (std::int64_t t = 0; t < scfg.length; ++t) {
    ModalSample s;
    s.t = t;
    const bool sudden = scfg.sudden_at >= 0 && t >= scfg.sudden_at && rng.uniform() < scfg.sudden_fraction;
    if (sudden) {
      const auto q = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(ood.directions.classes())));
      for (int j = 0; j < gt.modalities(); ++j) {
        s.modalities.push_back(noisy(ood.directions.directions[static_cast<std::size_t>(j)][q], cfg.noise, rng));
      }
    } else {
      double u = rng.uniform() * total;
      int c = 0;
      while (c + 1 < gt.classes() && (u -= weights[static_cast<std::size_t>(c)]) >= 0.0) ++c;
      s.label = c;
      const double angle = c == scfg.gradual_class ? gradual_angle_at(scfg, t) : 0.0;
      for (int j = 0; j < gt.modalities(); ++j) {
        const auto& g = gt.directions[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        const UnitVector dir = angle > 0.0 ? rotate_towards(g, towards[static_cast<std::size_t>(j)], angle) : g;
        s.modalities.push_back(noisy(dir, cfg.noise, rng));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace driftsphere
