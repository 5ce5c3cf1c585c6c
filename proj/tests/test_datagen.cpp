#include "driftsphere/datagen.hpp"
#include "driftsphere/errors.hpp"
#include "driftsphere/metric.hpp"
#include "driftsphere/ood.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace ds = driftsphere;
namespace fs = std::filesystem;

namespace {

ds::GenConfig small_cfg() {
  ds::GenConfig c;
  c.classes = 6;
  c.raw_dim = 16;
  c.imbalance_ratio = 10.0;
  c.n_max = 60;
  c.noise = 0.05;
  c.n_test_per_class = 5;
  c.n_ood = 40;
  c.ood_classes = 4;
  c.seed = 17;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("driftsphere_datagen_" + name);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(LongtailCounts, Examples) {
  EXPECT_EQ(ds::longtail_counts(5, 77, 1.0), std::vector<int>(5, 77));
  EXPECT_EQ(ds::longtail_counts(2, 1000, 100.0), (std::vector<int>{1000, 10}));
  EXPECT_EQ(ds::longtail_counts(3, 900, 9.0), (std::vector<int>{900, 300, 100}));
  EXPECT_EQ(ds::longtail_counts(3, 5, 1000.0).back(), 1);
  EXPECT_THROW(ds::longtail_counts(1, 10, 2.0), ds::ConfigError);
  EXPECT_THROW(ds::longtail_counts(3, 10, 0.5), ds::ConfigError);
}

TEST(LongtailCounts, MonotoneWithFixedEnds) {
  for (int c : {2, 3, 10, 50, 100}) {
    for (double ir : {1.0, 2.5, 10.0, 100.0, 1000.0}) {
      const auto n = ds::longtail_counts(c, 500, ir);
      ASSERT_EQ(n.front(), 500);
      ASSERT_EQ(n.back(), std::max(1, static_cast<int>(std::lround(500 / ir))));
      ASSERT_TRUE(std::is_sorted(n.rbegin(), n.rend()));
    }
  }
}

TEST(GenClassDirections, SeparatedAndDeterministic) {
  ds::GenConfig cfg;  // 20 classes, 32 dims, 25 degrees
  ds::Rng a(1), b(1);
  const auto gt = ds::gen_class_directions(cfg, a);
  const auto gt2 = ds::gen_class_directions(cfg, b);
  ASSERT_EQ(gt.modalities(), 2);
  ASSERT_EQ(gt.classes(), 20);
  for (int j = 0; j < 2; ++j) {
    for (int c = 0; c < 20; ++c) {
      const auto& g = gt.directions[j][c];
      EXPECT_TRUE(g.vec() == gt2.directions[j][c].vec());
      for (int e = c + 1; e < 20; ++e) EXPECT_GE(ds::angle_deg(g, gt.directions[j][e]), cfg.sep_angle_deg);
    }
  }
  for (int c = 0; c < 20; ++c) EXPECT_FALSE(gt.directions[0][c].vec() == gt.directions[1][c].vec());
}

TEST(GenClassDirections, InfeasibleSeparationThrows) {
  auto cfg = small_cfg();
  cfg.raw_dim = 4;
  cfg.classes = 50;
  cfg.sep_angle_deg = 120.0;
  ds::Rng r(1);
  EXPECT_THROW(ds::gen_class_directions(cfg, r), ds::DegenerateError);
}

TEST(GenPairs, NoiselessSamplesEqualDirections) {
  auto cfg = small_cfg();
  cfg.noise = 0.0;
  ds::Rng r(2);
  const auto gt = ds::gen_class_directions(cfg, r);
  const auto data = ds::gen_pairs(cfg, gt, r);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    ASSERT_EQ(s.t, static_cast<std::int64_t>(i));
    ASSERT_TRUE(s.label.has_value());
    for (int j = 0; j < 2; ++j) ASSERT_TRUE(s.modalities[j] == gt.directions[j][*s.label].vec());
  }
  EXPECT_EQ(ds::class_counts(data, cfg.classes), ds::longtail_counts(cfg.classes, cfg.n_max, cfg.imbalance_ratio));
  ds::validate_stream(data);
}

TEST(GenPairs, HeadClassMeanDirection) {
  ds::GenConfig cfg;
  cfg.noise = 0.1;
  ds::Rng r(3);
  const auto gt = ds::gen_class_directions(cfg, r);
  const auto data = ds::gen_pairs(cfg, gt, r);
  const auto counts = ds::longtail_counts(cfg.classes, cfg.n_max, cfg.imbalance_ratio);
  for (int c = 0; c < cfg.classes; ++c) {
    // The mean's angular error is about noise·sqrt((d - 1) / n): 2° at n = 250.
    if (2 * counts[c] < cfg.n_max) continue;
    for (int j = 0; j < 2; ++j) {
      ds::Vector sum = ds::Vector::Zero(cfg.raw_dim);
      for (const auto& s : data) {
        if (*s.label == c) sum += s.modalities[j];
      }
      EXPECT_LT(ds::angle_deg(ds::UnitVector::normalize(sum), gt.directions[j][c]), 3.0) << "class " << c;
    }
  }
}

TEST(GenOod, ExclusionAndCount) {
  ds::GenConfig cfg;
  ds::Rng r(4);
  const auto gt = ds::gen_class_directions(cfg, r);
  const auto ood = ds::gen_ood(cfg, gt, 1000, r);
  EXPECT_EQ(ood.samples.size(), 1000u);
  EXPECT_EQ(ds::gen_ood(cfg, gt, 0, r).samples.size(), 0u);
  for (int j = 0; j < 2; ++j) {
    for (const auto& o : ood.directions.directions[j]) {
      for (const auto& g : gt.directions[j]) EXPECT_GT(ds::angle_deg(o, g), cfg.ood_angle_deg);
    }
  }
  for (const auto& s : ood.samples) EXPECT_FALSE(s.label.has_value());
}

TEST(GenOod, RawAngleSeparatesFromId) {
  ds::GenConfig cfg;
  cfg.noise = 0.05;
  ds::Rng r(5);
  const auto gt = ds::gen_class_directions(cfg, r);
  const auto id = ds::gen_pairs(cfg, gt, std::vector<int>(cfg.classes, 50), r);
  const auto ood = ds::gen_ood(cfg, gt, 1000, r);
  auto angle_to_nearest = [&](const ds::Vector& x) {
    const auto u = ds::UnitVector::normalize(x);
    double best = 180.0;
    for (const auto& g : gt.directions[0]) best = std::min(best, ds::angle_deg(u, g));
    return best;
  };
  std::vector<double> sid, sood;
  for (const auto& s : id) sid.push_back(angle_to_nearest(s.modalities[0]));
  for (const auto& s : ood.samples) sood.push_back(angle_to_nearest(s.modalities[0]));
  EXPECT_GT(ds::evaluate(sid, sood).auroc, 0.99);
}

TEST(Jsonl, RoundTrip) {
  const auto dir = scratch("rt");
  auto cfg = small_cfg();
  cfg.n_max = 1000;
  cfg.imbalance_ratio = 1.0;
  ds::Rng r(6);
  const auto gt = ds::gen_class_directions(cfg, r);
  auto data = ds::gen_pairs(cfg, gt, std::vector<int>(cfg.classes, 170), r);
  data.resize(1000);
  data[3].label.reset();
  data[4].modalities[1][0] = 1e-310;
  data[5].modalities[0][2] = -0.0;
  const auto path = (dir / "d.jsonl").string();
  ds::write_jsonl(data, path);
  EXPECT_EQ(ds::read_jsonl(path), data);

  ds::write_jsonl({}, path);
  EXPECT_EQ(fs::file_size(path), 0u);
  EXPECT_TRUE(ds::read_jsonl(path).empty());
  fs::remove_all(dir);
}

TEST(Jsonl, MalformedLineReportsLineNumber) {
  const auto dir = scratch("bad");
  const auto path = (dir / "bad.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"t": 0, "label": 1, "modalities": [[1.0, 2.0]]})" << '\n';
    out << R"({"t": 1, "label": null, "modalities": [[1.0, 2.0]]})" << '\n';
    out << R"({"t": 2, "label": "x", "modalities": [[1.0]]})" << '\n';
  }
  try {
    ds::read_jsonl(path);
    FAIL() << "expected FormatError";
  } catch (const ds::FormatError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(ds::parse_jsonl_line("{\"t\": 1, \"modalities\": [[1.0]], \"extra\": 2}", 1), ds::FormatError);
  EXPECT_THROW(ds::parse_jsonl_line("{\"t\": 1.5, \"modalities\": [[1.0]]}", 1), ds::FormatError);
  EXPECT_THROW(ds::parse_jsonl_line("not json", 1), ds::FormatError);
  EXPECT_THROW(ds::read_jsonl((dir / "missing.jsonl").string()), ds::MissingInputError);
  fs::remove_all(dir);
}

TEST(ValidateStream, Errors) {
  ds::Dataset d{{0, 1, {ds::Vector::Ones(3)}}, {1, 1, {ds::Vector::Ones(3)}}};
  EXPECT_NO_THROW(ds::validate_stream(d));
  d[1].t = 0;
  EXPECT_THROW(ds::validate_stream(d), ds::FormatError);
  d[1].t = 2;
  d[1].modalities[0] = ds::Vector::Ones(4);
  EXPECT_THROW(ds::validate_stream(d), ds::FormatError);
}

TEST(Manifest, RegenerationReproducesData) {
  const auto cfg = small_cfg();
  const auto m = ds::make_manifest(cfg);
  EXPECT_EQ(m["seed"], cfg.seed);
  EXPECT_EQ(m["train_counts"].get<std::vector<int>>(), ds::longtail_counts(cfg.classes, cfg.n_max, cfg.imbalance_ratio));
  const auto again = ds::gen_config_from_json(m["config"]);
  const auto a = ds::generate_all(cfg);
  const auto b = ds::generate_all(again);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.ood.samples, b.ood.samples);
  auto other = cfg;
  other.seed += 1;
  EXPECT_FALSE(ds::generate_all(other).train == a.train);
}

TEST(Manifest, SplitsFollowCounts) {
  ds::GenConfig cfg;  // 500 down to 5
  const auto m = ds::make_manifest(cfg);
  const auto counts = ds::longtail_counts(cfg.classes, cfg.n_max, cfg.imbalance_ratio);
  std::size_t total = 0;
  for (const char* name : {"many", "medium", "few"}) {
    for (int c : m["splits"][name].get<std::vector<int>>()) {
      EXPECT_EQ(ds::to_string(ds::shot_split(counts[c])), std::string(name));
      ++total;
    }
  }
  EXPECT_EQ(total, counts.size());
  EXPECT_EQ(ds::shot_split(101), ds::ShotSplit::many);
  EXPECT_EQ(ds::shot_split(100), ds::ShotSplit::medium);
  EXPECT_EQ(ds::shot_split(20), ds::ShotSplit::medium);
  EXPECT_EQ(ds::shot_split(19), ds::ShotSplit::few);
}

TEST(GenConfigJson, RejectsUnknownKeysAndBadValues) {
  auto j = ds::gen_config_to_json(small_cfg());
  EXPECT_EQ(ds::gen_config_to_json(ds::gen_config_from_json(j)), j);
  auto bad = j;
  bad["colour"] = 1;
  EXPECT_THROW(ds::gen_config_from_json(bad), ds::ConfigError);
  bad = j;
  bad["imbalance_ratio"] = 0.5;
  EXPECT_THROW(ds::gen_config_from_json(bad), ds::ConfigError);
  bad = j;
  bad["classes"] = "many";
  EXPECT_THROW(ds::gen_config_from_json(bad), ds::ConfigError);
}

TEST(GenStream, GradualRotationAndSudden) {
  const auto cfg = small_cfg();
  ds::Rng r(7);
  const auto gt = ds::gen_class_directions(cfg, r);
  const auto ood = ds::gen_ood(cfg, gt, 0, r);
  ds::StreamConfig sc;
  sc.length = 600;
  sc.gradual_class = 2;
  sc.gradual_start = 100;
  sc.gradual_end = 300;
  sc.gradual_deg = 40.0;
  sc.sudden_at = 500;
  EXPECT_DOUBLE_EQ(ds::gradual_angle_at(sc, 50), 0.0);
  EXPECT_DOUBLE_EQ(ds::gradual_angle_at(sc, 200), 20.0);
  EXPECT_DOUBLE_EQ(ds::gradual_angle_at(sc, 400), 40.0);
  auto noiseless = cfg;
  noiseless.noise = 0.0;
  const auto s = ds::gen_stream(noiseless, gt, ood, sc, r);
  ASSERT_EQ(s.size(), 600u);
  ds::validate_stream(s);
  for (const auto& x : s) {
    if (x.t >= 500) {
      EXPECT_FALSE(x.label.has_value());
      continue;
    }
    ASSERT_TRUE(x.label.has_value());
    const double expect = *x.label == 2 ? ds::gradual_angle_at(sc, x.t) : 0.0;
    for (int j = 0; j < 2; ++j) {
      EXPECT_NEAR(ds::angle_deg(ds::UnitVector::normalize(x.modalities[j]), gt.directions[j][*x.label]), expect, 1e-5);
    }
  }
  sc.gradual_end = 50;
  EXPECT_THROW(ds::gen_stream(cfg, gt, ood, sc, r), ds::ConfigError);
}

TEST(RotateTowards, Angle) {
  const auto u = ds::UnitVector::basis(5, 0);
  const auto v = ds::UnitVector::basis(5, 3);
  for (double deg : {0.0, 15.0, 90.0, 170.0}) EXPECT_NEAR(ds::angle_deg(ds::rotate_towards(u, v, deg), u), deg, 1e-9);
}
