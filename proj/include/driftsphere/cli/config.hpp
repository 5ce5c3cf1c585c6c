#pragma once

// Run configuration: one JSON document with a section per stage. Unknown keys
// are rejected everywhere; every command writes the effective configuration
// back out as its manifest, which is itself a valid --config input.

#include "driftsphere/datagen.hpp"
#include "driftsphere/drift.hpp"
#include "driftsphere/model.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace driftsphere::cli {

inline constexpr int kConfigVersion = 1;

struct EncoderSection {
  int hidden = 64;
  int embed_dim = 16;
};

struct PretrainSection {
  int epochs = 30;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t warmup_steps = 0;
  double weight_decay = 0.05;
  LogitKind loss = LogitKind::thp;
  double kappa = 16.0;
  double epsilon = 1.0;
  double temperature = 0.07;
  bool learn_temperature = false;
  double soft_alpha = 0.4;
  double momentum = 0.995;
};

struct FinetuneSection {
  int epochs = 30;
  int batch_size = 128;
  double lr = 1e-2;
  std::uint64_t warmup_steps = 0;
  double weight_decay = 0.05;
  double kappa = 16.0;
  double epsilon = 1.0;
  bool trainable_kappa = false;
  double label_smoothing = 0.1;
  bool fusion = false;
  bool use_router = false;
  int experts = 4;
  int top_k = 2;
  int router_hidden = 32;
  std::string checkpoint;  // pretrained encoder; default <out>/pretrain.ckpt.json
};

struct EvalSection {
  std::string checkpoint;  // default <out>/pretrain.ckpt.json
  int k = 10;
  double kappa = 16.0;
  double epsilon = 1.0;
};

struct DriftSection {
  StreamConfig stream;
  StreamRunConfig run;
  int ref_per_class = 200;
  int k = 10;
  std::string features = "raw";  // raw | encoder
  std::string checkpoint;        // encoder features; default <out>/pretrain.ckpt.json
  int adapt_steps = 0;
  double adapt_lr = 1e-3;
};

struct AblateSection {
  std::vector<double> kappas{4.0, 16.0, 64.0, 128.0};
  double trainable_init = 16.0;
  std::string checkpoint;  // default <out>/pretrain.ckpt.json
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string data;  // dataset directory; default = out
  GenConfig gen;
  EncoderSection encoder;
  PretrainSection pretrain;
  FinetuneSection finetune;
  EvalSection eval;
  DriftSection drift;
  AblateSection ablate;

  std::string data_dir() const { return data.empty() ? out : data; }
  std::string default_checkpoint(const std::string& explicit_path) const;
  void validate() const;
};

// Throws ConfigError on malformed JSON, wrong types, unknown keys or invalid
// values. The gen section's seed always follows the global seed.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
nlohmann::ordered_json config_to_json(const RunConfig& c);

// Library configs derived from the sections.
PretrainConfig pretrain_config(const RunConfig& c);
EncoderShape encoder_shape(const RunConfig& c);
FinetuneConfig finetune_config(const RunConfig& c, int classes);

}  // namespace driftsphere::cli
