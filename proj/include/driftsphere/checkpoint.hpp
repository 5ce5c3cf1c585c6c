#pragma once

// JSON model checkpoints. Doubles are written in shortest round-trip form, so
// save/load is bit-exact.

#include "driftsphere/model.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>

namespace driftsphere {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  MetricConfig metric;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::string stage;  // "pretrain" or "finetune"
};

nlohmann::json parameters_to_json(const ad::ParameterSet& params);
ad::ParameterSet parameters_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
// Throws FormatError on a malformed or version-mismatched document.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// Throws MissingInputError when the file cannot be read.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace driftsphere
