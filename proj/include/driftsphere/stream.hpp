#pragma once

#include "driftsphere/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace driftsphere {

// One timestamped multi-modal observation: a raw vector per modality and an
// optional class label.
struct ModalSample {
  std::int64_t t = 0;
  std::optional<int> label;
  std::vector<Vector> modalities;

  bool operator==(const ModalSample& other) const;
};

using Dataset = std::vector<ModalSample>;

// JSONL: {"t": int, "label": int|null, "modalities": [[f64, ...], ...]}.
std::string to_jsonl_line(const ModalSample& s);
// Throws FormatError carrying `line_no` on malformed input.
ModalSample parse_jsonl_line(const std::string& line, long line_no);

void write_jsonl(const Dataset& data, const std::string& path);
// Throws MissingInputError when the file cannot be opened.
Dataset read_jsonl(const std::string& path);

// Checks fixed modality count/dims and strictly increasing timestamps.
void validate_stream(const Dataset& data);

}  // namespace driftsphere
