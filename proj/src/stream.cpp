#include "driftsphere/stream.hpp"

#include "driftsphere/errors.hpp"

#include "json.hpp"

#include <fstream>

namespace driftsphere {


bool ModalSample::operator==(const ModalSample& other) const {
  if (t != other.t || label != other.label || modalities.size() != other.modalities.size()) return false;
  for (std::size_t j = 0; j < modalities.size(); ++j) {
    if (modalities[j].size() != other.modalities[j].size()) return false;
    if (!(modalities[j].array() == other.modalities[j].array()).all()) return false;
  }
  return true;
}

std::string to_jsonl_line(const ModalSample& s) {
  nlohmann::ordered_json j;
  j["t"] = s.t;
  j["label"] = s.label ? nlohmann::ordered_json(*s.label) : nlohmann::ordered_json(nullptr);
  auto mods = nlohmann::ordered_json::array();
  for (const auto& v : s.modalities) mods.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  j["modalities"] = std::move(mods);
  return j.dump();
}

ModalSample parse_jsonl_line(const std::string& line, long line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what(), line_no);
  }
  if (!j.is_object()) throw FormatError("expected a JSON object", line_no);
  for (const auto& [key, _] : j.items()) {
    if (key != "t" && key != "label" && key != "modalities") throw FormatError("unknown field '" + key + "'", line_no);
  }
  if (!j.contains("t") || !j["t"].is_number_integer()) throw FormatError("field 't' must be an integer", line_no);
  if (!j.contains("modalities") || !j["modalities"].is_array()) throw FormatError("field 'modalities' must be an array", line_no);
  ModalSample s;
  s.t = j["t"].get<std::int64_t>();
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_number_integer()) throw FormatError("field 'label' must be an integer or null", line_no);
    s.label = j["label"].get<int>();
  }
  for (const auto& m : j["modalities"]) {
    if (!m.is_array() || m.empty()) throw FormatError("each modality must be a non-empty array", line_no);
    Vector v(static_cast<Eigen::Index>(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i].is_number()) throw FormatError("modality entries must be numbers", line_no);
      v[static_cast<Eigen::Index>(i)] = m[i].get<double>();
    }
    s.modalities.push_back(std::move(v));
  }
  return s;
}

void write_jsonl(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("cannot open '" + path + "' for writing");
  for (const auto& s : data) out << to_jsonl_line(s) << '\n';
  if (!out) throw MissingInputError("failed writing '" + path + "'");
}

Dataset read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open '" + path + "'");
  Dataset out;
  std::string line;
  long no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    out.push_back(parse_jsonl_line(line, no));
  }
  return out;
}

void validate_stream(const Dataset& data) {
  if (data.empty()) return;
  const auto& first = data.front();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    if (s.modalities.size() != first.modalities.size()) throw FormatError("modality count changes within the stream");
    for (std::size_t j = 0; j < s.modalities.size(); ++j) {
      if (s.modalities[j].size() != first.modalities[j].size()) throw FormatError("modality dimension changes");
    }
    if (i > 0 && s.t <= data[i - 1].t) throw FormatError("timestamps must be strictly increasing");
  }
}

}  // namespace driftsphere
