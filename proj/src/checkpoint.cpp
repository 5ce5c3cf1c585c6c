#include "driftsphere/checkpoint.hpp"

#include "driftsphere/errors.hpp"

#include <fstream>

namespace driftsphere {

using nlohmann::json;

json parameters_to_json(const ad::ParameterSet& params) {
  json out = json::array();
  for (const auto& p : params) {
    std::vector<double> data(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.value.cols(); ++j) data[static_cast<std::size_t>(i * p.value.cols() + j)] = p.value(i, j);
    }
    out.push_back(json{{"name", p.name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"frozen", p.frozen},
                       {"decay", p.decay},
                       {"data", data}});
  }
  return out;
}

ad::ParameterSet parameters_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("parameters must be an array");
  ad::ParameterSet out;
  for (const auto& e : j) {
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    const auto data = e.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw FormatError("parameter '" + e.at("name").get<std::string>() + "' has inconsistent shape");
    }
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    }
    auto& p = out.add(e.at("name").get<std::string>(), std::move(m), e.at("decay").get<bool>());
    p.frozen = e.at("frozen").get<bool>();
  }
  return out;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  const Model& m = ckpt.model;
  const auto& es = m.encoder.shape();
  json j{{"format", "driftsphere-checkpoint"},
         {"format_version", kCheckpointVersion},
         {"stage", ckpt.stage},
         {"seed", ckpt.seed},
         {"step", ckpt.step},
         {"metric", {{"kappa", ckpt.metric.kappa}, {"epsilon", ckpt.metric.epsilon}}},
         {"fusion", m.fusion},
         {"encoder",
          {{"shape",
            {{"raw_dim_a", es.raw_dim_a}, {"raw_dim_b", es.raw_dim_b}, {"hidden", es.hidden}, {"embed_dim", es.embed_dim}}},
           {"params", parameters_to_json(m.encoder.params())}}},
         {"head", nullptr},
         {"router", nullptr}};
  if (m.head) {
    const auto& hs = m.head->shape();
    j["head"] = {{"shape", {{"input_dim", hs.input_dim}, {"embed_dim", hs.embed_dim}, {"classes", hs.classes}}},
                 {"epsilon", m.head->epsilon()},
                 {"params", parameters_to_json(m.head->params())}};
  }
  if (m.router) {
    const auto& rs = m.router->shape();
    j["router"] = {{"shape", {{"dim", rs.dim}, {"experts", rs.experts}, {"hidden", rs.hidden}, {"top_k", rs.top_k}}},
                   {"metric", {{"kappa", m.router->metric().kappa}, {"epsilon", m.router->metric().epsilon}}},
                   {"params", parameters_to_json(m.router->params())}};
  }
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "driftsphere-checkpoint") throw FormatError("not a driftsphere checkpoint");
    if (j.at("format_version").get<int>() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    const auto& es = j.at("encoder").at("shape");
    EncoderShape shape{es.at("raw_dim_a").get<int>(), es.at("raw_dim_b").get<int>(), es.at("hidden").get<int>(),
                       es.at("embed_dim").get<int>()};
    Checkpoint c{Model{TwoTowerEncoder(shape, parameters_from_json(j.at("encoder").at("params"))), std::nullopt,
                       std::nullopt, j.at("fusion").get<bool>()},
                 MetricConfig{j.at("metric").at("kappa").get<double>(), j.at("metric").at("epsilon").get<double>()},
                 j.at("seed").get<std::uint64_t>(), j.at("step").get<std::uint64_t>(), j.at("stage").get<std::string>()};
    if (!j.at("head").is_null()) {
      const auto& h = j.at("head");
      const auto& hs = h.at("shape");
      MetricConfig hm = c.metric;
      hm.epsilon = h.at("epsilon").get<double>();
      c.model.head.emplace(HeadShape{hs.at("input_dim").get<int>(), hs.at("embed_dim").get<int>(), hs.at("classes").get<int>()},
                           hm, parameters_from_json(h.at("params")));
    }
    if (!j.at("router").is_null()) {
      const auto& r = j.at("router");
      const auto& rs = r.at("shape");
      c.model.router.emplace(RouterShape{rs.at("dim").get<int>(), rs.at("experts").get<int>(), rs.at("hidden").get<int>(),
                                         rs.at("top_k").get<int>()},
                             MetricConfig{r.at("metric").at("kappa").get<double>(), r.at("metric").at("epsilon").get<double>()},
                             parameters_from_json(r.at("params")));
    }
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  } catch (const PreconditionError& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("cannot open '" + path + "' for writing");
  out << checkpoint_to_json(ckpt).dump(1) << '\n';
  if (!out) throw MissingInputError("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace driftsphere
