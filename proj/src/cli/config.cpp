#include "driftsphere/cli/config.hpp"

#include "driftsphere/errors.hpp"

#include <fstream>
#include <set>

namespace driftsphere::cli {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object and rejects whatever is left unread.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be a JSON object");
  }

  void get(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(where(key) + " is out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const char* key, std::int64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      out = v->get<std::int64_t>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + " must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(where(key) + " must be an array of numbers");
      out.clear();
      for (const auto& x : *v) {
        if (!x.is_number()) throw ConfigError(where(key) + " must be an array of numbers");
        out.push_back(x.get<double>());
      }
    }
  }
  void get(const char* key, LogitKind& out) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = parse_logit_kind(s);
  }
  const json* sub(const char* key) { return find(key); }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key " + where(k.c_str()));
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string label() const { return path_.empty() ? "config" : "config section '" + path_ + "'"; }
  std::string where(const char* key) const { return path_.empty() ? std::string(key) : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void section(Section& parent, const char* key, const std::string& path, F&& read) {
  if (const json* v = parent.sub(key)) {
    Section s(*v, path);
    read(s);
    s.finish();
  }
}

}  // namespace

std::string RunConfig::default_checkpoint(const std::string& explicit_path) const {
  return explicit_path.empty() ? out + "/pretrain.ckpt.json" : explicit_path;
}

void RunConfig::validate() const {
  if (out.empty()) throw ConfigError("out must be a non-empty path");
  gen.validate();
  if (encoder.hidden < 1) throw ConfigError("encoder.hidden must be >= 1");
  if (encoder.embed_dim < 4) throw ConfigError("encoder.embed_dim must be >= 4");
  pretrain_config(*this).validate();
  finetune_config(*this, std::max(2, gen.classes)).validate();
  if (eval.k < 1) throw ConfigError("eval.k must be >= 1");
  MetricConfig{eval.kappa, eval.epsilon}.validate();
  drift.stream.validate();
  drift.run.validate();
  if (drift.ref_per_class < 1) throw ConfigError("drift.ref_per_class must be >= 1");
  if (drift.k < 1) throw ConfigError("drift.k must be >= 1");
  if (drift.features != "raw" && drift.features != "encoder") throw ConfigError("drift.features must be 'raw' or 'encoder'");
  if (drift.adapt_steps < 0) throw ConfigError("drift.adapt_steps must be >= 0");
  if (!(drift.adapt_lr >= 0.0)) throw ConfigError("drift.adapt_lr must be >= 0");
  if (ablate.kappas.size() != 4) throw ConfigError("ablate.kappas must list four fixed concentrations");
  for (double k : ablate.kappas) {
    if (!(k > 0.0)) throw ConfigError("ablate.kappas must be positive");
  }
  if (!(ablate.trainable_init > 0.0)) throw ConfigError("ablate.trainable_init must be > 0");
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  try {
    Section root(j, "");
    int version = kConfigVersion;
    root.get("format_version", version);
    if (version != kConfigVersion) throw ConfigError("unsupported config format_version " + std::to_string(version));
    std::string command;
    root.get("command", command);  // informational, written by manifests
    root.get("seed", c.seed);
    root.get("out", c.out);
    root.get("data", c.data);
    if (const json* g = root.sub("gen")) {
      json copy = *g;
      if (copy.is_object()) copy.erase("seed");
      c.gen = gen_config_from_json(copy);
    }
    section(root, "encoder", "encoder", [&](Section& s) {
      s.get("hidden", c.encoder.hidden);
      s.get("embed_dim", c.encoder.embed_dim);
    });
    section(root, "pretrain", "pretrain", [&](Section& s) {
      auto& p = c.pretrain;
      s.get("epochs", p.epochs);
      s.get("batch_size", p.batch_size);
      s.get("lr", p.lr);
      s.get("warmup_steps", p.warmup_steps);
      s.get("weight_decay", p.weight_decay);
      s.get("loss", p.loss);
      s.get("kappa", p.kappa);
      s.get("epsilon", p.epsilon);
      s.get("temperature", p.temperature);
      s.get("learn_temperature", p.learn_temperature);
      s.get("soft_alpha", p.soft_alpha);
      s.get("momentum", p.momentum);
    });
    section(root, "finetune", "finetune", [&](Section& s) {
      auto& f = c.finetune;
      s.get("epochs", f.epochs);
      s.get("batch_size", f.batch_size);
      s.get("lr", f.lr);
      s.get("warmup_steps", f.warmup_steps);
      s.get("weight_decay", f.weight_decay);
      s.get("kappa", f.kappa);
      s.get("epsilon", f.epsilon);
      s.get("trainable_kappa", f.trainable_kappa);
      s.get("label_smoothing", f.label_smoothing);
      s.get("fusion", f.fusion);
      s.get("use_router", f.use_router);
      s.get("experts", f.experts);
      s.get("top_k", f.top_k);
      s.get("router_hidden", f.router_hidden);
      s.get("checkpoint", f.checkpoint);
    });
    section(root, "eval", "eval", [&](Section& s) {
      s.get("checkpoint", c.eval.checkpoint);
      s.get("k", c.eval.k);
      s.get("kappa", c.eval.kappa);
      s.get("epsilon", c.eval.epsilon);
    });
    section(root, "drift", "drift", [&](Section& s) {
      auto& d = c.drift;
      s.get("length", d.stream.length);
      s.get("long_tailed", d.stream.long_tailed);
      s.get("sudden_at", d.stream.sudden_at);
      s.get("sudden_fraction", d.stream.sudden_fraction);
      s.get("gradual_class", d.stream.gradual_class);
      s.get("gradual_start", d.stream.gradual_start);
      s.get("gradual_end", d.stream.gradual_end);
      s.get("gradual_deg", d.stream.gradual_deg);
      s.get("window", d.run.window);
      s.get("cadence", d.run.cadence);
      s.get("rho", d.run.rho);
      s.get("theta_g", d.run.theta_g);
      s.get("min_class_samples", d.run.min_class_samples);
      s.get("reestimate_on_gradual", d.run.reestimate_on_gradual);
      s.get("ref_per_class", d.ref_per_class);
      s.get("k", d.k);
      s.get("features", d.features);
      s.get("checkpoint", d.checkpoint);
      s.get("adapt_steps", d.adapt_steps);
      s.get("adapt_lr", d.adapt_lr);
    });
    section(root, "ablate", "ablate", [&](Section& s) {
      s.get("kappas", c.ablate.kappas);
      s.get("trainable_init", c.ablate.trainable_init);
      s.get("checkpoint", c.ablate.checkpoint);
    });
    root.finish();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.gen.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

nlohmann::ordered_json config_to_json(const RunConfig& c) {
  json gen = gen_config_to_json(c.gen);
  gen.erase("seed");
  const auto& p = c.pretrain;
  const auto& f = c.finetune;
  const auto& d = c.drift;
  nlohmann::ordered_json j;
  j["format_version"] = kConfigVersion;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["data"] = c.data;
  j["gen"] = gen;
  j["encoder"] = {{"hidden", c.encoder.hidden}, {"embed_dim", c.encoder.embed_dim}};
  j["pretrain"] = {{"epochs", p.epochs},        {"batch_size", p.batch_size},
                   {"lr", p.lr},                {"warmup_steps", p.warmup_steps},
                   {"weight_decay", p.weight_decay}, {"loss", to_string(p.loss)},
                   {"kappa", p.kappa},          {"epsilon", p.epsilon},
                   {"temperature", p.temperature}, {"learn_temperature", p.learn_temperature},
                   {"soft_alpha", p.soft_alpha}, {"momentum", p.momentum}};
  j["finetune"] = {{"epochs", f.epochs},
                   {"batch_size", f.batch_size},
                   {"lr", f.lr},
                   {"warmup_steps", f.warmup_steps},
                   {"weight_decay", f.weight_decay},
                   {"kappa", f.kappa},
                   {"epsilon", f.epsilon},
                   {"trainable_kappa", f.trainable_kappa},
                   {"label_smoothing", f.label_smoothing},
                   {"fusion", f.fusion},
                   {"use_router", f.use_router},
                   {"experts", f.experts},
                   {"top_k", f.top_k},
                   {"router_hidden", f.router_hidden},
                   {"checkpoint", f.checkpoint}};
  j["eval"] = {{"checkpoint", c.eval.checkpoint}, {"k", c.eval.k}, {"kappa", c.eval.kappa}, {"epsilon", c.eval.epsilon}};
  j["drift"] = {{"length", d.stream.length},
                {"long_tailed", d.stream.long_tailed},
                {"sudden_at", d.stream.sudden_at},
                {"sudden_fraction", d.stream.sudden_fraction},
                {"gradual_class", d.stream.gradual_class},
                {"gradual_start", d.stream.gradual_start},
                {"gradual_end", d.stream.gradual_end},
                {"gradual_deg", d.stream.gradual_deg},
                {"window", d.run.window},
                {"cadence", d.run.cadence},
                {"rho", d.run.rho},
                {"theta_g", d.run.theta_g},
                {"min_class_samples", d.run.min_class_samples},
                {"reestimate_on_gradual", d.run.reestimate_on_gradual},
                {"ref_per_class", d.ref_per_class},
                {"k", d.k},
                {"features", d.features},
                {"checkpoint", d.checkpoint},
                {"adapt_steps", d.adapt_steps},
                {"adapt_lr", d.adapt_lr}};
  j["ablate"] = {{"kappas", c.ablate.kappas}, {"trainable_init", c.ablate.trainable_init}, {"checkpoint", c.ablate.checkpoint}};
  return j;
}

EncoderShape encoder_shape(const RunConfig& c) {
  return EncoderShape{c.gen.raw_dim, c.gen.raw_dim, c.encoder.hidden, c.encoder.embed_dim};
}

PretrainConfig pretrain_config(const RunConfig& c) {
  const auto& p = c.pretrain;
  PretrainConfig out;
  out.epochs = p.epochs;
  out.batch_size = p.batch_size;
  out.optim.lr = p.lr;
  out.optim.warmup_steps = p.warmup_steps;
  out.optim.weight_decay = p.weight_decay;
  out.align.kind = p.loss;
  out.align.metric = MetricConfig{p.kappa, p.epsilon};
  out.align.temperature = p.temperature;
  out.align.learn_temperature = p.learn_temperature;
  out.align.soft.alpha = p.soft_alpha;
  out.align.soft.momentum = p.momentum;
  out.seed = c.seed;
  return out;
}

FinetuneConfig finetune_config(const RunConfig& c, int classes) {
  const auto& f = c.finetune;
  FinetuneConfig out;
  out.epochs = f.epochs;
  out.batch_size = f.batch_size;
  out.optim.lr = f.lr;
  out.optim.warmup_steps = f.warmup_steps;
  out.optim.weight_decay = f.weight_decay;
  out.metric = MetricConfig{f.kappa, f.epsilon};
  out.trainable_kappa = f.trainable_kappa;
  out.label_smoothing = f.label_smoothing;
  out.fusion = f.fusion;
  out.use_router = f.use_router;
  out.router = RouterShape{c.encoder.embed_dim, f.experts, f.router_hidden, f.top_k};
  out.classes = classes;
  out.seed = c.seed;
  return out;
}

}  // namespace driftsphere::cli
