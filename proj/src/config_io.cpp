#include "priorforge/config_io.hpp"

#include "priorforge/errors.hpp"

#include <cstdio>
#include <fstream>

namespace priorforge {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const TfmConfig& c) {
  return {{"arch", std::string(to_string(c.arch))}, {"layers", c.layers},   {"model_dim", c.model_dim},
          {"heads", c.heads},                       {"mlp_ratio", c.mlp_ratio}, {"max_features", c.max_features},
          {"max_classes", c.max_classes}};
}

TfmConfig tfm_config_from_json(const json& j) {
  check_keys(j, {"arch", "layers", "model_dim", "heads", "mlp_ratio", "max_features", "max_classes", "dropout"},
             "tfm config");
  TfmConfig c;
  if (j.contains("arch")) c.arch = parse_arch(j.at("arch").get<std::string>());
  read_opt(j, "layers", c.layers);
  read_opt(j, "model_dim", c.model_dim);
  read_opt(j, "heads", c.heads);
  read_opt(j, "mlp_ratio", c.mlp_ratio);
  read_opt(j, "max_features", c.max_features);
  read_opt(j, "max_classes", c.max_classes);
  if (j.contains("dropout") && j.at("dropout").get<double>() != 0.0) throw ConfigError("dropout must be 0");
  c.validate();
  return c;
}

json to_json(const ConfigRanges& r) {
  return {{"min_features", r.min_features}, {"max_features", r.max_features}, {"min_rows", r.min_rows},
          {"max_rows", r.max_rows},         {"min_classes", r.min_classes},   {"max_classes", r.max_classes},
          {"max_p_cat", r.max_p_cat}};
}

ConfigRanges config_ranges_from_json(const json& j, ConfigRanges r) {
  check_keys(j, {"min_features", "max_features", "min_rows", "max_rows", "min_classes", "max_classes", "max_p_cat"},
             "ranges");
  read_opt(j, "min_features", r.min_features);
  read_opt(j, "max_features", r.max_features);
  read_opt(j, "min_rows", r.min_rows);
  read_opt(j, "max_rows", r.max_rows);
  read_opt(j, "min_classes", r.min_classes);
  read_opt(j, "max_classes", r.max_classes);
  read_opt(j, "max_p_cat", r.max_p_cat);
  r.validate();
  return r;
}

json to_json(const TrainHp& hp) {
  return {{"steps", hp.steps},
          {"batch", hp.batch},
          {"lr", hp.lr},
          {"beta1", hp.beta1},
          {"beta2", hp.beta2},
          {"adam_eps", hp.adam_eps},
          {"clip_norm", hp.clip_norm},
          {"warmup_steps", hp.warmup_steps},
          {"task", std::string(to_string(hp.task))},
          {"ranges", to_json(hp.ranges)},
          {"min_support_frac", hp.min_support_frac},
          {"max_support_frac", hp.max_support_frac}};
}

TrainHp train_hp_from_json(const json& j, TrainHp hp) {
  check_keys(j,
             {"steps", "batch", "lr", "beta1", "beta2", "adam_eps", "clip_norm", "warmup_steps", "task", "ranges",
              "min_support_frac", "max_support_frac"},
             "train config");
  read_opt(j, "steps", hp.steps);
  read_opt(j, "batch", hp.batch);
  read_opt(j, "lr", hp.lr);
  read_opt(j, "beta1", hp.beta1);
  read_opt(j, "beta2", hp.beta2);
  read_opt(j, "adam_eps", hp.adam_eps);
  read_opt(j, "clip_norm", hp.clip_norm);
  read_opt(j, "warmup_steps", hp.warmup_steps);
  if (j.contains("task")) hp.task = parse_task_family(j.at("task").get<std::string>());
  if (j.contains("ranges")) hp.ranges = config_ranges_from_json(j.at("ranges"), hp.ranges);
  read_opt(j, "min_support_frac", hp.min_support_frac);
  read_opt(j, "max_support_frac", hp.max_support_frac);
  hp.validate();
  return hp;
}

json to_json(const Mixture& mix) {
  json j = json::object();
  for (const auto& [kind, w] : mix.weights()) j[std::string(to_string(kind))] = w;
  return j;
}

Mixture mixture_from_json(const json& j) {
  if (!j.is_object() || j.empty()) throw ConfigError("mixture must be a non-empty object of prior weights");
  std::map<PriorKind, double> weights;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw ConfigError("mixture weight for '" + key + "' is not a number");
    weights[parse_prior_kind(key)] = value.get<double>();
  }
  return Mixture(std::move(weights));
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string config_hash(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace priorforge
