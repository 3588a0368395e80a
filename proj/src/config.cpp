#include "aumn/config.hpp"

#include <fstream>

#include "json.hpp"

namespace aumn {

namespace {

using nlohmann::json;

// Pulls key out of the section so leftovers can be flagged as unknown.
template <typename T>
void take(json& section, const char* key, T& out) {
  const auto it = section.find(key);
  if (it == section.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: field '") + key + "' has the wrong type");
  }
  section.erase(it);
}

void reject_unknown(const json& section, const std::string& name) {
  if (!section.empty()) {
    throw ValidationError("config: unknown key '" + name + "." + section.begin().key() + "'");
  }
}

json section_of(json& root, const char* name) {
  const auto it = root.find(name);
  if (it == root.end()) return json::object();
  if (!it->is_object()) {
    throw ValidationError(std::string("config: section '") + name + "' must be an object");
  }
  json out = *it;
  root.erase(it);
  return out;
}

void parse_dims(json sec, const std::string& name, ModelDims& dims) {
  take(sec, "D", dims.D);
  take(sec, "F", dims.F);
  take(sec, "C", dims.C);
  take(sec, "K", dims.K);
  take(sec, "m", dims.m);
  take(sec, "r", dims.r);
  take(sec, "kernel", dims.kernel);
  reject_unknown(sec, name);
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  json root = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) {
      throw ValidationError("config: cannot open " + path.string());
    }
    root = json::parse(in, nullptr, false);
    if (root.is_discarded() || !root.is_object()) {
      throw ValidationError("config: " + path.string() + " is not a JSON object");
    }
  }

  for (const std::string& setting : overrides) {
    const auto eq = setting.find('=');
    const auto dot = setting.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ValidationError("config: override '" + setting + "' is not section.key=value");
    }
    const std::string section = setting.substr(0, dot);
    const std::string key = setting.substr(dot + 1, eq - dot - 1);
    const std::string value = setting.substr(eq + 1);
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // bare strings stay strings
    root[section][key] = parsed;
  }

  RunConfig cfg;

  parse_dims(section_of(root, "model"), "model", cfg.model);

  {
    json sec = section_of(root, "train");
    take(sec, "learning_rate", cfg.train.learning_rate);
    take(sec, "batch_size", cfg.train.batch_size);
    take(sec, "steps", cfg.train.steps);
    take(sec, "seed", cfg.train.seed);
    take(sec, "beta1", cfg.train.beta1);
    take(sec, "beta2", cfg.train.beta2);
    take(sec, "epsilon", cfg.train.epsilon);
    take(sec, "alpha", cfg.train.weights.alpha);
    take(sec, "beta", cfg.train.weights.beta);
    take(sec, "gamma_rgb", cfg.gamma_rgb);
    take(sec, "gamma_flow", cfg.gamma_flow);
    take(sec, "use_diversity", cfg.train.flags.diversity);
    take(sec, "use_homogeneity", cfg.train.flags.homogeneity);
    take(sec, "use_sparsity", cfg.train.flags.sparsity);
    take(sec, "use_self_attention", cfg.train.flags.self_attention);
    reject_unknown(sec, "train");
    cfg.train.weights.gamma = cfg.gamma_rgb;
  }

  {
    json sec = section_of(root, "inference");
    take(sec, "eta_cls", cfg.inference.eta_cls);
    if (sec.contains("eta_act")) {
      const json& v = sec.at("eta_act");
      if (v.is_string() && v.get<std::string>() == "mean") {
        cfg.inference.eta_act_is_mean = true;
      } else if (v.is_number()) {
        cfg.inference.eta_act_is_mean = false;
        cfg.inference.eta_act_value = v.get<Real>();
      } else {
        throw ValidationError("config: inference.eta_act must be \"mean\" or a number");
      }
      sec.erase("eta_act");
    }
    take(sec, "nms_iou", cfg.inference.nms_iou);
    take(sec, "theta", cfg.inference.theta);
    take(sec, "segment_seconds", cfg.inference.segment_seconds);
    reject_unknown(sec, "inference");
  }

  {
    json sec = section_of(root, "synth");
    take(sec, "U", cfg.synth.spec.U);
    take(sec, "C", cfg.synth.spec.C);
    take(sec, "D", cfg.synth.spec.D);
    take(sec, "videos_train", cfg.synth.videos_train);
    take(sec, "videos_test", cfg.synth.videos_test);
    take(sec, "segments_per_video", cfg.synth.spec.segments_per_video);
    take(sec, "instances_per_video", cfg.synth.spec.instances_per_video);
    take(sec, "action_fraction", cfg.synth.spec.action_fraction);
    take(sec, "noise_std", cfg.synth.spec.noise_std);
    take(sec, "seed", cfg.synth.spec.seed);
    take(sec, "units_per_class", cfg.synth.spec.units_per_class);
    reject_unknown(sec, "synth");
    cfg.synth.spec.videos = cfg.synth.videos_train + cfg.synth.videos_test;
    if (cfg.synth.spec.units_per_class.empty()) {
      cfg.synth.spec.units_per_class = default_units_per_class(cfg.synth.spec.C, cfg.synth.spec.U);
    }
  }

  {
    json sec = section_of(root, "gradcheck");
    parse_dims(section_of(sec, "dims"), "gradcheck.dims", cfg.gradcheck.dims);
    take(sec, "segments", cfg.gradcheck.segments);
    take(sec, "batch", cfg.gradcheck.batch);
    take(sec, "instances", cfg.gradcheck.instances);
    take(sec, "h", cfg.gradcheck.h);
    take(sec, "tolerance", cfg.gradcheck.tolerance);
    reject_unknown(sec, "gradcheck");
  }

  {
    json sec = section_of(root, "eval");
    take(sec, "iou_thresholds", cfg.eval_iou_thresholds);
    reject_unknown(sec, "eval");
  }

  if (root.contains("parallelism")) {
    cfg.parallelism = root.at("parallelism").get<int>();
    root.erase("parallelism");
  }
  reject_unknown(root, "(top level)");

  validate(cfg);
  return cfg;
}

LossWeights stream_weights(const RunConfig& cfg, const std::string& stream) {
  LossWeights w = cfg.train.weights;
  if (stream == "flow") {
    w.gamma = cfg.gamma_flow;
  } else if (stream == "rgb") {
    w.gamma = cfg.gamma_rgb;
  } else {
    throw ValidationError("unknown stream '" + stream + "' (expected rgb or flow)");
  }
  return w;
}

void validate(const RunConfig& cfg) {
  validate(cfg.model);
  validate(cfg.train);
  LossWeights flow = cfg.train.weights;
  flow.gamma = cfg.gamma_flow;
  validate(flow);
  validate(cfg.inference);
  validate(cfg.synth.spec);
  if (cfg.synth.videos_train < 1 || cfg.synth.videos_test < 0) {
    throw ValidationError("config: synth.videos_train must be >= 1 and videos_test >= 0");
  }
  validate(cfg.gradcheck.dims);
  if (cfg.gradcheck.segments < 1 || cfg.gradcheck.batch < 1 || cfg.gradcheck.instances < 1) {
    throw ValidationError("config: gradcheck counts must be >= 1");
  }
  if (!(cfg.gradcheck.h > 0) || !(cfg.gradcheck.tolerance > 0)) {
    throw ValidationError("config: gradcheck.h and gradcheck.tolerance must be positive");
  }
  if (cfg.eval_iou_thresholds.empty()) {
    throw ValidationError("config: eval.iou_thresholds must be nonempty");
  }
  for (Real t : cfg.eval_iou_thresholds) {
    if (!(t > 0 && t <= 1)) {
      throw ValidationError("config: eval.iou_thresholds must lie in (0, 1]");
    }
  }
  if (cfg.parallelism < 0) {
    throw ValidationError("config: parallelism must be >= 0");
  }
}

}  // namespace aumn
