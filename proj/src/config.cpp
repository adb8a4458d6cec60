#include "eclseq/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <nlohmann/json.hpp>

namespace eclseq {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& what) { throw ConfigError(what); }

void expect_keys(const json& obj, const std::string& section,
                 std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) fail("config section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    if (!known) fail("unknown config key '" + section + "." + key + "'");
  }
}

double get_number(const json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) fail(std::string("config key '") + key + "' must be a number");
  return v.get<double>();
}

size_t get_count(const json& obj, const char* key, size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<int64_t>() < 0)
    fail(std::string("config key '") + key + "' must be a non-negative integer");
  return v.get<size_t>();
}

std::string get_string(const json& obj, const char* key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) fail(std::string("config key '") + key + "' must be a string");
  return v.get<std::string>();
}

AugSpec parse_aug_spec(const json& obj, const std::string& section, const AugSpec& defaults) {
  expect_keys(obj, section, {"kind", "ratio", "epsilon", "repeat"});
  AugSpec spec = defaults;
  if (obj.contains("kind")) spec.kind = aug_kind_from_string(obj.at("kind").get<std::string>());
  spec.ratio = get_number(obj, "ratio", defaults.ratio);
  spec.epsilon = get_number(obj, "epsilon", defaults.epsilon);
  spec.repeat = static_cast<int>(get_count(obj, "repeat", static_cast<size_t>(defaults.repeat)));
  return spec;
}

ordered_json aug_spec_json(const AugSpec& spec) {
  ordered_json j;
  j["kind"] = aug_kind_to_string(spec.kind);
  j["ratio"] = spec.ratio;
  j["epsilon"] = spec.epsilon;
  j["repeat"] = spec.repeat;
  return j;
}

}  // namespace

ModelConfig RunConfig::resolve_model(size_t item_count, size_t l_max) const {
  ModelConfig cfg;
  cfg.item_count = item_count;
  cfg.l_max = l_max;
  cfg.d = model.d;
  cfg.n_layers = model.n_layers;
  cfg.n_heads = model.n_heads;
  cfg.dropout_rate = model.dropout_rate;
  return cfg;
}

std::string sampling_to_string(FillSampling sampling) {
  return sampling == FillSampling::Argmax ? "argmax" : "categorical";
}

FillSampling sampling_from_string(const std::string& name) {
  if (name == "argmax") return FillSampling::Argmax;
  if (name == "categorical") return FillSampling::Categorical;
  fail("unknown sampling '" + name + "' (expected argmax|categorical)");
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    fail(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig config;
  try {
    expect_keys(root, "(root)", {"dataset", "model", "train", "aug", "eval", "output_dir"});

    if (root.contains("dataset")) {
      const json& d = root.at("dataset");
      expect_keys(d, "dataset", {"path", "format", "l_max", "min_count"});
      config.dataset.path = get_string(d, "path", config.dataset.path);
      if (d.contains("format"))
        config.dataset.format = delimiter_from_string(d.at("format").get<std::string>());
      config.dataset.l_max = get_count(d, "l_max", config.dataset.l_max);
      config.dataset.min_count = get_count(d, "min_count", config.dataset.min_count);
    }

    if (root.contains("model")) {
      const json& m = root.at("model");
      expect_keys(m, "model", {"d", "n_layers", "n_heads", "dropout_rate"});
      config.model.d = get_count(m, "d", config.model.d);
      config.model.n_layers = get_count(m, "n_layers", config.model.n_layers);
      config.model.n_heads = get_count(m, "n_heads", config.model.n_heads);
      config.model.dropout_rate = get_number(m, "dropout_rate", config.model.dropout_rate);
    }

    if (root.contains("train")) {
      const json& t = root.at("train");
      expect_keys(t, "train",
                  {"mode", "epochs", "lr", "batch_size", "gen_freeze_epoch", "k_window",
                   "gamma", "tau", "lambda_icl", "lambda_gen", "lambda_rid", "seed",
                   "sampling"});
      if (t.contains("mode")) config.train.mode = mode_from_string(t.at("mode").get<std::string>());
      config.train.epochs = get_count(t, "epochs", config.train.epochs);
      config.train.lr = get_number(t, "lr", config.train.lr);
      config.train.batch_size = get_count(t, "batch_size", config.train.batch_size);
      config.train.gen_freeze_epoch =
          get_count(t, "gen_freeze_epoch", config.train.gen_freeze_epoch);
      config.train.k_window = get_count(t, "k_window", config.train.k_window);
      config.train.gamma = get_number(t, "gamma", config.train.gamma);
      config.train.weights.tau = get_number(t, "tau", config.train.weights.tau);
      config.train.weights.lambda_icl =
          get_number(t, "lambda_icl", config.train.weights.lambda_icl);
      config.train.weights.lambda_gen =
          get_number(t, "lambda_gen", config.train.weights.lambda_gen);
      config.train.weights.lambda_rid =
          get_number(t, "lambda_rid", config.train.weights.lambda_rid);
      config.train.seed = get_count(t, "seed", config.train.seed);
      if (t.contains("sampling"))
        config.train.sampling = sampling_from_string(t.at("sampling").get<std::string>());
    }

    if (root.contains("aug")) {
      const json& a = root.at("aug");
      expect_keys(a, "aug", {"invasive", "mild"});
      if (a.contains("invasive"))
        config.aug.invasive = parse_aug_spec(a.at("invasive"), "aug.invasive", config.aug.invasive);
      if (a.contains("mild"))
        config.aug.mild = parse_aug_spec(a.at("mild"), "aug.mild", config.aug.mild);
      if (is_sequence_kind(config.aug.mild.kind))
        fail("aug.mild.kind must be a feature-level kind (dropout|perturb|normalize)");
      if (!is_sequence_kind(config.aug.invasive.kind))
        fail("aug.invasive.kind must be a sequence-level kind");
    }

    if (root.contains("eval")) {
      const json& e = root.at("eval");
      expect_keys(e, "eval", {"ks"});
      if (e.contains("ks")) {
        const json& ks = e.at("ks");
        if (!ks.is_array() || ks.empty()) fail("eval.ks must be a non-empty array");
        config.eval.ks.clear();
        for (const json& k : ks) {
          if (!k.is_number_integer() || k.get<int64_t>() < 1)
            fail("eval.ks entries must be positive integers");
          config.eval.ks.push_back(k.get<size_t>());
        }
      }
    }

    config.output_dir = get_string(root, "output_dir", config.output_dir);
  } catch (const json::exception& e) {
    fail(std::string("malformed config value: ") + e.what());
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& config) {
  ordered_json root;
  ordered_json dataset;
  dataset["path"] = config.dataset.path;
  dataset["format"] = delimiter_to_string(config.dataset.format);
  dataset["l_max"] = config.dataset.l_max;
  dataset["min_count"] = config.dataset.min_count;
  root["dataset"] = dataset;

  ordered_json model;
  model["d"] = config.model.d;
  model["n_layers"] = config.model.n_layers;
  model["n_heads"] = config.model.n_heads;
  model["dropout_rate"] = config.model.dropout_rate;
  root["model"] = model;

  ordered_json train;
  train["mode"] = mode_to_string(config.train.mode);
  train["epochs"] = config.train.epochs;
  train["lr"] = config.train.lr;
  train["batch_size"] = config.train.batch_size;
  train["gen_freeze_epoch"] = config.train.gen_freeze_epoch;
  train["k_window"] = config.train.k_window;
  train["gamma"] = config.train.gamma;
  train["tau"] = config.train.weights.tau;
  train["lambda_icl"] = config.train.weights.lambda_icl;
  train["lambda_gen"] = config.train.weights.lambda_gen;
  train["lambda_rid"] = config.train.weights.lambda_rid;
  train["seed"] = config.train.seed;
  train["sampling"] = sampling_to_string(config.train.sampling);
  root["train"] = train;

  ordered_json aug;
  aug["invasive"] = aug_spec_json(config.aug.invasive);
  aug["mild"] = aug_spec_json(config.aug.mild);
  root["aug"] = aug;

  ordered_json eval;
  eval["ks"] = config.eval.ks;
  root["eval"] = eval;

  root["output_dir"] = config.output_dir;
  return root.dump(2) + "\n";
}

}  // namespace eclseq
