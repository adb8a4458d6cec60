#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "eclseq/augment.hpp"
#include "eclseq/data.hpp"
#include "eclseq/model.hpp"
#include "eclseq/pipeline.hpp"

namespace eclseq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string path;
  Delimiter format = Delimiter::Auto;
  size_t l_max = 50;
  size_t min_count = 5;  // k-core threshold
};

// The config surface of the model; item_count and frame length are filled in
// from the data cache at run time.
struct ModelSection {
  size_t d = 64;
  size_t n_layers = 2;
  size_t n_heads = 2;
  double dropout_rate = 0.5;
};

// Operator choices for augment-demo and for tests; training's own views come
// from model dropout and the generator.
struct AugConfig {
  AugSpec invasive{AugKind::SubstituteRandom, 0.2, 0.1, 0};
  AugSpec mild{AugKind::Dropout, 0.2, 0.1, 0};
};

struct EvalConfig {
  std::vector<size_t> ks = {10, 20};
};

struct RunConfig {
  DatasetConfig dataset;
  ModelSection model;
  TrainConfig train;
  AugConfig aug;
  EvalConfig eval;
  std::string output_dir = "out";

  ModelConfig resolve_model(size_t item_count, size_t l_max) const;
};

std::string sampling_to_string(FillSampling sampling);
FillSampling sampling_from_string(const std::string& name);

// Parses a JSON run config. Absent keys take their defaults; unknown keys are
// a hard error. parse(serialize(c)) reproduces c exactly.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& config);

}  // namespace eclseq
