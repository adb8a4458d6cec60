#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "eclseq/config.hpp"

namespace eclseq {

// Subcommand bodies. Each writes a resolved-config snapshot (config.json) into
// config.output_dir, uses the cache/checkpoint conventions below, returns a
// process exit code, and throws the owning module's error on failure.
//
//   cache       <output_dir>/cache.bin
//   checkpoint  <output_dir>/checkpoint.ckpt
//   metrics     <output_dir>/metrics.jsonl

// Ingest + k-core + split + cache; prints corpus statistics.
int cmd_preprocess(const RunConfig& config, std::ostream& out);

// Trains config.train.mode on the cached split and reports test metrics at
// the best-validation checkpoint.
int cmd_train(const RunConfig& config, std::ostream& out);

// Ranks the held-out targets with the saved checkpoint; prints validation and
// test metrics (JSON document when json is set).
int cmd_evaluate(const RunConfig& config, bool json, std::ostream& out);

// Applies every augmentation operator to an inline item list, printing
// before/after views (one JSON document when json is set).
int cmd_augment_demo(const RunConfig& config, const std::vector<int>& items, uint64_t seed,
                     bool json, std::ostream& out);

// Runs all six modes with the shared seed; prints a text table and writes the
// same numbers to <output_dir>/ablation.json.
int cmd_ablate(const RunConfig& config, std::ostream& out);

}  // namespace eclseq
