#pragma once

#include <string>

#include "eclseq/optim.hpp"
#include "eclseq/tensor.hpp"

namespace eclseq {

// Single-file checkpoint: an 8-byte little-endian length prefix, a JSON
// manifest mapping tensor name -> {shape, dtype, offset}, then the raw
// little-endian float64 payload. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const ParamMap& params);

// Reads a checkpoint into a fresh map (tensors do not require grad).
ParamMap load_checkpoint(const std::string& path);

// Copies checkpoint values into an existing parameter set; names and shapes
// must match exactly in both directions.
void load_checkpoint_into(const std::string& path, ParamMap& params);

}  // namespace eclseq
