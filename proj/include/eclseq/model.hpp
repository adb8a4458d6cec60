#pragma once

#include <string>
#include <vector>

#include "eclseq/augment.hpp"
#include "eclseq/data.hpp"
#include "eclseq/optim.hpp"
#include "eclseq/rng.hpp"
#include "eclseq/tensor.hpp"

namespace eclseq {

struct ModelConfig {
  size_t item_count = 0;  // real items use ids 1..item_count
  size_t l_max = 0;
  size_t d = 64;
  size_t n_layers = 2;
  size_t n_heads = 2;
  double dropout_rate = 0.5;
};

struct EncoderOutput {
  Tensor hidden;      // [l_max, d] per-position states
  Tensor aggregated;  // [d] mean of the last-k non-pad states
};

enum class FillSampling { Argmax, Categorical };

// Shared embedding table, causal self-attention encoder (UBE), bidirectional
// masked-item generator, and a conditional discriminator that reuses the UBE
// blocks plus a small detection head. Parameters live in a named map; the
// discriminator's encoder weights ARE the UBE weights (one storage).
class EclsrModel {
 public:
  explicit EclsrModel(ModelConfig cfg);

  void init_params(Rng& rng);

  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  int mask_id() const { return static_cast<int>(cfg_.item_count) + 1; }

  // Causal encoding of a (possibly shorter-framed) padded sequence. Position
  // t attends to earlier real positions only; pad keys are excluded. Passing
  // a dropout generator enables the training path; nullptr is inference.
  EncoderOutput encode_causal(const Sequence& seq, size_t k_window, Rng* dropout_rng) const;

  // Mean of the last min(k, true_length) non-pad rows of `hidden`.
  static Tensor aggregate_last_k(const Tensor& hidden, size_t true_length, size_t k);

  struct GenResult {
    Tensor logits;                        // [masked, item_count]; undefined when no mask
    std::vector<size_t> masked_positions; // padded-frame indices, ascending
    Sequence substituted;                 // masked slots refilled by the generator
  };

  // Bidirectional generator pass over the mask-token sequence, plus the
  // discrete refill. The refill reads logit values only, so no gradient leaks
  // through the sampled sequence. sample_rng is needed only for Categorical.
  GenResult run_generator(const Sequence& seq, const MaskPlan& plan, Rng* dropout_rng,
                          FillSampling sampling = FillSampling::Argmax,
                          Rng* sample_rng = nullptr) const;

  Sequence generate_substituted(const Sequence& seq, const MaskPlan& plan,
                                FillSampling sampling = FillSampling::Argmax,
                                Rng* sample_rng = nullptr) const;

  // Per-position replaced-vs-original probabilities over the non-pad region,
  // conditioned on the original sequence's UBE states ([l_max, d]). Gradients
  // flow into the shared encoder blocks and into the condition.
  Tensor discriminate(const Sequence& substituted, const Tensor& condition_hidden,
                      Rng* dropout_rng) const;

  // [m, d] states -> [m, item_count] logits through the tied embedding table
  // (real item rows only).
  Tensor item_logits(const Tensor& states) const;

  // Full-catalog ranking scores for one state: index j holds the dot product
  // with item j's embedding; pad (0) and mask (item_count+1) get -inf.
  std::vector<double> score_items(const std::vector<double>& state) const;

 private:
  Tensor encode_stack(const std::vector<int>& ids, size_t true_length, bool causal,
                      const std::string& prefix, Rng* dropout_rng) const;
  const Tensor& p(const std::string& name) const;

  ModelConfig cfg_;
  ParamMap params_;
};

}  // namespace eclseq
