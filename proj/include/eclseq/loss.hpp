#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "eclseq/augment.hpp"
#include "eclseq/data.hpp"
#include "eclseq/model.hpp"
#include "eclseq/tensor.hpp"

namespace eclseq {

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// How generator-produced views enter the contrastive loss (the +pos / +neg
// ablations). None is the standard two-view InfoNCE.
enum class IclGeneratorRole { None, ExtraPositive, ExtraNegative };

// What produces the positive view: stochastic dropout passes (default) or the
// generator's substituted sequence.
enum class IclPositiveSource { Dropout, Generator };

struct LossWeights {
  double tau = 0.05;
  double lambda_icl = 0.3;
  double lambda_gen = 0.2;
  double lambda_rid = 0.1;
  bool rec_active = true;
  bool icl_active = false;
  bool gen_active = false;
  bool rid_active = false;
  IclGeneratorRole icl_generator_role = IclGeneratorRole::None;
  IclPositiveSource icl_positive_source = IclPositiveSource::Dropout;
  // The detection loss starts at the second position by default; this flag
  // scores the first position too.
  bool rid_include_first = false;
};

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> per_term;
};

// Next-item cross-entropy over the full catalog: position t's state predicts
// the item at t+1; the mean runs over the sequence's prediction points.
// Requires at least 2 real items.
Tensor rec_loss(const Tensor& hidden, const Sequence& seq, const EclsrModel& model);

// InfoNCE over aggregated user states. The positive similarity sits against
// in-batch anchor-anchor similarities; generator views can be injected as an
// extra positive (loss averaged over the two positives) or as extra in-batch
// negatives.
Tensor icl_loss(const std::vector<Tensor>& anchors, const std::vector<Tensor>& positives,
                double tau, IclGeneratorRole role = IclGeneratorRole::None,
                const std::vector<Tensor>* generator_views = nullptr);

// Mean masked-position cross-entropy of the generator's logits against the
// original items.
Tensor gen_loss(const Tensor& gen_logits, const MaskPlan& plan, const Sequence& seq);

// Per-position binary cross-entropy of the discriminator's scores: label 1
// where the substituted item equals the original. Scores are clamped to
// [1e-7, 1-1e-7].
Tensor rid_loss(const Tensor& scores, const Sequence& substituted, const Sequence& original,
                bool include_first = false);

// total = rec + lambda_icl*icl + lambda_gen*gen + lambda_rid*rid over the
// active terms. Missing active terms are an error; inactive terms contribute
// exactly nothing (they are not read).
Tensor combine(const std::map<std::string, Tensor>& terms, const LossWeights& weights,
               LossReport* report = nullptr);

}  // namespace eclseq
