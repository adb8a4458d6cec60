#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "eclseq/data.hpp"
#include "eclseq/rng.hpp"
#include "eclseq/tensor.hpp"

namespace eclseq {

class AugmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invasive (sequence-level) kinds: Insert, Delete, SubstituteRandom, Crop,
// Reorder. Mild (feature-level) kinds: Dropout, Perturb, Normalize. MaskPlan
// names the generator's masking scheme and is built via make_mask_plan.
enum class AugKind {
  Insert,
  Delete,
  SubstituteRandom,
  Crop,
  Reorder,
  MaskPlan,
  Dropout,
  Perturb,
  Normalize,
};

AugKind aug_kind_from_string(const std::string& name);
std::string aug_kind_to_string(AugKind kind);
bool is_sequence_kind(AugKind kind);

struct AugSpec {
  AugKind kind = AugKind::SubstituteRandom;
  // Substitution ratio, crop/reorder run fraction, mask ratio, or dropout rate.
  double ratio = 0.2;
  // Perturbation magnitude (L2 norm of the added noise).
  double epsilon = 0.1;
  // Insert/delete re-run count; 0 means the default max(1, floor(0.1 * n)).
  int repeat = 0;
};

// Positions to mask, expressed over the true (non-pad) region: flags[i] masks
// the i-th real item. Exactly clamp(round(gamma * n), 1, n) flags are set.
struct MaskPlan {
  std::vector<bool> flags;
  double gamma = 0.0;

  size_t masked_count() const;
  // Indices into the padded frame, ascending.
  std::vector<size_t> padded_positions(const Sequence& seq) const;
};

// Applies one sequence-level operator. Pure in (seq, spec, rng state, pool):
// the same inputs give a bit-identical output. Never emits pad or mask tokens
// and never exceeds the frame length.
Sequence augment_sequence(const Sequence& seq, const AugSpec& spec, Rng& rng,
                          const Catalog& pool);

MaskPlan make_mask_plan(const Sequence& seq, double gamma, Rng& rng);

// Replaces masked positions with the catalog's mask token.
Sequence apply_mask(const Sequence& seq, const MaskPlan& plan, const Catalog& pool);

// Applies one feature-level operator to a vector or a batch of row vectors.
// Dropout and normalize stay on the autodiff graph; perturb adds noise that is
// treated as a constant in differentiation.
Tensor augment_feature(const Tensor& h, const AugSpec& spec, Rng& rng);

}  // namespace eclseq
