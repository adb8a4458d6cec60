#include "eclseq/augment.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace eclseq {

namespace {

[[noreturn]] void fail(const std::string& what) { throw AugmentError(what); }

int default_repeat(size_t n) {
  return std::max(1, static_cast<int>(static_cast<double>(n) * 0.1));
}

// Uniform draw from catalog items outside `exclude`.
int draw_outside(const std::unordered_set<int>& exclude, const Catalog& pool, Rng& rng) {
  const size_t total = pool.item_count;
  if (exclude.size() >= total) fail("augment: no catalog item outside the sequence to draw");
  // Rejection sampling; the exclusion set is tiny relative to the catalog in
  // realistic data, and bounded retries keep pathological cases safe.
  for (int tries = 0; tries < 10000; ++tries) {
    const int cand = static_cast<int>(rng.uniform_below(total)) + 1;
    if (!exclude.count(cand)) return cand;
  }
  // Dense fallback: enumerate survivors and pick one uniformly.
  std::vector<int> survivors;
  for (size_t i = 1; i <= total; ++i)
    if (!exclude.count(static_cast<int>(i))) survivors.push_back(static_cast<int>(i));
  return survivors[rng.uniform_below(survivors.size())];
}

size_t run_length(double alpha, size_t n) {
  const auto r = static_cast<size_t>(std::llround(alpha * static_cast<double>(n)));
  return std::clamp<size_t>(r, 1, n);
}

}  // namespace

AugKind aug_kind_from_string(const std::string& name) {
  if (name == "insert") return AugKind::Insert;
  if (name == "delete") return AugKind::Delete;
  if (name == "substitute_random") return AugKind::SubstituteRandom;
  if (name == "crop") return AugKind::Crop;
  if (name == "reorder") return AugKind::Reorder;
  if (name == "mask_plan") return AugKind::MaskPlan;
  if (name == "dropout") return AugKind::Dropout;
  if (name == "perturb") return AugKind::Perturb;
  if (name == "normalize") return AugKind::Normalize;
  fail("unknown augmentation kind '" + name + "'");
}

std::string aug_kind_to_string(AugKind kind) {
  switch (kind) {
    case AugKind::Insert: return "insert";
    case AugKind::Delete: return "delete";
    case AugKind::SubstituteRandom: return "substitute_random";
    case AugKind::Crop: return "crop";
    case AugKind::Reorder: return "reorder";
    case AugKind::MaskPlan: return "mask_plan";
    case AugKind::Dropout: return "dropout";
    case AugKind::Perturb: return "perturb";
    case AugKind::Normalize: return "normalize";
  }
  fail("bad augmentation kind enum");
}

bool is_sequence_kind(AugKind kind) {
  switch (kind) {
    case AugKind::Insert:
    case AugKind::Delete:
    case AugKind::SubstituteRandom:
    case AugKind::Crop:
    case AugKind::Reorder:
      return true;
    default:
      return false;
  }
}

size_t MaskPlan::masked_count() const {
  size_t c = 0;
  for (const bool f : flags) c += f ? 1 : 0;
  return c;
}

std::vector<size_t> MaskPlan::padded_positions(const Sequence& seq) const {
  if (flags.size() != seq.true_length)
    fail("mask plan length " + std::to_string(flags.size()) + " does not match true length " +
         std::to_string(seq.true_length));
  const size_t base = seq.l_max() - seq.true_length;
  std::vector<size_t> out;
  for (size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) out.push_back(base + i);
  return out;
}

Sequence augment_sequence(const Sequence& seq, const AugSpec& spec, Rng& rng,
                          const Catalog& pool) {
  validate_sequence(seq);
  if (!is_sequence_kind(spec.kind))
    fail("augment_sequence: '" + aug_kind_to_string(spec.kind) + "' is not a sequence-level kind");
  if (seq.true_length < 2) fail("augment_sequence: needs true_length >= 2");
  if (!(spec.ratio > 0.0 && spec.ratio <= 1.0)) fail("augment_sequence: ratio must be in (0,1]");

  std::vector<int> items = real_items(seq);
  const size_t n = items.size();
  const size_t l_max = seq.l_max();

  switch (spec.kind) {
    case AugKind::Insert: {
      const int reps = spec.repeat > 0 ? spec.repeat : default_repeat(n);
      for (int r = 0; r < reps; ++r) {
        std::unordered_set<int> exclude(items.begin(), items.end());
        const int item = draw_outside(exclude, pool, rng);
        const size_t pos = rng.uniform_below(items.size() + 1);
        items.insert(items.begin() + pos, item);
      }
      break;
    }
    case AugKind::Delete: {
      const int reps = spec.repeat > 0 ? spec.repeat : default_repeat(n);
      for (int r = 0; r < reps && items.size() > 1; ++r)
        items.erase(items.begin() + rng.uniform_below(items.size()));
      break;
    }
    case AugKind::SubstituteRandom: {
      const size_t count =
          std::max<size_t>(1, static_cast<size_t>(spec.ratio * static_cast<double>(n)));
      const std::unordered_set<int> original(items.begin(), items.end());
      const auto positions = rng.sample_without_replacement(n, count);
      for (const size_t p : positions) items[p] = draw_outside(original, pool, rng);
      break;
    }
    case AugKind::Crop: {
      const size_t len = run_length(spec.ratio, n);
      const size_t start = rng.uniform_below(n - len + 1);
      items = std::vector<int>(items.begin() + start, items.begin() + start + len);
      break;
    }
    case AugKind::Reorder: {
      const size_t len = run_length(spec.ratio, n);
      const size_t start = rng.uniform_below(n - len + 1);
      std::vector<int> window(items.begin() + start, items.begin() + start + len);
      rng.shuffle(window);
      std::copy(window.begin(), window.end(), items.begin() + start);
      break;
    }
    default:
      fail("unreachable");
  }

  return make_sequence(seq.user_id, items, l_max);
}

MaskPlan make_mask_plan(const Sequence& seq, double gamma, Rng& rng) {
  validate_sequence(seq);
  if (!(gamma > 0.0 && gamma < 1.0)) fail("make_mask_plan: gamma must be in (0,1)");
  if (seq.true_length < 1) fail("make_mask_plan: empty sequence");
  const size_t n = seq.true_length;
  const size_t count = std::clamp<size_t>(
      static_cast<size_t>(std::llround(gamma * static_cast<double>(n))), 1, n);
  MaskPlan plan;
  plan.gamma = gamma;
  plan.flags.assign(n, false);
  for (const size_t i : rng.sample_without_replacement(n, count)) plan.flags[i] = true;
  return plan;
}

Sequence apply_mask(const Sequence& seq, const MaskPlan& plan, const Catalog& pool) {
  Sequence out = seq;
  for (const size_t p : plan.padded_positions(seq)) out.items[p] = pool.mask_id();
  return out;
}

Tensor augment_feature(const Tensor& h, const AugSpec& spec, Rng& rng) {
  if (h.rank() != 1 && h.rank() != 2)
    fail("augment_feature: expected a vector or batch of vectors, got " + shape_str(h.shape()));
  switch (spec.kind) {
    case AugKind::Normalize:
      return l2_normalize_rows(h);
    case AugKind::Dropout: {
      if (!(spec.ratio > 0.0 && spec.ratio < 1.0))
        fail("augment_feature: dropout rate must be in (0,1)");
      const double keep = 1.0 - spec.ratio;
      const Tensor mask = sample_dropout_mask(h.shape(), keep, rng);
      return dropout(h, mask, keep);
    }
    case AugKind::Perturb: {
      if (!(spec.epsilon > 0.0)) fail("augment_feature: perturb needs epsilon > 0");
      const size_t rows = h.rank() == 2 ? h.shape()[0] : 1;
      const size_t cols = h.rank() == 2 ? h.shape()[1] : h.shape()[0];
      std::vector<double> delta(h.numel());
      for (size_t r = 0; r < rows; ++r) {
        // Fresh elementwise uniform(0,1) noise per vector, scaled along h and
        // renormalized so the added offset has L2 norm exactly epsilon.
        double norm2 = 0.0;
        for (size_t c = 0; c < cols; ++c) {
          const double d = rng.uniform01() * h.data()[r * cols + c];
          delta[r * cols + c] = d;
          norm2 += d * d;
        }
        if (norm2 == 0.0) fail("augment_feature: perturb of a zero vector is undefined");
        const double scale = spec.epsilon / std::sqrt(norm2);
        for (size_t c = 0; c < cols; ++c) delta[r * cols + c] *= scale;
      }
      return add(h, Tensor::from_data(h.shape(), std::move(delta)));
    }
    default:
      fail("augment_feature: '" + aug_kind_to_string(spec.kind) + "' is not a feature-level kind");
  }
}

}  // namespace eclseq
