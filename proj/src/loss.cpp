#include "eclseq/loss.hpp"

#include <algorithm>
#include <cmath>

namespace eclseq {

namespace {

[[noreturn]] void fail(const std::string& what) { throw LossError(what); }

std::vector<size_t> iota_index(size_t n) {
  std::vector<size_t> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

Tensor rec_loss(const Tensor& hidden, const Sequence& seq, const EclsrModel& model) {
  validate_sequence(seq);
  const size_t n = seq.true_length;
  if (n < 2) fail("rec_loss: needs at least 2 real items (got " + std::to_string(n) + ")");
  const size_t L = seq.items.size();
  if (hidden.rank() != 2 || hidden.shape()[0] != L)
    fail("rec_loss: hidden shape " + shape_str(hidden.shape()) + " does not match frame");

  const Tensor states = slice_rows(hidden, L - n, n);
  const Tensor lp = log_softmax_rows(model.item_logits(states));
  const std::vector<int> items = real_items(seq);
  std::vector<size_t> targets(n - 1);
  for (size_t t = 0; t + 1 < n; ++t) targets[t] = static_cast<size_t>(items[t + 1]) - 1;
  const Tensor picked = gather_cols(slice_rows(lp, 0, n - 1), targets);
  return affine(mean_all(picked), -1.0, 0.0);
}

Tensor icl_loss(const std::vector<Tensor>& anchors, const std::vector<Tensor>& positives,
                double tau, IclGeneratorRole role,
                const std::vector<Tensor>* generator_views) {
  const size_t B = anchors.size();
  if (B < 2) fail("icl_loss: batch size must be >= 2 for in-batch negatives");
  if (positives.size() != B) fail("icl_loss: anchors and positives differ in count");
  if (!(tau > 0.0)) fail("icl_loss: tau must be > 0");
  if (role != IclGeneratorRole::None &&
      (!generator_views || generator_views->size() != B))
    fail("icl_loss: generator views missing or miscounted for the requested role");

  const Tensor an = l2_normalize_rows(stack_rows(anchors));
  const Tensor pn = l2_normalize_rows(stack_rows(positives));
  const Tensor sim_aa = matmul_nt(an, an);  // cosine since rows are unit length
  const std::vector<size_t> diag = iota_index(B);

  // Replace the diagonal (self-similarity) with the positive similarity; off-
  // diagonal entries are the in-batch anchor negatives.
  auto nce = [&](const Tensor& pos_sims) {
    Tensor z = add(sub(sim_aa, diag_embed(gather_cols(sim_aa, diag))), diag_embed(pos_sims));
    if (role == IclGeneratorRole::ExtraNegative) {
      const Tensor gn = l2_normalize_rows(stack_rows(*generator_views));
      z = concat_cols({z, matmul_nt(an, gn)});
    }
    const Tensor lp = log_softmax_rows(affine(z, 1.0 / tau, 0.0));
    return affine(mean_all(gather_cols(lp, diag)), -1.0, 0.0);
  };

  const Tensor base = nce(rowwise_dot(an, pn));
  if (role != IclGeneratorRole::ExtraPositive) return base;
  const Tensor gn = l2_normalize_rows(stack_rows(*generator_views));
  return affine(add(base, nce(rowwise_dot(an, gn))), 0.5, 0.0);
}

Tensor gen_loss(const Tensor& gen_logits, const MaskPlan& plan, const Sequence& seq) {
  validate_sequence(seq);
  const std::vector<size_t> positions = plan.padded_positions(seq);
  if (positions.empty()) fail("gen_loss: empty mask set");
  if (!gen_logits.defined() || gen_logits.rank() != 2 ||
      gen_logits.shape()[0] != positions.size())
    fail("gen_loss: logits must have one row per masked position");

  std::vector<size_t> targets(positions.size());
  for (size_t i = 0; i < positions.size(); ++i) {
    const int item = seq.items[positions[i]];
    if (item < 1 || static_cast<size_t>(item) > gen_logits.shape()[1])
      fail("gen_loss: masked position holds no real item");
    targets[i] = static_cast<size_t>(item) - 1;
  }
  const Tensor picked = gather_cols(log_softmax_rows(gen_logits), targets);
  return affine(mean_all(picked), -1.0, 0.0);
}

Tensor rid_loss(const Tensor& scores, const Sequence& substituted, const Sequence& original,
                bool include_first) {
  validate_sequence(substituted);
  validate_sequence(original);
  if (substituted.items.size() != original.items.size() ||
      substituted.true_length != original.true_length)
    fail("rid_loss: sequence length mismatch");
  const size_t n = substituted.true_length;
  if (scores.rank() != 1 || scores.shape()[0] != n)
    fail("rid_loss: scores shape " + shape_str(scores.shape()) + " does not cover " +
         std::to_string(n) + " positions");

  const std::vector<int> sub = real_items(substituted);
  const std::vector<int> orig = real_items(original);
  const size_t start = include_first ? 0 : 1;
  if (start >= n) fail("rid_loss: no scored positions (sequence too short)");

  std::vector<double> y(n, 0.0), w(n, 0.0);
  for (size_t i = start; i < n; ++i) {
    y[i] = sub[i] == orig[i] ? 1.0 : 0.0;
    w[i] = 1.0;
  }
  const double count = static_cast<double>(n - start);
  const Tensor yt = Tensor::from_data({n}, std::move(y));
  const Tensor yt_neg = affine(yt, -1.0, 1.0);  // 1 - y
  const Tensor wt = Tensor::from_data({n}, std::move(w));

  const Tensor prob = clamp(scores, 1e-7, 1.0 - 1e-7);
  const Tensor ll =
      add(mul(yt, log_elem(prob)), mul(yt_neg, log_elem(affine(prob, -1.0, 1.0))));
  return affine(sum_all(mul(ll, wt)), -1.0 / count, 0.0);
}

Tensor combine(const std::map<std::string, Tensor>& terms, const LossWeights& weights,
               LossReport* report) {
  if (!(weights.tau > 0.0)) fail("combine: tau must be > 0");
  Tensor total;
  LossReport rep;
  auto add_term = [&](const char* name, bool active, double weight) {
    if (!active) return;
    auto it = terms.find(name);
    if (it == terms.end()) fail(std::string("combine: missing active term '") + name + "'");
    const Tensor& t = it->second;
    if (t.numel() != 1) fail(std::string("combine: term '") + name + "' is not scalar");
    rep.per_term[name] = t.value();
    const Tensor scaled = weight == 1.0 ? t : affine(t, weight, 0.0);
    total = total.defined() ? add(total, scaled) : scaled;
  };
  add_term("rec", weights.rec_active, 1.0);
  add_term("icl", weights.icl_active, weights.lambda_icl);
  add_term("gen", weights.gen_active, weights.lambda_gen);
  add_term("rid", weights.rid_active, weights.lambda_rid);
  if (!total.defined()) fail("combine: no active terms");
  rep.total = total.value();
  if (report) *report = std::move(rep);
  return total;
}

}  // namespace eclseq
