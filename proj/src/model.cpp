#include "eclseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace eclseq {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kAttnMask = -1e9;

}  // namespace

EclsrModel::EclsrModel(ModelConfig cfg) : cfg_(cfg) {
  if (cfg_.item_count < 1) throw TensorError("model: item_count must be >= 1");
  if (cfg_.l_max < 1) throw TensorError("model: l_max must be >= 1");
  if (cfg_.d < cfg_.n_heads || cfg_.d % cfg_.n_heads != 0)
    throw TensorError("model: d must be a positive multiple of n_heads");
  if (!(cfg_.dropout_rate >= 0.0 && cfg_.dropout_rate < 1.0))
    throw TensorError("model: dropout_rate must be in [0,1)");

  const size_t d = cfg_.d, dff = 4 * cfg_.d;
  auto add_param = [this](const std::string& name, Shape shape) {
    params_.emplace(name, Tensor::zeros(std::move(shape), /*requires_grad=*/true));
  };

  add_param("embed.item", {cfg_.item_count + 2, d});
  for (const std::string prefix : {"ube", "gen"}) {
    add_param(prefix + ".pos", {cfg_.l_max, d});
    for (size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l) + ".";
      add_param(lp + "ln1.gain", {d});
      add_param(lp + "ln1.bias", {d});
      add_param(lp + "attn.q", {d, d});
      add_param(lp + "attn.k", {d, d});
      add_param(lp + "attn.v", {d, d});
      add_param(lp + "attn.o", {d, d});
      add_param(lp + "ln2.gain", {d});
      add_param(lp + "ln2.bias", {d});
      add_param(lp + "ffn.w1", {d, dff});
      add_param(lp + "ffn.b1", {dff});
      add_param(lp + "ffn.w2", {dff, d});
      add_param(lp + "ffn.b2", {d});
    }
    add_param(prefix + ".ln_final.gain", {d});
    add_param(prefix + ".ln_final.bias", {d});
  }
  add_param("cd.proj.w", {2 * d, d});
  add_param("cd.proj.b", {d});
  add_param("cd.head.w", {d});
  add_param("cd.head.b", {});
}

void EclsrModel::init_params(Rng& rng) {
  // Map order is name order, so the draw sequence is stable across runs.
  for (auto& [name, t] : params_) {
    const bool is_gain = name.size() >= 4 && name.compare(name.size() - 4, 4, "gain") == 0;
    const bool is_bias = name.size() >= 4 && (name.compare(name.size() - 4, 4, "bias") == 0 ||
                                              name.compare(name.size() - 2, 2, ".b") == 0);
    const bool is_b_vec = name.find(".b1") != std::string::npos ||
                          name.find(".b2") != std::string::npos ||
                          name == "cd.proj.b" || name == "cd.head.b";
    if (is_gain) {
      std::fill(t.data().begin(), t.data().end(), 1.0);
    } else if (is_bias || is_b_vec) {
      std::fill(t.data().begin(), t.data().end(), 0.0);
    } else {
      for (auto& v : t.data()) v = rng.normal(0.0, kInitStd);
    }
    t.zero_grad();
  }
  // Pad row stays all-zero; it never receives gradient because pad states are
  // excluded from attention and from every loss.
  Tensor& emb = params_.at("embed.item");
  const size_t d = cfg_.d;
  for (size_t j = 0; j < d; ++j) emb.data()[j] = 0.0;
}

const Tensor& EclsrModel::p(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw TensorError("model: unknown parameter '" + name + "'");
  return it->second;
}

Tensor EclsrModel::encode_stack(const std::vector<int>& ids, size_t true_length, bool causal,
                                const std::string& prefix, Rng* dropout_rng) const {
  const size_t L = ids.size();
  if (L == 0 || L > cfg_.l_max)
    throw TensorError("encode: frame length " + std::to_string(L) + " outside [1, l_max]");
  if (true_length == 0 || true_length > L)
    throw TensorError("encode: true_length outside frame");
  const size_t d = cfg_.d, H = cfg_.n_heads, dh = d / H;

  Tensor x = embedding_gather(p("embed.item"), ids);
  // Positions are indexed by distance from the sequence end, so a given item
  // suffix gets the same positional rows regardless of how much left padding
  // precedes it.
  std::vector<size_t> pos_rows(L);
  for (size_t t = 0; t < L; ++t) pos_rows[t] = L - 1 - t;
  x = add(x, gather_rows(p(prefix + ".pos"), pos_rows));

  const double keep = 1.0 - cfg_.dropout_rate;
  auto maybe_dropout = [&](Tensor t) {
    if (!dropout_rng || cfg_.dropout_rate == 0.0) return t;
    return dropout(t, sample_dropout_mask(t.shape(), keep, *dropout_rng), keep);
  };
  x = maybe_dropout(x);

  // Additive attention mask: a key must be a real item (or the query itself,
  // which keeps pad rows' softmax finite), and under the causal rule must not
  // lie in the future.
  std::vector<double> maskv(L * L, 0.0);
  const size_t first_real = L - true_length;
  for (size_t q = 0; q < L; ++q)
    for (size_t k = 0; k < L; ++k) {
      bool ok = (k >= first_real) || (k == q);
      if (causal && k > q) ok = false;
      if (!ok) maskv[q * L + k] = kAttnMask;
    }
  const Tensor amask = Tensor::from_data({L, L}, std::move(maskv));

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (size_t layer = 0; layer < cfg_.n_layers; ++layer) {
    const std::string lp = prefix + ".layer" + std::to_string(layer) + ".";
    Tensor a = layer_norm_rows(x, p(lp + "ln1.gain"), p(lp + "ln1.bias"));
    Tensor q = matmul(a, p(lp + "attn.q"));
    Tensor k = matmul(a, p(lp + "attn.k"));
    Tensor v = matmul(a, p(lp + "attn.v"));
    std::vector<Tensor> heads;
    heads.reserve(H);
    for (size_t h = 0; h < H; ++h) {
      Tensor qh = slice_cols(q, h * dh, dh);
      Tensor kh = slice_cols(k, h * dh, dh);
      Tensor vh = slice_cols(v, h * dh, dh);
      Tensor att = softmax_rows(add(affine(matmul_nt(qh, kh), scale, 0.0), amask));
      heads.push_back(matmul(att, vh));
    }
    Tensor o = matmul(concat_cols(heads), p(lp + "attn.o"));
    x = add(x, maybe_dropout(o));

    Tensor f = layer_norm_rows(x, p(lp + "ln2.gain"), p(lp + "ln2.bias"));
    f = add_rowvec(matmul(f, p(lp + "ffn.w1")), p(lp + "ffn.b1"));
    f = relu(f);
    f = add_rowvec(matmul(f, p(lp + "ffn.w2")), p(lp + "ffn.b2"));
    x = add(x, maybe_dropout(f));
  }
  return layer_norm_rows(x, p(prefix + ".ln_final.gain"), p(prefix + ".ln_final.bias"));
}

EncoderOutput EclsrModel::encode_causal(const Sequence& seq, size_t k_window,
                                        Rng* dropout_rng) const {
  validate_sequence(seq);
  if (seq.true_length == 0) throw TensorError("encode_causal: empty sequence");
  EncoderOutput out;
  out.hidden = encode_stack(seq.items, seq.true_length, /*causal=*/true, "ube", dropout_rng);
  out.aggregated = aggregate_last_k(out.hidden, seq.true_length, k_window);
  return out;
}

Tensor EclsrModel::aggregate_last_k(const Tensor& hidden, size_t true_length, size_t k) {
  if (k < 1) throw TensorError("aggregate_last_k: k must be >= 1");
  if (hidden.rank() != 2) throw TensorError("aggregate_last_k: hidden must be [L,d]");
  const size_t L = hidden.shape()[0];
  if (true_length == 0 || true_length > L)
    throw TensorError("aggregate_last_k: true_length outside frame");
  const size_t kk = std::min(k, true_length);
  return mean_axis0(slice_rows(hidden, L - kk, kk));
}

EclsrModel::GenResult EclsrModel::run_generator(const Sequence& seq, const MaskPlan& plan,
                                                Rng* dropout_rng, FillSampling sampling,
                                                Rng* sample_rng) const {
  validate_sequence(seq);
  GenResult res;
  res.masked_positions = plan.padded_positions(seq);
  res.substituted = seq;
  if (res.masked_positions.empty()) return res;  // no-op plan: output equals input

  Sequence masked = seq;
  for (const size_t pos : res.masked_positions) masked.items[pos] = mask_id();
  const Tensor hidden =
      encode_stack(masked.items, masked.true_length, /*causal=*/false, "gen", dropout_rng);
  res.logits = item_logits(gather_rows(hidden, res.masked_positions));

  const size_t n_items = cfg_.item_count;
  for (size_t i = 0; i < res.masked_positions.size(); ++i) {
    const double* row = res.logits.data().data() + i * n_items;
    size_t pick = 0;
    if (sampling == FillSampling::Argmax) {
      for (size_t j = 1; j < n_items; ++j)
        if (row[j] > row[pick]) pick = j;
    } else {
      if (!sample_rng)
        throw TensorError("run_generator: categorical sampling needs a generator");
      double mx = row[0];
      for (size_t j = 1; j < n_items; ++j) mx = std::max(mx, row[j]);
      double total = 0.0;
      std::vector<double> w(n_items);
      for (size_t j = 0; j < n_items; ++j) total += (w[j] = std::exp(row[j] - mx));
      double u = sample_rng->uniform01() * total;
      for (size_t j = 0; j < n_items; ++j) {
        if (u < w[j] || j + 1 == n_items) {
          pick = j;
          break;
        }
        u -= w[j];
      }
    }
    res.substituted.items[res.masked_positions[i]] = static_cast<int>(pick) + 1;
  }
  return res;
}

Sequence EclsrModel::generate_substituted(const Sequence& seq, const MaskPlan& plan,
                                          FillSampling sampling, Rng* sample_rng) const {
  NoGradGuard inference;
  return run_generator(seq, plan, /*dropout_rng=*/nullptr, sampling, sample_rng).substituted;
}

Tensor EclsrModel::discriminate(const Sequence& substituted, const Tensor& condition_hidden,
                                Rng* dropout_rng) const {
  validate_sequence(substituted);
  const size_t L = substituted.items.size(), n = substituted.true_length;
  if (condition_hidden.rank() != 2 || condition_hidden.shape()[0] != L ||
      condition_hidden.shape()[1] != cfg_.d)
    throw TensorError("discriminate: condition shape " + shape_str(condition_hidden.shape()) +
                      " does not match sequence frame [" + std::to_string(L) + "," +
                      std::to_string(cfg_.d) + "]");
  if (n == 0) throw TensorError("discriminate: empty sequence");

  // Shared causal stack re-embeds the substituted sequence.
  Tensor u = encode_stack(substituted.items, n, /*causal=*/true, "ube", dropout_rng);
  Tensor cat = concat_cols({slice_rows(u, L - n, n), slice_rows(condition_hidden, L - n, n)});
  Tensor x = relu(add_rowvec(matmul(cat, p("cd.proj.w")), p("cd.proj.b")));
  Tensor logits = add_scalar_tensor(matvec(x, p("cd.head.w")), p("cd.head.b"));
  return sigmoid(logits);
}

Tensor EclsrModel::item_logits(const Tensor& states) const {
  return matmul_nt(states, slice_rows(p("embed.item"), 1, cfg_.item_count));
}

std::vector<double> EclsrModel::score_items(const std::vector<double>& state) const {
  if (state.size() != cfg_.d) throw TensorError("score_items: state dimension mismatch");
  const Tensor& emb = p("embed.item");
  const size_t rows = cfg_.item_count + 2, d = cfg_.d;
  std::vector<double> scores(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* e = emb.data().data() + r * d;
    double acc = 0.0;
    for (size_t j = 0; j < d; ++j) acc += e[j] * state[j];
    scores[r] = acc;
  }
  scores[0] = -std::numeric_limits<double>::infinity();
  scores[rows - 1] = -std::numeric_limits<double>::infinity();
  return scores;
}

}  // namespace eclseq
