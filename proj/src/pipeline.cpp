#include "eclseq/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "eclseq/augment.hpp"
#include "eclseq/checkpoint.hpp"

namespace eclseq {

namespace {

using ordered_json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& what) { throw PipelineError(what); }

Tensor mean_of(const std::vector<Tensor>& scalars) {
  Tensor total = scalars.front();
  for (size_t i = 1; i < scalars.size(); ++i) total = add(total, scalars[i]);
  return scalars.size() == 1 ? total
                             : affine(total, 1.0 / static_cast<double>(scalars.size()), 0.0);
}

size_t eval_workers() {
  const char* env = std::getenv("ECLSEQ_THREADS");
  if (!env || !*env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  return v > 1 ? static_cast<size_t>(v) : 1;
}

}  // namespace

Mode mode_from_string(const std::string& name) {
  for (const Mode m : all_modes())
    if (mode_to_string(m) == name) return m;
  fail("unknown mode '" + name +
       "' (expected sasrec|ridl_sr|icl_sr|icl_sr_pos|icl_sr_neg|ecl_sr)");
}

std::string mode_to_string(Mode mode) {
  switch (mode) {
    case Mode::Sasrec: return "sasrec";
    case Mode::RidlSr: return "ridl_sr";
    case Mode::IclSr: return "icl_sr";
    case Mode::IclSrPos: return "icl_sr_pos";
    case Mode::IclSrNeg: return "icl_sr_neg";
    case Mode::EclSr: return "ecl_sr";
  }
  fail("bad mode enum");
}

const std::vector<Mode>& all_modes() {
  static const std::vector<Mode> modes = {Mode::Sasrec, Mode::RidlSr,   Mode::IclSr,
                                          Mode::IclSrPos, Mode::IclSrNeg, Mode::EclSr};
  return modes;
}

LossWeights resolve_weights(const TrainConfig& config) {
  LossWeights w = config.weights;
  w.rec_active = true;
  w.icl_active = false;
  w.gen_active = false;
  w.rid_active = false;
  w.icl_generator_role = IclGeneratorRole::None;
  switch (config.mode) {
    case Mode::Sasrec:
      break;
    case Mode::RidlSr:
      w.gen_active = w.rid_active = true;
      break;
    case Mode::IclSr:
      w.icl_active = true;
      break;
    case Mode::IclSrPos:
      w.icl_active = w.gen_active = true;
      w.icl_generator_role = IclGeneratorRole::ExtraPositive;
      break;
    case Mode::IclSrNeg:
      w.icl_active = w.gen_active = true;
      w.icl_generator_role = IclGeneratorRole::ExtraNegative;
      break;
    case Mode::EclSr:
      w.icl_active = w.gen_active = w.rid_active = true;
      break;
  }
  // A zero weight removes the term entirely so that e.g. ecl_sr with all
  // lambdas zero follows the sasrec trajectory bit for bit.
  if (w.lambda_icl == 0.0) w.icl_active = false;
  if (w.lambda_gen == 0.0) w.gen_active = false;
  if (w.lambda_rid == 0.0) w.rid_active = false;
  return w;
}

LossReport train_step(EclsrModel& model, const std::vector<Sequence>& batch,
                      const TrainConfig& config, const StepContext& ctx, Adam& opt) {
  if (batch.empty()) fail("train_step: empty batch");
  LossWeights w = resolve_weights(config);
  const bool gen_frozen = ctx.epoch > config.gen_freeze_epoch;
  // Past the freeze point the generator only produces sequences; its loss no
  // longer trains anything, so the term goes inactive.
  if (gen_frozen) w.gen_active = false;

  std::vector<const Sequence*> seqs;
  for (const auto& s : batch)
    if (s.true_length >= 2) seqs.push_back(&s);
  if (seqs.empty()) return {};
  // The contrastive term needs in-batch negatives; a trailing 1-sequence
  // batch simply skips it.
  if (seqs.size() < 2) w.icl_active = false;

  const bool need_generator =
      w.gen_active || w.rid_active ||
      (w.icl_active && (w.icl_generator_role != IclGeneratorRole::None ||
                        w.icl_positive_source == IclPositiveSource::Generator));

  Rng rec_rng = derive_stream(config.seed, "rec", ctx.epoch, ctx.step);
  Rng icl_rng = derive_stream(config.seed, "icl", ctx.epoch, ctx.step);
  Rng gen_rng = derive_stream(config.seed, "gen", ctx.epoch, ctx.step);
  Rng rid_rng = derive_stream(config.seed, "rid", ctx.epoch, ctx.step);

  std::map<std::string, Tensor> terms;

  // Recommendation branch; its hidden states double as the RID condition.
  std::vector<Tensor> rec_losses, conditions;
  for (const Sequence* s : seqs) {
    EncoderOutput enc = model.encode_causal(*s, config.k_window, &rec_rng);
    rec_losses.push_back(rec_loss(enc.hidden, *s, model));
    if (w.rid_active) conditions.push_back(enc.hidden);
  }
  terms.emplace("rec", mean_of(rec_losses));

  // Generator branch: mask plans and substituted sequences.
  std::vector<MaskPlan> plans;
  std::vector<EclsrModel::GenResult> gens;
  if (need_generator) {
    for (const Sequence* s : seqs) {
      plans.push_back(make_mask_plan(*s, config.gamma, gen_rng));
      Rng* sample_rng = config.sampling == FillSampling::Categorical ? &gen_rng : nullptr;
      if (gen_frozen) {
        NoGradGuard inference;
        gens.push_back(
            model.run_generator(*s, plans.back(), nullptr, config.sampling, sample_rng));
      } else {
        gens.push_back(
            model.run_generator(*s, plans.back(), &gen_rng, config.sampling, sample_rng));
      }
    }
    if (w.gen_active) {
      std::vector<Tensor> gen_losses;
      for (size_t i = 0; i < seqs.size(); ++i)
        gen_losses.push_back(gen_loss(gens[i].logits, plans[i], *seqs[i]));
      terms.emplace("gen", mean_of(gen_losses));
    }
  }

  // Contrastive branch: two stochastic views of the same sequence.
  if (w.icl_active) {
    std::vector<Tensor> anchors, positives, gen_views;
    for (size_t i = 0; i < seqs.size(); ++i) {
      anchors.push_back(model.encode_causal(*seqs[i], config.k_window, &icl_rng).aggregated);
      if (w.icl_positive_source == IclPositiveSource::Generator)
        positives.push_back(
            model.encode_causal(gens[i].substituted, config.k_window, &icl_rng).aggregated);
      else
        positives.push_back(model.encode_causal(*seqs[i], config.k_window, &icl_rng).aggregated);
      if (w.icl_generator_role != IclGeneratorRole::None)
        gen_views.push_back(
            model.encode_causal(gens[i].substituted, config.k_window, &icl_rng).aggregated);
    }
    terms.emplace("icl", icl_loss(anchors, positives, w.tau, w.icl_generator_role,
                                  gen_views.empty() ? nullptr : &gen_views));
  }

  // Detection branch, conditioned on the original-sequence states.
  if (w.rid_active) {
    std::vector<Tensor> rid_losses;
    for (size_t i = 0; i < seqs.size(); ++i) {
      Tensor scores = model.discriminate(gens[i].substituted, conditions[i], &rid_rng);
      rid_losses.push_back(
          rid_loss(scores, gens[i].substituted, *seqs[i], w.rid_include_first));
    }
    terms.emplace("rid", mean_of(rid_losses));
  }

  LossReport report;
  Tensor total = combine(terms, w, &report);
  if (!std::isfinite(report.total)) {
    std::string dump = "train_step: non-finite total loss;";
    for (const auto& [name, v] : report.per_term)
      dump += " " + name + "=" + std::to_string(v);
    fail(dump);
  }
  backward(total);
  if (gen_frozen) {
    opt.step(model.params(),
             [](const std::string& name) { return name.rfind("gen.", 0) != 0; });
  } else {
    opt.step(model.params());
  }
  opt.zero_grad(model.params());
  return report;
}

size_t rank_of_target(const std::vector<double>& scores, int target) {
  if (scores.size() < 3) fail("rank_of_target: score vector too short");
  if (target < 1 || static_cast<size_t>(target) + 1 >= scores.size())
    fail("rank_of_target: target outside the real item range");
  const double target_score = scores[static_cast<size_t>(target)];
  size_t rank = 0;
  for (size_t j = 1; j + 1 < scores.size(); ++j)
    if (scores[j] >= target_score) ++rank;  // pessimistic: ties count against
  return rank;
}

MetricsReport metrics_from_ranks(const std::vector<size_t>& ranks,
                                 const std::vector<size_t>& ks) {
  if (ranks.empty()) fail("metrics_from_ranks: no ranks");
  MetricsReport rep;
  const double n = static_cast<double>(ranks.size());
  for (const size_t k : ks) {
    double hits = 0.0, gain = 0.0;
    for (const size_t r : ranks) {
      if (r <= k) {
        hits += 1.0;
        gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
      }
    }
    rep.recall_at[k] = hits / n;
    rep.ndcg_at[k] = gain / n;
  }
  return rep;
}

std::vector<size_t> evaluate_ranks(const EclsrModel& model, const SplitSet& split, Phase phase) {
  if (split.train.empty()) fail("evaluate: empty split");
  const size_t n_users = split.user_rows();
  const auto& targets = phase == Phase::Test ? split.test_target : split.valid_target;
  std::vector<size_t> ranks(n_users, 0);

  auto run_range = [&](size_t lo, size_t hi) {
    NoGradGuard inference;
    for (size_t u = lo; u < hi; ++u) {
      const Sequence input = eval_input(split, u, phase == Phase::Test);
      // k=1 aggregation is exactly the last non-pad hidden state.
      const EncoderOutput enc = model.encode_causal(input, 1, nullptr);
      ranks[u] = rank_of_target(model.score_items(enc.aggregated.data()), targets[u]);
    }
  };

  const size_t workers = std::min(eval_workers(), n_users);
  if (workers <= 1) {
    run_range(0, n_users);
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (n_users + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
      const size_t lo = w * chunk, hi = std::min(lo + chunk, n_users);
      if (lo < hi) pool.emplace_back(run_range, lo, hi);
    }
    for (auto& t : pool) t.join();
  }
  return ranks;
}

MetricsReport evaluate(const EclsrModel& model, const SplitSet& split, Phase phase,
                       const std::vector<size_t>& ks) {
  const auto t0 = std::chrono::steady_clock::now();
  MetricsReport rep = metrics_from_ranks(evaluate_ranks(model, split, phase), ks);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

ExperimentResult run_experiment(const TrainConfig& config, const ModelConfig& model_config,
                                const SplitSet& split, const std::vector<size_t>& ks,
                                const std::string& output_dir) {
  if (ks.empty()) fail("run_experiment: no evaluation cutoffs");
  std::filesystem::create_directories(output_dir);

  EclsrModel model(model_config);
  Rng init_rng = derive_stream(config.seed, "init");
  model.init_params(init_rng);
  Adam opt(config.lr);

  ExperimentResult result;
  result.checkpoint_path = output_dir + "/checkpoint.ckpt";
  result.metrics_path = output_dir + "/metrics.jsonl";
  std::ofstream log(result.metrics_path, std::ios::trunc);
  if (!log) fail("run_experiment: cannot open '" + result.metrics_path + "'");

  const LossWeights w = resolve_weights(config);
  ordered_json head;
  head["record"] = "config";
  head["mode"] = mode_to_string(config.mode);
  head["epochs"] = config.epochs;
  head["lr"] = config.lr;
  head["batch_size"] = config.batch_size;
  head["gen_freeze_epoch"] = config.gen_freeze_epoch;
  head["k_window"] = config.k_window;
  head["gamma"] = config.gamma;
  head["tau"] = w.tau;
  head["lambda_icl"] = w.lambda_icl;
  head["lambda_gen"] = w.lambda_gen;
  head["lambda_rid"] = w.lambda_rid;
  head["seed"] = config.seed;
  head["d"] = model_config.d;
  head["n_layers"] = model_config.n_layers;
  head["n_heads"] = model_config.n_heads;
  head["dropout_rate"] = model_config.dropout_rate;
  head["l_max"] = model_config.l_max;
  head["item_count"] = model_config.item_count;
  log << head.dump() << "\n";

  const size_t track_k = ks.front();
  result.best_valid_recall = -1.0;

  for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches =
        batch_iter(split, config.batch_size, derive_seed(config.seed, "order", epoch));
    std::map<std::string, double> sums;
    std::map<std::string, size_t> counts;
    StepContext ctx;
    ctx.epoch = epoch;
    for (size_t b = 0; b < batches.size(); ++b) {
      ctx.step = b;
      std::vector<Sequence> batch;
      batch.reserve(batches[b].size());
      for (const size_t row : batches[b]) batch.push_back(split.train[row]);
      const LossReport rep = train_step(model, batch, config, ctx, opt);
      for (const auto& [name, v] : rep.per_term) {
        sums[name] += v;
        counts[name] += 1;
      }
    }

    MetricsReport valid = evaluate(model, split, Phase::Valid, ks);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ordered_json rec;
    rec["record"] = "epoch";
    rec["epoch"] = epoch;
    rec["split"] = "valid";
    ordered_json losses = ordered_json::object();
    for (const auto& [name, s] : sums) losses[name] = s / static_cast<double>(counts[name]);
    rec["losses"] = losses;
    for (const size_t k : ks) {
      rec["recall@" + std::to_string(k)] = valid.recall_at[k];
      rec["ndcg@" + std::to_string(k)] = valid.ndcg_at[k];
    }
    rec["seconds"] = secs;
    log << rec.dump() << "\n";

    if (valid.recall_at[track_k] > result.best_valid_recall) {
      result.best_valid_recall = valid.recall_at[track_k];
      result.best_epoch = epoch;
      save_checkpoint(result.checkpoint_path, model.params());
    }
  }

  load_checkpoint_into(result.checkpoint_path, model.params());
  result.test = evaluate(model, split, Phase::Test, ks);
  ordered_json rec;
  rec["record"] = "test";
  rec["best_epoch"] = result.best_epoch;
  rec["split"] = "test";
  for (const size_t k : ks) {
    rec["recall@" + std::to_string(k)] = result.test.recall_at[k];
    rec["ndcg@" + std::to_string(k)] = result.test.ndcg_at[k];
  }
  rec["seconds"] = result.test.seconds;
  log << rec.dump() << "\n";
  return result;
}

}  // namespace eclseq
