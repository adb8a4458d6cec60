#include "eclseq/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "eclseq/checkpoint.hpp"
#include "eclseq/pipeline.hpp"

namespace eclseq {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string cache_path(const RunConfig& c) { return c.output_dir + "/cache.bin"; }
std::string checkpoint_path(const RunConfig& c) { return c.output_dir + "/checkpoint.ckpt"; }

// Every command leaves a resolved-config snapshot next to its outputs, so a
// run is reproducible from the output directory alone.
void write_snapshot(const RunConfig& config) {
  std::filesystem::create_directories(config.output_dir);
  std::ofstream out(config.output_dir + "/config.json", std::ios::trunc);
  if (!out) throw ConfigError("cannot write config snapshot in '" + config.output_dir + "'");
  out << serialize_config(config);
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Tables print and store numbers rounded to 1e-6 so the text and JSON views
// carry identical values.
double round6(double v) { return std::llround(v * 1e6) / 1e6; }

std::string items_str(const std::vector<int>& items) {
  std::string s = "[";
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(items[i]);
  }
  return s + "]";
}

struct DemoEntry {
  std::string op;
  std::vector<int> before;
  std::vector<int> after;
  bool identity = false;
  std::vector<size_t> changed;  // aligned positions only
};

DemoEntry make_entry(const std::string& op, const std::vector<int>& before,
                     const std::vector<int>& after) {
  DemoEntry e{op, before, after, before == after, {}};
  if (before.size() == after.size())
    for (size_t i = 0; i < before.size(); ++i)
      if (before[i] != after[i]) e.changed.push_back(i);
  return e;
}

}  // namespace

int cmd_preprocess(const RunConfig& config, std::ostream& out) {
  write_snapshot(config);
  IngestReport report;
  InteractionLog raw = ingest(config.dataset.path, config.dataset.format, &report);
  InteractionLog filtered = kcore_filter(raw, config.dataset.min_count);
  const DataStats stats = compute_stats(filtered);
  auto [catalog, split] = build_splits(filtered, config.dataset.l_max);
  save_cache(cache_path(config), catalog, split);

  out << "read " << report.kept << " interactions from " << config.dataset.path;
  if (report.duplicates) out << " (" << report.duplicates << " duplicates removed)";
  if (report.malformed) out << " (" << report.malformed << " malformed lines skipped)";
  out << "\n";
  out << config.dataset.min_count << "-core filtered corpus:\n";
  out << "  users       " << stats.users << "\n";
  out << "  items       " << stats.items << "\n";
  out << "  actions     " << stats.actions << "\n";
  out << "  avg. length " << fmt(stats.avg_length, 2) << "\n";
  out << "  sparsity    " << fmt(stats.sparsity * 100.0, 2) << "%\n";
  if (split.dropped_users)
    out << "  (" << split.dropped_users << " users below 3 interactions dropped)\n";
  out << "cache written to " << cache_path(config) << "\n";
  return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  write_snapshot(config);
  auto [catalog, split] = load_cache(cache_path(config));
  const ModelConfig model_config = config.resolve_model(catalog.item_count, split.l_max);
  out << "training " << mode_to_string(config.train.mode) << " on " << split.user_rows()
      << " users / " << catalog.item_count << " items (seed " << config.train.seed << ")\n";
  const ExperimentResult res =
      run_experiment(config.train, model_config, split, config.eval.ks, config.output_dir);
  out << "best validation recall@" << config.eval.ks.front() << " " << fmt(res.best_valid_recall)
      << " at epoch " << res.best_epoch << "\n";
  for (const size_t k : config.eval.ks)
    out << "test recall@" << k << " " << fmt(res.test.recall_at.at(k)) << "  ndcg@" << k << " "
        << fmt(res.test.ndcg_at.at(k)) << "\n";
  out << "checkpoint " << res.checkpoint_path << "\nmetrics " << res.metrics_path << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& config, bool json, std::ostream& out) {
  write_snapshot(config);
  auto [catalog, split] = load_cache(cache_path(config));
  EclsrModel model(config.resolve_model(catalog.item_count, split.l_max));
  load_checkpoint_into(checkpoint_path(config), model.params());

  const MetricsReport valid = evaluate(model, split, Phase::Valid, config.eval.ks);
  const MetricsReport test = evaluate(model, split, Phase::Test, config.eval.ks);
  if (json) {
    ordered_json doc;
    for (auto [name, rep] : {std::pair{"valid", &valid}, {"test", &test}}) {
      ordered_json sec;
      for (const size_t k : config.eval.ks) {
        sec["recall@" + std::to_string(k)] = rep->recall_at.at(k);
        sec["ndcg@" + std::to_string(k)] = rep->ndcg_at.at(k);
      }
      doc[name] = sec;
    }
    out << doc.dump(2) << "\n";
  } else {
    for (auto [name, rep] : {std::pair{"valid", &valid}, {"test", &test}}) {
      out << name << ":";
      for (const size_t k : config.eval.ks)
        out << "  recall@" << k << " " << fmt(rep->recall_at.at(k)) << "  ndcg@" << k << " "
            << fmt(rep->ndcg_at.at(k));
      out << "\n";
    }
  }
  return 0;
}

int cmd_augment_demo(const RunConfig& config, const std::vector<int>& items, uint64_t seed,
                     bool json, std::ostream& out) {
  write_snapshot(config);
  if (items.size() < 2) throw AugmentError("augment-demo needs at least 2 items");
  int max_item = 0;
  for (const int it : items) {
    if (it < 1) throw AugmentError("augment-demo items must be positive ids");
    max_item = std::max(max_item, it);
  }
  // A synthetic pool leaves headroom so insertion/substitution can draw items
  // outside the sequence; the frame leaves room for insertions to show.
  Catalog pool;
  pool.item_count = static_cast<size_t>(max_item) + 100;
  const Sequence seq = make_sequence(1, items, 2 * items.size());

  // Paper-default numbers per operator; the configured invasive spec replaces
  // the matching kind so its numbers can be exercised from the config file.
  std::vector<AugSpec> specs = {
      {AugKind::Insert, 0.2, 0.1, 0},          {AugKind::Delete, 0.2, 0.1, 0},
      {AugKind::SubstituteRandom, 0.2, 0.1, 0}, {AugKind::Crop, 0.8, 0.1, 0},
      {AugKind::Reorder, 0.2, 0.1, 0},
  };
  for (auto& spec : specs)
    if (spec.kind == config.aug.invasive.kind) spec = config.aug.invasive;

  std::vector<DemoEntry> entries;
  for (const AugSpec& spec : specs) {
    Rng rng = derive_stream(seed, aug_kind_to_string(spec.kind));
    const Sequence view = augment_sequence(seq, spec, rng, pool);
    entries.push_back(make_entry(aug_kind_to_string(spec.kind), items, real_items(view)));
  }
  {
    Rng rng = derive_stream(seed, "mask_plan");
    const MaskPlan plan = make_mask_plan(seq, config.train.gamma, rng);
    const Sequence masked = apply_mask(seq, plan, pool);
    entries.push_back(make_entry("mask_plan", items, real_items(masked)));
  }

  struct FeatureEntry {
    std::string op;
    std::vector<double> after;
  };
  std::vector<double> feature(items.begin(), items.end());
  std::vector<FeatureEntry> features;
  for (const AugKind kind : {AugKind::Normalize, AugKind::Dropout, AugKind::Perturb}) {
    AugSpec spec = config.aug.mild;
    spec.kind = kind;
    Rng rng = derive_stream(seed, aug_kind_to_string(kind));
    const Tensor h = augment_feature(Tensor::vector(feature), spec, rng);
    features.push_back({aug_kind_to_string(kind), h.data()});
  }

  if (json) {
    ordered_json doc;
    doc["seed"] = seed;
    doc["items"] = items;
    doc["mask_token"] = pool.mask_id();
    ordered_json ops = ordered_json::array();
    for (const DemoEntry& e : entries) {
      ordered_json o;
      o["op"] = e.op;
      o["before"] = e.before;
      o["after"] = e.after;
      o["identity"] = e.identity;
      o["changed"] = e.changed;
      ops.push_back(o);
    }
    doc["operators"] = ops;
    ordered_json feats = ordered_json::array();
    for (const FeatureEntry& f : features) {
      ordered_json o;
      o["op"] = f.op;
      o["before"] = feature;
      o["after"] = f.after;
      feats.push_back(o);
    }
    doc["features"] = feats;
    out << doc.dump(2) << "\n";
    return 0;
  }

  out << "sequence " << items_str(items) << " (seed " << seed << ", mask token "
      << pool.mask_id() << ")\n";
  for (const DemoEntry& e : entries) {
    out << "  " << e.op << ": " << items_str(e.before) << " -> " << items_str(e.after);
    if (e.identity) {
      out << "  (identity)";
    } else if (!e.changed.empty()) {
      out << "  (changed:";
      for (const size_t i : e.changed) out << " " << i;
      out << ")";
    }
    out << "\n";
  }
  for (const FeatureEntry& f : features) {
    out << "  " << f.op << ": [";
    for (size_t i = 0; i < f.after.size(); ++i) out << (i ? ", " : "") << fmt(f.after[i], 4);
    out << "]\n";
  }
  return 0;
}

int cmd_ablate(const RunConfig& config, std::ostream& out) {
  write_snapshot(config);
  auto [catalog, split] = load_cache(cache_path(config));
  const ModelConfig model_config = config.resolve_model(catalog.item_count, split.l_max);

  ordered_json table = ordered_json::array();
  std::vector<std::string> lines;
  for (const Mode mode : all_modes()) {
    TrainConfig tc = config.train;
    tc.mode = mode;
    const std::string dir = config.output_dir + "/" + mode_to_string(mode);
    const ExperimentResult res = run_experiment(tc, model_config, split, config.eval.ks, dir);

    ordered_json row;
    row["mode"] = mode_to_string(mode);
    std::string line = mode_to_string(mode);
    line.resize(12, ' ');
    for (const size_t k : config.eval.ks) {
      const double r = round6(res.test.recall_at.at(k));
      const double n = round6(res.test.ndcg_at.at(k));
      row["recall@" + std::to_string(k)] = r;
      row["ndcg@" + std::to_string(k)] = n;
      line += "  " + fmt(r) + "  " + fmt(n);
    }
    row["best_epoch"] = res.best_epoch;
    line += "  " + std::to_string(res.best_epoch);
    table.push_back(row);
    lines.push_back(line);
  }

  std::string header = "mode        ";
  for (const size_t k : config.eval.ks)
    header += "  recall@" + std::to_string(k) + "  ndcg@" + std::to_string(k);
  header += "  best_epoch";
  out << header << "\n";
  for (const std::string& line : lines) out << line << "\n";

  const std::string json_path = config.output_dir + "/ablation.json";
  std::ofstream jf(json_path, std::ios::trunc);
  if (!jf) throw PipelineError("cannot write '" + json_path + "'");
  jf << table.dump(2) << "\n";
  out << "table written to " << json_path << "\n";
  return 0;
}

}  // namespace eclseq
