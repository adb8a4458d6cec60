#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "eclseq/data.hpp"
#include "eclseq/loss.hpp"
#include "eclseq/model.hpp"
#include "eclseq/optim.hpp"

namespace eclseq {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { Sasrec, RidlSr, IclSr, IclSrPos, IclSrNeg, EclSr };

Mode mode_from_string(const std::string& name);
std::string mode_to_string(Mode mode);
const std::vector<Mode>& all_modes();

struct TrainConfig {
  size_t epochs = 200;
  double lr = 1e-4;
  size_t batch_size = 256;
  size_t gen_freeze_epoch = 10;  // generator trains through this epoch, frozen afterwards
  size_t k_window = 5;
  double gamma = 0.2;
  LossWeights weights;
  uint64_t seed = 42;
  Mode mode = Mode::EclSr;
  FillSampling sampling = FillSampling::Argmax;
};

// The mode fixes which loss terms are active (and how generator views enter
// the contrastive term); a zero weight deactivates its term outright so that
// ablation nesting holds bitwise.
LossWeights resolve_weights(const TrainConfig& config);

struct StepContext {
  size_t epoch = 1;  // 1-based
  size_t step = 0;   // batch index within the epoch
};

// One batch: forward the active branches, combine, single backward, one Adam
// step. Returns the per-term loss report. Sequences with fewer than 2 real
// items are skipped; the contrastive term needs at least 2 usable sequences.
LossReport train_step(EclsrModel& model, const std::vector<Sequence>& batch,
                      const TrainConfig& config, const StepContext& ctx, Adam& opt);

enum class Phase { Valid, Test };

struct MetricsReport {
  std::map<size_t, double> recall_at;
  std::map<size_t, double> ndcg_at;
  std::map<std::string, double> losses;
  double seconds = 0.0;
};

// 1-based rank of `target` in a full score vector laid out as score_items
// emits it (index 0 = pad, last index = mask token, both ignored). Ties are
// pessimistic: every real item scoring >= the target counts.
size_t rank_of_target(const std::vector<double>& scores, int target);

// Recall@k = fraction of ranks <= k; NDCG@k adds 1/log2(rank+1) per hit.
MetricsReport metrics_from_ranks(const std::vector<size_t>& ranks,
                                 const std::vector<size_t>& ks);

// Full-catalog ranking of each user's held-out target from the last hidden
// state. Ties resolve pessimistically (the target takes the worst rank among
// equals). ECLSEQ_THREADS caps the evaluation workers (default 1).
MetricsReport evaluate(const EclsrModel& model, const SplitSet& split, Phase phase,
                       const std::vector<size_t>& ks);

// Per-user target rank (1-based, pessimistic ties), for callers that need raw
// ranks rather than aggregated metrics.
std::vector<size_t> evaluate_ranks(const EclsrModel& model, const SplitSet& split, Phase phase);

struct ExperimentResult {
  MetricsReport test;           // measured at the best-validation checkpoint
  double best_valid_recall = 0.0;
  size_t best_epoch = 0;
  std::string checkpoint_path;
  std::string metrics_path;
};

// Trains config.epochs epochs, tracking validation recall at ks.front()
// (10 by convention), checkpointing the best epoch, and reporting test
// metrics from that checkpoint. Writes a line-delimited JSON metrics log
// whose first record echoes the resolved configuration.
ExperimentResult run_experiment(const TrainConfig& config, const ModelConfig& model_config,
                                const SplitSet& split, const std::vector<size_t>& ks,
                                const std::string& output_dir);

}  // namespace eclseq
