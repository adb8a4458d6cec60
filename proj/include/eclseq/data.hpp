#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eclseq/rng.hpp"

namespace eclseq {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Interaction {
  std::string user;
  std::string item;
  int64_t timestamp = 0;
};

// Chronologically sorted per user; exact duplicate (user, item, timestamp)
// triples removed. Timestamp ties keep input file order.
struct InteractionLog {
  std::vector<Interaction> records;
};

struct IngestReport {
  size_t kept = 0;
  size_t malformed = 0;
  size_t duplicates = 0;
  bool had_header = false;
  std::vector<std::string> malformed_samples;  // at most 5
};

enum class Delimiter { Auto, Tab, Comma, Space };

Delimiter delimiter_from_string(const std::string& name);
std::string delimiter_to_string(Delimiter d);

// Reads `user<sep>item<sep>timestamp` lines. A first line whose last column is
// not an integer is treated as a header. Fails if more than 1% of data lines
// are malformed.
InteractionLog ingest(const std::string& path, Delimiter delim = Delimiter::Auto,
                      IngestReport* report = nullptr);

// Iterates removal of users/items with fewer than k interactions to a
// fixpoint. The surviving records keep their order.
InteractionLog kcore_filter(const InteractionLog& log, size_t k);

// Dense ids: 0 is the pad token, 1..item_count are items, item_count+1 is the
// generator's mask token. Users are 1..user_count.
struct Catalog {
  size_t user_count = 0;
  size_t item_count = 0;
  std::map<std::string, int> user_index;
  std::map<std::string, int> item_index;
  std::vector<std::string> user_key;  // dense id -> raw key; slot 0 unused
  std::vector<std::string> item_key;

  int pad_id() const { return 0; }
  int mask_id() const { return static_cast<int>(item_count) + 1; }
};

// Fixed-length view of one user's history: items occupy the LAST true_length
// slots (left padding), in chronological order.
struct Sequence {
  int user_id = 0;
  std::vector<int> items;
  size_t true_length = 0;

  size_t l_max() const { return items.size(); }
};

// Left-pads `items` (already chronological, length <= l_max enforced by
// truncating to the most recent l_max) into a Sequence.
Sequence make_sequence(int user_id, const std::vector<int>& items, size_t l_max);

// Throws unless exactly the last true_length slots are nonzero.
void validate_sequence(const Sequence& seq);

// The real items of a sequence, oldest first.
std::vector<int> real_items(const Sequence& seq);

struct SplitSet {
  size_t l_max = 0;
  std::vector<Sequence> train;      // one per surviving user
  std::vector<int> valid_target;    // aligned with train
  std::vector<int> test_target;
  size_t dropped_users = 0;         // users with < 3 interactions

  size_t user_rows() const { return train.size(); }
};

// Leave-two-out: per user, the last item is the test target, the second-to-
// last the validation target, the rest (left-truncated to the most recent
// l_max) the training sequence. Users with fewer than 3 interactions are
// dropped.
std::pair<Catalog, SplitSet> build_splits(const InteractionLog& log, size_t l_max);

// Model input for ranking the held-out target: the training sequence for the
// valid phase, train + [valid_target] (re-truncated) for the test phase.
Sequence eval_input(const SplitSet& split, size_t row, bool test_phase);

// One epoch of row indices into split.train: a seeded permutation chunked
// into batches; the final partial batch is emitted. batch_size must be >= 2
// (the contrastive loss needs in-batch negatives).
std::vector<std::vector<size_t>> batch_iter(const SplitSet& split, size_t batch_size,
                                            uint64_t seed);

struct DataStats {
  size_t users = 0;
  size_t items = 0;
  size_t actions = 0;
  double avg_length = 0.0;
  double sparsity = 0.0;
};

DataStats compute_stats(const InteractionLog& log);

// Portable binary cache: length-prefixed JSON header (catalog, l_max, version)
// followed by little-endian int32 sequence arrays. Saving the same split twice
// yields byte-identical files.
void save_cache(const std::string& path, const Catalog& catalog, const SplitSet& split);
std::pair<Catalog, SplitSet> load_cache(const std::string& path);

}  // namespace eclseq
