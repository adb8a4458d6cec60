#include "eclseq/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace eclseq {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

bool parse_int64(const std::string& s, int64_t& out) {
  if (s.empty()) return false;
  size_t i = (s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  int64_t v = 0;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = (s[0] == '-') ? -v : v;
  return true;
}

std::vector<std::string> split_fields(const std::string& line, Delimiter delim) {
  std::vector<std::string> out;
  if (delim == Delimiter::Space) {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
  }
  const char sep = delim == Delimiter::Tab ? '\t' : ',';
  std::string cur;
  for (const char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  // Trim surrounding spaces so "a, b, 3" parses under comma too.
  for (auto& f : out) {
    const size_t b = f.find_first_not_of(" \t");
    const size_t e = f.find_last_not_of(" \t");
    f = (b == std::string::npos) ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

Delimiter detect_delimiter(const std::string& line) {
  if (line.find('\t') != std::string::npos) return Delimiter::Tab;
  if (line.find(',') != std::string::npos) return Delimiter::Comma;
  return Delimiter::Space;
}

}  // namespace

Delimiter delimiter_from_string(const std::string& name) {
  if (name == "auto") return Delimiter::Auto;
  if (name == "tab") return Delimiter::Tab;
  if (name == "comma") return Delimiter::Comma;
  if (name == "space") return Delimiter::Space;
  throw DataError("unknown delimiter '" + name + "' (expected auto|tab|comma|space)");
}

std::string delimiter_to_string(Delimiter d) {
  switch (d) {
    case Delimiter::Auto: return "auto";
    case Delimiter::Tab: return "tab";
    case Delimiter::Comma: return "comma";
    case Delimiter::Space: return "space";
  }
  throw DataError("bad delimiter enum");
}

InteractionLog ingest(const std::string& path, Delimiter delim, IngestReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  IngestReport rep;
  struct Raw {
    Interaction rec;
    size_t order;
  };
  std::vector<Raw> raws;
  std::unordered_set<std::string> seen;
  std::string line;
  size_t line_no = 0, data_lines = 0;
  bool first_content_line = true;
  Delimiter eff = delim;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (eff == Delimiter::Auto) eff = detect_delimiter(line);
    const auto fields = split_fields(line, eff);
    int64_t ts = 0;
    const bool ok = fields.size() == 3 && !fields[0].empty() && !fields[1].empty() &&
                    parse_int64(fields[2], ts);
    if (first_content_line && !ok) {
      // Header row: column names instead of data.
      rep.had_header = true;
      first_content_line = false;
      continue;
    }
    first_content_line = false;
    ++data_lines;
    if (!ok) {
      ++rep.malformed;
      if (rep.malformed_samples.size() < 5)
        rep.malformed_samples.push_back("line " + std::to_string(line_no) + ": " + line);
      continue;
    }
    std::string key = fields[0] + '\x1f' + fields[1] + '\x1f' + fields[2];
    if (!seen.insert(std::move(key)).second) {
      ++rep.duplicates;
      continue;
    }
    raws.push_back({{fields[0], fields[1], ts}, raws.size()});
  }

  if (data_lines > 0 && rep.malformed * 100 > data_lines) {
    std::string msg = "more than 1% malformed lines in '" + path + "' (" +
                      std::to_string(rep.malformed) + "/" + std::to_string(data_lines) + ")";
    for (const auto& s : rep.malformed_samples) msg += "\n  " + s;
    throw DataError(msg);
  }

  std::stable_sort(raws.begin(), raws.end(), [](const Raw& a, const Raw& b) {
    if (a.rec.user != b.rec.user) return a.rec.user < b.rec.user;
    return a.rec.timestamp < b.rec.timestamp;
  });

  InteractionLog log;
  log.records.reserve(raws.size());
  for (auto& r : raws) log.records.push_back(std::move(r.rec));
  rep.kept = log.records.size();
  if (report) *report = rep;
  return log;
}

InteractionLog kcore_filter(const InteractionLog& log, size_t k) {
  if (k < 1) throw DataError("k-core: k must be >= 1");
  std::vector<const Interaction*> cur;
  cur.reserve(log.records.size());
  for (const auto& r : log.records) cur.push_back(&r);

  for (;;) {
    std::unordered_map<std::string, size_t> ucount, icount;
    for (const auto* r : cur) {
      ++ucount[r->user];
      ++icount[r->item];
    }
    std::vector<const Interaction*> next;
    next.reserve(cur.size());
    for (const auto* r : cur)
      if (ucount[r->user] >= k && icount[r->item] >= k) next.push_back(r);
    if (next.size() == cur.size()) break;
    cur = std::move(next);
  }

  if (cur.empty())
    throw DataError("k-core filtering with k=" + std::to_string(k) +
                    " removed every record; use a smaller k");
  InteractionLog out;
  out.records.reserve(cur.size());
  for (const auto* r : cur) out.records.push_back(*r);
  return out;
}

Sequence make_sequence(int user_id, const std::vector<int>& items, size_t l_max) {
  if (l_max == 0) throw DataError("make_sequence: l_max must be >= 1");
  Sequence seq;
  seq.user_id = user_id;
  seq.items.assign(l_max, 0);
  const size_t n = std::min(items.size(), l_max);
  for (size_t i = 0; i < n; ++i) seq.items[l_max - n + i] = items[items.size() - n + i];
  seq.true_length = n;
  return seq;
}

void validate_sequence(const Sequence& seq) {
  const size_t L = seq.items.size();
  if (seq.true_length > L) throw DataError("sequence: true_length exceeds frame");
  for (size_t i = 0; i < L; ++i) {
    const bool should_be_real = i >= L - seq.true_length;
    if (should_be_real != (seq.items[i] != 0))
      throw DataError("sequence: padding invariant violated at slot " + std::to_string(i));
  }
}

std::vector<int> real_items(const Sequence& seq) {
  const size_t L = seq.items.size();
  return std::vector<int>(seq.items.begin() + (L - seq.true_length), seq.items.end());
}

std::pair<Catalog, SplitSet> build_splits(const InteractionLog& log, size_t l_max) {
  if (l_max == 0) throw DataError("build_splits: l_max must be >= 1");

  // Group per user, preserving the log's chronological order.
  std::vector<std::pair<std::string, std::vector<std::string>>> per_user;
  std::unordered_map<std::string, size_t> user_slot;
  for (const auto& r : log.records) {
    auto [it, inserted] = user_slot.try_emplace(r.user, per_user.size());
    if (inserted) per_user.push_back({r.user, {}});
    per_user[it->second].second.push_back(r.item);
  }

  Catalog cat;
  cat.user_key.push_back("");  // slot 0 = pad/unused
  cat.item_key.push_back("");
  SplitSet split;
  split.l_max = l_max;

  auto item_id = [&cat](const std::string& key) {
    auto [it, inserted] = cat.item_index.try_emplace(key, static_cast<int>(cat.item_key.size()));
    if (inserted) cat.item_key.push_back(key);
    return it->second;
  };

  for (auto& [user, items] : per_user) {
    if (items.size() < 3) {
      ++split.dropped_users;
      continue;
    }
    const int uid = static_cast<int>(cat.user_key.size());
    cat.user_index.emplace(user, uid);
    cat.user_key.push_back(user);

    std::vector<int> ids(items.size());
    for (size_t i = 0; i < items.size(); ++i) ids[i] = item_id(items[i]);

    std::vector<int> train_items(ids.begin(), ids.end() - 2);
    split.train.push_back(make_sequence(uid, train_items, l_max));
    split.valid_target.push_back(ids[ids.size() - 2]);
    split.test_target.push_back(ids[ids.size() - 1]);
  }

  if (split.train.empty()) throw DataError("build_splits: no user has >= 3 interactions");
  cat.user_count = cat.user_key.size() - 1;
  cat.item_count = cat.item_key.size() - 1;
  return {std::move(cat), std::move(split)};
}

Sequence eval_input(const SplitSet& split, size_t row, bool test_phase) {
  if (row >= split.train.size()) throw DataError("eval_input: row out of range");
  const Sequence& tr = split.train[row];
  if (!test_phase) return tr;
  std::vector<int> items = real_items(tr);
  items.push_back(split.valid_target[row]);
  return make_sequence(tr.user_id, items, split.l_max);
}

std::vector<std::vector<size_t>> batch_iter(const SplitSet& split, size_t batch_size,
                                            uint64_t seed) {
  if (batch_size < 2)
    throw DataError("batch_iter: batch_size must be >= 2 (in-batch negatives)");
  std::vector<size_t> perm(split.train.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < perm.size(); start += batch_size) {
    const size_t end = std::min(start + batch_size, perm.size());
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

DataStats compute_stats(const InteractionLog& log) {
  std::set<std::string> users, items;
  for (const auto& r : log.records) {
    users.insert(r.user);
    items.insert(r.item);
  }
  DataStats s;
  s.users = users.size();
  s.items = items.size();
  s.actions = log.records.size();
  s.avg_length = s.users ? static_cast<double>(s.actions) / static_cast<double>(s.users) : 0.0;
  const double cells = static_cast<double>(s.users) * static_cast<double>(s.items);
  s.sparsity = cells > 0.0 ? 1.0 - static_cast<double>(s.actions) / cells : 0.0;
  return s;
}

namespace {

void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32_le(std::string& out, int32_t v) {
  const uint32_t u = static_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

int32_t get_i32_le(const unsigned char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return static_cast<int32_t>(v);
}

}  // namespace

void save_cache(const std::string& path, const Catalog& catalog, const SplitSet& split) {
  ordered_json header;
  header["version"] = 1;
  header["l_max"] = split.l_max;
  header["dropped_users"] = split.dropped_users;
  header["rows"] = split.train.size();
  header["users"] = std::vector<std::string>(catalog.user_key.begin() + 1, catalog.user_key.end());
  header["items"] = std::vector<std::string>(catalog.item_key.begin() + 1, catalog.item_key.end());
  const std::string htext = header.dump();

  std::string bytes;
  put_u64_le(bytes, htext.size());
  bytes += htext;
  for (size_t r = 0; r < split.train.size(); ++r) {
    const Sequence& seq = split.train[r];
    put_i32_le(bytes, seq.user_id);
    put_i32_le(bytes, static_cast<int32_t>(seq.true_length));
    for (const int v : seq.items) put_i32_le(bytes, v);
    put_i32_le(bytes, split.valid_target[r]);
    put_i32_le(bytes, split.test_target[r]);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cache: cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cache: short write to '" + path + "'");
}

std::pair<Catalog, SplitSet> load_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cache: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8) throw DataError("cache: file too short");
  const uint64_t hlen = get_u64_le(p);
  if (8 + hlen > bytes.size()) throw DataError("cache: header length exceeds file");
  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<size_t>(hlen));
  } catch (const json::exception& e) {
    throw DataError(std::string("cache: bad header: ") + e.what());
  }
  if (header.value("version", 0) != 1) throw DataError("cache: unsupported version");

  Catalog cat;
  cat.user_key.push_back("");
  cat.item_key.push_back("");
  for (const auto& u : header.at("users")) {
    cat.user_index.emplace(u.get<std::string>(), static_cast<int>(cat.user_key.size()));
    cat.user_key.push_back(u.get<std::string>());
  }
  for (const auto& i : header.at("items")) {
    cat.item_index.emplace(i.get<std::string>(), static_cast<int>(cat.item_key.size()));
    cat.item_key.push_back(i.get<std::string>());
  }
  cat.user_count = cat.user_key.size() - 1;
  cat.item_count = cat.item_key.size() - 1;

  SplitSet split;
  split.l_max = header.at("l_max").get<size_t>();
  split.dropped_users = header.at("dropped_users").get<size_t>();
  const size_t rows = header.at("rows").get<size_t>();
  size_t off = 8 + static_cast<size_t>(hlen);
  const size_t row_bytes = 4 * (split.l_max + 4);
  if (off + rows * row_bytes > bytes.size()) throw DataError("cache: truncated payload");
  for (size_t r = 0; r < rows; ++r) {
    Sequence seq;
    seq.user_id = get_i32_le(p + off);
    off += 4;
    seq.true_length = static_cast<size_t>(get_i32_le(p + off));
    off += 4;
    seq.items.resize(split.l_max);
    for (size_t i = 0; i < split.l_max; ++i) {
      seq.items[i] = get_i32_le(p + off);
      off += 4;
    }
    validate_sequence(seq);
    split.train.push_back(std::move(seq));
    split.valid_target.push_back(get_i32_le(p + off));
    off += 4;
    split.test_target.push_back(get_i32_le(p + off));
    off += 4;
  }
  return {std::move(cat), std::move(split)};
}

}  // namespace eclseq
