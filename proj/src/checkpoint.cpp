#include "eclseq/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace eclseq {

namespace {

using nlohmann::json;

void put_u64_le(std::vector<unsigned char>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f64_le(std::vector<unsigned char>& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(out, bits);
}

double get_f64_le(const unsigned char* p) {
  const uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamMap& params) {
  json manifest;
  manifest["version"] = 1;
  json tensors = json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    json entry;
    entry["shape"] = t.shape();
    entry["dtype"] = "f64";
    entry["offset"] = offset;
    tensors[name] = std::move(entry);
    offset += 8 * static_cast<uint64_t>(t.numel());
  }
  manifest["tensors"] = std::move(tensors);
  const std::string mtext = manifest.dump();

  std::vector<unsigned char> bytes;
  bytes.reserve(8 + mtext.size() + offset);
  put_u64_le(bytes, mtext.size());
  bytes.insert(bytes.end(), mtext.begin(), mtext.end());
  for (const auto& [name, t] : params) {
    (void)name;
    for (const double d : t.data()) put_f64_le(bytes, d);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorError("checkpoint: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TensorError("checkpoint: short write to '" + path + "'");
}

ParamMap load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError("checkpoint: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw TensorError("checkpoint: file too short");
  const uint64_t mlen = get_u64_le(bytes.data());
  if (8 + mlen > bytes.size()) throw TensorError("checkpoint: manifest length exceeds file");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<size_t>(mlen));
  } catch (const json::exception& e) {
    throw TensorError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (manifest.value("version", 0) != 1) throw TensorError("checkpoint: unsupported version");
  const size_t data_start = 8 + static_cast<size_t>(mlen);

  ParamMap out;
  for (const auto& [name, entry] : manifest.at("tensors").items()) {
    if (entry.at("dtype").get<std::string>() != "f64")
      throw TensorError("checkpoint: unsupported dtype for '" + name + "'");
    Shape shape = entry.at("shape").get<Shape>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    const size_t n = shape_numel(shape);
    const size_t begin = data_start + static_cast<size_t>(offset);
    if (begin + 8 * n > bytes.size())
      throw TensorError("checkpoint: payload for '" + name + "' exceeds file");
    std::vector<double> data(n);
    for (size_t i = 0; i < n; ++i) data[i] = get_f64_le(bytes.data() + begin + 8 * i);
    out.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

void load_checkpoint_into(const std::string& path, ParamMap& params) {
  ParamMap loaded = load_checkpoint(path);
  for (const auto& [name, t] : params) {
    (void)t;
    if (!loaded.count(name)) throw TensorError("checkpoint: missing tensor '" + name + "'");
  }
  for (const auto& [name, src] : loaded) {
    auto it = params.find(name);
    if (it == params.end()) throw TensorError("checkpoint: unexpected tensor '" + name + "'");
    if (it->second.shape() != src.shape())
      throw TensorError("checkpoint: shape mismatch for '" + name + "': " +
                        shape_str(it->second.shape()) + " vs " + shape_str(src.shape()));
    it->second.data() = src.data();
  }
}

}  // namespace eclseq
