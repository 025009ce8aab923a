#include "skewprune/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <map>

#include "json_detail.hpp"
#include "skewprune/errors.hpp"

namespace skewprune {

namespace {

using nlohmann::json;

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> t{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

void put_f32(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

float get_f32(const uint8_t* p) {
  const uint32_t bits = get_u32(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

uint32_t crc32(const void* data, size_t n, uint32_t seed) {
  static const std::array<uint32_t, 256> table = make_crc_table();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::vector<uint8_t> serialize_model(const Model& m) {
  // Directory in sorted-name order with contiguous ascending offsets.
  std::map<std::string, const Tensor*> tensors;
  m.visit_params([&](const std::string& name, const Tensor& t, bool) {
    tensors.emplace(name, &t);
  });
  json dir = json::object();
  int64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    json entry;
    entry["shape"] = t->shape;
    entry["offset"] = offset;
    entry["length"] = 4 * t->numel();
    dir[name] = entry;
    offset += 4 * t->numel();
  }

  json header;
  header["config"] = detail::model_config_to_json(m.config);
  json frozen = json::array();
  for (const Stage& s : m.stages) frozen.push_back(s.frozen);
  header["frozen_stages"] = frozen;
  json prune = json::array();
  for (const Stage& s : m.stages) {
    json stage_states = json::array();
    for (const Block& b : s.blocks) stage_states.push_back(detail::prune_state_to_json(b.state));
    prune.push_back(stage_states);
  }
  header["prune_state"] = prune;
  header["tensors"] = dir;
  const std::string header_text = header.dump();

  std::vector<uint8_t> out;
  out.reserve(16 + header_text.size() + static_cast<size_t>(offset));
  out.push_back('S');
  out.push_back('K');
  out.push_back('P');
  out.push_back('R');
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(header_text.size()));
  put_u32(out, 0);  // checksum patched below
  out.insert(out.end(), header_text.begin(), header_text.end());
  for (const auto& [name, t] : tensors) {
    (void)name;
    for (const float v : t->data) put_f32(out, v);
  }
  const uint32_t crc = crc32(out.data() + 16, out.size() - 16);
  out[12] = static_cast<uint8_t>(crc & 0xFF);
  out[13] = static_cast<uint8_t>((crc >> 8) & 0xFF);
  out[14] = static_cast<uint8_t>((crc >> 16) & 0xFF);
  out[15] = static_cast<uint8_t>((crc >> 24) & 0xFF);
  return out;
}

Model deserialize_model(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 16) throw FormatError("checkpoint preamble: truncated");
  if (std::memcmp(bytes.data(), "SKPR", 4) != 0) throw FormatError("checkpoint magic: not SKPR");
  const uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version: unsupported " + std::to_string(version));
  }
  const uint32_t header_len = get_u32(bytes.data() + 8);
  if (bytes.size() < 16 + static_cast<size_t>(header_len)) {
    throw FormatError("checkpoint header: truncated");
  }
  const uint32_t stored_crc = get_u32(bytes.data() + 12);
  if (crc32(bytes.data() + 16, bytes.size() - 16) != stored_crc) {
    throw FormatError("checkpoint checksum: mismatch");
  }

  json header;
  ModelConfig config;
  std::vector<std::vector<BlockPruneState>> states;
  std::vector<bool> frozen;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
    config = detail::model_config_from_json(header.at("config"));
    for (const auto& stage_states : header.at("prune_state")) {
      states.emplace_back();
      for (const auto& s : stage_states) states.back().push_back(detail::prune_state_from_json(s));
    }
    frozen = header.at("frozen_stages").get<std::vector<bool>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  Model m = Model::skeleton(config, states);
  if (frozen.size() != m.stages.size()) {
    throw FormatError("checkpoint header: frozen_stages covers " +
                      std::to_string(frozen.size()) + " of " + std::to_string(m.stages.size()) +
                      " stages");
  }
  for (size_t s = 0; s < frozen.size(); ++s) m.stages[s].frozen = frozen[s];

  // First pass: the directory itself (iterated in its sorted key order) must
  // be contiguous and ascending and must cover the body exactly.
  const json& dir = header.at("tensors");
  const size_t body_start = 16 + header_len;
  int64_t expect_offset = 0;
  for (const auto& [name, entry] : dir.items()) {
    int64_t offset = 0, length = 0;
    try {
      offset = entry.at("offset").get<int64_t>();
      length = entry.at("length").get<int64_t>();
    } catch (const json::exception& e) {
      throw FormatError("checkpoint directory: " + name + ": " + e.what());
    }
    if (offset != expect_offset || length < 0) {
      throw FormatError("checkpoint directory: " + name + ": offsets not contiguous");
    }
    expect_offset += length;
  }
  if (body_start + static_cast<size_t>(expect_offset) != bytes.size()) {
    throw FormatError("checkpoint body: length disagrees with directory");
  }

  // Second pass: fill every architecture tensor from its directory entry.
  size_t listed = 0;
  std::string problem;
  m.visit_params([&](const std::string& name, Tensor& t, bool) {
    if (!problem.empty()) return;
    const auto it = dir.find(name);
    if (it == dir.end()) {
      problem = "checkpoint directory: missing tensor " + name;
      return;
    }
    ++listed;
    std::vector<int64_t> shape;
    int64_t offset = 0, length = 0;
    try {
      shape = it->at("shape").get<std::vector<int64_t>>();
      offset = it->at("offset").get<int64_t>();
      length = it->at("length").get<int64_t>();
    } catch (const json::exception& e) {
      problem = "checkpoint directory: " + name + ": " + e.what();
      return;
    }
    if (shape != t.shape) {
      problem = "checkpoint tensor " + name + ": shape " + shape_to_string(shape) +
                " does not fit the declared architecture's " + t.shape_str();
      return;
    }
    if (length != 4 * t.numel()) {
      problem = "checkpoint tensor " + name + ": length " + std::to_string(length) +
                " for shape " + t.shape_str();
      return;
    }
    const uint8_t* src = bytes.data() + body_start + offset;
    for (int64_t i = 0; i < t.numel(); ++i) t.data[static_cast<size_t>(i)] = get_f32(src + 4 * i);
  });
  if (!problem.empty()) throw FormatError(problem);
  if (listed != dir.size()) {
    throw FormatError("checkpoint directory: " + std::to_string(dir.size() - listed) +
                      " unknown tensor entries");
  }
  return m;
}

int64_t save_checkpoint(const Model& m, const std::string& path) {
  const std::vector<uint8_t> bytes = serialize_model(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint file: cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("checkpoint file: write failed: " + path);
  return static_cast<int64_t>(bytes.size());
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw FormatError("checkpoint file: cannot open: " + path);
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw FormatError("checkpoint file: read failed: " + path);
  return deserialize_model(bytes);
}

int64_t checkpoint_size_bytes(const Model& m) {
  return static_cast<int64_t>(serialize_model(m).size());
}

}  // namespace skewprune
