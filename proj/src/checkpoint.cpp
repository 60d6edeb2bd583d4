#include "affkit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "affkit/hash.hpp"
#include "affkit/version.hpp"
#include "json.hpp"

namespace affkit {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'A', 'F', 'F', 'K', 'I', 'T', 'C', 'K'};
constexpr uint32_t kFormat = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

// Bounds-checked reader over the file image; any overrun means truncation.
class Cursor {
 public:
  Cursor(const std::string& data, const std::string& path)
      : data_(data), path_(path) {}

  const char* take(size_t n) {
    if (offset_ + n > data_.size())
      throw ConfigError(path_, "truncated checkpoint");
    const char* p = data_.data() + offset_;
    offset_ += n;
    return p;
  }

  uint32_t u32() {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4));
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
  }

  uint64_t u64() {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(take(8));
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
  }

  std::string string() {
    const uint32_t n = u32();
    return std::string(take(n), n);
  }

  size_t offset() const { return offset_; }

 private:
  const std::string& data_;
  const std::string& path_;
  size_t offset_ = 0;
};

std::string policy_json(const PolicyConfig& p) {
  json j;
  j["layers"] = p.layers;
  j["heads"] = p.heads;
  j["embed"] = p.embed;
  j["ff"] = p.ff;
  j["actor_hidden"] = p.actor_hidden;
  j["critic_hidden"] = p.critic_hidden;
  j["dof"] = p.dof;
  j["encoding"] = p.encoding == EncodingMode::trig ? "trig" : "raw";
  j["history"] = p.history;
  j["logstd_init"] = p.logstd_init;
  j["action_bound"] = json::array();
  for (Eigen::Index i = 0; i < p.action_bound.size(); ++i)
    j["action_bound"].push_back(p.action_bound(i));
  return j.dump();
}

bool same_policy(const PolicyConfig& a, const PolicyConfig& b,
                 std::string* dimension) {
  auto differ = [&](const char* name) {
    if (dimension) *dimension = name;
    return false;
  };
  if (a.layers != b.layers) return differ("layers");
  if (a.heads != b.heads) return differ("heads");
  if (a.embed != b.embed) return differ("embed");
  if (a.ff != b.ff) return differ("ff");
  if (a.actor_hidden != b.actor_hidden) return differ("actor_hidden");
  if (a.critic_hidden != b.critic_hidden) return differ("critic_hidden");
  if (a.dof != b.dof) return differ("dof");
  if (a.encoding != b.encoding) return differ("encoding");
  if (a.history != b.history) return differ("history");
  if (a.logstd_init != b.logstd_init) return differ("logstd_init");
  if (a.action_bound.size() != b.action_bound.size() ||
      a.action_bound != b.action_bound)
    return differ("action_bound");
  return true;
}

}  // namespace

Checkpoint make_checkpoint(const ExperimentConfig& config, uint64_t seed,
                           PolicyParams params) {
  Checkpoint c;
  c.tool_version = kVersion;
  c.fingerprint = config_fingerprint(config);
  c.seed = seed;
  c.config = config;
  c.params = std::move(params);
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kFormat);
  put_string(out, checkpoint.tool_version);
  put_string(out, policy_json(checkpoint.params.config));
  put_string(out, serialize_config(checkpoint.config));
  put_u64(out, checkpoint.fingerprint);
  put_u64(out, checkpoint.seed);

  put_u32(out, static_cast<uint32_t>(checkpoint.params.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.params.tensors) {
    put_string(out, name);
    put_u32(out, static_cast<uint32_t>(tensor.rows()));
    put_u32(out, static_cast<uint32_t>(tensor.cols()));
    const size_t bytes = static_cast<size_t>(tensor.size()) * sizeof(double);
    out.append(reinterpret_cast<const char*>(tensor.data()), bytes);
  }

  put_u64(out, fnv1a64(out));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw ConfigError(path, "cannot write checkpoint");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw ConfigError(path, "failed writing checkpoint");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ConfigError(path, "cannot read checkpoint");
  std::ostringstream buffer;
  buffer << file.rdbuf();
  const std::string data = buffer.str();

  if (data.size() < sizeof(kMagic) + 12 ||
      std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
    throw ConfigError(path, "not an affkit checkpoint");

  const uint64_t stored_hash = [&] {
    uint64_t v = 0;
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(data.data() + data.size() - 8);
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
  }();
  if (fnv1a64(std::string_view(data.data(), data.size() - 8)) != stored_hash)
    throw ConfigError(path, "integrity check failed: checkpoint hash mismatch");

  Cursor in(data, path);
  in.take(sizeof(kMagic));
  const uint32_t format = in.u32();
  if (format != kFormat)
    throw ConfigError(path, "unsupported checkpoint format version " +
                                std::to_string(format));

  Checkpoint c;
  c.tool_version = in.string();
  const std::string policy_block = in.string();
  const std::string config_text = in.string();
  c.fingerprint = in.u64();
  c.seed = in.u64();

  try {
    c.config = parse_config(config_text);
  } catch (const ConfigError& e) {
    throw ConfigError(path, std::string("embedded config invalid: ") + e.what());
  }
  if (c.fingerprint != config_fingerprint(c.config))
    throw ConfigError(path, "stored fingerprint disagrees with embedded config");

  c.params.config = composed_policy(c.config);
  if (policy_block != policy_json(c.params.config))
    throw ConfigError(path, "stored policy shape disagrees with embedded config");

  const uint32_t count = in.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = in.string();
    const uint32_t rows = in.u32();
    const uint32_t cols = in.u32();
    if (rows == 0 || cols == 0 || static_cast<uint64_t>(rows) * cols > (1u << 26))
      throw ConfigError(path, "implausible tensor shape for " + name);
    MatX tensor(rows, cols);
    const size_t bytes = static_cast<size_t>(tensor.size()) * sizeof(double);
    std::memcpy(tensor.data(), in.take(bytes), bytes);
    if (!c.params.tensors.emplace(name, std::move(tensor)).second)
      throw ConfigError(path, "duplicate tensor " + name);
  }
  if (in.offset() != data.size() - 8)
    throw ConfigError(path, "trailing bytes after tensor table");

  // The tensor table must be exactly the architecture the config describes.
  const PolicyParams expected = init_policy(c.params.config, 0);
  if (expected.tensors.size() != c.params.tensors.size())
    throw ConfigError(path, "tensor count disagrees with embedded config");
  auto it = c.params.tensors.cbegin();
  for (const auto& [name, tensor] : expected.tensors) {
    if (it->first != name)
      throw ConfigError(path, "unexpected tensor " + it->first);
    if (it->second.rows() != tensor.rows() || it->second.cols() != tensor.cols())
      throw ConfigError(path, "shape mismatch for tensor " + name);
    ++it;
  }
  return c;
}

void check_checkpoint_compatible(const Checkpoint& checkpoint,
                                 const ExperimentConfig& config) {
  std::string dimension;
  if (!same_policy(checkpoint.params.config, composed_policy(config), &dimension))
    throw ConfigError("checkpoint." + dimension,
                      "checkpoint was trained for a different " + dimension +
                          " than the config requires");
}

}  // namespace affkit
