#include "core/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "core/common.hpp"

namespace bispike {

namespace {

void put_u32(std::string& buf, uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

struct Cursor {
  const std::string& buf;
  const std::string& path;
  size_t pos = 0;

  void need(size_t n) {
    if (pos + n > buf.size()) throw IoError("truncated checkpoint: " + path);
  }
  uint32_t take_u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 4;
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }
  std::string take_bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

bool is_meta(const std::string& name) { return name.rfind("meta/", 0) == 0; }

}  // namespace

int64_t CkptEntry::numel() const {
  int64_t n = 1;
  for (uint32_t d : dims) n *= static_cast<int64_t>(d);
  return n;
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

const CkptEntry& Checkpoint::at(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw StateError("checkpoint: no entry '" + name + "'");
}

void Checkpoint::add(std::string name, std::vector<uint32_t> dims,
                     std::vector<float> data) {
  if (has(name)) throw StateError("checkpoint: duplicate entry '" + name + "'");
  int64_t n = 1;
  for (uint32_t d : dims) n *= static_cast<int64_t>(d);
  if (n != static_cast<int64_t>(data.size()))
    throw StateError("checkpoint: entry '" + name + "' dims do not match data size");
  entries.push_back(CkptEntry{std::move(name), std::move(dims), std::move(data)});
}

void Checkpoint::add_tensor(const std::string& name, const Tensor& t) {
  std::vector<uint32_t> dims;
  for (int64_t d : t.shape()) dims.push_back(static_cast<uint32_t>(d));
  std::vector<float> data(t.data(), t.data() + t.numel());
  add(name, std::move(dims), std::move(data));
}

Tensor Checkpoint::tensor(const std::string& name) const {
  const CkptEntry& e = at(name);
  std::vector<int64_t> shape;
  for (uint32_t d : e.dims) shape.push_back(static_cast<int64_t>(d));
  Tensor t(shape);
  std::memcpy(t.data(), e.data.data(), e.data.size() * sizeof(float));
  return t;
}

void Checkpoint::add_meta_u32(const std::string& name, uint32_t v) {
  add(name, {1}, {std::bit_cast<float>(v)});
}

void Checkpoint::add_meta_u64(const std::string& name, uint64_t v) {
  add(name, {2},
      {std::bit_cast<float>(static_cast<uint32_t>(v & 0xffffffffu)),
       std::bit_cast<float>(static_cast<uint32_t>(v >> 32))});
}

void Checkpoint::add_meta_bytes(const std::string& name, const std::string& bytes) {
  add_meta_u32(name + "_len", static_cast<uint32_t>(bytes.size()));
  size_t words = (bytes.size() + 3) / 4;
  std::vector<float> data(words);
  for (size_t w = 0; w < words; ++w) {
    uint32_t v = 0;
    for (size_t b = 0; b < 4; ++b) {
      size_t i = w * 4 + b;
      if (i < bytes.size())
        v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[i])) << (8 * b);
    }
    data[w] = std::bit_cast<float>(v);
  }
  add(name, {static_cast<uint32_t>(words)}, std::move(data));
}

uint32_t Checkpoint::meta_u32(const std::string& name) const {
  const CkptEntry& e = at(name);
  if (e.data.size() != 1) throw StateError("checkpoint: '" + name + "' is not a u32");
  return std::bit_cast<uint32_t>(e.data[0]);
}

uint64_t Checkpoint::meta_u64(const std::string& name) const {
  const CkptEntry& e = at(name);
  if (e.data.size() != 2) throw StateError("checkpoint: '" + name + "' is not a u64");
  return static_cast<uint64_t>(std::bit_cast<uint32_t>(e.data[0])) |
         (static_cast<uint64_t>(std::bit_cast<uint32_t>(e.data[1])) << 32);
}

std::string Checkpoint::meta_bytes(const std::string& name) const {
  uint32_t len = meta_u32(name + "_len");
  const CkptEntry& e = at(name);
  if (e.data.size() * 4 < len)
    throw StateError("checkpoint: '" + name + "' shorter than its recorded length");
  std::string bytes(len, '\0');
  for (uint32_t i = 0; i < len; ++i) {
    uint32_t v = std::bit_cast<uint32_t>(e.data[i / 4]);
    bytes[i] = static_cast<char>((v >> (8 * (i % 4))) & 0xff);
  }
  return bytes;
}

void checkpoint_save(const std::string& path, const Checkpoint& c) {
  std::string buf;
  buf += "SPLM";
  put_u32(buf, c.version);
  put_u32(buf, static_cast<uint32_t>(c.entries.size()));
  for (const auto& e : c.entries) {
    put_u32(buf, static_cast<uint32_t>(e.name.size()));
    buf += e.name;
    put_u32(buf, static_cast<uint32_t>(e.dims.size()));
    for (uint32_t d : e.dims) put_u32(buf, d);
    for (float f : e.data) put_u32(buf, std::bit_cast<uint32_t>(f));
  }
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write on checkpoint: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move checkpoint into place: " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Cursor cur{buf, path};

  if (cur.take_bytes(4) != "SPLM") throw IoError("not a checkpoint: " + path);
  Checkpoint c;
  c.version = cur.take_u32();
  if (c.version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(c.version) + ": " +
                  path);
  uint32_t count = cur.take_u32();
  c.entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CkptEntry e;
    uint32_t name_len = cur.take_u32();
    if (name_len > 4096) throw IoError("corrupt checkpoint entry name: " + path);
    e.name = cur.take_bytes(name_len);
    uint32_t rank = cur.take_u32();
    if (rank > 8) throw IoError("corrupt checkpoint entry rank: " + path);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      e.dims.push_back(cur.take_u32());
      n *= static_cast<int64_t>(e.dims.back());
      if (n > (int64_t{1} << 31)) throw IoError("corrupt checkpoint entry dims: " + path);
    }
    e.data.resize(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) e.data[static_cast<size_t>(j)] =
        std::bit_cast<float>(cur.take_u32());
    if (c.has(e.name)) throw IoError("duplicate checkpoint entry '" + e.name + "': " + path);
    if (!is_meta(e.name)) {
      for (int64_t j = 0; j < n; ++j)
        if (!std::isfinite(e.data[static_cast<size_t>(j)]))
          throw IoError("checkpoint entry '" + e.name + "' holds non-finite values: " +
                        path);
    }
    c.entries.push_back(std::move(e));
  }
  if (cur.pos != buf.size()) throw IoError("trailing bytes after checkpoint: " + path);
  return c;
}

Checkpoint make_checkpoint(const SpikingTransformer& model, const AdamState& opt,
                           int step, const std::string& config_json) {
  Checkpoint c;
  for (const auto& name : model.params.names())
    c.add_tensor("param/" + name, model.params.at(name));
  for (const auto& [site, alphas] : model.alpha.entries())
    c.add("alpha/" + site, {static_cast<uint32_t>(alphas.size())}, alphas);
  for (const auto& name : model.params.names()) {
    auto it = opt.m.find(name);
    if (it != opt.m.end()) c.add_tensor("opt/m/" + name, it->second);
  }
  for (const auto& name : model.params.names()) {
    auto it = opt.v.find(name);
    if (it != opt.v.end()) c.add_tensor("opt/v/" + name, it->second);
  }
  c.add_meta_u32("meta/step", static_cast<uint32_t>(step));
  // Draws are keyed (seed, stream, step << 32 | element); the counter base of
  // the last consumed training step is recorded for inspection even though
  // resumption derives everything from meta/step.
  c.add_meta_u64("meta/rng_counter", static_cast<uint64_t>(step) << 32);
  c.add_meta_bytes("meta/config", config_json);
  return c;
}

ResumeState restore_training_state(const Checkpoint& c) {
  ResumeState st;
  for (const auto& e : c.entries) {
    if (e.name.rfind("param/", 0) == 0)
      st.params.emplace(e.name.substr(6), c.tensor(e.name));
    else if (e.name.rfind("alpha/", 0) == 0)
      st.alpha.emplace(e.name.substr(6), e.data);
    else if (e.name.rfind("opt/m/", 0) == 0)
      st.opt_m.emplace(e.name.substr(6), c.tensor(e.name));
    else if (e.name.rfind("opt/v/", 0) == 0)
      st.opt_v.emplace(e.name.substr(6), c.tensor(e.name));
  }
  st.step = static_cast<int>(c.meta_u32("meta/step"));
  return st;
}

std::string checkpoint_config_json(const Checkpoint& c) {
  return c.meta_bytes("meta/config");
}

}  // namespace bispike
