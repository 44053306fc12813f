#include "cxr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "cxr/hash.hpp"

namespace cxr {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'A', 'P', 'A', 'M', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, const fs::path& path) : buf_(buf), path_(path) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) {
      throw CheckpointError("checkpoint " + path_.string() + " is truncated");
    }
  }
  const std::string& buf_;
  fs::path path_;
  std::size_t pos_ = 0;
};

std::string param_entry_name(const std::string& section, const std::string& name) {
  return section + "/" + name;
}

}  // namespace

void write_archive(const fs::path& path, const std::vector<CheckpointEntry>& entries) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::int64_t>(out, d);
    if (e.dtype == DType::f64) {
      put<std::uint64_t>(out, e.values.size() * sizeof(double));
      out.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(double));
    } else {
      put<std::uint64_t>(out, e.bytes.size());
      out += e.bytes;
    }
  }
  Fnv1a64 h;
  h.update(out);
  put<std::uint64_t>(out, h.digest());

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

std::vector<CheckpointEntry> read_archive(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    if (buf.size() < sizeof(kMagic)) {
      throw CheckpointError("checkpoint " + path.string() + " is truncated");
    }
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  Reader r(buf, path);
  r.bytes(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + " has format version " +
                          std::to_string(version) + ", this build reads version " +
                          std::to_string(kCheckpointVersion));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.bytes(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw CheckpointError("checkpoint entry " + e.name + ": unknown dtype");
    e.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("checkpoint entry " + e.name + ": bad rank");
    std::int64_t elements = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(r.get<std::int64_t>());
      if (e.shape.back() < 0) throw CheckpointError("checkpoint entry " + e.name + ": bad shape");
      elements *= e.shape.back();
    }
    const auto n = r.get<std::uint64_t>();
    std::string payload = r.bytes(n);
    if (e.dtype == DType::f64) {
      if (n != static_cast<std::uint64_t>(elements) * sizeof(double)) {
        throw CheckpointError("checkpoint entry " + e.name + ": payload does not match shape");
      }
      e.values.resize(elements);
      std::memcpy(e.values.data(), payload.data(), n);
    } else {
      e.bytes = std::move(payload);
    }
    entries.push_back(std::move(e));
  }
  const std::size_t body = r.pos();
  const auto stored = r.get<std::uint64_t>();
  Fnv1a64 h;
  h.update(buf.data(), body);
  if (h.digest() != stored) {
    throw CheckpointError("checkpoint " + path.string() + " failed its checksum");
  }
  if (r.pos() != buf.size()) {
    throw CheckpointError("checkpoint " + path.string() + " has trailing bytes");
  }
  return entries;
}

namespace {

CheckpointEntry tensor_entry(const std::string& name, const Tensor& t) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = DType::f64;
  for (int d : t.shape()) e.shape.push_back(d);
  e.values.assign(t.values().begin(), t.values().end());
  return e;
}

CheckpointEntry bytes_entry(const std::string& name, const std::string& bytes) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = DType::bytes;
  e.shape = {static_cast<std::int64_t>(bytes.size())};
  e.bytes = bytes;
  return e;
}

const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries,
                                  const std::string& name, const fs::path& path) {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw CheckpointError("checkpoint " + path.string() + " has no entry " + name);
}

void copy_into(const CheckpointEntry& e, Tensor& t) {
  Shape shape;
  for (auto d : e.shape) shape.push_back(static_cast<int>(d));
  if (e.dtype != DType::f64 || shape != t.shape()) {
    throw CheckpointError("checkpoint entry " + e.name + " has shape " + to_string(shape) +
                          ", model expects " + to_string(t.shape()));
  }
  std::copy(e.values.begin(), e.values.end(), t.data());
}

template <typename Fn>
void for_each_tensor(Model& model, Fn&& fn) {
  for (auto& [section, refs] : model.sections()) {
    for (nn::Param* p : refs.params) fn(param_entry_name(section, p->name), p->value);
    for (auto& b : refs.buffers) fn(param_entry_name(section, b.name), *b.value);
  }
}

ModelConfig config_from_entries(const std::vector<CheckpointEntry>& entries,
                                 const fs::path& path) {
  const auto& e = find_entry(entries, "config.json", path);
  try {
    return model_config_from_json(e.bytes);
  } catch (const std::exception& ex) {
    throw CheckpointError("checkpoint " + path.string() + ": bad config.json: " + ex.what());
  }
}

void fill_model(const std::vector<CheckpointEntry>& entries, Model& model, const fs::path& path) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for_each_tensor(model, [&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointError("checkpoint " + path.string() + " has no entry " + name);
    }
    copy_into(*it->second, t);
  });
}

void require_config(const ModelConfig& stored, const ModelConfig& expected, const fs::path& path) {
  if (!(stored == expected)) {
    throw CheckpointError("checkpoint " + path.string() +
                          " was saved with a different model config:\nstored:   " +
                          to_json(stored) + "\nexpected: " + to_json(expected));
  }
}

}  // namespace

void save_checkpoint(const fs::path& path, Model& model, const std::string& metadata) {
  std::vector<CheckpointEntry> entries;
  entries.push_back(bytes_entry("config.json", to_json(model.config())));
  entries.push_back(bytes_entry("metadata.json", metadata));
  for_each_tensor(model, [&](const std::string& name, Tensor& t) {
    entries.push_back(tensor_entry(name, t));
  });
  write_archive(path, entries);
}

LoadedCheckpoint load_checkpoint(const fs::path& path, const std::optional<ModelConfig>& expected) {
  const auto entries = read_archive(path);
  const ModelConfig config = config_from_entries(entries, path);
  if (expected) require_config(config, *expected, path);
  LoadedCheckpoint out;
  out.model = std::make_unique<Model>(config);
  fill_model(entries, *out.model, path);
  for (const auto& e : entries) {
    if (e.name == "metadata.json") out.metadata = e.bytes;
  }
  return out;
}

void load_parameters(const fs::path& path, Model& model) {
  const auto entries = read_archive(path);
  require_config(config_from_entries(entries, path), model.config(), path);
  fill_model(entries, model, path);
}

int import_parameters(const fs::path& path, Model& model) {
  const auto entries = read_archive(path);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  int copied = 0;
  for_each_tensor(model, [&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) return;
    copy_into(*it->second, t);
    ++copied;
  });
  return copied;
}

ModelConfig read_checkpoint_config(const fs::path& path) {
  return config_from_entries(read_archive(path), path);
}

}  // namespace cxr
