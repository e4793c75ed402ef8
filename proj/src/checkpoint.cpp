#include "cvfc/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

#include "cvfc/errors.hpp"
#include "cvfc/image_io.hpp"

namespace cvfc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::size_t element_size(EntryType t) {
  switch (t) {
    case EntryType::f32: return 4;
    case EntryType::f64: return 8;
    case EntryType::u64: return 8;
    case EntryType::u8: return 1;
  }
  return 0;
}

template <typename T>
void append(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw CorruptCheckpointError("checkpoint truncated");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(CheckpointEntry e) {
  if (e.name.empty() || e.name.size() > 0xffff) throw ArgumentError("checkpoint: bad entry name");
  if (e.dims.size() > 255) throw ArgumentError("checkpoint: too many dimensions in " + e.name);
  for (auto& existing : entries_) {
    if (existing.name == e.name) {
      existing = std::move(e);
      return;
    }
  }
  entries_.push_back(std::move(e));
}

void Checkpoint::put_tensor(const std::string& name, const Tensor& t) {
  CheckpointEntry e;
  e.name = name;
  e.type = t.dtype() == DType::f32 ? EntryType::f32 : EntryType::f64;
  e.dims.assign(t.shape().begin(), t.shape().end());
  visit_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data<T>().data());
    e.bytes.assign(p, p + t.numel() * sizeof(T));
  });
  put(std::move(e));
}

void Checkpoint::put_u64(const std::string& name, std::span<const std::uint64_t> values) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::u64;
  e.dims = {values.size()};
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  e.bytes.assign(p, p + values.size() * 8);
  put(std::move(e));
}

void Checkpoint::put_bytes(const std::string& name, std::span<const std::uint8_t> bytes) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::u8;
  e.dims = {bytes.size()};
  e.bytes.assign(bytes.begin(), bytes.end());
  put(std::move(e));
}

void Checkpoint::put_string(const std::string& name, const std::string& s) {
  put_bytes(name, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw CorruptCheckpointError("checkpoint has no entry '" + name + "'");
}

Tensor Checkpoint::tensor(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  if (e.type != EntryType::f32 && e.type != EntryType::f64) {
    throw CorruptCheckpointError("checkpoint entry '" + name + "' is not a float array");
  }
  Tensor t(Shape(e.dims.begin(), e.dims.end()), e.type == EntryType::f32 ? DType::f32 : DType::f64);
  visit_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::memcpy(t.data<T>().data(), e.bytes.data(), e.bytes.size());
  });
  return t;
}

std::vector<std::uint64_t> Checkpoint::u64(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  if (e.type != EntryType::u64) throw CorruptCheckpointError("checkpoint entry '" + name + "' is not u64");
  std::vector<std::uint64_t> v(e.bytes.size() / 8);
  std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
  return v;
}

std::string Checkpoint::string(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  if (e.type != EntryType::u8) throw CorruptCheckpointError("checkpoint entry '" + name + "' is not a byte array");
  return std::string(e.bytes.begin(), e.bytes.end());
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out = {'C', 'V', 'F', 'C'};
  append<std::uint32_t>(out, kCheckpointVersion);
  append<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    append<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    append<std::uint8_t>(out, static_cast<std::uint8_t>(e.type));
    append<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (std::uint64_t d : e.dims) append<std::uint64_t>(out, d);
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  }
  const uLong crc = crc32(0L, out.data(), static_cast<uInt>(out.size()));
  append<std::uint32_t>(out, static_cast<std::uint32_t>(crc));
  return out;
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "CVFC", 4) != 0) {
    throw CorruptCheckpointError(bytes.size() < 16 ? "checkpoint truncated" : "not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.take(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body))) != stored) {
    throw CorruptCheckpointError("checkpoint CRC mismatch (truncated or corrupted)");
  }
  Reader payload(bytes.first(body));
  payload.take(8);
  const auto count = payload.get<std::uint32_t>();
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = payload.get<std::uint16_t>();
    const auto name = payload.take(len);
    e.name.assign(name.begin(), name.end());
    const auto type = payload.get<std::uint8_t>();
    if (type > 3) throw CorruptCheckpointError("checkpoint entry '" + e.name + "' has unknown type");
    e.type = static_cast<EntryType>(type);
    const auto ndim = payload.get<std::uint8_t>();
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      e.dims.push_back(payload.get<std::uint64_t>());
      if (e.dims.back() != 0 && numel > (std::uint64_t{1} << 40) / e.dims.back()) {
        throw CorruptCheckpointError("checkpoint entry '" + e.name + "' is implausibly large");
      }
      numel *= e.dims.back();
    }
    const auto data = payload.take(numel * element_size(e.type));
    e.bytes.assign(data.begin(), data.end());
    ck.entries_.push_back(std::move(e));
  }
  if (payload.pos() != body) throw CorruptCheckpointError("checkpoint has trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file_bytes(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return deserialize(bytes);
  } catch (const CheckpointVersionError& e) {
    throw CheckpointVersionError(path.string() + ": " + e.what());
  } catch (const CorruptCheckpointError& e) {
    throw CorruptCheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace cvfc
