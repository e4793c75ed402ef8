#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cvfc/tensor.hpp"

namespace cvfc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Entry type codes in the file: 0 f32, 1 f64, 2 u64, 3 u8.
enum class EntryType : std::uint8_t { f32 = 0, f64 = 1, u64 = 2, u8 = 3 };

struct CheckpointEntry {
  std::string name;
  EntryType type = EntryType::f32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> bytes;  // little-endian row-major payload
};

/// Ordered named arrays. Layout: "CVFC", u32 version, u32 count, then per
/// entry u16 name length, name, u8 type, u8 ndim, ndim x u64 dims, data;
/// footer u32 CRC32 of everything before it.
class Checkpoint {
 public:
  void put_tensor(const std::string& name, const Tensor& t);
  void put_u64(const std::string& name, std::span<const std::uint64_t> values);
  void put_bytes(const std::string& name, std::span<const std::uint8_t> bytes);
  void put_string(const std::string& name, const std::string& s);

  bool contains(const std::string& name) const;
  const CheckpointEntry& entry(const std::string& name) const;
  Tensor tensor(const std::string& name) const;
  std::vector<std::uint64_t> u64(const std::string& name) const;
  std::string string(const std::string& name) const;
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  /// Throws CorruptCheckpointError on bad magic, CRC, or truncation and
  /// CheckpointVersionError on an unknown version.
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  void put(CheckpointEntry e);
  std::vector<CheckpointEntry> entries_;
};

}  // namespace cvfc
