#pragma once

// Single-file binary container: magic, JSON header, little-endian blocks.
//
//   bytes [0, 8)        magic tag
//   bytes [8, 16)       header length N (uint64, little-endian)
//   bytes [16, 16 + N)  UTF-8 JSON header; "blocks" lists every block with
//                       name, dtype, shape, offset (relative to data start)
//   bytes [16 + N, ...) block payloads in declared order

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace crowdmesh {

enum class DType { kF32, kI32, kU8 };

std::string_view dtype_name(DType dtype);
DType dtype_from_name(std::string_view name);
std::size_t dtype_size(DType dtype);

struct ArchiveBlock {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::vector<std::byte> bytes;  // host byte order

  std::int64_t numel() const;

  static ArchiveBlock from_f32(std::string name, std::vector<std::int64_t> shape,
                               std::span<const float> values);
  static ArchiveBlock from_i32(std::string name, std::vector<std::int64_t> shape,
                               std::span<const std::int32_t> values);
  static ArchiveBlock from_u8(std::string name, std::vector<std::int64_t> shape,
                              std::span<const std::uint8_t> values);

  std::vector<float> as_f32() const;
  std::vector<std::int32_t> as_i32() const;
  std::vector<std::uint8_t> as_u8() const;
};

struct Archive {
  nlohmann::json header = nlohmann::json::object();
  std::vector<ArchiveBlock> blocks;

  const ArchiveBlock& block(std::string_view name) const;
  bool has_block(std::string_view name) const;
};

void write_archive(const std::filesystem::path& path, std::string_view magic,
                   const Archive& archive);
Archive read_archive(const std::filesystem::path& path, std::string_view magic);

/// Raw little-endian array files (one array per file).
void write_array_file(const std::filesystem::path& path, const ArchiveBlock& block);
/// Reads a raw array file; throws ParseError when the size disagrees with shape.
ArchiveBlock read_array_file(const std::filesystem::path& path, std::string name,
                             DType dtype, std::vector<std::int64_t> shape);

/// Reads and parses a JSON file, mapping parse failures to ParseError.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace crowdmesh
