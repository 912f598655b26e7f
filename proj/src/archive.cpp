#include "crowdmesh/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

namespace {

constexpr std::size_t kMagicSize = 8;
constexpr std::size_t kPrefixSize = kMagicSize + 8;

std::vector<std::byte> to_little_endian(const std::vector<std::byte>& host, std::size_t width) {
  if constexpr (std::endian::native == std::endian::little) {
    return host;
  } else {
    std::vector<std::byte> out(host);
    for (std::size_t i = 0; i + width <= out.size(); i += width) {
      std::reverse(out.begin() + static_cast<std::ptrdiff_t>(i),
                   out.begin() + static_cast<std::ptrdiff_t>(i + width));
    }
    return out;
  }
}

// Byte swapping is an involution.
std::vector<std::byte> from_little_endian(const std::vector<std::byte>& le, std::size_t width) {
  return to_little_endian(le, width);
}

std::string padded_magic(std::string_view magic) {
  std::string m(magic.substr(0, kMagicSize));
  m.resize(kMagicSize, '\0');
  return m;
}

std::vector<std::byte> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> chars((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(chars.size());
  std::memcpy(bytes.data(), chars.data(), chars.size());
  return bytes;
}

template <typename T>
ArchiveBlock make_block(std::string name, DType dtype, std::vector<std::int64_t> shape,
                        std::span<const T> values) {
  ArchiveBlock b;
  b.name = std::move(name);
  b.dtype = dtype;
  b.shape = std::move(shape);
  if (b.numel() != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("block '" + b.name + "': shape does not match value count");
  }
  b.bytes.resize(values.size_bytes());
  std::memcpy(b.bytes.data(), values.data(), values.size_bytes());
  return b;
}

template <typename T>
std::vector<T> block_values(const ArchiveBlock& b, DType expected) {
  if (b.dtype != expected) {
    throw ShapeError("block '" + b.name + "' has dtype " + std::string(dtype_name(b.dtype)));
  }
  std::vector<T> out(b.bytes.size() / sizeof(T));
  std::memcpy(out.data(), b.bytes.data(), out.size() * sizeof(T));
  return out;
}

}  // namespace

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kI32: return "i32";
    case DType::kU8: return "u8";
  }
  return "?";
}

DType dtype_from_name(std::string_view name) {
  if (name == "f32") return DType::kF32;
  if (name == "i32") return DType::kI32;
  if (name == "u8") return DType::kU8;
  throw ConfigError("unknown dtype '" + std::string(name) + "'");
}

std::size_t dtype_size(DType dtype) {
  return dtype == DType::kU8 ? 1 : 4;
}

std::int64_t ArchiveBlock::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

ArchiveBlock ArchiveBlock::from_f32(std::string name, std::vector<std::int64_t> shape,
                                    std::span<const float> values) {
  return make_block(std::move(name), DType::kF32, std::move(shape), values);
}

ArchiveBlock ArchiveBlock::from_i32(std::string name, std::vector<std::int64_t> shape,
                                    std::span<const std::int32_t> values) {
  return make_block(std::move(name), DType::kI32, std::move(shape), values);
}

ArchiveBlock ArchiveBlock::from_u8(std::string name, std::vector<std::int64_t> shape,
                                   std::span<const std::uint8_t> values) {
  return make_block(std::move(name), DType::kU8, std::move(shape), values);
}

std::vector<float> ArchiveBlock::as_f32() const { return block_values<float>(*this, DType::kF32); }

std::vector<std::int32_t> ArchiveBlock::as_i32() const {
  return block_values<std::int32_t>(*this, DType::kI32);
}

std::vector<std::uint8_t> ArchiveBlock::as_u8() const {
  return block_values<std::uint8_t>(*this, DType::kU8);
}

const ArchiveBlock& Archive::block(std::string_view name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw ParseError("archive has no block '" + std::string(name) + "'", 0);
}

bool Archive::has_block(std::string_view name) const {
  return std::any_of(blocks.begin(), blocks.end(),
                     [&](const ArchiveBlock& b) { return b.name == name; });
}

void write_archive(const std::filesystem::path& path, std::string_view magic,
                   const Archive& archive) {
  nlohmann::json header = archive.header;
  header["endianness"] = "little";
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& b : archive.blocks) {
    manifest.push_back({{"name", b.name},
                        {"dtype", dtype_name(b.dtype)},
                        {"shape", b.shape},
                        {"offset", offset},
                        {"nbytes", b.bytes.size()}});
    offset += b.bytes.size();
  }
  header["blocks"] = std::move(manifest);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string m = padded_magic(magic);
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  std::uint64_t len = text.size();
  std::byte len_bytes[8];
  for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<std::byte>((len >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(len_bytes), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& b : archive.blocks) {
    const auto le = to_little_endian(b.bytes, dtype_size(b.dtype));
    out.write(reinterpret_cast<const char*>(le.data()), static_cast<std::streamsize>(le.size()));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path, std::string_view magic) {
  const auto bytes = read_all(path);
  if (bytes.size() < kPrefixSize) {
    throw ParseError(path.string() + ": truncated archive prefix", bytes.size());
  }
  const std::string expected = padded_magic(magic);
  if (std::memcmp(bytes.data(), expected.data(), kMagicSize) != 0) {
    throw ParseError(path.string() + ": bad magic tag", 0);
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) {
    len |= static_cast<std::uint64_t>(bytes[kMagicSize + static_cast<std::size_t>(i)]) << (8 * i);
  }
  if (bytes.size() - kPrefixSize < len) {
    throw ParseError(path.string() + ": truncated archive header", bytes.size());
  }
  Archive archive;
  try {
    const char* begin = reinterpret_cast<const char*>(bytes.data()) + kPrefixSize;
    archive.header = nlohmann::json::parse(begin, begin + len);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": malformed archive header: " + e.what(),
                     kPrefixSize + e.byte);
  }
  const std::uint64_t data_start = kPrefixSize + len;
  try {
    if (archive.header.value("endianness", "little") != "little") {
      throw ParseError(path.string() + ": unsupported endianness tag", kPrefixSize);
    }
    for (const auto& entry : archive.header.at("blocks")) {
      ArchiveBlock b;
      b.name = entry.at("name").get<std::string>();
      b.dtype = dtype_from_name(entry.at("dtype").get<std::string>());
      b.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (nbytes != static_cast<std::uint64_t>(b.numel()) * dtype_size(b.dtype)) {
        throw ParseError(path.string() + ": block '" + b.name + "' size disagrees with shape",
                         data_start + offset);
      }
      if (data_start + offset + nbytes > bytes.size()) {
        throw ParseError(path.string() + ": block '" + b.name + "' is truncated", bytes.size());
      }
      std::vector<std::byte> le(bytes.begin() + static_cast<std::ptrdiff_t>(data_start + offset),
                                bytes.begin() +
                                    static_cast<std::ptrdiff_t>(data_start + offset + nbytes));
      b.bytes = from_little_endian(le, dtype_size(b.dtype));
      archive.blocks.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": malformed block manifest: " + e.what(), kPrefixSize);
  } catch (const ConfigError& e) {
    throw ParseError(path.string() + ": " + e.what(), kPrefixSize);
  }
  archive.header.erase("blocks");
  return archive;
}

void write_array_file(const std::filesystem::path& path, const ArchiveBlock& block) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto le = to_little_endian(block.bytes, dtype_size(block.dtype));
  out.write(reinterpret_cast<const char*>(le.data()), static_cast<std::streamsize>(le.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

ArchiveBlock read_array_file(const std::filesystem::path& path, std::string name, DType dtype,
                             std::vector<std::int64_t> shape) {
  ArchiveBlock b;
  b.name = std::move(name);
  b.dtype = dtype;
  b.shape = std::move(shape);
  const auto bytes = read_all(path);
  const auto expected = static_cast<std::uint64_t>(b.numel()) * dtype_size(dtype);
  if (bytes.size() != expected) {
    throw ParseError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(bytes.size()),
                     std::min<std::uint64_t>(bytes.size(), expected));
  }
  b.bytes = from_little_endian(bytes, dtype_size(dtype));
  return b;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace crowdmesh
