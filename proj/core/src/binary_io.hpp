#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ed2lm::detail {

// Little-endian writer over a growable byte buffer.
class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v);
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t>& out_;
};

// Bounds-checked little-endian reader; truncation raises FormatError.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> in, std::size_t offset = 0) : in_(in), offset_(offset) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32();
  std::string bytes(std::size_t n);
  void f32s(std::span<float> dst);

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return in_.size() - offset_; }

 private:
  void require(std::size_t n) const;
  std::uint64_t get(int width);
  std::span<const std::uint8_t> in_;
  std::size_t offset_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Checks the 8-byte magic and throws a FormatError naming the expected one.
void expect_magic(ByteReader& reader, std::string_view magic, std::string_view what);

}  // namespace ed2lm::detail
