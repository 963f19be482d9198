#include "binary_io.hpp"

#include "ed2lm/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ed2lm::detail {

static_assert(sizeof(float) == 4);

void ByteWriter::f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::bytes(std::size_t n) {
  require(n);
  std::string s(reinterpret_cast<const char*>(in_.data() + offset_), n);
  offset_ += n;
  return s;
}

void ByteReader::f32s(std::span<float> dst) {
  require(dst.size() * 4);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst.data(), in_.data() + offset_, dst.size() * 4);
    offset_ += dst.size() * 4;
  } else {
    for (float& v : dst) v = f32();
  }
}

void ByteReader::require(std::size_t n) const {
  if (n > in_.size() - offset_) {
    throw FormatError("truncated artifact: need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(offset_) + ", have " + std::to_string(in_.size() - offset_));
  }
}

std::uint64_t ByteReader::get(int width) {
  require(static_cast<std::size_t>(width));
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(in_[offset_ + i]) << (8 * i);
  offset_ += static_cast<std::size_t>(width);
  return v;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("short write to " + path.string());
}

void expect_magic(ByteReader& reader, std::string_view magic, std::string_view what) {
  if (reader.remaining() < magic.size()) {
    throw FormatError(std::string("incompatible artifact: ") + std::string(what) + " too short, expected magic " +
                      std::string(magic));
  }
  const std::string got = reader.bytes(magic.size());
  if (got != magic) {
    throw FormatError(std::string("incompatible artifact: ") + std::string(what) + " has wrong magic, expected " +
                      std::string(magic));
  }
}

}  // namespace ed2lm::detail
